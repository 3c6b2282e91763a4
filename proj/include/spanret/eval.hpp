#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spanret/core.hpp"
#include "spanret/decoder.hpp"
#include "spanret/encoder.hpp"
#include "spanret/index.hpp"
#include "spanret/rng.hpp"

namespace spanret {

struct SpanF1Report {
    std::size_t true_positives = 0;
    std::size_t predicted_count = 0;
    std::size_t gold_count = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Micro-averaged exact-match span F1 over aligned example lists.
inline SpanF1Report span_f1(const std::vector<std::vector<LabeledSpan>>& gold,
                            const std::vector<std::vector<LabeledSpan>>& pred) {
    if (gold.size() != pred.size())
        throw DataError("gold/pred length mismatch: " + std::to_string(gold.size()) + " vs " +
                        std::to_string(pred.size()));
    SpanF1Report r;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        auto g = gold[i];
        auto p = pred[i];
        std::sort(g.begin(), g.end());
        std::sort(p.begin(), p.end());
        r.gold_count += g.size();
        r.predicted_count += p.size();
        std::size_t a = 0, b = 0;
        while (a < g.size() && b < p.size()) {
            if (g[a] == p[b]) {
                ++r.true_positives;
                ++a;
                ++b;
            } else if (g[a] < p[b]) {
                ++a;
            } else {
                ++b;
            }
        }
    }
    r.precision = r.predicted_count ? static_cast<double>(r.true_positives) /
                                          static_cast<double>(r.predicted_count)
                                    : 0.0;
    r.recall = r.gold_count ? static_cast<double>(r.true_positives) /
                                  static_cast<double>(r.gold_count)
                            : 0.0;
    r.f1 = (r.precision + r.recall) > 0.0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;
    return r;
}

struct AccuracyReport {
    std::optional<double> tgt;  // macro over target labels present in gold
    std::optional<double> src;  // macro over the remaining gold labels
    double avg = 0.0;           // macro over all gold labels
    std::map<std::string, std::pair<std::size_t, std::size_t>> per_label;  // correct, total
};

inline AccuracyReport intent_accuracy(const std::vector<std::string>& gold,
                                      const std::vector<std::string>& pred,
                                      const std::set<std::string>& target_labels) {
    if (gold.size() != pred.size())
        throw DataError("gold/pred length mismatch: " + std::to_string(gold.size()) + " vs " +
                        std::to_string(pred.size()));
    AccuracyReport r;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i].empty()) throw DataError("unlabeled gold intent at position " +
                                             std::to_string(i));
        auto& [correct, total] = r.per_label[gold[i]];
        ++total;
        if (gold[i] == pred[i]) ++correct;
    }

    double sum_all = 0.0, sum_tgt = 0.0, sum_src = 0.0;
    std::size_t n_all = 0, n_tgt = 0, n_src = 0;
    for (const auto& [label, counts] : r.per_label) {
        const double acc = static_cast<double>(counts.first) /
                           static_cast<double>(counts.second);
        sum_all += acc;
        ++n_all;
        if (target_labels.count(label)) {
            sum_tgt += acc;
            ++n_tgt;
        } else {
            sum_src += acc;
            ++n_src;
        }
    }
    r.avg = n_all ? sum_all / static_cast<double>(n_all) : 0.0;
    if (n_tgt) r.tgt = sum_tgt / static_cast<double>(n_tgt);
    if (n_src) r.src = sum_src / static_cast<double>(n_src);
    return r;
}

// Greedy cover: repeatedly take the utterance hitting the most
// still-deficient labels (ties: fewest excess instances, then the
// seeded scan order), then prune to a minimal-by-pruning set. The
// seed varies the scan order so episodic runs draw distinct supports.
inline Dataset build_kshot_support(const Dataset& data, std::size_t k, std::uint64_t seed) {
    if (k == 0) throw DataError("k must be positive");
    const std::size_t n = data.examples.size();
    if (n == 0) throw DataError("empty dataset");

    auto counts_of = [&](const Example& ex) {
        std::map<std::string, std::size_t> c;
        if (data.task == Task::Intent) {
            ++c[ex.intent];
        } else {
            for (const auto& s : ex.spans) ++c[s.label];
        }
        return c;
    };

    const auto totals = data.label_instance_counts();
    std::map<std::string, std::size_t> target;
    std::vector<std::string> unreachable;
    for (const auto& [label, total] : totals) {
        if (total == 0) unreachable.push_back(label);
        target[label] = std::min(k, total);
    }
    if (!unreachable.empty()) {
        std::string msg = "labels without instances:";
        for (const auto& l : unreachable) msg += " '" + l + "'";
        throw DataError(msg);
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    std::map<std::string, std::size_t> deficit = target;
    auto deficits_left = [&] {
        for (const auto& [label, d] : deficit)
            if (d > 0) return true;
        return false;
    };

    std::vector<bool> selected(n, false);
    while (deficits_left()) {
        std::size_t best = n;
        std::size_t best_cover = 0, best_excess = 0;
        for (std::size_t pos : order) {
            if (selected[pos]) continue;
            const auto counts = counts_of(data.examples[pos]);
            std::size_t cover = 0, used = 0, instances = 0;
            for (const auto& [label, c] : counts) {
                instances += c;
                auto it = deficit.find(label);
                if (it != deficit.end() && it->second > 0) {
                    ++cover;
                    used += std::min(c, it->second);
                }
            }
            const std::size_t excess = instances - used;
            if (cover == 0) continue;
            if (best == n || cover > best_cover ||
                (cover == best_cover && excess < best_excess)) {
                best = pos;
                best_cover = cover;
                best_excess = excess;
            }
        }
        if (best == n) throw DataError("k-shot support construction stalled");
        selected[best] = true;
        for (const auto& [label, c] : counts_of(data.examples[best])) {
            auto it = deficit.find(label);
            if (it != deficit.end()) it->second -= std::min(c, it->second);
        }
    }

    // Prune: drop any utterance whose removal keeps every label at its
    // target count; repeat until stable.
    std::map<std::string, std::size_t> have;
    for (std::size_t i = 0; i < n; ++i)
        if (selected[i])
            for (const auto& [label, c] : counts_of(data.examples[i])) have[label] += c;
    bool removed = true;
    while (removed) {
        removed = false;
        for (std::size_t pos : order) {
            if (!selected[pos]) continue;
            const auto counts = counts_of(data.examples[pos]);
            bool droppable = true;
            for (const auto& [label, c] : counts)
                if (have[label] < target[label] + c) {
                    droppable = false;
                    break;
                }
            if (droppable) {
                selected[pos] = false;
                for (const auto& [label, c] : counts) have[label] -= c;
                removed = true;
            }
        }
    }

    Dataset out;
    out.task = data.task;
    for (std::size_t i = 0; i < n; ++i)
        if (selected[i]) out.examples.push_back(data.examples[i]);
    return out;
}

struct EpisodeSpec {
    std::size_t n_episodes = 100;
    std::size_t queries_per_episode = 10;
    std::size_t k = 5;
    std::uint64_t seed = 0;
};

struct EpisodeReport {
    std::vector<double> per_episode;
    std::vector<std::uint64_t> episode_seeds;
    double mean = 0.0;
    double stddev = 0.0;
};

// Per episode: a seeded K-shot support, queries drawn from the rest,
// index built from the support, decode/classify, score.
inline EpisodeReport run_episodes(const Dataset& domain_data, const EpisodeSpec& spec,
                                  const Encoder& encoder, const DecodeConfig& config) {
    if (spec.n_episodes == 0 || spec.queries_per_episode == 0)
        throw DataError("episode counts must be positive");

    EpisodeReport report;
    for (std::size_t e = 0; e < spec.n_episodes; ++e) {
        const std::uint64_t ep_seed = derive_seed(spec.seed, e);
        report.episode_seeds.push_back(ep_seed);

        const Dataset support = build_kshot_support(domain_data, spec.k, ep_seed);
        std::set<std::string> support_ids;
        for (const auto& ex : support.examples) support_ids.insert(ex.utterance.id);

        std::vector<std::size_t> pool;
        for (std::size_t i = 0; i < domain_data.examples.size(); ++i)
            if (!support_ids.count(domain_data.examples[i].utterance.id)) pool.push_back(i);
        if (pool.size() < spec.queries_per_episode)
            throw DataError("episode " + std::to_string(e) + ": only " +
                            std::to_string(pool.size()) + " utterances left for " +
                            std::to_string(spec.queries_per_episode) + " queries");
        Rng rng(derive_seed(ep_seed, 0x71));
        rng.shuffle(pool);
        pool.resize(spec.queries_per_episode);
        std::sort(pool.begin(), pool.end());

        const IndexKind kind =
            domain_data.task == Task::Slot ? IndexKind::Slot : IndexKind::Intent;
        const RetrievalIndex index =
            build_index({&support}, {}, encoder, {SupportVariant::All, spec.k, ep_seed}, kind);

        double metric = 0.0;
        if (domain_data.task == Task::Slot) {
            std::vector<std::vector<LabeledSpan>> gold, pred;
            for (std::size_t i : pool) {
                const Example& ex = domain_data.examples[i];
                gold.push_back(ex.spans);
                pred.push_back(to_labeled_spans(decode(ex.utterance, index, encoder, config).spans));
            }
            metric = span_f1(gold, pred).f1;
        } else {
            std::size_t correct = 0;
            for (std::size_t i : pool) {
                const Example& ex = domain_data.examples[i];
                if (predict_intent(ex.utterance, index, encoder).label == ex.intent) ++correct;
            }
            metric = static_cast<double>(correct) /
                     static_cast<double>(spec.queries_per_episode);
        }
        report.per_episode.push_back(metric);
    }

    double sum = 0.0;
    for (double v : report.per_episode) sum += v;
    report.mean = sum / static_cast<double>(report.per_episode.size());
    double var = 0.0;
    for (double v : report.per_episode) var += (v - report.mean) * (v - report.mean);
    report.stddev = std::sqrt(var / static_cast<double>(report.per_episode.size()));
    return report;
}

// ---- Dev-set metrics for early stopping ----
// Leave-one-out over the dev set: each utterance is scored against an
// index of all other dev examples, so exact self-matches cannot win.

inline double leave_one_out_accuracy(const Dataset& dev, const Encoder& encoder) {
    if (dev.task != Task::Intent) throw DataError("expected an intent dataset");
    if (dev.examples.empty()) throw DataError("empty dev set");
    const RetrievalIndex full =
        build_index({&dev}, {}, encoder, {SupportVariant::All, 0, 0}, IndexKind::Intent);
    std::size_t correct = 0;
    for (const auto& ex : dev.examples) {
        const RetrievalIndex rest = full.without_example(ex.utterance.id);
        if (rest.entries.empty()) continue;
        if (predict_intent(ex.utterance, rest, encoder).label == ex.intent) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dev.examples.size());
}

inline double leave_one_out_span_f1(const Dataset& dev, const Encoder& encoder,
                                    const DecodeConfig& config) {
    if (dev.task != Task::Slot) throw DataError("expected a slot dataset");
    if (dev.examples.empty()) throw DataError("empty dev set");
    const RetrievalIndex full =
        build_index({&dev}, {}, encoder, {SupportVariant::All, 0, 0}, IndexKind::Slot);
    std::vector<std::vector<LabeledSpan>> gold, pred;
    for (const auto& ex : dev.examples) {
        const RetrievalIndex rest = full.without_example(ex.utterance.id);
        gold.push_back(ex.spans);
        if (rest.entries.empty()) {
            pred.emplace_back();
            continue;
        }
        pred.push_back(to_labeled_spans(decode(ex.utterance, rest, encoder, config).spans));
    }
    return span_f1(gold, pred).f1;
}

// ---- Threshold sweep ----

struct SweepPoint {
    double tau = 0.0;
    double f1 = 0.0;
};

struct SweepResult {
    std::vector<SweepPoint> points;
    double best_tau = 0.0;
};

// Grid search over the filter threshold, maximizing span F1 of decodes
// against the given index; F1 ties keep the lowest tau.
inline SweepResult sweep_threshold(const Dataset& dev, const RetrievalIndex& index,
                                   const Encoder& encoder, const DecodeConfig& base,
                                   double grid_start, double grid_stop, double grid_step) {
    if (dev.task != Task::Slot) throw DataError("threshold sweep expects a slot dataset");
    if (!(grid_step > 0.0) || grid_stop < grid_start) throw DataError("bad sweep grid");
    std::vector<std::vector<LabeledSpan>> gold;
    for (const auto& ex : dev.examples) gold.push_back(ex.spans);

    SweepResult result;
    for (std::size_t i = 0;; ++i) {
        const double tau = grid_start + static_cast<double>(i) * grid_step;
        if (tau > grid_stop + 1e-12) break;
        DecodeConfig cfg = base;
        cfg.base_threshold = tau;
        std::vector<std::vector<LabeledSpan>> pred;
        for (const auto& ex : dev.examples)
            pred.push_back(to_labeled_spans(decode(ex.utterance, index, encoder, cfg).spans));
        result.points.push_back({tau, span_f1(gold, pred).f1});
    }
    if (result.points.empty()) throw DataError("empty sweep grid");
    std::size_t best = 0;
    for (std::size_t i = 1; i < result.points.size(); ++i)
        if (result.points[i].f1 > result.points[best].f1) best = i;
    result.best_tau = result.points[best].tau;
    return result;
}

}  // namespace spanret
