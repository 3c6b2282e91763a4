#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "spanret/core.hpp"
#include "spanret/encoder.hpp"
#include "spanret/index.hpp"

namespace spanret {

struct Candidate {
    std::size_t start = 0;
    std::size_t end = 0;
    std::string label;
    double score = 0.0;     // normalized, in [0,1]
    std::size_t entry = 0;  // retrieved index entry

    bool operator==(const Candidate&) const = default;
};

struct DecodeConfig {
    std::size_t max_span_len = 7;    // m
    double base_threshold = 0.85;    // tau
    double dyn_decrement = 0.05;     // delta
    std::size_t dyn_steps = 10;
    std::size_t beam_size = 10;
    double merge_threshold = 0.99;   // lambda
};

inline void validate_config(const DecodeConfig& c) {
    if (c.max_span_len < 1) throw DataError("max_span_len must be >= 1");
    if (c.base_threshold < 0.0 || c.base_threshold > 1.0)
        throw DataError("base_threshold must be in [0,1]");
    if (c.merge_threshold < 0.0 || c.merge_threshold > 1.0)
        throw DataError("merge_threshold must be in [0,1]");
    if (!(c.dyn_decrement > 0.0)) throw DataError("dyn_decrement must be > 0");
    if (c.beam_size < 1) throw DataError("beam_size must be >= 1");
}

// All spans of length 1..m, ordered by start then length.
inline std::vector<std::pair<std::size_t, std::size_t>> enumerate_spans(std::size_t n,
                                                                        std::size_t m) {
    if (n < 1 || m < 1) throw DataError("enumerate_spans requires n >= 1 and m >= 1");
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t start = 0; start < n; ++start)
        for (std::size_t end = start + 1; end <= std::min(n, start + m); ++end)
            out.emplace_back(start, end);
    return out;
}

// One candidate per enumerated span: the top entry by normalized score.
inline std::vector<Candidate> retrieve_candidates(const Utterance& utt,
                                                  const RetrievalIndex& index,
                                                  const Encoder& encoder, std::size_t m) {
    if (index.kind != IndexKind::Slot)
        throw DataError("slot decoding requires a slot index");
    if (index.entries.empty()) throw DataError("query against empty index");
    const auto ctx = encoder.contextual(utt);
    std::vector<Candidate> out;
    for (auto [start, end] : enumerate_spans(utt.tokens.size(), m)) {
        const Vec z = embed_span(ctx, start, end);
        const QueryResult top = query_top1_normalized(index, z);
        out.push_back({start, end, index.entries[top.pos].label, top.score, top.pos});
    }
    return out;
}

// Keeps scores >= tau, relaxing the threshold by delta up to `steps`
// times until something survives. Thresholds are computed as
// tau - step*delta so the schedule is exact.
inline std::pair<std::vector<Candidate>, double> filter_dynamic(
    const std::vector<Candidate>& cands, double tau, double delta, std::size_t steps) {
    if (tau < 0.0 || tau > 1.0) throw DataError("threshold must be in [0,1]");
    double threshold = tau;
    for (std::size_t step = 0; step <= steps; ++step) {
        threshold = tau - static_cast<double>(step) * delta;
        std::vector<Candidate> kept;
        for (const auto& c : cands)
            if (c.score >= threshold) kept.push_back(c);
        if (!kept.empty()) return {std::move(kept), threshold};
    }
    return {{}, threshold};
}

namespace detail {

inline bool candidates_overlap(const Candidate& a, const Candidate& b) {
    return a.start < b.end && b.start < a.end;
}

// Total order used for lexicographic span-list comparisons.
inline bool candidate_less(const Candidate& a, const Candidate& b) {
    return std::tie(a.start, a.end, a.label, a.score) <
           std::tie(b.start, b.end, b.label, b.score);
}

// Processing order: descending score, ties to earlier start then shorter.
inline bool process_order(const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.start != b.start) return a.start < b.start;
    const std::size_t la = a.end - a.start, lb = b.end - b.start;
    if (la != lb) return la < lb;
    return a.label < b.label;
}

struct Selection {
    std::vector<Candidate> spans;  // sorted by start
    double sum = 0.0;

    double average() const {
        return spans.empty() ? -std::numeric_limits<double>::infinity()
                             : sum / static_cast<double>(spans.size());
    }

    bool can_take(const Candidate& c) const {
        for (const auto& s : spans)
            if (candidates_overlap(s, c)) return false;
        return true;
    }

    void take(const Candidate& c) {
        auto it = std::upper_bound(spans.begin(), spans.end(), c,
                                   [](const Candidate& x, const Candidate& y) {
                                       return x.start < y.start;
                                   });
        spans.insert(it, c);
        sum += c.score;
    }
};

inline bool span_list_less(const std::vector<Candidate>& a, const std::vector<Candidate>& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(),
                                        candidate_less);
}

// Ranking used both for beam pruning and final selection:
// higher average first, then more spans, then lexicographically
// earliest span list.
inline bool selection_better(const Selection& a, const Selection& b) {
    if (a.average() != b.average()) return a.average() > b.average();
    if (a.spans.size() != b.spans.size()) return a.spans.size() > b.spans.size();
    return span_list_less(a.spans, b.spans);
}

// Greedy maximal completion over the ordered candidate list.
inline void complete(Selection& s, const std::vector<Candidate>& ordered) {
    for (const auto& c : ordered)
        if (s.can_take(c)) s.take(c);
}

}  // namespace detail

// Beam search over include/skip decisions in descending-score order.
// Pruning keeps the top beam_size states by the state's own average
// score (empty state ranks last at -inf, ties by lexicographic span
// list). Surviving states are then greedily completed and the best
// completion wins, so the output is always maximal w.r.t. `kept`.
inline std::vector<Candidate> beam_decode(const std::vector<Candidate>& kept,
                                          std::size_t beam_size) {
    if (beam_size < 1) throw DataError("beam_size must be >= 1");
    if (kept.empty()) return {};

    std::vector<Candidate> ordered = kept;
    std::sort(ordered.begin(), ordered.end(), detail::process_order);

    std::vector<detail::Selection> states(1);
    for (const auto& c : ordered) {
        std::vector<detail::Selection> next;
        next.reserve(states.size() * 2);
        for (const auto& s : states) {
            next.push_back(s);
            if (s.can_take(c)) {
                detail::Selection grown = s;
                grown.take(c);
                next.push_back(std::move(grown));
            }
        }
        if (next.size() > beam_size) {
            std::sort(next.begin(), next.end(),
                      [](const detail::Selection& a, const detail::Selection& b) {
                          if (a.average() != b.average()) return a.average() > b.average();
                          return detail::span_list_less(a.spans, b.spans);
                      });
            next.resize(beam_size);
        }
        states = std::move(next);
    }

    detail::Selection best;
    bool have = false;
    for (auto& s : states) {
        detail::complete(s, ordered);
        if (!have || detail::selection_better(s, best)) {
            best = std::move(s);
            have = true;
        }
    }
    return best.spans;
}

// Exhaustive oracle: the maximal non-overlapping subset with the
// highest average score, ties to more spans then earliest span list.
inline std::vector<Candidate> brute_force_decode(const std::vector<Candidate>& kept) {
    if (kept.size() > 20)
        throw DataError("brute_force_decode limited to 20 candidates, got " +
                        std::to_string(kept.size()));
    if (kept.empty()) return {};

    std::vector<Candidate> ordered = kept;
    std::sort(ordered.begin(), ordered.end(), detail::candidate_less);

    const std::size_t K = ordered.size();
    detail::Selection best;
    bool have = false;
    for (std::uint64_t mask = 0; mask < (1ULL << K); ++mask) {
        detail::Selection sel;
        bool valid = true;
        for (std::size_t i = 0; i < K && valid; ++i) {
            if (!(mask & (1ULL << i))) continue;
            if (sel.can_take(ordered[i])) sel.take(ordered[i]); else valid = false;
        }
        if (!valid) continue;
        bool maximal = true;
        for (std::size_t i = 0; i < K && maximal; ++i)
            if (!(mask & (1ULL << i)) && sel.can_take(ordered[i])) maximal = false;
        if (!maximal) continue;
        if (!have || detail::selection_better(sel, best)) {
            best = std::move(sel);
            have = true;
        }
    }
    return best.spans;
}

// Adjacent same-label spans whose scores are within lambda collapse
// into one span carrying the max score; passes repeat to fixpoint.
// lambda=1 always merges (score gaps are clamped into [0,1]) and
// lambda=0 never merges.
inline std::vector<Candidate> merge_spans(const std::vector<Candidate>& decoded,
                                          double lambda) {
    if (lambda < 0.0 || lambda > 1.0) throw DataError("merge threshold must be in [0,1]");
    std::vector<Candidate> spans = decoded;
    std::sort(spans.begin(), spans.end(),
              [](const Candidate& a, const Candidate& b) { return a.start < b.start; });

    auto mergeable = [&](const Candidate& a, const Candidate& b) {
        if (a.end != b.start || a.label != b.label) return false;
        if (lambda == 1.0) return true;
        return std::fabs(a.score - b.score) < lambda;
    };

    bool changed = true;
    while (changed) {
        changed = false;
        std::vector<Candidate> out;
        for (const auto& c : spans) {
            if (!out.empty() && mergeable(out.back(), c)) {
                Candidate& prev = out.back();
                if (c.score > prev.score) {
                    prev.score = c.score;
                    prev.entry = c.entry;
                }
                prev.end = c.end;
                changed = true;
            } else {
                out.push_back(c);
            }
        }
        spans = std::move(out);
    }
    return spans;
}

struct DecodeResult {
    std::vector<Candidate> spans;  // sorted by start, non-overlapping
    double effective_threshold = 0.0;
};

inline DecodeResult decode(const Utterance& utt, const RetrievalIndex& index,
                           const Encoder& encoder, const DecodeConfig& config) {
    validate_config(config);
    const auto candidates = retrieve_candidates(utt, index, encoder, config.max_span_len);
    auto [kept, threshold] = filter_dynamic(candidates, config.base_threshold,
                                            config.dyn_decrement, config.dyn_steps);
    auto chosen = beam_decode(kept, config.beam_size);
    auto merged = merge_spans(chosen, config.merge_threshold);
    return {std::move(merged), threshold};
}

inline std::vector<LabeledSpan> to_labeled_spans(const std::vector<Candidate>& cands) {
    std::vector<LabeledSpan> out;
    out.reserve(cands.size());
    for (const auto& c : cands) out.push_back({c.start, c.end, c.label});
    return out;
}

// Whole-utterance retrieval: the nearest labeled utterance's label.
inline IntentPrediction predict_intent(const Utterance& utt, const RetrievalIndex& index,
                                       const Encoder& encoder) {
    if (index.kind != IndexKind::Intent)
        throw DataError("intent prediction requires an intent index");
    const Vec u = encoder.utterance_vector(utt);
    const QueryResult top = query_top1_normalized(index, u);
    return {utt.id, index.entries[top.pos].label, top.score};
}

}  // namespace spanret
