#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "spanret/core.hpp"
#include "spanret/encoder.hpp"
#include "spanret/rng.hpp"
#include "spanret/vecmath.hpp"

namespace spanret {

enum class ReductionKind { Mean, Max, MinMax };

inline const char* reduction_name(ReductionKind k) {
    switch (k) {
        case ReductionKind::Mean: return "mean";
        case ReductionKind::Max: return "max";
        default: return "minmax";
    }
}

inline ReductionKind parse_reduction(const std::string& s) {
    if (s == "mean") return ReductionKind::Mean;
    if (s == "max") return ReductionKind::Max;
    if (s == "minmax") return ReductionKind::MinMax;
    throw DataError("unknown reduction '" + s + "' (expected mean|max|minmax)");
}

struct TrainBatch {
    Task task = Task::Slot;
    std::vector<std::string> labels;            // N
    std::vector<std::vector<SpanRef>> spans;    // N columns, B entries each
};

struct TrainConfig {
    ReductionKind reduction = ReductionKind::Max;
    std::size_t per_class_batch = 5;
    double learning_rate = 0.1;
    std::size_t max_steps = 4000;
    std::size_t eval_interval = 20;
    std::size_t early_stop_patience = 50;  // evaluations without improvement
    std::uint64_t seed = 13;
};

inline double similarity(const Vec& a, const Vec& b) { return dot(a, b); }

// One row per sample j', one column per label i'.
using SimilarityMatrix = std::vector<std::vector<double>>;

inline TrainBatch sample_batch(const Dataset& data, const std::vector<std::string>& labels,
                               std::size_t B, Rng& rng) {
    if (B < 2) throw DataError("per-class batch size must be >= 2");

    std::map<std::string, std::vector<SpanRef>> instances;
    for (const auto& ex : data.examples) {
        if (data.task == Task::Intent) {
            instances[ex.intent].push_back({&ex.utterance, 0, ex.utterance.tokens.size()});
        } else {
            for (const auto& s : ex.spans)
                instances[s.label].push_back({&ex.utterance, s.start, s.end});
        }
    }

    TrainBatch batch;
    batch.task = data.task;
    batch.labels = labels;
    batch.spans.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto it = instances.find(labels[i]);
        if (it == instances.end() || it->second.empty())
            throw DataError("label '" + labels[i] + "' has no instances to sample");
        const auto& pool = it->second;
        auto& col = batch.spans[i];
        col.reserve(B);
        if (pool.size() >= B) {
            std::vector<std::size_t> order(pool.size());
            for (std::size_t t = 0; t < order.size(); ++t) order[t] = t;
            rng.shuffle(order);
            for (std::size_t t = 0; t < B; ++t) col.push_back(pool[order[t]]);
        } else {
            for (std::size_t t = 0; t < B; ++t)
                col.push_back(pool[rng.below(pool.size())]);
        }
    }
    return batch;
}

inline SimilarityMatrix similarity_matrix(const Vec& query,
                                          const std::vector<std::vector<Vec>>& batch_emb) {
    const std::size_t N = batch_emb.size();
    const std::size_t B = N == 0 ? 0 : batch_emb.front().size();
    SimilarityMatrix S(B, std::vector<double>(N));
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < B; ++j) S[j][i] = similarity(query, batch_emb[i][j]);
    return S;
}

namespace detail {

// Reduction plus the routing weights w[j'][i'] = d reduced[i'] / d S[j'][i'].
// Mean spreads 1/B across the column; max/min put weight 1 on the selected
// cell, ties resolved to the lowest sample index.
struct Reduced {
    std::vector<double> scores;
    std::vector<std::vector<double>> weights;
};

inline Reduced reduce_detail(const SimilarityMatrix& S, ReductionKind kind,
                             std::size_t query_label, std::size_t query_sample) {
    const std::size_t B = S.size();
    if (B == 0) throw DataError("empty similarity matrix");
    const std::size_t N = S.front().size();
    if (kind == ReductionKind::Max && B < 2)
        throw DataError("max reduction undefined for B=1 (self-exclusion empties the column)");

    Reduced r;
    r.scores.assign(N, 0.0);
    r.weights.assign(B, std::vector<double>(N, 0.0));

    for (std::size_t col = 0; col < N; ++col) {
        const bool own = col == query_label;
        if (kind == ReductionKind::Mean) {
            double sum = 0.0;
            for (std::size_t j = 0; j < B; ++j) sum += S[j][col];
            r.scores[col] = sum / static_cast<double>(B);
            for (std::size_t j = 0; j < B; ++j) r.weights[j][col] = 1.0 / static_cast<double>(B);
            continue;
        }
        const bool take_min = kind == ReductionKind::MinMax && own;
        const bool exclude_self = kind == ReductionKind::Max && own;
        std::size_t best = B;  // sentinel
        for (std::size_t j = 0; j < B; ++j) {
            if (exclude_self && j == query_sample) continue;
            if (best == B || (take_min ? S[j][col] < S[best][col] : S[j][col] > S[best][col]))
                best = j;
        }
        r.scores[col] = S[best][col];
        r.weights[best][col] = 1.0;
    }
    return r;
}

}  // namespace detail

inline std::vector<double> reduce(const SimilarityMatrix& S, ReductionKind kind,
                                  std::size_t query_label, std::size_t query_sample) {
    return detail::reduce_detail(S, kind, query_label, query_sample).scores;
}

inline std::pair<double, std::vector<double>> batch_softmax_loss(
    const std::vector<double>& reduced, std::size_t gold_index) {
    const std::size_t N = reduced.size();
    if (gold_index >= N) throw DataError("gold index out of range");
    for (double v : reduced)
        if (!std::isfinite(v)) throw NumericError("non-finite score entering softmax");

    double m = reduced[0];
    for (double v : reduced) m = std::max(m, v);
    double z = 0.0;
    std::vector<double> grad(N);
    for (std::size_t i = 0; i < N; ++i) {
        grad[i] = std::exp(reduced[i] - m);
        z += grad[i];
    }
    for (double& g : grad) g /= z;
    const double loss = -(reduced[gold_index] - m - std::log(z));
    grad[gold_index] -= 1.0;
    return {loss, std::move(grad)};
}

namespace detail {

// Per-utterance contextual cache so repeated spans of one utterance
// encode once per batch.
class ContextCache {
public:
    explicit ContextCache(const EncoderParams& p) : params_(p) {}

    const std::vector<Vec>& get(const Utterance& utt) {
        auto it = cache_.find(&utt);
        if (it != cache_.end()) return it->second;
        return cache_.emplace(&utt, contextual_embeddings(params_, utt)).first->second;
    }

private:
    const EncoderParams& params_;
    std::map<const Utterance*, std::vector<Vec>> cache_;
};

inline Vec embed_ref(ContextCache& cache, Task task, const SpanRef& ref) {
    const auto& ctx = cache.get(*ref.utterance);
    return task == Task::Intent ? embed_utterance(ctx) : embed_span(ctx, ref.start, ref.end);
}

// Pushes a span/utterance embedding gradient down to the table rows.
inline void backprop_ref(const EncoderParams& p, Task task, const SpanRef& ref, const Vec& g,
                         ParamGrads& grads) {
    const Utterance& utt = *ref.utterance;
    const std::size_t d = p.dim;
    if (task == Task::Intent) {
        const std::size_t n = utt.tokens.size();
        Vec part(d);
        for (std::size_t k = 0; k < d; ++k) part[k] = g[k] / static_cast<double>(n);
        for (std::size_t pos = 0; pos < n; ++pos)
            accumulate_contextual_grad(p, utt, pos, part, grads);
    } else {
        Vec first(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(d));
        Vec last(g.begin() + static_cast<std::ptrdiff_t>(d), g.end());
        accumulate_contextual_grad(p, utt, ref.start, first, grads);
        accumulate_contextual_grad(p, utt, ref.end - 1, last, grads);
    }
}

}  // namespace detail

struct BatchResult {
    double loss = 0.0;
    ParamGrads grads;
};

// Every span serves as query exactly once; loss is the mean over the
// N*B queries and gradients are exact for the linear encoder.
inline BatchResult batch_loss_and_grads(const EncoderParams& params, const TrainBatch& batch,
                                        ReductionKind kind) {
    const std::size_t N = batch.labels.size();
    if (N == 0 || batch.spans.size() != N) throw DataError("malformed batch");
    const std::size_t B = batch.spans.front().size();
    for (const auto& col : batch.spans)
        if (col.size() != B) throw DataError("ragged batch columns");

    detail::ContextCache cache(params);
    std::vector<std::vector<Vec>> emb(N);
    for (std::size_t i = 0; i < N; ++i) {
        emb[i].reserve(B);
        for (std::size_t j = 0; j < B; ++j)
            emb[i].push_back(detail::embed_ref(cache, batch.task, batch.spans[i][j]));
    }
    const std::size_t dim = emb[0][0].size();

    std::vector<std::vector<Vec>> emb_grad(N, std::vector<Vec>(B, Vec(dim, 0.0)));
    double total_loss = 0.0;
    for (std::size_t qi = 0; qi < N; ++qi) {
        for (std::size_t qj = 0; qj < B; ++qj) {
            const Vec& q = emb[qi][qj];
            SimilarityMatrix S = similarity_matrix(q, emb);
            auto red = detail::reduce_detail(S, kind, qi, qj);
            auto [loss, gscores] = batch_softmax_loss(red.scores, qi);
            total_loss += loss;
            for (std::size_t col = 0; col < N; ++col) {
                if (gscores[col] == 0.0) continue;
                for (std::size_t row = 0; row < B; ++row) {
                    const double w = red.weights[row][col] * gscores[col];
                    if (w == 0.0) continue;
                    // S[row][col] = dot(q, e): both sides receive gradient,
                    // which also covers the self-similarity cell (q == e).
                    const Vec& e = emb[col][row];
                    Vec& gq = emb_grad[qi][qj];
                    Vec& ge = emb_grad[col][row];
                    for (std::size_t k = 0; k < dim; ++k) {
                        gq[k] += w * e[k];
                        ge[k] += w * q[k];
                    }
                }
            }
        }
    }

    const double inv = 1.0 / static_cast<double>(N * B);
    BatchResult out{total_loss * inv, ParamGrads(params)};
    if (!std::isfinite(out.loss)) throw NumericError("non-finite batch loss");
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < B; ++j) {
            Vec& g = emb_grad[i][j];
            for (double& v : g) v *= inv;
            detail::backprop_ref(params, batch.task, batch.spans[i][j], g, out.grads);
        }
    }
    return out;
}

}  // namespace spanret
