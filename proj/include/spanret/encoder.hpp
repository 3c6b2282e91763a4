#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "spanret/binio.hpp"
#include "spanret/core.hpp"
#include "spanret/rng.hpp"
#include "spanret/vecmath.hpp"

namespace spanret {

inline constexpr std::size_t kDefaultVocabBuckets = 4096;
inline constexpr std::size_t kDefaultDim = 32;

// Open-vocabulary hashing: stable across runs and platforms.
inline std::size_t token_id(std::string_view token, std::size_t vocab_buckets) {
    return static_cast<std::size_t>(mix64(fnv1a64(token)) % vocab_buckets);
}

struct EncoderParams {
    std::size_t vocab_buckets = kDefaultVocabBuckets;
    std::size_t dim = kDefaultDim;
    std::vector<double> table;    // vocab_buckets x dim, row-major
    std::vector<double> padding;  // dim

    static EncoderParams init(std::size_t vocab_buckets, std::size_t dim,
                              std::uint64_t seed) {
        if (vocab_buckets < 2) throw DataError("vocab_buckets must be >= 2");
        if (dim == 0) throw DataError("dim must be positive");
        EncoderParams p;
        p.vocab_buckets = vocab_buckets;
        p.dim = dim;
        p.table.resize(vocab_buckets * dim);
        p.padding.assign(dim, 0.0);
        Rng rng(seed);
        for (double& v : p.table) v = rng.uniform(-0.5, 0.5);
        return p;
    }

    const double* row(std::size_t bucket) const { return table.data() + bucket * dim; }
    double* row(std::size_t bucket) { return table.data() + bucket * dim; }
};

// c_i = (e_{i-1} + 2*e_i + e_{i+1}) / 4, padding_vector beyond boundaries.
inline std::vector<Vec> contextual_embeddings(const EncoderParams& p, const Utterance& utt) {
    const std::size_t n = utt.tokens.size();
    std::vector<std::size_t> buckets(n);
    for (std::size_t i = 0; i < n; ++i) buckets[i] = token_id(utt.tokens[i], p.vocab_buckets);

    std::vector<Vec> out(n, Vec(p.dim));
    for (std::size_t i = 0; i < n; ++i) {
        const double* prev = i > 0 ? p.row(buckets[i - 1]) : p.padding.data();
        const double* cur = p.row(buckets[i]);
        const double* next = i + 1 < n ? p.row(buckets[i + 1]) : p.padding.data();
        for (std::size_t k = 0; k < p.dim; ++k)
            out[i][k] = (prev[k] + 2.0 * cur[k] + next[k]) * 0.25;
    }
    return out;
}

// Concatenation of the first and last token vectors of the span.
inline Vec embed_span(const std::vector<Vec>& contextual, std::size_t start, std::size_t end) {
    if (start >= end || end > contextual.size())
        throw DataError("invalid span [" + std::to_string(start) + "," + std::to_string(end) +
                        ") over " + std::to_string(contextual.size()) + " tokens");
    const Vec& first = contextual[start];
    const Vec& last = contextual[end - 1];
    Vec out;
    out.reserve(first.size() * 2);
    out.insert(out.end(), first.begin(), first.end());
    out.insert(out.end(), last.begin(), last.end());
    return out;
}

inline Vec embed_utterance(const std::vector<Vec>& contextual) {
    if (contextual.empty()) throw DataError("cannot pool an empty utterance");
    Vec out(contextual.front().size(), 0.0);
    for (const auto& c : contextual)
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += c[k];
    const double inv = 1.0 / static_cast<double>(contextual.size());
    for (double& v : out) v *= inv;
    return out;
}

enum class EncoderKind : std::uint8_t { Mixer = 0, Frozen = 1 };

inline const char* encoder_kind_name(EncoderKind k) {
    return k == EncoderKind::Mixer ? "mixer" : "frozen";
}

// Seed for the no-training encoder; never changes.
inline constexpr std::uint64_t kFrozenSeed = 0x5eedf005ba11ad00ULL;

struct Encoder {
    EncoderKind kind = EncoderKind::Mixer;
    EncoderParams params;

    static Encoder fresh(std::size_t vocab_buckets, std::size_t dim, std::uint64_t seed) {
        return {EncoderKind::Mixer, EncoderParams::init(vocab_buckets, dim, seed)};
    }

    // Hashed token features through a fixed pseudo-random projection;
    // no trainable state ever touches it.
    static Encoder frozen(std::size_t vocab_buckets = kDefaultVocabBuckets,
                          std::size_t dim = kDefaultDim) {
        return {EncoderKind::Frozen, EncoderParams::init(vocab_buckets, dim, kFrozenSeed)};
    }

    std::vector<Vec> contextual(const Utterance& utt) const {
        return contextual_embeddings(params, utt);
    }

    Vec span_vector(const Utterance& utt, std::size_t start, std::size_t end) const {
        return embed_span(contextual(utt), start, end);
    }

    Vec utterance_vector(const Utterance& utt) const {
        return embed_utterance(contextual(utt));
    }
};

inline std::vector<Vec> deterministic_encoder(const Utterance& utt) {
    static const Encoder enc = Encoder::frozen();
    return enc.contextual(utt);
}

struct SpanRef {
    const Utterance* utterance = nullptr;
    std::size_t start = 0;
    std::size_t end = 0;
};

// Gradient buffer with the same shape as EncoderParams.
struct ParamGrads {
    std::vector<double> table;
    std::vector<double> padding;

    explicit ParamGrads(const EncoderParams& p)
        : table(p.table.size(), 0.0), padding(p.padding.size(), 0.0) {}
};

// Routes a gradient arriving at contextual position i back onto the
// table rows and padding vector through the mixer weights.
inline void accumulate_contextual_grad(const EncoderParams& p, const Utterance& utt,
                                       std::size_t i, const Vec& g, ParamGrads& grads) {
    const std::size_t n = utt.tokens.size();
    auto add_to = [&](double* dst, double w) {
        for (std::size_t k = 0; k < p.dim; ++k) dst[k] += w * g[k];
    };
    auto target = [&](std::size_t pos) -> double* {
        return grads.table.data() + token_id(utt.tokens[pos], p.vocab_buckets) * p.dim;
    };
    if (i > 0) add_to(target(i - 1), 0.25); else add_to(grads.padding.data(), 0.25);
    add_to(target(i), 0.5);
    if (i + 1 < n) add_to(target(i + 1), 0.25); else add_to(grads.padding.data(), 0.25);
}

inline void apply_gradients(EncoderParams& p, const ParamGrads& g, double lr) {
    for (std::size_t i = 0; i < p.table.size(); ++i) p.table[i] -= lr * g.table[i];
    for (std::size_t i = 0; i < p.padding.size(); ++i) p.padding[i] -= lr * g.padding[i];
}

// ---- Model file ----

inline constexpr std::uint32_t kModelMagic = 0x53524d44;  // "SRMD"
inline constexpr std::uint32_t kModelVersion = 1;

inline void save_model(const Encoder& enc, const std::string& path) {
    auto out = binio::open_out(path);
    binio::write_pod(out, kModelMagic);
    binio::write_pod(out, kModelVersion);
    binio::write_pod(out, static_cast<std::uint8_t>(enc.kind));
    binio::write_pod(out, static_cast<std::uint64_t>(enc.params.vocab_buckets));
    binio::write_pod(out, static_cast<std::uint64_t>(enc.params.dim));
    binio::write_doubles(out, enc.params.padding);
    binio::write_doubles(out, enc.params.table);
    if (!out) throw DataError("write failure on '" + path + "'");
}

inline Encoder load_model(const std::string& path) {
    auto in = binio::open_in(path);
    binio::check_magic(in, kModelMagic, "model");
    std::uint32_t version = 0;
    binio::read_pod(in, version, "model version");
    if (version != kModelVersion)
        throw DataError("unsupported model format version " + std::to_string(version));
    std::uint8_t kind = 0;
    binio::read_pod(in, kind, "model kind");
    if (kind > 1) throw DataError("corrupt model kind");
    std::uint64_t vocab_buckets = 0, dim = 0;
    binio::read_pod(in, vocab_buckets, "model vocab_buckets");
    binio::read_pod(in, dim, "model dim");
    if (vocab_buckets < 2 || dim == 0 || vocab_buckets > (1ULL << 28) || dim > (1ULL << 16))
        throw DataError("corrupt model dimensions");

    Encoder enc;
    enc.kind = static_cast<EncoderKind>(kind);
    enc.params.vocab_buckets = static_cast<std::size_t>(vocab_buckets);
    enc.params.dim = static_cast<std::size_t>(dim);
    binio::read_doubles(in, enc.params.padding, enc.params.dim, "model padding");
    binio::read_doubles(in, enc.params.table, enc.params.vocab_buckets * enc.params.dim,
                        "model table");
    if (!all_finite(enc.params.padding) || !all_finite(enc.params.table))
        throw DataError("non-finite values in model file");
    return enc;
}

}  // namespace spanret
