#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "spanret/binio.hpp"
#include "spanret/core.hpp"
#include "spanret/encoder.hpp"
#include "spanret/rng.hpp"
#include "spanret/vecmath.hpp"

namespace spanret {

enum class IndexKind : std::uint8_t { Slot = 0, Intent = 1, Proto = 2 };

inline const char* index_kind_name(IndexKind k) {
    switch (k) {
        case IndexKind::Slot: return "slot";
        case IndexKind::Intent: return "intent";
        default: return "proto";
    }
}

struct Provenance {
    std::string example_id;
    std::size_t start = 0;
    std::size_t end = 0;

    bool operator==(const Provenance&) const = default;
};

struct IndexEntry {
    Vec vector;
    std::string label;
    Provenance provenance;

    bool operator==(const IndexEntry&) const = default;
};

struct RetrievalIndex {
    IndexKind kind = IndexKind::Slot;
    std::size_t dim = 0;
    std::vector<IndexEntry> entries;

    bool operator==(const RetrievalIndex&) const = default;

    void add(IndexEntry entry) {
        if (!all_finite(entry.vector)) throw DataError("non-finite vector in index entry");
        if (entries.empty() && dim == 0) dim = entry.vector.size();
        if (entry.vector.size() != dim)
            throw DataError("index entry dim " + std::to_string(entry.vector.size()) +
                            " does not match index dim " + std::to_string(dim));
        entries.push_back(std::move(entry));
    }

    std::set<std::string> labels() const {
        std::set<std::string> out;
        for (const auto& e : entries) out.insert(e.label);
        return out;
    }

    // Copy without entries from one example; used for leave-one-out scoring.
    RetrievalIndex without_example(const std::string& example_id) const {
        RetrievalIndex out;
        out.kind = kind;
        out.dim = dim;
        for (const auto& e : entries)
            if (e.provenance.example_id != example_id) out.entries.push_back(e);
        return out;
    }
};

enum class SupportVariant { All, Balance, Tgt };

inline const char* support_variant_name(SupportVariant v) {
    switch (v) {
        case SupportVariant::All: return "all";
        case SupportVariant::Balance: return "balance";
        default: return "tgt";
    }
}

inline SupportVariant parse_support_variant(const std::string& s) {
    if (s == "all") return SupportVariant::All;
    if (s == "balance") return SupportVariant::Balance;
    if (s == "tgt") return SupportVariant::Tgt;
    throw DataError("unknown support variant '" + s + "' (expected all|balance|tgt)");
}

struct SupportSetSpec {
    SupportVariant variant = SupportVariant::All;
    std::size_t k = 5;          // shots, used by balance
    std::uint64_t seed = 1;     // balance subsampling stream
};

// Target datasets first, then source (dropped under the tgt variant);
// balance subsamples each label to k entries with a per-label stream.
inline RetrievalIndex build_index(const std::vector<const Dataset*>& target,
                                  const std::vector<const Dataset*>& source,
                                  const Encoder& encoder, const SupportSetSpec& spec,
                                  IndexKind kind) {
    if (kind == IndexKind::Proto) throw DataError("build_index does not produce proto indexes");
    const Task want = kind == IndexKind::Slot ? Task::Slot : Task::Intent;

    std::vector<const Dataset*> datasets(target.begin(), target.end());
    if (spec.variant != SupportVariant::Tgt)
        datasets.insert(datasets.end(), source.begin(), source.end());

    RetrievalIndex index;
    index.kind = kind;
    for (const Dataset* ds : datasets) {
        if (ds == nullptr) continue;
        if (ds->task != want)
            throw DataError(std::string("support dataset task does not match index kind '") +
                            index_kind_name(kind) + "'");
        for (const auto& ex : ds->examples) {
            const auto ctx = encoder.contextual(ex.utterance);
            if (want == Task::Intent) {
                index.add({embed_utterance(ctx),
                           ex.intent,
                           {ex.utterance.id, 0, ex.utterance.tokens.size()}});
            } else {
                for (const auto& s : ex.spans)
                    index.add({embed_span(ctx, s.start, s.end),
                               s.label,
                               {ex.utterance.id, s.start, s.end}});
            }
        }
    }

    if (spec.variant == SupportVariant::Balance) {
        std::map<std::string, std::vector<std::size_t>> per_label;
        for (std::size_t i = 0; i < index.entries.size(); ++i)
            per_label[index.entries[i].label].push_back(i);
        std::set<std::size_t> keep;
        for (auto& [label, positions] : per_label) {
            if (positions.size() > spec.k) {
                Rng rng(derive_seed(spec.seed, fnv1a64(label)));
                rng.shuffle(positions);
                positions.resize(spec.k);
            }
            keep.insert(positions.begin(), positions.end());
        }
        RetrievalIndex balanced;
        balanced.kind = index.kind;
        for (std::size_t i : keep) balanced.add(std::move(index.entries[i]));
        index = std::move(balanced);
    }

    if (index.entries.empty()) throw DataError("support set is empty after variant filtering");
    return index;
}

struct QueryResult {
    std::size_t pos = 0;
    double score = 0.0;
};

// Exact scan by raw dot product; ties go to the lowest insertion order.
inline QueryResult query_top1(const RetrievalIndex& index, const Vec& q) {
    if (index.entries.empty()) throw DataError("query against empty index");
    QueryResult best{0, dot(q, index.entries[0].vector)};
    for (std::size_t i = 1; i < index.entries.size(); ++i) {
        const double s = dot(q, index.entries[i].vector);
        if (s > best.score) best = {i, s};
    }
    return best;
}

// (cos + 1) / 2 on unit-normalized vectors; always within [0,1].
inline double normalize_score(const Vec& q, const Vec& v) {
    const double nq = l2norm(q);
    const double nv = l2norm(v);
    if (nq == 0.0 || nv == 0.0) {
        static std::atomic<bool> warned{false};
        if (!warned.exchange(true))
            std::cerr << "spanret: zero-norm vector in score normalization; "
                         "score set to 0 (further diagnostics suppressed)\n";
        return 0.0;
    }
    double c = dot(q, v) / (nq * nv);
    c = std::clamp(c, -1.0, 1.0);
    return (c + 1.0) * 0.5;
}

// Inference-time selection: ranked by normalized score so thresholding
// and ranking agree. Ties go to the lowest insertion order.
inline QueryResult query_top1_normalized(const RetrievalIndex& index, const Vec& q) {
    if (index.entries.empty()) throw DataError("query against empty index");
    QueryResult best{0, normalize_score(q, index.entries[0].vector)};
    for (std::size_t i = 1; i < index.entries.size(); ++i) {
        const double s = normalize_score(q, index.entries[i].vector);
        if (s > best.score) best = {i, s};
    }
    return best;
}

// ---- Index file ----

inline constexpr std::uint32_t kIndexMagic = 0x53524958;  // "SRIX"
inline constexpr std::uint32_t kIndexVersion = 1;

inline void save_index(const RetrievalIndex& index, const std::string& path) {
    auto out = binio::open_out(path);
    binio::write_pod(out, kIndexMagic);
    binio::write_pod(out, kIndexVersion);
    binio::write_pod(out, static_cast<std::uint8_t>(index.kind));
    binio::write_pod(out, static_cast<std::uint64_t>(index.dim));
    binio::write_pod(out, static_cast<std::uint64_t>(index.entries.size()));
    for (const auto& e : index.entries) {
        binio::write_doubles(out, e.vector);
        binio::write_string(out, e.label);
        binio::write_string(out, e.provenance.example_id);
        binio::write_pod(out, static_cast<std::uint64_t>(e.provenance.start));
        binio::write_pod(out, static_cast<std::uint64_t>(e.provenance.end));
    }
    if (!out) throw DataError("write failure on '" + path + "'");
}

inline RetrievalIndex load_index(const std::string& path) {
    auto in = binio::open_in(path);
    binio::check_magic(in, kIndexMagic, "index");
    std::uint32_t version = 0;
    binio::read_pod(in, version, "index version");
    if (version != kIndexVersion)
        throw DataError("unsupported index format version " + std::to_string(version));
    std::uint8_t kind = 0;
    binio::read_pod(in, kind, "index kind");
    if (kind > 2) throw DataError("corrupt index kind");
    std::uint64_t dim = 0, count = 0;
    binio::read_pod(in, dim, "index dim");
    binio::read_pod(in, count, "index entry count");
    if (dim > (1ULL << 24) || count > (1ULL << 32)) throw DataError("corrupt index header");

    RetrievalIndex index;
    index.kind = static_cast<IndexKind>(kind);
    index.dim = static_cast<std::size_t>(dim);
    index.entries.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
        IndexEntry e;
        binio::read_doubles(in, e.vector, index.dim, "index entry vector");
        if (!all_finite(e.vector)) throw DataError("non-finite vector in index file");
        e.label = binio::read_string(in, "index entry label");
        e.provenance.example_id = binio::read_string(in, "index entry provenance");
        std::uint64_t s = 0, t = 0;
        binio::read_pod(in, s, "index entry span start");
        binio::read_pod(in, t, "index entry span end");
        e.provenance.start = static_cast<std::size_t>(s);
        e.provenance.end = static_cast<std::size_t>(t);
        index.entries.push_back(std::move(e));
    }
    return index;
}

}  // namespace spanret
