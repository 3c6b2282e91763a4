#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "spanret/core.hpp"
#include "spanret/encoder.hpp"
#include "spanret/index.hpp"

namespace spanret {

// Per-label mean of support embeddings. Entries stay sorted by label.
struct PrototypeTable {
    struct Entry {
        std::string label;
        Vec vector;
        std::size_t count = 0;

        bool operator==(const Entry&) const = default;
    };

    Task task = Task::Slot;
    std::vector<Entry> entries;

    bool operator==(const PrototypeTable&) const = default;
};

inline PrototypeTable build_prototypes(const Dataset& support, const Encoder& encoder,
                                       IndexKind kind) {
    if (kind == IndexKind::Proto)
        throw DataError("build_prototypes expects a slot or intent kind");
    const Task want = kind == IndexKind::Slot ? Task::Slot : Task::Intent;
    if (support.task != want)
        throw DataError("support dataset task does not match prototype kind");
    if (support.examples.empty()) throw DataError("empty support set");

    std::map<std::string, std::pair<Vec, std::size_t>> sums;
    auto accumulate = [&](const std::string& label, const Vec& v) {
        auto& [sum, count] = sums[label];
        if (sum.empty()) sum.assign(v.size(), 0.0);
        for (std::size_t k = 0; k < v.size(); ++k) sum[k] += v[k];
        ++count;
    };
    for (const auto& ex : support.examples) {
        const auto ctx = encoder.contextual(ex.utterance);
        if (want == Task::Intent) {
            accumulate(ex.intent, embed_utterance(ctx));
        } else {
            for (const auto& s : ex.spans) accumulate(s.label, embed_span(ctx, s.start, s.end));
        }
    }

    PrototypeTable table;
    table.task = want;
    for (auto& [label, acc] : sums) {
        auto& [sum, count] = acc;
        for (double& v : sum) v /= static_cast<double>(count);
        table.entries.push_back({label, std::move(sum), count});
    }
    return table;
}

// Nearest prototype by normalized score; score ties resolve to the
// lexicographically lowest label via the sorted entry order.
inline std::pair<std::string, double> proto_predict(const Vec& query,
                                                    const PrototypeTable& table) {
    if (table.entries.empty()) throw DataError("empty prototype table");
    std::size_t best = 0;
    double best_score = normalize_score(query, table.entries[0].vector);
    for (std::size_t i = 1; i < table.entries.size(); ++i) {
        const double s = normalize_score(query, table.entries[i].vector);
        if (s > best_score) {
            best = i;
            best_score = s;
        }
    }
    return {table.entries[best].label, best_score};
}

// Drop-in candidate source for the decoder and intent classifier:
// one index entry per prototype, in label order.
inline RetrievalIndex to_index(const PrototypeTable& table) {
    RetrievalIndex index;
    index.kind = table.task == Task::Slot ? IndexKind::Slot : IndexKind::Intent;
    for (const auto& e : table.entries)
        index.add({e.vector, e.label, {task_name(table.task), 0, e.count}});
    if (index.entries.empty()) throw DataError("empty prototype table");
    return index;
}

// Prototype tables persist in the index container with the proto kind;
// the origin task rides in the entry provenance.
inline void save_prototypes(const PrototypeTable& table, const std::string& path) {
    RetrievalIndex container;
    container.kind = IndexKind::Proto;
    for (const auto& e : table.entries)
        container.add({e.vector, e.label, {task_name(table.task), 0, e.count}});
    container.dim = table.entries.empty() ? 0 : table.entries.front().vector.size();
    save_index(container, path);
}

inline PrototypeTable load_prototypes(const std::string& path) {
    const RetrievalIndex container = load_index(path);
    if (container.kind != IndexKind::Proto)
        throw DataError("'" + path + "' is not a prototype table");
    PrototypeTable table;
    for (const auto& e : container.entries) {
        if (table.entries.empty()) table.task = parse_task(e.provenance.example_id);
        if (e.provenance.end == 0) throw DataError("corrupt prototype count");
        table.entries.push_back({e.label, e.vector, e.provenance.end});
    }
    std::sort(table.entries.begin(), table.entries.end(),
              [](const auto& a, const auto& b) { return a.label < b.label; });
    return table;
}

}  // namespace spanret
