#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "spanret/core.hpp"
#include "spanret/rng.hpp"

namespace spanret {

struct LabelSpec {
    std::string name;
    std::vector<std::string> triggers;

    bool operator==(const LabelSpec&) const = default;
};

// Grammar for the synthetic corpus: every label owns a disjoint pool
// of trigger tokens. A slot span is an introducer cue plus one trigger
// planted among shared fillers; an intent utterance mixes several
// triggers into the filler bed. A few noise distractors per utterance.
struct SynthGrammar {
    std::vector<LabelSpec> source_labels;
    std::vector<LabelSpec> dev_labels;
    std::vector<LabelSpec> target_labels;
    std::vector<std::string> fillers;
    std::vector<std::string> introducers;
    std::vector<std::string> noise;
    std::size_t min_len = 6;
    std::size_t max_len = 10;
    std::size_t source_instances = 100;
    std::size_t dev_instances = 25;
    std::size_t target_train_instances = 30;
    std::size_t target_test_instances = 20;

    bool operator==(const SynthGrammar&) const = default;
};

inline SynthGrammar default_grammar(std::size_t n_source = 5, std::size_t n_dev = 2,
                                    std::size_t n_target = 3,
                                    const std::string& target_prefix = "tgt",
                                    std::size_t source_pool = 6,
                                    std::size_t target_pool = 2) {
    SynthGrammar g;
    auto make_labels = [](const std::string& prefix, std::size_t count, std::size_t pool) {
        std::vector<LabelSpec> out;
        for (std::size_t i = 0; i < count; ++i) {
            LabelSpec l;
            l.name = prefix + std::to_string(i);
            for (std::size_t j = 0; j < pool; ++j)
                l.triggers.push_back(l.name + "_w" + std::to_string(j));
            out.push_back(std::move(l));
        }
        return out;
    };
    g.source_labels = make_labels("src", n_source, source_pool);
    g.dev_labels = make_labels("dev", n_dev, target_pool);
    g.target_labels = make_labels(target_prefix, n_target, target_pool);
    for (std::size_t i = 0; i < 60; ++i) g.fillers.push_back("f" + std::to_string(i));
    g.introducers = {"at"};
    for (std::size_t i = 0; i < 30; ++i) g.noise.push_back("n" + std::to_string(i));
    return g;
}

inline void validate_grammar(const SynthGrammar& g) {
    if (g.source_labels.empty() || g.target_labels.empty())
        throw DataError("grammar needs source and target labels");
    if (g.fillers.empty()) throw DataError("grammar needs filler tokens");
    if (g.min_len < 3 || g.max_len < g.min_len)
        throw DataError("grammar needs 3 <= min_len <= max_len");
    if (g.source_instances == 0 || g.dev_instances == 0 ||
        g.target_train_instances == 0 || g.target_test_instances == 0)
        throw DataError("grammar instance counts must be positive");

    std::set<std::string> labels;
    std::set<std::string> tokens(g.fillers.begin(), g.fillers.end());
    if (tokens.size() != g.fillers.size()) throw DataError("duplicate filler token");
    auto add_tokens = [&](const std::vector<std::string>& more, const char* what) {
        for (const auto& t : more) {
            if (t.empty()) throw DataError(std::string("empty token in ") + what);
            if (!tokens.insert(t).second)
                throw DataError("token '" + t + "' appears in more than one pool");
        }
    };
    add_tokens(g.introducers, "introducers");
    add_tokens(g.noise, "noise");
    for (const auto* group : {&g.source_labels, &g.dev_labels, &g.target_labels}) {
        for (const auto& l : *group) {
            if (l.name.empty()) throw DataError("empty label name");
            if (!labels.insert(l.name).second)
                throw DataError("duplicate label '" + l.name + "'");
            if (l.triggers.empty())
                throw DataError("label '" + l.name + "' has no trigger tokens");
            add_tokens(l.triggers, "triggers");
        }
    }
}

struct SynthCorpus {
    Dataset slot_source, slot_dev, slot_target_train, slot_target_test;
    Dataset intent_source, intent_dev, intent_target_train, intent_target_test;
};

namespace detail {

inline const std::string& pick(const std::vector<std::string>& pool, Rng& rng) {
    return pool[rng.below(pool.size())];
}

inline void sprinkle_noise(std::vector<std::string>& tokens,
                           const std::vector<std::size_t>& eligible,
                           const SynthGrammar& g, Rng& rng) {
    if (g.noise.empty() || eligible.empty()) return;
    std::vector<std::size_t> slots = eligible;
    rng.shuffle(slots);
    const std::size_t n = std::min<std::size_t>(rng.below(3), slots.size());
    for (std::size_t i = 0; i < n; ++i) tokens[slots[i]] = pick(g.noise, rng);
}

inline Example gen_slot_example(const LabelSpec& label, const SynthGrammar& g, Rng& rng,
                                std::string id) {
    const std::size_t len = g.min_len + rng.below(g.max_len - g.min_len + 1);

    std::vector<std::string> tokens(len);
    for (auto& t : tokens) t = pick(g.fillers, rng);
    std::size_t start, pos;
    if (g.introducers.empty()) {
        pos = rng.below(len);
        start = pos;
    } else {
        pos = 1 + rng.below(len - 1);
        start = pos - 1;
        tokens[start] = pick(g.introducers, rng);
    }
    tokens[pos] = pick(label.triggers, rng);

    std::vector<std::size_t> eligible;
    for (std::size_t t = 0; t < len; ++t)
        if (t < start || t > pos) eligible.push_back(t);
    sprinkle_noise(tokens, eligible, g, rng);

    return make_slot_example({std::move(id), std::move(tokens)},
                             {{start, pos + 1, label.name}});
}

inline Example gen_intent_example(const LabelSpec& label, const SynthGrammar& g, Rng& rng,
                                  std::string id) {
    const std::size_t len = g.min_len + rng.below(g.max_len - g.min_len + 1);
    const std::size_t n_trig = 2 + rng.below(2);

    std::vector<std::string> tokens(len);
    for (auto& t : tokens) t = pick(g.fillers, rng);
    std::vector<std::size_t> positions(len);
    for (std::size_t t = 0; t < len; ++t) positions[t] = t;
    rng.shuffle(positions);
    std::set<std::size_t> trig_at(positions.begin(),
                                  positions.begin() + static_cast<std::ptrdiff_t>(n_trig));
    for (std::size_t p : trig_at) tokens[p] = pick(label.triggers, rng);

    std::vector<std::size_t> eligible;
    for (std::size_t t = 0; t < len; ++t)
        if (!trig_at.count(t)) eligible.push_back(t);
    sprinkle_noise(tokens, eligible, g, rng);

    return make_intent_example({std::move(id), std::move(tokens)}, label.name);
}

inline Dataset gen_split(Task task, const std::vector<LabelSpec>& labels,
                         std::size_t instances, const SynthGrammar& g, Rng& rng,
                         const std::string& id_prefix) {
    Dataset ds;
    ds.task = task;
    std::size_t counter = 0;
    for (const auto& label : labels) {
        for (std::size_t i = 0; i < instances; ++i) {
            std::string id = id_prefix + "-" + std::to_string(counter++);
            ds.examples.push_back(task == Task::Slot
                                      ? gen_slot_example(label, g, rng, std::move(id))
                                      : gen_intent_example(label, g, rng, std::move(id)));
        }
    }
    return ds;
}

}  // namespace detail

inline SynthCorpus generate_corpus(const SynthGrammar& g, std::uint64_t seed) {
    validate_grammar(g);
    Rng rng(seed);
    SynthCorpus c;
    c.slot_source = detail::gen_split(Task::Slot, g.source_labels, g.source_instances, g, rng, "src");
    c.slot_dev = detail::gen_split(Task::Slot, g.dev_labels, g.dev_instances, g, rng, "dev");
    c.slot_target_train =
        detail::gen_split(Task::Slot, g.target_labels, g.target_train_instances, g, rng, "tgt-train");
    c.slot_target_test =
        detail::gen_split(Task::Slot, g.target_labels, g.target_test_instances, g, rng, "tgt-test");
    c.intent_source =
        detail::gen_split(Task::Intent, g.source_labels, g.source_instances, g, rng, "src");
    c.intent_dev = detail::gen_split(Task::Intent, g.dev_labels, g.dev_instances, g, rng, "dev");
    c.intent_target_train = detail::gen_split(Task::Intent, g.target_labels,
                                              g.target_train_instances, g, rng, "tgt-train");
    c.intent_target_test = detail::gen_split(Task::Intent, g.target_labels,
                                             g.target_test_instances, g, rng, "tgt-test");
    return c;
}

// ---- Grammar (de)serialization for manifests and --grammar files ----

inline json grammar_to_json(const SynthGrammar& g) {
    auto labels_to_json = [](const std::vector<LabelSpec>& ls) {
        json out = json::array();
        for (const auto& l : ls) out.push_back({{"name", l.name}, {"triggers", l.triggers}});
        return out;
    };
    return json{{"source_labels", labels_to_json(g.source_labels)},
                {"dev_labels", labels_to_json(g.dev_labels)},
                {"target_labels", labels_to_json(g.target_labels)},
                {"fillers", g.fillers},
                {"introducers", g.introducers},
                {"noise", g.noise},
                {"min_len", g.min_len},
                {"max_len", g.max_len},
                {"source_instances", g.source_instances},
                {"dev_instances", g.dev_instances},
                {"target_train_instances", g.target_train_instances},
                {"target_test_instances", g.target_test_instances}};
}

inline SynthGrammar grammar_from_json(const json& j) {
    SynthGrammar g;
    auto labels_from = [&](const char* key) {
        std::vector<LabelSpec> out;
        if (!j.contains(key)) return out;
        for (const auto& lj : j.at(key)) {
            LabelSpec l;
            l.name = lj.at("name").get<std::string>();
            l.triggers = lj.at("triggers").get<std::vector<std::string>>();
            out.push_back(std::move(l));
        }
        return out;
    };
    try {
        g.source_labels = labels_from("source_labels");
        g.dev_labels = labels_from("dev_labels");
        g.target_labels = labels_from("target_labels");
        g.fillers = j.at("fillers").get<std::vector<std::string>>();
        if (j.contains("introducers"))
            g.introducers = j.at("introducers").get<std::vector<std::string>>();
        if (j.contains("noise")) g.noise = j.at("noise").get<std::vector<std::string>>();
        g.min_len = j.at("min_len").get<std::size_t>();
        g.max_len = j.at("max_len").get<std::size_t>();
        g.source_instances = j.at("source_instances").get<std::size_t>();
        g.dev_instances = j.at("dev_instances").get<std::size_t>();
        g.target_train_instances = j.at("target_train_instances").get<std::size_t>();
        g.target_test_instances = j.at("target_test_instances").get<std::size_t>();
    } catch (const json::exception& e) {
        throw DataError(std::string("bad grammar config: ") + e.what());
    }
    validate_grammar(g);
    return g;
}

}  // namespace spanret
