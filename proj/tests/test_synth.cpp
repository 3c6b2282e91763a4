#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>
#include <string>
#include <vector>

#include "spanret/synth.hpp"

using namespace spanret;

namespace {

std::set<std::string> trigger_set(const std::vector<LabelSpec>& labels) {
    std::set<std::string> out;
    for (const auto& l : labels) out.insert(l.triggers.begin(), l.triggers.end());
    return out;
}

std::map<std::string, std::set<std::string>> triggers_by_label(const SynthGrammar& g) {
    std::map<std::string, std::set<std::string>> out;
    for (const auto* group : {&g.source_labels, &g.dev_labels, &g.target_labels})
        for (const auto& l : *group) out[l.name] = {l.triggers.begin(), l.triggers.end()};
    return out;
}

void check_ids_unique(const Dataset& ds) {
    std::set<std::string> ids;
    for (const auto& ex : ds.examples) {
        INFO("duplicate id " << ex.utterance.id);
        CHECK(ids.insert(ex.utterance.id).second);
    }
}

}  // namespace

TEST_CASE("generate_corpus produces the configured split sizes") {
    const SynthGrammar g = default_grammar();
    const SynthCorpus c = generate_corpus(g, 7);
    CHECK(c.slot_source.examples.size() == 500);
    CHECK(c.slot_dev.examples.size() == 50);
    CHECK(c.slot_target_train.examples.size() == 90);
    CHECK(c.slot_target_test.examples.size() == 60);
    CHECK(c.intent_source.examples.size() == 500);
    CHECK(c.intent_dev.examples.size() == 50);
    CHECK(c.intent_target_train.examples.size() == 90);
    CHECK(c.intent_target_test.examples.size() == 60);
    CHECK(c.slot_source.task == Task::Slot);
    CHECK(c.intent_source.task == Task::Intent);

    for (const Dataset* ds : {&c.slot_source, &c.slot_dev, &c.slot_target_train,
                              &c.slot_target_test, &c.intent_source, &c.intent_dev,
                              &c.intent_target_train, &c.intent_target_test})
        check_ids_unique(*ds);
}

TEST_CASE("slot spans pair the introducer cue with one trigger") {
    SynthGrammar g = default_grammar(2, 1, 1);
    g.source_instances = 50;
    g.dev_instances = 10;
    g.target_train_instances = 10;
    g.target_test_instances = 10;
    const SynthCorpus c = generate_corpus(g, 99);
    const auto by_label = triggers_by_label(g);
    const std::set<std::string> cues(g.introducers.begin(), g.introducers.end());

    for (const Dataset* ds : {&c.slot_source, &c.slot_dev, &c.slot_target_train,
                              &c.slot_target_test}) {
        for (const auto& ex : ds->examples) {
            const std::size_t len = ex.utterance.tokens.size();
            CHECK(len >= g.min_len);
            CHECK(len <= g.max_len);
            REQUIRE(ex.spans.size() == 1);
            const auto& s = ex.spans[0];
            REQUIRE(s.end == s.start + 2);
            REQUIRE(s.end <= len);
            REQUIRE(by_label.count(s.label) == 1);
            INFO("utterance " << ex.utterance.id);
            CHECK(cues.count(ex.utterance.tokens[s.start]) == 1);
            CHECK(by_label.at(s.label).count(ex.utterance.tokens[s.end - 1]) == 1);
        }
    }
}

TEST_CASE("slot spans shrink to the bare trigger without introducers") {
    SynthGrammar g = default_grammar(2, 1, 1);
    g.introducers.clear();
    g.source_instances = 30;
    g.dev_instances = 5;
    g.target_train_instances = 5;
    g.target_test_instances = 5;
    const SynthCorpus c = generate_corpus(g, 99);
    const auto by_label = triggers_by_label(g);

    for (const auto& ex : c.slot_source.examples) {
        REQUIRE(ex.spans.size() == 1);
        const auto& s = ex.spans[0];
        REQUIRE(s.end == s.start + 1);
        CHECK(by_label.at(s.label).count(ex.utterance.tokens[s.start]) == 1);
    }
}

TEST_CASE("intent examples carry two or three triggers of their label") {
    SynthGrammar g = default_grammar(2, 1, 1);
    g.source_instances = 50;
    g.dev_instances = 10;
    g.target_train_instances = 10;
    g.target_test_instances = 10;
    const SynthCorpus c = generate_corpus(g, 5);
    const auto by_label = triggers_by_label(g);
    const auto all_triggers = [&] {
        std::set<std::string> out = trigger_set(g.source_labels);
        for (const auto& t : trigger_set(g.dev_labels)) out.insert(t);
        for (const auto& t : trigger_set(g.target_labels)) out.insert(t);
        return out;
    }();

    for (const auto& ex : c.intent_source.examples) {
        REQUIRE(by_label.count(ex.intent) == 1);
        const auto& own = by_label.at(ex.intent);
        std::size_t own_count = 0, foreign = 0;
        for (const auto& t : ex.utterance.tokens) {
            if (own.count(t)) ++own_count;
            else if (all_triggers.count(t)) ++foreign;
        }
        CHECK(own_count >= 2);
        CHECK(own_count <= 3);
        CHECK(foreign == 0);
    }
}

TEST_CASE("generation is seed-deterministic") {
    SynthGrammar g = default_grammar(2, 1, 1);
    g.source_instances = 20;
    g.dev_instances = 5;
    g.target_train_instances = 5;
    g.target_test_instances = 5;
    const SynthCorpus a = generate_corpus(g, 31);
    const SynthCorpus b = generate_corpus(g, 31);
    CHECK(a.slot_source == b.slot_source);
    CHECK(a.slot_dev == b.slot_dev);
    CHECK(a.slot_target_train == b.slot_target_train);
    CHECK(a.slot_target_test == b.slot_target_test);
    CHECK(a.intent_source == b.intent_source);
    CHECK(a.intent_dev == b.intent_dev);
    CHECK(a.intent_target_train == b.intent_target_train);
    CHECK(a.intent_target_test == b.intent_target_test);

    const SynthCorpus other = generate_corpus(g, 32);
    CHECK(a.slot_source != other.slot_source);
}

TEST_CASE("grammars survive a json round trip") {
    SynthGrammar g = default_grammar(3, 2, 2, "alt");
    g.min_len = 4;
    g.max_len = 7;
    g.source_instances = 12;
    const json j = grammar_to_json(g);
    CHECK(grammar_from_json(j) == g);
}

TEST_CASE("grammar validation rejects malformed inputs") {
    SECTION("token shared between pools") {
        SynthGrammar g = default_grammar();
        g.fillers.push_back(g.source_labels[0].triggers[0]);
        CHECK_THROWS_WITH(validate_grammar(g),
                          Catch::Matchers::ContainsSubstring("more than one pool"));
    }
    SECTION("duplicate label name") {
        SynthGrammar g = default_grammar();
        g.target_labels[0].name = g.source_labels[0].name;
        g.target_labels[0].triggers = {"unique_tok_q"};
        CHECK_THROWS_WITH(validate_grammar(g),
                          Catch::Matchers::ContainsSubstring("duplicate label"));
    }
    SECTION("utterances too short") {
        SynthGrammar g = default_grammar();
        g.min_len = 2;
        CHECK_THROWS_AS(validate_grammar(g), DataError);
    }
    SECTION("zero instances") {
        SynthGrammar g = default_grammar();
        g.dev_instances = 0;
        CHECK_THROWS_AS(validate_grammar(g), DataError);
    }
    SECTION("no fillers") {
        SynthGrammar g = default_grammar();
        g.fillers.clear();
        CHECK_THROWS_AS(validate_grammar(g), DataError);
    }
    SECTION("label without triggers") {
        SynthGrammar g = default_grammar();
        g.dev_labels[0].triggers.clear();
        CHECK_THROWS_AS(validate_grammar(g), DataError);
    }
    SECTION("missing required json fields") {
        json j = grammar_to_json(default_grammar());
        j.erase("fillers");
        CHECK_THROWS_WITH(grammar_from_json(j),
                          Catch::Matchers::ContainsSubstring("bad grammar config"));
    }
}
