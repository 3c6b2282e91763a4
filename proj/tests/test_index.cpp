#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <map>

#include "spanret/index.hpp"
#include "testutil.hpp"

using namespace spanret;
using testutil::ScratchDir;
using testutil::utt;

namespace {

IndexEntry entry(Vec v, const std::string& label, const std::string& id = "e") {
    return {std::move(v), label, {id, 0, 1}};
}

RetrievalIndex random_index(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    RetrievalIndex idx;
    idx.kind = IndexKind::Slot;
    for (std::size_t i = 0; i < n; ++i) {
        Vec v(d);
        for (double& x : v) x = rng.uniform(-2.0, 2.0);
        idx.add(entry(std::move(v), "l" + std::to_string(i % 7), "u" + std::to_string(i)));
    }
    return idx;
}

Dataset slot_ds(std::vector<Example> exs) {
    Dataset ds;
    ds.task = Task::Slot;
    ds.examples = std::move(exs);
    return ds;
}

}  // namespace

TEST_CASE("index construction walks spans and utterances") {
    const Encoder enc = Encoder::frozen(256, 4);

    Dataset slots = slot_ds({make_slot_example(utt("a", "p q r"), {{0, 1, "x"}, {2, 3, "y"}}),
                             make_slot_example(utt("b", "s t"), {{0, 2, "x"}}),
                             make_slot_example(utt("c", "v w"), {})});
    Dataset intents;
    intents.task = Task::Intent;
    intents.examples = {make_intent_example(utt("i1", "p q"), "go"),
                        make_intent_example(utt("i2", "r s"), "stop")};

    SECTION("slot index has one entry per span") {
        auto idx = build_index({&slots}, {}, enc, {}, IndexKind::Slot);
        REQUIRE(idx.entries.size() == 3);
        CHECK(idx.kind == IndexKind::Slot);
        CHECK(idx.dim == 8);  // concat of two 4-d boundary vectors
        CHECK(idx.entries[0].label == "x");
        CHECK(idx.entries[0].provenance == Provenance{"a", 0, 1});
        CHECK(idx.entries[1].provenance == Provenance{"a", 2, 3});
        CHECK(idx.entries[2].provenance == Provenance{"b", 0, 2});
        CHECK(idx.entries[2].vector == enc.span_vector(slots.examples[1].utterance, 0, 2));
        CHECK(idx.labels() == std::set<std::string>{"x", "y"});
    }
    SECTION("intent index has one entry per example") {
        auto idx = build_index({&intents}, {}, enc, {}, IndexKind::Intent);
        REQUIRE(idx.entries.size() == 2);
        CHECK(idx.dim == 4);
        CHECK(idx.entries[0].label == "go");
        CHECK(idx.entries[0].provenance == Provenance{"i1", 0, 2});
        CHECK(idx.entries[0].vector == enc.utterance_vector(intents.examples[0].utterance));
    }
    SECTION("balance caps every label at k") {
        std::vector<Example> exs;
        for (int i = 0; i < 7; ++i)
            exs.push_back(make_slot_example(utt("m" + std::to_string(i), "p q"), {{0, 1, "x"}}));
        exs.push_back(make_slot_example(utt("n", "p q"), {{1, 2, "y"}}));
        Dataset big = slot_ds(std::move(exs));
        auto idx = build_index({&big}, {}, enc, {SupportVariant::Balance, 2, 11}, IndexKind::Slot);
        std::map<std::string, std::size_t> counts;
        for (const auto& e : idx.entries) ++counts[e.label];
        CHECK(counts["x"] == 2);
        CHECK(counts["y"] == 1);

        auto again =
            build_index({&big}, {}, enc, {SupportVariant::Balance, 2, 11}, IndexKind::Slot);
        CHECK(idx == again);
    }
    SECTION("tgt variant drops source datasets") {
        Dataset src = slot_ds({make_slot_example(utt("s1", "p q"), {{0, 1, "z"}})});
        auto all = build_index({&slots}, {&src}, enc, {SupportVariant::All}, IndexKind::Slot);
        CHECK(all.labels() == std::set<std::string>{"x", "y", "z"});
        auto tgt = build_index({&slots}, {&src}, enc, {SupportVariant::Tgt}, IndexKind::Slot);
        CHECK(tgt.labels() == std::set<std::string>{"x", "y"});
        CHECK(tgt.entries.size() == 3);
    }
    SECTION("bad requests") {
        CHECK_THROWS_AS(build_index({&slots}, {}, enc, {}, IndexKind::Proto), DataError);
        CHECK_THROWS_AS(build_index({&slots}, {}, enc, {}, IndexKind::Intent), DataError);
        CHECK_THROWS_AS(build_index({&intents}, {}, enc, {}, IndexKind::Slot), DataError);
        Dataset empty = slot_ds({});
        CHECK_THROWS_AS(build_index({&empty}, {}, enc, {}, IndexKind::Slot), DataError);
    }
}

TEST_CASE("index entries must be finite and dimension-consistent") {
    RetrievalIndex idx;
    idx.add(entry({1.0, 2.0}, "a"));
    CHECK(idx.dim == 2);
    CHECK_THROWS_AS(idx.add(entry({1.0}, "b")), DataError);
    CHECK_THROWS_AS(idx.add(entry({1.0, std::nan("")}, "b")), DataError);
}

TEST_CASE("top-1 retrieval scans exactly") {
    RetrievalIndex idx;
    idx.add(entry({1.0, 0.0}, "A"));
    idx.add(entry({0.0, 1.0}, "B"));

    SECTION("picks the larger dot product") {
        QueryResult r = query_top1(idx, {0.9, 0.1});
        CHECK(r.pos == 0);
        CHECK(r.score == 0.9);
        CHECK(idx.entries[r.pos].label == "A");
    }
    SECTION("ties go to the lowest position") {
        QueryResult r = query_top1(idx, {0.5, 0.5});
        CHECK(r.pos == 0);
    }
    SECTION("agrees with an exhaustive scan on random data") {
        RetrievalIndex big = random_index(200, 6, 3);
        Rng rng(4);
        for (int t = 0; t < 1000; ++t) {
            Vec q(6);
            for (double& x : q) x = rng.uniform(-2.0, 2.0);
            QueryResult r = query_top1(big, q);
            std::size_t best = 0;
            double best_score = dot(q, big.entries[0].vector);
            for (std::size_t i = 1; i < big.entries.size(); ++i) {
                const double s = dot(q, big.entries[i].vector);
                if (s > best_score) {
                    best = i;
                    best_score = s;
                }
            }
            REQUIRE(r.pos == best);
            REQUIRE(r.score == best_score);
        }
    }
    SECTION("empty index is rejected") {
        RetrievalIndex empty;
        CHECK_THROWS_AS(query_top1(empty, {1.0}), DataError);
    }
}

TEST_CASE("score normalization maps cosine onto [0,1]") {
    CHECK(normalize_score({2.0, 0.0}, {5.0, 0.0}) == 1.0);
    CHECK(normalize_score({1.0, 0.0}, {0.0, 3.0}) == 0.5);
    CHECK(normalize_score({1.0, 0.0}, {-4.0, 0.0}) == 0.0);
    CHECK(normalize_score({0.0, 0.0}, {1.0, 0.0}) == 0.0);
    CHECK(normalize_score({1.0, 0.0}, {0.0, 0.0}) == 0.0);

    Rng rng(15);
    for (int t = 0; t < 200; ++t) {
        Vec a(4), b(4);
        for (double& x : a) x = rng.uniform(-3.0, 3.0);
        for (double& x : b) x = rng.uniform(-3.0, 3.0);
        const double s = normalize_score(a, b);
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
    }
}

TEST_CASE("normalized retrieval ranks by normalized score") {
    RetrievalIndex idx;
    idx.add(entry({10.0, 0.0}, "big"));    // large norm, off-direction for q
    idx.add(entry({0.1, 0.1}, "aligned"));  // small norm, well aligned

    Vec q{1.0, 1.0};
    QueryResult raw = query_top1(idx, q);
    CHECK(idx.entries[raw.pos].label == "big");  // raw dot prefers the long vector

    QueryResult norm = query_top1_normalized(idx, q);
    CHECK(idx.entries[norm.pos].label == "aligned");
    CHECK(norm.score == Catch::Approx(1.0).epsilon(1e-12));

    RetrievalIndex big = random_index(100, 5, 21);
    Rng rng(22);
    for (int t = 0; t < 200; ++t) {
        Vec v(5);
        for (double& x : v) x = rng.uniform(-2.0, 2.0);
        QueryResult r = query_top1_normalized(big, v);
        std::size_t best = 0;
        double best_score = normalize_score(v, big.entries[0].vector);
        for (std::size_t i = 1; i < big.entries.size(); ++i) {
            const double s = normalize_score(v, big.entries[i].vector);
            if (s > best_score) {
                best = i;
                best_score = s;
            }
        }
        REQUIRE(r.pos == best);
        REQUIRE(r.score == best_score);
    }
}

TEST_CASE("leave-one-out copies drop a whole example") {
    RetrievalIndex idx;
    idx.add({{1.0}, "a", {"u1", 0, 1}});
    idx.add({{2.0}, "b", {"u2", 0, 1}});
    idx.add({{3.0}, "a", {"u1", 1, 2}});
    RetrievalIndex rest = idx.without_example("u1");
    REQUIRE(rest.entries.size() == 1);
    CHECK(rest.entries[0].provenance.example_id == "u2");
    CHECK(rest.dim == 1);
    CHECK(rest.kind == idx.kind);
}

TEST_CASE("index files round trip byte-stably") {
    ScratchDir dir;
    RetrievalIndex idx = random_index(1000, 8, 6);
    idx.kind = IndexKind::Intent;
    const std::string p = dir.file("index.bin");
    save_index(idx, p);
    CHECK(load_index(p) == idx);

    const std::string q = dir.file("index2.bin");
    save_index(idx, q);
    CHECK(testutil::read_file(p) == testutil::read_file(q));
}

TEST_CASE("index loading rejects corrupt files") {
    ScratchDir dir;
    const std::string p = dir.file("index.bin");
    save_index(random_index(5, 3, 9), p);

    SECTION("bad magic") {
        std::string bytes = testutil::read_file(p);
        bytes[1] = '!';
        testutil::write_file(p, bytes);
        CHECK_THROWS_WITH(load_index(p), Catch::Matchers::ContainsSubstring("magic"));
    }
    SECTION("unsupported version") {
        std::string bytes = testutil::read_file(p);
        bytes[4] = 9;
        testutil::write_file(p, bytes);
        CHECK_THROWS_WITH(load_index(p), Catch::Matchers::ContainsSubstring("version"));
    }
    SECTION("truncation") {
        std::string bytes = testutil::read_file(p);
        testutil::write_file(p, bytes.substr(0, bytes.size() - 7));
        CHECK_THROWS_WITH(load_index(p), Catch::Matchers::ContainsSubstring("truncated"));
    }
    SECTION("non-finite vectors") {
        RetrievalIndex bad = random_index(2, 3, 9);
        bad.entries[1].vector[0] = std::numeric_limits<double>::infinity();
        save_index(bad, p);
        CHECK_THROWS_WITH(load_index(p), Catch::Matchers::ContainsSubstring("non-finite"));
    }
    SECTION("missing file") { CHECK_THROWS_AS(load_index(dir.file("no.bin")), DataError); }
}
