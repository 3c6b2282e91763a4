#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "spanret/decoder.hpp"
#include "testutil.hpp"

using namespace spanret;
using testutil::utt;

namespace {

Candidate cand(std::size_t start, std::size_t end, const std::string& label, double score,
               std::size_t entry = 0) {
    return {start, end, label, score, entry};
}

double avg_score(const std::vector<Candidate>& spans) {
    if (spans.empty()) return -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (const auto& c : spans) sum += c.score;
    return sum / static_cast<double>(spans.size());
}

std::vector<Candidate> random_candidates(Rng& rng, std::size_t max_count) {
    const std::size_t count = 1 + rng.below(max_count);
    std::vector<Candidate> out;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t start = rng.below(8);
        const std::size_t len = 1 + rng.below(3);
        out.push_back(cand(start, start + len, rng.below(2) ? "a" : "b", rng.unit(), i));
    }
    return out;
}

}  // namespace

TEST_CASE("span enumeration is exhaustive and ordered") {
    using P = std::pair<std::size_t, std::size_t>;
    CHECK(enumerate_spans(3, 2) ==
          std::vector<P>{{0, 1}, {0, 2}, {1, 2}, {1, 3}, {2, 3}});
    CHECK(enumerate_spans(1, 5) == std::vector<P>{{0, 1}});
    CHECK(enumerate_spans(4, 4).size() == 10);
    CHECK(enumerate_spans(4, 9).size() == 10);  // m >= n caps at n(n+1)/2
    CHECK_THROWS_AS(enumerate_spans(0, 2), DataError);
    CHECK_THROWS_AS(enumerate_spans(3, 0), DataError);
}

TEST_CASE("dynamic threshold filter relaxes until something survives") {
    SECTION("kept at the base threshold") {
        auto [kept, thr] = filter_dynamic({cand(0, 1, "x", 0.9), cand(1, 2, "x", 0.3)},
                                          0.8, 0.05, 10);
        REQUIRE(kept.size() == 1);
        CHECK(kept[0].score == 0.9);
        CHECK(thr == 0.8);
    }
    SECTION("exactly at the threshold counts as kept") {
        auto [kept, thr] = filter_dynamic({cand(0, 1, "x", 0.8)}, 0.8, 0.05, 10);
        CHECK(kept.size() == 1);
        CHECK(thr == 0.8);
    }
    SECTION("ten decrements reach scores of 0.41") {
        std::vector<Candidate> cands{cand(0, 1, "x", 0.41), cand(1, 2, "y", 0.41)};
        auto [kept, thr] = filter_dynamic(cands, 0.9, 0.05, 10);
        CHECK(kept.size() == 2);
        CHECK(thr == Catch::Approx(0.40).margin(1e-12));
    }
    SECTION("exhaustion returns empty at the final threshold") {
        auto [kept, thr] = filter_dynamic({cand(0, 1, "x", 0.0)}, 0.9, 0.05, 10);
        CHECK(kept.empty());
        CHECK(thr == Catch::Approx(0.40).margin(1e-12));
    }
    SECTION("empty input exhausts") {
        auto [kept, thr] = filter_dynamic({}, 0.5, 0.1, 2);
        CHECK(kept.empty());
        CHECK(thr == Catch::Approx(0.3).margin(1e-12));
    }
    SECTION("threshold must be a valid score") {
        CHECK_THROWS_AS(filter_dynamic({}, 1.5, 0.05, 10), DataError);
        CHECK_THROWS_AS(filter_dynamic({}, -0.1, 0.05, 10), DataError);
    }
}

TEST_CASE("beam and oracle prefer the higher-average grouping") {
    // {A} (avg 0.9) beats {B, C} (avg 0.875) despite B's higher score
    const std::vector<Candidate> abc{cand(0, 3, "x", 0.9), cand(0, 1, "x", 0.95),
                                     cand(2, 3, "x", 0.8)};
    const std::vector<Candidate> just_a{cand(0, 3, "x", 0.9)};

    CHECK(brute_force_decode(abc) == just_a);
    CHECK(beam_decode(abc, 2) == just_a);
    CHECK(beam_decode(abc, 10) == just_a);

    // width 1 commits to B early and completes it with C
    auto narrow = beam_decode(abc, 1);
    REQUIRE(narrow.size() == 2);
    CHECK(narrow[0] == abc[1]);
    CHECK(narrow[1] == abc[2]);
    CHECK(avg_score(narrow) <= avg_score(beam_decode(abc, 2)));
}

TEST_CASE("degenerate beam inputs") {
    CHECK(beam_decode({}, 4).empty());
    CHECK(brute_force_decode({}).empty());

    const std::vector<Candidate> one{cand(2, 4, "x", 0.3)};
    CHECK(beam_decode(one, 1) == one);
    CHECK(brute_force_decode(one) == one);

    // maximality forces both non-overlapping candidates in
    const std::vector<Candidate> two{cand(0, 1, "x", 0.9), cand(3, 4, "y", 0.1)};
    CHECK(beam_decode(two, 1) == two);
    CHECK(brute_force_decode(two) == two);

    // mutually overlapping: single best survives
    const std::vector<Candidate> clash{cand(0, 3, "x", 0.5), cand(1, 4, "y", 0.7),
                                       cand(2, 5, "z", 0.6)};
    CHECK(brute_force_decode(clash) == std::vector<Candidate>{clash[1]});
    CHECK(beam_decode(clash, 8) == std::vector<Candidate>{clash[1]});

    CHECK_THROWS_AS(beam_decode(one, 0), DataError);
    CHECK_THROWS_AS(brute_force_decode(std::vector<Candidate>(21, one[0])), DataError);
}

TEST_CASE("unpruned beam equals the exhaustive oracle") {
    Rng rng(31);
    for (int t = 0; t < 200; ++t) {
        const auto kept = random_candidates(rng, 10);
        const auto beam = beam_decode(kept, 4096);
        const auto oracle = brute_force_decode(kept);
        REQUIRE(beam == oracle);
    }
}

TEST_CASE("wider beams never decode a lower average") {
    const std::size_t widths[] = {1, 2, 3, 4, 6, 8, 16, 32};
    Rng rng(47);
    for (int t = 0; t < 300; ++t) {
        const auto kept = random_candidates(rng, 10);
        double prev = -std::numeric_limits<double>::infinity();
        for (std::size_t w : widths) {
            const double cur = avg_score(beam_decode(kept, w));
            REQUIRE(cur >= prev - 1e-12);
            prev = cur;
        }
    }
}

TEST_CASE("beam output is a sorted maximal non-overlapping subset") {
    Rng rng(53);
    for (int t = 0; t < 200; ++t) {
        const auto kept = random_candidates(rng, 10);
        const auto out = beam_decode(kept, 1 + rng.below(8));
        REQUIRE(!out.empty());
        for (std::size_t i = 1; i < out.size(); ++i) {
            CHECK(out[i - 1].start < out[i].start);
            CHECK(out[i - 1].end <= out[i].start);
        }
        for (const auto& c : kept) {
            bool blocked = false;
            for (const auto& s : out)
                if (detail::candidates_overlap(s, c)) blocked = true;
            CHECK(blocked);  // members block themselves, so maximal
        }
    }
}

TEST_CASE("adjacent same-label spans merge within the score window") {
    SECTION("close scores collapse and keep the max") {
        auto out = merge_spans({cand(0, 2, "loc", 0.90, 7), cand(2, 4, "loc", 0.895, 9)}, 0.01);
        REQUIRE(out.size() == 1);
        CHECK(out[0] == cand(0, 4, "loc", 0.90, 7));
    }
    SECTION("the window is strict") {
        auto out = merge_spans({cand(0, 2, "loc", 0.90), cand(2, 4, "loc", 0.895)}, 0.005);
        CHECK(out.size() == 2);
    }
    SECTION("zero never merges, even equal scores") {
        const std::vector<Candidate> in{cand(0, 1, "x", 0.5), cand(1, 2, "x", 0.5)};
        CHECK(merge_spans(in, 0.0) == in);
    }
    SECTION("one always merges adjacent same-label spans") {
        auto out = merge_spans({cand(0, 1, "l", 0.0), cand(1, 2, "l", 1.0),
                                cand(2, 3, "l", 0.5), cand(3, 4, "m", 0.5)},
                               1.0);
        REQUIRE(out.size() == 2);
        CHECK(out[0] == cand(0, 3, "l", 1.0, 0));
        CHECK(out[1] == cand(3, 4, "m", 0.5));
    }
    SECTION("labels and adjacency gate the merge") {
        const std::vector<Candidate> in{cand(0, 1, "x", 0.5), cand(1, 2, "y", 0.5),
                                        cand(3, 4, "y", 0.5)};
        CHECK(merge_spans(in, 1.0) == in);
    }
    SECTION("merges cascade across passes") {
        // pass 1 merges only the right pair; the merged score then
        // falls inside the left pair's window
        auto out = merge_spans({cand(0, 1, "x", 0.9), cand(1, 2, "x", 0.55),
                                cand(2, 3, "x", 0.7)},
                               0.25);
        REQUIRE(out.size() == 1);
        CHECK(out[0] == cand(0, 3, "x", 0.9, 0));
    }
    SECTION("unsorted input is handled") {
        auto out = merge_spans({cand(2, 4, "loc", 0.895), cand(0, 2, "loc", 0.90)}, 0.01);
        REQUIRE(out.size() == 1);
        CHECK(out[0].start == 0);
        CHECK(out[0].end == 4);
    }
    SECTION("threshold is validated") {
        CHECK_THROWS_AS(merge_spans({}, -0.1), DataError);
        CHECK_THROWS_AS(merge_spans({}, 1.1), DataError);
    }
}

TEST_CASE("merging is idempotent") {
    Rng rng(61);
    for (int t = 0; t < 200; ++t) {
        const auto decoded = beam_decode(random_candidates(rng, 10), 16);
        const double lambda = rng.unit();
        const auto once = merge_spans(decoded, lambda);
        CHECK(merge_spans(once, lambda) == once);
        if (lambda == 1.0) continue;
        for (std::size_t i = 1; i < once.size(); ++i)
            if (once[i - 1].label == once[i].label && once[i - 1].end == once[i].start)
                CHECK(std::fabs(once[i - 1].score - once[i].score) >= lambda);
    }
}

TEST_CASE("merging at one leaves no adjacent same-label pair") {
    Rng rng(67);
    for (int t = 0; t < 100; ++t) {
        const auto out = merge_spans(beam_decode(random_candidates(rng, 10), 16), 1.0);
        for (std::size_t i = 1; i < out.size(); ++i)
            CHECK(!(out[i - 1].label == out[i].label && out[i - 1].end == out[i].start));
    }
}

namespace {

// Six tokens whose hash buckets are pairwise distinct at V=64.
std::vector<std::string> six_distinct_tokens() {
    std::vector<std::string> out;
    std::set<std::size_t> used;
    for (int i = 0; out.size() < 6; ++i) {
        std::string t = "hx" + std::to_string(i);
        if (used.insert(token_id(t, 64)).second) out.push_back(t);
    }
    return out;
}

}  // namespace

TEST_CASE("full decode matches the hand-computed pipeline") {
    // Rows and padding solve the mixer so every contextual vector is a
    // (+-1,+-1) corner; norms are then exactly 2 and every cosine is an
    // integer divided by 4, so all scores are exact:
    //   rows  e0=(5,5) e1=(-3,-3) e2=(5,-3) e3=(-3,5) e4=(5,-3) e5=(-3,5)
    //   pad   (-3,-3)
    //   ctx   c0=(1,1) c1=(1,-1) c2=(1,-1) c3=(1,1) c4=(1,1) c5=(-1,1)
    const auto toks = six_distinct_tokens();
    Encoder enc;
    enc.kind = EncoderKind::Mixer;
    enc.params.vocab_buckets = 64;
    enc.params.dim = 2;
    enc.params.table.assign(64 * 2, 0.0);
    enc.params.padding.assign(2, -3.0);
    const double rows[6][2] = {{5, 5}, {-3, -3}, {5, -3}, {-3, 5}, {5, -3}, {-3, 5}};
    for (int i = 0; i < 6; ++i) {
        double* r = enc.params.row(token_id(toks[i], 64));
        r[0] = rows[i][0];
        r[1] = rows[i][1];
    }
    Utterance u{"probe", toks};
    const auto ctx = enc.contextual(u);
    REQUIRE(ctx[0] == Vec{1.0, 1.0});
    REQUIRE(ctx[1] == Vec{1.0, -1.0});
    REQUIRE(ctx[2] == Vec{1.0, -1.0});
    REQUIRE(ctx[3] == Vec{1.0, 1.0});
    REQUIRE(ctx[4] == Vec{1.0, 1.0});
    REQUIRE(ctx[5] == Vec{-1.0, 1.0});

    RetrievalIndex index;
    index.kind = IndexKind::Slot;
    index.add({{1.0, 1.0, 1.0, 1.0}, "A", {"sA", 0, 1}});
    index.add({{1.0, -1.0, 1.0, -1.0}, "B", {"sB", 0, 1}});
    index.add({{-1.0, 1.0, -1.0, 1.0}, "C", {"sC", 0, 1}});
    index.add({{-1.0, -1.0, -1.0, -1.0}, "D", {"sD", 0, 1}});

    SECTION("candidate scores match the cosine arithmetic") {
        auto cands = retrieve_candidates(u, index, enc, 2);
        REQUIRE(cands.size() == 11);  // 6 + 5 spans of length 1..2
        for (const auto& c : cands) {
            CHECK(c.score >= 0.0);
            CHECK(c.score <= 1.0);
        }
        // z(0,1)=(1,1,1,1) is entry A exactly: cos 1 -> score 1
        CHECK(cands[0] == cand(0, 1, "A", 1.0, 0));
        // z(0,2)=(1,1,1,-1): cos 0.5 against both A and B -> score
        // 0.75, tie resolved to the lower entry position
        CHECK(cands[1] == cand(0, 2, "A", 0.75, 0));
        // z(5,6)=(-1,1,-1,1) is entry C exactly
        CHECK(cands.back() == cand(5, 6, "C", 1.0, 2));
    }

    SECTION("pipeline output on the traced config") {
        DecodeConfig cfg;
        cfg.max_span_len = 2;
        cfg.base_threshold = 0.97;
        cfg.dyn_decrement = 0.05;
        cfg.dyn_steps = 10;
        cfg.beam_size = 10;
        cfg.merge_threshold = 0.99;
        DecodeResult res = decode(u, index, enc, cfg);

        // kept at 0.97: the eight exact-match spans (six length-1 plus
        // (1,3) and (3,5)), all score 1.0; the densest packing wins the
        // average tie; merging folds (1,2)+(2,3) and (3,4)+(4,5)
        CHECK(res.effective_threshold == 0.97);
        REQUIRE(res.spans.size() == 4);
        CHECK(res.spans[0] == cand(0, 1, "A", 1.0, 0));
        CHECK(res.spans[1] == cand(1, 3, "B", 1.0, 1));
        CHECK(res.spans[2] == cand(3, 5, "A", 1.0, 0));
        CHECK(res.spans[3] == cand(5, 6, "C", 1.0, 2));
        CHECK(to_labeled_spans(res.spans) ==
              std::vector<LabeledSpan>{{0, 1, "A"}, {1, 3, "B"}, {3, 5, "A"}, {5, 6, "C"}});
    }

    SECTION("exhausted filter gives an empty prediction") {
        RetrievalIndex anti;
        anti.kind = IndexKind::Slot;
        anti.add({{-1.0, -1.0, -1.0, -1.0}, "D", {"sD", 0, 1}});
        DecodeConfig cfg;
        cfg.max_span_len = 2;
        cfg.base_threshold = 0.9;
        cfg.dyn_decrement = 0.001;
        cfg.dyn_steps = 3;
        DecodeResult res = decode(u, anti, enc, cfg);
        CHECK(res.spans.empty());
        CHECK(res.effective_threshold == Catch::Approx(0.897).margin(1e-12));
    }

    SECTION("config and index validation") {
        DecodeConfig bad;
        bad.beam_size = 0;
        CHECK_THROWS_AS(decode(u, index, enc, bad), DataError);
        bad = DecodeConfig{};
        bad.merge_threshold = 1.5;
        CHECK_THROWS_AS(decode(u, index, enc, bad), DataError);
        bad = DecodeConfig{};
        bad.dyn_decrement = 0.0;
        CHECK_THROWS_AS(decode(u, index, enc, bad), DataError);

        RetrievalIndex intent_idx;
        intent_idx.kind = IndexKind::Intent;
        intent_idx.add({{1.0, 0.0}, "go", {"i", 0, 2}});
        CHECK_THROWS_AS(decode(u, intent_idx, enc, DecodeConfig{}), DataError);
        RetrievalIndex empty;
        CHECK_THROWS_AS(decode(u, empty, enc, DecodeConfig{}), DataError);
    }
}

TEST_CASE("intent prediction retrieves the nearest utterance") {
    const Encoder enc = Encoder::frozen(128, 8);
    Dataset support;
    support.task = Task::Intent;
    support.examples = {make_intent_example(utt("s1", "turn on the light"), "switch_on"),
                        make_intent_example(utt("s2", "play some jazz"), "play_music")};
    auto index = build_index({&support}, {}, enc, {}, IndexKind::Intent);

    IntentPrediction p = predict_intent(utt("q1", "play some jazz"), index, enc);
    CHECK(p.id == "q1");
    CHECK(p.label == "play_music");
    CHECK(p.score == Catch::Approx(1.0).epsilon(1e-12));

    RetrievalIndex slot_idx;
    slot_idx.kind = IndexKind::Slot;
    slot_idx.add({{1.0}, "x", {"s", 0, 1}});
    CHECK_THROWS_AS(predict_intent(utt("q2", "a b"), slot_idx, enc), DataError);
}
