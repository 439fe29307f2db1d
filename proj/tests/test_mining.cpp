#include "bunit/mining.hpp"
#include "bunit/corpus.hpp"
#include "bunit/errors.hpp"
#include "bunit/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace bunit;

namespace {

BehaviorSequence seq_of(std::vector<int> tokens, int label = 1) {
    BehaviorSequence s;
    s.tokens = std::move(tokens);
    s.label = label;
    s.source_id = "s";
    return s;
}

// Independent slicing oracle: enumerate contiguous slices by brute force.
std::set<std::vector<int>> slice_oracle(const std::vector<int>& tokens, int min_len, int max_len) {
    std::set<std::vector<int>> out;
    for (int l = min_len; l <= max_len; ++l)
        for (size_t s = 0; s + static_cast<size_t>(l) <= tokens.size(); ++s)
            out.insert(std::vector<int>(tokens.begin() + s, tokens.begin() + s + l));
    return out;
}

} // namespace

TEST_CASE("candidate counts follow the window identity") {
    SUBCASE("m=5, lengths 3..4 -> 5 candidates") {
        const auto cands = generate_candidates(seq_of({1, 2, 3, 4, 5}), 0, 3, 4);
        CHECK(cands.size() == 5);
    }
    SUBCASE("m=3, lengths 3..3 -> the sequence itself") {
        const auto cands = generate_candidates(seq_of({7, 8, 9}), 0, 3, 3);
        REQUIRE(cands.size() == 1);
        CHECK(cands[0].tokens == std::vector<int>{7, 8, 9});
    }
    SUBCASE("m=8, lengths 3..5 -> 15 candidates matching the slicing oracle") {
        const std::vector<int> tokens = {1, 2, 3, 1, 2, 4, 5, 1};
        const auto cands = generate_candidates(seq_of(tokens), 0, 3, 5);
        CHECK(cands.size() == 15);
        std::set<std::vector<int>> got;
        for (const auto& c : cands) {
            got.insert(c.tokens);
            // contiguity: the slice at (start, len) reproduces the tokens
            const std::vector<int> slice(tokens.begin() + c.start, tokens.begin() + c.end());
            CHECK(slice == c.tokens);
        }
        CHECK(got == slice_oracle(tokens, 3, 5));
    }
    SUBCASE("identity over random sequences") {
        Rng rng(3);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<int> tokens(6 + rng.uniform(10));
            for (auto& t : tokens) t = static_cast<int>(rng.uniform(5));
            const int m = static_cast<int>(tokens.size());
            const int min_len = 3;
            const int max_len = 3 + static_cast<int>(rng.uniform(4));
            size_t expect = 0;
            for (int l = min_len; l <= std::min(max_len, m); ++l)
                expect += static_cast<size_t>(m - l + 1);
            CHECK(generate_candidates(seq_of(tokens), 0, min_len, max_len).size() == expect);
        }
    }
}

TEST_CASE("candidate validation and clamping") {
    CHECK_THROWS_AS(generate_candidates(seq_of({1, 2, 3, 4}), 0, 2, 4), ValidationError);
    size_t warnings = 0;
    const auto cands = generate_candidates(seq_of({1, 2, 3, 4}), 0, 3, 9, &warnings);
    CHECK(warnings == 1);
    CHECK(cands.size() == 3); // lengths 3 and 4 after clamping
}

TEST_CASE("self-similarity covers overlap and substring containment") {
    Candidate a, b;
    a.tokens = {1, 2, 3};
    a.sequence_index = 0;
    a.start = 0;
    b.tokens = {9, 8, 7};
    b.sequence_index = 0;
    b.start = 2;
    CHECK(self_similar(a, b)); // overlapping ranges in one sequence

    b.start = 3;
    CHECK_FALSE(self_similar(a, b)); // adjacent but disjoint, different strings

    b.sequence_index = 1;
    b.start = 0;
    b.tokens = {1, 2, 3, 4};
    CHECK(self_similar(a, b)); // cross-sequence substring containment

    b.tokens = {2, 1, 3};
    CHECK_FALSE(self_similar(a, b));
}

TEST_CASE("mine_units dedupes, filters and honors k") {
    // one-hot distances; zero-weight model means xi = label, so benign
    // candidates (|xi| = 0) outrank malicious ones (|xi| = 1)
    const int vocab = 12;
    EmbeddingTable table = one_hot_table(vocab);
    ShapeletModel model;
    model.shapelets.push_back(Matrix(3, vocab));
    model.weights = {0.0};
    model.bias = 0.0;
    model.softmin_gamma = 50.0;

    Corpus corpus;
    for (int i = 1; i < vocab; ++i) corpus.vocabulary.add("e" + std::to_string(i));
    corpus.window_size = 10;
    corpus.sequences.push_back(seq_of({1, 2, 3, 1, 2, 3}, 0)); // byte-identical slices
    corpus.sequences.push_back(seq_of({4, 5, 6, 7, 8, 9}, 0));
    corpus.sequences.push_back(seq_of({1, 2, 3, 4, 5, 6}, 1));

    MiningConfig cfg;
    cfg.min_len = 3;
    cfg.max_len = 3;
    cfg.k = 4;
    const auto units = mine_units(corpus, model, table, cfg);

    CHECK(units.size() <= 4);
    // sorted by quality, nondecreasing
    for (size_t i = 1; i < units.size(); ++i) CHECK(units[i - 1].quality <= units[i].quality);
    // no duplicates survive the merge
    std::set<std::vector<int>> distinct;
    for (const auto& u : units) CHECK(distinct.insert(u.tokens).second);
    // zero-model: every retained unit comes from a benign sequence (xi = 0)
    for (const auto& u : units) CHECK(u.quality == doctest::Approx(0.0));

    CHECK_THROWS_AS(mine_units(corpus, model, table, MiningConfig{3, 3, 0}), ValidationError);
}

TEST_CASE("a contained sub-slice loses to the better superstring") {
    const int vocab = 8;
    EmbeddingTable table = one_hot_table(vocab);
    ShapeletModel model;
    model.shapelets.push_back(Matrix(3, vocab));
    model.weights = {0.0};
    model.bias = 0.0;
    model.softmin_gamma = 50.0;

    Corpus corpus;
    for (int i = 1; i < vocab; ++i) corpus.vocabulary.add("e" + std::to_string(i));
    corpus.window_size = 8;
    // benign: every candidate scores |xi| = 0; within the sequence, lengths
    // 3 and 4 overlap, so the greedy filter keeps non-overlapping best ones
    corpus.sequences.push_back(seq_of({1, 2, 3, 4}, 0));

    MiningConfig cfg;
    cfg.min_len = 3;
    cfg.max_len = 4;
    cfg.k = 10;
    const auto units = mine_units(corpus, model, table, cfg);
    // all candidates overlap in the single origin sequence: one survivor
    REQUIRE(units.size() == 1);
    // ties broken by token string: {1,2,3} < {1,2,3,4} < {2,3,4}
    CHECK(units[0].tokens == std::vector<int>{1, 2, 3});
}

TEST_CASE("planted motif is recovered against an exhaustive scoring oracle") {
    SyntheticConfig sc;
    sc.vocab_size = 16;
    sc.benign_traces = 25;
    sc.malicious_traces = 25;
    sc.trace_length = 24;
    sc.motifs = {{3, 7, 9}};
    const Corpus corpus = generate_synthetic(sc, 23);

    SkipGramConfig eg;
    eg.dim = 8;
    eg.epochs = 3;
    const EmbeddingTable table = train_behavior2vec(corpus, eg, 5);

    ShapeletTrainConfig tc;
    tc.shapelet_count = 4;
    tc.shapelet_len = 3;
    tc.gamma = 20.0;
    tc.max_epochs = 200;
    tc.seed = 11;
    const ShapeletModel model = train_shapelet_model(corpus, table, tc);

    MiningConfig mc;
    mc.min_len = 3;
    mc.max_len = 5;
    mc.k = 10;
    const auto units = mine_units(corpus, model, table, mc);
    REQUIRE(!units.empty());

    // exhaustive oracle: rescore every candidate of every sequence through
    // the public scoring API and replay the selection semantics
    struct Scored {
        std::vector<int> tokens;
        int seq;
        int start;
        double q;
    };
    std::vector<Scored> all;
    for (size_t i = 0; i < corpus.sequences.size(); ++i) {
        const auto& s = corpus.sequences[i];
        for (int l = 3; l <= 5; ++l)
            for (size_t st = 0; st + static_cast<size_t>(l) <= s.tokens.size(); ++st) {
                Scored sc2;
                sc2.tokens.assign(s.tokens.begin() + st, s.tokens.begin() + st + l);
                sc2.seq = static_cast<int>(i);
                sc2.start = static_cast<int>(st);
                sc2.q = std::abs(assess_candidate(sc2.tokens, s.label, model, table));
                all.push_back(std::move(sc2));
            }
    }
    // the best mined quality must equal the best achievable quality
    double best_oracle = 1e300;
    for (const auto& s : all) best_oracle = std::min(best_oracle, s.q);
    CHECK(units.front().quality == doctest::Approx(best_oracle).epsilon(1e-12));

    // every mined unit's quality must be reproduced by direct rescoring of
    // its token string somewhere in the corpus
    for (const auto& u : units) {
        bool found = false;
        for (const auto& s : all)
            if (s.tokens == u.tokens && std::abs(s.q - u.quality) < 1e-12) found = true;
        CHECK(found);
    }
}
