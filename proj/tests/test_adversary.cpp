#include "bunit/adversary.hpp"
#include "bunit/corpus.hpp"
#include "bunit/errors.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace bunit;

namespace {

Corpus benign_corpus(const std::vector<std::vector<int>>& traces, int vocab) {
    Corpus corpus;
    for (int i = 1; i < vocab; ++i) corpus.vocabulary.add("e" + std::to_string(i));
    int max_len = 1;
    for (size_t i = 0; i < traces.size(); ++i) {
        BehaviorSequence seq;
        seq.tokens = traces[i];
        seq.label = 0;
        seq.source_id = "b" + std::to_string(i);
        corpus.sequences.push_back(std::move(seq));
        max_len = std::max(max_len, static_cast<int>(traces[i].size()));
    }
    corpus.window_size = max_len;
    return corpus;
}

BehaviorSequence malicious(std::vector<int> tokens) {
    BehaviorSequence seq;
    seq.tokens = std::move(tokens);
    seq.label = 1;
    seq.source_id = "m";
    return seq;
}

} // namespace

TEST_CASE("generator learns dominant transitions with add-one smoothing") {
    std::vector<std::vector<int>> traces;
    for (int i = 0; i < 20; ++i) traces.push_back({1, 2, 3, 1, 2, 3, 1, 2, 3});
    const Corpus corpus = benign_corpus(traces, 6);
    const FragmentGenerator gen = FragmentGenerator::train(corpus);

    // P(3 | 1,2) dominates every alternative successor of (1,2)
    const std::vector<double> after_12 = gen.next_distribution(1, 2);
    const auto& vocab = gen.benign_vocabulary();
    size_t idx3 = std::find(vocab.begin(), vocab.end(), 3) - vocab.begin();
    for (size_t i = 0; i < after_12.size(); ++i)
        if (i != idx3) CHECK(after_12[idx3] > after_12[i]);

    // unseen context smooths to uniform over the benign vocabulary
    const std::vector<double> unseen = gen.next_distribution(3, 3);
    for (double p : unseen) CHECK(p == doctest::Approx(1.0 / double(vocab.size())));
}

TEST_CASE("sampled fragments stay inside the benign vocabulary") {
    std::vector<std::vector<int>> traces;
    for (int i = 0; i < 10; ++i) traces.push_back({2, 4, 6, 2, 4, 6, 8});
    const Corpus corpus = benign_corpus(traces, 12);
    const FragmentGenerator gen = FragmentGenerator::train(corpus);

    const std::set<int> benign(gen.benign_vocabulary().begin(), gen.benign_vocabulary().end());
    CHECK(benign == std::set<int>{2, 4, 6, 8});
    Rng rng(3);
    int sampled = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto frag = gen.sample_fragment(gen.sample_length(rng), rng);
        for (int t : frag) {
            CHECK(benign.count(t) == 1);
            ++sampled;
        }
    }
    CHECK(sampled >= 2000);
}

TEST_CASE("generator training needs benign data") {
    Corpus corpus;
    corpus.vocabulary.add("x");
    corpus.window_size = 4;
    corpus.sequences.push_back(malicious({1, 1, 1}));
    CHECK_THROWS_AS(FragmentGenerator::train(corpus), ValidationError);
}

TEST_CASE("perturb honors the budget exactly with unit fragments") {
    std::vector<std::vector<int>> traces = {{1, 2, 3, 4, 1, 2, 3, 4}};
    const Corpus corpus = benign_corpus(traces, 8);
    FragmentGenerator gen = FragmentGenerator::train(corpus);
    gen.min_fragment_len = 1;
    gen.max_fragment_len = 1;

    std::vector<int> tokens(100);
    for (size_t i = 0; i < tokens.size(); ++i) tokens[i] = 5 + static_cast<int>(i % 2);
    const BehaviorSequence x = malicious(tokens);

    AttackConfig cfg;
    cfg.windows = 1;
    cfg.max_rate = 0.2;
    Rng rng(17);
    const PerturbResult res = perturb(x, gen, cfg, rng);

    // exactly 20 insertions at rate 0.2 over 100 original tokens
    CHECK(res.sequence.tokens.size() == 120);
    int injected = 0;
    for (char c : res.injected) injected += c ? 1 : 0;
    CHECK(injected == 20);
    CHECK(res.sequence.perturbed);
    CHECK(res.sequence.label == 1);

    // deleting all injected positions reproduces the original, in order
    std::vector<int> recovered;
    for (size_t i = 0; i < res.sequence.tokens.size(); ++i)
        if (!res.injected[i]) recovered.push_back(res.sequence.tokens[i]);
    CHECK(recovered == tokens);
}

TEST_CASE("perturb edge cases") {
    std::vector<std::vector<int>> traces = {{1, 2, 3, 4, 5, 6}};
    const Corpus corpus = benign_corpus(traces, 8);
    const FragmentGenerator gen = FragmentGenerator::train(corpus);

    AttackConfig cfg;
    cfg.windows = 4;
    Rng rng(1);

    SUBCASE("zero rate returns the input untouched") {
        cfg.max_rate = 0.0;
        const BehaviorSequence x = malicious({1, 2, 3, 4, 5, 6, 7, 1});
        const PerturbResult res = perturb(x, gen, cfg, rng);
        CHECK(res.sequence.tokens == x.tokens);
        CHECK_FALSE(res.sequence.perturbed);
    }
    SUBCASE("sequence shorter than the window count is rejected") {
        cfg.max_rate = 0.2;
        CHECK_THROWS_AS(perturb(malicious({1, 2, 3}), gen, cfg, rng), ValidationError);
    }
    SUBCASE("benign input is rejected") {
        BehaviorSequence b = malicious({1, 2, 3, 4, 5});
        b.label = 0;
        CHECK_THROWS_AS(perturb(b, gen, cfg, rng), ValidationError);
    }
}

TEST_CASE("per-window injection respects the rate bound") {
    std::vector<std::vector<int>> traces = {{1, 2, 3, 4, 1, 2, 3, 4, 5, 6}};
    const Corpus corpus = benign_corpus(traces, 8);
    const FragmentGenerator gen = FragmentGenerator::train(corpus);

    Rng rng(23);
    for (double rate : {0.1, 0.25, 0.4}) {
        for (int windows : {1, 3, 5}) {
            std::vector<int> tokens(60 + static_cast<int>(rng.uniform(40)));
            for (auto& t : tokens) t = 1 + static_cast<int>(rng.uniform(6));
            AttackConfig cfg;
            cfg.windows = windows;
            cfg.max_rate = rate;
            const PerturbResult res = perturb(malicious(tokens), gen, cfg, rng);

            int injected = 0;
            for (char c : res.injected) injected += c ? 1 : 0;
            const double realized = double(injected) / double(tokens.size());
            CHECK(realized <= rate + 1e-12);
            // with a single window the shortfall is below one max fragment
            if (windows == 1)
                CHECK(realized >= rate - double(gen.max_fragment_len) / double(tokens.size()) - 1e-12);
            // insertion-only: originals survive as a subsequence, in order
            std::vector<int> recovered;
            for (size_t i = 0; i < res.sequence.tokens.size(); ++i)
                if (!res.injected[i]) recovered.push_back(res.sequence.tokens[i]);
            CHECK(recovered == tokens);
        }
    }
}

TEST_CASE("attack_corpus produces one corpus per rate, deterministically") {
    SyntheticConfig sc;
    sc.vocab_size = 14;
    sc.benign_traces = 10;
    sc.malicious_traces = 10;
    sc.trace_length = 30;
    sc.motifs = {{2, 5, 8}};
    const Corpus corpus = generate_synthetic(sc, 3);
    const FragmentGenerator gen = FragmentGenerator::train(corpus);

    SUBCASE("rate zero passes everything through byte-identically") {
        const auto attacked = attack_corpus(corpus, gen, {0.0}, 4, 9);
        REQUIRE(attacked.size() == 1);
        const Corpus& out = attacked.at(0.0);
        REQUIRE(out.sequences.size() == corpus.sequences.size());
        for (size_t i = 0; i < out.sequences.size(); ++i) {
            CHECK(out.sequences[i].tokens == corpus.sequences[i].tokens);
            CHECK(out.sequences[i].perturbed == corpus.sequences[i].perturbed);
        }
        CHECK(out.window_size == corpus.window_size);
    }
    SUBCASE("nine grid rates give nine corpora; benign rows untouched") {
        const std::vector<double> rates = {0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40};
        const auto attacked = attack_corpus(corpus, gen, rates, 4, 9);
        CHECK(attacked.size() == 9);
        for (const auto& [rate, c] : attacked) {
            REQUIRE(c.sequences.size() == corpus.sequences.size());
            for (size_t i = 0; i < c.sequences.size(); ++i) {
                if (corpus.sequences[i].label == 0) {
                    CHECK(c.sequences[i].tokens == corpus.sequences[i].tokens);
                } else if (rate > 0.0) {
                    CHECK(c.sequences[i].perturbed);
                    CHECK(c.sequences[i].tokens.size() >= corpus.sequences[i].tokens.size());
                }
            }
        }
        // determinism per (seed, rate)
        const auto again = attack_corpus(corpus, gen, rates, 4, 9);
        for (const auto& [rate, c] : attacked) {
            const Corpus& c2 = again.at(rate);
            for (size_t i = 0; i < c.sequences.size(); ++i)
                CHECK(c.sequences[i].tokens == c2.sequences[i].tokens);
        }
        const auto other_seed = attack_corpus(corpus, gen, {0.4}, 4, 10);
        bool same = true;
        for (size_t i = 0; i < corpus.sequences.size(); ++i)
            if (other_seed.at(0.4).sequences[i].tokens != attacked.at(0.4).sequences[i].tokens)
                same = false;
        CHECK_FALSE(same);
    }
    SUBCASE("rates outside [0,1] rejected") {
        CHECK_THROWS_AS(attack_corpus(corpus, gen, {0.0, 1.5}, 4, 9), ValidationError);
    }
}
