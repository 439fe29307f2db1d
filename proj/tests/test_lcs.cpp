#include "bunit/lcs.hpp"
#include "bunit/rng.hpp"

#include <doctest.h>

#include <vector>

using namespace bunit;

namespace {

// Memo-free naive recursion straight off the recurrence; the independent
// oracle for the DP table.
int lcs_naive(std::span<const int> x, std::span<const int> y, int i, int j) {
    if (i == 0 || j == 0) return 0;
    if (x[i - 1] == y[j - 1]) return 1 + lcs_naive(x, y, i - 1, j - 1);
    return std::max(lcs_naive(x, y, i - 1, j), lcs_naive(x, y, i, j - 1));
}

std::vector<int> random_tokens(Rng& rng, int max_len, int alphabet) {
    std::vector<int> out(rng.uniform(static_cast<uint64_t>(max_len) + 1));
    for (auto& t : out) t = static_cast<int>(rng.uniform(static_cast<uint64_t>(alphabet)));
    return out;
}

} // namespace

TEST_CASE("lcs boundary rows and columns are zero") {
    const std::vector<int> x;
    const std::vector<int> y = {1, 2, 3};
    CHECK(lcs_length(x, y).length() == 0);
    CHECK(lcs_length(y, x).length() == 0);
    CHECK(lcs_length(x, x).length() == 0);
}

TEST_CASE("worked containment example") {
    // D,C,H inside D,E,B,G,E,C,H,A: fully contained as a subsequence
    // token key: A=0 B=1 C=2 D=3 E=4 G=5 H=6
    const std::vector<int> unit = {3, 2, 6};
    const std::vector<int> seq = {3, 4, 1, 5, 4, 2, 6, 0};
    CHECK(lcs_length(unit, seq).length() == 3);
}

TEST_CASE("lcs matches the naive recursion on random pairs") {
    Rng rng(123);
    for (int trial = 0; trial < 200; ++trial) {
        const std::vector<int> x = random_tokens(rng, 12, 5);
        const std::vector<int> y = random_tokens(rng, 12, 5);
        const LcsTable table = lcs_length(x, y);
        CHECK(table.length() ==
              lcs_naive(x, y, static_cast<int>(x.size()), static_cast<int>(y.size())));
    }
}

TEST_CASE("lcs table invariants hold on random instances") {
    Rng rng(55);
    for (int trial = 0; trial < 50; ++trial) {
        const std::vector<int> x = random_tokens(rng, 10, 3);
        const std::vector<int> y = random_tokens(rng, 10, 3);
        const LcsTable t = lcs_length(x, y);
        for (int i = 0; i <= t.rows(); ++i) CHECK(t.at(i, 0) == 0);
        for (int j = 0; j <= t.cols(); ++j) CHECK(t.at(0, j) == 0);
        for (int i = 1; i <= t.rows(); ++i)
            for (int j = 1; j <= t.cols(); ++j) {
                CHECK(t.at(i, j) >= t.at(i - 1, j));
                CHECK(t.at(i, j) >= t.at(i, j - 1));
                CHECK(t.at(i, j) <= std::min(i, j));
            }
    }
}

TEST_CASE("match_unit finds the paper's witnesses") {
    // A=0 B=1 C=2 D=3 E=4 F=7 G=5 H=6
    const std::vector<int> seq = {3, 4, 1, 5, 4, 2, 6, 0};

    SUBCASE("unit D,F is absent") {
        const std::vector<int> unit = {3, 7};
        CHECK_FALSE(match_unit(unit, seq).has_value());
    }
    SUBCASE("unit B,G,A sits at positions 2,3,7") {
        const std::vector<int> unit = {1, 5, 0};
        const auto positions = match_unit(unit, seq);
        REQUIRE(positions.has_value());
        CHECK(*positions == std::vector<int>{2, 3, 7});
    }
    SUBCASE("unit equal to the sequence matches identically") {
        const auto positions = match_unit(seq, seq);
        REQUIRE(positions.has_value());
        for (size_t i = 0; i < seq.size(); ++i) CHECK((*positions)[i] == static_cast<int>(i));
    }
}

TEST_CASE("match_unit presence agrees with the LCS containment test") {
    Rng rng(321);
    for (int trial = 0; trial < 300; ++trial) {
        const std::vector<int> unit = random_tokens(rng, 6, 4);
        const std::vector<int> seq = random_tokens(rng, 14, 4);
        const bool via_lcs =
            lcs_length(unit, seq).length() == static_cast<int>(unit.size());
        CHECK(match_unit(unit, seq).has_value() == via_lcs);
    }
}

TEST_CASE("containment survives arbitrary injections") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> seq = random_tokens(rng, 12, 4);
        while (seq.size() < 3) seq = random_tokens(rng, 12, 4);
        // take a slice as the unit so a match is guaranteed
        const size_t start = rng.uniform(seq.size() - 2);
        const size_t len = 2 + rng.uniform(std::min<size_t>(4, seq.size() - start) - 1);
        const std::vector<int> unit(seq.begin() + start, seq.begin() + start + len);
        REQUIRE(match_unit(unit, seq).has_value());

        // inject noise tokens anywhere; the match must survive
        std::vector<int> noisy = seq;
        for (int k = 0; k < 10; ++k)
            noisy.insert(noisy.begin() + static_cast<std::ptrdiff_t>(rng.uniform(noisy.size() + 1)),
                         static_cast<int>(rng.uniform(9)));
        CHECK(match_unit(unit, noisy).has_value());
    }
}
