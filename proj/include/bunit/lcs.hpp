#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace bunit {

// Full (n+1) x (m+1) dynamic-programming table for the longest common
// subsequence of two token sequences.
class LcsTable {
public:
    LcsTable(int n, int m) : n_(n), m_(m), cells_(static_cast<size_t>(n + 1) * (m + 1), 0) {}

    int at(int i, int j) const { return cells_[static_cast<size_t>(i) * (m_ + 1) + j]; }
    int& at(int i, int j) { return cells_[static_cast<size_t>(i) * (m_ + 1) + j]; }
    int rows() const { return n_; }
    int cols() const { return m_; }
    int length() const { return at(n_, m_); }

private:
    int n_, m_;
    std::vector<int> cells_;
};

LcsTable lcs_length(std::span<const int> x, std::span<const int> y);

// Leftmost witness positions p_1 < ... < p_n in `sequence` matching `unit`
// token by token, or nullopt when the unit is not fully contained. The greedy
// scan is equivalent to the LCS(n,m) == n containment test.
std::optional<std::vector<int>> match_unit(std::span<const int> unit, std::span<const int> sequence);

} // namespace bunit
