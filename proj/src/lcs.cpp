#include "bunit/lcs.hpp"

namespace bunit {

LcsTable lcs_length(std::span<const int> x, std::span<const int> y) {
    const int n = static_cast<int>(x.size());
    const int m = static_cast<int>(y.size());
    LcsTable table(n, m);
    for (int i = 1; i <= n; ++i) {
        for (int j = 1; j <= m; ++j) {
            if (x[i - 1] == y[j - 1])
                table.at(i, j) = 1 + table.at(i - 1, j - 1);
            else
                table.at(i, j) = std::max(table.at(i - 1, j), table.at(i, j - 1));
        }
    }
    return table;
}

std::optional<std::vector<int>> match_unit(std::span<const int> unit, std::span<const int> sequence) {
    std::vector<int> positions;
    positions.reserve(unit.size());
    size_t next = 0;
    for (int want : unit) {
        while (next < sequence.size() && sequence[next] != want) ++next;
        if (next == sequence.size()) return std::nullopt;
        positions.push_back(static_cast<int>(next));
        ++next;
    }
    return positions;
}

} // namespace bunit
