#pragma once

#include "bunit/types.hpp"

#include <string>
#include <vector>

namespace bunit {

// A mined critical behavior unit: a short token pattern plus its quality
// score (|xi| residual, lower is better).
struct BehaviorUnitPattern {
    std::vector<int> tokens;
    double quality = 0.0;
};

// units.json persistence; token ids are stored as event names so the file is
// readable on its own.
void save_units(const std::string& path, const std::vector<BehaviorUnitPattern>& units,
                const Vocabulary& vocabulary);
std::vector<BehaviorUnitPattern> load_units(const std::string& path, const Vocabulary& vocabulary);

} // namespace bunit
