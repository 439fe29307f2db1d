#pragma once

#include "bunit/embedding.hpp"
#include "bunit/shapelet.hpp"
#include "bunit/types.hpp"
#include "bunit/units.hpp"

#include <vector>

namespace bunit {

struct Candidate {
    std::vector<int> tokens;
    int sequence_index = -1;
    int start = 0;
    double xi = 0.0; // signed residual; quality is |xi|

    int end() const { return start + static_cast<int>(tokens.size()); } // exclusive
    double quality() const { return xi < 0 ? -xi : xi; }
};

// Every contiguous subsequence of each length in [min_len, max_len]. A
// max_len beyond the sequence length is clamped (counted in *clamp_warnings).
std::vector<Candidate> generate_candidates(const BehaviorSequence& sequence, int sequence_index,
                                           int min_len, int max_len, size_t* clamp_warnings = nullptr);

// Two candidates are self-similar when they overlap inside the same origin
// sequence or one token string contains the other contiguously. The better
// quality one survives.
bool self_similar(const Candidate& a, const Candidate& b);

struct MiningConfig {
    int min_len = 3;
    int max_len = 6;
    int k = 15;
};

// Top-k critical behavior units: per sequence, score all candidates with the
// shapelet model, drop self-similar ones best-first, and merge into the
// running top-k. Deterministic for fixed inputs.
std::vector<BehaviorUnitPattern> mine_units(const Corpus& train, const ShapeletModel& model,
                                            const EmbeddingTable& embeddings,
                                            const MiningConfig& config);

} // namespace bunit
