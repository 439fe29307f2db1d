#pragma once

#include "bunit/rng.hpp"
#include "bunit/types.hpp"

#include <cstdint>
#include <map>
#include <vector>

namespace bunit {

// Order-2 Markov fragment source trained on benign sequences only, with
// add-one smoothing over the benign vocabulary. Stands in for a learned
// sequence generator behind the same sampling interface.
class FragmentGenerator {
public:
    static constexpr int kMinFragmentLen = 2;
    static constexpr int kMaxFragmentLen = 5;

    FragmentGenerator() = default;

    // Counts bigram transitions over every benign sequence in `corpus`.
    // Sequences labeled malicious are ignored.
    static FragmentGenerator train(const Corpus& corpus);

    // Next-token distribution for a context; tokens outside the benign
    // vocabulary (or the start sentinel -1) behave as unseen context.
    std::vector<double> next_distribution(int prev2, int prev1) const;

    std::vector<int> sample_fragment(int length, Rng& rng) const;
    int sample_length(Rng& rng) const;

    const std::vector<int>& benign_vocabulary() const { return vocab_; }

    int min_fragment_len = kMinFragmentLen;
    int max_fragment_len = kMaxFragmentLen;

private:
    int state_of(int token) const; // vocab index or start state
    int states() const { return static_cast<int>(vocab_.size()) + 1; }

    std::vector<int> vocab_;                // sorted distinct benign token ids
    std::map<int, int> vocab_index_;
    std::vector<uint32_t> counts_;          // states x states x |vocab|
};

struct AttackConfig {
    int windows = 4;      // n contiguous near-equal windows
    double max_rate = 0.0; // B, inserted tokens per original window token
    uint64_t seed = 0;
};

struct PerturbResult {
    BehaviorSequence sequence;
    std::vector<char> injected; // per output position, 1 = inserted token
};

// Windowed benign-fragment injection. Original tokens are never removed or
// reordered; per window, fragments are inserted at random offsets while the
// next fragment still fits under max_rate * original_window_length.
PerturbResult perturb(const BehaviorSequence& x, const FragmentGenerator& gen,
                      const AttackConfig& config, Rng& rng);

// One perturbed corpus per rate: malicious sequences are attacked, benign
// ones pass through untouched. Deterministic per (seed, rate, sequence).
std::map<double, Corpus> attack_corpus(const Corpus& corpus, const FragmentGenerator& gen,
                                       const std::vector<double>& rates, int windows, uint64_t seed);

} // namespace bunit
