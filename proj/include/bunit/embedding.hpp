#pragma once

#include "bunit/matrix.hpp"
#include "bunit/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bunit {

// Dense behavior vectors, one row per vocabulary id. Rows are L2-normalized
// after training so the mining distance kernel is scale-free.
struct EmbeddingTable {
    int dim = 0;
    Matrix vectors; // V x Q

    int vocab_size() const { return vectors.rows; }

    void save(const std::string& path) const;
    static EmbeddingTable load(const std::string& path);
};

struct SkipGramConfig {
    int dim = 16;
    int window = 4;
    int epochs = 5;
    int negatives = 5;
    double noise_power = 0.75;
    double learning_rate = 0.025;
};

// Skip-gram with negative sampling over the raw token sequences.
// Deterministic per seed; per-epoch mean loss is appended to epoch_losses
// when provided.
EmbeddingTable train_behavior2vec(const Corpus& corpus, const SkipGramConfig& config, uint64_t seed,
                                  std::vector<double>* epoch_losses = nullptr);

// Row lookup realizing the per-sequence K x Q representation. Out-of-range
// ids fall back to the unk row and bump *unk_fallbacks.
Matrix embed_sequence(const std::vector<int>& tokens, const EmbeddingTable& table,
                      size_t* unk_fallbacks = nullptr);

// Identity-style table for the one-hot distance ablation: row i is e_i / sqrt(2),
// which makes the per-position squared distance exactly 1 on mismatch.
EmbeddingTable one_hot_table(int vocab_size);

} // namespace bunit
