#pragma once

#include "bunit/embedding.hpp"
#include "bunit/extraction.hpp"
#include "bunit/matrix.hpp"
#include "bunit/rng.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bunit {

struct Prediction {
    std::array<double, 2> probs{0.0, 0.0}; // (benign, malicious)
    bool no_units = false;                 // empty extraction fallback applied

    double score() const { return probs[1]; }
    int label_at(double threshold) const { return score() >= threshold ? 1 : 0; }
};

struct ClassifierConfig {
    int d_model = 64;
    int heads = 4;
    int layers = 2; // encoder depth, both levels
    int d_ff = 128;
    int mlp_hidden = 64;
    double dropout = 0.1; // training only
    int max_unit_len = 6;
    bool use_units = true; // false = behaviors-only ablation variant
    int embed_dim = 16;    // Q, must match the embedding table
};

struct ClassifierTrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs = 30;
    uint64_t seed = 1;
};

// One classifier input: the (possibly extraction-filtered) token stream with
// per-token owning unit. unit_of entries are ignored by the behaviors-only
// variant.
struct ClassifierExample {
    std::vector<int> tokens;
    std::vector<int> unit_of;
    int label = 0;
};

ClassifierExample to_example(const UnitAnnotatedSequence& seq);

// Flat parameter storage: a single vector for values and a parallel one for
// gradients, which keeps Adam and finite-difference checks trivial.
class ParamVector {
public:
    int allocate(int count) {
        const int offset = static_cast<int>(values.size());
        values.resize(values.size() + static_cast<size_t>(count), 0.0);
        grads.resize(values.size(), 0.0);
        return offset;
    }
    void zero_grads() { std::fill(grads.begin(), grads.end(), 0.0); }

    std::vector<double> values;
    std::vector<double> grads;
};

namespace detail {

struct TensorRef {
    int offset = 0;
    int rows = 0;
    int cols = 0;
    int size() const { return rows * cols; }
};

struct LinearRef {
    TensorRef W; // in x out
    TensorRef b; // out
};

struct LayerNormRef {
    TensorRef gain;
    TensorRef bias;
};

struct EncoderLayerRef {
    LinearRef wq, wk, wv, wo;
    LinearRef ff1, ff2;
    LayerNormRef ln1, ln2;
};

} // namespace detail

// Two-level transformer encoder: a unit-level encoder summarizes each
// behavior unit, the summary is concatenated onto every member behavior's
// projected embedding, and a sequence-level encoder plus MLP head classifies
// the result. The behaviors-only variant skips the unit path entirely.
class ClassifierModel {
public:
    ClassifierModel() = default;
    ClassifierModel(const ClassifierConfig& config, uint64_t init_seed);

    const ClassifierConfig& config() const { return cfg_; }
    ParamVector& parameters() { return params_; }
    const ParamVector& parameters() const { return params_; }

    // Mean of the last encoder layer's hidden states for one unit.
    std::vector<double> encode_unit(const std::vector<int>& unit_tokens,
                                    const EmbeddingTable& embeddings) const;

    // T x (2 * d_model) joint rows: [projected behavior embedding, unit
    // representation broadcast over the unit's member behaviors].
    Matrix build_joint_input(const ClassifierExample& example,
                             const std::vector<std::vector<int>>& units,
                             const EmbeddingTable& embeddings) const;

    Prediction forward(const ClassifierExample& example, const std::vector<std::vector<int>>& units,
                       const EmbeddingTable& embeddings) const;

    // Mean cross-entropy over the batch without touching gradients; used by
    // the finite-difference tests.
    double batch_loss(const std::vector<ClassifierExample>& batch,
                      const std::vector<std::vector<int>>& units,
                      const EmbeddingTable& embeddings) const;

    // Mean cross-entropy with gradient accumulation into parameters().grads.
    // dropout_rng enables inverted dropout when non-null.
    double batch_loss_and_grad(const std::vector<ClassifierExample>& batch,
                               const std::vector<std::vector<int>>& units,
                               const EmbeddingTable& embeddings, Rng* dropout_rng);

    // Last attention distribution rows observed by forward (sequence-level
    // encoder, layer 0, head 0); exposed for the attention sanity tests.
    const Matrix& last_attention() const { return last_attention_; }

    std::string train_digest;          // fingerprint of the training corpus
    std::vector<double> epoch_losses;  // recorded by train_classifier

    void save(const std::string& path) const;
    static ClassifierModel load(const std::string& path);

private:
    friend class ClassifierRuntime;

    ClassifierConfig cfg_;
    ParamVector params_;
    detail::LinearRef unit_proj_, beh_proj_, joint_proj_, head1_, head2_;
    std::vector<detail::EncoderLayerRef> unit_layers_, seq_layers_;
    mutable Matrix last_attention_;

    void allocate_refs();
    void init_params(uint64_t seed);
};

// Adam mini-batch training. Deterministic per seed: fixed shuffle, fixed
// reduction order. Throws on single-class input; empty examples are dropped
// (they carry no signal and predict benign by policy).
ClassifierModel train_classifier(const std::vector<ClassifierExample>& examples,
                                 const std::vector<std::vector<int>>& units,
                                 const EmbeddingTable& embeddings, const ClassifierConfig& config,
                                 const ClassifierTrainConfig& train_config,
                                 const std::string& train_digest = {});

std::vector<std::vector<int>> unit_token_lists(const std::vector<BehaviorUnitPattern>& units);

} // namespace bunit
