#pragma once

#include "bunit/embedding.hpp"
#include "bunit/matrix.hpp"
#include "bunit/types.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bunit {

// Learned shapelets in embedding space plus the linear head that scores
// behavior-unit candidates. With a one-dimensional embedding this reduces to
// scalar-per-position shapelets.
struct ShapeletModel {
    std::vector<Matrix> shapelets; // J entries, each L x Q
    std::vector<double> weights;   // J linear weights
    double bias = 0.0;
    double reg_alpha = 0.0;
    double softmin_gamma = 50.0;
    double final_loss = 0.0;

    int count() const { return static_cast<int>(shapelets.size()); }
    int length() const { return shapelets.empty() ? 0 : shapelets.front().rows; }
    int dim() const { return shapelets.empty() ? 0 : shapelets.front().cols; }

    void save(const std::string& path) const;
    static ShapeletModel load(const std::string& path);
};

// Sum of squared per-position differences between two equal-length embedded
// windows.
double subseq_distance(const Matrix& a, const Matrix& b);

// Hard minimum of subseq_distance over all length-L windows of the embedded
// sequence. A sequence shorter than the shapelet is zero-padded to one
// window; *short_fallbacks counts those cases.
double min_distance(const Matrix& shapelet, const Matrix& sequence, size_t* short_fallbacks = nullptr);

// Smooth surrogate -(1/gamma) * log sum_w exp(-gamma * d_w); approaches the
// hard minimum from below as gamma grows. Training-only.
double soft_min_distance(const Matrix& shapelet, const Matrix& sequence, double gamma);

struct ShapeletTrainConfig {
    int shapelet_count = 8; // J
    int shapelet_len = 4;   // L
    double gamma = 50.0;
    double reg_alpha = 0.1;
    double learning_rate = 0.05;
    int max_epochs = 500;
    double rel_tol = 1e-6;
    uint64_t seed = 1;
};

// Joint objective over embedded training sequences:
//   sum_i logloss(y_i, w . x_i + w0) + (alpha / n) * sum_j w_j^2
// with x_{i,j} the soft-min distance of shapelet j to sequence i.
double shapelet_objective(const ShapeletModel& model, const std::vector<Matrix>& embedded,
                          const std::vector<int>& labels);

// Analytic gradients of shapelet_objective into a same-shape model struct.
// Returns the objective value.
double shapelet_gradients(const ShapeletModel& model, const std::vector<Matrix>& embedded,
                          const std::vector<int>& labels, ShapeletModel& grad);

// Gradient descent from a k-means window initialization; aborts on
// non-finite loss, stops early when the relative improvement falls under
// rel_tol.
ShapeletModel train_shapelet_model(const Corpus& train, const EmbeddingTable& embeddings,
                                   const ShapeletTrainConfig& config);

// Quality residual xi = y_actual - (sum_j w_j * d(candidate, S_j) + w0) with
// hard min distances; |xi| near zero marks a high-quality candidate.
double assess_candidate(std::span<const int> candidate_tokens, int origin_label,
                        const ShapeletModel& model, const EmbeddingTable& embeddings);

} // namespace bunit
