#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace bunit {

struct ConfusionMatrix {
    int64_t tp = 0;
    int64_t tn = 0;
    int64_t fp = 0;
    int64_t fn = 0;

    int64_t total() const { return tp + tn + fp + fn; }
    void add(int predicted, int actual) {
        if (actual == 1)
            (predicted == 1 ? tp : fn) += 1;
        else
            (predicted == 1 ? fp : tn) += 1;
    }
};

// Zero denominators yield empty optionals rather than 0 so degenerate
// classifiers are visible instead of silently flattered.
struct MetricValues {
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
    std::optional<double> accuracy;
};

MetricValues metrics(const ConfusionMatrix& cm);

struct RocResult {
    std::vector<std::pair<double, double>> points; // (fpr, tpr) from (0,0) to (1,1)
    double auc = 0.0;
};

// Threshold sweep over distinct scores, AUC by the trapezoidal rule. Tied
// scores collapse into a single curve step. Requires both labels present.
RocResult roc_auc(const std::vector<std::pair<double, int>>& scored);

} // namespace bunit
