#pragma once

#include "bunit/classifier.hpp"
#include "bunit/embedding.hpp"
#include "bunit/extraction.hpp"
#include "bunit/metrics.hpp"
#include "bunit/types.hpp"
#include "bunit/units.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bunit {

// Everything needed to score a raw corpus end to end.
struct TrainedPipeline {
    std::vector<BehaviorUnitPattern> units;
    EmbeddingTable embeddings;
    ClassifierModel model;
    double threshold = 0.5;
    bool extract_input = true; // behaviors-only baseline consumes raw sequences
};

struct RateRow {
    double rate = 0.0;
    ConfusionMatrix cm;
    MetricValues m;
    std::optional<double> auc;
    bool degradation_flag = false; // F1 rose by > 0.02 over the previous rate
};

struct SweepReport {
    std::vector<RateRow> rows;
    std::optional<double> max_f1_drop; // F1@0 minus the minimum over rates
};

Prediction predict_sequence(const TrainedPipeline& pipeline, const BehaviorSequence& sequence);

// Per-rate precision/recall/F1 over the attacked corpora. Rate 0 must be
// present; it is the drop baseline.
SweepReport robustness_sweep(const TrainedPipeline& pipeline,
                             const std::map<double, Corpus>& attacked, bool with_auc = true);

struct AblationReport {
    SweepReport full;
    SweepReport variant;
    std::vector<double> rates;
    // F1(full) - F1(variant) per rate where both are defined
    std::map<double, double> f1_delta;
};

// Side-by-side comparison of the full model against a second variant over
// the same attacked corpora. Both models must share a training split.
AblationReport ablation(const TrainedPipeline& full, const TrainedPipeline& variant,
                        const std::map<double, Corpus>& attacked);

std::string sweep_to_json(const std::map<std::string, SweepReport>& sweeps);
std::string sweep_to_table(const std::map<std::string, SweepReport>& sweeps);
std::string roc_points_csv(const std::vector<std::pair<double, double>>& points);

} // namespace bunit
