#include "bunit/evaluation.hpp"

#include "bunit/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bunit {

using nlohmann::json;

Prediction predict_sequence(const TrainedPipeline& pipeline, const BehaviorSequence& sequence) {
    const std::vector<std::vector<int>> unit_tokens = unit_token_lists(pipeline.units);
    ClassifierExample ex;
    if (pipeline.extract_input) {
        ex = to_example(extract_units(sequence, pipeline.units));
    } else {
        ex.tokens = sequence.tokens;
        ex.unit_of.assign(sequence.tokens.size(), -1);
        ex.label = sequence.label;
    }
    return pipeline.model.forward(ex, unit_tokens, pipeline.embeddings);
}

SweepReport robustness_sweep(const TrainedPipeline& pipeline,
                             const std::map<double, Corpus>& attacked, bool with_auc) {
    if (attacked.find(0.0) == attacked.end())
        throw ValidationError("robustness sweep requires the rate-0 baseline corpus");

    SweepReport report;
    std::optional<double> prev_f1;
    for (const auto& [rate, corpus] : attacked) {
        RateRow row;
        row.rate = rate;
        std::vector<std::pair<double, int>> scored;
        scored.reserve(corpus.sequences.size());
        for (const auto& seq : corpus.sequences) {
            const Prediction pred = predict_sequence(pipeline, seq);
            row.cm.add(pred.label_at(pipeline.threshold), seq.label);
            scored.emplace_back(pred.score(), seq.label);
        }
        row.m = metrics(row.cm);
        if (with_auc) {
            bool both = false, seen0 = false, seen1 = false;
            for (const auto& [s, l] : scored) (l == 1 ? seen1 : seen0) = true;
            both = seen0 && seen1;
            if (both) row.auc = roc_auc(scored).auc;
        }
        if (prev_f1 && row.m.f1 && *row.m.f1 > *prev_f1 + 0.02) row.degradation_flag = true;
        if (row.m.f1) prev_f1 = row.m.f1;
        report.rows.push_back(std::move(row));
    }

    const auto& base = report.rows.front();
    if (base.rate == 0.0 && base.m.f1) {
        double min_f1 = *base.m.f1;
        for (const auto& row : report.rows)
            if (row.m.f1) min_f1 = std::min(min_f1, *row.m.f1);
        report.max_f1_drop = *base.m.f1 - min_f1;
    }
    return report;
}

AblationReport ablation(const TrainedPipeline& full, const TrainedPipeline& variant,
                        const std::map<double, Corpus>& attacked) {
    if (!full.model.train_digest.empty() && !variant.model.train_digest.empty() &&
        full.model.train_digest != variant.model.train_digest)
        throw ValidationError("ablation variants were trained on different splits");

    AblationReport report;
    report.full = robustness_sweep(full, attacked);
    report.variant = robustness_sweep(variant, attacked);
    for (size_t i = 0; i < report.full.rows.size(); ++i) {
        const auto& a = report.full.rows[i];
        const auto& b = report.variant.rows[i];
        report.rates.push_back(a.rate);
        if (a.m.f1 && b.m.f1) report.f1_delta[a.rate] = *a.m.f1 - *b.m.f1;
    }
    return report;
}

namespace {

json row_to_json(const RateRow& row) {
    json j;
    j["rate"] = row.rate;
    j["tp"] = row.cm.tp;
    j["tn"] = row.cm.tn;
    j["fp"] = row.cm.fp;
    j["fn"] = row.cm.fn;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v)
            j[key] = *v;
        else
            j[key] = nullptr;
    };
    put("precision", row.m.precision);
    put("recall", row.m.recall);
    put("f1", row.m.f1);
    put("accuracy", row.m.accuracy);
    put("auc", row.auc);
    j["degradation_flag"] = row.degradation_flag;
    return j;
}

std::string fmt3(const std::optional<double>& v) {
    if (!v) return "  -  ";
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.3f", *v);
    return buf;
}

} // namespace

std::string sweep_to_json(const std::map<std::string, SweepReport>& sweeps) {
    json doc;
    doc["version"] = 1;
    json rates = json::array();
    if (!sweeps.empty())
        for (const auto& row : sweeps.begin()->second.rows) rates.push_back(row.rate);
    doc["rates"] = std::move(rates);
    json metrics_obj;
    for (const auto& [name, report] : sweeps) {
        json rows = json::array();
        for (const auto& row : report.rows) rows.push_back(row_to_json(row));
        json entry;
        entry["rows"] = std::move(rows);
        if (report.max_f1_drop)
            entry["max_f1_drop"] = *report.max_f1_drop;
        else
            entry["max_f1_drop"] = nullptr;
        metrics_obj[name] = std::move(entry);
    }
    doc["metrics"] = std::move(metrics_obj);
    return doc.dump(2) + "\n";
}

std::string sweep_to_table(const std::map<std::string, SweepReport>& sweeps) {
    std::ostringstream out;
    out << "Method                    Metric";
    if (!sweeps.empty())
        for (const auto& row : sweeps.begin()->second.rows) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%5.0f%%", row.rate * 100.0);
            out << "  " << buf;
        }
    out << "\n";
    for (const auto& [name, report] : sweeps) {
        const char* metric_names[3] = {"R ", "P ", "F1"};
        for (int mi = 0; mi < 3; ++mi) {
            out << (mi == 1 ? std::string(26, ' ')
                            : mi == 0 ? (name + std::string(name.size() < 26 ? 26 - name.size() : 1, ' '))
                                      : std::string(26, ' '));
            out << metric_names[mi] << "    ";
            for (const auto& row : report.rows) {
                const auto& v = mi == 0 ? row.m.recall : mi == 1 ? row.m.precision : row.m.f1;
                out << "  " << fmt3(v);
            }
            out << "\n";
        }
    }
    return out.str();
}

std::string roc_points_csv(const std::vector<std::pair<double, double>>& points) {
    std::ostringstream out;
    out << "fpr,tpr\n";
    out.precision(17);
    for (const auto& [fpr, tpr] : points) out << fpr << "," << tpr << "\n";
    return out.str();
}

} // namespace bunit
