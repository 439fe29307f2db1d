#include "bunit/metrics.hpp"

#include "bunit/errors.hpp"

#include <algorithm>

namespace bunit {

MetricValues metrics(const ConfusionMatrix& cm) {
    MetricValues out;
    if (cm.tp + cm.fp > 0) out.precision = double(cm.tp) / double(cm.tp + cm.fp);
    if (cm.tp + cm.fn > 0) out.recall = double(cm.tp) / double(cm.tp + cm.fn);
    if (out.precision && out.recall && (*out.precision + *out.recall) > 0.0)
        out.f1 = 2.0 * *out.precision * *out.recall / (*out.precision + *out.recall);
    if (cm.total() > 0) out.accuracy = double(cm.tp + cm.tn) / double(cm.total());
    return out;
}

RocResult roc_auc(const std::vector<std::pair<double, int>>& scored) {
    int64_t positives = 0, negatives = 0;
    for (const auto& [score, label] : scored) (label == 1 ? positives : negatives) += 1;
    if (positives == 0 || negatives == 0)
        throw ValidationError("roc_auc requires both classes in the input");

    std::vector<std::pair<double, int>> sorted = scored;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    RocResult out;
    out.points.emplace_back(0.0, 0.0);
    int64_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < sorted.size()) {
        // Consume the whole tie group before emitting a point.
        const double score = sorted[i].first;
        while (i < sorted.size() && sorted[i].first == score) {
            (sorted[i].second == 1 ? tp : fp) += 1;
            ++i;
        }
        out.points.emplace_back(double(fp) / double(negatives), double(tp) / double(positives));
    }

    double auc = 0.0;
    for (size_t k = 1; k < out.points.size(); ++k) {
        const auto& [x0, y0] = out.points[k - 1];
        const auto& [x1, y1] = out.points[k];
        auc += (x1 - x0) * (y0 + y1) * 0.5;
    }
    out.auc = auc;
    return out;
}

} // namespace bunit
