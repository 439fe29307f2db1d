#include "bunit/shapelet.hpp"

#include "bunit/binio.hpp"
#include "bunit/errors.hpp"
#include "bunit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace bunit {

namespace {

constexpr char kShapeletMagic[9] = "BUSHPL\x01\n";
constexpr uint32_t kShapeletVersion = 1;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Pads an embedded sequence with zero rows up to `len` rows.
Matrix zero_pad(const Matrix& sequence, int len) {
    Matrix out(len, sequence.cols);
    std::copy(sequence.a.begin(), sequence.a.end(), out.a.begin());
    return out;
}

double window_distance(const Matrix& shapelet, const Matrix& sequence, int offset) {
    double total = 0.0;
    for (int p = 0; p < shapelet.rows; ++p) {
        const double* s = shapelet.row(p);
        const double* r = sequence.row(offset + p);
        for (int q = 0; q < shapelet.cols; ++q) {
            const double d = s[q] - r[q];
            total += d * d;
        }
    }
    return total;
}

} // namespace

double subseq_distance(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw ValidationError("subseq_distance requires equal shapes");
    double total = 0.0;
    for (size_t i = 0; i < a.a.size(); ++i) {
        const double d = a.a[i] - b.a[i];
        total += d * d;
    }
    return total;
}

double min_distance(const Matrix& shapelet, const Matrix& sequence, size_t* short_fallbacks) {
    if (shapelet.cols != sequence.cols)
        throw ValidationError("min_distance: embedding dimensions differ");
    if (shapelet.rows > sequence.rows) {
        if (short_fallbacks) ++*short_fallbacks;
        return subseq_distance(shapelet, zero_pad(sequence, shapelet.rows));
    }
    double best = std::numeric_limits<double>::infinity();
    for (int w = 0; w + shapelet.rows <= sequence.rows; ++w)
        best = std::min(best, window_distance(shapelet, sequence, w));
    return best;
}

double soft_min_distance(const Matrix& shapelet, const Matrix& sequence, double gamma) {
    if (gamma <= 0.0) throw ValidationError("soft-min gamma must be positive");
    if (shapelet.cols != sequence.cols)
        throw ValidationError("soft_min_distance: embedding dimensions differ");
    const Matrix* seq = &sequence;
    Matrix padded;
    if (shapelet.rows > sequence.rows) {
        padded = zero_pad(sequence, shapelet.rows);
        seq = &padded;
    }
    const int windows = seq->rows - shapelet.rows + 1;
    std::vector<double> dist(static_cast<size_t>(windows));
    double dmin = std::numeric_limits<double>::infinity();
    for (int w = 0; w < windows; ++w) {
        dist[static_cast<size_t>(w)] = window_distance(shapelet, *seq, w);
        dmin = std::min(dmin, dist[static_cast<size_t>(w)]);
    }
    // log-sum-exp around the minimum for stability
    double acc = 0.0;
    for (double d : dist) acc += std::exp(-gamma * (d - dmin));
    return dmin - std::log(acc) / gamma;
}

double shapelet_objective(const ShapeletModel& model, const std::vector<Matrix>& embedded,
                          const std::vector<int>& labels) {
    const int n = static_cast<int>(embedded.size());
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        double yhat = model.bias;
        for (int j = 0; j < model.count(); ++j)
            yhat += model.weights[static_cast<size_t>(j)] *
                    soft_min_distance(model.shapelets[static_cast<size_t>(j)], embedded[static_cast<size_t>(i)],
                                      model.softmin_gamma);
        const double p = sigmoid(yhat);
        loss += labels[static_cast<size_t>(i)] == 1 ? -std::log(std::max(p, 1e-300))
                                                    : -std::log(std::max(1.0 - p, 1e-300));
    }
    double reg = 0.0;
    for (double w : model.weights) reg += w * w;
    return loss + model.reg_alpha / double(n) * reg;
}

double shapelet_gradients(const ShapeletModel& model, const std::vector<Matrix>& embedded,
                          const std::vector<int>& labels, ShapeletModel& grad) {
    const int n = static_cast<int>(embedded.size());
    const int J = model.count();
    const int L = model.length();
    const int Q = model.dim();
    const double gamma = model.softmin_gamma;

    grad.shapelets.assign(static_cast<size_t>(J), Matrix(L, Q));
    grad.weights.assign(static_cast<size_t>(J), 0.0);
    grad.bias = 0.0;

    double loss = 0.0;
    std::vector<double> x(static_cast<size_t>(J));
    for (int i = 0; i < n; ++i) {
        const Matrix* seq = &embedded[static_cast<size_t>(i)];
        Matrix padded;
        if (L > seq->rows) {
            padded = zero_pad(*seq, L);
            seq = &padded;
        }
        const int windows = seq->rows - L + 1;

        // Forward: soft-min features and the softmax window weights needed
        // for the backward pass.
        std::vector<std::vector<double>> window_weights(static_cast<size_t>(J));
        for (int j = 0; j < J; ++j) {
            const Matrix& s = model.shapelets[static_cast<size_t>(j)];
            std::vector<double> dist(static_cast<size_t>(windows));
            double dmin = std::numeric_limits<double>::infinity();
            for (int w = 0; w < windows; ++w) {
                dist[static_cast<size_t>(w)] = window_distance(s, *seq, w);
                dmin = std::min(dmin, dist[static_cast<size_t>(w)]);
            }
            double acc = 0.0;
            for (double d : dist) acc += std::exp(-gamma * (d - dmin));
            x[static_cast<size_t>(j)] = dmin - std::log(acc) / gamma;
            auto& ww = window_weights[static_cast<size_t>(j)];
            ww.resize(static_cast<size_t>(windows));
            for (int w = 0; w < windows; ++w)
                ww[static_cast<size_t>(w)] = std::exp(-gamma * (dist[static_cast<size_t>(w)] - dmin)) / acc;
        }

        double yhat = model.bias;
        for (int j = 0; j < J; ++j) yhat += model.weights[static_cast<size_t>(j)] * x[static_cast<size_t>(j)];
        const double p = sigmoid(yhat);
        const double y = labels[static_cast<size_t>(i)] == 1 ? 1.0 : 0.0;
        loss += y > 0.5 ? -std::log(std::max(p, 1e-300)) : -std::log(std::max(1.0 - p, 1e-300));

        const double g = p - y; // dLoss/dyhat
        grad.bias += g;
        for (int j = 0; j < J; ++j) {
            grad.weights[static_cast<size_t>(j)] += g * x[static_cast<size_t>(j)];
            // dLoss/dS_j = g * w_j * sum_w softweight_w * dD_w/dS_j
            const double scale = g * model.weights[static_cast<size_t>(j)];
            if (scale == 0.0) continue;
            const Matrix& s = model.shapelets[static_cast<size_t>(j)];
            Matrix& gs = grad.shapelets[static_cast<size_t>(j)];
            const auto& ww = window_weights[static_cast<size_t>(j)];
            for (int w = 0; w < windows; ++w) {
                const double wscale = scale * ww[static_cast<size_t>(w)];
                if (wscale == 0.0) continue;
                for (int pidx = 0; pidx < L; ++pidx) {
                    const double* srow = s.row(pidx);
                    const double* rrow = seq->row(w + pidx);
                    double* grow = gs.row(pidx);
                    for (int q = 0; q < Q; ++q) grow[q] += wscale * 2.0 * (srow[q] - rrow[q]);
                }
            }
        }
    }

    double reg = 0.0;
    for (int j = 0; j < J; ++j) {
        reg += model.weights[static_cast<size_t>(j)] * model.weights[static_cast<size_t>(j)];
        grad.weights[static_cast<size_t>(j)] += 2.0 * model.reg_alpha / double(n) * model.weights[static_cast<size_t>(j)];
    }
    return loss + model.reg_alpha / double(n) * reg;
}

namespace {

// K-means over sampled real windows; deterministic seeding, empty clusters
// re-anchored to the farthest point.
std::vector<Matrix> kmeans_init(const std::vector<Matrix>& embedded, int J, int L, Rng& rng) {
    std::vector<std::pair<int, int>> pool; // (sequence, offset)
    for (size_t i = 0; i < embedded.size(); ++i)
        if (embedded[i].rows >= L)
            for (int w = 0; w + L <= embedded[i].rows; ++w) pool.emplace_back(static_cast<int>(i), w);
    if (pool.empty()) throw ValidationError("no training window is as long as the shapelet length");

    const int Q = embedded.front().cols;
    auto window_of = [&](const std::pair<int, int>& ref) {
        Matrix m(L, Q);
        const Matrix& seq = embedded[static_cast<size_t>(ref.first)];
        for (int p = 0; p < L; ++p)
            std::copy(seq.row(ref.second + p), seq.row(ref.second + p) + Q, m.row(p));
        return m;
    };

    const size_t samples = std::min(pool.size(), static_cast<size_t>(10 * J));
    std::vector<Matrix> points;
    points.reserve(samples);
    for (size_t s = 0; s < samples; ++s) points.push_back(window_of(pool[rng.uniform(pool.size())]));

    std::vector<Matrix> centroids;
    for (int j = 0; j < J; ++j) centroids.push_back(points[static_cast<size_t>(j) % points.size()]);

    std::vector<int> assign(points.size(), 0);
    for (int iter = 0; iter < 25; ++iter) {
        bool changed = false;
        for (size_t s = 0; s < points.size(); ++s) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int j = 0; j < J; ++j) {
                const double d = subseq_distance(points[s], centroids[static_cast<size_t>(j)]);
                if (d < best_d) {
                    best_d = d;
                    best = j;
                }
            }
            if (assign[s] != best) {
                assign[s] = best;
                changed = true;
            }
        }
        std::vector<Matrix> sums(static_cast<size_t>(J), Matrix(L, Q));
        std::vector<int> counts(static_cast<size_t>(J), 0);
        for (size_t s = 0; s < points.size(); ++s) {
            Matrix& acc = sums[static_cast<size_t>(assign[s])];
            for (size_t e = 0; e < acc.a.size(); ++e) acc.a[e] += points[s].a[e];
            ++counts[static_cast<size_t>(assign[s])];
        }
        for (int j = 0; j < J; ++j) {
            if (counts[static_cast<size_t>(j)] == 0) {
                // farthest point from its centroid becomes the new anchor
                size_t far = 0;
                double far_d = -1.0;
                for (size_t s = 0; s < points.size(); ++s) {
                    const double d =
                        subseq_distance(points[s], centroids[static_cast<size_t>(assign[s])]);
                    if (d > far_d) {
                        far_d = d;
                        far = s;
                    }
                }
                centroids[static_cast<size_t>(j)] = points[far];
                assign[far] = j;
                changed = true;
                continue;
            }
            Matrix& c = centroids[static_cast<size_t>(j)];
            for (size_t e = 0; e < c.a.size(); ++e)
                c.a[e] = sums[static_cast<size_t>(j)].a[e] / double(counts[static_cast<size_t>(j)]);
        }
        if (!changed) break;
    }
    return centroids;
}

} // namespace

ShapeletModel train_shapelet_model(const Corpus& train, const EmbeddingTable& embeddings,
                                   const ShapeletTrainConfig& config) {
    if (config.shapelet_count < 1 || config.shapelet_len < 1)
        throw ValidationError("shapelet count and length must be positive");
    if (train.sequences.empty()) throw ValidationError("cannot train on an empty corpus");
    for (const auto& seq : train.sequences)
        if (seq.perturbed)
            throw ValidationError("shapelet training requires unperturbed sequences: " + seq.source_id);

    std::vector<Matrix> embedded;
    std::vector<int> labels;
    embedded.reserve(train.sequences.size());
    for (const auto& seq : train.sequences) {
        embedded.push_back(embed_sequence(seq.tokens, embeddings));
        labels.push_back(seq.label);
    }

    Rng rng(config.seed);
    ShapeletModel model;
    model.shapelets = kmeans_init(embedded, config.shapelet_count, config.shapelet_len, rng);
    model.weights.assign(static_cast<size_t>(config.shapelet_count), 0.0);
    for (auto& w : model.weights) w = (rng.uniform_real() - 0.5) * 0.1;
    model.bias = 0.0;
    model.reg_alpha = config.reg_alpha;
    model.softmin_gamma = config.gamma;

    ShapeletModel grad;
    double prev_loss = std::numeric_limits<double>::infinity();
    // The objective sums over sequences, so the step is normalized by n to
    // keep the configured rate meaningful across corpus sizes.
    const double lr = config.learning_rate / double(embedded.size());
    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        const double loss = shapelet_gradients(model, embedded, labels, grad);
        if (!std::isfinite(loss))
            throw ValidationError("shapelet training diverged: non-finite loss at epoch " +
                                  std::to_string(epoch));
        for (int j = 0; j < model.count(); ++j) {
            Matrix& s = model.shapelets[static_cast<size_t>(j)];
            const Matrix& gs = grad.shapelets[static_cast<size_t>(j)];
            for (size_t e = 0; e < s.a.size(); ++e) s.a[e] -= lr * gs.a[e];
            model.weights[static_cast<size_t>(j)] -= lr * grad.weights[static_cast<size_t>(j)];
        }
        model.bias -= lr * grad.bias;
        if (std::isfinite(prev_loss) &&
            std::abs(prev_loss - loss) < config.rel_tol * std::max(1.0, std::abs(prev_loss)))
            break;
        prev_loss = loss;
    }
    model.final_loss = shapelet_objective(model, embedded, labels);
    if (!std::isfinite(model.final_loss))
        throw ValidationError("shapelet training diverged: non-finite final loss");
    return model;
}

double assess_candidate(std::span<const int> candidate_tokens, int origin_label,
                        const ShapeletModel& model, const EmbeddingTable& embeddings) {
    const std::vector<int> ids(candidate_tokens.begin(), candidate_tokens.end());
    const Matrix embedded = embed_sequence(ids, embeddings);
    double yhat = model.bias;
    for (int j = 0; j < model.count(); ++j)
        yhat += model.weights[static_cast<size_t>(j)] *
                min_distance(model.shapelets[static_cast<size_t>(j)], embedded);
    return (origin_label == 1 ? 1.0 : 0.0) - yhat;
}

void ShapeletModel::save(const std::string& path) const {
    atomic_write_stream(path, [this](std::ostream& os) {
        BinaryWriter w(os);
        w.magic(kShapeletMagic);
        w.u32(kShapeletVersion);
        w.i32(count());
        w.i32(length());
        w.i32(dim());
        w.f64(reg_alpha);
        w.f64(softmin_gamma);
        w.f64(final_loss);
        w.f64(bias);
        for (double v : weights) w.f64(v);
        for (const auto& s : shapelets)
            for (double v : s.a) w.f64(v);
    });
}

ShapeletModel ShapeletModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open shapelet model: " + path);
    BinaryReader r(in, path);
    r.expect_magic(kShapeletMagic);
    if (r.u32() != kShapeletVersion) throw IoError("unsupported shapelet model version in " + path);
    ShapeletModel model;
    const int J = r.i32();
    const int L = r.i32();
    const int Q = r.i32();
    model.reg_alpha = r.f64();
    model.softmin_gamma = r.f64();
    model.final_loss = r.f64();
    model.bias = r.f64();
    model.weights.resize(static_cast<size_t>(J));
    for (auto& w : model.weights) w = r.f64();
    model.shapelets.assign(static_cast<size_t>(J), Matrix(L, Q));
    for (auto& s : model.shapelets)
        for (auto& v : s.a) v = r.f64();
    return model;
}

} // namespace bunit
