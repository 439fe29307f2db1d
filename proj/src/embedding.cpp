#include "bunit/embedding.hpp"

#include "bunit/binio.hpp"
#include "bunit/errors.hpp"
#include "bunit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace bunit {

namespace {

constexpr char kEmbeddingMagic[9] = "BUEMBD\x01\n";
constexpr uint32_t kEmbeddingVersion = 1;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Cumulative unigram^power distribution for negative sampling.
struct NoiseDistribution {
    std::vector<double> cumulative; // over vocabulary ids

    NoiseDistribution(const Corpus& corpus, double power) {
        std::vector<double> weights(static_cast<size_t>(corpus.vocabulary.size()), 0.0);
        for (const auto& seq : corpus.sequences)
            for (int t : seq.tokens) weights[static_cast<size_t>(t)] += 1.0;
        double total = 0.0;
        for (auto& w : weights) {
            w = std::pow(w, power);
            total += w;
        }
        if (total <= 0.0) throw ValidationError("empty corpus: no tokens to train embeddings on");
        cumulative.resize(weights.size());
        double acc = 0.0;
        for (size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i] / total;
            cumulative[i] = acc;
        }
        cumulative.back() = 1.0;
    }

    int sample(Rng& rng) const {
        const double u = rng.uniform_real();
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        return static_cast<int>(std::min<size_t>(it - cumulative.begin(), cumulative.size() - 1));
    }
};

} // namespace

EmbeddingTable train_behavior2vec(const Corpus& corpus, const SkipGramConfig& config, uint64_t seed,
                                  std::vector<double>* epoch_losses) {
    if (corpus.sequences.empty()) throw ValidationError("cannot train embeddings on an empty corpus");
    if (config.dim < 2) throw ValidationError("embedding dimension must be at least 2");
    if (config.window < 1) throw ValidationError("context window must be at least 1");

    // Count distinct tokens actually present; a single-symbol corpus leaves
    // no negatives to sample.
    {
        std::vector<char> seen(static_cast<size_t>(corpus.vocabulary.size()), 0);
        int distinct = 0;
        for (const auto& seq : corpus.sequences)
            for (int t : seq.tokens)
                if (!seen[static_cast<size_t>(t)]) {
                    seen[static_cast<size_t>(t)] = 1;
                    ++distinct;
                }
        if (distinct < 2) throw ValidationError("vocabulary of size 1: no negatives available");
    }

    const int vocab = corpus.vocabulary.size();
    const int dim = config.dim;
    Rng rng(seed);
    Matrix in_vec(vocab, dim);  // center-word vectors, become the table
    Matrix out_vec(vocab, dim); // context vectors
    for (auto& v : in_vec.a) v = (rng.uniform_real() - 0.5) / dim;

    NoiseDistribution noise(corpus, config.noise_power);

    // Total center-context pair count for the linear learning-rate decay.
    uint64_t total_pairs = 0;
    for (const auto& seq : corpus.sequences) {
        const int64_t k = static_cast<int64_t>(seq.tokens.size());
        for (int64_t t = 0; t < k; ++t) {
            const int64_t lo = std::max<int64_t>(0, t - config.window);
            const int64_t hi = std::min<int64_t>(k - 1, t + config.window);
            total_pairs += static_cast<uint64_t>(hi - lo);
        }
    }
    total_pairs *= static_cast<uint64_t>(config.epochs);
    if (total_pairs == 0) throw ValidationError("corpus has no context pairs to train on");

    std::vector<double> grad_center(static_cast<size_t>(dim));
    uint64_t done_pairs = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        uint64_t epoch_pairs = 0;
        for (const auto& seq : corpus.sequences) {
            const int k = static_cast<int>(seq.tokens.size());
            for (int t = 0; t < k; ++t) {
                const int center = seq.tokens[static_cast<size_t>(t)];
                const int lo = std::max(0, t - config.window);
                const int hi = std::min(k - 1, t + config.window);
                for (int c = lo; c <= hi; ++c) {
                    if (c == t) continue;
                    const int context = seq.tokens[static_cast<size_t>(c)];
                    const double progress = double(done_pairs) / double(total_pairs);
                    const double lr = std::max(config.learning_rate * (1.0 - progress),
                                               config.learning_rate * 1e-4);

                    double* v = in_vec.row(center);
                    std::fill(grad_center.begin(), grad_center.end(), 0.0);

                    // Positive sample plus `negatives` noise draws; a draw
                    // that hits the true context is skipped.
                    for (int s = 0; s <= config.negatives; ++s) {
                        int target;
                        double y;
                        if (s == 0) {
                            target = context;
                            y = 1.0;
                        } else {
                            target = noise.sample(rng);
                            if (target == context) continue;
                            y = 0.0;
                        }
                        double* u = out_vec.row(target);
                        double dot = 0.0;
                        for (int d = 0; d < dim; ++d) dot += u[d] * v[d];
                        const double p = sigmoid(dot);
                        epoch_loss += y > 0.5 ? -std::log(std::max(p, 1e-12))
                                              : -std::log(std::max(1.0 - p, 1e-12));
                        const double g = (p - y) * lr;
                        for (int d = 0; d < dim; ++d) {
                            grad_center[static_cast<size_t>(d)] += g * u[d];
                            u[d] -= g * v[d];
                        }
                    }
                    for (int d = 0; d < dim; ++d) v[d] -= grad_center[static_cast<size_t>(d)];
                    ++done_pairs;
                    ++epoch_pairs;
                }
            }
        }
        if (epoch_losses) epoch_losses->push_back(epoch_loss / double(std::max<uint64_t>(1, epoch_pairs)));
    }

    // Normalize rows so downstream distances are scale-free.
    for (int i = 0; i < vocab; ++i) {
        double* row = in_vec.row(i);
        double norm = 0.0;
        for (int d = 0; d < dim; ++d) norm += row[d] * row[d];
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (int d = 0; d < dim; ++d) row[d] /= norm;
    }

    EmbeddingTable table;
    table.dim = dim;
    table.vectors = std::move(in_vec);
    return table;
}

Matrix embed_sequence(const std::vector<int>& tokens, const EmbeddingTable& table,
                      size_t* unk_fallbacks) {
    Matrix out(static_cast<int>(tokens.size()), table.dim);
    for (size_t i = 0; i < tokens.size(); ++i) {
        int id = tokens[i];
        if (id < 0 || id >= table.vocab_size()) {
            id = Vocabulary::kUnkId;
            if (unk_fallbacks) ++*unk_fallbacks;
        }
        const double* src = table.vectors.row(id);
        std::copy(src, src + table.dim, out.row(static_cast<int>(i)));
    }
    return out;
}

EmbeddingTable one_hot_table(int vocab_size) {
    EmbeddingTable table;
    table.dim = vocab_size;
    table.vectors = Matrix(vocab_size, vocab_size);
    const double scale = 1.0 / std::sqrt(2.0);
    for (int i = 0; i < vocab_size; ++i) table.vectors.at(i, i) = scale;
    return table;
}

void EmbeddingTable::save(const std::string& path) const {
    atomic_write_stream(path, [this](std::ostream& os) {
        BinaryWriter w(os);
        w.magic(kEmbeddingMagic);
        w.u32(kEmbeddingVersion);
        w.i32(vectors.rows);
        w.i32(dim);
        for (double v : vectors.a) w.f64(v);
    });
}

EmbeddingTable EmbeddingTable::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open embedding file: " + path);
    BinaryReader r(in, path);
    r.expect_magic(kEmbeddingMagic);
    if (r.u32() != kEmbeddingVersion) throw IoError("unsupported embedding version in " + path);
    EmbeddingTable table;
    const int rows = r.i32();
    table.dim = r.i32();
    table.vectors = Matrix(rows, table.dim);
    for (auto& v : table.vectors.a) v = r.f64();
    return table;
}

} // namespace bunit
