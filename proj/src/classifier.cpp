#include "bunit/classifier.hpp"

#include "bunit/binio.hpp"
#include "bunit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace bunit {

using detail::EncoderLayerRef;
using detail::LayerNormRef;
using detail::LinearRef;
using detail::TensorRef;

namespace {

constexpr char kModelMagic[9] = "BUMODL\x01\n";
constexpr uint32_t kModelVersion = 1;
constexpr double kLnEps = 1e-5;

inline const double* vals(const ParamVector& p, const TensorRef& t) {
    return p.values.data() + t.offset;
}
inline double* grads_of(ParamVector& p, const TensorRef& t) { return p.grads.data() + t.offset; }

Matrix matmul(const Matrix& A, const Matrix& B) {
    Matrix C(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i) {
        const double* arow = A.row(i);
        double* crow = C.row(i);
        for (int k = 0; k < A.cols; ++k) {
            const double a = arow[k];
            const double* brow = B.row(k);
            for (int j = 0; j < B.cols; ++j) crow[j] += a * brow[j];
        }
    }
    return C;
}

// A * B^T with B given as (m x k); result (n x m).
Matrix matmul_tB(const Matrix& A, const Matrix& B) {
    Matrix C(A.rows, B.rows);
    for (int i = 0; i < A.rows; ++i) {
        const double* arow = A.row(i);
        double* crow = C.row(i);
        for (int j = 0; j < B.rows; ++j) {
            const double* brow = B.row(j);
            double acc = 0.0;
            for (int k = 0; k < A.cols; ++k) acc += arow[k] * brow[k];
            crow[j] = acc;
        }
    }
    return C;
}

// A^T * B with A given as (k x n); result (n x m).
Matrix matmul_tA(const Matrix& A, const Matrix& B) {
    Matrix C(A.cols, B.cols);
    for (int k = 0; k < A.rows; ++k) {
        const double* arow = A.row(k);
        const double* brow = B.row(k);
        for (int i = 0; i < A.cols; ++i) {
            const double a = arow[i];
            double* crow = C.row(i);
            for (int j = 0; j < B.cols; ++j) crow[j] += a * brow[j];
        }
    }
    return C;
}

inline double gelu(double z) { return 0.5 * z * (1.0 + std::erf(z * 0.7071067811865475244)); }
inline double gelu_grad(double z) {
    const double cdf = 0.5 * (1.0 + std::erf(z * 0.7071067811865475244));
    const double pdf = std::exp(-0.5 * z * z) * 0.39894228040143267794;
    return cdf + z * pdf;
}

Matrix linear_fwd(const ParamVector& p, const LinearRef& lin, const Matrix& x) {
    const int T = x.rows;
    const int in = lin.W.rows;
    const int out = lin.W.cols;
    const double* W = vals(p, lin.W);
    const double* b = vals(p, lin.b);
    Matrix y(T, out);
    for (int t = 0; t < T; ++t) {
        double* yrow = y.row(t);
        std::copy(b, b + out, yrow);
        const double* xrow = x.row(t);
        for (int i = 0; i < in; ++i) {
            const double xi = xrow[i];
            const double* wrow = W + static_cast<size_t>(i) * out;
            for (int o = 0; o < out; ++o) yrow[o] += xi * wrow[o];
        }
    }
    return y;
}

Matrix linear_bwd(ParamVector& p, const LinearRef& lin, const Matrix& x, const Matrix& dy) {
    const int T = x.rows;
    const int in = lin.W.rows;
    const int out = lin.W.cols;
    const double* W = vals(p, lin.W);
    double* dW = grads_of(p, lin.W);
    double* db = grads_of(p, lin.b);
    Matrix dx(T, in);
    for (int t = 0; t < T; ++t) {
        const double* xrow = x.row(t);
        const double* dyrow = dy.row(t);
        double* dxrow = dx.row(t);
        for (int o = 0; o < out; ++o) db[o] += dyrow[o];
        for (int i = 0; i < in; ++i) {
            const double xi = xrow[i];
            const double* wrow = W + static_cast<size_t>(i) * out;
            double* dwrow = dW + static_cast<size_t>(i) * out;
            double acc = 0.0;
            for (int o = 0; o < out; ++o) {
                dwrow[o] += xi * dyrow[o];
                acc += dyrow[o] * wrow[o];
            }
            dxrow[i] = acc;
        }
    }
    return dx;
}

struct LayerNormCache {
    Matrix xhat;
    std::vector<double> inv_std;
};

Matrix layernorm_fwd(const ParamVector& p, const LayerNormRef& ln, const Matrix& x,
                     LayerNormCache& cache) {
    const int T = x.rows;
    const int d = x.cols;
    const double* g = vals(p, ln.gain);
    const double* b = vals(p, ln.bias);
    Matrix y(T, d);
    cache.xhat = Matrix(T, d);
    cache.inv_std.assign(static_cast<size_t>(T), 0.0);
    for (int t = 0; t < T; ++t) {
        const double* xr = x.row(t);
        double mean = 0.0;
        for (int i = 0; i < d; ++i) mean += xr[i];
        mean /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        cache.inv_std[static_cast<size_t>(t)] = inv;
        double* xh = cache.xhat.row(t);
        double* yr = y.row(t);
        for (int i = 0; i < d; ++i) {
            xh[i] = (xr[i] - mean) * inv;
            yr[i] = g[i] * xh[i] + b[i];
        }
    }
    return y;
}

Matrix layernorm_bwd(ParamVector& p, const LayerNormRef& ln, const LayerNormCache& cache,
                     const Matrix& dy) {
    const int T = dy.rows;
    const int d = dy.cols;
    const double* g = vals(p, ln.gain);
    double* dg = grads_of(p, ln.gain);
    double* db = grads_of(p, ln.bias);
    Matrix dx(T, d);
    for (int t = 0; t < T; ++t) {
        const double* dyr = dy.row(t);
        const double* xh = cache.xhat.row(t);
        const double inv = cache.inv_std[static_cast<size_t>(t)];
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (int i = 0; i < d; ++i) {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            const double dxh = dyr[i] * g[i];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[i];
        }
        mean_dxhat /= d;
        mean_dxhat_xhat /= d;
        double* dxr = dx.row(t);
        for (int i = 0; i < d; ++i) {
            const double dxh = dyr[i] * g[i];
            dxr[i] = inv * (dxh - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    return dx;
}

Matrix head_slice(const Matrix& m, int head, int dh) {
    Matrix out(m.rows, dh);
    for (int t = 0; t < m.rows; ++t)
        std::copy(m.row(t) + head * dh, m.row(t) + (head + 1) * dh, out.row(t));
    return out;
}

void head_place(Matrix& dst, const Matrix& src, int head, int dh) {
    for (int t = 0; t < src.rows; ++t)
        std::copy(src.row(t), src.row(t) + dh, dst.row(t) + head * dh);
}

struct AttentionCache {
    Matrix x, Q, K, V;
    std::vector<Matrix> attn; // per head, T x T
    Matrix concat;            // pre-output-projection
};

Matrix attention_fwd(const ParamVector& p, const EncoderLayerRef& layer, const Matrix& x, int heads,
                     AttentionCache& cache) {
    const int d = x.cols;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(double(dh));
    cache.x = x;
    cache.Q = linear_fwd(p, layer.wq, x);
    cache.K = linear_fwd(p, layer.wk, x);
    cache.V = linear_fwd(p, layer.wv, x);
    cache.attn.assign(static_cast<size_t>(heads), Matrix());
    cache.concat = Matrix(x.rows, d);
    for (int h = 0; h < heads; ++h) {
        const Matrix Qh = head_slice(cache.Q, h, dh);
        const Matrix Kh = head_slice(cache.K, h, dh);
        const Matrix Vh = head_slice(cache.V, h, dh);
        Matrix scores = matmul_tB(Qh, Kh);
        for (auto& v : scores.a) v *= scale;
        // row-wise softmax
        for (int t = 0; t < scores.rows; ++t) {
            double* row = scores.row(t);
            double mx = row[0];
            for (int j = 1; j < scores.cols; ++j) mx = std::max(mx, row[j]);
            double total = 0.0;
            for (int j = 0; j < scores.cols; ++j) {
                row[j] = std::exp(row[j] - mx);
                total += row[j];
            }
            for (int j = 0; j < scores.cols; ++j) row[j] /= total;
        }
        const Matrix out_h = matmul(scores, Vh);
        head_place(cache.concat, out_h, h, dh);
        cache.attn[static_cast<size_t>(h)] = std::move(scores);
    }
    return linear_fwd(p, layer.wo, cache.concat);
}

Matrix attention_bwd(ParamVector& p, const EncoderLayerRef& layer, const AttentionCache& cache,
                     const Matrix& dout, int heads) {
    const int d = cache.x.cols;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(double(dh));
    const Matrix dconcat = linear_bwd(p, layer.wo, cache.concat, dout);
    Matrix dQ(cache.x.rows, d), dK(cache.x.rows, d), dV(cache.x.rows, d);
    for (int h = 0; h < heads; ++h) {
        const Matrix Qh = head_slice(cache.Q, h, dh);
        const Matrix Kh = head_slice(cache.K, h, dh);
        const Matrix Vh = head_slice(cache.V, h, dh);
        const Matrix dOh = head_slice(dconcat, h, dh);
        const Matrix& A = cache.attn[static_cast<size_t>(h)];
        Matrix dA = matmul_tB(dOh, Vh);      // T x T
        const Matrix dVh = matmul_tA(A, dOh); // T x dh
        // softmax backward per row
        Matrix dS(dA.rows, dA.cols);
        for (int t = 0; t < dA.rows; ++t) {
            const double* arow = A.row(t);
            const double* darow = dA.row(t);
            double dot = 0.0;
            for (int j = 0; j < dA.cols; ++j) dot += arow[j] * darow[j];
            double* dsrow = dS.row(t);
            for (int j = 0; j < dA.cols; ++j) dsrow[j] = arow[j] * (darow[j] - dot) * scale;
        }
        const Matrix dQh = matmul(dS, Kh);
        const Matrix dKh = matmul_tA(dS, Qh);
        head_place(dQ, dQh, h, dh);
        head_place(dK, dKh, h, dh);
        head_place(dV, dVh, h, dh);
    }
    Matrix dx = linear_bwd(p, layer.wq, cache.x, dQ);
    const Matrix dxk = linear_bwd(p, layer.wk, cache.x, dK);
    const Matrix dxv = linear_bwd(p, layer.wv, cache.x, dV);
    for (size_t i = 0; i < dx.a.size(); ++i) dx.a[i] += dxk.a[i] + dxv.a[i];
    return dx;
}

struct EncoderLayerCache {
    AttentionCache att;
    Matrix att_mask; // dropout masks; empty in eval mode
    Matrix res1;
    LayerNormCache ln1;
    Matrix h1;
    Matrix ff_pre; // T x d_ff before activation
    Matrix ff_act;
    Matrix ff_mask;
    LayerNormCache ln2;
};

Matrix sample_dropout_mask(int rows, int cols, double p, Rng& rng) {
    Matrix mask(rows, cols);
    const double keep_scale = 1.0 / (1.0 - p);
    for (auto& v : mask.a) v = rng.uniform_real() >= p ? keep_scale : 0.0;
    return mask;
}

Matrix encoder_layer_fwd(const ParamVector& p, const EncoderLayerRef& layer, const Matrix& x,
                         int heads, double dropout, Rng* rng, EncoderLayerCache& cache) {
    Matrix att = attention_fwd(p, layer, x, heads, cache.att);
    if (rng && dropout > 0.0) {
        cache.att_mask = sample_dropout_mask(att.rows, att.cols, dropout, *rng);
        for (size_t i = 0; i < att.a.size(); ++i) att.a[i] *= cache.att_mask.a[i];
    }
    cache.res1 = x;
    for (size_t i = 0; i < att.a.size(); ++i) cache.res1.a[i] += att.a[i];
    cache.h1 = layernorm_fwd(p, layer.ln1, cache.res1, cache.ln1);

    cache.ff_pre = linear_fwd(p, layer.ff1, cache.h1);
    cache.ff_act = cache.ff_pre;
    for (auto& v : cache.ff_act.a) v = gelu(v);
    Matrix ff = linear_fwd(p, layer.ff2, cache.ff_act);
    if (rng && dropout > 0.0) {
        cache.ff_mask = sample_dropout_mask(ff.rows, ff.cols, dropout, *rng);
        for (size_t i = 0; i < ff.a.size(); ++i) ff.a[i] *= cache.ff_mask.a[i];
    }
    Matrix res2 = cache.h1;
    for (size_t i = 0; i < ff.a.size(); ++i) res2.a[i] += ff.a[i];
    return layernorm_fwd(p, layer.ln2, res2, cache.ln2);
}

Matrix encoder_layer_bwd(ParamVector& p, const EncoderLayerRef& layer,
                         const EncoderLayerCache& cache, const Matrix& dy, int heads) {
    const Matrix dres2 = layernorm_bwd(p, layer.ln2, cache.ln2, dy);
    Matrix dff = dres2;
    if (cache.ff_mask.rows > 0)
        for (size_t i = 0; i < dff.a.size(); ++i) dff.a[i] *= cache.ff_mask.a[i];
    Matrix dact = linear_bwd(p, layer.ff2, cache.ff_act, dff);
    for (size_t i = 0; i < dact.a.size(); ++i) dact.a[i] *= gelu_grad(cache.ff_pre.a[i]);
    Matrix dh1 = linear_bwd(p, layer.ff1, cache.h1, dact);
    for (size_t i = 0; i < dh1.a.size(); ++i) dh1.a[i] += dres2.a[i];

    const Matrix dres1 = layernorm_bwd(p, layer.ln1, cache.ln1, dh1);
    Matrix datt = dres1;
    if (cache.att_mask.rows > 0)
        for (size_t i = 0; i < datt.a.size(); ++i) datt.a[i] *= cache.att_mask.a[i];
    Matrix dx = attention_bwd(p, layer, cache.att, datt, heads);
    for (size_t i = 0; i < dx.a.size(); ++i) dx.a[i] += dres1.a[i];
    return dx;
}

void add_positional(Matrix& x) {
    const int d = x.cols;
    for (int t = 0; t < x.rows; ++t) {
        double* row = x.row(t);
        for (int i = 0; i * 2 < d; ++i) {
            const double angle = double(t) / std::pow(10000.0, 2.0 * i / double(d));
            row[2 * i] += std::sin(angle);
            if (2 * i + 1 < d) row[2 * i + 1] += std::cos(angle);
        }
    }
}

struct StackCache {
    std::vector<Matrix> inputs; // input to each layer
    std::vector<EncoderLayerCache> layers;
};

Matrix stack_fwd(const ParamVector& p, const std::vector<EncoderLayerRef>& layers, Matrix x,
                 int heads, double dropout, Rng* rng, StackCache* cache) {
    if (cache) {
        cache->inputs.clear();
        cache->layers.assign(layers.size(), EncoderLayerCache());
    }
    StackCache scratch;
    for (size_t i = 0; i < layers.size(); ++i) {
        EncoderLayerCache& lc = cache ? cache->layers[i] : scratch.layers.emplace_back();
        if (cache) cache->inputs.push_back(x);
        x = encoder_layer_fwd(p, layers[i], x, heads, dropout, rng, lc);
    }
    return x;
}

Matrix stack_bwd(ParamVector& p, const std::vector<EncoderLayerRef>& layers, const StackCache& cache,
                 Matrix dy, int heads) {
    for (size_t i = layers.size(); i-- > 0;)
        dy = encoder_layer_bwd(p, layers[i], cache.layers[i], dy, heads);
    return dy;
}

std::array<double, 2> softmax2(double a, double b) {
    const double mx = std::max(a, b);
    const double ea = std::exp(a - mx);
    const double eb = std::exp(b - mx);
    return {ea / (ea + eb), eb / (ea + eb)};
}

} // namespace

ClassifierExample to_example(const UnitAnnotatedSequence& seq) {
    ClassifierExample ex;
    ex.tokens = seq.tokens;
    ex.unit_of = seq.unit_of;
    ex.label = seq.label;
    return ex;
}

std::vector<std::vector<int>> unit_token_lists(const std::vector<BehaviorUnitPattern>& units) {
    std::vector<std::vector<int>> out;
    out.reserve(units.size());
    for (const auto& u : units) out.push_back(u.tokens);
    return out;
}

ClassifierModel::ClassifierModel(const ClassifierConfig& config, uint64_t init_seed) : cfg_(config) {
    if (cfg_.d_model % cfg_.heads != 0)
        throw ValidationError("d_model must be divisible by the head count");
    if (cfg_.d_model < 1 || cfg_.layers < 1 || cfg_.d_ff < 1 || cfg_.mlp_hidden < 1)
        throw ValidationError("classifier dimensions must be positive");
    allocate_refs();
    init_params(init_seed);
}

void ClassifierModel::allocate_refs() {
    auto tensor = [this](int rows, int cols) {
        TensorRef t;
        t.rows = rows;
        t.cols = cols;
        t.offset = params_.allocate(rows * cols);
        return t;
    };
    auto linear = [&](int in, int out) {
        LinearRef l;
        l.W = tensor(in, out);
        l.b = tensor(1, out);
        return l;
    };
    auto encoder_layer = [&]() {
        EncoderLayerRef l;
        l.wq = linear(cfg_.d_model, cfg_.d_model);
        l.wk = linear(cfg_.d_model, cfg_.d_model);
        l.wv = linear(cfg_.d_model, cfg_.d_model);
        l.wo = linear(cfg_.d_model, cfg_.d_model);
        l.ff1 = linear(cfg_.d_model, cfg_.d_ff);
        l.ff2 = linear(cfg_.d_ff, cfg_.d_model);
        l.ln1.gain = tensor(1, cfg_.d_model);
        l.ln1.bias = tensor(1, cfg_.d_model);
        l.ln2.gain = tensor(1, cfg_.d_model);
        l.ln2.bias = tensor(1, cfg_.d_model);
        return l;
    };

    if (cfg_.use_units) {
        unit_proj_ = linear(cfg_.embed_dim, cfg_.d_model);
        for (int i = 0; i < cfg_.layers; ++i) unit_layers_.push_back(encoder_layer());
        joint_proj_ = linear(2 * cfg_.d_model, cfg_.d_model);
    }
    beh_proj_ = linear(cfg_.embed_dim, cfg_.d_model);
    for (int i = 0; i < cfg_.layers; ++i) seq_layers_.push_back(encoder_layer());
    head1_ = linear(cfg_.d_model, cfg_.mlp_hidden);
    head2_ = linear(cfg_.mlp_hidden, 2);
}

void ClassifierModel::init_params(uint64_t seed) {
    Rng rng(seed);
    auto init_linear = [&](const LinearRef& l) {
        const double r = std::sqrt(6.0 / double(l.W.rows + l.W.cols));
        double* w = params_.values.data() + l.W.offset;
        for (int i = 0; i < l.W.size(); ++i) w[i] = (rng.uniform_real() * 2.0 - 1.0) * r;
        // biases stay zero
    };
    auto init_layer = [&](const EncoderLayerRef& l) {
        init_linear(l.wq);
        init_linear(l.wk);
        init_linear(l.wv);
        init_linear(l.wo);
        init_linear(l.ff1);
        init_linear(l.ff2);
        double* g1 = params_.values.data() + l.ln1.gain.offset;
        double* g2 = params_.values.data() + l.ln2.gain.offset;
        for (int i = 0; i < cfg_.d_model; ++i) g1[i] = g2[i] = 1.0;
    };
    if (cfg_.use_units) {
        init_linear(unit_proj_);
        for (const auto& l : unit_layers_) init_layer(l);
        init_linear(joint_proj_);
    }
    init_linear(beh_proj_);
    for (const auto& l : seq_layers_) init_layer(l);
    init_linear(head1_);
    init_linear(head2_);
}

// Shared forward/backward machinery; instantiated per batch (or per forward
// call) so the model itself stays const during inference.
class ClassifierRuntime {
public:
    ClassifierRuntime(const ClassifierModel& model, const EmbeddingTable& embeddings,
                      ParamVector* grad_target = nullptr)
        : model_(model), cfg_(model.cfg_), embeddings_(embeddings), grad_target_(grad_target) {}

    struct UnitState {
        Matrix embedded;   // J x Q
        Matrix projected;  // J x d, after positional encodings
        StackCache stack;
        Matrix encoded;    // J x d last layer
        std::vector<double> rep; // pooled d
        std::vector<double> drep; // accumulated gradient
        bool ready = false;
    };

    struct ExampleCache {
        Matrix beh_embedded; // T x Q
        Matrix beh_proj;     // T x d
        Matrix joint;        // T x 2d (full variant only)
        Matrix x0;           // encoder input
        StackCache stack;
        Matrix encoded;      // T x d
        std::vector<double> pooled;
        std::vector<double> head_pre; // mlp_hidden pre-activation
        std::vector<double> head_act;
        std::array<double, 2> probs;
    };

    void prepare_units(const std::vector<std::vector<int>>& units, const std::set<int>& used,
                       double dropout, Rng* rng) {
        unit_states_.assign(units.size(), UnitState());
        for (int u : used) {
            if (u < 0 || static_cast<size_t>(u) >= units.size())
                throw ValidationError("unit index out of range: " + std::to_string(u));
            encode_unit_fwd(units[static_cast<size_t>(u)], unit_states_[static_cast<size_t>(u)],
                            dropout, rng);
        }
    }

    void encode_unit_fwd(const std::vector<int>& tokens, UnitState& state, double dropout,
                         Rng* rng) {
        const int J = static_cast<int>(tokens.size());
        if (J == 0) throw ValidationError("cannot encode an empty unit");
        if (J > cfg_.max_unit_len)
            throw ValidationError("unit longer than the configured maximum length");
        state.embedded = embed_sequence(tokens, embeddings_);
        state.projected = linear_fwd(model_.params_, model_.unit_proj_, state.embedded);
        add_positional(state.projected);
        state.encoded = stack_fwd(model_.params_, model_.unit_layers_, state.projected, cfg_.heads,
                                  dropout, rng, &state.stack);
        state.rep.assign(static_cast<size_t>(cfg_.d_model), 0.0);
        for (int t = 0; t < state.encoded.rows; ++t)
            for (int i = 0; i < cfg_.d_model; ++i)
                state.rep[static_cast<size_t>(i)] += state.encoded.at(t, i);
        for (auto& v : state.rep) v /= double(state.encoded.rows);
        state.drep.assign(static_cast<size_t>(cfg_.d_model), 0.0);
        state.ready = true;
    }

    // Forward one example; caches are filled for a later backward pass.
    double example_fwd(const ClassifierExample& ex, ExampleCache& cache, double dropout,
                       Rng* rng, bool record_attention) {
        const int T = static_cast<int>(ex.tokens.size());
        cache.beh_embedded = embed_sequence(ex.tokens, embeddings_);
        cache.beh_proj = linear_fwd(model_.params_, model_.beh_proj_, cache.beh_embedded);
        if (cfg_.use_units) {
            cache.joint = Matrix(T, 2 * cfg_.d_model);
            for (int t = 0; t < T; ++t) {
                const int u = ex.unit_of[static_cast<size_t>(t)];
                if (u < 0 || static_cast<size_t>(u) >= unit_states_.size() ||
                    !unit_states_[static_cast<size_t>(u)].ready)
                    throw ValidationError("behavior references an unprepared unit");
                double* row = cache.joint.row(t);
                std::copy(cache.beh_proj.row(t), cache.beh_proj.row(t) + cfg_.d_model, row);
                const auto& rep = unit_states_[static_cast<size_t>(u)].rep;
                std::copy(rep.begin(), rep.end(), row + cfg_.d_model);
            }
            cache.x0 = linear_fwd(model_.params_, model_.joint_proj_, cache.joint);
        } else {
            cache.x0 = cache.beh_proj;
        }
        add_positional(cache.x0);
        cache.encoded = stack_fwd(model_.params_, model_.seq_layers_, cache.x0, cfg_.heads, dropout,
                                  rng, &cache.stack);
        if (record_attention && !cache.stack.layers.empty() &&
            !cache.stack.layers.front().att.attn.empty())
            model_.last_attention_ = cache.stack.layers.front().att.attn.front();

        cache.pooled.assign(static_cast<size_t>(cfg_.d_model), 0.0);
        for (int t = 0; t < cache.encoded.rows; ++t)
            for (int i = 0; i < cfg_.d_model; ++i)
                cache.pooled[static_cast<size_t>(i)] += cache.encoded.at(t, i);
        for (auto& v : cache.pooled) v /= double(cache.encoded.rows);

        Matrix pooled_m(1, cfg_.d_model);
        std::copy(cache.pooled.begin(), cache.pooled.end(), pooled_m.row(0));
        Matrix pre = linear_fwd(model_.params_, model_.head1_, pooled_m);
        cache.head_pre.assign(pre.row(0), pre.row(0) + cfg_.mlp_hidden);
        for (auto& v : pre.a) v = gelu(v);
        cache.head_act.assign(pre.row(0), pre.row(0) + cfg_.mlp_hidden);
        const Matrix logits = linear_fwd(model_.params_, model_.head2_, pre);
        cache.probs = softmax2(logits.at(0, 0), logits.at(0, 1));
        const double p = ex.label == 1 ? cache.probs[1] : cache.probs[0];
        return -std::log(std::max(p, 1e-300));
    }

    // Backward for one example given the loss weight (1/batch).
    void example_bwd(const ClassifierExample& ex, ExampleCache& cache, double weight) {
        ParamVector& p = *grad_target_;
        Matrix dlogits(1, 2);
        dlogits.at(0, 0) = (cache.probs[0] - (ex.label == 1 ? 0.0 : 1.0)) * weight;
        dlogits.at(0, 1) = (cache.probs[1] - (ex.label == 1 ? 1.0 : 0.0)) * weight;

        Matrix act(1, cfg_.mlp_hidden);
        std::copy(cache.head_act.begin(), cache.head_act.end(), act.row(0));
        Matrix dact = linear_bwd(p, model_.head2_, act, dlogits);
        for (int i = 0; i < cfg_.mlp_hidden; ++i)
            dact.at(0, i) *= gelu_grad(cache.head_pre[static_cast<size_t>(i)]);
        Matrix pooled_m(1, cfg_.d_model);
        std::copy(cache.pooled.begin(), cache.pooled.end(), pooled_m.row(0));
        const Matrix dpooled = linear_bwd(p, model_.head1_, pooled_m, dact);

        const int T = cache.encoded.rows;
        Matrix dencoded(T, cfg_.d_model);
        for (int t = 0; t < T; ++t)
            for (int i = 0; i < cfg_.d_model; ++i)
                dencoded.at(t, i) = dpooled.at(0, i) / double(T);

        Matrix dx0 = stack_bwd(p, model_.seq_layers_, cache.stack, dencoded, cfg_.heads);

        if (cfg_.use_units) {
            const Matrix djoint = linear_bwd(p, model_.joint_proj_, cache.joint, dx0);
            Matrix dbeh(T, cfg_.d_model);
            for (int t = 0; t < T; ++t) {
                const double* row = djoint.row(t);
                std::copy(row, row + cfg_.d_model, dbeh.row(t));
                auto& drep = unit_states_[static_cast<size_t>(ex.unit_of[static_cast<size_t>(t)])].drep;
                for (int i = 0; i < cfg_.d_model; ++i) drep[static_cast<size_t>(i)] += row[cfg_.d_model + i];
            }
            linear_bwd(p, model_.beh_proj_, cache.beh_embedded, dbeh);
        } else {
            linear_bwd(p, model_.beh_proj_, cache.beh_embedded, dx0);
        }
    }

    // Propagates the accumulated unit-representation gradients through each
    // encoded unit once.
    void units_bwd() {
        ParamVector& p = *grad_target_;
        for (auto& state : unit_states_) {
            if (!state.ready) continue;
            bool any = false;
            for (double v : state.drep)
                if (v != 0.0) any = true;
            if (!any) continue;
            const int J = state.encoded.rows;
            Matrix dencoded(J, cfg_.d_model);
            for (int t = 0; t < J; ++t)
                for (int i = 0; i < cfg_.d_model; ++i)
                    dencoded.at(t, i) = state.drep[static_cast<size_t>(i)] / double(J);
            const Matrix dproj = stack_bwd(p, model_.unit_layers_, state.stack, dencoded, cfg_.heads);
            linear_bwd(p, model_.unit_proj_, state.embedded, dproj);
        }
    }

    std::vector<UnitState>& unit_states() { return unit_states_; }

private:
    const ClassifierModel& model_;
    const ClassifierConfig& cfg_;
    const EmbeddingTable& embeddings_;
    ParamVector* grad_target_ = nullptr;
    std::vector<UnitState> unit_states_;
};

std::vector<double> ClassifierModel::encode_unit(const std::vector<int>& unit_tokens,
                                                 const EmbeddingTable& embeddings) const {
    if (!cfg_.use_units) throw ValidationError("behaviors-only variant has no unit encoder");
    ClassifierRuntime rt(*this, embeddings);
    ClassifierRuntime::UnitState state;
    rt.encode_unit_fwd(unit_tokens, state, 0.0, nullptr);
    return state.rep;
}

Matrix ClassifierModel::build_joint_input(const ClassifierExample& example,
                                          const std::vector<std::vector<int>>& units,
                                          const EmbeddingTable& embeddings) const {
    if (!cfg_.use_units) throw ValidationError("behaviors-only variant has no joint input");
    if (example.tokens.empty())
        throw ValidationError("empty annotated sequence goes through the empty-input policy");
    ClassifierRuntime rt(*this, embeddings);
    std::set<int> used(example.unit_of.begin(), example.unit_of.end());
    rt.prepare_units(units, used, 0.0, nullptr);
    const Matrix beh = embed_sequence(example.tokens, embeddings);
    const Matrix proj = linear_fwd(params_, beh_proj_, beh);
    Matrix joint(static_cast<int>(example.tokens.size()), 2 * cfg_.d_model);
    for (int t = 0; t < joint.rows; ++t) {
        double* row = joint.row(t);
        std::copy(proj.row(t), proj.row(t) + cfg_.d_model, row);
        const auto& rep = rt.unit_states()[static_cast<size_t>(example.unit_of[static_cast<size_t>(t)])].rep;
        std::copy(rep.begin(), rep.end(), row + cfg_.d_model);
    }
    return joint;
}

Prediction ClassifierModel::forward(const ClassifierExample& example,
                                    const std::vector<std::vector<int>>& units,
                                    const EmbeddingTable& embeddings) const {
    Prediction out;
    if (example.tokens.empty()) {
        out.probs = {1.0, 0.0};
        out.no_units = true;
        return out;
    }
    ClassifierRuntime rt(*this, embeddings);
    if (cfg_.use_units) {
        std::set<int> used(example.unit_of.begin(), example.unit_of.end());
        rt.prepare_units(units, used, 0.0, nullptr);
    }
    ClassifierRuntime::ExampleCache cache;
    rt.example_fwd(example, cache, 0.0, nullptr, true);
    out.probs = cache.probs;
    return out;
}

double ClassifierModel::batch_loss(const std::vector<ClassifierExample>& batch,
                                   const std::vector<std::vector<int>>& units,
                                   const EmbeddingTable& embeddings) const {
    ClassifierRuntime rt(*this, embeddings);
    if (cfg_.use_units) {
        std::set<int> used;
        for (const auto& ex : batch) used.insert(ex.unit_of.begin(), ex.unit_of.end());
        rt.prepare_units(units, used, 0.0, nullptr);
    }
    double total = 0.0;
    for (const auto& ex : batch) {
        ClassifierRuntime::ExampleCache cache;
        total += rt.example_fwd(ex, cache, 0.0, nullptr, false);
    }
    return total / double(batch.size());
}

double ClassifierModel::batch_loss_and_grad(const std::vector<ClassifierExample>& batch,
                                            const std::vector<std::vector<int>>& units,
                                            const EmbeddingTable& embeddings, Rng* dropout_rng) {
    const double dropout = dropout_rng ? cfg_.dropout : 0.0;
    ClassifierRuntime rt(*this, embeddings, &params_);
    if (cfg_.use_units) {
        std::set<int> used;
        for (const auto& ex : batch) used.insert(ex.unit_of.begin(), ex.unit_of.end());
        rt.prepare_units(units, used, dropout, dropout_rng);
    }
    const double weight = 1.0 / double(batch.size());
    double total = 0.0;
    for (const auto& ex : batch) {
        ClassifierRuntime::ExampleCache cache;
        total += rt.example_fwd(ex, cache, dropout, dropout_rng, false);
        rt.example_bwd(ex, cache, weight);
    }
    if (cfg_.use_units) rt.units_bwd();
    return total * weight;
}

ClassifierModel train_classifier(const std::vector<ClassifierExample>& examples,
                                 const std::vector<std::vector<int>>& units,
                                 const EmbeddingTable& embeddings, const ClassifierConfig& config,
                                 const ClassifierTrainConfig& train_config,
                                 const std::string& train_digest) {
    std::vector<ClassifierExample> usable;
    for (const auto& ex : examples)
        if (!ex.tokens.empty()) usable.push_back(ex);
    if (usable.empty()) throw ValidationError("no non-empty training examples");
    bool has_benign = false, has_malicious = false;
    for (const auto& ex : usable) (ex.label == 1 ? has_malicious : has_benign) = true;
    if (!has_benign || !has_malicious)
        throw ValidationError("training set must contain both classes");
    if (config.embed_dim != embeddings.dim)
        throw ValidationError("classifier embed_dim does not match the embedding table");

    ClassifierModel model(config, train_config.seed);
    model.train_digest = train_digest;

    ParamVector& params = model.parameters();
    std::vector<double> m(params.values.size(), 0.0), v(params.values.size(), 0.0);
    int64_t step = 0;
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    Rng shuffle_rng = Rng::derive(train_config.seed, 0xb5u);
    Rng dropout_rng = Rng::derive(train_config.seed, 0xd0u);
    std::vector<size_t> order(usable.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform(i)]);
        double epoch_loss = 0.0;
        size_t counted = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(train_config.batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(train_config.batch_size));
            std::vector<ClassifierExample> batch;
            batch.reserve(stop - start);
            for (size_t i = start; i < stop; ++i) batch.push_back(usable[order[i]]);

            params.zero_grads();
            const double loss =
                model.batch_loss_and_grad(batch, units, embeddings,
                                          config.dropout > 0.0 ? &dropout_rng : nullptr);
            if (!std::isfinite(loss))
                throw ValidationError("classifier training diverged: non-finite loss");
            epoch_loss += loss * double(batch.size());
            counted += batch.size();

            ++step;
            const double bc1 = 1.0 - std::pow(beta1, double(step));
            const double bc2 = 1.0 - std::pow(beta2, double(step));
            for (size_t i = 0; i < params.values.size(); ++i) {
                const double g = params.grads[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                params.values[i] -=
                    train_config.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
            }
        }
        model.epoch_losses.push_back(epoch_loss / double(counted));
    }
    return model;
}

void ClassifierModel::save(const std::string& path) const {
    atomic_write_stream(path, [this](std::ostream& os) {
        BinaryWriter w(os);
        w.magic(kModelMagic);
        w.u32(kModelVersion);
        w.i32(cfg_.d_model);
        w.i32(cfg_.heads);
        w.i32(cfg_.layers);
        w.i32(cfg_.d_ff);
        w.i32(cfg_.mlp_hidden);
        w.f64(cfg_.dropout);
        w.i32(cfg_.max_unit_len);
        w.u8(cfg_.use_units ? 1 : 0);
        w.i32(cfg_.embed_dim);
        w.str(train_digest);
        w.u64(epoch_losses.size());
        for (double v : epoch_losses) w.f64(v);
        w.u64(params_.values.size());
        for (double v : params_.values) w.f64(v);
    });
}

ClassifierModel ClassifierModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open classifier model: " + path);
    BinaryReader r(in, path);
    r.expect_magic(kModelMagic);
    if (r.u32() != kModelVersion) throw IoError("unsupported model version in " + path);
    ClassifierConfig cfg;
    cfg.d_model = r.i32();
    cfg.heads = r.i32();
    cfg.layers = r.i32();
    cfg.d_ff = r.i32();
    cfg.mlp_hidden = r.i32();
    cfg.dropout = r.f64();
    cfg.max_unit_len = r.i32();
    cfg.use_units = r.u8() != 0;
    cfg.embed_dim = r.i32();
    ClassifierModel model(cfg, 0);
    model.train_digest = r.str();
    model.epoch_losses.resize(r.u64());
    for (auto& v : model.epoch_losses) v = r.f64();
    const uint64_t n = r.u64();
    if (n != model.params_.values.size())
        throw IoError("parameter count mismatch in " + path);
    for (auto& v : model.params_.values) v = r.f64();
    return model;
}

} // namespace bunit
