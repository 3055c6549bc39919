#include "gazeassist/intent_net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <Eigen/Dense>
#include <json.hpp>

#include "gazeassist/error.hpp"

namespace gaze::net {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMat = Eigen::Map<const RowMat>;
using MMat = Eigen::Map<RowMat>;
using CRow = Eigen::Map<const Eigen::RowVectorXd>;
using MRow = Eigen::Map<Eigen::RowVectorXd>;

constexpr double kLayerNormEps = 1e-5;

CMat view(const ParamVector& v, const TensorSlot& s) {
    return CMat(v.data() + s.offset, s.rows, s.cols);
}

MMat view(ParamVector& v, const TensorSlot& s) {
    return MMat(v.data() + s.offset, s.rows, s.cols);
}

CRow row_view(const ParamVector& v, const TensorSlot& s) {
    return CRow(v.data() + s.offset, static_cast<Eigen::Index>(s.size()));
}

MRow row_view(ParamVector& v, const TensorSlot& s) {
    return MRow(v.data() + s.offset, static_cast<Eigen::Index>(s.size()));
}

void require_finite(const RowMat& m, const std::string& layer) {
    if (!m.allFinite()) throw NonFiniteError(layer);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Y = X W^T + b
RowMat linear(const RowMat& x, const ParamVector& p, const ParamLayout::Linear& l) {
    RowMat y = x * view(p, l.w).transpose();
    y.rowwise() += row_view(p, l.b);
    return y;
}

// Accumulates dW, db and returns dX.
RowMat linear_backward(const RowMat& dy, const RowMat& x, const ParamVector& p,
                       ParamVector& g, const ParamLayout::Linear& l, bool need_dx = true) {
    view(g, l.w).noalias() += dy.transpose() * x;
    row_view(g, l.b) += dy.colwise().sum();
    if (!need_dx) return {};
    return dy * view(p, l.w);
}

// Q|K|V projection with biases on Q and V only.
RowMat qkv_proj(const RowMat& x, const ParamVector& p, const ParamLayout::Linear& l) {
    const auto d = static_cast<Eigen::Index>(l.b.cols / 2);
    RowMat y = x * view(p, l.w).transpose();
    const auto b = row_view(p, l.b);
    y.leftCols(d).rowwise() += b.head(d);
    y.rightCols(d).rowwise() += b.tail(d);
    return y;
}

RowMat qkv_proj_backward(const RowMat& dy, const RowMat& x, const ParamVector& p, ParamVector& g,
                         const ParamLayout::Linear& l) {
    const auto d = static_cast<Eigen::Index>(l.b.cols / 2);
    view(g, l.w).noalias() += dy.transpose() * x;
    auto gb = row_view(g, l.b);
    gb.head(d) += dy.leftCols(d).colwise().sum();
    gb.tail(d) += dy.rightCols(d).colwise().sum();
    return dy * view(p, l.w);
}

struct NormCache {
    RowMat xhat;
    std::vector<double> rstd;
};

RowMat layer_norm(const RowMat& x, const ParamVector& p, const ParamLayout::Norm& n,
                  NormCache& cache) {
    const auto d = x.cols();
    cache.xhat.resize(x.rows(), d);
    cache.rstd.resize(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().sum() / static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.rstd[static_cast<std::size_t>(r)] = rs;
        cache.xhat.row(r) = (x.row(r).array() - mu) * rs;
    }
    RowMat y = cache.xhat.array().rowwise() * row_view(p, n.gain).array();
    y.rowwise() += row_view(p, n.bias);
    return y;
}

RowMat layer_norm_backward(const RowMat& dy, const NormCache& cache, const ParamVector& p,
                           ParamVector& g, const ParamLayout::Norm& n) {
    row_view(g, n.gain) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    row_view(g, n.bias) += dy.colwise().sum();
    const RowMat dxhat = dy.array().rowwise() * row_view(p, n.gain).array();
    const double d = static_cast<double>(dy.cols());
    RowMat dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const double m1 = dxhat.row(r).sum() / d;
        const double m2 = dxhat.row(r).dot(cache.xhat.row(r)) / d;
        dx.row(r) = cache.rstd[static_cast<std::size_t>(r)] *
                    (dxhat.row(r).array() - m1 - cache.xhat.row(r).array() * m2).matrix();
    }
    return dx;
}

RowMat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::mt19937_64& rng) {
    RowMat m(rows, cols);
    std::bernoulli_distribution keep(1.0 - p);
    const double scale = 1.0 / (1.0 - p);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? scale : 0.0;
    return m;
}

// Per-sample temporal mean: N x C -> B x C.
RowMat mean_pool(const RowMat& x, int B, int T) {
    RowMat out(B, x.cols());
    for (int b = 0; b < B; ++b) out.row(b) = x.middleRows(b * T, T).colwise().mean();
    return out;
}

RowMat mean_pool_backward(const RowMat& dpooled, int B, int T) {
    RowMat dx(static_cast<Eigen::Index>(B) * T, dpooled.cols());
    const double inv = 1.0 / T;
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < T; ++t) dx.row(b * T + t) = dpooled.row(b) * inv;
    }
    return dx;
}

struct LayerCache {
    RowMat e_in;
    NormCache ln1;
    RowMat a;
    RowMat qkv;
    std::vector<RowMat> probs;  // [sample * heads + head] T x T
    RowMat o;
    RowMat attn_mask;
    RowMat e_mid;
    NormCache ln2;
    RowMat bn;
    RowMat f1;
    RowMat r;
    RowMat ffn_mask;
};

struct Cache {
    int B = 0, T = 0;
    RowMat x;
    std::array<RowMat, 3> patches;
    std::array<RowMat, 3> conv_pre;
    RowMat h;
    RowMat s, z1, r1, gates, xc;
    std::vector<LayerCache> layers;
    RowMat e_final;
    RowMat xt;
    RowMat u, a1, head_mask, hd;
    Eigen::VectorXd logit;
    Eigen::VectorXd y;
};

RowMat im2col(const RowMat& x, int B, int T, int k) {
    const int pad = (k - 1) / 2;
    const int fea = static_cast<int>(x.cols());
    RowMat p = RowMat::Zero(static_cast<Eigen::Index>(B) * T, static_cast<Eigen::Index>(k) * fea);
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < T; ++t) {
            for (int j = 0; j < k; ++j) {
                const int src = t + j - pad;
                if (src < 0 || src >= T) continue;
                p.block(b * T + t, j * fea, 1, fea) = x.row(b * T + src);
            }
        }
    }
    return p;
}

void run_forward(const features::WindowBatch& batch, const ModelParams& params, Mode mode,
                 std::mt19937_64* rng, const Hooks& hooks, Cache& c) {
    const ModelConfig& cfg = params.config;
    const ParamLayout& L = params.layout;
    const ParamVector& P = params.values;

    if (batch.bs < 1 || batch.sw < 1 ||
        batch.values.size() !=
            static_cast<std::size_t>(batch.bs) * batch.sw * features::kNumFeatures) {
        throw ShapeError("batch tensor must be bs x sw x 3");
    }
    if (P.size() != L.total) throw ShapeError("parameter vector does not match model config");

    const int B = batch.bs, T = batch.sw, N = B * T;
    const bool dropout_on = mode == Mode::train && rng != nullptr && cfg.dropout > 0.0;
    c.B = B;
    c.T = T;
    c.x = CMat(batch.values.data(), N, features::kNumFeatures);
    require_finite(c.x, "input");

    // Convolution branch.
    const int ch = cfg.conv_channels_per_scale;
    c.h.resize(N, cfg.conv_channels());
    for (int s = 0; s < 3; ++s) {
        c.patches[s] = im2col(c.x, B, T, cfg.kernel_scales[s]);
        c.conv_pre[s] = linear(c.patches[s], P, L.conv[s]);
        c.h.middleCols(s * ch, ch) = c.conv_pre[s].cwiseMax(0.0);
    }
    require_finite(c.h, "conv");

    c.s = mean_pool(c.h, B, T);
    if (hooks.unit_channel_gates) {
        c.gates = RowMat::Ones(B, cfg.conv_channels());
    } else {
        c.z1 = linear(c.s, P, L.se1);
        c.r1 = c.z1.cwiseMax(0.0);
        c.gates = linear(c.r1, P, L.se2).unaryExpr([](double z) { return sigmoid(z); });
    }
    // Gating H and then mean-pooling equals gating the pooled vector.
    c.xc = c.s.cwiseProduct(c.gates);
    require_finite(c.xc, "channel_attention");

    // Transformer branch.
    const int d = cfg.d_model, heads = cfg.n_heads, dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::vector<double> pe = positional_encoding(T, d);
    RowMat e = linear(c.x, P, L.in_proj);
    for (int b = 0; b < B; ++b) e.middleRows(b * T, T) += CMat(pe.data(), T, d);

    c.layers.resize(L.layers.size());
    for (std::size_t l = 0; l < L.layers.size(); ++l) {
        const auto& lay = L.layers[l];
        LayerCache& lc = c.layers[l];
        lc.e_in = e;
        lc.a = layer_norm(e, P, lay.ln1, lc.ln1);
        lc.qkv = qkv_proj(lc.a, P, lay.qkv);
        lc.o.resize(N, d);
        lc.probs.resize(static_cast<std::size_t>(B) * heads);
        for (int b = 0; b < B; ++b) {
            for (int hh = 0; hh < heads; ++hh) {
                const auto q = lc.qkv.block(b * T, hh * dh, T, dh);
                const auto k = lc.qkv.block(b * T, d + hh * dh, T, dh);
                const auto v = lc.qkv.block(b * T, 2 * d + hh * dh, T, dh);
                RowMat sc = (q * k.transpose()) * scale;
                for (int t = 0; t < T; ++t) {
                    auto row = sc.row(t);
                    row = (row.array() - row.maxCoeff()).exp().matrix();
                    row /= row.sum();
                }
                lc.o.block(b * T, hh * dh, T, dh) = sc * v;
                lc.probs[static_cast<std::size_t>(b) * heads + hh] = std::move(sc);
            }
        }
        RowMat z = linear(lc.o, P, lay.out);
        if (dropout_on) {
            lc.attn_mask = dropout_mask(N, d, cfg.dropout, *rng);
            z.array() *= lc.attn_mask.array();
        } else {
            lc.attn_mask.resize(0, 0);
        }
        lc.e_mid = e + z;

        lc.bn = layer_norm(lc.e_mid, P, lay.ln2, lc.ln2);
        lc.f1 = linear(lc.bn, P, lay.ffn1);
        lc.r = lc.f1.cwiseMax(0.0);
        RowMat f2 = linear(lc.r, P, lay.ffn2);
        if (dropout_on) {
            lc.ffn_mask = dropout_mask(N, d, cfg.dropout, *rng);
            f2.array() *= lc.ffn_mask.array();
        } else {
            lc.ffn_mask.resize(0, 0);
        }
        e = lc.e_mid + f2;
        require_finite(e, "transformer_layer" + std::to_string(l));
    }
    c.e_final = std::move(e);
    c.xt = mean_pool(c.e_final, B, T);

    // Fusion head.
    c.u.resize(B, cfg.fusion_dim());
    c.u << c.xc, c.xt;
    c.a1 = linear(c.u, P, L.head1);
    c.hd = c.a1.cwiseMax(0.0);
    if (dropout_on) {
        c.head_mask = dropout_mask(B, cfg.head_hidden, cfg.dropout, *rng);
        c.hd.array() *= c.head_mask.array();
    } else {
        c.head_mask.resize(0, 0);
    }
    const RowMat logit = linear(c.hd, P, L.head2);
    require_finite(logit, "head");
    c.logit = logit.col(0);
    c.y = c.logit.unaryExpr([](double z) {
        return std::clamp(sigmoid(z), kProbClamp, 1.0 - kProbClamp);
    });
}

void run_backward(const Cache& c, const Eigen::VectorXd& dlogit, const ModelParams& params,
                  const Hooks& hooks, ParamVector& g) {
    const ModelConfig& cfg = params.config;
    const ParamLayout& L = params.layout;
    const ParamVector& P = params.values;
    const int B = c.B, T = c.T;

    // Head.
    const RowMat dlog = dlogit;  // B x 1
    RowMat dhd = linear_backward(dlog, c.hd, P, g, L.head2);
    if (c.head_mask.size() > 0) dhd.array() *= c.head_mask.array();
    const RowMat da1 = dhd.array() * (c.a1.array() > 0.0).cast<double>();
    const RowMat du = linear_backward(da1, c.u, P, g, L.head1);
    const RowMat dxc = du.leftCols(cfg.conv_channels());
    const RowMat dxt = du.rightCols(cfg.d_model);

    // Transformer branch.
    const int d = cfg.d_model, heads = cfg.n_heads, dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    RowMat de = mean_pool_backward(dxt, B, T);
    for (std::size_t li = L.layers.size(); li-- > 0;) {
        const auto& lay = L.layers[li];
        const LayerCache& lc = c.layers[li];

        RowMat df2 = de;
        if (lc.ffn_mask.size() > 0) df2.array() *= lc.ffn_mask.array();
        const RowMat dr = linear_backward(df2, lc.r, P, g, lay.ffn2);
        RowMat df1 = dr;
        if (!hooks.corrupt_ffn_gradient) df1.array() *= (lc.f1.array() > 0.0).cast<double>();
        const RowMat dbn = linear_backward(df1, lc.bn, P, g, lay.ffn1);
        RowMat de_mid = de + layer_norm_backward(dbn, lc.ln2, P, g, lay.ln2);

        RowMat dz = de_mid;
        if (lc.attn_mask.size() > 0) dz.array() *= lc.attn_mask.array();
        const RowMat dout = linear_backward(dz, lc.o, P, g, lay.out);
        RowMat dqkv = RowMat::Zero(lc.qkv.rows(), lc.qkv.cols());
        for (int b = 0; b < B; ++b) {
            for (int hh = 0; hh < heads; ++hh) {
                const RowMat& pr = lc.probs[static_cast<std::size_t>(b) * heads + hh];
                const auto q = lc.qkv.block(b * T, hh * dh, T, dh);
                const auto k = lc.qkv.block(b * T, d + hh * dh, T, dh);
                const auto v = lc.qkv.block(b * T, 2 * d + hh * dh, T, dh);
                const auto dob = dout.block(b * T, hh * dh, T, dh);
                const RowMat dp = dob * v.transpose();
                dqkv.block(b * T, 2 * d + hh * dh, T, dh).noalias() = pr.transpose() * dob;
                RowMat ds = pr.array() *
                            (dp.array().colwise() - (dp.array() * pr.array()).rowwise().sum());
                ds *= scale;
                dqkv.block(b * T, hh * dh, T, dh).noalias() = ds * k;
                dqkv.block(b * T, d + hh * dh, T, dh).noalias() = ds.transpose() * q;
            }
        }
        const RowMat da = qkv_proj_backward(dqkv, lc.a, P, g, lay.qkv);
        de = de_mid + layer_norm_backward(da, lc.ln1, P, g, lay.ln1);
    }
    linear_backward(de, c.x, P, g, L.in_proj, /*need_dx=*/false);

    // Convolution branch.
    RowMat ds_pool;
    if (hooks.unit_channel_gates) {
        ds_pool = dxc;
    } else {
        ds_pool = dxc.cwiseProduct(c.gates);
        const RowMat dgates = dxc.cwiseProduct(c.s);
        const RowMat dz2 = dgates.array() * c.gates.array() * (1.0 - c.gates.array());
        const RowMat dr1 = linear_backward(dz2, c.r1, P, g, L.se2);
        const RowMat dz1 = dr1.array() * (c.z1.array() > 0.0).cast<double>();
        ds_pool += linear_backward(dz1, c.s, P, g, L.se1);
    }
    const RowMat dconv = mean_pool_backward(ds_pool, B, T);
    const int ch = cfg.conv_channels_per_scale;
    for (int s = 0; s < 3; ++s) {
        const RowMat dpre =
            dconv.middleCols(s * ch, ch).array() * (c.conv_pre[s].array() > 0.0).cast<double>();
        linear_backward(dpre, c.patches[s], P, g, L.conv[s], /*need_dx=*/false);
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (kernel_scales != std::array<int, 3>{3, 7, 13}) {
        throw ConfigError("kernel_scales must be (3, 7, 13)");
    }
    if (conv_channels_per_scale < 1 || d_model < 1 || n_heads < 1 || n_layers < 0 ||
        ffn_dim < 1 || head_hidden < 1 || attention_reduction < 1) {
        throw ConfigError("model dimensions must be positive");
    }
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (d_model % 2 != 0) throw ConfigError("d_model must be even for positional encoding");
    if (conv_channels() % attention_reduction != 0) {
        throw ConfigError("conv channels must be divisible by attention_reduction");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
}

ParamLayout ParamLayout::build(const ModelConfig& cfg) {
    cfg.validate();
    ParamLayout L;
    auto add = [&](const std::string& name, int rows, int cols) {
        TensorSlot s{name, rows, cols, L.total};
        L.total += s.size();
        L.slots.push_back(s);
        return s;
    };
    auto linear = [&](const std::string& name, int out, int in) {
        Linear l;
        l.w = add(name + ".w", out, in);
        l.b = add(name + ".b", 1, out);
        return l;
    };
    auto norm = [&](const std::string& name, int dim) {
        Norm n;
        n.gain = add(name + ".gain", 1, dim);
        n.bias = add(name + ".bias", 1, dim);
        return n;
    };
    const int ch = cfg.conv_channels_per_scale, cc = cfg.conv_channels(), d = cfg.d_model;
    for (int s = 0; s < 3; ++s) {
        const int k = cfg.kernel_scales[s];
        L.conv[s] = linear("conv" + std::to_string(k), ch, k * features::kNumFeatures);
    }
    L.se1 = linear("se.fc1", cc / cfg.attention_reduction, cc);
    L.se2 = linear("se.fc2", cc, cc / cfg.attention_reduction);
    L.in_proj = linear("in_proj", d, features::kNumFeatures);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        Layer lay;
        lay.ln1 = norm(p + "ln1", d);
        // Query and value biases only: a key bias shifts a whole softmax row and has no effect.
        lay.qkv.w = add(p + "attn.qkv.w", 3 * d, d);
        lay.qkv.b = add(p + "attn.qkv.b", 1, 2 * d);
        lay.out = linear(p + "attn.out", d, d);
        lay.ln2 = norm(p + "ln2", d);
        lay.ffn1 = linear(p + "ffn.fc1", cfg.ffn_dim, d);
        lay.ffn2 = linear(p + "ffn.fc2", d, cfg.ffn_dim);
        L.layers.push_back(lay);
    }
    L.head1 = linear("head.fc1", cfg.head_hidden, cfg.fusion_dim());
    L.head2 = linear("head.fc2", 1, cfg.head_hidden);
    return L;
}

const TensorSlot& ParamLayout::find(const std::string& name) const {
    for (const auto& s : slots) {
        if (s.name == name) return s;
    }
    throw ConfigError("no parameter tensor named '" + name + "'");
}

const TensorSlot& ParamLayout::owner(std::size_t i) const {
    for (const auto& s : slots) {
        if (i >= s.offset && i < s.offset + s.size()) return s;
    }
    throw ConfigError("parameter index out of range");
}

ModelParams ModelParams::initialize(const ModelConfig& config) {
    ModelParams p;
    p.config = config;
    p.layout = ParamLayout::build(config);
    p.values.assign(p.layout.total, 0.0);
    std::mt19937_64 rng(config.seed);

    // Weights feeding a ReLU get the Kaiming bound, the rest the LeCun bound.
    auto fill = [&](const ParamLayout::Linear& l, bool relu) {
        const double bound = std::sqrt((relu ? 6.0 : 3.0) / l.w.cols);
        std::uniform_real_distribution<double> u(-bound, bound);
        double* w = p.values.data() + l.w.offset;
        for (std::size_t i = 0; i < l.w.size(); ++i) w[i] = u(rng);
    };
    const auto& L = p.layout;
    for (const auto& c : L.conv) fill(c, true);
    fill(L.se1, true);
    fill(L.se2, false);
    fill(L.in_proj, false);
    for (const auto& lay : L.layers) {
        row_view(p.values, lay.ln1.gain).setOnes();
        row_view(p.values, lay.ln2.gain).setOnes();
        fill(lay.qkv, false);
        fill(lay.out, false);
        fill(lay.ffn1, true);
        fill(lay.ffn2, false);
    }
    fill(L.head1, true);
    fill(L.head2, false);
    return p;
}

std::span<double> ModelParams::tensor(const std::string& name) {
    const auto& s = layout.find(name);
    return {values.data() + s.offset, s.size()};
}

std::span<const double> ModelParams::tensor(const std::string& name) const {
    const auto& s = layout.find(name);
    return {values.data() + s.offset, s.size()};
}

bool ModelParams::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::vector<double> positional_encoding(int sw, int d_model) {
    if (d_model <= 0 || d_model % 2 != 0) {
        throw ConfigError("positional encoding needs an even d_model");
    }
    std::vector<double> pe(static_cast<std::size_t>(sw) * d_model);
    for (int pos = 0; pos < sw; ++pos) {
        for (int i = 0; i < d_model / 2; ++i) {
            const double angle =
                pos / std::pow(10000.0, 2.0 * i / static_cast<double>(d_model));
            pe[static_cast<std::size_t>(pos) * d_model + 2 * i] = std::sin(angle);
            pe[static_cast<std::size_t>(pos) * d_model + 2 * i + 1] = std::cos(angle);
        }
    }
    return pe;
}

std::vector<double> forward(const features::WindowBatch& batch, const ModelParams& params,
                            Mode mode, std::mt19937_64* dropout_rng, ForwardTrace* trace,
                            const Hooks& hooks) {
    Cache c;
    run_forward(batch, params, mode, dropout_rng, hooks, c);
    if (trace) {
        trace->attention.clear();
        for (const auto& lc : c.layers) {
            std::vector<std::vector<double>> per;
            for (const auto& p : lc.probs) per.emplace_back(p.data(), p.data() + p.size());
            trace->attention.push_back(std::move(per));
        }
        trace->channel_gates.assign(c.gates.data(), c.gates.data() + c.gates.size());
        trace->x_conv.assign(c.xc.data(), c.xc.data() + c.xc.size());
        trace->x_trans.assign(c.xt.data(), c.xt.data() + c.xt.size());
    }
    return {c.y.data(), c.y.data() + c.y.size()};
}

double bce_loss(std::span<const double> y_hat, std::span<const double> labels) {
    if (y_hat.size() != labels.size() || y_hat.empty()) {
        throw ShapeError("loss needs matching non-empty predictions and labels");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < y_hat.size(); ++i) {
        const double p = std::clamp(y_hat[i], kProbClamp, 1.0 - kProbClamp);
        sum += labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
    }
    return -sum / static_cast<double>(y_hat.size());
}

LossAndGrads loss_and_grads(const features::WindowBatch& batch, const ModelParams& params,
                            Mode mode, std::mt19937_64* dropout_rng, const Hooks& hooks) {
    if (batch.labels.size() != static_cast<std::size_t>(batch.bs)) {
        throw ShapeError("training batch needs one label per window");
    }
    for (double y : batch.labels) {
        if (y != 0.0 && y != 1.0) throw DataError("labels must be 0 or 1");
    }
    Cache c;
    run_forward(batch, params, mode, dropout_rng, hooks, c);

    LossAndGrads out;
    out.y_hat.assign(c.y.data(), c.y.data() + c.y.size());
    out.loss = bce_loss(out.y_hat, batch.labels);

    // dL/dlogit = (y_hat - y) / bs, zero where the probability clamp is active.
    Eigen::VectorXd dlogit(batch.bs);
    for (int b = 0; b < batch.bs; ++b) {
        const double raw = sigmoid(c.logit(b));
        const bool clamped = raw < kProbClamp || raw > 1.0 - kProbClamp;
        dlogit(b) = clamped ? 0.0 : (raw - batch.labels[static_cast<std::size_t>(b)]) / batch.bs;
    }
    out.grads.assign(params.values.size(), 0.0);
    run_backward(c, dlogit, params, hooks, out.grads);
    return out;
}

GradCheckReport gradient_check(const ModelParams& params, int n_probes, std::uint64_t seed,
                               const Hooks& hooks, int batch_size, int sw) {
    GradCheckReport report;
    if (n_probes <= 0) {
        report.warnings.push_back("gradient check requested with no probes");
        return report;
    }
    std::mt19937_64 rng(seed);
    features::WindowBatch batch;
    batch.bs = batch_size;
    batch.sw = sw;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> ratio(0.0, 10.0);
    for (int b = 0; b < batch_size; ++b) {
        for (int t = 0; t < sw; ++t) {
            batch.values.push_back(unit(rng));
            batch.values.push_back(unit(rng));
            batch.values.push_back(ratio(rng));
        }
        batch.labels.push_back(unit(rng) < 0.5 ? 0.0 : 1.0);
    }

    const LossAndGrads analytic = loss_and_grads(batch, params, Mode::eval, nullptr, hooks);
    constexpr double h = 1e-5;
    ModelParams probe = params;
    std::vector<std::size_t> indices(params.values.size());
    std::iota(indices.begin(), indices.end(), 0);
    std::shuffle(indices.begin(), indices.end(), rng);
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(n_probes), indices.size());

    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = indices[k];
        const double saved = probe.values[i];
        probe.values[i] = saved + h;
        const double lp = bce_loss(forward(batch, probe, Mode::eval, nullptr, nullptr, hooks),
                                   batch.labels);
        probe.values[i] = saved - h;
        const double lm = bce_loss(forward(batch, probe, Mode::eval, nullptr, nullptr, hooks),
                                   batch.labels);
        probe.values[i] = saved;
        const double fd = (lp - lm) / (2.0 * h);
        const double ga = analytic.grads[i];
        const double rel =
            std::abs(ga - fd) / std::max({std::abs(ga), std::abs(fd), 1e-8});
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_tensor = params.layout.owner(i).name;
        }
    }
    report.probes = n;
    return report;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
}

TrainResult train(std::span<const features::FeatureWindow> data, const TrainConfig& train_cfg,
                  const ModelConfig& model_cfg) {
    train_cfg.validate();
#if defined(__GLIBC__)
    // Per-batch activations exceed the default mmap threshold; keep them on the heap.
    static std::once_flag heap_tuned;
    std::call_once(heap_tuned, [] {
        mallopt(M_MMAP_THRESHOLD, 256 << 20);
        mallopt(M_TRIM_THRESHOLD, 512 << 20);
    });
#endif
    if (data.empty()) throw DataError("training set is empty");
    std::size_t positives = 0;
    for (const auto& w : data) {
        if (!w.label) throw DataError("training window without a label");
        positives += *w.label == 1 ? 1 : 0;
    }
    if (positives == 0 || positives == data.size()) {
        throw DataError("training set contains a single class");
    }

    TrainResult result{ModelParams::initialize(model_cfg), {}};
    ModelParams& params = result.params;
    std::vector<double> m(params.values.size(), 0.0), v(params.values.size(), 0.0);
    std::mt19937_64 rng(train_cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    long step = 0;

    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(train_cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(train_cfg.batch_size));
            std::vector<const features::FeatureWindow*> picked;
            for (std::size_t i = begin; i < end; ++i) picked.push_back(&data[order[i]]);
            const auto batch = features::make_batch(picked, true);
            const auto lg = loss_and_grads(batch, params, Mode::train, &rng);
            loss_sum += lg.loss * static_cast<double>(batch.bs);
            for (int b = 0; b < batch.bs; ++b) {
                correct += (decide(lg.y_hat[b]) ? 1.0 : 0.0) == batch.labels[b] ? 1 : 0;
            }

            ++step;
            const double c1 = 1.0 - std::pow(train_cfg.beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(train_cfg.beta2, static_cast<double>(step));
            for (std::size_t i = 0; i < params.values.size(); ++i) {
                const double g = lg.grads[i];
                m[i] = train_cfg.beta1 * m[i] + (1.0 - train_cfg.beta1) * g;
                v[i] = train_cfg.beta2 * v[i] + (1.0 - train_cfg.beta2) * g * g;
                params.values[i] -= train_cfg.learning_rate * (m[i] / c1) /
                                    (std::sqrt(v[i] / c2) + train_cfg.adam_eps);
            }
        }
        if (!params.all_finite()) throw NonFiniteError("optimizer update");

        EpochMetrics metrics{epoch, loss_sum / static_cast<double>(data.size()),
                             static_cast<double>(correct) / static_cast<double>(data.size())};
        if (train_cfg.eval_metrics) {
            const auto preds = predict_all(data, params);
            std::vector<double> y_hat, labels;
            std::size_t ok = 0;
            for (std::size_t i = 0; i < data.size(); ++i) {
                y_hat.push_back(preds[i].y_hat);
                labels.push_back(static_cast<double>(*data[i].label));
                ok += (preds[i].decided ? 1 : 0) == *data[i].label ? 1 : 0;
            }
            metrics.loss = bce_loss(y_hat, labels);
            metrics.accuracy = static_cast<double>(ok) / static_cast<double>(data.size());
        }
        result.history.push_back(metrics);
    }
    return result;
}

Prediction predict(const features::FeatureWindow& window, const ModelParams& params) {
    const auto batch = features::make_batch(std::span<const features::FeatureWindow>(&window, 1),
                                            false);
    const double y = forward(batch, params).front();
    return {y, decide(y)};
}

std::vector<Prediction> predict_all(std::span<const features::FeatureWindow> windows,
                                    const ModelParams& params, int batch_size) {
    std::vector<Prediction> out;
    out.reserve(windows.size());
    for (std::size_t begin = 0; begin < windows.size();
         begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t n =
            std::min(windows.size() - begin, static_cast<std::size_t>(batch_size));
        const auto batch = features::make_batch(windows.subspan(begin, n), false);
        for (double y : forward(batch, params)) out.push_back({y, decide(y)});
    }
    return out;
}

namespace {

constexpr const char* kCheckpointFormat = "intentnet-v1";

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"kernel_scales", c.kernel_scales},
            {"conv_channels_per_scale", c.conv_channels_per_scale},
            {"d_model", c.d_model},
            {"n_heads", c.n_heads},
            {"n_layers", c.n_layers},
            {"ffn_dim", c.ffn_dim},
            {"attention_reduction", c.attention_reduction},
            {"head_hidden", c.head_hidden},
            {"dropout", c.dropout},
            {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.kernel_scales = j.at("kernel_scales").get<std::array<int, 3>>();
    c.conv_channels_per_scale = j.at("conv_channels_per_scale").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.attention_reduction = j.at("attention_reduction").get<int>();
    c.head_hidden = j.at("head_hidden").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& s : params.layout.slots) {
        tensors.push_back({{"name", s.name},
                           {"shape", {s.rows, s.cols}},
                           {"values", std::vector<double>(params.values.begin() + s.offset,
                                                          params.values.begin() + s.offset +
                                                              s.size())}});
    }
    nlohmann::json j{{"format", kCheckpointFormat},
                     {"config", config_to_json(params.config)},
                     {"tensors", tensors}};
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint " + path);
    out << j.dump();
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint " + path);
    try {
        const auto j = nlohmann::json::parse(in);
        if (j.value("format", std::string{}) != kCheckpointFormat) {
            throw DataError("checkpoint " + path + " is not " + kCheckpointFormat);
        }
        ModelParams p;
        p.config = config_from_json(j.at("config"));
        p.layout = ParamLayout::build(p.config);
        p.values.assign(p.layout.total, 0.0);
        std::vector<bool> filled(p.layout.slots.size(), false);
        for (const auto& t : j.at("tensors")) {
            const auto& slot = p.layout.find(t.at("name").get<std::string>());
            const auto shape = t.at("shape").get<std::array<int, 2>>();
            const auto vals = t.at("values").get<std::vector<double>>();
            if (shape[0] != slot.rows || shape[1] != slot.cols || vals.size() != slot.size()) {
                throw DataError("checkpoint tensor '" + slot.name + "' has the wrong shape");
            }
            std::copy(vals.begin(), vals.end(), p.values.begin() + slot.offset);
            filled[static_cast<std::size_t>(&slot - p.layout.slots.data())] = true;
        }
        if (std::find(filled.begin(), filled.end(), false) != filled.end()) {
            throw DataError("checkpoint " + path + " is missing tensors");
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint " + path + ": " + e.what());
    } catch (const ConfigError& e) {
        throw DataError("bad checkpoint " + path + ": " + e.what());
    }
}

}  // namespace gaze::net
