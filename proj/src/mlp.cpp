#include "reqedit/mlp.hpp"

#include <algorithm>
#include <cmath>

namespace reqedit {

NormKind norm_from_name(const std::string& name) {
    if (name == "batch") return NormKind::batch;
    if (name == "layer") return NormKind::layer;
    if (name == "none") return NormKind::none;
    throw ValidationError("unknown norm: " + name);
}

const char* norm_name(NormKind kind) {
    switch (kind) {
        case NormKind::batch: return "batch";
        case NormKind::layer: return "layer";
        case NormKind::none: return "none";
    }
    return "?";
}

int64_t MlpConfig::width(int64_t layer) const {
    if (layer == 0) return d_in;
    if (layer <= depth()) return hidden[static_cast<size_t>(layer - 1)];
    if (layer == depth() + 1) return out_features;
    throw ValidationError("layer index " + std::to_string(layer) + " out of range");
}

void MlpConfig::validate() const {
    if (d_in <= 0) throw ValidationError("config: d_in must be positive");
    if (out_features < 2) throw ValidationError("config: out_features must be at least 2");
    if (hidden.empty()) throw ValidationError("config: at least one hidden layer");
    for (size_t i = 0; i + 1 < hidden.size(); ++i)
        if (hidden[i] > hidden[i + 1])
            throw ValidationError("config: hidden widths must be non-decreasing");
    for (int64_t h : hidden)
        if (h <= 0) throw ValidationError("config: hidden width must be positive");
    if (dropout < 0 || dropout >= 1) throw ValidationError("config: dropout out of range");
    if (skip_source.size() != hidden.size())
        throw ValidationError("config: skip_source must have one entry per hidden layer");
    for (size_t i = 0; i < skip_source.size(); ++i) {
        int src = skip_source[i];
        if (src < -1 || src > static_cast<int>(i) - 1)
            throw ValidationError("config: skip into hidden layer " + std::to_string(i + 1) +
                                  " must come from a layer that bypasses at least one, got " + std::to_string(src));
    }
    if (batch_size <= 0) throw ValidationError("config: batch_size must be positive");
}

MlpModel MlpModel::init(const MlpConfig& config) {
    config.validate();
    MlpModel m;
    m.config = config;
    Rng rng(mix_seed(config.seed, 0x1217ULL));
    int64_t L = config.depth();

    auto uniform_matrix = [&](int64_t rows, int64_t cols) {
        double bound = 1.0 / std::sqrt(static_cast<double>(cols));
        Tensor t = Tensor::zeros({rows, cols});
        for (double& x : t.v) x = rng.uniform(-bound, bound);
        return t;
    };

    for (int64_t l = 0; l <= L; ++l) {
        int64_t fan_in = config.width(l), fan_out = config.width(l + 1);
        m.W.push_back(uniform_matrix(fan_out, fan_in));
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Tensor bias = Tensor::zeros({fan_out});
        for (double& x : bias.v) x = rng.uniform(-bound, bound);
        m.b.push_back(std::move(bias));
    }
    if (config.norm != NormKind::none) {
        for (int64_t l = 1; l <= L; ++l) {
            m.gamma.push_back(Tensor::full({config.width(l)}, 1.0));
            m.beta.push_back(Tensor::zeros({config.width(l)}));
        }
        if (config.norm == NormKind::batch) {
            for (int64_t l = 1; l <= L; ++l) {
                m.run_mean.push_back(Tensor::zeros({config.width(l)}));
                m.run_var.push_back(Tensor::full({config.width(l)}, 1.0));
            }
        }
    }
    for (int64_t l = 1; l <= L; ++l) {
        int src = config.skip_source[static_cast<size_t>(l - 1)];
        m.skipW.push_back(src >= 0 ? uniform_matrix(config.width(l), config.width(src)) : Tensor());
    }
    if (config.norm != NormKind::batch) m.folded = true;
    return m;
}

void MlpModel::validate() const {
    config.validate();
    int64_t L = config.depth();
    if (static_cast<int64_t>(W.size()) != L + 1 || static_cast<int64_t>(b.size()) != L + 1)
        throw ValidationError("model: expected " + std::to_string(L + 1) + " linear layers");
    for (int64_t l = 0; l <= L; ++l) {
        if (W[static_cast<size_t>(l)].shape != std::vector<int64_t>{config.width(l + 1), config.width(l)})
            throw ValidationError("model: W" + std::to_string(l + 1) + " shape " +
                                  W[static_cast<size_t>(l)].shape_str());
        if (b[static_cast<size_t>(l)].numel() != config.width(l + 1))
            throw ValidationError("model: b" + std::to_string(l + 1) + " length");
    }
    if (config.norm != NormKind::none &&
        (static_cast<int64_t>(gamma.size()) != L || static_cast<int64_t>(beta.size()) != L))
        throw ValidationError("model: norm affine count");
    if (static_cast<int64_t>(skipW.size()) != L) throw ValidationError("model: skip entry count");
    for (int64_t l = 1; l <= L; ++l) {
        int src = config.skip_source[static_cast<size_t>(l - 1)];
        const Tensor& P = skipW[static_cast<size_t>(l - 1)];
        if (src < 0 && P.numel() != 0)
            throw ValidationError("model: unexpected skip weights into layer " + std::to_string(l));
        if (src >= 0 && P.shape != std::vector<int64_t>{config.width(l), config.width(src)})
            throw ValidationError("model: skip into layer " + std::to_string(l) + " has shape " + P.shape_str());
    }
}

int64_t MlpModel::n_edges() const {
    int64_t total = 0;
    for (const Tensor& w : W) total += w.numel();
    for (const Tensor& p : skipW) total += p.numel();
    return total;
}

void fold_norm(MlpModel& m) {
    if (m.folded) return;
    if (m.config.norm == NormKind::batch) {
        for (size_t l = 0; l < m.gamma.size(); ++l) {
            Tensor& g = m.gamma[l];
            Tensor& be = m.beta[l];
            for (size_t j = 0; j < g.v.size(); ++j) {
                double a = g.v[j] / std::sqrt(m.run_var[l].v[j] + kNormEps);
                be.v[j] = be.v[j] - a * m.run_mean[l].v[j];
                g.v[j] = a;
            }
        }
        m.run_mean.clear();
        m.run_var.clear();
    }
    m.folded = true;
}

Tensor MlpModel::forward(const Tensor& x) const {
    if (x.ndim() != 2 || x.shape[1] != config.d_in)
        throw ValidationError("forward: input " + x.shape_str() + " vs d_in " + std::to_string(config.d_in));
    if (config.norm == NormKind::batch && !folded)
        throw ValidationError("forward: batch-norm model must be folded for eval");
    int64_t L = config.depth();
    std::vector<Tensor> acts;
    acts.push_back(x);
    for (int64_t l = 1; l <= L; ++l) {
        Tensor z = ops::add(ops::matmul(acts.back(), W[static_cast<size_t>(l - 1)], false, true),
                            b[static_cast<size_t>(l - 1)]);
        int src = config.skip_source[static_cast<size_t>(l - 1)];
        if (src >= 0)
            z = ops::add(z, ops::matmul(acts[static_cast<size_t>(src)], skipW[static_cast<size_t>(l - 1)], false, true));
        if (config.norm == NormKind::batch)
            z = ops::batch_norm_eval(z, gamma[static_cast<size_t>(l - 1)], beta[static_cast<size_t>(l - 1)]);
        else if (config.norm == NormKind::layer)
            z = ops::layer_norm(z, gamma[static_cast<size_t>(l - 1)], beta[static_cast<size_t>(l - 1)], kNormEps);
        acts.push_back(ops::activation(z, config.activation));
    }
    return ops::add(ops::matmul(acts.back(), W[static_cast<size_t>(L)], false, true), b[static_cast<size_t>(L)]);
}

double MlpModel::accuracy(const Tensor& x, const std::vector<int>& labels) const {
    Tensor logits = forward(x);
    int64_t correct = 0;
    for (int64_t i = 0; i < logits.shape[0]; ++i) {
        int64_t arg = 0;
        for (int64_t j = 1; j < logits.shape[1]; ++j)
            if (logits.at(i, j) > logits.at(i, arg)) arg = j;
        if (arg == labels[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.shape[0]);
}

std::vector<NodeId> MlpTapeParams::all() const {
    std::vector<NodeId> out;
    out.insert(out.end(), W.begin(), W.end());
    out.insert(out.end(), b.begin(), b.end());
    out.insert(out.end(), gamma.begin(), gamma.end());
    out.insert(out.end(), beta.begin(), beta.end());
    for (NodeId id : skipW)
        if (id >= 0) out.push_back(id);
    return out;
}

MlpTapeParams register_mlp_params(Tape& tape, const MlpModel& m, bool requires_grad) {
    MlpTapeParams p;
    for (const Tensor& w : m.W) p.W.push_back(tape.leaf(w, requires_grad));
    for (const Tensor& bias : m.b) p.b.push_back(tape.leaf(bias, requires_grad));
    for (const Tensor& g : m.gamma) p.gamma.push_back(tape.leaf(g, requires_grad));
    for (const Tensor& be : m.beta) p.beta.push_back(tape.leaf(be, requires_grad));
    for (const Tensor& s : m.skipW)
        p.skipW.push_back(s.numel() > 0 ? tape.leaf(s, requires_grad) : -1);
    return p;
}

namespace {

NodeId batch_norm_train(Tape& t, NodeId z, NodeId gamma, NodeId beta, Tensor* mean_out, Tensor* var_out) {
    NodeId mu = t.mean_axis(z, 0);
    NodeId centered = t.sub(z, mu);
    NodeId var = t.mean_axis(t.mul(centered, centered), 0);
    int64_t c = t.value(var).numel();
    NodeId inv = t.div(t.constant(Tensor::full({c}, 1.0)), t.sqrt(t.add(var, t.constant(Tensor::scalar(kNormEps)))));
    NodeId xhat = t.scale_cols(centered, inv);
    if (mean_out) *mean_out = t.value(mu);
    if (var_out) *var_out = t.value(var);
    return t.add(t.scale_cols(xhat, gamma), beta);
}

constexpr double kRunningMomentum = 0.1;

}  // namespace

NodeId mlp_train_forward(Tape& t, MlpModel& m, const MlpTapeParams& p, NodeId x, Rng& dropout_rng) {
    const MlpConfig& cfg = m.config;
    if (cfg.norm == NormKind::batch && m.folded)
        throw ValidationError("train forward: batch-norm model already folded");
    int64_t L = cfg.depth();
    std::vector<NodeId> acts;
    acts.push_back(x);
    for (int64_t l = 1; l <= L; ++l) {
        size_t i = static_cast<size_t>(l - 1);
        NodeId z = t.add(t.matmul(acts.back(), p.W[i], false, true), p.b[i]);
        if (cfg.skip_source[i] >= 0)
            z = t.add(z, t.matmul(acts[static_cast<size_t>(cfg.skip_source[i])], p.skipW[i], false, true));
        if (cfg.norm == NormKind::batch) {
            Tensor mu, var;
            z = batch_norm_train(t, z, p.gamma[i], p.beta[i], &mu, &var);
            for (size_t j = 0; j < mu.v.size(); ++j) {
                m.run_mean[i].v[j] = (1.0 - kRunningMomentum) * m.run_mean[i].v[j] + kRunningMomentum * mu.v[j];
                m.run_var[i].v[j] = (1.0 - kRunningMomentum) * m.run_var[i].v[j] + kRunningMomentum * var.v[j];
            }
        } else if (cfg.norm == NormKind::layer) {
            z = t.layer_norm(z, p.gamma[i], p.beta[i], kNormEps);
        }
        NodeId h = t.activation(z, cfg.activation);
        if (cfg.dropout > 0) h = t.dropout(h, cfg.dropout, true, dropout_rng);
        acts.push_back(h);
    }
    size_t out = static_cast<size_t>(L);
    return t.add(t.matmul(acts.back(), p.W[out], false, true), p.b[out]);
}

NodeId mlp_eval_forward(Tape& t, const MlpConfig& cfg, const MlpTapeParams& p, NodeId x) {
    int64_t L = cfg.depth();
    std::vector<NodeId> acts;
    acts.push_back(x);
    for (int64_t l = 1; l <= L; ++l) {
        size_t i = static_cast<size_t>(l - 1);
        NodeId z = t.add(t.matmul(acts.back(), p.W[i], false, true), p.b[i]);
        if (cfg.skip_source[i] >= 0)
            z = t.add(z, t.matmul(acts[static_cast<size_t>(cfg.skip_source[i])], p.skipW[i], false, true));
        if (cfg.norm == NormKind::batch)
            z = t.batch_norm_eval(z, p.gamma[i], p.beta[i]);
        else if (cfg.norm == NormKind::layer)
            z = t.layer_norm(z, p.gamma[i], p.beta[i], kNormEps);
        acts.push_back(t.activation(z, cfg.activation));
    }
    size_t out = static_cast<size_t>(L);
    return t.add(t.matmul(acts.back(), p.W[out], false, true), p.b[out]);
}

}  // namespace reqedit
