#include "reqedit/tape.hpp"

#include <cmath>
#include <cstdio>

namespace reqedit {

NodeId Tape::push(Node n) {
    for (NodeId i : n.in)
        if (at(i).needs_grad) { n.needs_grad = true; break; }
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::Node& Tape::at(NodeId id) {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) throw ValidationError("tape: bad node id " + std::to_string(id));
    return nodes_[static_cast<size_t>(id)];
}

const Tape::Node& Tape::at(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) throw ValidationError("tape: bad node id " + std::to_string(id));
    return nodes_[static_cast<size_t>(id)];
}

const Tensor& Tape::value(NodeId id) const { return at(id).out; }

const Tensor& Tape::grad(NodeId id) const {
    const Node& n = at(id);
    if (!n.needs_grad) throw ValidationError("tape: node " + std::to_string(id) + " does not carry a gradient");
    return n.grad;
}

bool Tape::needs_grad(NodeId id) const { return at(id).needs_grad; }

NodeId Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = Op::leaf;
    n.out = std::move(value);
    n.needs_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
    Node n;
    n.op = Op::matmul;
    n.in = {a, b};
    n.trans_a = trans_a;
    n.trans_b = trans_b;
    n.out = ops::matmul(value(a), value(b), trans_a, trans_b);
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    Node n;
    n.op = Op::add;
    n.in = {a, b};
    n.out = ops::add(value(a), value(b));
    return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
    Node n;
    n.op = Op::sub;
    n.in = {a, b};
    n.out = ops::sub(value(a), value(b));
    return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    Node n;
    n.op = Op::mul;
    n.in = {a, b};
    n.out = ops::mul(value(a), value(b));
    return push(std::move(n));
}

NodeId Tape::scalar_mul(NodeId a, double c) {
    Node n;
    n.op = Op::scalar_mul;
    n.in = {a};
    n.c = c;
    n.out = ops::scalar_mul(value(a), c);
    return push(std::move(n));
}

NodeId Tape::activation(NodeId a, Activation kind) {
    Node n;
    n.op = Op::activation;
    n.in = {a};
    n.act = kind;
    n.out = ops::activation(value(a), kind);
    return push(std::move(n));
}

NodeId Tape::softmax(NodeId a, int axis) {
    Node n;
    n.op = Op::softmax;
    n.in = {a};
    n.axis = axis;
    n.out = ops::softmax(value(a), axis);
    return push(std::move(n));
}

NodeId Tape::log(NodeId a) {
    Node n;
    n.op = Op::log_;
    n.in = {a};
    n.out = ops::log(value(a));
    return push(std::move(n));
}

NodeId Tape::exp(NodeId a) {
    Node n;
    n.op = Op::exp_;
    n.in = {a};
    n.out = ops::exp(value(a));
    return push(std::move(n));
}

NodeId Tape::sqrt(NodeId a) {
    Node n;
    n.op = Op::sqrt_;
    n.in = {a};
    n.out = ops::sqrt(value(a));
    return push(std::move(n));
}

NodeId Tape::div(NodeId a, NodeId b) {
    Node n;
    n.op = Op::div_;
    n.in = {a, b};
    n.out = ops::div(value(a), value(b));
    return push(std::move(n));
}

NodeId Tape::abs(NodeId a) {
    Node n;
    n.op = Op::abs_;
    n.in = {a};
    n.out = ops::abs(value(a));
    return push(std::move(n));
}

NodeId Tape::mean_all(NodeId a) {
    Node n;
    n.op = Op::mean_all;
    n.in = {a};
    n.out = ops::mean_all(value(a));
    return push(std::move(n));
}

NodeId Tape::sum_all(NodeId a) {
    Node n;
    n.op = Op::sum_all;
    n.in = {a};
    n.out = ops::sum_all(value(a));
    return push(std::move(n));
}

NodeId Tape::max_all(NodeId a) {
    Node n;
    n.op = Op::max_all;
    n.in = {a};
    n.out = ops::max_all(value(a));
    return push(std::move(n));
}

NodeId Tape::mean_axis(NodeId a, int axis) {
    Node n;
    n.op = Op::mean_axis;
    n.in = {a};
    n.axis = axis;
    n.out = ops::mean_axis(value(a), axis);
    return push(std::move(n));
}

NodeId Tape::sum_axis(NodeId a, int axis) {
    Node n;
    n.op = Op::sum_axis;
    n.in = {a};
    n.axis = axis;
    n.out = ops::sum_axis(value(a), axis);
    return push(std::move(n));
}

NodeId Tape::concat(const std::vector<NodeId>& parts, int axis) {
    Node n;
    n.op = Op::concat;
    n.in = parts;
    n.axis = axis;
    std::vector<const Tensor*> vals;
    vals.reserve(parts.size());
    for (NodeId p : parts) vals.push_back(&value(p));
    n.out = ops::concat(vals, axis);
    return push(std::move(n));
}

NodeId Tape::layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps) {
    Node n;
    n.op = Op::layer_norm;
    n.in = {x, gamma, beta};
    n.c = eps;
    n.out = ops::layer_norm(value(x), value(gamma), value(beta), eps);
    return push(std::move(n));
}

NodeId Tape::batch_norm_eval(NodeId x, NodeId scale, NodeId shift) {
    Node n;
    n.op = Op::batch_norm_eval;
    n.in = {x, scale, shift};
    n.out = ops::batch_norm_eval(value(x), value(scale), value(shift));
    return push(std::move(n));
}

NodeId Tape::dropout(NodeId x, double p, bool train, Rng& rng) {
    Node n;
    n.op = Op::dropout;
    n.in = {x};
    n.out = ops::dropout(value(x), p, train, rng, &n.aux);
    return push(std::move(n));
}

NodeId Tape::cross_entropy(NodeId logits, std::vector<int> labels) {
    Node n;
    n.op = Op::cross_entropy;
    n.in = {logits};
    n.labels = std::move(labels);
    n.out = ops::cross_entropy(value(logits), n.labels);
    return push(std::move(n));
}

NodeId Tape::reshape(NodeId a, std::vector<int64_t> shape) {
    Node n;
    n.op = Op::reshape;
    n.in = {a};
    n.out = ops::reshape(value(a), shape);
    return push(std::move(n));
}

NodeId Tape::gather_rows(NodeId a, std::vector<int64_t> rows) {
    Node n;
    n.op = Op::gather_rows;
    n.in = {a};
    n.idx = std::move(rows);
    n.out = ops::gather_rows(value(a), n.idx);
    return push(std::move(n));
}

NodeId Tape::scatter_add_rows(NodeId src, std::vector<int64_t> dst, int64_t n_rows) {
    Node n;
    n.op = Op::scatter_add_rows;
    n.in = {src};
    n.idx = std::move(dst);
    n.n_rows = n_rows;
    n.out = ops::scatter_add_rows(value(src), n.idx, n_rows);
    return push(std::move(n));
}

NodeId Tape::block(NodeId a, int64_t r0, int64_t r1, int64_t c0, int64_t c1) {
    Node n;
    n.op = Op::block;
    n.in = {a};
    n.idx = {r0, r1, c0, c1};
    n.out = ops::block(value(a), r0, r1, c0, c1);
    return push(std::move(n));
}

NodeId Tape::scale_cols(NodeId a, NodeId m) {
    Node n;
    n.op = Op::scale_cols;
    n.in = {a, m};
    n.out = ops::scale_cols(value(a), value(m));
    return push(std::move(n));
}

NodeId Tape::ste_hard(NodeId soft) {
    Node n;
    n.op = Op::ste_hard;
    n.in = {soft};
    n.out = ops::harden(value(soft));
    return push(std::move(n));
}

void Tape::accumulate(NodeId id, const Tensor& g) {
    Node& n = at(id);
    if (!n.needs_grad) return;
    if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.out.shape);
    if (!n.grad.same_shape(g))
        throw ValidationError("tape: gradient shape " + g.shape_str() + " does not match node " + n.out.shape_str());
    for (size_t i = 0; i < g.v.size(); ++i) n.grad.v[i] += g.v[i];
}

void Tape::backward(NodeId loss) {
    Node& top = at(loss);
    if (!top.out.is_scalar()) throw ValidationError("backward: loss must be scalar, got " + top.out.shape_str());
    if (!top.needs_grad) throw ValidationError("backward: loss does not depend on any gradient leaf");
    for (NodeId i = 0; i <= loss; ++i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.needs_grad) n.grad = Tensor::zeros(n.out.shape);
    }
    top.grad = Tensor::scalar(1.0);
    for (NodeId i = loss; i >= 0; --i) {
        const Node& n = nodes_[static_cast<size_t>(i)];
        if (n.needs_grad && n.op != Op::leaf) backprop_node(i);
    }
}

void Tape::backprop_node(NodeId id) {
    const Node& n = at(id);
    const Tensor& g = n.grad;
    auto in_val = [&](size_t k) -> const Tensor& { return value(n.in[k]); };
    auto in_needs = [&](size_t k) { return at(n.in[k]).needs_grad; };

    switch (n.op) {
        case Op::leaf:
            break;
        case Op::matmul: {
            const Tensor& a = in_val(0);
            const Tensor& b = in_val(1);
            if (in_needs(0)) {
                Tensor ga = n.trans_a
                    ? (n.trans_b ? ops::matmul(b, g, true, true) : ops::matmul(b, g, false, true))
                    : (n.trans_b ? ops::matmul(g, b, false, false) : ops::matmul(g, b, false, true));
                accumulate(n.in[0], ga);
            }
            if (in_needs(1)) {
                Tensor gb = n.trans_b
                    ? (n.trans_a ? ops::matmul(g, a, true, true) : ops::matmul(g, a, true, false))
                    : (n.trans_a ? ops::matmul(a, g, false, false) : ops::matmul(a, g, true, false));
                accumulate(n.in[1], gb);
            }
            break;
        }
        case Op::add: {
            const Tensor& a = in_val(0);
            const Tensor& b = in_val(1);
            if (in_needs(0)) accumulate(n.in[0], g);
            if (in_needs(1)) {
                if (a.same_shape(b)) accumulate(n.in[1], g);
                else if (b.is_scalar()) accumulate(n.in[1], ops::sum_all(g));
                else accumulate(n.in[1], ops::sum_axis(g, 0));
            }
            break;
        }
        case Op::sub: {
            const Tensor& a = in_val(0);
            const Tensor& b = in_val(1);
            if (in_needs(0)) accumulate(n.in[0], g);
            if (in_needs(1)) {
                Tensor ng = ops::scalar_mul(g, -1.0);
                if (a.same_shape(b)) accumulate(n.in[1], ng);
                else if (b.is_scalar()) accumulate(n.in[1], ops::sum_all(ng));
                else accumulate(n.in[1], ops::sum_axis(ng, 0));
            }
            break;
        }
        case Op::mul: {
            const Tensor& a = in_val(0);
            const Tensor& b = in_val(1);
            if (b.is_scalar() && !a.is_scalar()) {
                if (in_needs(0)) accumulate(n.in[0], ops::mul(g, b));
                if (in_needs(1)) accumulate(n.in[1], ops::sum_all(ops::mul(g, a)));
            } else {
                if (in_needs(0)) accumulate(n.in[0], ops::mul(g, b));
                if (in_needs(1)) accumulate(n.in[1], ops::mul(g, a));
            }
            break;
        }
        case Op::scalar_mul: {
            if (in_needs(0)) accumulate(n.in[0], ops::scalar_mul(g, n.c));
            break;
        }
        case Op::activation: {
            if (!in_needs(0)) break;
            const Tensor& x = in_val(0);
            Tensor gx = g;
            for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] *= activation_grad(n.act, x.v[i]);
            accumulate(n.in[0], gx);
            break;
        }
        case Op::softmax: {
            if (!in_needs(0)) break;
            const Tensor& y = n.out;
            Tensor gx = g;
            if (y.ndim() == 1) {
                double dot = 0;
                for (size_t j = 0; j < y.v.size(); ++j) dot += g.v[j] * y.v[j];
                for (size_t j = 0; j < y.v.size(); ++j) gx.v[j] = y.v[j] * (g.v[j] - dot);
            } else {
                int64_t c = y.shape[1];
                for (int64_t r = 0; r < y.shape[0]; ++r) {
                    double dot = 0;
                    for (int64_t j = 0; j < c; ++j) dot += g.at(r, j) * y.at(r, j);
                    for (int64_t j = 0; j < c; ++j) gx.at(r, j) = y.at(r, j) * (g.at(r, j) - dot);
                }
            }
            accumulate(n.in[0], gx);
            break;
        }
        case Op::log_: {
            if (in_needs(0)) accumulate(n.in[0], ops::div(g, in_val(0)));
            break;
        }
        case Op::exp_: {
            if (in_needs(0)) accumulate(n.in[0], ops::mul(g, n.out));
            break;
        }
        case Op::sqrt_: {
            if (!in_needs(0)) break;
            Tensor gx = g;
            for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] *= 0.5 / n.out.v[i];
            accumulate(n.in[0], gx);
            break;
        }
        case Op::div_: {
            const Tensor& a = in_val(0);
            const Tensor& b = in_val(1);
            if (in_needs(0)) accumulate(n.in[0], ops::div(g, b));
            if (in_needs(1)) {
                if (b.is_scalar()) {
                    double s = 0;
                    for (size_t i = 0; i < g.v.size(); ++i) s -= g.v[i] * a.v[i];
                    accumulate(n.in[1], Tensor::scalar(s / (b.v[0] * b.v[0])));
                } else {
                    Tensor gb = g;
                    for (size_t i = 0; i < gb.v.size(); ++i) gb.v[i] *= -a.v[i] / (b.v[i] * b.v[i]);
                    accumulate(n.in[1], gb);
                }
            }
            break;
        }
        case Op::abs_: {
            if (!in_needs(0)) break;
            const Tensor& x = in_val(0);
            Tensor gx = g;
            for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] *= x.v[i] > 0 ? 1.0 : (x.v[i] < 0 ? -1.0 : 0.0);
            accumulate(n.in[0], gx);
            break;
        }
        case Op::mean_all: {
            if (!in_needs(0)) break;
            const Tensor& x = in_val(0);
            accumulate(n.in[0], Tensor::full(x.shape, g.v[0] / static_cast<double>(x.numel())));
            break;
        }
        case Op::sum_all: {
            if (in_needs(0)) accumulate(n.in[0], Tensor::full(in_val(0).shape, g.v[0]));
            break;
        }
        case Op::max_all: {
            if (!in_needs(0)) break;
            const Tensor& x = in_val(0);
            Tensor gx = Tensor::zeros(x.shape);
            size_t arg = 0;
            for (size_t i = 1; i < x.v.size(); ++i)
                if (x.v[i] > x.v[arg]) arg = i;
            gx.v[arg] = g.v[0];
            accumulate(n.in[0], gx);
            break;
        }
        case Op::mean_axis:
        case Op::sum_axis: {
            if (!in_needs(0)) break;
            const Tensor& x = in_val(0);
            int64_t r = x.shape[0], c = x.shape[1];
            double scale = 1.0;
            if (n.op == Op::mean_axis) scale = 1.0 / static_cast<double>(n.axis == 0 ? r : c);
            Tensor gx = Tensor::zeros(x.shape);
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j)
                    gx.at(i, j) = g.v[static_cast<size_t>(n.axis == 0 ? j : i)] * scale;
            accumulate(n.in[0], gx);
            break;
        }
        case Op::concat: {
            if (n.out.ndim() == 1 || n.axis == 0) {
                int64_t off = 0;
                for (NodeId p : n.in) {
                    const Tensor& part = value(p);
                    if (at(p).needs_grad) {
                        Tensor gp = Tensor::zeros(part.shape);
                        std::copy(g.v.begin() + off, g.v.begin() + off + part.numel(), gp.v.begin());
                        accumulate(p, gp);
                    }
                    off += part.numel();
                }
            } else {
                int64_t col = 0;
                for (NodeId p : n.in) {
                    const Tensor& part = value(p);
                    int64_t pc = part.shape[1];
                    if (at(p).needs_grad)
                        accumulate(p, ops::block(g, 0, g.shape[0], col, col + pc));
                    col += pc;
                }
            }
            break;
        }
        case Op::layer_norm: {
            const Tensor& x = in_val(0);
            const Tensor& gamma = in_val(1);
            int64_t r = x.shape[0], c = x.shape[1];
            double eps = n.c;
            Tensor gx = Tensor::zeros(x.shape);
            Tensor ggamma = Tensor::zeros(gamma.shape);
            Tensor gbeta = Tensor::zeros(gamma.shape);
            for (int64_t i = 0; i < r; ++i) {
                double mu = 0, var = 0;
                for (int64_t j = 0; j < c; ++j) mu += x.at(i, j);
                mu /= static_cast<double>(c);
                for (int64_t j = 0; j < c; ++j) var += (x.at(i, j) - mu) * (x.at(i, j) - mu);
                var /= static_cast<double>(c);
                double inv = 1.0 / std::sqrt(var + eps);
                double d_mean = 0, dxhat_dot = 0;
                for (int64_t j = 0; j < c; ++j) {
                    double xhat = (x.at(i, j) - mu) * inv;
                    double d = g.at(i, j) * gamma.v[static_cast<size_t>(j)];
                    ggamma.v[static_cast<size_t>(j)] += g.at(i, j) * xhat;
                    gbeta.v[static_cast<size_t>(j)] += g.at(i, j);
                    d_mean += d;
                    dxhat_dot += d * xhat;
                }
                d_mean /= static_cast<double>(c);
                dxhat_dot /= static_cast<double>(c);
                for (int64_t j = 0; j < c; ++j) {
                    double xhat = (x.at(i, j) - mu) * inv;
                    double d = g.at(i, j) * gamma.v[static_cast<size_t>(j)];
                    gx.at(i, j) = inv * (d - d_mean - xhat * dxhat_dot);
                }
            }
            if (in_needs(0)) accumulate(n.in[0], gx);
            if (in_needs(1)) accumulate(n.in[1], ggamma);
            if (in_needs(2)) accumulate(n.in[2], gbeta);
            break;
        }
        case Op::batch_norm_eval: {
            const Tensor& x = in_val(0);
            const Tensor& scale = in_val(1);
            int64_t c = x.shape[1];
            if (in_needs(0)) {
                Tensor gx = g;
                for (int64_t i = 0; i < x.shape[0]; ++i)
                    for (int64_t j = 0; j < c; ++j) gx.at(i, j) *= scale.v[static_cast<size_t>(j)];
                accumulate(n.in[0], gx);
            }
            if (in_needs(1)) {
                Tensor gs = Tensor::zeros(scale.shape);
                for (int64_t i = 0; i < x.shape[0]; ++i)
                    for (int64_t j = 0; j < c; ++j) gs.v[static_cast<size_t>(j)] += g.at(i, j) * x.at(i, j);
                accumulate(n.in[1], gs);
            }
            if (in_needs(2)) accumulate(n.in[2], ops::sum_axis(g, 0));
            break;
        }
        case Op::dropout: {
            if (in_needs(0)) accumulate(n.in[0], ops::mul(g, n.aux));
            break;
        }
        case Op::cross_entropy: {
            if (!in_needs(0)) break;
            const Tensor& logits = in_val(0);
            Tensor probs = ops::softmax(logits, 1);
            int64_t nr = logits.shape[0];
            double gs = g.v[0] / static_cast<double>(nr);
            for (int64_t i = 0; i < nr; ++i)
                probs.at(i, n.labels[static_cast<size_t>(i)]) -= 1.0;
            accumulate(n.in[0], ops::scalar_mul(probs, gs));
            break;
        }
        case Op::reshape: {
            if (in_needs(0)) accumulate(n.in[0], ops::reshape(g, in_val(0).shape));
            break;
        }
        case Op::gather_rows: {
            if (in_needs(0)) accumulate(n.in[0], ops::scatter_add_rows(g, n.idx, in_val(0).shape[0]));
            break;
        }
        case Op::scatter_add_rows: {
            if (in_needs(0)) accumulate(n.in[0], ops::gather_rows(g, n.idx));
            break;
        }
        case Op::block: {
            if (!in_needs(0)) break;
            const Tensor& x = in_val(0);
            Tensor gx = Tensor::zeros(x.shape);
            for (int64_t i = n.idx[0]; i < n.idx[1]; ++i)
                for (int64_t j = n.idx[2]; j < n.idx[3]; ++j)
                    gx.at(i, j) = g.at(i - n.idx[0], j - n.idx[2]);
            accumulate(n.in[0], gx);
            break;
        }
        case Op::scale_cols: {
            const Tensor& a = in_val(0);
            const Tensor& m = in_val(1);
            if (in_needs(0)) accumulate(n.in[0], ops::scale_cols(g, m));
            if (in_needs(1)) {
                Tensor gm = Tensor::zeros(m.shape);
                int64_t c = a.shape[1];
                for (int64_t i = 0; i < a.shape[0]; ++i)
                    for (int64_t j = 0; j < c; ++j) gm.v[static_cast<size_t>(j)] += g.at(i, j) * a.at(i, j);
                accumulate(n.in[1], gm);
            }
            break;
        }
        case Op::ste_hard: {
            if (in_needs(0)) accumulate(n.in[0], g);
            break;
        }
    }
}

void AdamState::init(const std::vector<Tensor*>& params) {
    t = 0;
    m.clear();
    v.clear();
    for (const Tensor* p : params) {
        m.push_back(Tensor::zeros(p->shape));
        v.push_back(Tensor::zeros(p->shape));
    }
}

bool AdamState::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size() || params.size() != m.size())
        throw ValidationError("adam: " + std::to_string(params.size()) + " params vs " + std::to_string(grads.size()) +
                              " grads with " + std::to_string(m.size()) + " slots");
    for (const Tensor* g : grads)
        if (!g->all_finite()) {
            std::fprintf(stderr, "warning: non-finite gradient, optimizer step skipped\n");
            return false;
        }
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = *grads[i];
        if (!p.same_shape(g)) throw ValidationError("adam: grad shape " + g.shape_str() + " vs param " + p.shape_str());
        for (size_t j = 0; j < p.v.size(); ++j) {
            m[i].v[j] = beta1 * m[i].v[j] + (1.0 - beta1) * g.v[j];
            v[i].v[j] = beta2 * v[i].v[j] + (1.0 - beta2) * g.v[j] * g.v[j];
            double mhat = m[i].v[j] / bc1;
            double vhat = v[i].v[j] / bc2;
            p.v[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.v[j]);
        }
    }
    return true;
}

}  // namespace reqedit
