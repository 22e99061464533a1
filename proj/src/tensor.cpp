#include "reqedit/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace reqedit {

namespace {

int64_t shape_numel(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

[[noreturn]] void shape_fail(const std::string& op, const Tensor& a) {
    throw ValidationError(op + ": bad shape " + a.shape_str());
}

[[noreturn]] void shape_fail(const std::string& op, const Tensor& a, const Tensor& b) {
    throw ValidationError(op + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

using MatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MatMapMut = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
    if (shape_numel(shape) != static_cast<int64_t>(v.size()))
        throw ValidationError("tensor: " + shape_str() + " does not hold " + std::to_string(v.size()) + " values");
}

Tensor Tensor::zeros(std::vector<int64_t> s) {
    Tensor t;
    t.shape = std::move(s);
    t.v.assign(static_cast<size_t>(shape_numel(t.shape)), 0.0);
    return t;
}

Tensor Tensor::full(std::vector<int64_t> s, double value) {
    Tensor t = zeros(std::move(s));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
}

Tensor Tensor::vec(std::vector<double> data) {
    Tensor t;
    t.shape = {static_cast<int64_t>(data.size())};
    t.v = std::move(data);
    return t;
}

bool Tensor::all_finite() const {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Activation activation_from_name(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "gelu") return Activation::gelu;
    if (name == "tanh") return Activation::tanh;
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "leaky_relu") return Activation::leaky_relu;
    if (name == "identity") return Activation::identity;
    throw ValidationError("unknown activation: " + name);
}

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::gelu: return "gelu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::identity: return "identity";
    }
    return "?";
}

static constexpr double kLeakySlope = 0.01;
static constexpr double kInvSqrt2 = 0.7071067811865475244;
static constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double apply_activation(Activation a, double x) {
    switch (a) {
        case Activation::relu: return x > 0 ? x : 0.0;
        case Activation::gelu: return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
        case Activation::tanh: return std::tanh(x);
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
        case Activation::leaky_relu: return x > 0 ? x : kLeakySlope * x;
        case Activation::identity: return x;
    }
    return x;
}

double activation_grad(Activation a, double x) {
    switch (a) {
        case Activation::relu: return x > 0 ? 1.0 : 0.0;
        case Activation::gelu: {
            double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        }
        case Activation::tanh: {
            double t = std::tanh(x);
            return 1.0 - t * t;
        }
        case Activation::sigmoid: {
            double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 - s);
        }
        case Activation::leaky_relu: return x > 0 ? 1.0 : kLeakySlope;
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    if (a.ndim() != 2 || b.ndim() != 2) shape_fail("matmul", a, b);
    int64_t am = trans_a ? a.shape[1] : a.shape[0];
    int64_t ak = trans_a ? a.shape[0] : a.shape[1];
    int64_t bk = trans_b ? b.shape[1] : b.shape[0];
    int64_t bn = trans_b ? b.shape[0] : b.shape[1];
    if (ak != bk) shape_fail("matmul", a, b);
    Tensor out = Tensor::zeros({am, bn});
    MatMap ma(a.v.data(), a.shape[0], a.shape[1]);
    MatMap mb(b.v.data(), b.shape[0], b.shape[1]);
    MatMapMut mo(out.v.data(), am, bn);
    if (!trans_a && !trans_b) mo.noalias() = ma * mb;
    else if (trans_a && !trans_b) mo.noalias() = ma.transpose() * mb;
    else if (!trans_a && trans_b) mo.noalias() = ma * mb.transpose();
    else mo.noalias() = ma.transpose() * mb.transpose();
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    out.requires_grad = false;
    if (a.same_shape(b)) {
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    } else if (b.is_scalar()) {
        for (double& x : out.v) x += b.v[0];
    } else if (a.ndim() == 2 && b.ndim() == 1 && b.shape[0] == a.shape[1]) {
        int64_t c = a.shape[1];
        for (int64_t r = 0; r < a.shape[0]; ++r)
            for (int64_t j = 0; j < c; ++j) out.v[static_cast<size_t>(r * c + j)] += b.v[static_cast<size_t>(j)];
    } else {
        shape_fail("add", a, b);
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    Tensor nb = scalar_mul(b, -1.0);
    return add(a, nb);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b) && !b.is_scalar()) shape_fail("mul", a, b);
    Tensor out = a;
    out.requires_grad = false;
    if (b.is_scalar()) {
        for (double& x : out.v) x *= b.v[0];
    } else {
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.v[i];
    }
    return out;
}

Tensor scalar_mul(const Tensor& a, double c) {
    Tensor out = a;
    out.requires_grad = false;
    for (double& x : out.v) x *= c;
    return out;
}

Tensor activation(const Tensor& a, Activation kind) {
    Tensor out = a;
    out.requires_grad = false;
    if (kind == Activation::identity) return out;
    for (double& x : out.v) x = apply_activation(kind, x);
    return out;
}

Tensor softmax(const Tensor& a, int axis) {
    if (a.ndim() == 1) axis = 0;
    if (a.ndim() == 1 && axis == 0) {
        Tensor out = a;
        out.requires_grad = false;
        double mx = *std::max_element(out.v.begin(), out.v.end());
        double z = 0;
        for (double& x : out.v) { x = std::exp(x - mx); z += x; }
        for (double& x : out.v) x /= z;
        return out;
    }
    if (a.ndim() != 2 || axis != 1) throw ValidationError("softmax: only axis=1 on 2-D (or 1-D) supported, got axis " + std::to_string(axis) + " on " + a.shape_str());
    Tensor out = a;
    out.requires_grad = false;
    int64_t c = a.shape[1];
    for (int64_t r = 0; r < a.shape[0]; ++r) {
        double* row = out.v.data() + r * c;
        double mx = *std::max_element(row, row + c);
        double z = 0;
        for (int64_t j = 0; j < c; ++j) { row[j] = std::exp(row[j] - mx); z += row[j]; }
        for (int64_t j = 0; j < c; ++j) row[j] /= z;
    }
    return out;
}

Tensor log(const Tensor& a) {
    Tensor out = a;
    out.requires_grad = false;
    for (double& x : out.v) x = std::log(x);
    return out;
}

Tensor exp(const Tensor& a) {
    Tensor out = a;
    out.requires_grad = false;
    for (double& x : out.v) x = std::exp(x);
    return out;
}

Tensor sqrt(const Tensor& a) {
    Tensor out = a;
    out.requires_grad = false;
    for (double& x : out.v) x = std::sqrt(x);
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b) && !b.is_scalar()) shape_fail("div", a, b);
    Tensor out = a;
    out.requires_grad = false;
    if (b.is_scalar()) {
        for (double& x : out.v) x /= b.v[0];
    } else {
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] /= b.v[i];
    }
    return out;
}

Tensor abs(const Tensor& a) {
    Tensor out = a;
    out.requires_grad = false;
    for (double& x : out.v) x = std::fabs(x);
    return out;
}

Tensor mean_all(const Tensor& a) {
    double s = std::accumulate(a.v.begin(), a.v.end(), 0.0);
    return Tensor::scalar(s / static_cast<double>(a.numel()));
}

Tensor sum_all(const Tensor& a) {
    return Tensor::scalar(std::accumulate(a.v.begin(), a.v.end(), 0.0));
}

Tensor max_all(const Tensor& a) {
    if (a.numel() == 0) shape_fail("max_all", a);
    return Tensor::scalar(*std::max_element(a.v.begin(), a.v.end()));
}

Tensor sum_axis(const Tensor& a, int axis) {
    if (a.ndim() != 2 || (axis != 0 && axis != 1)) throw ValidationError("sum_axis: need 2-D and axis 0/1, got " + a.shape_str());
    int64_t r = a.shape[0], c = a.shape[1];
    if (axis == 0) {
        Tensor out = Tensor::zeros({c});
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) out.v[static_cast<size_t>(j)] += a.at(i, j);
        return out;
    }
    Tensor out = Tensor::zeros({r});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.v[static_cast<size_t>(i)] += a.at(i, j);
    return out;
}

Tensor mean_axis(const Tensor& a, int axis) {
    Tensor out = sum_axis(a, axis);
    double n = static_cast<double>(axis == 0 ? a.shape[0] : a.shape[1]);
    for (double& x : out.v) x /= n;
    return out;
}

Tensor concat(const std::vector<const Tensor*>& parts, int axis) {
    if (parts.empty()) throw ValidationError("concat: no inputs");
    if (parts[0]->ndim() == 1) {
        if (axis != 0) throw ValidationError("concat: 1-D tensors need axis 0");
        Tensor out;
        int64_t n = 0;
        for (auto* p : parts) n += p->numel();
        out.shape = {n};
        out.v.reserve(static_cast<size_t>(n));
        for (auto* p : parts) out.v.insert(out.v.end(), p->v.begin(), p->v.end());
        return out;
    }
    int64_t r = parts[0]->shape[0], c = parts[0]->shape[1];
    if (axis == 0) {
        int64_t rt = 0;
        for (auto* p : parts) {
            if (p->ndim() != 2 || p->shape[1] != c) shape_fail("concat", *parts[0], *p);
            rt += p->shape[0];
        }
        Tensor out = Tensor::zeros({rt, c});
        size_t off = 0;
        for (auto* p : parts) {
            std::copy(p->v.begin(), p->v.end(), out.v.begin() + off);
            off += p->v.size();
        }
        return out;
    }
    if (axis != 1) throw ValidationError("concat: axis must be 0 or 1");
    int64_t ct = 0;
    for (auto* p : parts) {
        if (p->ndim() != 2 || p->shape[0] != r) shape_fail("concat", *parts[0], *p);
        ct += p->shape[1];
    }
    Tensor out = Tensor::zeros({r, ct});
    for (int64_t i = 0; i < r; ++i) {
        int64_t col = 0;
        for (auto* p : parts) {
            int64_t pc = p->shape[1];
            std::copy(p->v.begin() + i * pc, p->v.begin() + (i + 1) * pc, out.v.begin() + i * ct + col);
            col += pc;
        }
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.ndim() != 2 || gamma.numel() != x.shape[1] || beta.numel() != x.shape[1])
        throw ValidationError("layer_norm: x " + x.shape_str() + " gamma " + gamma.shape_str() + " beta " + beta.shape_str());
    int64_t r = x.shape[0], c = x.shape[1];
    Tensor out = Tensor::zeros({r, c});
    for (int64_t i = 0; i < r; ++i) {
        const double* row = x.v.data() + i * c;
        double mu = 0;
        for (int64_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0;
        for (int64_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(c);
        double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < c; ++j)
            out.at(i, j) = (row[j] - mu) * inv * gamma.v[static_cast<size_t>(j)] + beta.v[static_cast<size_t>(j)];
    }
    return out;
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& scale, const Tensor& shift) {
    if (x.ndim() != 2 || scale.numel() != x.shape[1] || shift.numel() != x.shape[1])
        throw ValidationError("batch_norm_eval: x " + x.shape_str() + " scale " + scale.shape_str());
    Tensor out = x;
    out.requires_grad = false;
    int64_t c = x.shape[1];
    for (int64_t i = 0; i < x.shape[0]; ++i)
        for (int64_t j = 0; j < c; ++j)
            out.at(i, j) = x.at(i, j) * scale.v[static_cast<size_t>(j)] + shift.v[static_cast<size_t>(j)];
    return out;
}

Tensor dropout(const Tensor& x, double p, bool train, Rng& rng, Tensor* mask_out) {
    if (p < 0 || p >= 1) throw ValidationError("dropout: p must be in [0,1), got " + std::to_string(p));
    if (!train || p == 0.0) {
        if (mask_out) *mask_out = Tensor::full(x.shape, 1.0);
        return x;
    }
    Tensor mask = Tensor::zeros(x.shape);
    double keep = 1.0 - p;
    for (double& m : mask.v) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
    Tensor out = mul(x, mask);
    if (mask_out) *mask_out = std::move(mask);
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2 || static_cast<int64_t>(labels.size()) != logits.shape[0])
        throw ValidationError("cross_entropy: logits " + logits.shape_str() + " vs " + std::to_string(labels.size()) + " labels");
    int64_t n = logits.shape[0], k = logits.shape[1];
    double total = 0;
    for (int64_t i = 0; i < n; ++i) {
        if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= k)
            throw ValidationError("cross_entropy: label out of range at row " + std::to_string(i));
        const double* row = logits.v.data() + i * k;
        double mx = *std::max_element(row, row + k);
        double lse = 0;
        for (int64_t j = 0; j < k; ++j) lse += std::exp(row[j] - mx);
        lse = mx + std::log(lse);
        total += lse - row[labels[static_cast<size_t>(i)]];
    }
    return Tensor::scalar(total / static_cast<double>(n));
}

Tensor reshape(const Tensor& a, std::vector<int64_t> shape) {
    if (shape_numel(shape) != a.numel())
        throw ValidationError("reshape: " + a.shape_str() + " cannot view as requested shape");
    Tensor out = a;
    out.requires_grad = false;
    out.shape = std::move(shape);
    return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& rows) {
    if (a.ndim() != 2) shape_fail("gather_rows", a);
    int64_t c = a.shape[1];
    Tensor out = Tensor::zeros({static_cast<int64_t>(rows.size()), c});
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= a.shape[0]) throw ValidationError("gather_rows: index out of range");
        std::copy(a.v.begin() + rows[i] * c, a.v.begin() + (rows[i] + 1) * c, out.v.begin() + static_cast<int64_t>(i) * c);
    }
    return out;
}

Tensor scatter_add_rows(const Tensor& src, const std::vector<int64_t>& dst, int64_t n_rows) {
    if (src.ndim() != 2 || static_cast<int64_t>(dst.size()) != src.shape[0]) shape_fail("scatter_add_rows", src);
    int64_t c = src.shape[1];
    Tensor out = Tensor::zeros({n_rows, c});
    for (size_t i = 0; i < dst.size(); ++i) {
        if (dst[i] < 0 || dst[i] >= n_rows) throw ValidationError("scatter_add_rows: index out of range");
        double* orow = out.v.data() + dst[i] * c;
        const double* srow = src.v.data() + static_cast<int64_t>(i) * c;
        for (int64_t j = 0; j < c; ++j) orow[j] += srow[j];
    }
    return out;
}

Tensor block(const Tensor& a, int64_t r0, int64_t r1, int64_t c0, int64_t c1) {
    if (a.ndim() != 2 || r0 < 0 || r1 > a.shape[0] || c0 < 0 || c1 > a.shape[1] || r0 >= r1 || c0 >= c1)
        throw ValidationError("block: bad range on " + a.shape_str());
    Tensor out = Tensor::zeros({r1 - r0, c1 - c0});
    for (int64_t i = r0; i < r1; ++i)
        std::copy(a.v.begin() + i * a.shape[1] + c0, a.v.begin() + i * a.shape[1] + c1,
                  out.v.begin() + (i - r0) * (c1 - c0));
    return out;
}

Tensor scale_cols(const Tensor& a, const Tensor& m) {
    if (a.ndim() != 2 || m.numel() != a.shape[1]) shape_fail("scale_cols", a, m);
    Tensor out = a;
    out.requires_grad = false;
    int64_t c = a.shape[1];
    for (int64_t i = 0; i < a.shape[0]; ++i)
        for (int64_t j = 0; j < c; ++j) out.v[static_cast<size_t>(i * c + j)] *= m.v[static_cast<size_t>(j)];
    return out;
}

Tensor harden(const Tensor& soft) {
    Tensor out = soft;
    out.requires_grad = false;
    for (double& x : out.v) x = x >= 0.5 ? 1.0 : 0.0;
    return out;
}

}  // namespace ops

uint64_t fnv1a64(const void* data, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = 14695981039346656037ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace reqedit
