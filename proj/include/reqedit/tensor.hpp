#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reqedit/common.hpp"

namespace reqedit {

// Dense 1-D/2-D array of 64-bit reals, row-major.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> v;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::vector<double> data);

    static Tensor zeros(std::vector<int64_t> s);
    static Tensor full(std::vector<int64_t> s, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }
    static Tensor vec(std::vector<double> data);

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    int64_t ndim() const { return static_cast<int64_t>(shape.size()); }
    int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
    int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    bool is_scalar() const { return numel() == 1; }

    double& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols() + c)]; }
    double at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols() + c)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
    std::string shape_str() const;
};

enum class Activation { relu, gelu, tanh, sigmoid, leaky_relu, identity };

Activation activation_from_name(const std::string& name);
const char* activation_name(Activation a);
double apply_activation(Activation a, double x);
double activation_grad(Activation a, double x);

// Shape-checked kernels. The tape wraps exactly these, so evaluation with and
// without gradient recording is bit-identical.
namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
// b may match a, be a length-cols(a) row vector, or a scalar
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise; b may be scalar
Tensor scalar_mul(const Tensor& a, double c);
Tensor activation(const Tensor& a, Activation kind);
Tensor softmax(const Tensor& a, int axis);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor div(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor abs(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor max_all(const Tensor& a);
Tensor mean_axis(const Tensor& a, int axis);
Tensor sum_axis(const Tensor& a, int axis);
Tensor concat(const std::vector<const Tensor*>& parts, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
// eval-mode batch norm with pre-folded per-feature scale/shift
Tensor batch_norm_eval(const Tensor& x, const Tensor& scale, const Tensor& shift);
Tensor dropout(const Tensor& x, double p, bool train, Rng& rng, Tensor* mask_out);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor reshape(const Tensor& a, std::vector<int64_t> shape);
Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& rows);
Tensor scatter_add_rows(const Tensor& src, const std::vector<int64_t>& dst, int64_t n_rows);
Tensor block(const Tensor& a, int64_t r0, int64_t r1, int64_t c0, int64_t c1);
Tensor scale_cols(const Tensor& a, const Tensor& m);  // column j scaled by m[j]
Tensor harden(const Tensor& soft);                    // >= 0.5 -> 1 else 0

}  // namespace ops

}  // namespace reqedit
