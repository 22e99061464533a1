#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reqedit/common.hpp"
#include "reqedit/tensor.hpp"

namespace reqedit {

using NodeId = int32_t;

// Reverse-mode tape. Forward calls route through the same ops:: kernels used by
// the fast no-tape paths, so recorded and unrecorded forwards agree bitwise.
class Tape {
public:
    NodeId leaf(Tensor value, bool requires_grad = true);
    NodeId constant(Tensor value) { return leaf(std::move(value), false); }

    NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scalar_mul(NodeId a, double c);
    NodeId activation(NodeId a, Activation kind);
    NodeId softmax(NodeId a, int axis);
    NodeId log(NodeId a);
    NodeId exp(NodeId a);
    NodeId sqrt(NodeId a);
    NodeId div(NodeId a, NodeId b);
    NodeId abs(NodeId a);
    NodeId mean_all(NodeId a);
    NodeId sum_all(NodeId a);
    NodeId max_all(NodeId a);
    NodeId mean_axis(NodeId a, int axis);
    NodeId sum_axis(NodeId a, int axis);
    NodeId concat(const std::vector<NodeId>& parts, int axis);
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5);
    NodeId batch_norm_eval(NodeId x, NodeId scale, NodeId shift);
    NodeId dropout(NodeId x, double p, bool train, Rng& rng);
    NodeId cross_entropy(NodeId logits, std::vector<int> labels);
    NodeId reshape(NodeId a, std::vector<int64_t> shape);
    NodeId gather_rows(NodeId a, std::vector<int64_t> rows);
    NodeId scatter_add_rows(NodeId src, std::vector<int64_t> dst, int64_t n_rows);
    NodeId block(NodeId a, int64_t r0, int64_t r1, int64_t c0, int64_t c1);
    NodeId scale_cols(NodeId a, NodeId m);
    // Straight-through hardening: forward emits the 0/1 mask, backward passes
    // the incoming gradient to the soft input unchanged.
    NodeId ste_hard(NodeId soft);

    // References are into the node store and go stale when new nodes are
    // recorded; copy anything needed across further tape calls.
    const Tensor& value(NodeId id) const;
    const Tensor& grad(NodeId id) const;
    bool needs_grad(NodeId id) const;

    // Seeds d(loss)=1 and walks the tape once in reverse. loss must be scalar.
    void backward(NodeId loss);

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    enum class Op {
        leaf, matmul, add, sub, mul, scalar_mul, activation, softmax,
        log_, exp_, sqrt_, div_, abs_, mean_all, sum_all, max_all,
        mean_axis, sum_axis, concat, layer_norm, batch_norm_eval, dropout,
        cross_entropy, reshape, gather_rows, scatter_add_rows, block,
        scale_cols, ste_hard,
    };

    struct Node {
        Op op = Op::leaf;
        std::vector<NodeId> in;
        Tensor out;
        Tensor grad;
        bool needs_grad = false;
        bool trans_a = false, trans_b = false;
        int axis = 0;
        double c = 0.0;
        Activation act = Activation::identity;
        std::vector<int64_t> idx;
        std::vector<int> labels;
        Tensor aux;
        int64_t n_rows = 0;
    };

    NodeId push(Node n);
    Node& at(NodeId id);
    const Node& at(NodeId id) const;
    void accumulate(NodeId id, const Tensor& g);
    void backprop_node(NodeId id);

    std::vector<Node> nodes_;
};

// Adam with bias correction and decoupled weight decay. step() returns false
// and leaves the step counter untouched when any gradient is non-finite.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    int64_t t = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    void init(const std::vector<Tensor*>& params);
    bool step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads);
};

}  // namespace reqedit
