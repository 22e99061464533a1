#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reqedit/mlp.hpp"

namespace reqedit {

// Neurons as vertices, weights as edges. Vertex features are
// [bias, norm_scale, norm_shift | input/output/hidden-layer one-hot |
// activation one-hot, norm one-hot, dropout rate]; edge features are
// [weight | endpoint one-hots | dense/skip one-hot]. Works on eval-mode
// (folded) models so edits act on the effective inference function.
struct ParamGraph {
    MlpConfig config;
    int64_t n_vertices = 0;
    int64_t n_edges = 0;
    std::vector<int64_t> edge_src, edge_dst;
    std::vector<int64_t> vertex_layer;  // 0 = input, 1..L hidden, L+1 output
    Tensor vertex_features;             // V x vertex_dim()
    Tensor edge_features;               // E x edge_dim()

    // back-reference of edge e onto a weight coordinate
    struct EdgeRef {
        bool skip = false;
        int64_t layer = 0;  // destination linear layer, 1-based
        int64_t row = 0, col = 0;
    };
    std::vector<EdgeRef> edge_ref;

    static constexpr int64_t kRawVertexChannels = 3;  // bias, norm scale, norm shift
    static constexpr int64_t kFuncVertexChannels = 10;  // activation(6) + norm(3) + dropout
    int64_t sym_dim() const { return config.d_in + config.out_features + 4; }
    int64_t vertex_dim() const { return kRawVertexChannels + sym_dim() + kFuncVertexChannels; }
    int64_t edge_dim() const { return 1 + 2 * sym_dim() + 2; }

    int64_t layer_start(int64_t layer) const;  // first vertex id of a layer
    std::vector<int64_t> input_vertices() const;

    // raw-parameter slices of the feature matrices, the identity edit
    Tensor vertex_raw() const;  // V x 3
    Tensor edge_raw() const;    // E x 1
};

// Every weight matrix as a contiguous run of the graph edge order: per
// destination layer the dense block row-major, then that layer's skip
// projection. apply_edge_mask and to_graph both follow this enumeration.
struct MatrixSlice {
    bool skip = false;
    int64_t layer = 0;      // destination linear layer, 1-based
    int64_t src_layer = 0;  // layer whose activations feed these weights
    int64_t rows = 0, cols = 0;
    int64_t offset = 0;  // first edge index of the block
};
std::vector<MatrixSlice> matrix_slices(const MlpConfig& config);

ParamGraph to_graph(const MlpModel& model);

// Rebuilds a model from edited raw values via the back-reference map. Channels
// with no underlying parameter (input bias, norm channels of unnormalized
// layers) are ignored.
MlpModel from_graph(const ParamGraph& graph, const Tensor& vertex_values, const Tensor& edge_values);

// Data-minimization mask: zero-or-scale every outgoing weight of input vertex
// i by m[i], including skip projections sourced at the input layer.
MlpModel apply_input_mask(const MlpModel& edited, const Tensor& m);

// Pruning mask: weight scalars multiplied elementwise in graph edge order;
// biases and norm parameters untouched.
MlpModel apply_edge_mask(const MlpModel& edited, const Tensor& m);

// Relabels the neurons of one hidden layer (perm[new_position] = old_position),
// adjusting every adjacent weight matrix; the network function is unchanged.
MlpModel permute_hidden_layer(const MlpModel& model, int64_t layer, const std::vector<int64_t>& perm);

std::string graph_to_json(const ParamGraph& graph);

}  // namespace reqedit
