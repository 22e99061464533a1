#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reqedit/param_graph.hpp"
#include "reqedit/tape.hpp"

namespace reqedit {

// What the editor is asked to produce besides parameter residuals: an input
// mask (dm), an edge mask (prune), or nothing extra (fair).
enum class EditMode { dm, fair, prune };

const char* edit_mode_name(EditMode mode);
EditMode edit_mode_from_name(const std::string& name);

// Two-layer feed-forward map, rows-as-outputs convention shared with MlpModel:
// y = act(x W1ᵀ + b1) W2ᵀ + b2.
struct Ffn {
    Tensor W1, b1, W2, b2;

    // zero_out leaves the second layer at zero so the map starts as a constant
    static Ffn init(int64_t in, int64_t hidden, int64_t out, Rng& rng, bool zero_out = false);
};

struct MetanetConfig {
    int64_t hidden = 32;
    int64_t depth = 5;  // message-passing rounds
    double dropout = 0.0;
    double tau = 1.0;          // mask softmax temperature
    double gamma_init = 0.1;   // residual scale at initialization
    Activation activation = Activation::relu;
    uint64_t seed = 0;
    // what the editor was trained to produce and at which scalarization
    // weight; stored in checkpoints so downstream commands recover both
    // without being told
    EditMode mode = EditMode::dm;
    double trained_lambda = 0;

    void validate() const;
};

// The editor's weights. Message and update functions are shared across all
// vertices/edges, which is what makes the editor permutation-equivariant.
struct MetanetParams {
    MetanetConfig config;
    int64_t vertex_in = 0, edge_in = 0;  // feature widths the encoders accept

    Ffn init_v, init_e;
    struct Layer {
        Ffn msg_f;  // along the edge:   [h_src, h_e] -> message for dst
        Ffn msg_b;  // against the edge: [h_dst, h_e] -> message for src
        Ffn upd_v;  // [h_v, agg_forward, agg_backward] -> residual update
        Ffn upd_e;  // [h_e, h_src, h_dst] -> residual update
    };
    std::vector<Layer> layers;

    Ffn head_vertex;    // per-vertex residuals (bias, norm scale, norm shift)
    Ffn head_edge;      // per-edge weight residual
    Ffn head_node_cls;  // input-mask logits, 2 classes (dm)
    Ffn head_edge_cls;  // edge-mask logits, 2 classes (prune)
    Tensor gamma;       // scalar: edited params are theta + gamma * delta

    std::vector<Tensor*> all();
    std::vector<const Tensor*> all() const;
    int64_t n_params() const;
};

MetanetParams init_metanet(const MetanetConfig& config, int64_t vertex_in, int64_t edge_in);

void save_metanet(const MetanetParams& params, const std::string& path);
MetanetParams load_metanet(const std::string& path);

// Tape handles for every weight, aligned with MetanetParams::all().
struct FfnNodes {
    NodeId W1 = -1, b1 = -1, W2 = -1, b2 = -1;
};
struct MetanetNodes {
    FfnNodes init_v, init_e;
    struct Layer {
        FfnNodes msg_f, msg_b, upd_v, upd_e;
    };
    std::vector<Layer> layers;
    FfnNodes head_vertex, head_edge, head_node_cls, head_edge_cls;
    NodeId gamma = -1;
};

MetanetNodes register_metanet(Tape& tape, const MetanetParams& params, bool requires_grad = true);
std::vector<NodeId> metanet_node_list(const MetanetNodes& nodes);

NodeId ffn_apply(Tape& tape, const FfnNodes& f, NodeId x, Activation act);

// Hidden states over the graph, updated in place by each round.
struct StateNodes {
    NodeId h_v = -1;  // V x hidden
    NodeId h_e = -1;  // E x hidden
};

StateNodes init_features(Tape& tape, const ParamGraph& graph, const MetanetParams& params,
                         const MetanetNodes& nodes);

// One bidirectional round: forward messages [h_src,h_e] summed at the edge
// destinations, backward messages [h_dst,h_e] summed at the sources, then
// residual updates of vertex and edge states from the pre-round values.
StateNodes message_pass(Tape& tape, const ParamGraph& graph, const MetanetParams& params,
                        const MetanetNodes::Layer& layer, StateNodes states, bool train = false,
                        Rng* rng = nullptr);

// Head outputs; node/edge logits stay -1 unless the mode requests them.
struct EditNodes {
    NodeId vertex_residual = -1;  // V x 3
    NodeId edge_residual = -1;    // E x 1
    NodeId node_logits = -1;      // d_in x 2 (dm)
    NodeId edge_logits = -1;      // E x 2 (prune)
};

EditNodes edit_forward(Tape& tape, const ParamGraph& graph, const MetanetParams& params,
                       const MetanetNodes& nodes, EditMode mode, bool train = false, Rng* rng = nullptr);

// Inference wrapper: runs the forward on a scratch tape without gradients.
struct Edit {
    Tensor vertex_residual, edge_residual;
    Tensor node_logits, edge_logits;  // empty unless the mode produces them
};
Edit edit_forward(const ParamGraph& graph, const MetanetParams& params, EditMode mode);

// theta + gamma * delta pushed back through the graph's coordinate map.
MlpModel residual_apply(const ParamGraph& graph, const Edit& edit, double gamma);

// Same application on tape: edited parameter nodes assembled from the residual
// heads so gradients reach the editor weights and gamma.
MlpTapeParams edited_tape_params(Tape& tape, const MlpModel& model, const EditNodes& edit, NodeId gamma);

// Active-class probability per row of 2-class logits.
Tensor soft_mask(const Tensor& logits, double tau);
NodeId soft_mask(Tape& tape, NodeId logits, double tau);  // 1-D output

// Mask application on tape. The dm mask scales first-layer weight columns and
// input-sourced skip projections; the prune mask multiplies weights in graph
// edge order. Pass an ste_hard node to train against hard masks.
MlpTapeParams apply_input_mask(Tape& tape, const MlpConfig& config, const MlpTapeParams& params,
                               NodeId mask);
MlpTapeParams apply_edge_mask(Tape& tape, const MlpConfig& config, const MlpTapeParams& params,
                              NodeId mask);

}  // namespace reqedit
