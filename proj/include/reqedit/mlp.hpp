#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reqedit/common.hpp"
#include "reqedit/dataset.hpp"
#include "reqedit/tape.hpp"
#include "reqedit/tensor.hpp"

namespace reqedit {

enum class NormKind { batch, layer, none };

NormKind norm_from_name(const std::string& name);
const char* norm_name(NormKind kind);

constexpr double kNormEps = 1e-5;

struct MlpConfig {
    int64_t d_in = 0;
    int out_features = 0;
    std::vector<int64_t> hidden;  // monotone non-decreasing widths
    Activation activation = Activation::relu;
    NormKind norm = NormKind::none;
    double dropout = 0.0;
    // Per hidden layer: index of the layer whose activation feeds a skip
    // projection into this layer's pre-activation (0 = input), or -1 for no
    // skip. A source must bypass at least one layer, so entry i is at most
    // i - 1 and hidden layer 1 never has one.
    std::vector<int> skip_source;

    int64_t batch_size = 128;
    double lr = 1e-2;
    double weight_decay = 1e-4;
    uint64_t seed = 0;

    int64_t depth() const { return static_cast<int64_t>(hidden.size()); }
    // widths indexed 0 (input) .. depth()+1 (output)
    int64_t width(int64_t layer) const;
    void validate() const;
};

struct MlpModel {
    MlpConfig config;
    std::vector<Tensor> W;  // depth()+1 matrices, W[l]: width(l+1) x width(l)
    std::vector<Tensor> b;  // depth()+1 vectors
    // Per hidden layer when norm != none. Raw affine while training; for batch
    // norm the fold step rewrites them into the eval-mode scale/shift.
    std::vector<Tensor> gamma, beta;
    std::vector<Tensor> run_mean, run_var;  // batch-norm running stats, cleared by fold
    std::vector<Tensor> skipW;              // depth() entries, empty tensor when no skip
    bool folded = false;

    static MlpModel init(const MlpConfig& config);

    // Eval-mode forward (dropout off, batch norm folded). No tape.
    Tensor forward(const Tensor& x) const;
    double accuracy(const Tensor& x, const std::vector<int>& labels) const;
    int64_t n_edges() const;
    void validate() const;
};

// Folds batch-norm running statistics into an eval affine; no-op for other
// norms beyond marking the model folded.
void fold_norm(MlpModel& m);

// Parameter leaves for a model registered on a tape, in a fixed order that
// optimizer loops can rely on.
struct MlpTapeParams {
    std::vector<NodeId> W, b, gamma, beta, skipW;  // skipW aligned with config.skip_source
    std::vector<NodeId> all() const;
};

MlpTapeParams register_mlp_params(Tape& tape, const MlpModel& m, bool requires_grad = true);

// Training-mode forward: batch statistics for batch norm (running stats of m
// updated as a side effect), dropout active. Returns the logits node.
NodeId mlp_train_forward(Tape& tape, MlpModel& m, const MlpTapeParams& p, NodeId x, Rng& dropout_rng);

// Eval-mode forward with parameters living on the tape; same kernels as
// MlpModel::forward, so values agree bitwise with the no-tape path.
NodeId mlp_eval_forward(Tape& tape, const MlpConfig& config, const MlpTapeParams& p, NodeId x);

}  // namespace reqedit
