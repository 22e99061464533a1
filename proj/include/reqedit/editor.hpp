#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reqedit/objectives.hpp"
#include "reqedit/zoo.hpp"

namespace reqedit {

// One editor training configuration. grid_mode restricts the optimizer and
// editor hyperparameters to the searched grids; off, any sane value is
// accepted (smoke tests and pilots use tiny budgets).
struct TrainRun {
    ObjectiveConfig objective;
    MetanetConfig metanet;

    double lr = 1e-3;           // grid: {5e-5, 1e-3}
    double weight_decay = 0.0;  // grid: {0, 1e-5, 1e-4}
    int64_t model_batch = 32;   // grid: {32, 64}
    int64_t epochs = 50;        // passes over the zoo train split
    int64_t max_steps = 0;      // optional hard cap, 0 = epochs decide
    int64_t patience = 10;      // validation evaluations without improvement
    int64_t val_batch = 512;    // selection rows per validation evaluation
    bool grid_mode = false;
    uint64_t seed = 0;
    std::string checkpoint_path;  // best editor saved here when nonempty

    void validate() const;
};

struct TrainReport {
    int64_t steps = 0;
    int64_t best_step = -1;
    double best_val = 0;
    int64_t nan_retries = 0;
    int64_t gamma_clamps = 0;
    // moving-average(50) of the training loss failed to decrease over the
    // first 200 steps; informational, the run still returns its best editor
    bool flagged_loss_increase = false;
    std::vector<double> train_loss;  // one entry per optimizer step
    std::vector<double> val_loss;    // one entry per evaluation
};

// Minimize mean scalarized loss over the zoo train split, drawing datapoints
// from the reserved half of the dataset's validation split. Validation (early
// stopping, best checkpoint) scores val_models on the selection half. With no
// val_models the final parameters are returned instead of the best.
MetanetParams train_metanetwork(const TrainRun& run, const std::vector<MlpModel>& train_models,
                                const std::vector<MlpModel>& val_models, const TabularDataset& data,
                                TrainReport* report = nullptr);
// Same, loading the manifest's train/val checkpoints.
MetanetParams train_metanetwork(const TrainRun& run, const ZooManifest& zoo, const TabularDataset& data,
                                TrainReport* report = nullptr);

struct EditResult {
    MlpModel edited;
    Tensor hard_mask;  // empty in fair mode
    double edit_seconds = 0;
    // filled by measure_edit: jsd vs the input model on the eval batch;
    // requirement in task units (kept inputs / EOD / unmasked weight fraction)
    double jsd = 0;
    double requirement = 0;
};

// Single forward edit, no gradients: residual application plus hardened mask
// (dm zeroes masked input columns exactly, prune zeroes masked weights).
// Wall-clock covers graph encoding through mask application.
EditResult edit(const MlpModel& model, const MetanetParams& params, EditMode mode);

// Fill jsd/requirement on the given batch. y/s/n_groups are only consulted in
// fair mode.
void measure_edit(EditResult& result, const MlpModel& original, EditMode mode, const Tensor& x,
                  const std::vector<int>& y = {}, const std::vector<int>& s = {}, int n_groups = 0);

// Mean (requirement, jsd) of one editor over a model set, scored on the
// selection half of the dataset's validation split.
ParetoPoint validation_point(const MetanetParams& params, EditMode mode,
                             const std::vector<MlpModel>& models, const TabularDataset& data,
                             int64_t val_batch, double lambda);

struct SweepPoint {
    double lambda = 0;
    MetanetParams params;
    ParetoPoint validation;
    bool on_front = false;
    TrainReport report;
};

// One trained editor per lambda; validation points decide the Pareto front
// (on_front) that advances to test evaluation. Editors are checkpointed under
// out_dir when nonempty.
std::vector<SweepPoint> lambda_sweep(const std::vector<double>& grid, const TrainRun& base,
                                     const std::vector<MlpModel>& train_models,
                                     const std::vector<MlpModel>& val_models, const TabularDataset& data,
                                     const std::string& out_dir = "");

struct ComposeStage {
    const MetanetParams* editor = nullptr;
    EditMode mode = EditMode::dm;
};

struct ComposeResult {
    MlpModel edited;                 // after the last stage
    std::vector<EditResult> stages;  // stage metrics, each vs its own input model
    double composite_jsd = 0;        // final model vs the original
};

// Apply editors in order, each consuming the previous stage's output. y/s are
// only consulted when a stage runs in fair mode.
ComposeResult compose(const MlpModel& model, const std::vector<ComposeStage>& stages, const Tensor& x,
                      const std::vector<int>& y = {}, const std::vector<int>& s = {}, int n_groups = 0);

}  // namespace reqedit
