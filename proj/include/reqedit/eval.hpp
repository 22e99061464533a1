#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "reqedit/editor.hpp"

namespace reqedit {

// One per-model measurement inside a method/budget cell.
struct ModelMeasure {
    std::string model_id;
    double requirement = 0;
    double jsd = 0;
};

// Everything a method produced at one budget (a lambda, a sparsity, a feature
// count): the measurements that aggregate into a single plotted point.
struct MethodRun {
    std::string method;
    double budget = 0;
    std::vector<ModelMeasure> measures;
};

struct AggregateRow {
    std::string method;
    double budget = 0;
    double requirement_mean = 0, requirement_std = 0, requirement_stderr = 0;
    double jsd_mean = 0, jsd_std = 0, jsd_stderr = 0;
    int64_t n_models = 0;
};

// Mean / sample std / stderr per run, stable-sorted by (method, budget).
// Every expected model must be measured exactly once per run; the first
// missing or unknown id is named in the error.
std::vector<AggregateRow> evaluate_method(const std::vector<MethodRun>& runs,
                                          const std::vector<std::string>& expected_models);

// Requirement axis converted for emission: masking reports how many inputs
// were dropped rather than kept; fairness and pruning already read naturally.
double natural_requirement(EditMode mode, int64_t d_in, double requirement);

// Plain CSV with a pinned column order; byte-identical across calls on equal
// rows. Method names must be comma- and newline-free.
void write_rows_csv(const std::vector<AggregateRow>& rows, const std::string& path);

// JSON descriptor written next to a CSV: seed, a hash of the run
// configuration, hardware, and the row count.
void write_run_sidecar(const std::string& csv_path, uint64_t seed, const std::string& config_text,
                       int64_t n_rows);

std::string hardware_descriptor();

// Middle element, or the mean of the two middles. Throws on empty input.
double median(std::vector<double> v);

struct BenchRecord {
    std::string method;
    std::vector<double> seconds;  // per model, warm-up excluded
    double median_seconds = 0;
    std::string hardware;
};

// Times fn once per model after one untimed warm-up call on the first model.
BenchRecord bench_method(const std::string& method, const std::vector<MlpModel>& models,
                         const std::function<void(const MlpModel&)>& fn);

// Deterministic subsample of ceil(fraction * n) experiments. Sampling whole
// experiments keeps the checkpoints of one training run together.
std::vector<int64_t> subsample_experiments(std::vector<int64_t> experiments, double fraction,
                                           uint64_t seed);

struct AblateResult {
    double fraction = 0;
    std::vector<int64_t> experiments;  // the train experiments actually used
    std::vector<SweepPoint> sweep;
};

// One lambda sweep per training-set fraction with hyperparameters and the
// validation model set held fixed. Checkpoints land under
// out_dir/frac_<percent> when out_dir is nonempty.
std::vector<AblateResult> ablate_sample_efficiency(const std::vector<double>& fractions,
                                                   const std::vector<double>& grid, const TrainRun& base,
                                                   const ZooManifest& zoo, const TabularDataset& data,
                                                   const std::string& out_dir = "");

}  // namespace reqedit
