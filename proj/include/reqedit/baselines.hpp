#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reqedit/editor.hpp"

namespace reqedit {

// Permutation feature importance: mean accuracy drop over `shuffles` random
// permutations of each input column. A column the model ignores scores 0.
std::vector<double> pfi_importance(const MlpModel& model, const Tensor& x, const std::vector<int>& y,
                                   int shuffles, uint64_t seed);
// Features in descending importance, ties broken by index.
std::vector<int64_t> pfi_rank(const MlpModel& model, const Tensor& x, const std::vector<int>& y,
                              int shuffles = 5, uint64_t seed = 0);
// Dataset-level variant: importance averaged over several models before
// ranking, for protocols that share one feature order across a population.
std::vector<int64_t> pfi_rank_dataset(const std::vector<MlpModel>& models, const Tensor& x,
                                      const std::vector<int>& y, int shuffles = 5, uint64_t seed = 0);

// Keep the first `keep` features of `order`, zero the rest at the input.
// Parameters are untouched beyond the induced first-layer column zeroing.
EditResult fs_mask(const MlpModel& model, const std::vector<int64_t>& order, int64_t keep);

// Same mask, then a student with the original architecture is distilled
// toward the teacher's probabilities (JSD loss) on the reserved validation
// rows; the checkpoint with the best selection-half JSD is returned.
EditResult fs_retrain(const MlpModel& model, const std::vector<int64_t>& order, int64_t keep,
                      const TabularDataset& data, int64_t epochs = 100, double lr = 1e-3,
                      uint64_t seed = 0);

enum class PruneMethod { random, magnitude, grad_importance, snip, lottery };

const char* prune_method_name(PruneMethod m);
PruneMethod prune_method_from_name(const std::string& name);

// Hard edge mask keeping exactly n_edges - round(sparsity * n_edges) weights,
// scored per method: random draws, |w|, |w * dL/dw| over one pass of the
// reserved rows, the same at a single batch (snip), or one magnitude
// prune-retrain round distilled toward the original (lottery).
EditResult prune_baseline(const MlpModel& model, double sparsity, PruneMethod method,
                          const TabularDataset& data, uint64_t seed = 0, int64_t lottery_epochs = 20,
                          double lr = 1e-3);

// Group-specific randomized decision rule over the positive-class score r:
// predict positive with probability p * [r > theta] + (1 - p) * r. p = 0
// reproduces the model's own output distribution exactly; p = 1 at theta 0.5
// is the argmax rule, so the searched family contains both.
struct ThresholdRule {
    double theta0 = 0.5, p0 = 0;
    double theta1 = 0.5, p1 = 0;
    double eod = 0, jsd = 0;  // achieved on the fitting data
};

// Positive-class probability per row, the score the rules threshold.
Tensor positive_scores(const MlpModel& model, const Tensor& x);

// 101x101 grid per group over (theta, p); minimizes the rule's equalized-odds
// difference, ties broken by JSD between the induced prediction distribution
// and the model's soft predictions. Binary task, two groups.
ThresholdRule threshold_opt_fit(const Tensor& scores, const std::vector<int>& y,
                                const std::vector<int>& s);

// The fitted rule scored on fresh data.
ParetoPoint threshold_opt_eval(const ThresholdRule& rule, const Tensor& scores,
                               const std::vector<int>& y, const std::vector<int>& s);

}  // namespace reqedit
