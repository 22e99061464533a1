#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reqedit/metanet.hpp"
#include "reqedit/mlp.hpp"

namespace reqedit {

struct ObjectiveConfig {
    double lambda = 0.1;  // scalarization weight, searched in [1e-4, 2]
    double tau = 1.0;     // relaxation temperature (masks and soft rates)
    int64_t k = 128;      // function-space sample count per loss evaluation
    EditMode requirement = EditMode::dm;

    void validate() const;
};

// One method evaluation in requirement/preservation space. Requirement stays
// in task units: kept-input count (dm), EOD (fair), unmasked-weight fraction
// (prune).
struct ParetoPoint {
    double requirement = 0;
    double jsd = 0;
    std::string method;
    double lambda = 0;
    std::string detail;  // free-form provenance (budget, hyperparameters)
};

// Jensen-Shannon divergence, natural log, between two distributions on the
// same support. Zero components are handled by their zero limit.
double jsd(const Tensor& p, const Tensor& q);

// Mean JSD over aligned rows of two positive probability matrices (softmax
// outputs). Tape version assumes strictly positive entries.
double jsd_rows(const Tensor& p, const Tensor& q);
NodeId jsd_rows(Tape& tape, NodeId p, NodeId q);

// Mean JSD between the two models' softmax outputs on a shared batch.
double preservation_loss(const MlpModel& original, const MlpModel& edited, const Tensor& x);
// Tape form over logits nodes (softmax applied inside).
NodeId preservation_loss(Tape& tape, NodeId original_logits, NodeId edited_logits);

// Requirement relaxations are plain sums of mask values; reporting uses the
// hardened counterparts.
double dm_requirement(const Tensor& mask);
double prune_requirement(const Tensor& mask);

// True/false positive rates per (group, class). Cells without conditioning
// samples are marked absent and flagged.
struct RateCell {
    double tpr = 0, fpr = 0;
    bool has_tpr = false, has_fpr = false;
};
struct GroupRates {
    int n_groups = 0, n_classes = 0;
    std::vector<RateCell> cells;  // group-major
    bool any_empty = false;

    const RateCell& at(int group, int cls) const;
    RateCell& at(int group, int cls);
};

// Rates from per-sample prediction distributions (rows of probs). Hard rates
// come from one-hot rows, soft rates from tempered softmax rows.
GroupRates rates_from_probs(const Tensor& probs, const std::vector<int>& y, const std::vector<int>& s,
                            int n_groups);
GroupRates soft_rates(const MlpModel& model, const Tensor& x, const std::vector<int>& y,
                      const std::vector<int>& s, int n_groups, double tau);
GroupRates hard_rates(const MlpModel& model, const Tensor& x, const std::vector<int>& y,
                      const std::vector<int>& s, int n_groups);

// Equalized-odds difference: the largest TPR or FPR gap over group pairs and
// classes. Pairs with an absent cell are skipped; no comparable pair is an
// error, as is a single group.
double eod(const GroupRates& rates);

// Differentiable fairness term: hard max over soft rate gaps, built on tape.
// flagged_empty (optional) reports excluded cells.
NodeId soft_eod(Tape& tape, NodeId logits, const std::vector<int>& y, const std::vector<int>& s,
                int n_groups, double tau, bool* flagged_empty = nullptr);

// Indices of the non-dominated points under minimization on both axes
// (requirement, jsd), sorted by requirement then jsd. Dominance is <= on both
// coordinates and strict on at least one; coordinate duplicates are kept once
// (first occurrence). Filtering a front returns it unchanged.
std::vector<int64_t> pareto_filter(const std::vector<ParetoPoint>& points);

// preservation + lambda * requirement / norm. Requirement normalization keeps
// one lambda grid meaningful across tasks: dm by d_in, prune by edge count,
// EOD is already in [0,1].
double scalarized_loss(double preservation, double requirement, double lambda, double norm = 1.0);
NodeId scalarized_loss(Tape& tape, NodeId preservation, NodeId requirement, double lambda,
                       double norm = 1.0);
double requirement_norm(EditMode mode, const MlpConfig& config);

}  // namespace reqedit
