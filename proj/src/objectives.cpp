#include "reqedit/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace reqedit {

namespace {

constexpr double kSimplexTol = 1e-9;

void check_simplex(const Tensor& p, const char* name) {
    double sum = 0;
    for (double v : p.v) {
        if (v < -kSimplexTol) throw ValidationError(std::string("jsd: ") + name + " has a negative component");
        sum += v;
    }
    if (std::fabs(sum - 1.0) > kSimplexTol)
        throw ValidationError(std::string("jsd: ") + name + " sums to " + std::to_string(sum));
}

// p log(p/m) with the zero-probability limit
double kl_term(double p, double m) { return p > 0 ? p * std::log(p / m) : 0.0; }

// The two KL halves accumulate separately so that swapping p and q swaps the
// accumulators bitwise and the result is exactly symmetric (a fused p-and-q
// loop is not, once the compiler contracts multiplies into the adds).
double jsd_pair(const double* p, const double* q, int64_t n) {
    double kl_p = 0, kl_q = 0;
    for (int64_t i = 0; i < n; ++i) kl_p += kl_term(p[i], 0.5 * (p[i] + q[i]));
    for (int64_t i = 0; i < n; ++i) kl_q += kl_term(q[i], 0.5 * (q[i] + p[i]));
    return 0.5 * (kl_p + kl_q);
}

}  // namespace

void ObjectiveConfig::validate() const {
    if (lambda < 0) throw ValidationError("objective: lambda must be nonnegative");
    if (tau <= 0) throw ValidationError("objective: tau must be positive");
    if (k < 1) throw ValidationError("objective: sample count k must be at least 1");
}

double jsd(const Tensor& p, const Tensor& q) {
    if (!p.same_shape(q) || p.ndim() != 1)
        throw ValidationError("jsd: need two vectors of one shape, got " + p.shape_str() + " and " +
                              q.shape_str());
    check_simplex(p, "p");
    check_simplex(q, "q");
    return jsd_pair(p.v.data(), q.v.data(), p.numel());
}

double jsd_rows(const Tensor& p, const Tensor& q) {
    if (!p.same_shape(q) || p.ndim() != 2)
        throw ValidationError("jsd_rows: need two matrices of one shape, got " + p.shape_str() + " and " +
                              q.shape_str());
    double total = 0;
    for (int64_t r = 0; r < p.rows(); ++r)
        total += jsd_pair(p.v.data() + r * p.cols(), q.v.data() + r * q.cols(), p.cols());
    return total / static_cast<double>(p.rows());
}

NodeId jsd_rows(Tape& t, NodeId p, NodeId q) {
    NodeId m = t.scalar_mul(t.add(p, q), 0.5);
    NodeId log_m = t.log(m);
    NodeId term_p = t.mul(p, t.sub(t.log(p), log_m));
    NodeId term_q = t.mul(q, t.sub(t.log(q), log_m));
    NodeId per_row = t.scalar_mul(t.add(t.sum_axis(term_p, 1), t.sum_axis(term_q, 1)), 0.5);
    return t.mean_all(per_row);
}

double preservation_loss(const MlpModel& original, const MlpModel& edited, const Tensor& x) {
    Tensor p = ops::softmax(original.forward(x), 1);
    Tensor q = ops::softmax(edited.forward(x), 1);
    return jsd_rows(p, q);
}

NodeId preservation_loss(Tape& t, NodeId original_logits, NodeId edited_logits) {
    return jsd_rows(t, t.softmax(original_logits, 1), t.softmax(edited_logits, 1));
}

double dm_requirement(const Tensor& mask) {
    double sum = 0;
    for (double v : mask.v) sum += v;
    return sum;
}

double prune_requirement(const Tensor& mask) { return dm_requirement(mask); }

const RateCell& GroupRates::at(int group, int cls) const {
    return cells[static_cast<size_t>(group * n_classes + cls)];
}
RateCell& GroupRates::at(int group, int cls) {
    return cells[static_cast<size_t>(group * n_classes + cls)];
}

GroupRates rates_from_probs(const Tensor& probs, const std::vector<int>& y, const std::vector<int>& s,
                            int n_groups) {
    if (probs.ndim() != 2) throw ValidationError("rates: probs must be n x classes");
    size_t n = static_cast<size_t>(probs.rows());
    if (y.size() != n || s.size() != n)
        throw ValidationError("rates: probs rows, labels, and groups must align");
    if (n_groups < 1) throw ValidationError("rates: need at least one group");

    GroupRates out;
    out.n_groups = n_groups;
    out.n_classes = static_cast<int>(probs.cols());
    out.cells.resize(static_cast<size_t>(n_groups * out.n_classes));

    for (int g = 0; g < n_groups; ++g) {
        for (int k = 0; k < out.n_classes; ++k) {
            double tp = 0, fp = 0;
            int64_t n_pos = 0, n_neg = 0;
            for (size_t i = 0; i < n; ++i) {
                if (s[i] != g) continue;
                double pk = probs.at(static_cast<int64_t>(i), k);
                if (y[i] == k) {
                    tp += pk;
                    ++n_pos;
                } else {
                    fp += pk;
                    ++n_neg;
                }
            }
            RateCell& cell = out.at(g, k);
            if (n_pos > 0) {
                cell.tpr = tp / static_cast<double>(n_pos);
                cell.has_tpr = true;
            }
            if (n_neg > 0) {
                cell.fpr = fp / static_cast<double>(n_neg);
                cell.has_fpr = true;
            }
            if (n_pos == 0 || n_neg == 0) out.any_empty = true;
        }
    }
    return out;
}

GroupRates soft_rates(const MlpModel& model, const Tensor& x, const std::vector<int>& y,
                      const std::vector<int>& s, int n_groups, double tau) {
    if (tau <= 0) throw ValidationError("soft_rates: tau must be positive");
    Tensor probs = ops::softmax(ops::scalar_mul(model.forward(x), 1.0 / tau), 1);
    return rates_from_probs(probs, y, s, n_groups);
}

GroupRates hard_rates(const MlpModel& model, const Tensor& x, const std::vector<int>& y,
                      const std::vector<int>& s, int n_groups) {
    Tensor logits = model.forward(x);
    Tensor onehot = Tensor::zeros(logits.shape);
    for (int64_t r = 0; r < logits.rows(); ++r) {
        int64_t best = 0;
        for (int64_t k = 1; k < logits.cols(); ++k)
            if (logits.at(r, k) > logits.at(r, best)) best = k;
        onehot.at(r, best) = 1.0;
    }
    return rates_from_probs(onehot, y, s, n_groups);
}

double eod(const GroupRates& rates) {
    if (rates.n_groups < 2) throw ValidationError("eod: need at least two groups");
    double best = -1;
    for (int i = 0; i < rates.n_groups; ++i) {
        for (int j = i + 1; j < rates.n_groups; ++j) {
            for (int k = 0; k < rates.n_classes; ++k) {
                const RateCell& a = rates.at(i, k);
                const RateCell& b = rates.at(j, k);
                if (a.has_tpr && b.has_tpr) best = std::max(best, std::fabs(a.tpr - b.tpr));
                if (a.has_fpr && b.has_fpr) best = std::max(best, std::fabs(a.fpr - b.fpr));
            }
        }
    }
    if (best < 0) throw ValidationError("eod: no group pair shares a populated cell");
    return best;
}

NodeId soft_eod(Tape& t, NodeId logits, const std::vector<int>& y, const std::vector<int>& s,
                int n_groups, double tau, bool* flagged_empty) {
    if (tau <= 0) throw ValidationError("soft_eod: tau must be positive");
    if (n_groups < 2) throw ValidationError("soft_eod: need at least two groups");
    const Tensor& v = t.value(logits);
    size_t n = static_cast<size_t>(v.rows());
    int n_classes = static_cast<int>(v.cols());
    if (y.size() != n || s.size() != n) throw ValidationError("soft_eod: logits, labels, and groups must align");

    NodeId probs = t.softmax(t.scalar_mul(logits, 1.0 / tau), 1);

    // per-(group, class) index sets for the two conditionings
    auto rows_where = [&](int g, int k, bool positive) {
        std::vector<int64_t> rows;
        for (size_t i = 0; i < n; ++i)
            if (s[i] == g && ((y[i] == k) == positive)) rows.push_back(static_cast<int64_t>(i));
        return rows;
    };
    auto cell_mean = [&](int g, int k, bool positive) -> NodeId {
        std::vector<int64_t> rows = rows_where(g, k, positive);
        if (rows.empty()) return -1;
        NodeId col = t.block(t.gather_rows(probs, rows), 0, static_cast<int64_t>(rows.size()), k, k + 1);
        return t.mean_all(col);
    };

    bool empty = false;
    std::vector<NodeId> gaps;
    for (int k = 0; k < n_classes; ++k) {
        std::vector<NodeId> tpr(static_cast<size_t>(n_groups)), fpr(static_cast<size_t>(n_groups));
        for (int g = 0; g < n_groups; ++g) {
            tpr[static_cast<size_t>(g)] = cell_mean(g, k, true);
            fpr[static_cast<size_t>(g)] = cell_mean(g, k, false);
            if (tpr[static_cast<size_t>(g)] < 0 || fpr[static_cast<size_t>(g)] < 0) empty = true;
        }
        for (int i = 0; i < n_groups; ++i) {
            for (int j = i + 1; j < n_groups; ++j) {
                if (tpr[static_cast<size_t>(i)] >= 0 && tpr[static_cast<size_t>(j)] >= 0)
                    gaps.push_back(t.reshape(
                        t.abs(t.sub(tpr[static_cast<size_t>(i)], tpr[static_cast<size_t>(j)])), {1}));
                if (fpr[static_cast<size_t>(i)] >= 0 && fpr[static_cast<size_t>(j)] >= 0)
                    gaps.push_back(t.reshape(
                        t.abs(t.sub(fpr[static_cast<size_t>(i)], fpr[static_cast<size_t>(j)])), {1}));
            }
        }
    }
    if (flagged_empty) *flagged_empty = empty;
    if (gaps.empty()) throw ValidationError("soft_eod: no group pair shares a populated cell");
    return t.max_all(t.concat(gaps, 0));
}

std::vector<int64_t> pareto_filter(const std::vector<ParetoPoint>& points) {
    for (const ParetoPoint& p : points)
        if (!std::isfinite(p.requirement) || !std::isfinite(p.jsd))
            throw ValidationError("pareto_filter: non-finite point");

    // Sort indices by (requirement, jsd); a point survives iff its jsd is
    // strictly below every earlier point's. Coordinate duplicates collapse to
    // their first occurrence in input order.
    std::vector<int64_t> order(points.size());
    for (size_t i = 0; i < points.size(); ++i) order[i] = static_cast<int64_t>(i);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        const ParetoPoint& pa = points[static_cast<size_t>(a)];
        const ParetoPoint& pb = points[static_cast<size_t>(b)];
        if (pa.requirement != pb.requirement) return pa.requirement < pb.requirement;
        if (pa.jsd != pb.jsd) return pa.jsd < pb.jsd;
        return a < b;
    });
    std::vector<int64_t> front;
    double best_jsd = std::numeric_limits<double>::infinity();
    double last_req = 0, last_jsd = 0;
    for (int64_t i : order) {
        const ParetoPoint& p = points[static_cast<size_t>(i)];
        if (!front.empty() && p.requirement == last_req && p.jsd == last_jsd) continue;
        if (p.jsd < best_jsd) {
            front.push_back(i);
            best_jsd = p.jsd;
            last_req = p.requirement;
            last_jsd = p.jsd;
        }
    }
    return front;
}

double scalarized_loss(double preservation, double requirement, double lambda, double norm) {
    if (lambda < 0) throw ValidationError("scalarized_loss: lambda must be nonnegative");
    if (norm <= 0) throw ValidationError("scalarized_loss: norm must be positive");
    return preservation + lambda * requirement / norm;
}

NodeId scalarized_loss(Tape& t, NodeId preservation, NodeId requirement, double lambda, double norm) {
    if (lambda < 0) throw ValidationError("scalarized_loss: lambda must be nonnegative");
    if (norm <= 0) throw ValidationError("scalarized_loss: norm must be positive");
    return t.add(preservation, t.scalar_mul(requirement, lambda / norm));
}

double requirement_norm(EditMode mode, const MlpConfig& config) {
    switch (mode) {
        case EditMode::dm: return static_cast<double>(config.d_in);
        case EditMode::prune: {
            double edges = 0;
            for (const MatrixSlice& s : matrix_slices(config)) edges += static_cast<double>(s.rows * s.cols);
            return edges;
        }
        case EditMode::fair: return 1.0;
    }
    return 1.0;
}

}  // namespace reqedit
