#include "reqedit/baselines.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace reqedit {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Per-edge weight values in graph edge order (the order every mask uses).
std::vector<double> edge_weights(const MlpModel& m) {
    std::vector<double> out(static_cast<size_t>(m.n_edges()));
    for (const MatrixSlice& s : matrix_slices(m.config)) {
        const Tensor& w = s.skip ? m.skipW[static_cast<size_t>(s.layer - 1)]
                                 : m.W[static_cast<size_t>(s.layer - 1)];
        for (int64_t r = 0; r < s.rows; ++r)
            for (int64_t c = 0; c < s.cols; ++c)
                out[static_cast<size_t>(s.offset + r * s.cols + c)] = w.at(r, c);
    }
    return out;
}

// 0/1 mask keeping the top `keep` scores, ties broken toward lower index.
Tensor top_k_mask(const std::vector<double>& scores, int64_t keep) {
    std::vector<int64_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int64_t a, int64_t b) { return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)]; });
    Tensor mask = Tensor::zeros({static_cast<int64_t>(scores.size())});
    for (int64_t i = 0; i < keep; ++i) mask.v[static_cast<size_t>(idx[static_cast<size_t>(i)])] = 1.0;
    return mask;
}

std::vector<Tensor*> model_params(MlpModel& m) {
    // mirrors register_mlp_params / MlpTapeParams::all() ordering
    std::vector<Tensor*> out;
    for (Tensor& w : m.W) out.push_back(&w);
    for (Tensor& b : m.b) out.push_back(&b);
    for (Tensor& g : m.gamma) out.push_back(&g);
    for (Tensor& be : m.beta) out.push_back(&be);
    for (Tensor& s : m.skipW)
        if (s.numel() > 0) out.push_back(&s);
    return out;
}

double mean_jsd_to(const MlpModel& teacher, const MlpModel& student, const Tensor& x) {
    return preservation_loss(teacher, student, x);
}

// JSD-to-teacher distillation of `student` with fixed structural masks applied
// on every forward (empty tensors disable a mask). Trains on the reserved
// validation rows, returns the best checkpoint by selection-half JSD.
MlpModel distill(const MlpModel& teacher, MlpModel student, const Tensor& input_mask,
                 const Tensor& edge_mask, const TabularDataset& data, int64_t epochs, double lr,
                 uint64_t seed) {
    std::vector<int64_t> pool = data.val_reserved();
    if (pool.empty()) throw ValidationError("distill: dataset has no reserved validation rows");
    int64_t k = std::min<int64_t>(128, static_cast<int64_t>(pool.size()));
    int64_t steps_per_epoch = static_cast<int64_t>(pool.size()) / k;
    BatchSampler sampler(data, pool, k, Rng(mix_seed(seed, 0x646973ULL)));

    std::vector<int64_t> sel = data.val_selection();
    if (static_cast<int64_t>(sel.size()) > 512) sel.resize(512);
    Tensor val_x = data.rows(sel);

    AdamState adam;
    adam.lr = lr;
    adam.init(model_params(student));

    auto masked = [&](MlpModel m) {
        if (input_mask.numel() > 0) m = apply_input_mask(m, input_mask);
        if (edge_mask.numel() > 0) m = apply_edge_mask(m, edge_mask);
        return m;
    };

    MlpModel best = masked(student);
    double best_jsd = mean_jsd_to(teacher, best, val_x);

    for (int64_t epoch = 0; epoch < epochs; ++epoch) {
        for (int64_t step = 0; step < std::max<int64_t>(steps_per_epoch, 1); ++step) {
            Batch batch = sampler.next();
            Tensor teacher_probs = ops::softmax(teacher.forward(batch.X), 1);

            Tape t;
            MlpTapeParams tp = register_mlp_params(t, student, true);
            if (input_mask.numel() > 0)
                tp = apply_input_mask(t, student.config, tp, t.constant(input_mask));
            if (edge_mask.numel() > 0)
                tp = apply_edge_mask(t, student.config, tp, t.constant(edge_mask));
            NodeId logits = mlp_eval_forward(t, student.config, tp, t.constant(batch.X));
            NodeId loss = jsd_rows(t, t.constant(teacher_probs), t.softmax(logits, 1));
            t.backward(loss);

            std::vector<NodeId> ids = tp.all();
            std::vector<Tensor> grads;
            for (NodeId id : ids) {
                const Tensor& g = t.grad(id);
                grads.push_back(g.v.empty() ? Tensor::zeros(t.value(id).shape) : g);
            }
            std::vector<const Tensor*> gp;
            for (const Tensor& g : grads) gp.push_back(&g);
            adam.step(model_params(student), gp);
        }
        MlpModel cand = masked(student);
        double j = mean_jsd_to(teacher, cand, val_x);
        if (j < best_jsd) {
            best_jsd = j;
            best = std::move(cand);
        }
    }
    return best;
}

// |w * dL/dw| of the cross-entropy accumulated in graph edge order.
void accumulate_saliency(const MlpModel& model, const Batch& batch, std::vector<double>& scores) {
    Tape t;
    MlpTapeParams tp = register_mlp_params(t, model, true);
    NodeId logits = mlp_eval_forward(t, model.config, tp, t.constant(batch.X));
    t.backward(t.cross_entropy(logits, batch.y));

    for (const MatrixSlice& s : matrix_slices(model.config)) {
        NodeId id = s.skip ? tp.skipW[static_cast<size_t>(s.layer - 1)]
                           : tp.W[static_cast<size_t>(s.layer - 1)];
        const Tensor& g = t.grad(id);
        const Tensor& w = t.value(id);
        if (g.v.empty()) continue;
        for (int64_t r = 0; r < s.rows; ++r)
            for (int64_t c = 0; c < s.cols; ++c)
                scores[static_cast<size_t>(s.offset + r * s.cols + c)] +=
                    std::fabs(w.at(r, c) * g.at(r, c));
    }
}

// binary JSD between Bernoulli(a) and Bernoulli(b), natural log
double jsd2(double a, double b) {
    auto kl_term = [](double x, double m) { return x > 0 ? x * std::log(x / m) : 0.0; };
    double m1 = 0.5 * (a + b), m0 = 0.5 * ((1 - a) + (1 - b));
    double kl_a = kl_term(a, m1) + kl_term(1 - a, m0);
    double kl_b = kl_term(b, m1) + kl_term(1 - b, m0);
    return 0.5 * (kl_a + kl_b);
}

std::vector<double> score_column(const Tensor& scores) {
    if (scores.cols() != 1) throw ValidationError("threshold rule: scores must be a single column");
    std::vector<double> r = scores.v;
    for (double v : r)
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("threshold rule: scores must lie in [0, 1]");
    return r;
}

void check_binary_grouped(size_t n, const std::vector<int>& y, const std::vector<int>& s) {
    if (y.size() != n || s.size() != n) throw ValidationError("threshold rule: misaligned labels or groups");
    for (size_t i = 0; i < n; ++i) {
        if (y[i] < 0 || y[i] > 1) throw ValidationError("threshold rule: task must be binary");
        if (s[i] < 0 || s[i] > 1) throw ValidationError("threshold rule: exactly two groups supported");
    }
}

struct RuleRates {
    double tpr = 0, fpr = 0, jsd = 0;
};

RuleRates rule_rates(const std::vector<double>& r, const std::vector<int>& y, const std::vector<int>& s,
                     int group, double theta, double p) {
    double tpr = 0, fpr = 0, jsd = 0;
    int64_t pos = 0, neg = 0, n = 0;
    for (size_t i = 0; i < r.size(); ++i) {
        if (s[i] != group) continue;
        double q = p * (r[i] > theta ? 1.0 : 0.0) + (1 - p) * r[i];
        jsd += jsd2(q, r[i]);
        ++n;
        if (y[i] == 1) {
            tpr += q;
            ++pos;
        } else {
            fpr += q;
            ++neg;
        }
    }
    if (pos == 0 || neg == 0)
        throw ValidationError("threshold rule: group " + std::to_string(group) +
                              " lacks positives or negatives");
    return {tpr / static_cast<double>(pos), fpr / static_cast<double>(neg),
            jsd / static_cast<double>(n)};
}

}  // namespace

std::vector<double> pfi_importance(const MlpModel& model, const Tensor& x, const std::vector<int>& y,
                                   int shuffles, uint64_t seed) {
    if (x.rows() != static_cast<int64_t>(y.size()))
        throw ValidationError("pfi: rows and labels misaligned");
    if (shuffles < 1) throw ValidationError("pfi: need at least one shuffle");
    double base = model.accuracy(x, y);
    std::vector<double> importance(static_cast<size_t>(x.cols()), 0.0);
    Rng rng(mix_seed(seed, 0x706669ULL));
    std::vector<int64_t> rows(static_cast<size_t>(x.rows()));
    for (int64_t j = 0; j < x.cols(); ++j) {
        double drop = 0;
        for (int rep = 0; rep < shuffles; ++rep) {
            std::iota(rows.begin(), rows.end(), 0);
            rng.shuffle(rows);
            Tensor shuffled = x;
            for (int64_t i = 0; i < x.rows(); ++i)
                shuffled.at(i, j) = x.at(rows[static_cast<size_t>(i)], j);
            drop += base - model.accuracy(shuffled, y);
        }
        importance[static_cast<size_t>(j)] = drop / shuffles;
    }
    return importance;
}

std::vector<int64_t> pfi_rank(const MlpModel& model, const Tensor& x, const std::vector<int>& y,
                              int shuffles, uint64_t seed) {
    std::vector<double> imp = pfi_importance(model, x, y, shuffles, seed);
    std::vector<int64_t> order(imp.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int64_t a, int64_t b) { return imp[static_cast<size_t>(a)] > imp[static_cast<size_t>(b)]; });
    return order;
}

std::vector<int64_t> pfi_rank_dataset(const std::vector<MlpModel>& models, const Tensor& x,
                                      const std::vector<int>& y, int shuffles, uint64_t seed) {
    if (models.empty()) throw ValidationError("pfi: no models");
    std::vector<double> total(static_cast<size_t>(x.cols()), 0.0);
    for (size_t m = 0; m < models.size(); ++m) {
        std::vector<double> imp = pfi_importance(models[m], x, y, shuffles, mix_seed(seed, m));
        for (size_t j = 0; j < total.size(); ++j) total[j] += imp[j];
    }
    std::vector<int64_t> order(total.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int64_t a, int64_t b) { return total[static_cast<size_t>(a)] > total[static_cast<size_t>(b)]; });
    return order;
}

static Tensor keep_mask(const MlpModel& model, const std::vector<int64_t>& order, int64_t keep) {
    if (keep < 0 || keep > model.config.d_in)
        throw ValidationError("feature budget " + std::to_string(keep) + " outside [0, " +
                              std::to_string(model.config.d_in) + "]");
    if (static_cast<int64_t>(order.size()) != model.config.d_in)
        throw ValidationError("feature order does not cover every input");
    Tensor mask = Tensor::zeros({model.config.d_in});
    for (int64_t i = 0; i < keep; ++i) mask.v[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1.0;
    return mask;
}

EditResult fs_mask(const MlpModel& model, const std::vector<int64_t>& order, int64_t keep) {
    EditResult r;
    auto t0 = Clock::now();
    r.hard_mask = keep_mask(model, order, keep);
    r.edited = apply_input_mask(model, r.hard_mask);
    r.edit_seconds = seconds_since(t0);
    return r;
}

EditResult fs_retrain(const MlpModel& model, const std::vector<int64_t>& order, int64_t keep,
                      const TabularDataset& data, int64_t epochs, double lr, uint64_t seed) {
    EditResult r;
    auto t0 = Clock::now();
    r.hard_mask = keep_mask(model, order, keep);
    MlpModel student = apply_input_mask(model, r.hard_mask);  // warm start at the masked teacher
    r.edited = distill(model, std::move(student), r.hard_mask, Tensor(), data, epochs, lr, seed);
    r.edit_seconds = seconds_since(t0);
    return r;
}

const char* prune_method_name(PruneMethod m) {
    switch (m) {
        case PruneMethod::random: return "random";
        case PruneMethod::magnitude: return "magnitude";
        case PruneMethod::grad_importance: return "grad_importance";
        case PruneMethod::snip: return "snip";
        case PruneMethod::lottery: return "lottery";
    }
    throw ValidationError("unknown prune method");
}

PruneMethod prune_method_from_name(const std::string& name) {
    for (PruneMethod m : {PruneMethod::random, PruneMethod::magnitude, PruneMethod::grad_importance,
                          PruneMethod::snip, PruneMethod::lottery})
        if (name == prune_method_name(m)) return m;
    throw ValidationError("unknown prune method: " + name);
}

EditResult prune_baseline(const MlpModel& model, double sparsity, PruneMethod method,
                          const TabularDataset& data, uint64_t seed, int64_t lottery_epochs,
                          double lr) {
    if (!(sparsity >= 0.0 && sparsity <= 1.0))
        throw ValidationError("sparsity " + std::to_string(sparsity) + " outside [0, 1]");
    int64_t n_edges = model.n_edges();
    int64_t keep = n_edges - static_cast<int64_t>(std::llround(sparsity * static_cast<double>(n_edges)));

    EditResult r;
    auto t0 = Clock::now();
    std::vector<double> scores(static_cast<size_t>(n_edges), 0.0);
    switch (method) {
        case PruneMethod::random: {
            Rng rng(mix_seed(seed, 0x7072756eULL));
            for (double& v : scores) v = rng.uniform();
            break;
        }
        case PruneMethod::magnitude:
        case PruneMethod::lottery: {
            std::vector<double> w = edge_weights(model);
            for (size_t i = 0; i < w.size(); ++i) scores[i] = std::fabs(w[i]);
            break;
        }
        case PruneMethod::grad_importance: {
            std::vector<int64_t> pool = data.val_reserved();
            int64_t k = std::min<int64_t>(128, static_cast<int64_t>(pool.size()));
            int64_t steps = std::max<int64_t>(static_cast<int64_t>(pool.size()) / k, 1);
            BatchSampler sampler(data, pool, k, Rng(mix_seed(seed, 0x67726164ULL)));
            for (int64_t i = 0; i < steps; ++i) accumulate_saliency(model, sampler.next(), scores);
            break;
        }
        case PruneMethod::snip: {
            std::vector<int64_t> pool = data.val_reserved();
            int64_t k = std::min<int64_t>(128, static_cast<int64_t>(pool.size()));
            BatchSampler sampler(data, pool, k, Rng(mix_seed(seed, 0x736e6970ULL)));
            accumulate_saliency(model, sampler.next(), scores);
            break;
        }
    }

    r.hard_mask = top_k_mask(scores, keep);
    r.edited = apply_edge_mask(model, r.hard_mask);
    if (method == PruneMethod::lottery)
        r.edited = distill(model, r.edited, Tensor(), r.hard_mask, data, lottery_epochs, lr, seed);
    r.edit_seconds = seconds_since(t0);
    return r;
}

Tensor positive_scores(const MlpModel& model, const Tensor& x) {
    if (model.config.out_features != 2)
        throw ValidationError("threshold rule: task must be binary");
    Tensor probs = ops::softmax(model.forward(x), 1);
    Tensor out = Tensor::zeros({probs.rows()});
    for (int64_t i = 0; i < probs.rows(); ++i) out.v[static_cast<size_t>(i)] = probs.at(i, 1);
    return out;
}

ThresholdRule threshold_opt_fit(const Tensor& scores, const std::vector<int>& y,
                                const std::vector<int>& s) {
    std::vector<double> r = score_column(scores);
    check_binary_grouped(r.size(), y, s);

    constexpr int kGrid = 101;
    // per group: rates and divergence of every (theta, p) candidate
    std::vector<std::vector<RuleRates>> cand(2);
    std::array<int64_t, 2> counts = {0, 0};
    for (int i : s) ++counts[static_cast<size_t>(i)];
    for (int g = 0; g < 2; ++g) {
        cand[static_cast<size_t>(g)].reserve(kGrid * kGrid);
        for (int ti = 0; ti < kGrid; ++ti)
            for (int pi = 0; pi < kGrid; ++pi)
                cand[static_cast<size_t>(g)].push_back(
                    rule_rates(r, y, s, g, ti / 100.0, pi / 100.0));
    }

    double total = static_cast<double>(counts[0] + counts[1]);
    double w0 = static_cast<double>(counts[0]) / total, w1 = static_cast<double>(counts[1]) / total;
    ThresholdRule best;
    double best_eod = std::numeric_limits<double>::infinity();
    double best_jsd = std::numeric_limits<double>::infinity();
    for (int a = 0; a < kGrid * kGrid; ++a) {
        const RuleRates& c0 = cand[0][static_cast<size_t>(a)];
        for (int b = 0; b < kGrid * kGrid; ++b) {
            const RuleRates& c1 = cand[1][static_cast<size_t>(b)];
            double eod = std::max(std::fabs(c0.tpr - c1.tpr), std::fabs(c0.fpr - c1.fpr));
            if (eod > best_eod) continue;
            double jsd = w0 * c0.jsd + w1 * c1.jsd;
            if (eod < best_eod || jsd < best_jsd) {
                best_eod = eod;
                best_jsd = jsd;
                best.theta0 = (a / kGrid) / 100.0;
                best.p0 = (a % kGrid) / 100.0;
                best.theta1 = (b / kGrid) / 100.0;
                best.p1 = (b % kGrid) / 100.0;
            }
        }
    }
    best.eod = best_eod;
    best.jsd = best_jsd;
    return best;
}

ParetoPoint threshold_opt_eval(const ThresholdRule& rule, const Tensor& scores,
                               const std::vector<int>& y, const std::vector<int>& s) {
    std::vector<double> r = score_column(scores);
    check_binary_grouped(r.size(), y, s);
    RuleRates c0 = rule_rates(r, y, s, 0, rule.theta0, rule.p0);
    RuleRates c1 = rule_rates(r, y, s, 1, rule.theta1, rule.p1);
    std::array<int64_t, 2> counts = {0, 0};
    for (int i : s) ++counts[static_cast<size_t>(i)];
    double total = static_cast<double>(counts[0] + counts[1]);

    ParetoPoint pt;
    pt.requirement = std::max(std::fabs(c0.tpr - c1.tpr), std::fabs(c0.fpr - c1.fpr));
    pt.jsd = (static_cast<double>(counts[0]) * c0.jsd + static_cast<double>(counts[1]) * c1.jsd) / total;
    pt.method = "threshold_opt";
    return pt;
}

}  // namespace reqedit
