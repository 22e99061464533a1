#include "reqedit/editor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>

namespace reqedit {

namespace {

// seed streams for the independent random decisions of a run
constexpr uint64_t kStreamOrder = 0x6f72646572ULL;
constexpr uint64_t kStreamData = 0x64617461ULL;
constexpr uint64_t kStreamDrop = 0x64726f70ULL;
constexpr uint64_t kStreamVal = 0x76616cULL;

constexpr double kGammaLimit = 10.0;

void check_in(double v, std::initializer_list<double> grid, const char* name) {
    for (double g : grid)
        if (v == g) return;
    throw ValidationError(std::string("grid mode: ") + name + " " + std::to_string(v) +
                          " outside the search grid");
}

double mean_of(const std::vector<double>& v, size_t lo, size_t hi) {
    double s = 0;
    for (size_t i = lo; i < hi; ++i) s += v[i];
    return s / static_cast<double>(hi - lo);
}

// Scalarized training-form loss for one model on one batch. With grads
// non-null the backward pass runs and leaf gradients accumulate into it
// (aligned with MetanetParams::all()); entries of unused heads are left
// untouched. Returns the loss value, which may be non-finite.
double model_loss(const MetanetParams& params, const ObjectiveConfig& obj, const MlpModel& model,
                  const Batch& batch, int n_groups, bool train, Rng* drop_rng,
                  std::vector<Tensor>* grads) {
    EditMode mode = obj.requirement;
    Tape t;
    MetanetNodes nodes = register_metanet(t, params, grads != nullptr);
    ParamGraph graph = to_graph(model);
    EditNodes e = edit_forward(t, graph, params, nodes, mode, train, drop_rng);
    MlpTapeParams tp = edited_tape_params(t, model, e, nodes.gamma);

    // Hard masks from step zero: the straight-through node feeds both the
    // weight application and the requirement sum.
    NodeId requirement = -1;
    if (mode == EditMode::dm) {
        NodeId hard = t.ste_hard(soft_mask(t, e.node_logits, params.config.tau));
        tp = apply_input_mask(t, model.config, tp, hard);
        requirement = t.sum_all(hard);
    } else if (mode == EditMode::prune) {
        NodeId hard = t.ste_hard(soft_mask(t, e.edge_logits, params.config.tau));
        tp = apply_edge_mask(t, model.config, tp, hard);
        requirement = t.sum_all(hard);
    }

    NodeId x = t.constant(batch.X);
    NodeId logits = mlp_eval_forward(t, model.config, tp, x);
    if (mode == EditMode::fair) requirement = soft_eod(t, logits, batch.y, batch.s, n_groups, obj.tau);

    // The original model's outputs carry no gradient; they stay off the tape.
    Tensor orig_probs = ops::softmax(model.forward(batch.X), 1);
    NodeId pres = jsd_rows(t, t.constant(orig_probs), t.softmax(logits, 1));
    NodeId loss = scalarized_loss(t, pres, requirement, obj.lambda, requirement_norm(mode, model.config));

    double out = t.value(loss).v[0];
    if (!std::isfinite(out) || !grads) return out;

    t.backward(loss);
    std::vector<NodeId> ids = metanet_node_list(nodes);
    for (size_t i = 0; i < ids.size(); ++i) {
        const Tensor& g = t.grad(ids[i]);
        if (g.v.empty()) continue;
        Tensor& acc = (*grads)[i];
        if (acc.v.empty())
            acc = g;
        else
            for (size_t j = 0; j < g.v.size(); ++j) acc.v[j] += g.v[j];
    }
    return out;
}

// Fixed evaluation batch from the selection half of the validation split,
// stratified when fairness statistics will be computed on it.
Batch selection_batch(const TabularDataset& data, int64_t k, bool stratified, uint64_t seed) {
    std::vector<int64_t> pool = data.val_selection();
    if (pool.empty()) throw ValidationError("dataset has no validation selection rows");
    k = std::min<int64_t>(k, static_cast<int64_t>(pool.size()));
    if (stratified) return StratifiedSampler(data, std::move(pool), k, Rng(seed)).next();
    return BatchSampler(data, std::move(pool), k, Rng(seed)).next();
}

double validation_loss(const MetanetParams& params, const ObjectiveConfig& obj,
                       const std::vector<MlpModel>& val_models, const Batch& batch, int n_groups) {
    double total = 0;
    for (const MlpModel& m : val_models)
        total += model_loss(params, obj, m, batch, n_groups, false, nullptr, nullptr);
    return total / static_cast<double>(val_models.size());
}

}  // namespace

void TrainRun::validate() const {
    objective.validate();
    metanet.validate();
    if (lr <= 0) throw ValidationError("train run: lr must be positive");
    if (weight_decay < 0) throw ValidationError("train run: weight decay must be nonnegative");
    if (model_batch < 1) throw ValidationError("train run: model batch must be positive");
    if (epochs < 1) throw ValidationError("train run: epoch budget must be positive");
    if (max_steps < 0) throw ValidationError("train run: max_steps must be nonnegative");
    if (patience < 1) throw ValidationError("train run: patience must be positive");
    if (val_batch < 1) throw ValidationError("train run: val_batch must be positive");
    if (grid_mode) {
        check_in(lr, {5e-5, 1e-3}, "lr");
        check_in(weight_decay, {0.0, 1e-5, 1e-4}, "weight decay");
        check_in(static_cast<double>(model_batch), {32.0, 64.0}, "model batch");
        check_in(static_cast<double>(metanet.hidden), {64.0, 128.0}, "hidden width");
        check_in(static_cast<double>(metanet.depth), {5.0, 6.0}, "depth");
        check_in(metanet.dropout, {0.0, 0.1, 0.2}, "dropout");
    }
}

MetanetParams train_metanetwork(const TrainRun& run, const std::vector<MlpModel>& train_models,
                                const std::vector<MlpModel>& val_models, const TabularDataset& data,
                                TrainReport* report) {
    run.validate();
    if (train_models.empty()) throw ValidationError("train_metanetwork: no training models");
    EditMode mode = run.objective.requirement;
    if (mode == EditMode::fair && data.n_groups < 2)
        throw ValidationError("train_metanetwork: fairness training needs a grouped dataset");

    MetanetConfig mc = run.metanet;
    mc.mode = mode;
    mc.trained_lambda = run.objective.lambda;
    ParamGraph g0 = to_graph(train_models[0]);
    MetanetParams params = init_metanet(mc, g0.vertex_dim(), g0.edge_dim());

    AdamState adam;
    adam.lr = run.lr;
    adam.weight_decay = run.weight_decay;
    adam.init(params.all());

    std::vector<int64_t> pool = data.val_reserved();
    if (pool.empty()) throw ValidationError("dataset has no reserved validation rows");
    int64_t k = std::min<int64_t>(run.objective.k, static_cast<int64_t>(pool.size()));
    bool stratified = mode == EditMode::fair;
    std::optional<BatchSampler> plain;
    std::optional<StratifiedSampler> strat;
    if (stratified)
        strat.emplace(data, pool, k, Rng(mix_seed(run.seed, kStreamData)));
    else
        plain.emplace(data, pool, k, Rng(mix_seed(run.seed, kStreamData)));
    auto next_batch = [&]() { return stratified ? strat->next() : plain->next(); };

    Batch val_batch;
    if (!val_models.empty())
        val_batch = selection_batch(data, run.val_batch, stratified, mix_seed(run.seed, kStreamVal));

    Rng order_rng(mix_seed(run.seed, kStreamOrder));
    Rng drop_rng(mix_seed(run.seed, kStreamDrop));

    int64_t n_train = static_cast<int64_t>(train_models.size());
    int64_t batch_size = std::min<int64_t>(run.model_batch, n_train);
    int64_t steps_per_epoch = (n_train + batch_size - 1) / batch_size;
    int64_t total_steps = run.epochs * steps_per_epoch;
    if (run.max_steps > 0) total_steps = std::min(total_steps, run.max_steps);

    TrainReport local;
    TrainReport& rep = report ? *report : local;
    rep = TrainReport{};

    std::vector<int64_t> order;
    auto draw_model = [&]() {
        if (order.empty()) {
            order.resize(static_cast<size_t>(n_train));
            for (int64_t i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;
            order_rng.shuffle(order);
        }
        int64_t id = order.back();
        order.pop_back();
        return id;
    };

    MetanetParams best = params;
    double best_val = std::numeric_limits<double>::infinity();
    int64_t evals_since_best = 0;
    bool stopped = false;

    for (int64_t step = 0; step < total_steps && !stopped; ++step) {
        std::vector<int64_t> batch_ids;
        for (int64_t b = 0; b < batch_size; ++b) batch_ids.push_back(draw_model());

        double mean_loss = 0;
        std::vector<Tensor> grads(params.all().size());
        for (int attempt = 0;; ++attempt) {
            mean_loss = 0;
            for (Tensor& g : grads) g = Tensor();
            for (int64_t id : batch_ids)
                mean_loss += model_loss(params, run.objective, train_models[static_cast<size_t>(id)],
                                        next_batch(), data.n_groups, true, &drop_rng, &grads);
            mean_loss /= static_cast<double>(batch_ids.size());
            if (std::isfinite(mean_loss)) break;
            if (attempt >= 1)
                throw NumericalError("train_metanetwork: loss " + std::to_string(mean_loss) + " at step " +
                                     std::to_string(step) + " persists after halving lr to " +
                                     std::to_string(adam.lr));
            // halve the rate and retry the step once on fresh batches
            adam.lr *= 0.5;
            ++rep.nan_retries;
            std::fprintf(stderr, "warning: non-finite loss at step %lld, retrying with lr %.3g\n",
                         static_cast<long long>(step), adam.lr);
        }

        std::vector<Tensor*> ps = params.all();
        std::vector<const Tensor*> gs;
        for (size_t i = 0; i < ps.size(); ++i) {
            if (grads[i].v.empty())
                grads[i] = Tensor::zeros(ps[i]->shape);
            else
                for (double& v : grads[i].v) v /= static_cast<double>(batch_ids.size());
            gs.push_back(&grads[i]);
        }
        adam.step(ps, gs);

        double gv = params.gamma.v[0];
        if (std::fabs(gv) >= kGammaLimit) {
            params.gamma.v[0] = (gv < 0 ? -1 : 1) * kGammaLimit * 0.999;
            ++rep.gamma_clamps;
            std::fprintf(stderr, "warning: gamma %.3g clamped at step %lld\n", gv,
                         static_cast<long long>(step));
        }

        rep.train_loss.push_back(mean_loss);
        ++rep.steps;

        bool epoch_end = (step + 1) % steps_per_epoch == 0 || step + 1 == total_steps;
        if (epoch_end && !val_models.empty()) {
            double vloss = validation_loss(params, run.objective, val_models, val_batch, data.n_groups);
            rep.val_loss.push_back(vloss);
            if (vloss < best_val) {
                best_val = vloss;
                best = params;
                rep.best_step = step + 1;
                evals_since_best = 0;
            } else if (++evals_since_best >= run.patience) {
                stopped = true;
            }
        }
    }

    if (val_models.empty()) best = params;
    rep.best_val = best_val;

    if (rep.train_loss.size() >= 100) {
        size_t end = std::min<size_t>(200, rep.train_loss.size());
        rep.flagged_loss_increase = mean_of(rep.train_loss, end - 50, end) > mean_of(rep.train_loss, 0, 50);
        if (rep.flagged_loss_increase)
            std::fprintf(stderr, "warning: training loss moving average rose over the first %zu steps\n",
                         end);
    }

    if (!run.checkpoint_path.empty()) save_metanet(best, run.checkpoint_path);
    return best;
}

MetanetParams train_metanetwork(const TrainRun& run, const ZooManifest& zoo, const TabularDataset& data,
                                TrainReport* report) {
    auto load = [&](const std::vector<int64_t>& experiments) {
        std::vector<MlpModel> out;
        for (const ZooRecord* r : zoo.records_in(experiments)) out.push_back(load_zoo_model(zoo, r->id));
        return out;
    };
    return train_metanetwork(run, load(zoo.split_train), load(zoo.split_val), data, report);
}

EditResult edit(const MlpModel& model, const MetanetParams& params, EditMode mode) {
    EditResult r;
    auto t0 = std::chrono::steady_clock::now();
    ParamGraph graph = to_graph(model);
    Edit e = edit_forward(graph, params, mode);
    r.edited = residual_apply(graph, e, params.gamma.v[0]);
    if (mode == EditMode::dm) {
        r.hard_mask = ops::harden(soft_mask(e.node_logits, params.config.tau));
        r.edited = apply_input_mask(r.edited, r.hard_mask);
    } else if (mode == EditMode::prune) {
        r.hard_mask = ops::harden(soft_mask(e.edge_logits, params.config.tau));
        r.edited = apply_edge_mask(r.edited, r.hard_mask);
    }
    r.edit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

void measure_edit(EditResult& result, const MlpModel& original, EditMode mode, const Tensor& x,
                  const std::vector<int>& y, const std::vector<int>& s, int n_groups) {
    result.jsd = preservation_loss(original, result.edited, x);
    switch (mode) {
        case EditMode::dm:
            result.requirement = dm_requirement(result.hard_mask);
            break;
        case EditMode::prune:
            result.requirement =
                prune_requirement(result.hard_mask) / static_cast<double>(result.hard_mask.numel());
            break;
        case EditMode::fair:
            result.requirement = eod(hard_rates(result.edited, x, y, s, n_groups));
            break;
    }
}

ParetoPoint validation_point(const MetanetParams& params, EditMode mode,
                             const std::vector<MlpModel>& models, const TabularDataset& data,
                             int64_t val_batch, double lambda) {
    if (models.empty()) throw ValidationError("validation_point: no models");
    Batch b = selection_batch(data, val_batch, mode == EditMode::fair, mix_seed(0, kStreamVal));
    ParetoPoint pt;
    for (const MlpModel& m : models) {
        EditResult r = edit(m, params, mode);
        measure_edit(r, m, mode, b.X, b.y, b.s, data.n_groups);
        pt.requirement += r.requirement;
        pt.jsd += r.jsd;
    }
    pt.requirement /= static_cast<double>(models.size());
    pt.jsd /= static_cast<double>(models.size());
    pt.method = std::string("gmn_") + edit_mode_name(mode);
    pt.lambda = lambda;
    pt.detail = std::to_string(models.size()) + " models";
    return pt;
}

std::vector<SweepPoint> lambda_sweep(const std::vector<double>& grid, const TrainRun& base,
                                     const std::vector<MlpModel>& train_models,
                                     const std::vector<MlpModel>& val_models, const TabularDataset& data,
                                     const std::string& out_dir) {
    if (grid.empty()) throw ValidationError("lambda_sweep: empty grid");
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    std::vector<SweepPoint> points;
    for (double lambda : grid) {
        TrainRun run = base;
        run.objective.lambda = lambda;
        if (!out_dir.empty()) {
            char name[64];
            std::snprintf(name, sizeof(name), "editor_lambda_%g.bin", lambda);
            run.checkpoint_path = out_dir + "/" + name;
        }
        SweepPoint sp;
        sp.lambda = lambda;
        sp.params = train_metanetwork(run, train_models, val_models, data, &sp.report);
        const std::vector<MlpModel>& scored = val_models.empty() ? train_models : val_models;
        sp.validation =
            validation_point(sp.params, run.objective.requirement, scored, data, run.val_batch, lambda);
        points.push_back(std::move(sp));
    }

    std::vector<ParetoPoint> vps;
    for (const SweepPoint& sp : points) vps.push_back(sp.validation);
    for (int64_t i : pareto_filter(vps)) points[static_cast<size_t>(i)].on_front = true;
    return points;
}

ComposeResult compose(const MlpModel& model, const std::vector<ComposeStage>& stages, const Tensor& x,
                      const std::vector<int>& y, const std::vector<int>& s, int n_groups) {
    if (stages.empty()) throw ValidationError("compose: no stages");
    ComposeResult out;
    const MlpModel* current = &model;
    for (const ComposeStage& stage : stages) {
        if (!stage.editor) throw ValidationError("compose: missing editor");
        EditResult r = edit(*current, *stage.editor, stage.mode);
        measure_edit(r, *current, stage.mode, x, y, s, n_groups);
        out.stages.push_back(std::move(r));
        current = &out.stages.back().edited;
    }
    out.edited = *current;
    out.composite_jsd = preservation_loss(model, out.edited, x);
    return out;
}

}  // namespace reqedit
