#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "reqedit/baselines.hpp"
#include "reqedit/eval.hpp"
#include "reqedit/synth.hpp"

namespace fs = std::filesystem;
using namespace reqedit;

namespace {

// ---------------------------------------------------------------- options

// Global options plus the key=value file behind --config. Command flags win
// over config keys, config keys win over the built-in defaults.
struct Options {
    uint64_t seed = 0;
    std::string config_path;
    std::string out = "runs";
    std::map<std::string, std::string> kv;

    void load() {
        if (config_path.empty()) return;
        std::ifstream f(config_path);
        if (!f) throw ValidationError("cannot read config file " + config_path);
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            size_t a = line.find_first_not_of(" \t\r");
            if (a == std::string::npos) continue;
            size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ValidationError(config_path + ":" + std::to_string(lineno) +
                                      ": expected key=value");
            auto trim = [](std::string s) {
                size_t b = s.find_first_not_of(" \t\r");
                size_t e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
            if (key.empty()) throw ValidationError(config_path + ":" + std::to_string(lineno) +
                                                   ": empty key");
            kv[key] = value;
        }
    }

    std::string str(const std::string& key, const std::string& def) const {
        auto it = kv.find(key);
        return it == kv.end() ? def : it->second;
    }
    int64_t i64(const std::string& key, int64_t def) const {
        auto it = kv.find(key);
        if (it == kv.end()) return def;
        try {
            size_t used = 0;
            int64_t v = std::stoll(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ValidationError("config key '" + key + "': '" + it->second + "' is not an integer");
        }
    }
    double f64(const std::string& key, double def) const {
        auto it = kv.find(key);
        if (it == kv.end()) return def;
        try {
            size_t used = 0;
            double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ValidationError("config key '" + key + "': '" + it->second + "' is not a number");
        }
    }
    bool flag(const std::string& key, bool def) const {
        std::string v = str(key, def ? "1" : "0");
        if (v == "1" || v == "true") return true;
        if (v == "0" || v == "false") return false;
        throw ValidationError("config key '" + key + "': '" + v + "' is not a boolean");
    }
};

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

// ---------------------------------------------------------------- dataset

// `zoo build` records how its dataset was synthesized so downstream commands
// rebuild the identical rows and splits without repeating the flags.
void save_data_recipe(const std::string& zoo_dir, const std::string& name, int64_t rows,
                      uint64_t data_seed) {
    nlohmann::json j;
    j["dataset"] = name;
    j["rows"] = rows;
    j["data_seed"] = data_seed;
    std::ofstream f(fs::path(zoo_dir) / "data.json");
    if (!f) throw ValidationError("cannot write " + zoo_dir + "/data.json");
    f << j.dump(2) << '\n';
}

TabularDataset dataset_from_config(const Options& opt) {
    return synth_dataset(opt.str("dataset", "adult"), opt.i64("rows", 2400),
                         static_cast<uint64_t>(opt.i64("data_seed", 77)));
}

TabularDataset dataset_for_zoo(const Options& opt, const std::string& zoo_dir) {
    fs::path recipe = fs::path(zoo_dir) / "data.json";
    if (!fs::exists(recipe)) return dataset_from_config(opt);
    std::ifstream f(recipe);
    nlohmann::json j = nlohmann::json::parse(f);
    return synth_dataset(j.at("dataset").get<std::string>(), j.at("rows").get<int64_t>(),
                         j.at("data_seed").get<uint64_t>());
}

struct EvalBatch {
    Tensor x;
    std::vector<int> y, s;
};

// Leading rows of a split, capped by the eval_rows config key. Deterministic
// so reruns emit identical CSVs.
EvalBatch eval_batch(const Options& opt, const TabularDataset& ds, Split split) {
    std::vector<int64_t> idx = ds.split_indices(split);
    int64_t cap = opt.i64("eval_rows", 512);
    if (static_cast<int64_t>(idx.size()) > cap) idx.resize(static_cast<size_t>(cap));
    EvalBatch b;
    b.x = ds.rows(idx);
    b.y = ds.labels_at(idx);
    if (ds.has_sensitive()) b.s = ds.groups_at(idx);
    return b;
}

std::vector<MlpModel> load_models(const ZooManifest& zoo, const std::vector<int64_t>& experiments,
                                  std::vector<std::string>* ids = nullptr) {
    std::vector<MlpModel> models;
    for (const ZooRecord* r : zoo.records_in(experiments)) {
        models.push_back(load_zoo_model(zoo, r->id));
        if (ids) ids->push_back(r->id);
    }
    if (models.empty()) throw ValidationError("zoo split has no checkpoints");
    return models;
}

// ---------------------------------------------------------------- training

TrainRun run_from_config(const Options& opt, EditMode mode, double lambda) {
    TrainRun run;
    run.objective.requirement = mode;
    run.objective.lambda = lambda;
    run.objective.tau = opt.f64("tau", 1.0);
    run.objective.k = opt.i64("k", 128);
    run.metanet.hidden = opt.i64("hidden", 32);
    run.metanet.depth = opt.i64("depth", 5);
    run.metanet.dropout = opt.f64("metanet_dropout", 0.0);
    run.metanet.tau = opt.f64("mask_tau", 1.0);
    run.metanet.gamma_init = opt.f64("gamma_init", 0.1);
    run.metanet.activation = activation_from_name(opt.str("metanet_activation", "relu"));
    run.metanet.seed = mix_seed(opt.seed, 0x6d657461ULL);
    run.lr = opt.f64("lr", 1e-3);
    run.weight_decay = opt.f64("weight_decay", 0.0);
    run.model_batch = opt.i64("model_batch", 32);
    run.epochs = opt.i64("epochs", 50);
    run.max_steps = opt.i64("max_steps", 0);
    run.patience = opt.i64("patience", 10);
    run.val_batch = opt.i64("val_batch", 512);
    run.grid_mode = opt.flag("grid_mode", false);
    run.seed = opt.seed;
    return run;
}

// ---------------------------------------------------------------- emission

// dm fronts plot how many inputs were masked; flipping the mean is enough
// because std and stderr are invariant under the reflection.
void to_natural_units(std::vector<AggregateRow>& rows, EditMode mode, int64_t d_in) {
    for (AggregateRow& r : rows)
        r.requirement_mean = natural_requirement(mode, d_in, r.requirement_mean);
}

std::string config_digest(const Options& opt) {
    std::string text = "seed=" + std::to_string(opt.seed) + "\n";
    for (const auto& [k, v] : opt.kv) text += k + "=" + v + "\n";
    return text;
}

void emit_rows(const Options& opt, const std::string& name, std::vector<AggregateRow> rows,
               EditMode mode, int64_t d_in) {
    fs::create_directories(opt.out);
    to_natural_units(rows, mode, d_in);
    std::string path = (fs::path(opt.out) / name).string();
    write_rows_csv(rows, path);
    write_run_sidecar(path, opt.seed, config_digest(opt), static_cast<int64_t>(rows.size()));
    std::printf("wrote %s (%zu rows)\n", path.c_str(), rows.size());
}

// ---------------------------------------------------------------- measures

MethodRun measure_editor(const MetanetParams& editor, const std::vector<MlpModel>& models,
                         const std::vector<std::string>& ids, const EvalBatch& batch, int n_groups) {
    MethodRun run;
    run.method = std::string("gmn_") + edit_mode_name(editor.config.mode);
    run.budget = editor.config.trained_lambda;
    for (size_t i = 0; i < models.size(); ++i) {
        EditResult r = edit(models[i], editor, editor.config.mode);
        measure_edit(r, models[i], editor.config.mode, batch.x, batch.y, batch.s, n_groups);
        run.measures.push_back({ids[i], r.requirement, r.jsd});
    }
    return run;
}

bool is_prune_method(const std::string& name) {
    for (PruneMethod m : {PruneMethod::random, PruneMethod::magnitude, PruneMethod::grad_importance,
                          PruneMethod::snip, PruneMethod::lottery})
        if (name == prune_method_name(m)) return true;
    return false;
}

EditMode baseline_mode(const std::string& method) {
    if (method == "fs_mask" || method == "fs_retrain") return EditMode::dm;
    if (method == "threshold_opt") return EditMode::fair;
    if (is_prune_method(method)) return EditMode::prune;
    throw ValidationError("unknown baseline '" + method +
                          "' (expected fs_mask, fs_retrain, threshold_opt, or a prune method)");
}

MethodRun measure_baseline(const Options& opt, const std::string& method, double budget,
                           const std::vector<MlpModel>& models, const std::vector<std::string>& ids,
                           const TabularDataset& ds, const EvalBatch& batch) {
    MethodRun run;
    run.method = method;
    run.budget = budget;
    int64_t shuffles = opt.i64("pfi_shuffles", 5);
    EditMode mode = baseline_mode(method);

    std::vector<int64_t> fit_idx = ds.split_indices(Split::val);
    Tensor fit_x = ds.rows(fit_idx);
    std::vector<int> fit_y = ds.labels_at(fit_idx);
    std::vector<int> fit_s = ds.has_sensitive() ? ds.groups_at(fit_idx) : std::vector<int>{};

    for (size_t i = 0; i < models.size(); ++i) {
        const MlpModel& m = models[i];
        if (method == "threshold_opt") {
            ThresholdRule rule = threshold_opt_fit(positive_scores(m, fit_x), fit_y, fit_s);
            ParetoPoint pt = threshold_opt_eval(rule, positive_scores(m, batch.x), batch.y, batch.s);
            run.measures.push_back({ids[i], pt.requirement, pt.jsd});
            continue;
        }
        EditResult r;
        if (method == "fs_mask" || method == "fs_retrain") {
            std::vector<int64_t> reserved = ds.val_reserved();
            std::vector<int64_t> order = pfi_rank(m, ds.rows(reserved), ds.labels_at(reserved),
                                                  static_cast<int>(shuffles), opt.seed);
            int64_t keep = static_cast<int64_t>(std::llround(budget));
            r = method == "fs_mask"
                    ? fs_mask(m, order, keep)
                    : fs_retrain(m, order, keep, ds, opt.i64("retrain_epochs", 100),
                                 opt.f64("retrain_lr", 1e-3), opt.seed);
        } else {
            r = prune_baseline(m, budget, prune_method_from_name(method), ds, opt.seed,
                               opt.i64("lottery_epochs", 20), opt.f64("retrain_lr", 1e-3));
        }
        measure_edit(r, m, mode, batch.x, batch.y, batch.s, ds.n_groups);
        run.measures.push_back({ids[i], r.requirement, r.jsd});
    }
    return run;
}

// ---------------------------------------------------------------- commands

void cmd_zoo_build(const Options& opt, int64_t experiments, int64_t epochs) {
    TabularDataset ds = dataset_from_config(opt);
    ZooManifest zoo = build_zoo(experiments, ds, opt.seed, opt.out, epochs);
    save_data_recipe(opt.out, ds.name, ds.n, static_cast<uint64_t>(opt.i64("data_seed", 77)));
    std::printf("zoo: %zu checkpoints over %lld experiments (train/val/test %zu/%zu/%zu) -> %s\n",
                zoo.records.size(), static_cast<long long>(zoo.n_experiments),
                zoo.split_train.size(), zoo.split_val.size(), zoo.split_test.size(),
                opt.out.c_str());
}

void cmd_zoo_inspect(const Options& opt, const std::string& zoo_dir, bool deep) {
    ZooManifest zoo = load_zoo(zoo_dir);
    std::map<std::string, std::vector<double>> by_stage;
    for (const ZooRecord& r : zoo.records) by_stage[r.stage].push_back(r.val_acc);
    std::printf("zoo %s: dataset=%s seed=%llu experiments=%lld checkpoints=%zu\n", zoo_dir.c_str(),
                zoo.dataset.c_str(), static_cast<unsigned long long>(zoo.seed),
                static_cast<long long>(zoo.n_experiments), zoo.records.size());
    std::printf("splits: train=%zu val=%zu test=%zu experiments\n", zoo.split_train.size(),
                zoo.split_val.size(), zoo.split_test.size());
    for (const auto& [stage, accs] : by_stage) {
        double lo = *std::min_element(accs.begin(), accs.end());
        double hi = *std::max_element(accs.begin(), accs.end());
        double mean = 0;
        for (double a : accs) mean += a;
        mean /= static_cast<double>(accs.size());
        std::printf("  %-6s n=%zu val_acc mean=%.4f min=%.4f max=%.4f\n", stage.c_str(),
                    accs.size(), mean, lo, hi);
    }
    if (deep) {
        for (const ZooRecord& r : zoo.records) load_zoo_model(zoo, r.id);
        std::printf("checksums verified for %zu checkpoints\n", zoo.records.size());
    }
}

void cmd_metanet_train(const Options& opt, const std::string& zoo_dir, const std::string& mode_name,
                       double lambda) {
    ZooManifest zoo = load_zoo(zoo_dir);
    TabularDataset ds = dataset_for_zoo(opt, zoo_dir);
    EditMode mode = edit_mode_from_name(mode_name);
    TrainRun run = run_from_config(opt, mode, lambda);
    fs::create_directories(opt.out);
    run.checkpoint_path = (fs::path(opt.out) /
                           ("editor_" + std::string(edit_mode_name(mode)) + "_lambda_" +
                            fmt_g(lambda) + ".bin"))
                              .string();
    TrainReport report;
    MetanetParams editor = train_metanetwork(run, zoo, ds, &report);

    std::vector<MlpModel> val_models = load_models(zoo, zoo.split_val);
    ParetoPoint pt = validation_point(editor, mode, val_models, ds, run.val_batch, lambda);
    std::printf("trained %s editor at lambda=%s: steps=%lld best_val=%.6f\n",
                edit_mode_name(mode), fmt_g(lambda).c_str(), static_cast<long long>(report.steps),
                report.best_val);
    std::printf("validation: requirement=%.6f jsd=%.6f -> %s\n",
                natural_requirement(mode, ds.d_in, pt.requirement), pt.jsd,
                run.checkpoint_path.c_str());
    if (report.flagged_loss_increase) std::printf("note: training loss drifted upward early\n");
}

void write_sweep_csv(const std::string& path, EditMode mode, int64_t d_in,
                     const std::vector<SweepPoint>& sweep) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write " + path);
    f << "lambda,requirement,jsd,on_front\n";
    for (const SweepPoint& sp : sweep) {
        char line[160];
        std::snprintf(line, sizeof(line), "%.12g,%.12g,%.12g,%d\n", sp.lambda,
                      natural_requirement(mode, d_in, sp.validation.requirement), sp.validation.jsd,
                      sp.on_front ? 1 : 0);
        f << line;
    }
}

void cmd_metanet_sweep(const Options& opt, const std::string& zoo_dir, const std::string& mode_name,
                       const std::vector<double>& lambdas) {
    ZooManifest zoo = load_zoo(zoo_dir);
    TabularDataset ds = dataset_for_zoo(opt, zoo_dir);
    EditMode mode = edit_mode_from_name(mode_name);
    TrainRun base = run_from_config(opt, mode, 0.0);

    std::vector<MlpModel> train_models = load_models(zoo, zoo.split_train);
    std::vector<MlpModel> val_models = load_models(zoo, zoo.split_val);
    std::vector<SweepPoint> sweep = lambda_sweep(lambdas, base, train_models, val_models, ds, opt.out);

    std::string path = (fs::path(opt.out) / "sweep.csv").string();
    write_sweep_csv(path, mode, ds.d_in, sweep);
    write_run_sidecar(path, opt.seed, config_digest(opt), static_cast<int64_t>(sweep.size()));
    for (const SweepPoint& sp : sweep)
        std::printf("lambda=%-8s requirement=%.6f jsd=%.6f%s\n", fmt_g(sp.lambda).c_str(),
                    natural_requirement(mode, ds.d_in, sp.validation.requirement), sp.validation.jsd,
                    sp.on_front ? "  [front]" : "");
    std::printf("wrote %s\n", path.c_str());
}

void cmd_edit(const Options& opt, const std::string& zoo_dir, const std::string& editor_path,
              const std::string& model_id, const std::string& save_path) {
    ZooManifest zoo = load_zoo(zoo_dir);
    TabularDataset ds = dataset_for_zoo(opt, zoo_dir);
    MetanetParams editor = load_metanet(editor_path);
    EditMode mode = editor.config.mode;
    EvalBatch batch = eval_batch(opt, ds, Split::test);

    std::vector<std::string> ids;
    std::vector<MlpModel> models;
    if (model_id.empty()) {
        models = load_models(zoo, zoo.split_test, &ids);
    } else {
        models.push_back(load_zoo_model(zoo, model_id));
        ids.push_back(model_id);
    }
    if (!save_path.empty() && models.size() != 1)
        throw ValidationError("--save needs a single --model");

    for (size_t i = 0; i < models.size(); ++i) {
        EditResult r = edit(models[i], editor, mode);
        measure_edit(r, models[i], mode, batch.x, batch.y, batch.s, ds.n_groups);
        std::printf("%s: requirement=%.6f jsd=%.6f edit_seconds=%.6f\n", ids[i].c_str(),
                    natural_requirement(mode, ds.d_in, r.requirement), r.jsd, r.edit_seconds);
        if (!save_path.empty()) {
            save_model(r.edited, save_path);
            std::printf("saved edited model -> %s\n", save_path.c_str());
        }
    }
}

void cmd_compose(const Options& opt, const std::string& zoo_dir,
                 const std::vector<std::string>& editor_paths, const std::string& model_id,
                 const std::string& save_path) {
    ZooManifest zoo = load_zoo(zoo_dir);
    TabularDataset ds = dataset_for_zoo(opt, zoo_dir);
    std::vector<MetanetParams> editors;
    for (const std::string& p : editor_paths) editors.push_back(load_metanet(p));
    std::vector<ComposeStage> stages;
    for (const MetanetParams& e : editors) stages.push_back({&e, e.config.mode});

    MlpModel model = load_zoo_model(zoo, model_id);
    EvalBatch batch = eval_batch(opt, ds, Split::test);
    ComposeResult res = compose(model, stages, batch.x, batch.y, batch.s, ds.n_groups);

    for (size_t i = 0; i < res.stages.size(); ++i)
        std::printf("stage %zu (%s): requirement=%.6f jsd=%.6f\n", i + 1,
                    edit_mode_name(stages[i].mode),
                    natural_requirement(stages[i].mode, ds.d_in, res.stages[i].requirement),
                    res.stages[i].jsd);
    std::printf("composite jsd vs original: %.6f\n", res.composite_jsd);
    if (!save_path.empty()) {
        save_model(res.edited, save_path);
        std::printf("saved composed model -> %s\n", save_path.c_str());
    }
}

void cmd_baseline_run(const Options& opt, const std::string& zoo_dir, const std::string& method,
                      std::vector<double> budgets) {
    ZooManifest zoo = load_zoo(zoo_dir);
    TabularDataset ds = dataset_for_zoo(opt, zoo_dir);
    EditMode mode = baseline_mode(method);
    if (method == "threshold_opt") {
        if (!budgets.empty()) throw ValidationError("threshold_opt takes no budgets");
        budgets = {0.0};
    }
    if (budgets.empty()) throw ValidationError("baseline '" + method + "' needs --budgets");

    std::vector<std::string> ids;
    std::vector<MlpModel> models = load_models(zoo, zoo.split_test, &ids);
    EvalBatch batch = eval_batch(opt, ds, Split::test);

    std::vector<MethodRun> runs;
    for (double b : budgets) runs.push_back(measure_baseline(opt, method, b, models, ids, ds, batch));
    std::vector<AggregateRow> rows = evaluate_method(runs, ids);
    for (const AggregateRow& r : rows)
        std::printf("%s budget=%-8s requirement=%.6f±%.6f jsd=%.6f±%.6f n=%lld\n", r.method.c_str(),
                    fmt_g(r.budget).c_str(), natural_requirement(mode, ds.d_in, r.requirement_mean),
                    r.requirement_std, r.jsd_mean, r.jsd_std, static_cast<long long>(r.n_models));
    emit_rows(opt, "baseline_" + method + ".csv", rows, mode, ds.d_in);
}

void cmd_eval_pareto(const Options& opt, const std::string& zoo_dir,
                     const std::vector<std::string>& editor_paths,
                     const std::vector<std::string>& baselines, const std::vector<double>& budgets) {
    if (editor_paths.empty() && baselines.empty())
        throw ValidationError("eval pareto needs --editors and/or --baselines");
    ZooManifest zoo = load_zoo(zoo_dir);
    TabularDataset ds = dataset_for_zoo(opt, zoo_dir);

    std::vector<MetanetParams> editors;
    for (const std::string& p : editor_paths) editors.push_back(load_metanet(p));
    EditMode mode = editors.empty() ? baseline_mode(baselines.front()) : editors.front().config.mode;
    for (const MetanetParams& e : editors)
        if (e.config.mode != mode)
            throw ValidationError("editors mix modes; evaluate one requirement at a time");
    for (const std::string& b : baselines)
        if (baseline_mode(b) != mode)
            throw ValidationError("baseline '" + b + "' does not answer the " +
                                  std::string(edit_mode_name(mode)) + " requirement");

    std::vector<std::string> ids;
    std::vector<MlpModel> models = load_models(zoo, zoo.split_test, &ids);
    EvalBatch batch = eval_batch(opt, ds, Split::test);

    std::vector<MethodRun> runs;
    for (const MetanetParams& e : editors)
        runs.push_back(measure_editor(e, models, ids, batch, ds.n_groups));
    for (const std::string& b : baselines)
        for (double budget : (b == "threshold_opt" ? std::vector<double>{0.0} : budgets))
            runs.push_back(measure_baseline(opt, b, budget, models, ids, ds, batch));

    std::vector<AggregateRow> rows = evaluate_method(runs, ids);
    std::vector<ParetoPoint> points;
    for (const AggregateRow& r : rows) {
        ParetoPoint pt;
        pt.requirement = r.requirement_mean;  // axis stays in minimization units here
        pt.jsd = r.jsd_mean;
        points.push_back(pt);
    }
    std::vector<int64_t> front = pareto_filter(points);
    std::set<int64_t> on_front(front.begin(), front.end());

    std::vector<AggregateRow> front_rows;
    for (int64_t i : front) front_rows.push_back(rows[static_cast<size_t>(i)]);
    emit_rows(opt, "eval.csv", rows, mode, ds.d_in);
    emit_rows(opt, "front.csv", front_rows, mode, ds.d_in);
    for (size_t i = 0; i < rows.size(); ++i)
        std::printf("%-16s budget=%-8s requirement=%.6f jsd=%.6f%s\n", rows[i].method.c_str(),
                    fmt_g(rows[i].budget).c_str(),
                    natural_requirement(mode, ds.d_in, rows[i].requirement_mean), rows[i].jsd_mean,
                    on_front.count(static_cast<int64_t>(i)) ? "  [front]" : "");
}

void cmd_eval_ablate(const Options& opt, const std::string& zoo_dir, const std::string& mode_name,
                     const std::vector<double>& lambdas, const std::vector<double>& fractions) {
    ZooManifest zoo = load_zoo(zoo_dir);
    TabularDataset ds = dataset_for_zoo(opt, zoo_dir);
    EditMode mode = edit_mode_from_name(mode_name);
    TrainRun base = run_from_config(opt, mode, 0.0);

    std::vector<AblateResult> results =
        ablate_sample_efficiency(fractions, lambdas, base, zoo, ds, opt.out);

    std::string path = (fs::path(opt.out) / "ablate.csv").string();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write " + path);
    f << "fraction,lambda,requirement,jsd,on_front\n";
    for (const AblateResult& res : results)
        for (const SweepPoint& sp : res.sweep) {
            char line[200];
            std::snprintf(line, sizeof(line), "%.12g,%.12g,%.12g,%.12g,%d\n", res.fraction,
                          sp.lambda, natural_requirement(mode, ds.d_in, sp.validation.requirement),
                          sp.validation.jsd, sp.on_front ? 1 : 0);
            f << line;
            std::printf("fraction=%-5s lambda=%-8s requirement=%.6f jsd=%.6f%s\n",
                        fmt_g(res.fraction).c_str(), fmt_g(sp.lambda).c_str(),
                        natural_requirement(mode, ds.d_in, sp.validation.requirement),
                        sp.validation.jsd, sp.on_front ? "  [front]" : "");
        }
    f.close();
    write_run_sidecar(path, opt.seed, config_digest(opt), 0);
    std::printf("wrote %s\n", path.c_str());
}

void cmd_bench_time(const Options& opt, const std::string& zoo_dir, const std::string& editor_path,
                    const std::vector<std::string>& methods, double budget) {
    ZooManifest zoo = load_zoo(zoo_dir);
    TabularDataset ds = dataset_for_zoo(opt, zoo_dir);
    std::vector<std::string> ids;
    std::vector<MlpModel> models = load_models(zoo, zoo.split_test, &ids);
    int64_t cap = opt.i64("bench_models", static_cast<int64_t>(models.size()));
    if (static_cast<int64_t>(models.size()) > cap) models.resize(static_cast<size_t>(cap));

    MetanetParams editor;
    bool have_editor = !editor_path.empty();
    if (have_editor) editor = load_metanet(editor_path);

    std::vector<int64_t> reserved = ds.val_reserved();
    Tensor fit_x = ds.rows(reserved);
    std::vector<int> fit_y = ds.labels_at(reserved);
    std::vector<int> fit_s = ds.has_sensitive() ? ds.groups_at(reserved) : std::vector<int>{};
    int64_t shuffles = opt.i64("pfi_shuffles", 5);
    int64_t keep = ds.d_in / 2;

    std::vector<BenchRecord> records;
    for (const std::string& name : methods) {
        std::function<void(const MlpModel&)> fn;
        if (name == "gmn") {
            if (!have_editor) throw ValidationError("bench method 'gmn' needs --editor");
            fn = [&](const MlpModel& m) { edit(m, editor, editor.config.mode); };
        } else if (name == "fs_mask") {
            fn = [&](const MlpModel& m) {
                fs_mask(m, pfi_rank(m, fit_x, fit_y, static_cast<int>(shuffles), opt.seed), keep);
            };
        } else if (name == "fs_retrain") {
            fn = [&](const MlpModel& m) {
                fs_retrain(m, pfi_rank(m, fit_x, fit_y, static_cast<int>(shuffles), opt.seed), keep,
                           ds, opt.i64("retrain_epochs", 100), opt.f64("retrain_lr", 1e-3), opt.seed);
            };
        } else if (name == "threshold_opt") {
            fn = [&](const MlpModel& m) { threshold_opt_fit(positive_scores(m, fit_x), fit_y, fit_s); };
        } else if (is_prune_method(name)) {
            PruneMethod pm = prune_method_from_name(name);
            fn = [&, pm](const MlpModel& m) {
                prune_baseline(m, budget, pm, ds, opt.seed, opt.i64("lottery_epochs", 20),
                               opt.f64("retrain_lr", 1e-3));
            };
        } else {
            throw ValidationError("unknown bench method '" + name + "'");
        }
        records.push_back(bench_method(name, models, fn));
        std::printf("%-14s median=%.6fs over %zu models\n", name.c_str(),
                    records.back().median_seconds, records.back().seconds.size());
    }

    fs::create_directories(opt.out);
    std::string path = (fs::path(opt.out) / "bench.csv").string();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write " + path);
    f << "method,median_seconds,n_models,hardware\n";
    for (const BenchRecord& r : records) {
        char line[256];
        std::snprintf(line, sizeof(line), "%s,%.9g,%zu,%s\n", r.method.c_str(), r.median_seconds,
                      r.seconds.size(), r.hardware.c_str());
        f << line;
    }
    f.close();
    write_run_sidecar(path, opt.seed, config_digest(opt), static_cast<int64_t>(records.size()));
    std::printf("wrote %s\n", path.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    Options opt;
    CLI::App app{"editing trained MLPs for requirement compliance"};
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--seed", opt.seed, "base RNG seed");
    app.add_option("--config", opt.config_path, "key=value config file");
    app.add_option("--out", opt.out, "output directory");

    // zoo
    CLI::App* zoo = app.add_subcommand("zoo", "model population management");
    zoo->require_subcommand(1);
    zoo->fallthrough();
    int64_t experiments = 200, zoo_epochs = 60;
    CLI::App* zoo_build = zoo->add_subcommand("build", "train a population of MLPs");
    zoo_build->add_option("--experiments", experiments, "hyperparameter draws");
    zoo_build->add_option("--epochs", zoo_epochs, "training epochs per experiment");
    std::string zoo_dir;
    bool deep = false;
    CLI::App* zoo_inspect = zoo->add_subcommand("inspect", "summarize a population");
    zoo_inspect->add_option("--zoo", zoo_dir, "zoo directory")->required();
    zoo_inspect->add_flag("--deep", deep, "verify every checkpoint checksum");

    // metanet
    CLI::App* metanet = app.add_subcommand("metanet", "editor training");
    metanet->require_subcommand(1);
    metanet->fallthrough();
    std::string mn_zoo, mn_mode = "dm";
    double mn_lambda = 0.1;
    std::vector<double> mn_lambdas;
    CLI::App* mn_train = metanet->add_subcommand("train", "train one editor");
    mn_train->add_option("--zoo", mn_zoo, "zoo directory")->required();
    mn_train->add_option("--mode", mn_mode, "dm, fair, or prune");
    mn_train->add_option("--lambda", mn_lambda, "requirement weight");
    CLI::App* mn_sweep = metanet->add_subcommand("sweep", "train editors across lambdas");
    mn_sweep->add_option("--zoo", mn_zoo, "zoo directory")->required();
    mn_sweep->add_option("--mode", mn_mode, "dm, fair, or prune");
    mn_sweep->add_option("--lambdas", mn_lambdas, "lambda grid")->delimiter(',')->required();

    // edit / compose
    std::string ed_zoo, ed_editor, ed_model, ed_save;
    CLI::App* edit_cmd = app.add_subcommand("edit", "apply an editor to checkpoints");
    edit_cmd->add_option("--zoo", ed_zoo, "zoo directory")->required();
    edit_cmd->add_option("--editor", ed_editor, "editor checkpoint")->required();
    edit_cmd->add_option("--model", ed_model, "record id (default: every test model)");
    edit_cmd->add_option("--save", ed_save, "write the edited model here");

    std::string co_zoo, co_model, co_save;
    std::vector<std::string> co_editors;
    CLI::App* compose_cmd = app.add_subcommand("compose", "chain editors on one checkpoint");
    compose_cmd->add_option("--zoo", co_zoo, "zoo directory")->required();
    compose_cmd->add_option("--editors", co_editors, "editor checkpoints, applied in order")
        ->delimiter(',')
        ->required();
    compose_cmd->add_option("--model", co_model, "record id")->required();
    compose_cmd->add_option("--save", co_save, "write the composed model here");

    // baseline
    CLI::App* baseline = app.add_subcommand("baseline", "classical methods");
    baseline->require_subcommand(1);
    baseline->fallthrough();
    std::string bl_zoo, bl_method;
    std::vector<double> bl_budgets;
    CLI::App* bl_run = baseline->add_subcommand("run", "run one baseline over the test split");
    bl_run->add_option("--zoo", bl_zoo, "zoo directory")->required();
    bl_run->add_option("--method", bl_method, "fs_mask, fs_retrain, threshold_opt, or a prune method")
        ->required();
    bl_run->add_option("--budgets", bl_budgets, "kept features or sparsities")->delimiter(',');

    // eval
    CLI::App* eval_cmd = app.add_subcommand("eval", "aggregate and compare methods");
    eval_cmd->require_subcommand(1);
    eval_cmd->fallthrough();
    std::string ev_zoo;
    std::vector<std::string> ev_editors, ev_baselines;
    std::vector<double> ev_budgets;
    CLI::App* ev_pareto = eval_cmd->add_subcommand("pareto", "test-split fronts across methods");
    ev_pareto->add_option("--zoo", ev_zoo, "zoo directory")->required();
    ev_pareto->add_option("--editors", ev_editors, "editor checkpoints")->delimiter(',');
    ev_pareto->add_option("--baselines", ev_baselines, "baseline methods")->delimiter(',');
    ev_pareto->add_option("--budgets", ev_budgets, "baseline budgets")->delimiter(',');
    std::string ab_mode = "dm";
    std::vector<double> ab_lambdas, ab_fractions = {0.1, 0.25, 0.5, 0.75, 1.0};
    CLI::App* ev_ablate = eval_cmd->add_subcommand("ablate", "training-set size ablation");
    ev_ablate->add_option("--zoo", ev_zoo, "zoo directory")->required();
    ev_ablate->add_option("--mode", ab_mode, "dm, fair, or prune");
    ev_ablate->add_option("--lambdas", ab_lambdas, "lambda grid")->delimiter(',')->required();
    ev_ablate->add_option("--fractions", ab_fractions, "training fractions")->delimiter(',');

    // bench
    CLI::App* bench = app.add_subcommand("bench", "timing comparisons");
    bench->require_subcommand(1);
    bench->fallthrough();
    std::string bt_zoo, bt_editor;
    std::vector<std::string> bt_methods;
    double bt_budget = 0.5;
    CLI::App* bt_time = bench->add_subcommand("time", "median per-model edit time");
    bt_time->add_option("--zoo", bt_zoo, "zoo directory")->required();
    bt_time->add_option("--methods", bt_methods, "methods to time")->delimiter(',')->required();
    bt_time->add_option("--editor", bt_editor, "editor checkpoint for the gmn method");
    bt_time->add_option("--budget", bt_budget, "sparsity for prune methods");

    try {
        app.parse(argc, argv);
        opt.load();
        if (*zoo_build) cmd_zoo_build(opt, experiments, zoo_epochs);
        if (*zoo_inspect) cmd_zoo_inspect(opt, zoo_dir, deep);
        if (*mn_train) cmd_metanet_train(opt, mn_zoo, mn_mode, mn_lambda);
        if (*mn_sweep) cmd_metanet_sweep(opt, mn_zoo, mn_mode, mn_lambdas);
        if (*edit_cmd) cmd_edit(opt, ed_zoo, ed_editor, ed_model, ed_save);
        if (*compose_cmd) cmd_compose(opt, co_zoo, co_editors, co_model, co_save);
        if (*bl_run) cmd_baseline_run(opt, bl_zoo, bl_method, bl_budgets);
        if (*ev_pareto) cmd_eval_pareto(opt, ev_zoo, ev_editors, ev_baselines, ev_budgets);
        if (*ev_ablate) cmd_eval_ablate(opt, ev_zoo, ab_mode, ab_lambdas, ab_fractions);
        if (*bt_time) cmd_bench_time(opt, bt_zoo, bt_editor, bt_methods, bt_budget);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
