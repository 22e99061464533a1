#include "reqedit/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include <sys/utsname.h>

#include "json.hpp"

namespace reqedit {

namespace {

constexpr double kMaxJsd = 0.6931471805599453;  // ln 2, the two-distribution ceiling

std::string run_label(const MethodRun& run) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", run.budget);
    return run.method + " at budget " + buf;
}

struct Stats {
    double mean = 0, std = 0, stderr_ = 0;
};

Stats stats_of(const std::vector<double>& v) {
    Stats s;
    double n = static_cast<double>(v.size());
    for (double x : v) s.mean += x;
    s.mean /= n;
    if (v.size() > 1) {
        double ss = 0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / (n - 1));
        s.stderr_ = s.std / std::sqrt(n);
    }
    return s;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace

std::vector<AggregateRow> evaluate_method(const std::vector<MethodRun>& runs,
                                          const std::vector<std::string>& expected_models) {
    if (expected_models.empty()) throw ValidationError("evaluate_method: no expected models");
    std::set<std::string> expected(expected_models.begin(), expected_models.end());
    if (expected.size() != expected_models.size())
        throw ValidationError("evaluate_method: expected model list has duplicates");

    std::vector<AggregateRow> rows;
    for (const MethodRun& run : runs) {
        if (run.method.empty()) throw ValidationError("evaluate_method: unnamed method");
        std::set<std::string> seen;
        std::vector<double> req, jsd;
        for (const ModelMeasure& m : run.measures) {
            if (!expected.count(m.model_id))
                throw ValidationError("evaluate_method: " + run_label(run) +
                                      " measures unknown model '" + m.model_id + "'");
            if (!seen.insert(m.model_id).second)
                throw ValidationError("evaluate_method: " + run_label(run) +
                                      " measures model '" + m.model_id + "' twice");
            if (!std::isfinite(m.requirement) || !std::isfinite(m.jsd))
                throw ValidationError("evaluate_method: " + run_label(run) +
                                      " has a non-finite measurement for '" + m.model_id + "'");
            if (m.jsd < 0 || m.jsd > kMaxJsd + 1e-9)
                throw ValidationError("evaluate_method: " + run_label(run) + " has jsd " +
                                      fmt(m.jsd) + " outside [0, ln 2] for '" + m.model_id + "'");
            req.push_back(m.requirement);
            jsd.push_back(m.jsd);
        }
        for (const std::string& id : expected_models)
            if (!seen.count(id))
                throw ValidationError("evaluate_method: " + run_label(run) + " is missing model '" +
                                      id + "'");

        Stats rs = stats_of(req), js = stats_of(jsd);
        AggregateRow row;
        row.method = run.method;
        row.budget = run.budget;
        row.requirement_mean = rs.mean;
        row.requirement_std = rs.std;
        row.requirement_stderr = rs.stderr_;
        row.jsd_mean = js.mean;
        row.jsd_std = js.std;
        row.jsd_stderr = js.stderr_;
        row.n_models = static_cast<int64_t>(expected_models.size());
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const AggregateRow& a, const AggregateRow& b) {
        if (a.method != b.method) return a.method < b.method;
        return a.budget < b.budget;
    });
    return rows;
}

double natural_requirement(EditMode mode, int64_t d_in, double requirement) {
    if (mode == EditMode::dm) return static_cast<double>(d_in) - requirement;
    return requirement;
}

void write_rows_csv(const std::vector<AggregateRow>& rows, const std::string& path) {
    std::ofstream f(path, std::ios::binary);  // binary keeps line endings fixed
    if (!f) throw ValidationError("cannot write " + path);
    f << "method,budget,requirement_mean,requirement_std,jsd_mean,jsd_std,n_models,"
         "requirement_stderr,jsd_stderr\n";
    for (const AggregateRow& r : rows) {
        if (r.method.find(',') != std::string::npos || r.method.find('\n') != std::string::npos)
            throw ValidationError("method name '" + r.method + "' cannot be a CSV field");
        f << r.method << ',' << fmt(r.budget) << ',' << fmt(r.requirement_mean) << ','
          << fmt(r.requirement_std) << ',' << fmt(r.jsd_mean) << ',' << fmt(r.jsd_std) << ','
          << r.n_models << ',' << fmt(r.requirement_stderr) << ',' << fmt(r.jsd_stderr) << '\n';
    }
}

void write_run_sidecar(const std::string& csv_path, uint64_t seed, const std::string& config_text,
                       int64_t n_rows) {
    nlohmann::json j;
    j["csv"] = std::filesystem::path(csv_path).filename().string();
    j["seed"] = seed;
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(config_text.data(), config_text.size())));
    j["config_hash"] = hash;
    j["hardware"] = hardware_descriptor();
    j["rows"] = n_rows;
    std::ofstream f(csv_path + ".meta.json", std::ios::binary);
    if (!f) throw ValidationError("cannot write " + csv_path + ".meta.json");
    f << j.dump(2) << '\n';
}

std::string hardware_descriptor() {
    utsname u{};
    uname(&u);
    return std::string(u.sysname) + " " + u.machine + ", " +
           std::to_string(std::thread::hardware_concurrency()) + " hardware threads";
}

double median(std::vector<double> v) {
    if (v.empty()) throw ValidationError("median of nothing");
    std::sort(v.begin(), v.end());
    size_t mid = v.size() / 2;
    if (v.size() % 2 == 1) return v[mid];
    return 0.5 * (v[mid - 1] + v[mid]);
}

BenchRecord bench_method(const std::string& method, const std::vector<MlpModel>& models,
                         const std::function<void(const MlpModel&)>& fn) {
    if (models.empty()) throw ValidationError("bench_method: no models");
    BenchRecord rec;
    rec.method = method;
    rec.hardware = hardware_descriptor();
    fn(models.front());  // warm-up, untimed
    for (const MlpModel& m : models) {
        auto t0 = std::chrono::steady_clock::now();
        fn(m);
        rec.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    rec.median_seconds = median(rec.seconds);
    return rec;
}

std::vector<int64_t> subsample_experiments(std::vector<int64_t> experiments, double fraction,
                                           uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ValidationError("fraction " + fmt(fraction) + " outside (0, 1]");
    if (experiments.empty()) throw ValidationError("subsample of an empty experiment list");
    size_t take = static_cast<size_t>(
        std::ceil(fraction * static_cast<double>(experiments.size())));
    Rng rng(mix_seed(seed, 0x61626c8ULL));
    rng.shuffle(experiments);
    experiments.resize(take);
    std::sort(experiments.begin(), experiments.end());
    return experiments;
}

std::vector<AblateResult> ablate_sample_efficiency(const std::vector<double>& fractions,
                                                   const std::vector<double>& grid, const TrainRun& base,
                                                   const ZooManifest& zoo, const TabularDataset& data,
                                                   const std::string& out_dir) {
    if (fractions.empty()) throw ValidationError("ablation needs at least one fraction");

    std::vector<MlpModel> val_models;
    for (const ZooRecord* r : zoo.records_in(zoo.split_val))
        val_models.push_back(load_zoo_model(zoo, r->id));

    std::vector<AblateResult> out;
    for (size_t i = 0; i < fractions.size(); ++i) {
        AblateResult res;
        res.fraction = fractions[i];
        res.experiments = subsample_experiments(zoo.split_train, fractions[i], mix_seed(base.seed, i));

        std::vector<MlpModel> train_models;
        for (const ZooRecord* r : zoo.records_in(res.experiments))
            train_models.push_back(load_zoo_model(zoo, r->id));

        std::string dir;
        if (!out_dir.empty()) {
            char sub[32];
            std::snprintf(sub, sizeof(sub), "frac_%d", static_cast<int>(std::lround(fractions[i] * 100)));
            dir = (std::filesystem::path(out_dir) / sub).string();
        }
        res.sweep = lambda_sweep(grid, base, train_models, val_models, data, dir);
        out.push_back(std::move(res));
    }
    return out;
}

}  // namespace reqedit
