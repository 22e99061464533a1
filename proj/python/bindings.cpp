#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "reqedit/baselines.hpp"
#include "reqedit/eval.hpp"
#include "reqedit/synth.hpp"

namespace py = pybind11;
using namespace reqedit;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    Tensor t;
    if (a.ndim() == 1) {
        t = Tensor::zeros({a.shape(0)});
    } else if (a.ndim() == 2) {
        t = Tensor::zeros({a.shape(0), a.shape(1)});
    } else {
        throw ValidationError("expected a 1-d or 2-d array");
    }
    std::memcpy(t.v.data(), a.data(), t.v.size() * sizeof(double));
    return t;
}

py::array_t<double> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> a(shape);
    std::memcpy(a.mutable_data(), t.v.data(), t.v.size() * sizeof(double));
    return a;
}

EditMode mode_arg(const std::string& name) { return edit_mode_from_name(name); }

TrainRun make_run(const std::string& mode, double lam, int64_t k, double tau, int64_t hidden,
                  int64_t depth, const std::string& activation, double mask_tau, double lr,
                  double weight_decay, int64_t model_batch, int64_t epochs, int64_t max_steps,
                  int64_t patience, int64_t val_batch, uint64_t seed,
                  const std::string& checkpoint_path) {
    TrainRun run;
    run.objective.requirement = mode_arg(mode);
    run.objective.lambda = lam;
    run.objective.k = k;
    run.objective.tau = tau;
    run.metanet.hidden = hidden;
    run.metanet.depth = depth;
    run.metanet.activation = activation_from_name(activation);
    run.metanet.tau = mask_tau;
    run.metanet.seed = mix_seed(seed, 0x6d657461ULL);
    run.lr = lr;
    run.weight_decay = weight_decay;
    run.model_batch = model_batch;
    run.epochs = epochs;
    run.max_steps = max_steps;
    run.patience = patience;
    run.val_batch = val_batch;
    run.seed = seed;
    run.checkpoint_path = checkpoint_path;
    return run;
}

py::dict result_dict(const EditResult& r) {
    py::dict d;
    d["edited"] = r.edited;
    d["jsd"] = r.jsd;
    d["requirement"] = r.requirement;
    d["edit_seconds"] = r.edit_seconds;
    d["hard_mask"] = r.hard_mask.numel() > 0 ? py::object(to_numpy(r.hard_mask)) : py::none();
    return d;
}

}  // namespace

PYBIND11_MODULE(_reqedit, m) {
    m.doc() = "editing trained MLPs for requirement compliance";
#ifdef REQEDIT_VERSION
    m.attr("__version__") = REQEDIT_VERSION;
#endif

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_RuntimeError);

    py::class_<TabularDataset>(m, "Dataset")
        .def_readonly("name", &TabularDataset::name)
        .def_readonly("n", &TabularDataset::n)
        .def_readonly("d_in", &TabularDataset::d_in)
        .def_readonly("n_classes", &TabularDataset::n_classes)
        .def_readonly("n_groups", &TabularDataset::n_groups)
        .def_readonly("feature_names", &TabularDataset::feature_names)
        .def("rows",
             [](const TabularDataset& ds, const std::string& split, int64_t cap) {
                 Split which = split == "train"  ? Split::train
                               : split == "val"  ? Split::val
                               : split == "test" ? Split::test
                                                 : throw ValidationError("unknown split '" + split + "'");
                 std::vector<int64_t> idx = ds.split_indices(which);
                 if (cap > 0 && static_cast<int64_t>(idx.size()) > cap) idx.resize(static_cast<size_t>(cap));
                 py::dict out;
                 out["X"] = to_numpy(ds.rows(idx));
                 out["y"] = ds.labels_at(idx);
                 out["s"] = ds.has_sensitive() ? py::object(py::cast(ds.groups_at(idx))) : py::none();
                 return out;
             },
             py::arg("split"), py::arg("cap") = 0,
             "Leading rows of a split as {'X','y','s'}")
        .def("__repr__", [](const TabularDataset& ds) {
            return "<Dataset " + ds.name + ": n=" + std::to_string(ds.n) +
                   " d_in=" + std::to_string(ds.d_in) + ">";
        });

    m.def("synth_dataset", &synth_dataset, py::arg("name"), py::arg("rows"), py::arg("seed"),
          "Synthesize a named tabular schema with train/val/test splits");

    py::class_<MlpModel>(m, "Model")
        .def_property_readonly("d_in", [](const MlpModel& m_) { return m_.config.d_in; })
        .def_property_readonly("n_edges", &MlpModel::n_edges)
        .def_property_readonly("hidden", [](const MlpModel& m_) { return m_.config.hidden; })
        .def("forward", [](const MlpModel& m_, const py::array_t<double>& x) {
            return to_numpy(m_.forward(to_tensor(x)));
        })
        .def("accuracy", [](const MlpModel& m_, const py::array_t<double>& x,
                            const std::vector<int>& y) { return m_.accuracy(to_tensor(x), y); })
        .def("save", [](const MlpModel& m_, const std::string& path) { save_model(m_, path); })
        .def("__repr__", [](const MlpModel& m_) {
            return "<Model d_in=" + std::to_string(m_.config.d_in) +
                   " edges=" + std::to_string(m_.n_edges()) + ">";
        });

    m.def("load_model", &load_model, py::arg("path"));

    py::class_<ZooManifest>(m, "Zoo")
        .def_readonly("dataset", &ZooManifest::dataset)
        .def_readonly("n_experiments", &ZooManifest::n_experiments)
        .def_property_readonly("n_checkpoints",
                               [](const ZooManifest& z) { return z.records.size(); })
        .def("ids",
             [](const ZooManifest& z, const std::string& split) {
                 const std::vector<int64_t>& exps = split == "train" ? z.split_train
                                                    : split == "val" ? z.split_val
                                                                     : z.split_test;
                 if (split != "train" && split != "val" && split != "test")
                     throw ValidationError("unknown split '" + split + "'");
                 std::vector<std::string> out;
                 for (const ZooRecord* r : z.records_in(exps)) out.push_back(r->id);
                 return out;
             },
             py::arg("split"))
        .def("load", [](const ZooManifest& z, const std::string& id) { return load_zoo_model(z, id); },
             py::arg("id"))
        .def("__repr__", [](const ZooManifest& z) {
            return "<Zoo " + z.dataset + ": " + std::to_string(z.records.size()) + " checkpoints over " +
                   std::to_string(z.n_experiments) + " experiments>";
        });

    m.def("build_zoo", &build_zoo, py::arg("experiments"), py::arg("dataset"), py::arg("seed"),
          py::arg("out_dir"), py::arg("epochs") = 60,
          py::call_guard<py::gil_scoped_release>());
    m.def("load_zoo", &load_zoo, py::arg("dir"));

    py::class_<MetanetParams>(m, "Editor")
        .def_property_readonly("mode",
                               [](const MetanetParams& p) { return edit_mode_name(p.config.mode); })
        .def_property_readonly("trained_lambda",
                               [](const MetanetParams& p) { return p.config.trained_lambda; })
        .def("save", [](const MetanetParams& p, const std::string& path) { save_metanet(p, path); })
        .def("__repr__", [](const MetanetParams& p) {
            return std::string("<Editor mode=") + edit_mode_name(p.config.mode) + " lambda=" +
                   std::to_string(p.config.trained_lambda) + ">";
        });

    m.def("load_editor", &load_metanet, py::arg("path"));

    m.def(
        "train_editor",
        [](const std::vector<MlpModel>& train_models, const std::vector<MlpModel>& val_models,
           const TabularDataset& data, const std::string& mode, double lam, int64_t k, double tau,
           int64_t hidden, int64_t depth, const std::string& activation, double mask_tau, double lr,
           double weight_decay, int64_t model_batch, int64_t epochs, int64_t max_steps,
           int64_t patience, int64_t val_batch, uint64_t seed, const std::string& checkpoint_path) {
            TrainRun run = make_run(mode, lam, k, tau, hidden, depth, activation, mask_tau, lr,
                                    weight_decay, model_batch, epochs, max_steps, patience, val_batch,
                                    seed, checkpoint_path);
            TrainReport report;
            MetanetParams params;
            {
                py::gil_scoped_release release;
                params = train_metanetwork(run, train_models, val_models, data, &report);
            }
            py::dict rep;
            rep["steps"] = report.steps;
            rep["best_step"] = report.best_step;
            rep["best_val"] = report.best_val;
            rep["nan_retries"] = report.nan_retries;
            rep["flagged_loss_increase"] = report.flagged_loss_increase;
            return py::make_tuple(params, rep);
        },
        py::arg("train_models"), py::arg("val_models"), py::arg("data"), py::arg("mode"),
        py::arg("lam"), py::arg("k") = 128, py::arg("tau") = 1.0, py::arg("hidden") = 32,
        py::arg("depth") = 5, py::arg("activation") = "relu", py::arg("mask_tau") = 1.0,
        py::arg("lr") = 1e-3, py::arg("weight_decay") = 0.0, py::arg("model_batch") = 32,
        py::arg("epochs") = 50, py::arg("max_steps") = 0, py::arg("patience") = 10,
        py::arg("val_batch") = 512, py::arg("seed") = 0, py::arg("checkpoint_path") = "",
        "Train an editor over model populations; returns (editor, report)");

    m.def(
        "edit",
        [](const MlpModel& model, const MetanetParams& editor, const py::object& x,
           const std::vector<int>& y, const std::vector<int>& s, int n_groups) {
            EditResult r = reqedit::edit(model, editor, editor.config.mode);
            if (!x.is_none())
                measure_edit(r, model, editor.config.mode, to_tensor(py::cast<py::array_t<double>>(x)),
                             y, s, n_groups);
            return result_dict(r);
        },
        py::arg("model"), py::arg("editor"), py::arg("x") = py::none(),
        py::arg("y") = std::vector<int>{}, py::arg("s") = std::vector<int>{}, py::arg("n_groups") = 0,
        "One forward edit; measures jsd/requirement on x when given");

    m.def(
        "compose",
        [](const MlpModel& model, const std::vector<MetanetParams>& editors,
           const py::array_t<double>& x, const std::vector<int>& y, const std::vector<int>& s,
           int n_groups) {
            std::vector<ComposeStage> stages;
            for (const MetanetParams& e : editors) stages.push_back({&e, e.config.mode});
            ComposeResult res = reqedit::compose(model, stages, to_tensor(x), y, s, n_groups);
            py::list stage_list;
            for (const EditResult& r : res.stages) stage_list.append(result_dict(r));
            py::dict d;
            d["edited"] = res.edited;
            d["stages"] = stage_list;
            d["composite_jsd"] = res.composite_jsd;
            return d;
        },
        py::arg("model"), py::arg("editors"), py::arg("x"), py::arg("y") = std::vector<int>{},
        py::arg("s") = std::vector<int>{}, py::arg("n_groups") = 0,
        "Apply editors in order; metrics per stage plus composite divergence");

    m.def("jsd_rows",
          [](const py::array_t<double>& p, const py::array_t<double>& q) {
              return jsd_rows(to_tensor(p), to_tensor(q));
          },
          py::arg("p"), py::arg("q"), "Row-mean Jensen-Shannon divergence, natural log");

    m.def("preservation_loss",
          [](const MlpModel& original, const MlpModel& edited, const py::array_t<double>& x) {
              return preservation_loss(original, edited, to_tensor(x));
          },
          py::arg("original"), py::arg("edited"), py::arg("x"));

    m.def("pareto_filter",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pts) {
              if (pts.ndim() != 2 || pts.shape(1) != 2)
                  throw ValidationError("expected an n x 2 array of (requirement, jsd)");
              std::vector<ParetoPoint> points(static_cast<size_t>(pts.shape(0)));
              for (py::ssize_t i = 0; i < pts.shape(0); ++i) {
                  points[static_cast<size_t>(i)].requirement = pts.at(i, 0);
                  points[static_cast<size_t>(i)].jsd = pts.at(i, 1);
              }
              return pareto_filter(points);
          },
          py::arg("points"),
          "Indices of the non-dominated rows under minimization on both axes");

    m.def("pfi_rank",
          [](const MlpModel& model, const py::array_t<double>& x, const std::vector<int>& y,
             int shuffles, uint64_t seed) { return pfi_rank(model, to_tensor(x), y, shuffles, seed); },
          py::arg("model"), py::arg("x"), py::arg("y"), py::arg("shuffles") = 5, py::arg("seed") = 0,
          "Features by descending permutation importance");

    m.def("fs_mask",
          [](const MlpModel& model, const std::vector<int64_t>& order, int64_t keep) {
              return result_dict(fs_mask(model, order, keep));
          },
          py::arg("model"), py::arg("order"), py::arg("keep"));

    m.def("fs_retrain",
          [](const MlpModel& model, const std::vector<int64_t>& order, int64_t keep,
             const TabularDataset& data, int64_t epochs, double lr, uint64_t seed) {
              EditResult r;
              {
                  py::gil_scoped_release release;
                  r = fs_retrain(model, order, keep, data, epochs, lr, seed);
              }
              return result_dict(r);
          },
          py::arg("model"), py::arg("order"), py::arg("keep"), py::arg("data"),
          py::arg("epochs") = 100, py::arg("lr") = 1e-3, py::arg("seed") = 0);

    m.def("prune_baseline",
          [](const MlpModel& model, double sparsity, const std::string& method,
             const TabularDataset& data, uint64_t seed, int64_t lottery_epochs, double lr) {
              EditResult r;
              {
                  py::gil_scoped_release release;
                  r = prune_baseline(model, sparsity, prune_method_from_name(method), data, seed,
                                     lottery_epochs, lr);
              }
              return result_dict(r);
          },
          py::arg("model"), py::arg("sparsity"), py::arg("method"), py::arg("data"),
          py::arg("seed") = 0, py::arg("lottery_epochs") = 20, py::arg("lr") = 1e-3);

    py::class_<ThresholdRule>(m, "ThresholdRule")
        .def_readonly("theta0", &ThresholdRule::theta0)
        .def_readonly("p0", &ThresholdRule::p0)
        .def_readonly("theta1", &ThresholdRule::theta1)
        .def_readonly("p1", &ThresholdRule::p1)
        .def_readonly("eod", &ThresholdRule::eod)
        .def_readonly("jsd", &ThresholdRule::jsd);

    m.def("positive_scores",
          [](const MlpModel& model, const py::array_t<double>& x) {
              return to_numpy(positive_scores(model, to_tensor(x)));
          },
          py::arg("model"), py::arg("x"));

    m.def("threshold_opt_fit",
          [](const py::array_t<double>& scores, const std::vector<int>& y, const std::vector<int>& s) {
              return threshold_opt_fit(to_tensor(scores), y, s);
          },
          py::arg("scores"), py::arg("y"), py::arg("s"));

    m.def("threshold_opt_eval",
          [](const ThresholdRule& rule, const py::array_t<double>& scores, const std::vector<int>& y,
             const std::vector<int>& s) {
              ParetoPoint pt = threshold_opt_eval(rule, to_tensor(scores), y, s);
              py::dict d;
              d["eod"] = pt.requirement;
              d["jsd"] = pt.jsd;
              return d;
          },
          py::arg("rule"), py::arg("scores"), py::arg("y"), py::arg("s"));
}
