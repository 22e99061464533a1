#include "reqedit/zoo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace reqedit {

namespace {

constexpr char kModelMagic[4] = {'R', 'Q', 'M', 'D'};
constexpr uint32_t kModelVersion = 1;

nlohmann::json config_json(const MlpConfig& c) {
    nlohmann::json j;
    j["d_in"] = c.d_in;
    j["out_features"] = c.out_features;
    j["hidden"] = c.hidden;
    j["activation"] = activation_name(c.activation);
    j["norm"] = norm_name(c.norm);
    j["dropout"] = c.dropout;
    j["skip_source"] = c.skip_source;
    j["batch_size"] = c.batch_size;
    j["lr"] = c.lr;
    j["weight_decay"] = c.weight_decay;
    j["seed"] = c.seed;
    return j;
}

MlpConfig config_from(const nlohmann::json& j) {
    MlpConfig c;
    c.d_in = j.at("d_in").get<int64_t>();
    c.out_features = j.at("out_features").get<int>();
    c.hidden = j.at("hidden").get<std::vector<int64_t>>();
    c.activation = activation_from_name(j.at("activation").get<std::string>());
    c.norm = norm_from_name(j.at("norm").get<std::string>());
    c.dropout = j.at("dropout").get<double>();
    c.skip_source = j.at("skip_source").get<std::vector<int>>();
    c.batch_size = j.at("batch_size").get<int64_t>();
    c.lr = j.at("lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    c.validate();
    return c;
}

void append_payload(std::vector<double>& payload, const Tensor& t) {
    payload.insert(payload.end(), t.v.begin(), t.v.end());
}

// fixed parameter order: W1 b1 .. W(L+1) b(L+1), gamma/beta per normed hidden
// layer, then present skip projections
std::vector<const Tensor*> payload_order(const MlpModel& m) {
    std::vector<const Tensor*> order;
    for (size_t l = 0; l < m.W.size(); ++l) {
        order.push_back(&m.W[l]);
        order.push_back(&m.b[l]);
    }
    for (size_t l = 0; l < m.gamma.size(); ++l) {
        order.push_back(&m.gamma[l]);
        order.push_back(&m.beta[l]);
    }
    for (const Tensor& s : m.skipW)
        if (s.numel() > 0) order.push_back(&s);
    return order;
}

std::vector<Tensor*> payload_order_mut(MlpModel& m) {
    std::vector<Tensor*> order;
    for (size_t l = 0; l < m.W.size(); ++l) {
        order.push_back(&m.W[l]);
        order.push_back(&m.b[l]);
    }
    for (size_t l = 0; l < m.gamma.size(); ++l) {
        order.push_back(&m.gamma[l]);
        order.push_back(&m.beta[l]);
    }
    for (Tensor& s : m.skipW)
        if (s.numel() > 0) order.push_back(&s);
    return order;
}

}  // namespace

std::string config_to_json(const MlpConfig& config) { return config_json(config).dump(); }

MlpConfig config_from_json(const std::string& text) {
    try {
        return config_from(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad config json: ") + e.what());
    }
}

MlpConfig sample_config(Rng& rng, int64_t d_in, int out_features) {
    const std::vector<int64_t> depths = {1, 2, 3, 4};
    const std::vector<int64_t> widths = {32, 48, 64};
    const std::vector<double> dropouts = {0.0, 0.1, 0.2, 0.3};
    const std::vector<int64_t> batches = {64, 128, 256};
    // sigmoid hidden layers stall at the majority class under plain SGD, so the
    // sampled grid leaves it out; explicit configs can still request it
    const std::vector<Activation> acts = {Activation::relu, Activation::gelu, Activation::tanh,
                                          Activation::leaky_relu, Activation::identity};
    const std::vector<NormKind> norms = {NormKind::batch, NormKind::layer, NormKind::none};

    MlpConfig c;
    c.d_in = d_in;
    c.out_features = out_features;
    int64_t depth = rng.choice(depths);
    int64_t floor_width = 0;
    for (int64_t l = 0; l < depth; ++l) {
        // widths below the previous choice are excluded to keep sizes monotone
        std::vector<int64_t> allowed;
        for (int64_t w : widths)
            if (w >= floor_width) allowed.push_back(w);
        int64_t w = rng.choice(allowed);
        c.hidden.push_back(w);
        floor_width = w;
    }
    c.activation = rng.choice(acts);
    c.norm = rng.choice(norms);
    c.dropout = rng.choice(dropouts);
    for (int64_t l = 1; l <= depth; ++l) {
        bool has_skip = l >= 2 && rng.bernoulli(0.5);
        c.skip_source.push_back(has_skip ? static_cast<int>(rng.next(l - 1)) : -1);
    }
    c.batch_size = rng.choice(batches);
    c.lr = rng.log_uniform(1e-3, 1e-1);
    c.weight_decay = rng.log_uniform(1e-6, 1e-2);
    c.seed = mix_seed(rng.engine()(), 0x5EEDULL);
    c.validate();
    return c;
}

std::vector<Checkpoint> train_mlp(const MlpConfig& config, const TabularDataset& data, int64_t epochs) {
    config.validate();
    if (epochs < 1) throw ValidationError("train_mlp: epochs must be at least 1");
    if (config.d_in != data.d_in || config.out_features != data.n_classes)
        throw ValidationError("train_mlp: config dims do not match dataset " + data.name);

    int64_t epoch_early = std::max<int64_t>(1, std::llround(static_cast<double>(epochs) / 12.0));
    int64_t epoch_mid = std::max<int64_t>(1, std::llround(static_cast<double>(epochs) / 2.0));

    MlpModel model = MlpModel::init(config);
    Rng batch_rng(mix_seed(config.seed, 0xBA7CULL));
    Rng dropout_rng(mix_seed(config.seed, 0xD0D0ULL));
    BatchSampler sampler(data, Split::train, config.batch_size, batch_rng);
    int64_t steps_per_epoch = sampler.pool_size() / config.batch_size;

    std::vector<int64_t> val_idx = data.split_indices(Split::val);
    Tensor val_X = data.rows(val_idx);
    std::vector<int> val_y = data.labels_at(val_idx);

    auto snapshot = [&](const std::string& stage, int64_t epoch) {
        MlpModel copy = model;
        fold_norm(copy);
        double acc = copy.accuracy(val_X, val_y);
        return Checkpoint{stage, epoch, std::move(copy), acc};
    };

    std::vector<Checkpoint> checkpoints;
    for (int64_t epoch = 1; epoch <= epochs; ++epoch) {
        for (int64_t step = 0; step < steps_per_epoch; ++step) {
            std::vector<int64_t> idx = sampler.next_indices();
            Tape tape;
            MlpTapeParams params = register_mlp_params(tape, model);
            NodeId x = tape.constant(data.rows(idx));
            NodeId logits = mlp_train_forward(tape, model, params, x, dropout_rng);
            NodeId loss = tape.cross_entropy(logits, data.labels_at(idx));
            double loss_val = tape.value(loss).v[0];
            if (!std::isfinite(loss_val))
                throw NumericalError("training diverged at epoch " + std::to_string(epoch) + " step " +
                                     std::to_string(step));
            tape.backward(loss);

            // plain SGD; weight decay folded into the gradient
            std::vector<NodeId> leaves = params.all();
            std::vector<Tensor*> tensors;
            for (Tensor& w : model.W) tensors.push_back(&w);
            for (Tensor& bb : model.b) tensors.push_back(&bb);
            for (Tensor& g : model.gamma) tensors.push_back(&g);
            for (Tensor& be : model.beta) tensors.push_back(&be);
            for (Tensor& s : model.skipW)
                if (s.numel() > 0) tensors.push_back(&s);
            for (size_t i = 0; i < leaves.size(); ++i) {
                const Tensor& g = tape.grad(leaves[i]);
                Tensor& p = *tensors[i];
                for (size_t j = 0; j < p.v.size(); ++j)
                    p.v[j] -= config.lr * (g.v[j] + config.weight_decay * p.v[j]);
            }
        }
        if (epoch == epoch_early) checkpoints.push_back(snapshot("early", epoch));
        if (epoch == epoch_mid) checkpoints.push_back(snapshot("mid", epoch));
        if (epoch == epochs) checkpoints.push_back(snapshot("final", epoch));
    }
    // degenerate epoch counts can merge stages; keep three records regardless
    while (checkpoints.size() < 3) {
        Checkpoint extra = checkpoints.back();
        extra.stage = checkpoints.size() == 1 ? "mid" : "final";
        checkpoints.push_back(std::move(extra));
    }
    return checkpoints;
}

uint64_t save_model(const MlpModel& m, const std::string& path) {
    m.validate();
    if (!m.folded) throw ValidationError("save_model: fold the model first");

    nlohmann::json header;
    header["config"] = config_json(m.config);
    header["folded"] = true;
    std::string hs = header.dump();

    std::vector<double> payload;
    for (const Tensor* t : payload_order(m)) append_payload(payload, *t);
    uint64_t checksum = fnv1a64(payload.data(), payload.size() * sizeof(double));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write model file: " + path);
    out.write(kModelMagic, 4);
    uint32_t version = kModelVersion, hlen = static_cast<uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!out) throw ValidationError("failed writing model file: " + path);
    return checksum;
}

MlpModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open model file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != std::string(kModelMagic, 4))
        throw ValidationError("not a model file: " + path);
    uint32_t version = 0, hlen = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || version != kModelVersion)
        throw ValidationError("model file " + path + ": unsupported version");
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in) throw ValidationError("model file " + path + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const std::exception& e) {
        throw ValidationError("model file " + path + ": bad header: " + e.what());
    }

    MlpModel m = MlpModel::init(config_from(header.at("config")));
    fold_norm(m);
    for (Tensor* t : payload_order_mut(m)) {
        in.read(reinterpret_cast<char*>(t->v.data()), static_cast<std::streamsize>(t->v.size() * sizeof(double)));
        if (!in) throw ValidationError("model file " + path + ": truncated payload");
    }
    m.validate();
    return m;
}

const ZooRecord& ZooManifest::record(const std::string& id) const {
    for (const ZooRecord& r : records)
        if (r.id == id) return r;
    throw ValidationError("zoo has no model '" + id + "'");
}

std::vector<const ZooRecord*> ZooManifest::records_in(const std::vector<int64_t>& experiments) const {
    std::vector<const ZooRecord*> out;
    for (const ZooRecord& r : records)
        if (std::find(experiments.begin(), experiments.end(), r.experiment) != experiments.end())
            out.push_back(&r);
    return out;
}

ZooManifest build_zoo(int64_t n_experiments, const TabularDataset& data, uint64_t seed,
                      const std::string& out_dir, int64_t epochs) {
    if (n_experiments < 1) throw ValidationError("build_zoo: need at least one experiment");
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "models");

    ZooManifest zoo;
    zoo.dataset = data.name;
    zoo.seed = seed;
    zoo.n_experiments = n_experiments;
    zoo.dir = out_dir;

    Rng master(seed);
    for (int64_t exp = 0; exp < n_experiments; ++exp) {
        std::vector<Checkpoint> cps;
        constexpr int kMaxAttempts = 50;
        for (int attempt = 0;; ++attempt) {
            Rng exp_rng = master.child(static_cast<uint64_t>(exp * kMaxAttempts + attempt));
            MlpConfig config = sample_config(exp_rng, data.d_in, data.n_classes);
            try {
                cps = train_mlp(config, data, epochs);
                break;
            } catch (const NumericalError& e) {
                std::fprintf(stderr, "experiment %lld attempt %d: %s; resampling\n",
                             static_cast<long long>(exp), attempt, e.what());
                if (attempt + 1 >= kMaxAttempts)
                    throw NumericalError("experiment " + std::to_string(exp) + ": no stable config after " +
                                         std::to_string(kMaxAttempts) + " attempts");
            }
        }
        for (Checkpoint& cp : cps) {
            char idbuf[64];
            std::snprintf(idbuf, sizeof(idbuf), "exp%04lld_%s", static_cast<long long>(exp), cp.stage.c_str());
            ZooRecord rec;
            rec.id = idbuf;
            rec.experiment = exp;
            rec.stage = cp.stage;
            rec.file = "models/" + rec.id + ".bin";
            rec.val_acc = cp.val_acc;
            rec.config = cp.model.config;
            rec.checksum = save_model(cp.model, (fs::path(out_dir) / rec.file).string());
            zoo.records.push_back(std::move(rec));
        }
    }

    std::vector<int64_t> order(static_cast<size_t>(n_experiments));
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(mix_seed(seed, 0x5A00ULL));
    split_rng.shuffle(order);
    int64_t n_train = (n_experiments * 80) / 100;
    int64_t n_val = (n_experiments * 10) / 100;
    if (n_experiments >= 3) {
        n_train = std::max<int64_t>(1, n_train);
        n_val = std::max<int64_t>(1, n_val);
        if (n_train + n_val >= n_experiments) n_train = n_experiments - n_val - 1;
    }
    for (int64_t i = 0; i < n_experiments; ++i) {
        if (i < n_train) zoo.split_train.push_back(order[static_cast<size_t>(i)]);
        else if (i < n_train + n_val) zoo.split_val.push_back(order[static_cast<size_t>(i)]);
        else zoo.split_test.push_back(order[static_cast<size_t>(i)]);
    }
    std::sort(zoo.split_train.begin(), zoo.split_train.end());
    std::sort(zoo.split_val.begin(), zoo.split_val.end());
    std::sort(zoo.split_test.begin(), zoo.split_test.end());

    // manifest written last: a directory without one is not a usable zoo
    save_zoo_manifest(zoo, out_dir);
    return zoo;
}

void save_zoo_manifest(const ZooManifest& zoo, const std::string& dir) {
    nlohmann::json j;
    j["dataset"] = zoo.dataset;
    j["seed"] = zoo.seed;
    j["n_experiments"] = zoo.n_experiments;
    j["split_train"] = zoo.split_train;
    j["split_val"] = zoo.split_val;
    j["split_test"] = zoo.split_test;
    nlohmann::json records = nlohmann::json::array();
    for (const ZooRecord& r : zoo.records) {
        nlohmann::json rec;
        rec["id"] = r.id;
        rec["experiment"] = r.experiment;
        rec["stage"] = r.stage;
        rec["file"] = r.file;
        rec["val_acc"] = r.val_acc;
        rec["checksum"] = r.checksum;
        rec["config"] = config_json(r.config);
        records.push_back(std::move(rec));
    }
    j["records"] = std::move(records);

    std::ofstream out(std::filesystem::path(dir) / "zoo.json");
    if (!out) throw ValidationError("cannot write zoo manifest in " + dir);
    out << j.dump(2) << '\n';
    if (!out) throw ValidationError("failed writing zoo manifest in " + dir);
}

ZooManifest load_zoo(const std::string& dir) {
    std::ifstream in(std::filesystem::path(dir) / "zoo.json");
    if (!in) throw ValidationError("no zoo manifest in " + dir);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ValidationError("zoo manifest in " + dir + ": " + e.what());
    }
    ZooManifest zoo;
    zoo.dataset = j.at("dataset").get<std::string>();
    zoo.seed = j.at("seed").get<uint64_t>();
    zoo.n_experiments = j.at("n_experiments").get<int64_t>();
    zoo.split_train = j.at("split_train").get<std::vector<int64_t>>();
    zoo.split_val = j.at("split_val").get<std::vector<int64_t>>();
    zoo.split_test = j.at("split_test").get<std::vector<int64_t>>();
    zoo.dir = dir;
    for (const auto& rec : j.at("records")) {
        ZooRecord r;
        r.id = rec.at("id").get<std::string>();
        r.experiment = rec.at("experiment").get<int64_t>();
        r.stage = rec.at("stage").get<std::string>();
        r.file = rec.at("file").get<std::string>();
        r.val_acc = rec.at("val_acc").get<double>();
        r.checksum = rec.at("checksum").get<uint64_t>();
        r.config = config_from(rec.at("config"));
        zoo.records.push_back(std::move(r));
    }
    return zoo;
}

MlpModel load_zoo_model(const ZooManifest& zoo, const std::string& id) {
    const ZooRecord& rec = zoo.record(id);
    std::string path = (std::filesystem::path(zoo.dir) / rec.file).string();
    MlpModel m = load_model(path);
    std::vector<double> payload;
    for (const Tensor* t : payload_order(m)) append_payload(payload, *t);
    uint64_t checksum = fnv1a64(payload.data(), payload.size() * sizeof(double));
    if (checksum != rec.checksum)
        throw ValidationError("zoo model '" + id + "': checksum mismatch");
    return m;
}

}  // namespace reqedit
