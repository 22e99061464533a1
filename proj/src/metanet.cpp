#include "reqedit/metanet.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace reqedit {

namespace {

constexpr char kMetanetMagic[4] = {'R', 'Q', 'M', 'N'};
constexpr uint32_t kMetanetVersion = 1;

void collect(std::vector<Tensor*>& out, Ffn& f) {
    out.push_back(&f.W1);
    out.push_back(&f.b1);
    out.push_back(&f.W2);
    out.push_back(&f.b2);
}

FfnNodes register_ffn(Tape& t, const Ffn& f, bool req) {
    return {t.leaf(f.W1, req), t.leaf(f.b1, req), t.leaf(f.W2, req), t.leaf(f.b2, req)};
}

void collect_nodes(std::vector<NodeId>& out, const FfnNodes& f) {
    out.push_back(f.W1);
    out.push_back(f.b1);
    out.push_back(f.W2);
    out.push_back(f.b2);
}

}  // namespace

const char* edit_mode_name(EditMode mode) {
    switch (mode) {
        case EditMode::dm: return "dm";
        case EditMode::fair: return "fair";
        case EditMode::prune: return "prune";
    }
    return "?";
}

EditMode edit_mode_from_name(const std::string& name) {
    if (name == "dm") return EditMode::dm;
    if (name == "fair") return EditMode::fair;
    if (name == "prune") return EditMode::prune;
    throw ValidationError("unknown edit mode '" + name + "' (expected dm, fair, or prune)");
}

Ffn Ffn::init(int64_t in, int64_t hidden, int64_t out, Rng& rng, bool zero_out) {
    Ffn f;
    f.W1 = Tensor::zeros({hidden, in});
    f.b1 = Tensor::zeros({hidden});
    f.W2 = Tensor::zeros({out, hidden});
    f.b2 = Tensor::zeros({out});
    double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : f.W1.v) w = rng.uniform(-s1, s1);
    if (!zero_out) {
        double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
        for (double& w : f.W2.v) w = rng.uniform(-s2, s2);
    }
    return f;
}

void MetanetConfig::validate() const {
    if (hidden < 1) throw ValidationError("metanet hidden dim must be positive");
    if (depth < 1) throw ValidationError("metanet depth must be at least 1");
    if (dropout < 0 || dropout >= 1) throw ValidationError("metanet dropout must be in [0, 1)");
    if (tau <= 0) throw ValidationError("mask temperature must be positive");
}

std::vector<Tensor*> MetanetParams::all() {
    std::vector<Tensor*> out;
    collect(out, init_v);
    collect(out, init_e);
    for (Layer& l : layers) {
        collect(out, l.msg_f);
        collect(out, l.msg_b);
        collect(out, l.upd_v);
        collect(out, l.upd_e);
    }
    collect(out, head_vertex);
    collect(out, head_edge);
    collect(out, head_node_cls);
    collect(out, head_edge_cls);
    out.push_back(&gamma);
    return out;
}

std::vector<const Tensor*> MetanetParams::all() const {
    std::vector<const Tensor*> out;
    for (Tensor* t : const_cast<MetanetParams*>(this)->all()) out.push_back(t);
    return out;
}

int64_t MetanetParams::n_params() const {
    int64_t n = 0;
    for (const Tensor* t : all()) n += t->numel();
    return n;
}

MetanetParams init_metanet(const MetanetConfig& config, int64_t vertex_in, int64_t edge_in) {
    config.validate();
    if (vertex_in < 1 || edge_in < 1) throw ValidationError("init_metanet: feature dims must be positive");

    Rng rng(mix_seed(config.seed, 0x6d657461ULL));
    MetanetParams p;
    p.config = config;
    p.vertex_in = vertex_in;
    p.edge_in = edge_in;
    int64_t h = config.hidden;

    p.init_v = Ffn::init(vertex_in, h, h, rng);
    p.init_e = Ffn::init(edge_in, h, h, rng);
    for (int64_t l = 0; l < config.depth; ++l) {
        MetanetParams::Layer layer;
        layer.msg_f = Ffn::init(2 * h, h, h, rng);
        layer.msg_b = Ffn::init(2 * h, h, h, rng);
        layer.upd_v = Ffn::init(3 * h, h, h, rng);
        layer.upd_e = Ffn::init(3 * h, h, h, rng);
        p.layers.push_back(std::move(layer));
    }
    // zero output layers: the editor starts as the identity with 0.5 masks
    p.head_vertex = Ffn::init(h, h, 3, rng, true);
    p.head_edge = Ffn::init(h, h, 1, rng, true);
    p.head_node_cls = Ffn::init(h, h, 2, rng, true);
    p.head_edge_cls = Ffn::init(h, h, 2, rng, true);
    p.gamma = Tensor::scalar(config.gamma_init);
    return p;
}

void save_metanet(const MetanetParams& params, const std::string& path) {
    nlohmann::json header;
    header["hidden"] = params.config.hidden;
    header["depth"] = params.config.depth;
    header["dropout"] = params.config.dropout;
    header["tau"] = params.config.tau;
    header["gamma_init"] = params.config.gamma_init;
    header["activation"] = activation_name(params.config.activation);
    header["seed"] = params.config.seed;
    header["mode"] = edit_mode_name(params.config.mode);
    header["trained_lambda"] = params.config.trained_lambda;
    header["vertex_in"] = params.vertex_in;
    header["edge_in"] = params.edge_in;

    std::vector<double> payload;
    for (const Tensor* t : params.all()) payload.insert(payload.end(), t->v.begin(), t->v.end());
    header["checksum"] = fnv1a64(payload.data(), payload.size() * sizeof(double));
    std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write metanet file: " + path);
    out.write(kMetanetMagic, 4);
    uint32_t version = kMetanetVersion, hlen = static_cast<uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!out) throw ValidationError("failed writing metanet file: " + path);
}

MetanetParams load_metanet(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open metanet file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != std::string(kMetanetMagic, 4))
        throw ValidationError("not a metanet file: " + path);
    uint32_t version = 0, hlen = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || version != kMetanetVersion)
        throw ValidationError("metanet file " + path + ": unsupported version");
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in) throw ValidationError("metanet file " + path + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const std::exception& e) {
        throw ValidationError("metanet file " + path + ": bad header: " + e.what());
    }

    MetanetConfig config;
    config.hidden = header.at("hidden").get<int64_t>();
    config.depth = header.at("depth").get<int64_t>();
    config.dropout = header.at("dropout").get<double>();
    config.tau = header.at("tau").get<double>();
    config.gamma_init = header.at("gamma_init").get<double>();
    config.activation = activation_from_name(header.at("activation").get<std::string>());
    config.seed = header.at("seed").get<uint64_t>();
    config.mode = edit_mode_from_name(header.at("mode").get<std::string>());
    config.trained_lambda = header.at("trained_lambda").get<double>();

    MetanetParams p = init_metanet(config, header.at("vertex_in").get<int64_t>(),
                                   header.at("edge_in").get<int64_t>());
    std::vector<double> payload;
    for (Tensor* t : p.all()) {
        size_t off = payload.size();
        payload.resize(off + t->v.size());
        in.read(reinterpret_cast<char*>(payload.data() + off),
                static_cast<std::streamsize>(t->v.size() * sizeof(double)));
        if (!in) throw ValidationError("metanet file " + path + ": truncated payload");
        std::copy(payload.begin() + static_cast<std::ptrdiff_t>(off), payload.end(), t->v.begin());
    }
    if (fnv1a64(payload.data(), payload.size() * sizeof(double)) != header.at("checksum").get<uint64_t>())
        throw ValidationError("metanet file " + path + ": checksum mismatch");
    return p;
}

MetanetNodes register_metanet(Tape& tape, const MetanetParams& params, bool requires_grad) {
    MetanetNodes n;
    n.init_v = register_ffn(tape, params.init_v, requires_grad);
    n.init_e = register_ffn(tape, params.init_e, requires_grad);
    for (const MetanetParams::Layer& l : params.layers) {
        MetanetNodes::Layer ln;
        ln.msg_f = register_ffn(tape, l.msg_f, requires_grad);
        ln.msg_b = register_ffn(tape, l.msg_b, requires_grad);
        ln.upd_v = register_ffn(tape, l.upd_v, requires_grad);
        ln.upd_e = register_ffn(tape, l.upd_e, requires_grad);
        n.layers.push_back(ln);
    }
    n.head_vertex = register_ffn(tape, params.head_vertex, requires_grad);
    n.head_edge = register_ffn(tape, params.head_edge, requires_grad);
    n.head_node_cls = register_ffn(tape, params.head_node_cls, requires_grad);
    n.head_edge_cls = register_ffn(tape, params.head_edge_cls, requires_grad);
    n.gamma = tape.leaf(params.gamma, requires_grad);
    return n;
}

std::vector<NodeId> metanet_node_list(const MetanetNodes& n) {
    std::vector<NodeId> out;
    collect_nodes(out, n.init_v);
    collect_nodes(out, n.init_e);
    for (const MetanetNodes::Layer& l : n.layers) {
        collect_nodes(out, l.msg_f);
        collect_nodes(out, l.msg_b);
        collect_nodes(out, l.upd_v);
        collect_nodes(out, l.upd_e);
    }
    collect_nodes(out, n.head_vertex);
    collect_nodes(out, n.head_edge);
    collect_nodes(out, n.head_node_cls);
    collect_nodes(out, n.head_edge_cls);
    out.push_back(n.gamma);
    return out;
}

NodeId ffn_apply(Tape& t, const FfnNodes& f, NodeId x, Activation act) {
    NodeId hidden = t.activation(t.add(t.matmul(x, f.W1, false, true), f.b1), act);
    return t.add(t.matmul(hidden, f.W2, false, true), f.b2);
}

StateNodes init_features(Tape& t, const ParamGraph& g, const MetanetParams& p, const MetanetNodes& n) {
    if (g.vertex_dim() != p.vertex_in || g.edge_dim() != p.edge_in)
        throw ValidationError("feature dims " + std::to_string(g.vertex_dim()) + "/" +
                              std::to_string(g.edge_dim()) + " do not match the editor's " +
                              std::to_string(p.vertex_in) + "/" + std::to_string(p.edge_in));
    StateNodes s;
    s.h_v = ffn_apply(t, n.init_v, t.constant(g.vertex_features), p.config.activation);
    s.h_e = ffn_apply(t, n.init_e, t.constant(g.edge_features), p.config.activation);
    return s;
}

StateNodes message_pass(Tape& t, const ParamGraph& g, const MetanetParams& p,
                        const MetanetNodes::Layer& layer, StateNodes s, bool train, Rng* rng) {
    Activation act = p.config.activation;
    NodeId h_src = t.gather_rows(s.h_v, g.edge_src);
    NodeId h_dst = t.gather_rows(s.h_v, g.edge_dst);

    NodeId msg_f = ffn_apply(t, layer.msg_f, t.concat({h_src, s.h_e}, 1), act);
    NodeId msg_b = ffn_apply(t, layer.msg_b, t.concat({h_dst, s.h_e}, 1), act);
    NodeId agg_fwd = t.scatter_add_rows(msg_f, g.edge_dst, g.n_vertices);
    NodeId agg_bwd = t.scatter_add_rows(msg_b, g.edge_src, g.n_vertices);

    NodeId dv = ffn_apply(t, layer.upd_v, t.concat({s.h_v, agg_fwd, agg_bwd}, 1), act);
    NodeId de = ffn_apply(t, layer.upd_e, t.concat({s.h_e, h_src, h_dst}, 1), act);
    if (train && p.config.dropout > 0) {
        if (!rng) throw ValidationError("message_pass: training with dropout needs an rng");
        dv = t.dropout(dv, p.config.dropout, true, *rng);
        de = t.dropout(de, p.config.dropout, true, *rng);
    }
    return {t.add(s.h_v, dv), t.add(s.h_e, de)};
}

EditNodes edit_forward(Tape& t, const ParamGraph& g, const MetanetParams& p, const MetanetNodes& n,
                       EditMode mode, bool train, Rng* rng) {
    StateNodes s = init_features(t, g, p, n);
    for (const MetanetNodes::Layer& layer : n.layers) s = message_pass(t, g, p, layer, s, train, rng);

    Activation act = p.config.activation;
    EditNodes out;
    out.vertex_residual = ffn_apply(t, n.head_vertex, s.h_v, act);
    out.edge_residual = ffn_apply(t, n.head_edge, s.h_e, act);
    if (mode == EditMode::dm)
        out.node_logits = ffn_apply(t, n.head_node_cls, t.gather_rows(s.h_v, g.input_vertices()), act);
    if (mode == EditMode::prune) out.edge_logits = ffn_apply(t, n.head_edge_cls, s.h_e, act);
    return out;
}

Edit edit_forward(const ParamGraph& graph, const MetanetParams& params, EditMode mode) {
    Tape t;
    MetanetNodes n = register_metanet(t, params, false);
    EditNodes e = edit_forward(t, graph, params, n, mode);
    Edit out;
    out.vertex_residual = t.value(e.vertex_residual);
    out.edge_residual = t.value(e.edge_residual);
    if (e.node_logits >= 0) out.node_logits = t.value(e.node_logits);
    if (e.edge_logits >= 0) out.edge_logits = t.value(e.edge_logits);
    return out;
}

MlpModel residual_apply(const ParamGraph& graph, const Edit& edit, double gamma) {
    Tensor vraw = ops::add(graph.vertex_raw(), ops::scalar_mul(edit.vertex_residual, gamma));
    Tensor eraw = ops::add(graph.edge_raw(), ops::scalar_mul(edit.edge_residual, gamma));
    return from_graph(graph, vraw, eraw);
}

MlpTapeParams edited_tape_params(Tape& t, const MlpModel& m, const EditNodes& e, NodeId gamma) {
    if (!m.folded) throw ValidationError("edited_tape_params: model must be folded");
    const MlpConfig& cfg = m.config;
    int64_t L = cfg.depth();
    const Tensor& vres = t.value(e.vertex_residual);
    int64_t n_vertices = 0;
    for (int64_t l = 0; l <= L + 1; ++l) n_vertices += cfg.width(l);
    if (vres.shape != std::vector<int64_t>{n_vertices, ParamGraph::kRawVertexChannels})
        throw ValidationError("edited_tape_params: vertex residual " + vres.shape_str());
    if (t.value(e.edge_residual).numel() != m.n_edges())
        throw ValidationError("edited_tape_params: edge residual " + t.value(e.edge_residual).shape_str());

    MlpTapeParams p;
    p.W.assign(static_cast<size_t>(L + 1), -1);
    p.skipW.assign(static_cast<size_t>(L), -1);
    for (const MatrixSlice& s : matrix_slices(cfg)) {
        NodeId delta = t.reshape(t.block(e.edge_residual, s.offset, s.offset + s.rows * s.cols, 0, 1),
                                 {s.rows, s.cols});
        const Tensor& base = s.skip ? m.skipW[static_cast<size_t>(s.layer - 1)]
                                    : m.W[static_cast<size_t>(s.layer - 1)];
        NodeId hat = t.add(t.constant(base), t.mul(delta, gamma));
        if (s.skip)
            p.skipW[static_cast<size_t>(s.layer - 1)] = hat;
        else
            p.W[static_cast<size_t>(s.layer - 1)] = hat;
    }

    int64_t start = cfg.d_in;  // first vertex after the input layer
    for (int64_t l = 1; l <= L + 1; ++l) {
        int64_t w = cfg.width(l);
        size_t li = static_cast<size_t>(l - 1);
        NodeId db = t.reshape(t.block(e.vertex_residual, start, start + w, 0, 1), {w});
        p.b.push_back(t.add(t.constant(m.b[li]), t.mul(db, gamma)));
        if (l <= L && cfg.norm != NormKind::none) {
            NodeId dg = t.reshape(t.block(e.vertex_residual, start, start + w, 1, 2), {w});
            NodeId ds = t.reshape(t.block(e.vertex_residual, start, start + w, 2, 3), {w});
            p.gamma.push_back(t.add(t.constant(m.gamma[li]), t.mul(dg, gamma)));
            p.beta.push_back(t.add(t.constant(m.beta[li]), t.mul(ds, gamma)));
        }
        start += w;
    }
    return p;
}

Tensor soft_mask(const Tensor& logits, double tau) {
    if (tau <= 0) throw ValidationError("soft_mask: temperature must be positive");
    if (logits.ndim() != 2 || logits.cols() != 2)
        throw ValidationError("soft_mask: logits must be n x 2, got " + logits.shape_str());
    Tensor probs = ops::softmax(ops::scalar_mul(logits, 1.0 / tau), 1);
    return ops::reshape(ops::block(probs, 0, probs.rows(), 1, 2), {probs.rows()});
}

NodeId soft_mask(Tape& t, NodeId logits, double tau) {
    if (tau <= 0) throw ValidationError("soft_mask: temperature must be positive");
    const Tensor& v = t.value(logits);
    if (v.ndim() != 2 || v.cols() != 2)
        throw ValidationError("soft_mask: logits must be n x 2, got " + v.shape_str());
    int64_t n = v.rows();  // new nodes may relocate the storage behind v
    NodeId probs = t.softmax(t.scalar_mul(logits, 1.0 / tau), 1);
    return t.reshape(t.block(probs, 0, n, 1, 2), {n});
}

MlpTapeParams apply_input_mask(Tape& t, const MlpConfig& cfg, const MlpTapeParams& params, NodeId mask) {
    if (t.value(mask).numel() != cfg.d_in)
        throw ValidationError("input mask length " + std::to_string(t.value(mask).numel()) + " vs d_in " +
                              std::to_string(cfg.d_in));
    MlpTapeParams out = params;
    out.W[0] = t.scale_cols(params.W[0], mask);
    for (size_t l = 0; l < out.skipW.size(); ++l)
        if (cfg.skip_source[l] == 0 && params.skipW[l] >= 0)
            out.skipW[l] = t.scale_cols(params.skipW[l], mask);
    return out;
}

MlpTapeParams apply_edge_mask(Tape& t, const MlpConfig& cfg, const MlpTapeParams& params, NodeId mask) {
    int64_t n_edges = 0;
    std::vector<MatrixSlice> slices = matrix_slices(cfg);
    for (const MatrixSlice& s : slices) n_edges += s.rows * s.cols;
    if (t.value(mask).numel() != n_edges)
        throw ValidationError("edge mask length " + std::to_string(t.value(mask).numel()) + " vs " +
                              std::to_string(n_edges) + " edges");
    NodeId col = t.reshape(mask, {n_edges, 1});
    MlpTapeParams out = params;
    for (const MatrixSlice& s : slices) {
        NodeId block = t.reshape(t.block(col, s.offset, s.offset + s.rows * s.cols, 0, 1), {s.rows, s.cols});
        if (s.skip)
            out.skipW[static_cast<size_t>(s.layer - 1)] =
                t.mul(params.skipW[static_cast<size_t>(s.layer - 1)], block);
        else
            out.W[static_cast<size_t>(s.layer - 1)] = t.mul(params.W[static_cast<size_t>(s.layer - 1)], block);
    }
    return out;
}

}  // namespace reqedit
