#include "reqedit/param_graph.hpp"

#include <numeric>

#include "json.hpp"

namespace reqedit {

namespace {

constexpr int64_t kMaxHiddenLayers = 4;

const Tensor& slice_weights(const MlpModel& m, const MatrixSlice& s) {
    return s.skip ? m.skipW[static_cast<size_t>(s.layer - 1)] : m.W[static_cast<size_t>(s.layer - 1)];
}

}  // namespace

std::vector<MatrixSlice> matrix_slices(const MlpConfig& cfg) {
    std::vector<MatrixSlice> slices;
    int64_t L = cfg.depth(), offset = 0;
    for (int64_t l = 1; l <= L + 1; ++l) {
        MatrixSlice dense{false, l, l - 1, cfg.width(l), cfg.width(l - 1), offset};
        offset += dense.rows * dense.cols;
        slices.push_back(dense);
        if (l <= L) {
            int src = cfg.skip_source[static_cast<size_t>(l - 1)];
            if (src >= 0) {
                MatrixSlice skip{true, l, src, cfg.width(l), cfg.width(src), offset};
                offset += skip.rows * skip.cols;
                slices.push_back(skip);
            }
        }
    }
    return slices;
}

int64_t ParamGraph::layer_start(int64_t layer) const {
    int64_t start = 0;
    for (int64_t l = 0; l < layer; ++l) start += config.width(l);
    return start;
}

std::vector<int64_t> ParamGraph::input_vertices() const {
    std::vector<int64_t> v(static_cast<size_t>(config.d_in));
    std::iota(v.begin(), v.end(), 0);
    return v;
}

Tensor ParamGraph::vertex_raw() const {
    return ops::block(vertex_features, 0, n_vertices, 0, kRawVertexChannels);
}

Tensor ParamGraph::edge_raw() const { return ops::block(edge_features, 0, n_edges, 0, 1); }

ParamGraph to_graph(const MlpModel& model) {
    model.validate();
    if (!model.folded) throw ValidationError("to_graph: model must be folded to eval form");
    const MlpConfig& cfg = model.config;
    int64_t L = cfg.depth();
    if (L > kMaxHiddenLayers)
        throw ValidationError("to_graph: depth " + std::to_string(L) + " beyond the supported family");

    ParamGraph g;
    g.config = cfg;
    for (int64_t l = 0; l <= L + 1; ++l) g.n_vertices += cfg.width(l);
    g.vertex_layer.resize(static_cast<size_t>(g.n_vertices));
    for (int64_t l = 0, v = 0; l <= L + 1; ++l)
        for (int64_t i = 0; i < cfg.width(l); ++i) g.vertex_layer[static_cast<size_t>(v++)] = l;

    int64_t sym = g.sym_dim();
    g.vertex_features = Tensor::zeros({g.n_vertices, g.vertex_dim()});

    // per-vertex symmetry encoding: input and output neurons individually,
    // hidden neurons by layer block only
    auto sym_slot = [&](int64_t v) -> int64_t {
        int64_t layer = g.vertex_layer[static_cast<size_t>(v)];
        if (layer == 0) return v;  // input index
        if (layer == L + 1) return cfg.d_in + (v - g.layer_start(L + 1));
        return cfg.d_in + cfg.out_features + (layer - 1);
    };

    for (int64_t v = 0; v < g.n_vertices; ++v) {
        int64_t layer = g.vertex_layer[static_cast<size_t>(v)];
        // raw channels
        if (layer > 0) {
            int64_t offset = v - g.layer_start(layer);
            size_t li = static_cast<size_t>(layer - 1);
            g.vertex_features.at(v, 0) = model.b[li].v[static_cast<size_t>(offset)];
            if (layer <= L && cfg.norm != NormKind::none) {
                g.vertex_features.at(v, 1) = model.gamma[li].v[static_cast<size_t>(offset)];
                g.vertex_features.at(v, 2) = model.beta[li].v[static_cast<size_t>(offset)];
            }
        }
        g.vertex_features.at(v, ParamGraph::kRawVertexChannels + sym_slot(v)) = 1.0;
        // functionality channels describe the vertex's own layer
        int64_t f0 = ParamGraph::kRawVertexChannels + sym;
        if (layer > 0) {
            Activation act = layer == L + 1 ? Activation::identity : cfg.activation;
            NormKind norm = layer == L + 1 ? NormKind::none : cfg.norm;
            double drop = layer == L + 1 ? 0.0 : cfg.dropout;
            g.vertex_features.at(v, f0 + static_cast<int64_t>(act)) = 1.0;
            g.vertex_features.at(v, f0 + 6 + static_cast<int64_t>(norm)) = 1.0;
            g.vertex_features.at(v, f0 + 9) = drop;
        }
    }

    // edges
    std::vector<MatrixSlice> slices = matrix_slices(cfg);
    for (const MatrixSlice& mr : slices) g.n_edges += mr.rows * mr.cols;
    g.edge_features = Tensor::zeros({g.n_edges, g.edge_dim()});
    g.edge_src.reserve(static_cast<size_t>(g.n_edges));
    g.edge_dst.reserve(static_cast<size_t>(g.n_edges));
    g.edge_ref.reserve(static_cast<size_t>(g.n_edges));

    int64_t e = 0;
    for (const MatrixSlice& mr : slices) {
        int64_t dst0 = g.layer_start(mr.layer);
        int64_t src0 = g.layer_start(mr.src_layer);
        const Tensor& Wm = slice_weights(model, mr);
        for (int64_t r = 0; r < Wm.shape[0]; ++r) {
            for (int64_t c = 0; c < Wm.shape[1]; ++c) {
                int64_t src = src0 + c, dst = dst0 + r;
                g.edge_src.push_back(src);
                g.edge_dst.push_back(dst);
                g.edge_ref.push_back({mr.skip, mr.layer, r, c});
                g.edge_features.at(e, 0) = Wm.at(r, c);
                g.edge_features.at(e, 1 + sym_slot(src)) = 1.0;
                g.edge_features.at(e, 1 + sym + sym_slot(dst)) = 1.0;
                g.edge_features.at(e, 1 + 2 * sym + (mr.skip ? 1 : 0)) = 1.0;
                ++e;
            }
        }
    }
    return g;
}

MlpModel from_graph(const ParamGraph& g, const Tensor& vertex_values, const Tensor& edge_values) {
    if (vertex_values.shape != std::vector<int64_t>{g.n_vertices, ParamGraph::kRawVertexChannels})
        throw ValidationError("from_graph: vertex values " + vertex_values.shape_str() + ", expected " +
                              std::to_string(g.n_vertices) + "x3");
    if (edge_values.numel() != g.n_edges)
        throw ValidationError("from_graph: " + std::to_string(edge_values.numel()) + " edge values for " +
                              std::to_string(g.n_edges) + " edges");

    const MlpConfig& cfg = g.config;
    int64_t L = cfg.depth();
    MlpModel m = MlpModel::init(cfg);
    fold_norm(m);

    for (int64_t v = 0; v < g.n_vertices; ++v) {
        int64_t layer = g.vertex_layer[static_cast<size_t>(v)];
        if (layer == 0) continue;
        int64_t offset = v - g.layer_start(layer);
        size_t li = static_cast<size_t>(layer - 1);
        m.b[li].v[static_cast<size_t>(offset)] = vertex_values.at(v, 0);
        if (layer <= L && cfg.norm != NormKind::none) {
            m.gamma[li].v[static_cast<size_t>(offset)] = vertex_values.at(v, 1);
            m.beta[li].v[static_cast<size_t>(offset)] = vertex_values.at(v, 2);
        }
    }
    for (int64_t e = 0; e < g.n_edges; ++e) {
        const ParamGraph::EdgeRef& ref = g.edge_ref[static_cast<size_t>(e)];
        Tensor& Wm = ref.skip ? m.skipW[static_cast<size_t>(ref.layer - 1)] : m.W[static_cast<size_t>(ref.layer - 1)];
        Wm.at(ref.row, ref.col) = edge_values.v[static_cast<size_t>(e)];
    }
    m.validate();
    return m;
}

MlpModel apply_input_mask(const MlpModel& edited, const Tensor& m) {
    if (m.numel() != edited.config.d_in)
        throw ValidationError("input mask length " + std::to_string(m.numel()) + " vs d_in " +
                              std::to_string(edited.config.d_in));
    MlpModel out = edited;
    for (int64_t c = 0; c < out.config.d_in; ++c) {
        double f = m.v[static_cast<size_t>(c)];
        for (int64_t r = 0; r < out.W[0].shape[0]; ++r) out.W[0].at(r, c) *= f;
    }
    for (size_t l = 0; l < out.skipW.size(); ++l) {
        if (out.config.skip_source[l] != 0 || out.skipW[l].numel() == 0) continue;
        for (int64_t c = 0; c < out.config.d_in; ++c) {
            double f = m.v[static_cast<size_t>(c)];
            for (int64_t r = 0; r < out.skipW[l].shape[0]; ++r) out.skipW[l].at(r, c) *= f;
        }
    }
    return out;
}

MlpModel apply_edge_mask(const MlpModel& edited, const Tensor& m) {
    if (m.numel() != edited.n_edges())
        throw ValidationError("edge mask length " + std::to_string(m.numel()) + " vs " +
                              std::to_string(edited.n_edges()) + " edges");
    MlpModel out = edited;
    for (const MatrixSlice& s : matrix_slices(out.config)) {
        Tensor& Wm = s.skip ? out.skipW[static_cast<size_t>(s.layer - 1)] : out.W[static_cast<size_t>(s.layer - 1)];
        for (int64_t i = 0; i < Wm.numel(); ++i)
            Wm.v[static_cast<size_t>(i)] *= m.v[static_cast<size_t>(s.offset + i)];
    }
    return out;
}

MlpModel permute_hidden_layer(const MlpModel& model, int64_t layer, const std::vector<int64_t>& perm) {
    int64_t L = model.config.depth();
    if (layer < 1 || layer > L) throw ValidationError("permute: layer " + std::to_string(layer) + " is not hidden");
    int64_t width = model.config.width(layer);
    if (static_cast<int64_t>(perm.size()) != width) throw ValidationError("permute: size mismatch");
    std::vector<bool> hit(static_cast<size_t>(width), false);
    for (int64_t p : perm) {
        if (p < 0 || p >= width || hit[static_cast<size_t>(p)])
            throw ValidationError("permute: not a permutation of 0.." + std::to_string(width - 1));
        hit[static_cast<size_t>(p)] = true;
    }

    MlpModel out = model;
    size_t li = static_cast<size_t>(layer - 1);
    // rows of the layer's own weights and per-neuron vectors
    for (int64_t r = 0; r < width; ++r) {
        int64_t src = perm[static_cast<size_t>(r)];
        for (int64_t c = 0; c < model.W[li].shape[1]; ++c) out.W[li].at(r, c) = model.W[li].at(src, c);
        out.b[li].v[static_cast<size_t>(r)] = model.b[li].v[static_cast<size_t>(src)];
        if (!model.gamma.empty()) {
            out.gamma[li].v[static_cast<size_t>(r)] = model.gamma[li].v[static_cast<size_t>(src)];
            out.beta[li].v[static_cast<size_t>(r)] = model.beta[li].v[static_cast<size_t>(src)];
        }
        if (!model.run_mean.empty()) {
            out.run_mean[li].v[static_cast<size_t>(r)] = model.run_mean[li].v[static_cast<size_t>(src)];
            out.run_var[li].v[static_cast<size_t>(r)] = model.run_var[li].v[static_cast<size_t>(src)];
        }
        if (model.skipW[li].numel() > 0)
            for (int64_t c = 0; c < model.skipW[li].shape[1]; ++c)
                out.skipW[li].at(r, c) = model.skipW[li].at(src, c);
    }
    // columns of every consumer of this layer's activations
    auto permute_cols = [&](const Tensor& src_mat, Tensor& dst_mat) {
        for (int64_t r = 0; r < src_mat.shape[0]; ++r)
            for (int64_t c = 0; c < width; ++c)
                dst_mat.at(r, c) = src_mat.at(r, perm[static_cast<size_t>(c)]);
    };
    permute_cols(model.W[static_cast<size_t>(layer)], out.W[static_cast<size_t>(layer)]);
    for (int64_t dst = layer + 1; dst <= L; ++dst) {
        size_t di = static_cast<size_t>(dst - 1);
        if (model.config.skip_source[di] == static_cast<int>(layer) && model.skipW[di].numel() > 0)
            permute_cols(model.skipW[di], out.skipW[di]);
    }
    return out;
}

std::string graph_to_json(const ParamGraph& g) {
    nlohmann::json j;
    j["n_vertices"] = g.n_vertices;
    j["n_edges"] = g.n_edges;
    j["vertex_dim"] = g.vertex_dim();
    j["edge_dim"] = g.edge_dim();
    j["vertex_layer"] = g.vertex_layer;
    j["edge_src"] = g.edge_src;
    j["edge_dst"] = g.edge_dst;
    j["vertex_features"] = g.vertex_features.v;
    j["edge_features"] = g.edge_features.v;
    return j.dump();
}

}  // namespace reqedit
