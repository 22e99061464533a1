#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "reqedit/metanet.hpp"
#include "test_util.hpp"

using namespace reqedit;
using reqedit::testing::check_gradients;

namespace {

MlpConfig mlp_config(int64_t d_in, std::vector<int64_t> hidden, std::vector<int> skips,
                     NormKind norm = NormKind::layer, Activation act = Activation::tanh) {
    MlpConfig c;
    c.d_in = d_in;
    c.out_features = 2;
    c.hidden = std::move(hidden);
    c.activation = act;
    c.norm = norm;
    c.skip_source = std::move(skips);
    c.seed = 21;
    return c;
}

MetanetConfig small_editor(int64_t hidden, int64_t depth, Activation act = Activation::tanh) {
    MetanetConfig c;
    c.hidden = hidden;
    c.depth = depth;
    c.activation = act;
    c.seed = 5;
    return c;
}

MlpModel folded_model(const MlpConfig& c) {
    MlpModel m = MlpModel::init(c);
    fold_norm(m);
    return m;
}

Tensor random_input(int64_t n, int64_t d, uint64_t seed) {
    Rng rng(seed);
    Tensor x = Tensor::zeros({n, d});
    for (double& v : x.v) v = rng.normal();
    return x;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double m = 0;
    for (size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::fabs(a.v[i] - b.v[i]));
    return m;
}

// rebuilds the node struct from a flat leaf list laid out like MetanetParams::all()
MetanetNodes nodes_from_ids(const std::vector<NodeId>& ids, int64_t depth) {
    MetanetNodes n;
    size_t k = 0;
    auto take = [&]() {
        FfnNodes f{ids[k], ids[k + 1], ids[k + 2], ids[k + 3]};
        k += 4;
        return f;
    };
    n.init_v = take();
    n.init_e = take();
    for (int64_t l = 0; l < depth; ++l) {
        MetanetNodes::Layer lay;
        lay.msg_f = take();
        lay.msg_b = take();
        lay.upd_v = take();
        lay.upd_e = take();
        n.layers.push_back(lay);
    }
    n.head_vertex = take();
    n.head_edge = take();
    n.head_node_cls = take();
    n.head_edge_cls = take();
    n.gamma = ids[k];
    return n;
}

// gives the residual and classifier heads non-trivial output layers
void randomize_heads(MetanetParams& p, uint64_t seed, double scale = 0.3) {
    Rng rng(seed);
    for (Ffn* f : {&p.head_vertex, &p.head_edge, &p.head_node_cls, &p.head_edge_cls}) {
        for (double& w : f->W2.v) w = rng.uniform(-scale, scale);
        for (double& w : f->b2.v) w = rng.uniform(-scale, scale);
    }
}

}  // namespace

TEST_CASE("soft mask closed-form values") {
    Tensor logits = Tensor::zeros({3, 2});
    logits.at(1, 1) = std::log(3.0);
    logits.at(2, 0) = 1.0;
    logits.at(2, 1) = 2.0;

    Tensor m = soft_mask(logits, 1.0);
    CHECK(m.shape == std::vector<int64_t>{3});
    CHECK(m.v[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(m.v[1] == doctest::Approx(0.75).epsilon(1e-12));

    // temperature sharpens toward the argmax
    Tensor hard_limit = soft_mask(logits, 1e-3);
    CHECK(hard_limit.v[2] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(soft_mask(logits, 10.0).v[2] < m.v[2]);

    // tape path computes the same values
    Tape t;
    NodeId mm = soft_mask(t, t.constant(logits), 1.0);
    CHECK(t.value(mm).v == m.v);

    CHECK_THROWS_AS(soft_mask(logits, 0.0), ValidationError);
    CHECK_THROWS_AS(soft_mask(Tensor::zeros({3, 3}), 1.0), ValidationError);

    // hardening threshold: exactly 0.5 counts as active
    Tensor hard = ops::harden(m);
    CHECK(hard.v[0] == 1.0);
    CHECK(hard.v[1] == 1.0);
}

TEST_CASE("freshly initialized editor is the identity with uniform masks") {
    MlpModel m = folded_model(mlp_config(5, {8, 8}, {-1, 0}, NormKind::batch));
    ParamGraph g = to_graph(m);
    MetanetParams p = init_metanet(small_editor(12, 3), g.vertex_dim(), g.edge_dim());
    CHECK(p.gamma.v[0] == 0.1);

    Edit e = edit_forward(g, p, EditMode::dm);
    for (double v : e.vertex_residual.v) CHECK(v == 0.0);
    for (double v : e.edge_residual.v) CHECK(v == 0.0);
    REQUIRE(e.node_logits.shape == std::vector<int64_t>{5, 2});
    for (double v : e.node_logits.v) CHECK(v == 0.0);
    CHECK(e.edge_logits.numel() == 0);

    Tensor mask = soft_mask(e.node_logits, p.config.tau);
    for (double v : mask.v) CHECK(v == 0.5);
    for (double v : ops::harden(mask).v) CHECK(v == 1.0);  // ties keep the input

    MlpModel edited = residual_apply(g, e, p.gamma.v[0]);
    Tensor x = random_input(6, 5, 3);
    CHECK(edited.forward(x).v == m.forward(x).v);

    // fair mode carries no mask logits, prune mode emits per-edge logits
    CHECK(edit_forward(g, p, EditMode::fair).node_logits.numel() == 0);
    CHECK(edit_forward(g, p, EditMode::prune).edge_logits.shape == std::vector<int64_t>{g.n_edges, 2});
}

TEST_CASE("identical vertices share initial states and weight edits are local") {
    MlpConfig c = mlp_config(4, {8}, {-1}, NormKind::none);
    MlpModel m = folded_model(c);
    m.b[0].v[0] = m.b[0].v[1] = 0.25;  // neurons 0 and 1 now have equal features
    ParamGraph g = to_graph(m);
    MetanetParams p = init_metanet(small_editor(10, 2), g.vertex_dim(), g.edge_dim());

    Tape t;
    MetanetNodes n = register_metanet(t, p, false);
    StateNodes s = init_features(t, g, p, n);
    const Tensor& hv = t.value(s.h_v);
    int64_t v0 = g.layer_start(1), v1 = v0 + 1;
    for (int64_t ch = 0; ch < p.config.hidden; ++ch) CHECK(hv.at(v0, ch) == hv.at(v1, ch));

    // perturbing one weight moves exactly one initial edge state
    MlpModel m2 = m;
    m2.W[0].at(2, 3) += 0.5;
    ParamGraph g2 = to_graph(m2);
    Tape t2;
    StateNodes s2 = init_features(t2, g2, p, register_metanet(t2, p, false));
    const Tensor& he = t.value(s.h_e);
    const Tensor& he2 = t2.value(s2.h_e);
    int changed_rows = 0;
    for (int64_t e = 0; e < g.n_edges; ++e) {
        bool same = true;
        for (int64_t ch = 0; ch < p.config.hidden; ++ch)
            if (he.at(e, ch) != he2.at(e, ch)) same = false;
        if (!same) ++changed_rows;
    }
    CHECK(changed_rows == 1);
    CHECK(t.value(s.h_v).v == t2.value(s2.h_v).v);

    // editors built for another feature width refuse the graph
    MetanetParams wrong = init_metanet(small_editor(10, 2), g.vertex_dim() + 1, g.edge_dim());
    CHECK_THROWS_WITH_AS(edit_forward(g, wrong, EditMode::fair), doctest::Contains("feature dims"),
                         ValidationError);
}

TEST_CASE("zeroed update functions leave states unchanged across rounds") {
    MlpModel m = folded_model(mlp_config(4, {8}, {-1}, NormKind::none));
    ParamGraph g = to_graph(m);
    MetanetParams p = init_metanet(small_editor(10, 3), g.vertex_dim(), g.edge_dim());
    for (MetanetParams::Layer& l : p.layers) {
        for (double& w : l.upd_v.W2.v) w = 0;
        for (double& w : l.upd_v.b2.v) w = 0;
        for (double& w : l.upd_e.W2.v) w = 0;
        for (double& w : l.upd_e.b2.v) w = 0;
    }

    Tape t;
    MetanetNodes n = register_metanet(t, p, false);
    StateNodes s = init_features(t, g, p, n);
    Tensor hv0 = t.value(s.h_v), he0 = t.value(s.h_e);
    for (const MetanetNodes::Layer& layer : n.layers) s = message_pass(t, g, p, layer, s);
    CHECK(t.value(s.h_v).v == hv0.v);
    CHECK(t.value(s.h_e).v == he0.v);
}

TEST_CASE("editing commutes with hidden-layer permutation") {
    MlpConfig c = mlp_config(5, {8, 8}, {-1, 0}, NormKind::layer, Activation::gelu);
    MlpModel m = folded_model(c);
    ParamGraph g = to_graph(m);
    MetanetParams p = init_metanet(small_editor(12, 3), g.vertex_dim(), g.edge_dim());
    randomize_heads(p, 17);

    Rng rng(9);
    std::vector<int64_t> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);

    MlpModel pm = permute_hidden_layer(m, 1, perm);
    Edit e0 = edit_forward(g, p, EditMode::fair);
    Edit e1 = edit_forward(to_graph(pm), p, EditMode::fair);

    MlpModel edited0 = residual_apply(g, e0, p.gamma.v[0]);
    MlpModel edited1 = residual_apply(to_graph(pm), e1, p.gamma.v[0]);
    // permuting before editing lands on the permutation of the edited model
    MlpModel expect = permute_hidden_layer(edited0, 1, perm);
    for (size_t l = 0; l < expect.W.size(); ++l)
        CHECK(max_abs_diff(expect.W[l], edited1.W[l]) <= 1e-9);
    for (size_t l = 0; l < expect.b.size(); ++l)
        CHECK(max_abs_diff(expect.b[l], edited1.b[l]) <= 1e-9);

    Tensor x = random_input(7, 5, 4);
    CHECK(max_abs_diff(edited0.forward(x), edited1.forward(x)) <= 1e-9);

    // input-mask logits never notice hidden relabeling
    Edit d0 = edit_forward(g, p, EditMode::dm);
    Edit d1 = edit_forward(to_graph(pm), p, EditMode::dm);
    CHECK(max_abs_diff(d0.node_logits, d1.node_logits) <= 1e-9);
}

TEST_CASE("deep enough editors see the whole model from the input vertices") {
    MlpConfig c = mlp_config(4, {8, 8}, {-1, -1}, NormKind::none);  // L = 2
    MlpModel m = folded_model(c);
    MlpModel far = m;
    far.W[2].at(1, 3) += 1.0;  // output layer weight

    for (int64_t depth : {2, 3}) {
        ParamGraph g = to_graph(m), g2 = to_graph(far);
        MetanetParams p = init_metanet(small_editor(10, depth), g.vertex_dim(), g.edge_dim());
        Tape t, t2;
        StateNodes s = init_features(t, g, p, register_metanet(t, p, false));
        StateNodes s2 = init_features(t2, g2, p, register_metanet(t2, p, false));
        MetanetNodes n = register_metanet(t, p, false), n2 = register_metanet(t2, p, false);
        for (int64_t l = 0; l < depth; ++l) {
            s = message_pass(t, g, p, n.layers[static_cast<size_t>(l)], s);
            s2 = message_pass(t2, g2, p, n2.layers[static_cast<size_t>(l)], s2);
        }
        double spread = 0;
        for (int64_t v : g.input_vertices())
            for (int64_t ch = 0; ch < p.config.hidden; ++ch)
                spread = std::max(spread, std::fabs(t.value(s.h_v).at(v, ch) - t2.value(s2.h_v).at(v, ch)));
        if (depth < c.depth() + 1)
            CHECK(spread == 0.0);  // the perturbation cannot reach the inputs yet
        else
            CHECK(spread > 0.0);
    }
}

TEST_CASE("tape-side residual application matches the model-level path bitwise") {
    MlpConfig c = mlp_config(5, {8, 8}, {-1, 0}, NormKind::layer);
    MlpModel m = folded_model(c);
    ParamGraph g = to_graph(m);
    MetanetParams p = init_metanet(small_editor(12, 2), g.vertex_dim(), g.edge_dim());
    randomize_heads(p, 23);

    Edit e = edit_forward(g, p, EditMode::fair);
    MlpModel edited = residual_apply(g, e, p.gamma.v[0]);
    Tensor x = random_input(6, 5, 8);
    Tensor direct = edited.forward(x);

    Tape t;
    MetanetNodes n = register_metanet(t, p, true);
    EditNodes en = edit_forward(t, g, p, n, EditMode::fair);
    MlpTapeParams tp = edited_tape_params(t, m, en, n.gamma);
    NodeId logits = mlp_eval_forward(t, c, tp, t.constant(x));
    CHECK(t.value(logits).v == direct.v);

    // gradients reach the editor weights and gamma
    t.backward(t.mean_all(logits));
    CHECK(t.grad(n.gamma).v[0] != 0.0);
    double head_grad = 0;
    for (double gr : t.grad(n.head_edge.W2).v) head_grad += std::fabs(gr);
    CHECK(head_grad > 0.0);
}

TEST_CASE("tape-side masks match the model-level helpers bitwise") {
    MlpConfig c = mlp_config(5, {8, 8}, {-1, 0}, NormKind::none);
    MlpModel m = folded_model(c);
    ParamGraph g = to_graph(m);
    Tensor x = random_input(6, 5, 12);

    Rng rng(31);
    Tensor soft_in = Tensor::zeros({c.d_in});
    for (double& v : soft_in.v) v = rng.uniform(0.0, 1.0);
    soft_in.v[1] = 0.5;  // tie goes to active
    Tensor hard_in = ops::harden(soft_in);
    Tensor direct_in = apply_input_mask(m, hard_in).forward(x);

    Tape t;
    MlpTapeParams tp = register_mlp_params(t, m, false);
    NodeId hard_node = t.ste_hard(t.constant(soft_in));
    CHECK(t.value(hard_node).v == hard_in.v);
    NodeId masked = mlp_eval_forward(t, c, apply_input_mask(t, c, tp, hard_node), t.constant(x));
    CHECK(t.value(masked).v == direct_in.v);

    Tensor soft_edges = Tensor::zeros({m.n_edges()});
    for (double& v : soft_edges.v) v = rng.uniform(0.0, 1.0);
    Tensor hard_edges = ops::harden(soft_edges);
    Tensor direct_edges = apply_edge_mask(m, hard_edges).forward(x);

    Tape t2;
    MlpTapeParams tp2 = register_mlp_params(t2, m, false);
    NodeId mask2 = t2.ste_hard(t2.constant(soft_edges));
    NodeId masked2 = mlp_eval_forward(t2, c, apply_edge_mask(t2, c, tp2, mask2), t2.constant(x));
    CHECK(t2.value(masked2).v == direct_edges.v);

    Tensor short_mask = Tensor::full({3}, 1.0);
    Tape t3;
    MlpTapeParams tp3 = register_mlp_params(t3, m, false);
    CHECK_THROWS_AS(apply_input_mask(t3, c, tp3, t3.constant(short_mask)), ValidationError);
    CHECK_THROWS_AS(apply_edge_mask(t3, c, tp3, t3.constant(short_mask)), ValidationError);
}

TEST_CASE("straight-through mask gradients equal the soft-path gradients on linear terms") {
    MlpModel m = folded_model(mlp_config(4, {8}, {-1}, NormKind::none));
    ParamGraph g = to_graph(m);
    MetanetParams p = init_metanet(small_editor(10, 2), g.vertex_dim(), g.edge_dim());
    randomize_heads(p, 41);

    auto run = [&](bool harden) {
        Tape t;
        MetanetNodes n = register_metanet(t, p, true);
        EditNodes e = edit_forward(t, g, p, n, EditMode::dm);
        NodeId mask = soft_mask(t, e.node_logits, p.config.tau);
        if (harden) mask = t.ste_hard(mask);
        t.backward(t.sum_all(mask));
        std::vector<double> grads;
        for (NodeId id : metanet_node_list(n))
            grads.insert(grads.end(), t.grad(id).v.begin(), t.grad(id).v.end());
        double forward = 0;
        for (double v : t.value(mask).v) {
            if (harden) CHECK((v == 0.0 || v == 1.0));
            forward += v;
        }
        return std::make_pair(grads, forward);
    };

    auto [soft_grads, soft_sum] = run(false);
    auto [hard_grads, hard_sum] = run(true);
    CHECK(soft_grads == hard_grads);
    CHECK(hard_sum == std::round(hard_sum));
}

TEST_CASE("editor checkpoint round-trip and corruption detection") {
    namespace fs = std::filesystem;
    MetanetParams p = init_metanet(small_editor(12, 3, Activation::gelu), 22, 21);
    randomize_heads(p, 55);
    p.gamma.v[0] = 0.37;

    std::string path = "metanet_test_tmp.bin";
    save_metanet(p, path);
    MetanetParams back = load_metanet(path);
    CHECK(back.config.hidden == p.config.hidden);
    CHECK(back.config.depth == p.config.depth);
    CHECK(back.config.activation == p.config.activation);
    CHECK(back.vertex_in == 22);
    CHECK(back.gamma.v[0] == 0.37);
    auto a = p.all(), b = back.all();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i]->v == b[i]->v);

    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(-4, std::ios::end);
        uint32_t junk = 0xdeadbeef;
        f.write(reinterpret_cast<const char*>(&junk), sizeof(junk));
    }
    CHECK_THROWS_WITH_AS(load_metanet(path), doctest::Contains("checksum"), ValidationError);
    fs::remove(path);

    std::ofstream(path) << "not a checkpoint";
    CHECK_THROWS_WITH_AS(load_metanet(path), doctest::Contains("not a metanet file"), ValidationError);
    fs::remove(path);

    CHECK_THROWS_AS(init_metanet(small_editor(0, 3), 22, 21), ValidationError);
    CHECK_THROWS_AS(init_metanet(small_editor(12, 0), 22, 21), ValidationError);
}

TEST_CASE("end-to-end editor gradients agree with finite differences") {
    MlpConfig c = mlp_config(3, {4, 4}, {-1, 0}, NormKind::none, Activation::tanh);
    MlpModel m = folded_model(c);
    ParamGraph g = to_graph(m);
    MetanetConfig mc = small_editor(6, 2, Activation::tanh);
    MetanetParams p = init_metanet(mc, g.vertex_dim(), g.edge_dim());
    randomize_heads(p, 67, 0.2);

    Tensor x = random_input(4, 3, 19);
    std::vector<int> labels = {0, 1, 1, 0};
    std::vector<Tensor> leaves;
    for (const Tensor* t : p.all()) leaves.push_back(*t);

    check_gradients(
        [&](Tape& t, const std::vector<NodeId>& ids) {
            MetanetNodes n = nodes_from_ids(ids, mc.depth);
            EditNodes e = edit_forward(t, g, p, n, EditMode::dm);
            MlpTapeParams tp = edited_tape_params(t, m, e, n.gamma);
            NodeId mask = soft_mask(t, e.node_logits, p.config.tau);
            tp = apply_input_mask(t, c, tp, mask);
            NodeId ce = t.cross_entropy(mlp_eval_forward(t, c, tp, t.constant(x)), labels);
            return t.add(ce, t.scalar_mul(t.sum_all(mask), 0.05));
        },
        leaves, 1e-4, 1e-5);
}
