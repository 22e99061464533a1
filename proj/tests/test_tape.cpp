#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "reqedit/tape.hpp"
#include "test_util.hpp"

using namespace reqedit;
using reqedit::testing::check_gradients;
using reqedit::testing::random_tensor;
using reqedit::testing::random_tensor_away_from;

TEST_CASE("sum of squares has gradient 2x") {
    Tape t;
    NodeId x = t.leaf(Tensor::vec({1, 2, 3}));
    NodeId loss = t.sum_all(t.mul(x, x));
    t.backward(loss);
    CHECK(t.grad(x).v == std::vector<double>{2, 4, 6});
}

TEST_CASE("cross entropy on uniform logits splits the gradient") {
    Tape t;
    NodeId logits = t.leaf(Tensor({1, 2}, {0, 0}));
    NodeId loss = t.cross_entropy(logits, {0});
    t.backward(loss);
    CHECK(t.grad(logits).v[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(t.grad(logits).v[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("gradient accumulates when a leaf is used twice") {
    Tape t;
    NodeId x = t.leaf(Tensor::vec({1.0, -2.0}));
    NodeId loss = t.add(t.sum_all(x), t.sum_all(t.mul(x, x)));
    t.backward(loss);
    CHECK(t.grad(x).v[0] == doctest::Approx(3.0));
    CHECK(t.grad(x).v[1] == doctest::Approx(-3.0));
}

TEST_CASE("backward rejects non-scalar loss and detached graphs") {
    Tape t;
    NodeId x = t.leaf(Tensor::vec({1, 2}));
    NodeId y = t.mul(x, x);
    CHECK_THROWS_AS(t.backward(y), ValidationError);

    Tape t2;
    NodeId c = t2.constant(Tensor::vec({1, 2}));
    NodeId loss = t2.sum_all(c);
    CHECK_THROWS_AS(t2.backward(loss), ValidationError);
}

TEST_CASE("finite differences: matmul in all transpose modes") {
    Rng rng(11);
    for (int mode = 0; mode < 4; ++mode) {
        bool ta = mode & 1, tb = mode & 2;
        Tensor a = random_tensor(ta ? std::vector<int64_t>{3, 2} : std::vector<int64_t>{2, 3}, rng);
        Tensor b = random_tensor(tb ? std::vector<int64_t>{4, 3} : std::vector<int64_t>{3, 4}, rng);
        check_gradients(
            [=](Tape& t, const std::vector<NodeId>& in) {
                return t.sum_all(t.mul(t.matmul(in[0], in[1], ta, tb), t.matmul(in[0], in[1], ta, tb)));
            },
            {a, b});
    }
}

TEST_CASE("finite differences: add broadcast variants, sub, mul, div") {
    Rng rng(12);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor row = random_tensor({4}, rng);
    Tensor s = random_tensor({1}, rng);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.sum_all(t.mul(t.add(in[0], in[1]), t.add(in[0], in[1]))); }, {a, row});
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.sum_all(t.mul(t.add(in[0], in[1]), t.add(in[0], in[1]))); }, {a, s});
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.sum_all(t.mul(t.sub(in[0], in[1]), t.sub(in[0], in[1]))); }, {a, a});
    Tensor bpos = random_tensor({3, 4}, rng, 0.5, 1.5);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.sum_all(t.div(in[0], in[1])); }, {a, bpos});
    Tensor spos = random_tensor({1}, rng, 0.5, 1.5);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.sum_all(t.div(in[0], in[1])); }, {a, spos});
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.sum_all(t.mul(t.mul(in[0], in[1]), t.mul(in[0], in[1]))); }, {a, s});
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.sum_all(t.scalar_mul(in[0], -2.5)); }, {a});
}

TEST_CASE("finite differences: every activation") {
    Rng rng(13);
    for (Activation act : {Activation::relu, Activation::gelu, Activation::tanh, Activation::sigmoid,
                           Activation::leaky_relu, Activation::identity}) {
        Tensor x = random_tensor_away_from({4, 3}, rng, 0.0, 0.05);
        check_gradients(
            [act](Tape& t, const std::vector<NodeId>& in) { return t.sum_all(t.mul(t.activation(in[0], act), t.activation(in[0], act))); },
            {x});
    }
}

TEST_CASE("finite differences: softmax, log, exp, sqrt, abs") {
    Rng rng(14);
    Tensor x = random_tensor({3, 4}, rng);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) {
        NodeId p = t.softmax(in[0], 1);
        return t.sum_all(t.mul(p, p));
    }, {x});
    Tensor x1 = random_tensor({5}, rng);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) {
        NodeId p = t.softmax(in[0], 0);
        return t.sum_all(t.mul(p, p));
    }, {x1});
    Tensor pos = random_tensor({2, 3}, rng, 0.5, 2.0);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.sum_all(t.log(in[0])); }, {pos});
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.sum_all(t.sqrt(in[0])); }, {pos});
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.sum_all(t.exp(in[0])); }, {x});
    Tensor far = random_tensor_away_from({3, 3}, rng, 0.0, 0.05);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.sum_all(t.abs(in[0])); }, {far});
}

TEST_CASE("finite differences: reductions") {
    Rng rng(15);
    Tensor x = random_tensor({3, 4}, rng);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.mean_all(t.mul(in[0], in[0])); }, {x});
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.sum_all(t.mul(t.sum_axis(in[0], 0), t.sum_axis(in[0], 0))); }, {x});
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.sum_all(t.mul(t.mean_axis(in[0], 1), t.mean_axis(in[0], 1))); }, {x});
    // unique max keeps max_all differentiable at the sample point
    Tensor m({2, 2}, {0.1, 0.9, 0.3, 0.2});
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.max_all(t.mul(in[0], in[0])); }, {m});
}

TEST_CASE("finite differences: concat both axes") {
    Rng rng(16);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({2, 2}, rng);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) {
        NodeId c = t.concat({in[0], in[1]}, 1);
        return t.sum_all(t.mul(c, c));
    }, {a, b});
    Tensor c = random_tensor({1, 3}, rng);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) {
        NodeId r = t.concat({in[0], in[1]}, 0);
        return t.sum_all(t.mul(r, r));
    }, {a, c});
    Tensor v1 = random_tensor({3}, rng);
    Tensor v2 = random_tensor({2}, rng);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) {
        NodeId r = t.concat({in[0], in[1]}, 0);
        return t.sum_all(t.mul(r, r));
    }, {v1, v2});
}

TEST_CASE("finite differences: layer_norm and batch_norm_eval") {
    Rng rng(17);
    Tensor x = random_tensor({3, 5}, rng);
    Tensor gamma = random_tensor({5}, rng, 0.5, 1.5);
    Tensor beta = random_tensor({5}, rng);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) {
        NodeId y = t.layer_norm(in[0], in[1], in[2], 1e-5);
        return t.sum_all(t.mul(y, y));
    }, {x, gamma, beta}, 1e-4);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) {
        NodeId y = t.batch_norm_eval(in[0], in[1], in[2]);
        return t.sum_all(t.mul(y, y));
    }, {x, gamma, beta});
}

TEST_CASE("finite differences: dropout with a fixed seed") {
    Rng rng(18);
    Tensor x = random_tensor({4, 4}, rng);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) {
        Rng local(99);
        NodeId y = t.dropout(in[0], 0.4, true, local);
        return t.sum_all(t.mul(y, y));
    }, {x});
}

TEST_CASE("finite differences: cross_entropy and structural ops") {
    Rng rng(19);
    Tensor logits = random_tensor({4, 3}, rng);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) { return t.cross_entropy(in[0], {0, 2, 1, 0}); }, {logits});

    Tensor x = random_tensor({4, 3}, rng);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) {
        NodeId r = t.reshape(in[0], {3, 4});
        return t.sum_all(t.mul(r, r));
    }, {x});
    check_gradients([](Tape& t, const std::vector<NodeId>& in) {
        NodeId g = t.gather_rows(in[0], {0, 2, 2, 3});
        return t.sum_all(t.mul(g, g));
    }, {x});
    check_gradients([](Tape& t, const std::vector<NodeId>& in) {
        NodeId s = t.scatter_add_rows(in[0], {0, 1, 1, 2}, 3);
        return t.sum_all(t.mul(s, s));
    }, {x});
    check_gradients([](Tape& t, const std::vector<NodeId>& in) {
        NodeId b = t.block(in[0], 1, 3, 0, 2);
        return t.sum_all(t.mul(b, b));
    }, {x});
    Tensor m = random_tensor({3}, rng);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) {
        NodeId y = t.scale_cols(in[0], in[1]);
        return t.sum_all(t.mul(y, y));
    }, {x, m});
}

TEST_CASE("ste_hard emits hard values and passes gradients through") {
    Tape t;
    NodeId soft = t.leaf(Tensor::vec({0.2, 0.5, 0.8}));
    NodeId hard = t.ste_hard(soft);
    CHECK(t.value(hard).v == std::vector<double>{0, 1, 1});
    NodeId loss = t.sum_all(t.mul(hard, t.constant(Tensor::vec({3, 5, 7}))));
    t.backward(loss);
    CHECK(t.grad(soft).v == std::vector<double>{3, 5, 7});
}

TEST_CASE("two layer network gradient matches finite differences") {
    Rng rng(21);
    Tensor x = random_tensor({5, 4}, rng);
    Tensor w1 = random_tensor({4, 6}, rng, -0.5, 0.5);
    Tensor b1 = random_tensor({6}, rng, -0.1, 0.1);
    Tensor w2 = random_tensor({6, 3}, rng, -0.5, 0.5);
    Tensor b2 = random_tensor({3}, rng, -0.1, 0.1);
    check_gradients([](Tape& t, const std::vector<NodeId>& in) {
        NodeId h = t.activation(t.add(t.matmul(in[0], in[1]), in[2]), Activation::tanh);
        NodeId logits = t.add(t.matmul(h, in[3]), in[4]);
        return t.cross_entropy(logits, {0, 1, 2, 0, 1});
    }, {x, w1, b1, w2, b2}, 1e-5, 1e-5, {0});
}

TEST_CASE("tape forward is bit-identical to the bare kernels") {
    Rng rng(22);
    Tensor x = random_tensor({4, 6}, rng);
    Tensor w = random_tensor({6, 2}, rng);
    Tensor b = random_tensor({2}, rng);

    Tensor direct = ops::softmax(ops::add(ops::matmul(ops::activation(x, Activation::gelu), w), b), 1);

    for (bool req : {true, false}) {
        Tape t;
        NodeId xi = t.leaf(x, req);
        NodeId wi = t.leaf(w, req);
        NodeId bi = t.leaf(b, req);
        NodeId out = t.softmax(t.add(t.matmul(t.activation(xi, Activation::gelu), wi), bi), 1);
        REQUIRE(t.value(out).same_shape(direct));
        for (size_t i = 0; i < direct.v.size(); ++i) CHECK(t.value(out).v[i] == direct.v[i]);
    }
}

TEST_CASE("adam first step follows the bias-corrected update") {
    Tensor p = Tensor::vec({1.0, -2.0});
    Tensor g = Tensor::vec({0.5, -0.25});
    AdamState opt;
    opt.lr = 0.1;
    opt.init({&p});
    REQUIRE(opt.step({&p}, {&g}));
    CHECK(opt.t == 1);
    // with zeroed moments the bias-corrected first step is lr * g / (|g| + eps)
    CHECK(p.v[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
    CHECK(p.v[1] == doctest::Approx(-2.0 + 0.1 * 0.25 / (0.25 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam weight decay is decoupled from the moment update") {
    Tensor p = Tensor::vec({2.0});
    Tensor g = Tensor::vec({0.0});
    AdamState opt;
    opt.lr = 0.5;
    opt.weight_decay = 0.1;
    opt.init({&p});
    REQUIRE(opt.step({&p}, {&g}));
    // zero gradient leaves only the decay term: p -= lr * wd * p
    CHECK(p.v[0] == doctest::Approx(2.0 - 0.5 * 0.1 * 2.0).epsilon(1e-12));
}

TEST_CASE("adam skips non-finite gradients without advancing") {
    Tensor p = Tensor::vec({1.0});
    Tensor bad = Tensor::vec({std::nan("")});
    AdamState opt;
    opt.init({&p});
    CHECK(!opt.step({&p}, {&bad}));
    CHECK(opt.t == 0);
    CHECK(p.v[0] == 1.0);
    Tensor inf = Tensor::vec({std::numeric_limits<double>::infinity()});
    CHECK(!opt.step({&p}, {&inf}));
    CHECK(opt.t == 0);
}
