#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "reqedit/objectives.hpp"
#include "test_util.hpp"

using namespace reqedit;
using reqedit::testing::check_gradients;

namespace {

Tensor vec(std::vector<double> v) {
    Tensor t = Tensor::zeros({static_cast<int64_t>(v.size())});
    t.v = std::move(v);
    return t;
}

// rows drawn from the simplex interior
Tensor random_prob_rows(int64_t n, int64_t k, uint64_t seed) {
    Rng rng(seed);
    Tensor t = Tensor::zeros({n, k});
    for (int64_t r = 0; r < n; ++r) {
        double sum = 0;
        for (int64_t c = 0; c < k; ++c) {
            double e = std::exp(rng.normal());
            t.at(r, c) = e;
            sum += e;
        }
        for (int64_t c = 0; c < k; ++c) t.at(r, c) /= sum;
    }
    return t;
}

// the worked confusion example: group 0 (TP 8, FN 2, FP 1, TN 9),
// group 1 (TP 6, FN 4, FP 3, TN 7); every gap comes out 0.2
struct FairExample {
    Tensor onehot;         // hard prediction rows
    Tensor logits;         // wide-margin logits realizing those predictions
    std::vector<int> y, s;
};

FairExample fair_example() {
    FairExample ex;
    auto push = [&](int group, int label, int pred, int count) {
        for (int i = 0; i < count; ++i) {
            ex.y.push_back(label);
            ex.s.push_back(group);
            ex.onehot.v.push_back(pred == 0 ? 1.0 : 0.0);
            ex.onehot.v.push_back(pred == 1 ? 1.0 : 0.0);
            ex.logits.v.push_back(pred == 0 ? 5.0 : -5.0);
            ex.logits.v.push_back(pred == 1 ? 5.0 : -5.0);
        }
    };
    push(0, 1, 1, 8);
    push(0, 1, 0, 2);
    push(0, 0, 1, 1);
    push(0, 0, 0, 9);
    push(1, 1, 1, 6);
    push(1, 1, 0, 4);
    push(1, 0, 1, 3);
    push(1, 0, 0, 7);
    int64_t n = static_cast<int64_t>(ex.y.size());
    ex.onehot.shape = {n, 2};
    ex.logits.shape = {n, 2};
    return ex;
}

}  // namespace

TEST_CASE("jsd closed-form values, symmetry, and bound") {
    Tensor p = vec({0.5, 0.5}), q = vec({1.0, 0.0});
    CHECK(jsd(p, p) == 0.0);
    CHECK(jsd(q, q) == 0.0);
    CHECK(jsd(vec({1., 0.}), vec({0., 1.})) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(jsd(p, q) == doctest::Approx(0.21576).epsilon(1e-4));
    CHECK(jsd(p, q) == doctest::Approx(0.75 * std::log(4.0 / 3.0)).epsilon(1e-12));
    CHECK(jsd(p, q) == jsd(q, p));

    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        Tensor a = random_prob_rows(1, 4, 100 + static_cast<uint64_t>(i));
        Tensor b = random_prob_rows(1, 4, 200 + static_cast<uint64_t>(i));
        a.shape = {4};
        b.shape = {4};
        double d = jsd(a, b);
        CHECK(d >= 0.0);
        CHECK(d <= std::log(2.0) + 1e-12);
        CHECK(d == jsd(b, a));
    }

    CHECK_THROWS_AS(jsd(vec({0.5, 0.6}), p), ValidationError);
    CHECK_THROWS_AS(jsd(vec({1.2, -0.2}), p), ValidationError);
    CHECK_THROWS_AS(jsd(vec({0.5, 0.25, 0.25}), p), ValidationError);
}

TEST_CASE("row-mean jsd agrees between scalar, matrix, and tape paths") {
    Tensor p = random_prob_rows(6, 3, 11);
    Tensor q = random_prob_rows(6, 3, 12);

    double manual = 0;
    for (int64_t r = 0; r < 6; ++r) {
        Tensor pr = ops::reshape(ops::block(p, r, r + 1, 0, 3), {3});
        Tensor qr = ops::reshape(ops::block(q, r, r + 1, 0, 3), {3});
        manual += jsd(pr, qr);
    }
    manual /= 6.0;
    CHECK(jsd_rows(p, q) == doctest::Approx(manual).epsilon(1e-14));

    Tape t;
    NodeId out = jsd_rows(t, t.constant(p), t.constant(q));
    CHECK(t.value(out).v[0] == doctest::Approx(manual).epsilon(1e-14));

    // gradients through softmax + jsd against finite differences
    Rng rng(13);
    Tensor logits_a = reqedit::testing::random_tensor({5, 3}, rng);
    Tensor logits_b = reqedit::testing::random_tensor({5, 3}, rng);
    check_gradients(
        [&](Tape& tape, const std::vector<NodeId>& ids) {
            return preservation_loss(tape, ids[0], ids[1]);
        },
        {logits_a, logits_b}, 1e-5, 1e-6);
}

TEST_CASE("preservation loss vanishes on identical models") {
    MlpConfig c;
    c.d_in = 5;
    c.out_features = 2;
    c.hidden = {8};
    c.activation = Activation::tanh;
    c.norm = NormKind::none;
    c.skip_source = {-1};
    c.seed = 3;
    MlpModel m = MlpModel::init(c);
    fold_norm(m);

    Rng rng(4);
    Tensor x = reqedit::testing::random_tensor({16, 5}, rng);
    CHECK(preservation_loss(m, m, x) <= 1e-12);

    MlpModel other = m;
    other.b[1].v[0] += 0.2;
    CHECK(preservation_loss(m, other, x) > 1e-6);
}

TEST_CASE("requirement relaxations are plain sums") {
    CHECK(dm_requirement(Tensor::full({14}, 1.0)) == 14.0);
    CHECK(dm_requirement(Tensor::zeros({14})) == 0.0);
    CHECK(prune_requirement(Tensor::full({512}, 1.0)) == 512.0);
    Tensor half = Tensor::full({512}, 1.0);
    for (size_t i = 0; i < 256; ++i) half.v[i] = 0.0;
    CHECK(prune_requirement(ops::harden(half)) == 256.0);
}

TEST_CASE("confusion-matrix example gives 0.2 everywhere") {
    FairExample ex = fair_example();
    GroupRates hard = rates_from_probs(ex.onehot, ex.y, ex.s, 2);
    CHECK(hard.at(0, 1).tpr == doctest::Approx(0.8));
    CHECK(hard.at(0, 1).fpr == doctest::Approx(0.1));
    CHECK(hard.at(1, 1).tpr == doctest::Approx(0.6));
    CHECK(hard.at(1, 1).fpr == doctest::Approx(0.3));
    CHECK(hard.at(0, 0).tpr == doctest::Approx(0.9));
    CHECK(hard.at(1, 0).fpr == doctest::Approx(0.4));
    CHECK(!hard.any_empty);
    CHECK(eod(hard) == doctest::Approx(0.2).epsilon(1e-12));

    // tempered softmax at tau = 1e-3 reproduces the hard rates
    Tensor soft_probs = ops::softmax(ops::scalar_mul(ex.logits, 1.0 / 1e-3), 1);
    GroupRates soft = rates_from_probs(soft_probs, ex.y, ex.s, 2);
    for (int g = 0; g < 2; ++g)
        for (int k = 0; k < 2; ++k) {
            CHECK(std::fabs(soft.at(g, k).tpr - hard.at(g, k).tpr) < 1e-3);
            CHECK(std::fabs(soft.at(g, k).fpr - hard.at(g, k).fpr) < 1e-3);
        }
    CHECK(std::fabs(eod(soft) - 0.2) < 1e-3);

    // nudging the attaining cell moves the max by the same amount
    GroupRates bumped = hard;
    bumped.at(1, 1).tpr -= 0.05;  // widens the 0.2 TPR gap to 0.25
    CHECK(eod(bumped) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("rates flag empty cells and eod rejects degenerate groupings") {
    Tensor probs = Tensor::zeros({4, 2});
    for (int64_t i = 0; i < 4; ++i) probs.at(i, 1) = 1.0;
    std::vector<int> y = {1, 1, 0, 0};

    GroupRates single = rates_from_probs(probs, y, {0, 0, 0, 0}, 1);
    CHECK_THROWS_WITH_AS(eod(single), doctest::Contains("two groups"), ValidationError);

    // group 0 holds only positives, group 1 only negatives: no shared cell
    GroupRates disjoint = rates_from_probs(probs, y, {0, 0, 1, 1}, 2);
    CHECK(disjoint.any_empty);
    CHECK_THROWS_WITH_AS(eod(disjoint), doctest::Contains("populated"), ValidationError);

    CHECK_THROWS_AS(rates_from_probs(probs, {1, 0}, {0, 0, 1, 1}, 2), ValidationError);
}

TEST_CASE("tape eod matches the rate-based value and its gradients check out") {
    Rng rng(31);
    int64_t n = 24;
    Tensor logits = reqedit::testing::random_tensor({n, 2}, rng, -2.0, 2.0);
    std::vector<int> y, s;
    for (int64_t i = 0; i < n; ++i) {
        y.push_back(static_cast<int>(i % 2));        // both labels in
        s.push_back(static_cast<int>((i / 2) % 2));  // every (group, class) cell
    }

    const double tau = 1.5;
    Tape t;
    bool empty = true;
    NodeId e = soft_eod(t, t.constant(logits), y, s, 2, tau, &empty);
    CHECK(!empty);

    Tensor probs = ops::softmax(ops::scalar_mul(logits, 1.0 / tau), 1);
    CHECK(t.value(e).v[0] == doctest::Approx(eod(rates_from_probs(probs, y, s, 2))).epsilon(1e-12));

    check_gradients(
        [&](Tape& tape, const std::vector<NodeId>& ids) { return soft_eod(tape, ids[0], y, s, 2, tau); },
        {logits}, 1e-4, 1e-6);

    CHECK_THROWS_AS(soft_eod(t, t.constant(logits), y, s, 1, tau), ValidationError);
    CHECK_THROWS_AS(soft_eod(t, t.constant(logits), y, s, 2, 0.0), ValidationError);
}

TEST_CASE("scalarization and requirement normalization") {
    CHECK(scalarized_loss(0.3, 7.0, 0.0) == 0.3);
    CHECK(scalarized_loss(0.3, 7.0, 0.5, 14.0) == doctest::Approx(0.3 + 0.25));
    CHECK_THROWS_AS(scalarized_loss(0.3, 7.0, -1.0), ValidationError);

    Tape t;
    NodeId out = scalarized_loss(t, t.constant(Tensor::scalar(0.3)), t.constant(Tensor::scalar(7.0)), 0.5, 14.0);
    CHECK(t.value(out).v[0] == doctest::Approx(0.55));

    MlpConfig c;
    c.d_in = 14;
    c.out_features = 2;
    c.hidden = {32};
    c.skip_source = {-1};
    CHECK(requirement_norm(EditMode::dm, c) == 14.0);
    CHECK(requirement_norm(EditMode::prune, c) == 14 * 32 + 32 * 2);
    CHECK(requirement_norm(EditMode::fair, c) == 1.0);

    // larger lambda pushes the toy minimizer toward zero requirement
    auto argmin_mask = [&](double lambda) {
        double best_m = 0, best = 1e18;
        for (int i = 0; i <= 1000; ++i) {
            double m = i / 1000.0;
            double loss = scalarized_loss((1 - m) * (1 - m), m, lambda);
            if (loss < best) {
                best = loss;
                best_m = m;
            }
        }
        return best_m;
    };
    CHECK(argmin_mask(0.0) == doctest::Approx(1.0));
    CHECK(argmin_mask(0.5) < argmin_mask(0.1));
    CHECK(argmin_mask(4.0) == doctest::Approx(0.0));

    ObjectiveConfig oc;
    oc.lambda = -0.1;
    CHECK_THROWS_AS(oc.validate(), ValidationError);
    oc.lambda = 0.1;
    oc.k = 0;
    CHECK_THROWS_AS(oc.validate(), ValidationError);
}

TEST_CASE("pareto filter matches the pairwise dominance oracle") {
    auto pt = [](double req, double j) {
        ParetoPoint p;
        p.requirement = req;
        p.jsd = j;
        return p;
    };

    // worked triple: (1,2) and (2,1) survive, (2,2) is dominated by both
    std::vector<ParetoPoint> tri = {pt(1, 2), pt(2, 1), pt(2, 2)};
    CHECK(pareto_filter(tri) == std::vector<int64_t>{0, 1});

    // identical points collapse to the first occurrence
    std::vector<ParetoPoint> same = {pt(3, 3), pt(3, 3), pt(3, 3)};
    CHECK(pareto_filter(same) == std::vector<int64_t>{0});

    std::vector<ParetoPoint> bad = {pt(std::numeric_limits<double>::quiet_NaN(), 0)};
    CHECK_THROWS_AS(pareto_filter(bad), ValidationError);

    // O(n^2) oracle: keep i iff no j dominates it, deduplicating exact ties
    auto oracle = [&](const std::vector<ParetoPoint>& pts) {
        std::vector<int64_t> front;
        for (size_t i = 0; i < pts.size(); ++i) {
            bool dead = false;
            for (size_t j = 0; j < pts.size() && !dead; ++j) {
                if (i == j) continue;
                bool leq = pts[j].requirement <= pts[i].requirement && pts[j].jsd <= pts[i].jsd;
                bool strict = pts[j].requirement < pts[i].requirement || pts[j].jsd < pts[i].jsd;
                if (leq && strict) dead = true;
                if (!strict && leq && j < i) dead = true;  // duplicate, keep the first
            }
            if (!dead) front.push_back(static_cast<int64_t>(i));
        }
        return front;
    };

    Rng rng(4242);
    for (int trial = 0; trial < 1000; ++trial) {
        int64_t n = 1 + rng.next(60);
        std::vector<ParetoPoint> pts;
        for (int64_t i = 0; i < n; ++i) {
            // coarse grid so duplicates and ties actually occur
            pts.push_back(pt(rng.next(8), rng.next(8) / 4.0));
        }
        std::vector<int64_t> fast = pareto_filter(pts);
        std::vector<int64_t> slow = oracle(pts);
        std::sort(fast.begin(), fast.end());
        CHECK(fast == slow);

        // idempotence: filtering the front keeps every point
        std::vector<ParetoPoint> front_pts;
        for (int64_t i : fast) front_pts.push_back(pts[static_cast<size_t>(i)]);
        CHECK(pareto_filter(front_pts).size() == front_pts.size());
    }
}
