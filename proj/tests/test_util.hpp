#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "reqedit/tape.hpp"
#include "reqedit/tensor.hpp"

namespace reqedit::testing {

inline Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& x : t.v) x = rng.uniform(lo, hi);
    return t;
}

// Keeps random draws away from activation kinks so central differences stay valid.
inline Tensor random_tensor_away_from(std::vector<int64_t> shape, Rng& rng, double kink, double margin) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& x : t.v) {
        do {
            x = rng.uniform(-1.0, 1.0);
        } while (std::fabs(x - kink) < margin);
    }
    return t;
}

using GraphBuilder = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

// Central finite differences (step h) against the tape gradient for a scalar
// loss built from the given leaves. Non-differentiable inputs can be passed by
// marking them frozen via the `frozen` index list.
inline void check_gradients(const GraphBuilder& build, std::vector<Tensor> inputs,
                            double tol = 1e-5, double h = 1e-5,
                            const std::vector<size_t>& frozen = {}) {
    auto is_frozen = [&](size_t k) {
        for (size_t f : frozen)
            if (f == k) return true;
        return false;
    };

    Tape tape;
    std::vector<NodeId> ids;
    for (size_t k = 0; k < inputs.size(); ++k) ids.push_back(tape.leaf(inputs[k], !is_frozen(k)));
    NodeId loss = build(tape, ids);
    REQUIRE(tape.value(loss).is_scalar());
    tape.backward(loss);

    std::vector<Tensor> grads;
    for (size_t k = 0; k < inputs.size(); ++k)
        grads.push_back(is_frozen(k) ? Tensor() : tape.grad(ids[k]));

    auto eval = [&](size_t k, size_t i, double delta) {
        Tape t2;
        std::vector<NodeId> ids2;
        for (size_t q = 0; q < inputs.size(); ++q) {
            Tensor shifted = inputs[q];
            if (q == k) shifted.v[i] += delta;
            ids2.push_back(t2.leaf(std::move(shifted), false));
        }
        return t2.value(build(t2, ids2)).v[0];
    };

    for (size_t k = 0; k < inputs.size(); ++k) {
        if (is_frozen(k)) continue;
        for (size_t i = 0; i < inputs[k].v.size(); ++i) {
            double fd = (eval(k, i, h) - eval(k, i, -h)) / (2.0 * h);
            double ad = grads[k].v[i];
            INFO("input ", k, " element ", i, " ad=", ad, " fd=", fd);
            CHECK(std::fabs(ad - fd) <= tol * (1.0 + std::fabs(fd)));
        }
    }
}

}  // namespace reqedit::testing
