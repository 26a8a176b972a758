#include "gear/autodiff.hpp"
#include "gear/detail/kernels.hpp"
#include "support/fixtures.hpp"

#include <doctest.h>

#include <cmath>

using namespace gear;

namespace {

// Central-difference gradient of a scalar function of one tensor.
Tensor numeric_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-6) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor p = x;
        Tensor m = x;
        p[i] += h;
        m[i] -= h;
        g[i] = (f(p) - f(m)) / (2 * h);
    }
    return g;
}

}  // namespace

TEST_CASE("elementwise and contraction gradients") {
    std::mt19937_64 rng(1);
    const Tensor a0 = testing::random_tensor({3, 4}, rng);
    const Tensor b0 = testing::random_tensor({4, 2}, rng);
    auto value = [&](const Tensor& a, const Tensor& b) {
        const Tensor c = contract(a, b, "ij,jk->ik");
        return sum_all(clip(c * c * 3.0 - c, -0.5, 10.0)).item();
    };
    ad::Tape tape;
    const ad::Var a = tape.variable(a0);
    const ad::Var b = tape.variable(b0);
    const ad::Var c = contract(a, b, "ij,jk->ik");
    const ad::Var loss = sum_all(clip(c * c * 3.0 - c, -0.5, 10.0));
    CHECK(loss.value().item() == doctest::Approx(value(a0, b0)));
    tape.backward(loss);
    CHECK(testing::max_rel_diff(tape.grad(a), numeric_grad([&](const Tensor& x) { return value(x, b0); }, a0)) < 1e-7);
    CHECK(testing::max_rel_diff(tape.grad(b), numeric_grad([&](const Tensor& x) { return value(a0, x); }, b0)) < 1e-7);
}

TEST_CASE("inverse, slicing and symmetrization gradients") {
    std::mt19937_64 rng(2);
    const Tensor m = testing::random_tensor({2, 3, 3}, rng);
    const Tensor g0 = contract(m, m, "Bki,Bkj->Bij") + Tensor::identity_batch(2, 3);
    const Tensor w = testing::random_tensor({1, 3, 3}, rng);
    auto value = [&](const Tensor& g) {
        const Tensor y = symmetrize_trailing(slice_rows(invert_batched(g), 1, 1), 2);
        return sum_all(y * w).item();
    };
    ad::Tape tape;
    const ad::Var g = tape.variable(g0);
    const ad::Var y = symmetrize_trailing(slice_rows(invert_batched(g), 1, 1), 2);
    const ad::Var loss = sum_all(y * lift(y, w));
    tape.backward(loss);
    CHECK(testing::max_rel_diff(tape.grad(g), numeric_grad(value, g0)) < 1e-7);
}

TEST_CASE("activation gradients for every order") {
    const Tensor u0 = Tensor::vector({-2.0, -0.3, 0.0, 0.7, 2.5});
    for (int order = 0; order <= 3; ++order) {
        ad::Tape tape;
        const ad::Var u = tape.variable(u0);
        tape.backward(sum_all(activation_eval(net::ActivationKind::silu, u, order)));
        const auto f = [&](const Tensor& x) {
            return sum_all(net::activation_eval(net::ActivationKind::silu, x, order)).item();
        };
        CHECK(testing::max_rel_diff(tape.grad(u), numeric_grad(f, u0)) < 1e-7);
    }
}

TEST_CASE("Ricci scalar gradient through the batched kernels") {
    const auto t = testing::random_silu(3, 2, 5);
    const auto inv = testing::random_silu(3, 2, 6);
    const Tensor z0 = Tensor::matrix({{0.2, -0.1, 0.3}, {-0.4, 0.1, 0.05}});
    auto as_tensor_net = [](const net::Mlp& m) { return kernels::net_of(m); };
    auto value = [&](const Tensor& w0) {
        auto tn = as_tensor_net(t);
        tn[0].w = w0;
        return sum_all(kernels::curvature(tn, as_tensor_net(inv), z0, geometry::InverseMode::learned, 0.0).scalar)
            .item();
    };
    ad::Tape tape;
    kernels::NetOf<ad::Var> tv;
    kernels::NetOf<ad::Var> iv;
    for (const auto& l : t.layers()) tv.push_back({tape.variable(l.w), tape.variable(l.b), l.act});
    for (const auto& l : inv.layers()) iv.push_back({tape.variable(l.w), tape.variable(l.b), l.act});
    const ad::Var z = tape.constant(z0);
    const ad::Var s = sum_all(kernels::curvature(tv, iv, z, geometry::InverseMode::learned, 0.0).scalar);
    CHECK(s.value().item() == doctest::Approx(value(t.layers()[0].w)).epsilon(1e-12));
    tape.backward(s);
    CHECK(testing::max_rel_diff(tape.grad(tv[0].w), numeric_grad(value, t.layers()[0].w, 1e-5)) < 1e-5);
}

TEST_CASE("tape misuse") {
    ad::Tape t1;
    ad::Tape t2;
    const ad::Var a = t1.variable(Tensor::vector({1, 2}));
    const ad::Var b = t2.variable(Tensor::vector({1, 2}));
    CHECK_THROWS_AS((void)(a + b), EvaluationError);
    CHECK_THROWS_AS(t1.backward(a), ShapeError);
}
