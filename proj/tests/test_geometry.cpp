#include "gear/geometry.hpp"
#include "gear/oracle.hpp"
#include "support/fixtures.hpp"

#include <doctest.h>

#include <cmath>

using namespace gear;
using geometry::InverseMode;
using net::ActivationKind;

namespace {

Tensor point(std::size_t n, std::mt19937_64& rng) { return testing::random_tensor({n}, rng, -0.5, 0.5); }

geometry::DerivativeStack stack_at(const net::Mlp& m, const Tensor& x) {
    return geometry::compose_derivatives(m, net::forward(m, x));
}

}  // namespace

TEST_CASE("quadratic worked example is integer exact") {
    const auto m = testing::quadratic_example();
    const auto s = stack_at(m, Tensor::vector({1, 2}));
    CHECK(s.j == Tensor::matrix({{620, 880}, {832, 1184}}));
    CHECK(geometry::pullback_metric(s.j) == Tensor::matrix({{1076624, 1530688}, {1530688, 2176256}}));
}

TEST_CASE("SiLU worked example") {
    const auto m = testing::silu_example();
    const auto s = stack_at(m, Tensor::vector({0.1, 0.2}));
    const Tensor j_paper = Tensor::matrix({{0.1676, 0.2458}, {0.2257, 0.3322}});
    const Tensor g_paper = Tensor::matrix({{0.0790, 0.1161}, {0.1161, 0.1708}});
    const Tensor g = geometry::pullback_metric(s.j);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(s.j[i] - j_paper[i]) < 5e-4);
        CHECK(std::abs(g[i] - g_paper[i]) < 5e-4);
    }
    // Adjugate inverse of the computed metric.
    const double det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);
    const Tensor adj = Tensor::matrix({{g(1, 1) / det, -g(0, 1) / det}, {-g(1, 0) / det, g(0, 0) / det}});
    CHECK(testing::max_rel_diff(geometry::inverse_metric(g, InverseMode::exact), adj) < 1e-8);
}

TEST_CASE("linear layers have no curvature terms") {
    std::mt19937_64 rng(2);
    const net::DenseLayer l{testing::random_tensor({3, 3}, rng), testing::random_tensor({3}, rng),
                            ActivationKind::linear};
    const Tensor x = point(3, rng);
    const Tensor u = contract(l.w, x, "ij,j->i") + l.b;
    CHECK(geometry::layer_jacobian(l, u, x) == l.w);
    CHECK(geometry::layer_second_derivative(l, u, x).max_abs() == 0.0);
    CHECK(geometry::layer_third_derivative(l, u, x).max_abs() == 0.0);

    const net::Mlp two({l, {testing::random_tensor({3, 3}, rng), Tensor(Shape{3}), ActivationKind::linear}});
    const auto s = stack_at(two, x);
    CHECK(testing::max_rel_diff(s.j, contract(two.layers()[1].w, l.w, "ij,jk->ik")) < 1e-15);
    CHECK(s.h.max_abs() == 0.0);
    CHECK(s.t3.max_abs() == 0.0);
    CHECK(geometry::metric_derivative(s).max_abs() == 0.0);
    CHECK(geometry::metric_second_derivative(s).max_abs() == 0.0);
    CHECK(geometry::curvature_at(two, two, x, InverseMode::exact).scalar == 0.0);
}

TEST_CASE("layer blocks match finite differences") {
    std::mt19937_64 rng(31);
    for (std::size_t n : {3u, 4u, 5u}) {
        const auto l = testing::random_silu(n, 1, 100 + n).layers()[0];
        const Tensor x = point(n, rng);
        auto u_of = [&](const Tensor& p) { return contract(l.w, p, "ij,j->i") + l.b; };
        const oracle::TensorFn jf = [&](const Tensor& p) { return geometry::layer_jacobian(l, u_of(p), p); };
        const oracle::TensorFn hf = [&](const Tensor& p) { return geometry::layer_second_derivative(l, u_of(p), p); };
        const oracle::TensorFn ff = [&](const Tensor& p) { return net::forward(net::Mlp({l}), p).output(); };
        const Tensor u = u_of(x);
        CHECK(testing::max_rel_diff(geometry::layer_jacobian(l, u, x), oracle::fd_derivative(ff, x, 1)) < 1e-6);
        oracle::FdConfig c;
        c.step1 = 1e-5;
        CHECK(testing::max_rel_diff(geometry::layer_second_derivative(l, u, x), oracle::fd_derivative(jf, x, 1, c)) <
              1e-4);
        CHECK(testing::max_rel_diff(geometry::layer_third_derivative(l, u, x), oracle::fd_derivative(hf, x, 1, c)) <
              1e-3);

        const Tensor h = geometry::layer_second_derivative(l, u, x);
        const Tensor t = geometry::layer_third_derivative(l, u, x);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t b = 0; b < n; ++b) {
                    CHECK(h(i, a, b) == h(i, b, a));
                    for (std::size_t c = 0; c < n; ++c) {
                        CHECK(t(i, a, b, c) == t(i, b, a, c));
                        CHECK(t(i, a, b, c) == t(i, c, b, a));
                    }
                }
    }
}

TEST_CASE("composed derivatives of a three-layer network match differencing the forward map") {
    std::mt19937_64 rng(41);
    const auto m = testing::random_silu(4, 3, 5);
    const Tensor x = point(4, rng);
    const auto s = stack_at(m, x);
    const oracle::TensorFn f = [&](const Tensor& p) { return net::forward(m, p).output(); };
    CHECK(testing::max_rel_diff(s.j, oracle::fd_derivative(f, x, 1)) < 1e-6);
    CHECK(testing::max_rel_diff(s.h, oracle::fd_derivative(f, x, 2)) < 1e-4);
    CHECK(testing::max_rel_diff(s.t3, oracle::fd_derivative(f, x, 3)) < 1e-3);
    CHECK_THROWS_AS((void)stack_at(net::init_params({{4, 3, 4}, ActivationKind::silu, std::nullopt, 1}), x),
                    ShapeError);
}

TEST_CASE("metric derivatives match differencing the metric") {
    std::mt19937_64 rng(43);
    const auto m = testing::random_silu(4, 2, 6);
    const Tensor x = point(4, rng);
    const auto s = stack_at(m, x);
    const Tensor dg = geometry::metric_derivative(s);
    const oracle::TensorFn gmap = [&](const Tensor& p) { return geometry::pullback_metric(stack_at(m, p).j); };
    const oracle::TensorFn dgmap = [&](const Tensor& p) { return geometry::metric_derivative(stack_at(m, p)); };
    oracle::FdConfig c;
    c.step1 = 1e-5;
    const Tensor dg_fd = oracle::fd_derivative(gmap, x, 1, c);  // [i][j][k]
    const Tensor ddg = geometry::metric_second_derivative(s);
    const Tensor ddg_fd = oracle::fd_derivative(dgmap, x, 1, c);  // [k][m][l][j]
    double e1 = 0.0;
    double e2 = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t k = 0; k < 4; ++k) {
                e1 = std::max(e1, std::abs(dg(k, i, j) - dg_fd(i, j, k)));
                CHECK(dg(k, i, j) == dg(k, j, i));
                for (std::size_t l = 0; l < 4; ++l) {
                    e2 = std::max(e2, std::abs(ddg(j, k, i, l) - ddg_fd(k, i, l, j)));
                    CHECK(ddg(j, k, i, l) == ddg(k, j, i, l));
                    CHECK(ddg(j, k, i, l) == ddg(j, k, l, i));
                }
            }
    CHECK(e1 / dg.max_abs() < 1e-4);
    CHECK(e2 / ddg.max_abs() < 1e-3);
}

TEST_CASE("inverse metric") {
    CHECK(geometry::inverse_metric(Tensor::identity(3), InverseMode::exact) == Tensor::identity(3));
    CHECK_THROWS_AS((void)geometry::inverse_metric(Tensor::identity(3), InverseMode::learned), SpecError);
    const auto t = testing::random_silu(4, 2, 12);
    const auto inv = testing::random_silu(4, 2, 13);
    const Tensor z = Tensor::vector({0.1, -0.3, 0.2, 0.5});
    const Tensor g = geometry::pullback_metric(stack_at(t, z).j);
    const Tensor zf = net::forward(t, z).output();
    const Tensor gi = geometry::inverse_metric(g, InverseMode::learned, &inv, &zf);
    // An untrained inverse network does not invert the metric.
    CHECK(std::abs(contract(gi, g, "ij,ji->").item() - 4.0) > 1e-3);

    // Identity for the inverse derivative against differencing the exact inverse.
    const Tensor dgi = geometry::inverse_metric_derivative(invert_matrix(g), geometry::metric_derivative(stack_at(t, z)));
    const oracle::TensorFn im = [&](const Tensor& p) {
        return invert_matrix(geometry::pullback_metric(stack_at(t, p).j));
    };
    oracle::FdConfig c;
    c.step1 = 1e-5;
    const Tensor fd = oracle::fd_derivative(im, z, 1, c);  // [i][m][j]
    double e = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t m = 0; m < 4; ++m)
            for (std::size_t j = 0; j < 4; ++j) e = std::max(e, std::abs(dgi(j, i, m) - fd(i, m, j)));
    CHECK(e / dgi.max_abs() < 1e-4);
}

TEST_CASE("Christoffel symbols") {
    std::mt19937_64 rng(47);
    CHECK(geometry::christoffel(Tensor::identity(3), Tensor(Shape{3, 3, 3})).max_abs() == 0.0);
    const Tensor gi = testing::random_tensor({3, 3}, rng);
    const Tensor dg = symmetrize_trailing(testing::random_tensor({3, 3, 3}, rng), 2);
    const Tensor gam = geometry::christoffel(gi, dg);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 3; ++k) CHECK(gam(i, j, k) == gam(i, k, j));
    const Tensor z4(Shape{3, 3, 3, 3});
    CHECK(geometry::christoffel_derivative(gi, Tensor(Shape{3, 3, 3}), z4, Tensor(Shape{3, 3, 3})).max_abs() == 0.0);

    // Derivative of the symbols against differencing the analytic symbols.
    const auto t = testing::random_silu(3, 2, 14);
    const Tensor z = point(3, rng);
    const auto bundle = geometry::curvature_at(t, t, z, InverseMode::exact);
    const oracle::TensorFn gm = [&](const Tensor& p) {
        return geometry::curvature_at(t, t, p, InverseMode::exact).gamma;
    };
    oracle::FdConfig c;
    c.step1 = 1e-5;
    const Tensor fd = oracle::fd_derivative(gm, z, 1, c);  // [i][k][l][j]
    double e = 0.0;
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t k = 0; k < 3; ++k)
                for (std::size_t l = 0; l < 3; ++l) e = std::max(e, std::abs(bundle.dgamma(j, i, k, l) - fd(i, k, l, j)));
    CHECK(e / bundle.dgamma.max_abs() < 1e-3);
}

TEST_CASE("Riemann and Ricci structure") {
    std::mt19937_64 rng(53);
    CHECK(geometry::riemann(Tensor(Shape{3, 3, 3}), Tensor(Shape{3, 3, 3, 3})).max_abs() == 0.0);
    const auto zero = geometry::ricci(Tensor::identity(3), Tensor::identity(3), Tensor(Shape{3, 3, 3, 3}));
    CHECK(zero.scalar == 0.0);
    CHECK(zero.tensor.max_abs() == 0.0);
    const Tensor r = geometry::riemann(testing::random_tensor({3, 3, 3}, rng), testing::random_tensor({3, 3, 3, 3}, rng));
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t d = 0; d < 3; ++d) CHECK(r(a, b, c, d) == -r(a, b, d, c));
}

TEST_CASE("exact-inverse pipeline is flat and satisfies the first Bianchi identity") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const std::size_t n = 2 + seed % 4;
        const auto t = testing::random_silu(n, 1 + seed % 3, seed);
        std::mt19937_64 rng(seed);
        const auto b = geometry::curvature_at(t, t, point(n, rng), InverseMode::exact);
        const double scale = std::max(1.0, b.gamma.max_abs() * b.gamma.max_abs());
        CHECK(b.riemann.max_abs() / scale <= 1e-6);
        CHECK(std::abs(b.scalar) / scale <= 1e-6);
        const Tensor low = geometry::lowered_riemann(b.metric.g, b.riemann);
        double bianchi = 0.0;
        for (std::size_t l = 0; l < n; ++l)
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t m = 0; m < n; ++m)
                    for (std::size_t v = 0; v < n; ++v)
                        bianchi = std::max(bianchi, std::abs(low(l, r, m, v) + low(l, m, v, r) + low(l, v, r, m)));
        CHECK(bianchi <= 1e-8);
    }
}

TEST_CASE("analytic pipeline agrees with the finite-difference pipeline") {
    for (auto mode : {InverseMode::exact, InverseMode::learned}) {
        const auto t = testing::random_silu(4, 3, 42);
        const auto inv = testing::random_silu(4, 3, 43);
        const Tensor z = Tensor::vector({0.3, -0.2, 0.1, 0.4});
        const auto a = geometry::curvature_at(t, inv, z, mode);
        const auto n = oracle::fd_geometry_pipeline(t, &inv, z, mode);
        const auto rep = oracle::compare_reports(a, n);
        for (const auto& c : rep.tensors) {
            INFO(c.name << " rel " << c.max_rel_err);
            CHECK(c.pass);
        }
        // Learned mode is not flat.
        const double scale = std::max(a.gamma.max_abs() * a.gamma.max_abs(), a.dgamma.max_abs());
        if (mode == InverseMode::learned) CHECK(a.riemann.max_abs() > 1e-3 * scale);
    }
}

TEST_CASE("curvature evaluation counter") {
    geometry::reset_curvature_evaluations();
    const auto t = testing::random_silu(2, 1, 3);
    (void)geometry::curvature_at(t, t, Tensor::vector({0, 0}), InverseMode::exact);
    CHECK(geometry::curvature_evaluations() == 1);
}
