#include "gear/oracle.hpp"
#include "support/fixtures.hpp"

#include <doctest.h>

#include <cmath>

using namespace gear;

TEST_CASE("first difference of an affine map is exact") {
    std::mt19937_64 rng(4);
    const Tensor w = testing::random_tensor({3, 4}, rng);
    const Tensor b = testing::random_tensor({3}, rng);
    const oracle::TensorFn f = [&](const Tensor& x) { return contract(w, x, "ij,j->i") + b; };
    const Tensor j = oracle::fd_derivative(f, testing::random_tensor({4}, rng), 1);
    CHECK(testing::max_rel_diff(j, w) < 1e-10);
}

TEST_CASE("second difference of the elementwise square") {
    const oracle::TensorFn f = [](const Tensor& x) { return x * x; };
    const Tensor h = oracle::fd_derivative(f, Tensor::vector({0.3, -1.2, 2.0}), 2);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 3; ++k) {
                const double expect = (i == j && j == k) ? 2.0 : 0.0;
                CHECK(std::abs(h(i, j, k) - expect) < 1e-6);
            }
}

TEST_CASE("third difference of a cubic") {
    // f(x) = x0² x1 + x2³ has f_001 = 2 and f_222 = 6.
    const oracle::TensorFn f = [](const Tensor& x) {
        return Tensor::vector({x[0] * x[0] * x[1] + x[2] * x[2] * x[2]});
    };
    const Tensor t = oracle::fd_derivative(f, Tensor::vector({0.4, 0.1, -0.7}), 3);
    CHECK(t(0, 0, 0, 1) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(t(0, 1, 0, 0) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(t(0, 2, 2, 2) == doctest::Approx(6.0).epsilon(1e-6));
    CHECK(std::abs(t(0, 0, 1, 2)) < 1e-6);
}

TEST_CASE("non-finite evaluations are reported") {
    const oracle::TensorFn f = [](const Tensor& x) { return Tensor(Shape{1}, std::log(x[0])); };
    CHECK_THROWS_AS((void)oracle::fd_derivative(f, Tensor::vector({0.0}), 1), EvaluationError);
}

TEST_CASE("linear transfer has zero numeric curvature") {
    std::mt19937_64 rng(8);
    const net::Mlp lin({{testing::random_tensor({3, 3}, rng) + Tensor::identity(3) * 2.0, Tensor(Shape{3}),
                         net::ActivationKind::linear}});
    const auto b = oracle::fd_geometry_pipeline(lin, nullptr, Tensor::vector({0.1, 0.2, 0.3}),
                                                geometry::InverseMode::exact);
    CHECK(std::abs(b.scalar) < 1e-8);
}

TEST_CASE("comparison reports") {
    const auto t = testing::random_silu(3, 2, 99);
    const Tensor z = Tensor::vector({0.2, -0.1, 0.4});
    const auto num = oracle::fd_geometry_pipeline(t, &t, z, geometry::InverseMode::learned);
    const auto same = oracle::compare_reports(num, num);
    CHECK(same.pass);
    for (const auto& c : same.tensors) CHECK(c.max_abs_err == 0.0);

    auto bad = num;
    const double tol = oracle::FdConfig{}.tol.dg;
    bad.metric.dg(1, 2, 0) += 10.0 * tol * num.metric.dg.max_abs();
    const auto rep = oracle::compare_reports(bad, num);
    CHECK_FALSE(rep.pass);
    CHECK_FALSE(rep.at("dg").pass);
    CHECK(rep.at("g").pass);
    CHECK(rep.at("dg").offending_index == std::vector<std::size_t>{1, 2, 0});

    const auto other = oracle::fd_geometry_pipeline(testing::random_silu(2, 1, 1), nullptr, Tensor::vector({0, 0}),
                                                    geometry::InverseMode::exact);
    CHECK_THROWS_AS((void)oracle::compare_reports(other, num), ShapeError);
}
