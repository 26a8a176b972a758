#include "gear/tensor.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace gear;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = d(rng);
    return t;
}

double rel_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double err = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(a[i] - b[i]));
    return err / std::max(1e-300, std::max(a.max_abs(), b.max_abs()));
}

}  // namespace

TEST_CASE("matrix product by contraction") {
    const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
    const Tensor b = Tensor::matrix({{5, 6}, {7, 8}});
    CHECK(contract(a, b, "ik,kj->ij") == Tensor::matrix({{19, 22}, {43, 50}}));
}

TEST_CASE("trace by repeated label") {
    CHECK(contract(Tensor::matrix({{1, 2}, {3, 4}}), "ii->").item() == 5.0);
}

TEST_CASE("rank-3 by matrix matches a naive loop nest") {
    std::mt19937_64 rng(7);
    const Tensor a = random_tensor({3, 4, 2}, rng);
    const Tensor b = random_tensor({2, 5}, rng);
    Tensor ref(Shape{3, 4, 5});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t m = 0; m < 5; ++m) {
                double s = 0.0;
                for (std::size_t k = 0; k < 2; ++k) s += a(i, j, k) * b(k, m);
                ref(i, j, m) = s;
            }
    CHECK(rel_diff(contract(a, b, "ijk,km->ijm"), ref) < 1e-15);
}

TEST_CASE("batched and transposing contractions match loops") {
    std::mt19937_64 rng(11);
    const Tensor h = random_tensor({2, 3, 3, 3}, rng);
    const Tensor j = random_tensor({2, 3, 3}, rng);
    const Tensor out = contract(h, j, "Bmki,Bmj->Bkij");
    double err = 0.0;
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t k = 0; k < 3; ++k)
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t jj = 0; jj < 3; ++jj) {
                    double s = 0.0;
                    for (std::size_t m = 0; m < 3; ++m) s += h(b, m, k, i) * j(b, m, jj);
                    err = std::max(err, std::abs(s - out(b, k, i, jj)));
                }
    CHECK(err < 1e-14);
    const Tensor perm = contract(h, "Bmki->Bikm");
    CHECK(perm(1, 2, 0, 1) == h(1, 1, 0, 2));
}

TEST_CASE("contraction errors") {
    const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
    const Tensor c(Shape{3, 2});
    CHECK_THROWS_AS((void)contract(a, c, "ik,kj->ij"), ShapeError);
    CHECK_THROWS_AS((void)contract(a, a, "ik,kj"), SpecError);
    CHECK_THROWS_AS((void)contract(a, a, "ii,ij->j"), SpecError);
    CHECK_THROWS_AS((void)contract(a, a, "ik,kj->iz"), SpecError);
    CHECK_THROWS_AS((void)contract(a, a, "ik,kj->ii"), SpecError);
    CHECK_THROWS_AS((void)contract(a, "ijk->i"), ShapeError);
    CHECK_THROWS_AS((void)contract(a, a, "i1,1j->ij"), SpecError);
}

TEST_CASE("elementwise arithmetic") {
    CHECK(elementwise(Tensor::vector({1, 2, 3}), 2.0, ElementwiseOp::pow) == Tensor::vector({1, 4, 9}));
    CHECK(Tensor::vector({1, 2}) + Tensor::vector({3, 4}) == Tensor::vector({4, 6}));
    // Squares of the logistic values 0.5866 and 0.6248.
    const Tensor sq = elementwise(Tensor::vector({0.5866, 0.6248}), 2.0, ElementwiseOp::pow);
    CHECK(sq[0] == doctest::Approx(0.3441).epsilon(1e-4));
    CHECK(sq[1] == doctest::Approx(0.3904).epsilon(1e-4));
    CHECK_THROWS_AS((void)(Tensor::vector({1, 2}) + Tensor::vector({1, 2, 3})), ShapeError);
    CHECK_THROWS_AS((void)Tensor::vector({1.0, std::nan("")}), ShapeError);
}

TEST_CASE("matrix inversion") {
    CHECK(invert_matrix(Tensor::identity(2)) == Tensor::identity(2));

    const Tensor g = Tensor::matrix({{0.0790, 0.1161}, {0.1161, 0.1708}});
    const double det = 0.0790 * 0.1708 - 0.1161 * 0.1161;
    const Tensor adj = Tensor::matrix({{0.1708 / det, -0.1161 / det}, {-0.1161 / det, 0.0790 / det}});
    CHECK(rel_diff(invert_matrix(g), adj) < 1e-10);

    CHECK_THROWS_AS((void)invert_matrix(Tensor::matrix({{1, 1}, {1, 1}})), SingularityError);
    try {
        (void)invert_matrix(Tensor::matrix({{1, 1}, {1, 1}}));
    } catch (const SingularityError& e) {
        CHECK(e.condition() > 1e12);
    }
    // The ridge lifts the singular matrix into an invertible one.
    const Tensor r = invert_matrix(Tensor::matrix({{1, 1}, {1, 1}}), 1.0);
    CHECK(rel_diff(r, Tensor::matrix({{2.0 / 3, -1.0 / 3}, {-1.0 / 3, 2.0 / 3}})) < 1e-14);
}

TEST_CASE("contraction is bilinear") {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 10; ++rep) {
        const Tensor a = random_tensor({4, 6}, rng);
        const Tensor b = random_tensor({4, 6}, rng);
        const Tensor c = random_tensor({6, 5}, rng);
        const double alpha = 1.7;
        const Tensor lhs = contract(a * alpha + b, c, "ij,jk->ik");
        const Tensor rhs = contract(a, c, "ij,jk->ik") * alpha + contract(b, c, "ij,jk->ik");
        CHECK(rel_diff(lhs, rhs) < 1e-12);
    }
}

TEST_CASE("trace cyclicity") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 10; ++rep) {
        const Tensor a = random_tensor({5, 3}, rng);
        const Tensor b = random_tensor({3, 5}, rng);
        const double t1 = contract(contract(a, b, "ij,jk->ik"), "ii->").item();
        const double t2 = contract(a, b, "ij,ji->").item();
        CHECK(std::abs(t1 - t2) <= 1e-12 * std::max(1.0, std::abs(t1)));
    }
}

TEST_CASE("double inversion round-trips") {
    std::mt19937_64 rng(9);
    for (int rep = 0; rep < 10; ++rep) {
        const Tensor m = random_tensor({5, 5}, rng);
        const Tensor g = contract(m, m, "ki,kj->ij") + Tensor::identity(5);
        CHECK(rel_diff(invert_matrix(invert_matrix(g)), g) < 1e-8);
        const Tensor prod = contract(invert_matrix(g), g, "ij,jk->ik");
        CHECK(rel_diff(prod, Tensor::identity(5)) < 1e-12);
    }
}

TEST_CASE("symmetrize and slicing") {
    std::mt19937_64 rng(13);
    const Tensor a = random_tensor({2, 3, 3, 3}, rng);
    const Tensor s = symmetrize_trailing(a, 3);
    CHECK(s(1, 2, 0, 1) == s(1, 0, 1, 2));
    CHECK(s(1, 2, 0, 1) == a(1, 0, 1, 2));
    const Tensor r = slice_rows(a, 1, 1);
    CHECK(r.shape() == Shape{1, 3, 3, 3});
    CHECK(r(0, 2, 1, 0) == a(1, 2, 1, 0));
    CHECK_THROWS_AS((void)slice_rows(a, 1, 2), ShapeError);
    const Tensor batch = invert_batched(Tensor::identity_batch(3, 2) * 2.0);
    CHECK(batch(2, 1, 1) == 0.5);
}
