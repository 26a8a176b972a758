#pragma once

#include "gear/net.hpp"
#include "gear/tensor.hpp"

#include <cmath>
#include <random>

namespace gear::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = d(rng);
    return t;
}

/// Constant-width SiLU network W = I + 0.3·U(-1,1)/sqrt(n), biases U(-0.2,0.2).
/// Glorot stacks of several square layers are too ill-conditioned for the
/// exact-inverse checks; the near-identity draw keeps cond(g) moderate.
inline net::Mlp random_silu(std::size_t dim, std::size_t layers, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<net::DenseLayer> out;
    const double amp = 0.3 / std::sqrt(static_cast<double>(dim));
    for (std::size_t n = 0; n < layers; ++n) {
        Tensor w = Tensor::identity(dim) + random_tensor({dim, dim}, rng, -amp, amp);
        out.push_back({std::move(w), random_tensor({dim}, rng, -0.2, 0.2), net::ActivationKind::silu});
    }
    return net::Mlp(std::move(out));
}

/// Worked example with a quadratic hidden layer.
inline net::Mlp quadratic_example() {
    using net::ActivationKind;
    return net::Mlp({{Tensor::matrix({{1, 2}, {3, 4}}), Tensor::vector({3, 4}), ActivationKind::quadratic},
                     {Tensor::matrix({{5, 6}, {7, 8}}), Tensor::vector({0, 0}), ActivationKind::linear}});
}

/// Worked example with a SiLU hidden layer.
inline net::Mlp silu_example() {
    using net::ActivationKind;
    return net::Mlp({{Tensor::matrix({{0.1, 0.2}, {0.3, 0.4}}), Tensor::vector({0.3, 0.4}), ActivationKind::silu},
                     {Tensor::matrix({{0.5, 0.6}, {0.7, 0.8}}), Tensor::vector({0, 0}), ActivationKind::linear}});
}

inline double max_rel_diff(const Tensor& a, const Tensor& b, double floor = 1e-300) {
    double err = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(a[i] - b[i]));
    return err / std::max(floor, std::max(a.max_abs(), b.max_abs()));
}

}  // namespace gear::testing
