#pragma once

// Analytic Riemannian geometry of the latent space induced by a
// constant-width MLP x' = F(x): derivative stack, pullback metric and its
// derivatives, Christoffel symbols, Riemann, Ricci. Per-point entry points
// take rank-1 inputs; the batched kernels live in gear/detail/kernels.hpp.

#include "gear/detail/kernels.hpp"
#include "gear/net.hpp"
#include "gear/tensor.hpp"

#include <cstdint>
#include <string_view>

namespace gear::geometry {

[[nodiscard]] std::string_view to_string(InverseMode mode);
[[nodiscard]] InverseMode inverse_mode_from_string(std::string_view name);

/// Derivatives of x' = F(x) at one point.
struct DerivativeStack {
    Tensor j;   // (n,n)      ∂x'^i/∂x^j
    Tensor h;   // (n,n,n)    ∂²x'^i/∂x^k∂x^j
    Tensor t3;  // (n,n,n,n)  ∂³x'^i/∂x^l∂x^k∂x^j
};

struct MetricBundle {
    Tensor g;      // (n,n)
    Tensor g_inv;  // (n,n)
    Tensor dg;     // (n,n,n)    ∂_k g_ij at [k][i][j]
    Tensor ddg;    // (n,n,n,n)  ∂_j∂_k g_ml at [j][k][m][l]
    InverseMode inverse_mode = InverseMode::exact;
};

struct CurvatureBundle {
    DerivativeStack stack;
    MetricBundle metric;
    Tensor dg_inv;   // (n,n,n)    ∂_j g^{im} at [j][i][m]
    Tensor gamma;    // (n,n,n)    Γ^i_jk at [i][j][k]
    Tensor dgamma;   // (n,n,n,n)  ∂_j Γ^i_kl at [j][i][k][l]
    Tensor riemann;  // (n,n,n,n)  R^i_ljk at [i][l][j][k]
    Tensor ricci;    // (n,n)
    double scalar = 0.0;
};

/// ∂x^{(n+1)}/∂x^{(n)} = diag(f'(u)) W for one layer at pre-activation u.
[[nodiscard]] Tensor layer_jacobian(const net::DenseLayer& layer, const Tensor& u, const Tensor& x_prev);
/// f''(u_i) W_ij W_ik, zero for linear layers.
[[nodiscard]] Tensor layer_second_derivative(const net::DenseLayer& layer, const Tensor& u, const Tensor& x_prev);
/// f'''(u_i) W_ij W_ik W_il, zero for linear and quadratic layers.
[[nodiscard]] Tensor layer_third_derivative(const net::DenseLayer& layer, const Tensor& u, const Tensor& x_prev);

/// J, H and T3 of the whole network at trace.input. Requires constant width.
[[nodiscard]] DerivativeStack compose_derivatives(const net::Mlp& mlp, const net::ForwardTrace& trace);

[[nodiscard]] Tensor pullback_metric(const Tensor& j);
[[nodiscard]] Tensor metric_derivative(const DerivativeStack& stack);
[[nodiscard]] Tensor metric_second_derivative(const DerivativeStack& stack);

/// Exact: (g + ridge·I)^{-1}. Learned: J' J'ᵀ with J' the Jacobian of
/// `inverse_module` at `z_flat`.
[[nodiscard]] Tensor inverse_metric(const Tensor& g, InverseMode mode, const net::Mlp* inverse_module = nullptr,
                                    const Tensor* z_flat = nullptr, double ridge = 0.0);
/// ∂_j g^{im} = -g^{ia} ∂_j g_ab g^{bm}.
[[nodiscard]] Tensor inverse_metric_derivative(const Tensor& g_inv, const Tensor& dg);

[[nodiscard]] Tensor christoffel(const Tensor& g_inv, const Tensor& dg);
[[nodiscard]] Tensor christoffel_derivative(const Tensor& g_inv, const Tensor& dg, const Tensor& ddg,
                                            const Tensor& dg_inv);
[[nodiscard]] Tensor riemann(const Tensor& gamma, const Tensor& dgamma);

struct RicciResult {
    Tensor tensor;
    double scalar = 0.0;
};
/// Lowers the first Riemann index with g, then contracts with g^{-1} twice.
[[nodiscard]] RicciResult ricci(const Tensor& g, const Tensor& g_inv, const Tensor& riemann);

/// R_λρμν with the first index lowered by g.
[[nodiscard]] Tensor lowered_riemann(const Tensor& g, const Tensor& riemann);

[[nodiscard]] CurvatureBundle curvature_at(const net::Mlp& transfer, const net::Mlp& inverse, const Tensor& z,
                                           InverseMode mode, double ridge = 0.0);

/// Number of points pushed through the curvature pipeline since the last reset.
[[nodiscard]] std::uint64_t curvature_evaluations();
void reset_curvature_evaluations();

}  // namespace gear::geometry
