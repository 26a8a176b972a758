#pragma once

// Finite-difference twin of the geometry pipeline. It differences the
// forward map only and rebuilds every geometric quantity with plain loops,
// so it shares no derivative code with gear/geometry.

#include "gear/geometry.hpp"
#include "gear/net.hpp"
#include "gear/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace gear::oracle {

/// Map from a rank-1 point to a tensor of any fixed shape.
using TensorFn = std::function<Tensor(const Tensor&)>;

struct Tolerances {
    double j = 1e-6;
    double h = 1e-4;
    double t3 = 1e-4;
    double g = 1e-6;
    double g_inv = 1e-4;
    double dg = 1e-4;
    double ddg = 1e-3;
    double dg_inv = 1e-4;
    double gamma = 1e-4;
    double dgamma = 1e-3;
    double curvature = 1e-3;  // riemann, ricci, scalar
};

struct FdConfig {
    double step1 = 1e-5;
    double step2 = 1e-4;
    /// Multiplied by max(1, |x|_inf).
    double step3 = 5e-3;
    /// Step of the five-point Jacobian inside the metric map that dg and ddg
    /// difference again; the nested differences amplify its rounding noise.
    double metric_step = 1e-3;
    Tolerances tol;
    /// Lower bound on the relative-error denominator.
    double floor = 1e-8;
};

/// Central-difference derivative of `f` at `x`. For an output of shape S the
/// result has shape S + (n) * order, the derivative indices trailing.
/// Order 1 and 2 use steps step1 and step2; order 3 uses the 8-point product
/// stencil with step3 scaled by max(1, |x|_inf).
[[nodiscard]] Tensor fd_derivative(const TensorFn& f, const Tensor& x, int order, const FdConfig& cfg = {});

/// Numeric curvature bundle at curved-frame point z. Layouts match
/// geometry::CurvatureBundle. The inverse network is needed only in learned mode.
[[nodiscard]] geometry::CurvatureBundle fd_geometry_pipeline(const net::Mlp& transfer, const net::Mlp* inverse,
                                                             const Tensor& z, geometry::InverseMode mode,
                                                             const FdConfig& cfg = {});

struct TensorComparison {
    std::string name;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = true;
    /// Multi-index of the largest absolute deviation.
    std::vector<std::size_t> offending_index;
};

struct ComparisonReport {
    std::vector<TensorComparison> tensors;
    bool pass = true;

    [[nodiscard]] const TensorComparison& at(std::string_view name) const;
};

/// Per-tensor error of `analytic` against `numeric`. Relative errors divide
/// by max(|ref|_inf, floor); for riemann, ricci and scalar the denominator
/// also includes max|Γ|² and max|∂Γ|, the size of the terms that cancel,
/// times n²·max|g⁻¹| for the scalar contraction.
[[nodiscard]] ComparisonReport compare_reports(const geometry::CurvatureBundle& analytic,
                                               const geometry::CurvatureBundle& numeric, const FdConfig& cfg = {});

/// Error of one tensor pair with denominator max(|ref|_inf, scale, floor).
[[nodiscard]] TensorComparison compare_tensor(std::string name, const Tensor& analytic, const Tensor& reference,
                                              double tolerance, double scale = 0.0, double floor = 1e-8);

}  // namespace gear::oracle
