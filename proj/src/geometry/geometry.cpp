#include "gear/geometry.hpp"

#include <atomic>

namespace gear::geometry {
namespace {

std::atomic<std::uint64_t> g_curvature_points{0};

Tensor with_batch(const Tensor& t) {
    Shape s{1};
    s.insert(s.end(), t.shape().begin(), t.shape().end());
    return t.reshaped(std::move(s));
}

Tensor drop_batch(const Tensor& t) {
    return t.reshaped(Shape(t.shape().begin() + 1, t.shape().end()));
}

kernels::LayerBlocksOf<Tensor> blocks(const net::DenseLayer& layer, const Tensor& u, const Tensor& x_prev,
                                      int order) {
    if (x_prev.rank() != 1 || x_prev.extent(0) != layer.in_dim() || u.rank() != 1 ||
        u.extent(0) != layer.out_dim()) {
        throw ShapeError("layer expects input " + std::to_string(layer.in_dim()) + " and pre-activation " +
                         std::to_string(layer.out_dim()));
    }
    return kernels::layer_blocks(kernels::LayerOf<Tensor>{layer.w, layer.b, layer.act}, with_batch(x_prev), order);
}

void require_constant_width(const net::Mlp& mlp, std::string_view what) {
    if (!mlp.constant_width()) {
        throw ShapeError(std::string(what) + " must map R^n to R^n at every layer");
    }
}

}  // namespace

namespace detail {
void count_curvature_points(std::uint64_t n) { g_curvature_points += n; }
}  // namespace detail

std::uint64_t curvature_evaluations() { return g_curvature_points.load(); }
void reset_curvature_evaluations() { g_curvature_points = 0; }

std::string_view to_string(InverseMode mode) {
    return mode == InverseMode::exact ? "exact" : "learned";
}

InverseMode inverse_mode_from_string(std::string_view name) {
    if (name == "exact") return InverseMode::exact;
    if (name == "learned") return InverseMode::learned;
    throw SpecError("unknown inverse mode '" + std::string(name) + "'");
}

Tensor layer_jacobian(const net::DenseLayer& layer, const Tensor& u, const Tensor& x_prev) {
    return drop_batch(blocks(layer, u, x_prev, 1).jl);
}

Tensor layer_second_derivative(const net::DenseLayer& layer, const Tensor& u, const Tensor& x_prev) {
    auto b = blocks(layer, u, x_prev, 2);
    if (!b.hl) return Tensor(Shape{layer.out_dim(), layer.in_dim(), layer.in_dim()});
    return drop_batch(*b.hl);
}

Tensor layer_third_derivative(const net::DenseLayer& layer, const Tensor& u, const Tensor& x_prev) {
    auto b = blocks(layer, u, x_prev, 3);
    if (!b.tl) return Tensor(Shape{layer.out_dim(), layer.in_dim(), layer.in_dim(), layer.in_dim()});
    return drop_batch(*b.tl);
}

DerivativeStack compose_derivatives(const net::Mlp& mlp, const net::ForwardTrace& trace) {
    require_constant_width(mlp, "differentiated network");
    if (trace.pre_activations.size() != mlp.depth()) {
        throw ShapeError("trace has " + std::to_string(trace.pre_activations.size()) + " layers, network has " +
                         std::to_string(mlp.depth()));
    }
    const auto jet = kernels::propagate(kernels::net_of(mlp), with_batch(trace.input), 3);
    return {drop_batch(jet.j), drop_batch(jet.h), drop_batch(jet.t3)};
}

Tensor pullback_metric(const Tensor& j) {
    if (j.rank() != 2) throw ShapeError("Jacobian must be a matrix, got " + shape_string(j.shape()));
    return drop_batch(kernels::pullback(with_batch(j)));
}

Tensor metric_derivative(const DerivativeStack& stack) {
    return drop_batch(kernels::metric_derivative(with_batch(stack.j), with_batch(stack.h)));
}

Tensor metric_second_derivative(const DerivativeStack& stack) {
    return drop_batch(
        kernels::metric_second_derivative(with_batch(stack.j), with_batch(stack.h), with_batch(stack.t3)));
}

Tensor inverse_metric(const Tensor& g, InverseMode mode, const net::Mlp* inverse_module, const Tensor* z_flat,
                      double ridge) {
    if (mode == InverseMode::exact) return invert_matrix(g, ridge);
    if (inverse_module == nullptr || z_flat == nullptr) {
        throw SpecError("learned inverse metric needs the inverse network and the flat-frame point");
    }
    require_constant_width(*inverse_module, "inverse network");
    const auto jet = kernels::propagate(kernels::net_of(*inverse_module), with_batch(*z_flat), 1);
    return drop_batch(kernels::learned_inverse(jet.j));
}

Tensor inverse_metric_derivative(const Tensor& g_inv, const Tensor& dg) {
    return drop_batch(kernels::inverse_derivative(with_batch(g_inv), with_batch(dg)));
}

Tensor christoffel(const Tensor& g_inv, const Tensor& dg) {
    return drop_batch(kernels::christoffel(with_batch(g_inv), with_batch(dg)));
}

Tensor christoffel_derivative(const Tensor& g_inv, const Tensor& dg, const Tensor& ddg, const Tensor& dg_inv) {
    return drop_batch(kernels::christoffel_derivative(with_batch(g_inv), with_batch(dg), with_batch(ddg),
                                                      with_batch(dg_inv)));
}

Tensor riemann(const Tensor& gamma, const Tensor& dgamma) {
    return drop_batch(kernels::riemann(with_batch(gamma), with_batch(dgamma)));
}

Tensor lowered_riemann(const Tensor& g, const Tensor& riemann) {
    return drop_batch(kernels::lower_first(with_batch(g), with_batch(riemann)));
}

RicciResult ricci(const Tensor& g, const Tensor& g_inv, const Tensor& riemann) {
    const Tensor gi = with_batch(g_inv);
    const Tensor ric = kernels::ricci_tensor(with_batch(g), gi, with_batch(riemann));
    return {drop_batch(ric), kernels::ricci_scalar(gi, ric).item()};
}

CurvatureBundle curvature_at(const net::Mlp& transfer, const net::Mlp& inverse, const Tensor& z, InverseMode mode,
                             double ridge) {
    require_constant_width(transfer, "transfer network");
    if (mode == InverseMode::learned) require_constant_width(inverse, "inverse network");
    if (z.rank() != 1 || z.extent(0) != transfer.input_dim()) {
        throw ShapeError("curvature point " + shape_string(z.shape()) + " does not match transfer width " +
                         std::to_string(transfer.input_dim()));
    }
    const auto c = kernels::curvature(kernels::net_of(transfer), kernels::net_of(inverse), with_batch(z), mode, ridge);
    CurvatureBundle out;
    out.stack = {drop_batch(c.jet.j), drop_batch(c.jet.h), drop_batch(c.jet.t3)};
    out.metric = {drop_batch(c.g), drop_batch(c.g_inv), drop_batch(c.dg), drop_batch(c.ddg), mode};
    out.dg_inv = drop_batch(c.dg_inv);
    out.gamma = drop_batch(c.gamma);
    out.dgamma = drop_batch(c.dgamma);
    out.riemann = drop_batch(c.riemann);
    out.ricci = drop_batch(c.ricci);
    out.scalar = c.scalar.item();
    return out;
}

}  // namespace gear::geometry
