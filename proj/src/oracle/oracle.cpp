#include "gear/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace gear::oracle {
namespace {

Shape append(Shape s, std::size_t n, int times) {
    for (int k = 0; k < times; ++k) s.push_back(n);
    return s;
}

Tensor checked(const TensorFn& f, const Tensor& x) {
    Tensor y = f(x);
    if (!y.all_finite()) throw EvaluationError("function returned a non-finite value during differencing");
    return y;
}

Tensor shifted(const Tensor& x, std::initializer_list<std::pair<std::size_t, double>> moves) {
    Tensor y = x;
    for (const auto& [axis, delta] : moves) y[axis] += delta;
    return y;
}

double inf_norm(const Tensor& x) { return x.max_abs(); }

// Net forward map z -> F(z) for a rank-1 point.
TensorFn forward_map(const net::Mlp& mlp) {
    return [&mlp](const Tensor& x) { return net::forward(mlp, x).output(); };
}

Tensor transpose_product(const Tensor& j) {
    const std::size_t m = j.extent(0);
    const std::size_t n = j.extent(1);
    Tensor g(Shape{n, n});
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
            double s = 0.0;
            for (std::size_t k = 0; k < m; ++k) s += j(k, a) * j(k, b);
            g(a, b) = s;
        }
    return g;
}

Tensor product_transpose(const Tensor& j) {
    const std::size_t n = j.extent(0);
    const std::size_t m = j.extent(1);
    Tensor g(Shape{n, n});
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
            double s = 0.0;
            for (std::size_t k = 0; k < m; ++k) s += j(a, k) * j(b, k);
            g(a, b) = s;
        }
    return g;
}

// Fourth-order five-point Jacobian, (out, n).
Tensor jacobian5(const TensorFn& f, const Tensor& x, double h) {
    const std::size_t n = x.extent(0);
    Tensor out;
    for (std::size_t a = 0; a < n; ++a) {
        const Tensor d = ((checked(f, shifted(x, {{a, h}})) - checked(f, shifted(x, {{a, -h}}))) * 8.0 -
                          (checked(f, shifted(x, {{a, 2 * h}})) - checked(f, shifted(x, {{a, -2 * h}})))) *
                         (1.0 / (12.0 * h));
        if (a == 0) out = Tensor(Shape{d.size(), n});
        for (std::size_t i = 0; i < d.size(); ++i) out(i, a) = d[i];
    }
    return out;
}

}  // namespace

Tensor fd_derivative(const TensorFn& f, const Tensor& x, int order, const FdConfig& cfg) {
    if (x.rank() != 1) throw ShapeError("fd_derivative expects a rank-1 point, got " + shape_string(x.shape()));
    if (order < 1 || order > 3) throw SpecError("fd_derivative order must be 1, 2 or 3");
    const std::size_t n = x.extent(0);
    const Tensor f0 = checked(f, x);
    const std::size_t m = f0.size();
    Tensor out(append(f0.shape(), n, order));
    auto put = [&](std::size_t flat_derivative, const Tensor& v) {
        // Output entry (i, d...) lives at i * n^order + flat_derivative.
        const std::size_t block = out.size() / m;
        for (std::size_t i = 0; i < m; ++i) out[i * block + flat_derivative] = v[i];
    };

    if (order == 1) {
        const double h = cfg.step1;
        for (std::size_t a = 0; a < n; ++a) {
            const Tensor d = (checked(f, shifted(x, {{a, h}})) - checked(f, shifted(x, {{a, -h}}))) * (0.5 / h);
            put(a, d);
        }
        return out;
    }

    if (order == 2) {
        const double h = cfg.step2;
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = a; b < n; ++b) {
                Tensor d;
                if (a == b) {
                    d = (checked(f, shifted(x, {{a, h}})) - f0 * 2.0 + checked(f, shifted(x, {{a, -h}}))) *
                        (1.0 / (h * h));
                } else {
                    d = ((checked(f, shifted(x, {{a, h}, {b, h}})) - checked(f, shifted(x, {{a, h}, {b, -h}}))) -
                         (checked(f, shifted(x, {{a, -h}, {b, h}})) - checked(f, shifted(x, {{a, -h}, {b, -h}})))) *
                        (0.25 / (h * h));
                }
                put(a * n + b, d);
                put(b * n + a, d);
            }
        }
        return out;
    }

    // Product of three central first differences; valid for repeated axes.
    const double h = cfg.step3 * std::max(1.0, inf_norm(x));
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a; b < n; ++b) {
            for (std::size_t c = b; c < n; ++c) {
                Tensor acc(f0.shape());
                for (int s = 0; s < 8; ++s) {
                    const double sa = (s & 1) != 0 ? -1.0 : 1.0;
                    const double sb = (s & 2) != 0 ? -1.0 : 1.0;
                    const double sc = (s & 4) != 0 ? -1.0 : 1.0;
                    Tensor p = x;
                    p[a] += sa * h;
                    p[b] += sb * h;
                    p[c] += sc * h;
                    acc = acc + checked(f, p) * (sa * sb * sc);
                }
                const Tensor d = acc * (1.0 / (8.0 * h * h * h));
                const std::size_t idx[3] = {a, b, c};
                std::size_t perm[3] = {0, 1, 2};
                do {
                    put((idx[perm[0]] * n + idx[perm[1]]) * n + idx[perm[2]], d);
                } while (std::next_permutation(perm, perm + 3));
            }
        }
    }
    return out;
}

geometry::CurvatureBundle fd_geometry_pipeline(const net::Mlp& transfer, const net::Mlp* inverse, const Tensor& z,
                                               geometry::InverseMode mode, const FdConfig& cfg) {
    if (!transfer.constant_width()) throw ShapeError("transfer network must have constant width");
    if (z.rank() != 1 || z.extent(0) != transfer.input_dim()) {
        throw ShapeError("point does not match transfer width");
    }
    if (mode == geometry::InverseMode::learned && inverse == nullptr) {
        throw SpecError("learned inverse metric needs the inverse network");
    }
    const std::size_t n = z.extent(0);
    const TensorFn f = forward_map(transfer);

    // Metric map x -> J(x)ᵀ J(x) with the Jacobian itself differenced.
    const TensorFn metric_map = [&f, &cfg](const Tensor& x) {
        return transpose_product(jacobian5(f, x, cfg.metric_step));
    };

    geometry::CurvatureBundle out;
    out.stack.j = fd_derivative(f, z, 1, cfg);
    out.stack.h = fd_derivative(f, z, 2, cfg);
    out.stack.t3 = fd_derivative(f, z, 3, cfg);

    auto& mb = out.metric;
    mb.inverse_mode = mode;
    mb.g = transpose_product(out.stack.j);

    // d(g_ij)/d(x_k) arrives as [i][j][k]; stored as [k][i][j].
    FdConfig first = cfg;
    first.step1 = cfg.step2;
    const Tensor dg_raw = fd_derivative(metric_map, z, 1, first);
    mb.dg = Tensor(Shape{n, n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k) mb.dg(k, i, j) = dg_raw(i, j, k);

    // d²(g_ml)/d(x_j)d(x_k) arrives as [m][l][j][k]; stored as [j][k][m][l].
    FdConfig second = cfg;
    second.step2 = cfg.step3 * std::max(1.0, z.max_abs());
    const Tensor ddg_raw = fd_derivative(metric_map, z, 2, second);
    mb.ddg = Tensor(Shape{n, n, n, n});
    for (std::size_t m = 0; m < n; ++m)
        for (std::size_t l = 0; l < n; ++l)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t k = 0; k < n; ++k) mb.ddg(j, k, m, l) = ddg_raw(m, l, j, k);

    if (mode == geometry::InverseMode::exact) {
        mb.g_inv = invert_matrix(mb.g);
        const TensorFn inverse_map = [&metric_map](const Tensor& x) { return invert_matrix(metric_map(x)); };
        const Tensor di = fd_derivative(inverse_map, z, 1, first);
        out.dg_inv = Tensor(Shape{n, n, n});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t m = 0; m < n; ++m)
                for (std::size_t j = 0; j < n; ++j) out.dg_inv(j, i, m) = di(i, m, j);
    } else {
        const Tensor z_flat = f(z);
        mb.g_inv = product_transpose(fd_derivative(forward_map(*inverse), z_flat, 1, cfg));
        // The learned inverse is treated as exact inside the identity
        // ∂_j g^{im} = -g^{ia} ∂_j g_ab g^{bm}.
        out.dg_inv = Tensor(Shape{n, n, n});
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t m = 0; m < n; ++m) {
                    double s = 0.0;
                    for (std::size_t a = 0; a < n; ++a)
                        for (std::size_t b = 0; b < n; ++b) s += mb.g_inv(i, a) * mb.dg(j, a, b) * mb.g_inv(b, m);
                    out.dg_inv(j, i, m) = -s;
                }
    }
    const Tensor& gi = mb.g_inv;
    const Tensor& dg = mb.dg;
    const Tensor& ddg = mb.ddg;

    out.gamma = Tensor(Shape{n, n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k) {
                double s = 0.0;
                for (std::size_t m = 0; m < n; ++m) s += gi(i, m) * (dg(j, m, k) + dg(k, m, j) - dg(m, k, j));
                out.gamma(i, j, k) = 0.5 * s;
            }

    out.dgamma = Tensor(Shape{n, n, n, n});
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t l = 0; l < n; ++l) {
                    double s = 0.0;
                    for (std::size_t m = 0; m < n; ++m) {
                        s += out.dg_inv(j, i, m) * (dg(k, m, l) + dg(l, m, k) - dg(m, l, k));
                        s += gi(i, m) * (ddg(j, k, m, l) + ddg(j, l, m, k) - ddg(j, m, l, k));
                    }
                    out.dgamma(j, i, k, l) = 0.5 * s;
                }

    // R^a_bcd = ∂_c Γ^a_db - ∂_d Γ^a_cb + Γ^a_ce Γ^e_db - Γ^a_de Γ^e_cb
    out.riemann = Tensor(Shape{n, n, n, n});
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t c = 0; c < n; ++c)
                for (std::size_t d = 0; d < n; ++d) {
                    double s = out.dgamma(c, a, d, b) - out.dgamma(d, a, c, b);
                    for (std::size_t e = 0; e < n; ++e) {
                        s += out.gamma(a, c, e) * out.gamma(e, d, b) - out.gamma(a, d, e) * out.gamma(e, c, b);
                    }
                    out.riemann(a, b, c, d) = s;
                }

    // R_bd = g^{ac} g_ae R^e_bcd
    out.ricci = Tensor(Shape{n, n});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t d = 0; d < n; ++d) {
            double s = 0.0;
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t c = 0; c < n; ++c)
                    for (std::size_t e = 0; e < n; ++e) s += gi(a, c) * mb.g(a, e) * out.riemann(e, b, c, d);
            out.ricci(b, d) = s;
        }
    double scalar = 0.0;
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t d = 0; d < n; ++d) scalar += gi(b, d) * out.ricci(b, d);
    out.scalar = scalar;
    return out;
}

const TensorComparison& ComparisonReport::at(std::string_view name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t;
    }
    throw SpecError("no comparison named '" + std::string(name) + "'");
}

TensorComparison compare_tensor(std::string name, const Tensor& analytic, const Tensor& reference, double tolerance,
                                double scale, double floor) {
    if (analytic.shape() != reference.shape()) {
        throw ShapeError(name + ": shapes " + shape_string(analytic.shape()) + " and " +
                         shape_string(reference.shape()) + " differ");
    }
    TensorComparison c;
    c.name = std::move(name);
    c.tolerance = tolerance;
    std::size_t worst = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double e = std::abs(analytic[i] - reference[i]);
        if (!(e <= c.max_abs_err)) {
            c.max_abs_err = std::isnan(e) ? std::numeric_limits<double>::infinity() : e;
            worst = i;
        }
    }
    const double denom = std::max({reference.max_abs(), scale, floor});
    c.max_rel_err = c.max_abs_err / denom;
    c.pass = c.max_rel_err <= tolerance;
    std::size_t rest = worst;
    c.offending_index.assign(reference.rank(), 0);
    for (std::size_t ax = reference.rank(); ax-- > 0;) {
        c.offending_index[ax] = rest % reference.extent(ax);
        rest /= reference.extent(ax);
    }
    return c;
}

ComparisonReport compare_reports(const geometry::CurvatureBundle& analytic, const geometry::CurvatureBundle& numeric,
                                 const FdConfig& cfg) {
    if (analytic.metric.g.shape() != numeric.metric.g.shape()) {
        throw ShapeError("bundles have different dimensions");
    }
    const auto& t = cfg.tol;
    const double curvature_scale = std::max(numeric.gamma.max_abs() * numeric.gamma.max_abs(), numeric.dgamma.max_abs());
    ComparisonReport r;
    auto add = [&](std::string name, const Tensor& a, const Tensor& b, double tol, double scale = 0.0) {
        r.tensors.push_back(compare_tensor(std::move(name), a, b, tol, scale, cfg.floor));
        r.pass = r.pass && r.tensors.back().pass;
    };
    add("J", analytic.stack.j, numeric.stack.j, t.j);
    add("H", analytic.stack.h, numeric.stack.h, t.h);
    add("T3", analytic.stack.t3, numeric.stack.t3, t.t3);
    add("g", analytic.metric.g, numeric.metric.g, t.g);
    add("g_inv", analytic.metric.g_inv, numeric.metric.g_inv, t.g_inv);
    add("dg", analytic.metric.dg, numeric.metric.dg, t.dg);
    add("ddg", analytic.metric.ddg, numeric.metric.ddg, t.ddg);
    add("dg_inv", analytic.dg_inv, numeric.dg_inv, t.dg_inv);
    add("gamma", analytic.gamma, numeric.gamma, t.gamma);
    add("dgamma", analytic.dgamma, numeric.dgamma, t.dgamma);
    add("riemann", analytic.riemann, numeric.riemann, t.curvature, curvature_scale);
    add("ricci", analytic.ricci, numeric.ricci, t.curvature, curvature_scale);
    // R = g^ij R_ij sums n² products, each up to |g⁻¹|·|R_ij|.
    const double n = static_cast<double>(numeric.metric.g.extent(0));
    const double scalar_scale = curvature_scale * n * n * numeric.metric.g_inv.max_abs();
    add("scalar", Tensor::scalar(analytic.scalar), Tensor::scalar(numeric.scalar), t.curvature, scalar_scale);
    return r;
}

}  // namespace gear::oracle
