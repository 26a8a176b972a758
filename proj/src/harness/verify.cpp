#include "gear/harness.hpp"

#include "gear/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace gear::harness {
namespace {

using geometry::InverseMode;
using net::ActivationKind;

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double err = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(a[i] - b[i]));
    return err;
}

VerifyCheck check(std::string name, double err, double tol) { return {std::move(name), err, tol, err <= tol}; }

void golden(std::vector<VerifyCheck>& out) {
    const net::Mlp quad({{Tensor::matrix({{1, 2}, {3, 4}}), Tensor::vector({3, 4}), ActivationKind::quadratic},
                         {Tensor::matrix({{5, 6}, {7, 8}}), Tensor::vector({0, 0}), ActivationKind::linear}});
    const auto qs = geometry::compose_derivatives(quad, net::forward(quad, Tensor::vector({1, 2})));
    out.push_back(check("golden_quadratic_jacobian", max_abs_diff(qs.j, Tensor::matrix({{620, 880}, {832, 1184}})), 0.0));
    out.push_back(check("golden_quadratic_metric",
                        max_abs_diff(geometry::pullback_metric(qs.j),
                                     Tensor::matrix({{1076624, 1530688}, {1530688, 2176256}})),
                        0.0));

    const net::Mlp silu({{Tensor::matrix({{0.1, 0.2}, {0.3, 0.4}}), Tensor::vector({0.3, 0.4}), ActivationKind::silu},
                         {Tensor::matrix({{0.5, 0.6}, {0.7, 0.8}}), Tensor::vector({0, 0}), ActivationKind::linear}});
    const Tensor x = Tensor::vector({0.1, 0.2});
    const auto trace = net::forward(silu, x);
    const auto terms = net::silu_terms(trace.pre_activations[0]);
    const auto ss = geometry::compose_derivatives(silu, trace);
    // Printed to four decimals.
    constexpr double printed = 5e-4;
    out.push_back(check("golden_silu_sigma", max_abs_diff(terms.sigma, Tensor::vector({0.5866, 0.6248})), printed));
    out.push_back(check("golden_silu_e", max_abs_diff(terms.e, Tensor::vector({0.7047, 0.6005})), printed));
    out.push_back(check("golden_silu_jacobian",
                        max_abs_diff(ss.j, Tensor::matrix({{0.1676, 0.2458}, {0.2257, 0.3322}})), printed));
    out.push_back(check("golden_silu_metric",
                        max_abs_diff(geometry::pullback_metric(ss.j),
                                     Tensor::matrix({{0.0790, 0.1161}, {0.1161, 0.1708}})),
                        printed));
}

double asymmetry(const Tensor& t, std::size_t a, std::size_t b, double sign) {
    // Largest |t - sign·swap(a,b)(t)| over all entries of a rank-3/4 tensor.
    const Shape& s = t.shape();
    std::vector<std::size_t> idx(s.size(), 0);
    double err = 0.0;
    for (std::size_t flat = 0; flat < t.size(); ++flat) {
        std::size_t rem = flat;
        for (std::size_t d = s.size(); d-- > 0;) {
            idx[d] = rem % s[d];
            rem /= s[d];
        }
        auto swapped = idx;
        std::swap(swapped[a], swapped[b]);
        std::size_t off = 0;
        for (std::size_t d = 0; d < s.size(); ++d) off = off * s[d] + swapped[d];
        err = std::max(err, std::abs(t[flat] - sign * t[off]));
    }
    return err;
}

double bianchi(const Tensor& r) {
    const std::size_t n = r.extent(0);
    double err = 0.0;
    for (std::size_t l = 0; l < n; ++l)
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t c = 0; c < n; ++c)
                    err = std::max(err, std::abs(r(l, a, b, c) + r(l, b, c, a) + r(l, c, a, b)));
    return err;
}

}  // namespace

net::Mlp random_transfer(std::size_t dim, std::size_t layers, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double amp = 0.3 / std::sqrt(static_cast<double>(dim));
    std::uniform_real_distribution<double> noise(-amp, amp);
    std::uniform_real_distribution<double> bias(-0.2, 0.2);
    std::vector<net::DenseLayer> out;
    for (std::size_t l = 0; l < layers; ++l) {
        Tensor w = Tensor::identity(dim);
        for (double& v : w.data()) v += noise(rng);
        Tensor b(Shape{dim});
        for (double& v : b.data()) v = bias(rng);
        out.push_back({std::move(w), std::move(b), ActivationKind::silu});
    }
    return net::Mlp(std::move(out));
}

bool VerifyReport::pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const VerifyCheck& c) { return c.pass; });
}

VerifyReport verify(std::size_t modules, std::uint64_t seed) {
    VerifyReport report;
    golden(report.checks);

    // Worst case over modules, keyed by check name in first-seen order.
    std::vector<VerifyCheck> worst;
    auto record = [&](const std::string& name, double err, double tol) {
        auto it = std::find_if(worst.begin(), worst.end(), [&](const VerifyCheck& c) { return c.check_name == name; });
        if (it == worst.end()) {
            worst.push_back(check(name, err, tol));
        } else {
            it->max_rel_err = std::max(it->max_rel_err, err);
            it->pass = it->max_rel_err <= tol;
        }
    };

    const oracle::FdConfig cfg;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coord(-0.5, 0.5);
    for (std::size_t m = 0; m < modules; ++m) {
        const std::size_t dim = 2 + m % 5;
        const std::size_t layers = 1 + (m / 5) % 4;
        const net::Mlp transfer = random_transfer(dim, layers, rng());
        const net::Mlp inverse = random_transfer(dim, layers, rng());
        Tensor z(Shape{dim});
        for (double& v : z.data()) v = coord(rng);

        for (InverseMode mode : {InverseMode::exact, InverseMode::learned}) {
            const auto analytic = geometry::curvature_at(transfer, inverse, z, mode);
            const auto numeric = oracle::fd_geometry_pipeline(transfer, &inverse, z, mode, cfg);
            const auto cmp = oracle::compare_reports(analytic, numeric, cfg);
            const std::string prefix = std::string("oracle_") + std::string(geometry::to_string(mode)) + "_";
            for (const auto& t : cmp.tensors) record(prefix + t.name, t.max_rel_err, t.tolerance);

            if (mode == InverseMode::exact) {
                const double scale = std::max({analytic.gamma.max_abs() * analytic.gamma.max_abs(),
                                               analytic.dgamma.max_abs(), 1e-12});
                record("flatness_exact_riemann", analytic.riemann.max_abs() / scale, 1e-6);
                record("bianchi_exact", bianchi(analytic.riemann), 1e-8);
            }
            record("symmetry_metric", asymmetry(analytic.metric.g, 0, 1, 1.0), 0.0);
            record("symmetry_christoffel_lower", asymmetry(analytic.gamma, 1, 2, 1.0), 0.0);
            record("antisymmetry_riemann", asymmetry(analytic.riemann, 2, 3, -1.0), 0.0);
        }
    }
    report.checks.insert(report.checks.end(), worst.begin(), worst.end());
    return report;
}

nlohmann::json to_json(const VerifyReport& report) {
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : report.checks) {
        checks.push_back(
            {{"check_name", c.check_name}, {"max_rel_err", c.max_rel_err}, {"tolerance", c.tolerance}, {"pass", c.pass}});
    }
    return {{"pass", report.pass()}, {"checks", std::move(checks)}};
}

}  // namespace gear::harness
