#include "gear/harness.hpp"

#include "gear/detail/kernels.hpp"
#include "gear/oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

namespace gear::harness {
namespace {

struct Measured {
    Tensor g;   // (B,i,j)
    Tensor dg;  // (B,k,i,j)
    double seconds = 0.0;
    std::size_t peak_bytes = 0;
};

template <class F>
Measured measure(std::size_t repetitions, F&& run) {
    Measured best;
    best.seconds = 1e300;
    for (std::size_t r = 0; r < repetitions; ++r) {
        const std::size_t base = allocated_bytes();
        reset_peak_allocated_bytes();
        const auto t0 = std::chrono::steady_clock::now();
        auto [g, dg] = run();
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const std::size_t peak = peak_allocated_bytes() - base;
        if (s < best.seconds) best.seconds = s;
        best.peak_bytes = std::max(best.peak_bytes, peak);
        best.g = std::move(g);
        best.dg = std::move(dg);
    }
    return best;
}

double rel_err(const Tensor& a, const Tensor& ref) {
    double err = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(a[i] - ref[i]));
    return err / std::max(ref.max_abs(), 1e-12);
}

}  // namespace

BenchReport bench(const std::vector<std::size_t>& dims, const std::vector<std::size_t>& batches,
                  std::size_t repetitions, std::uint64_t seed) {
    if (repetitions == 0) throw ConfigError("bench needs at least one repetition");
    BenchReport report;
    report.repetitions = repetitions;
    std::mt19937_64 rng(seed);
    for (std::size_t dim : dims) {
        if (dim < 2) throw ConfigError("bench dimensions must be at least 2");
        // Near-identity SiLU stack: three layers of I + U(±0.3/√n).
        std::vector<net::DenseLayer> layers;
        const double amp = 0.3 / std::sqrt(static_cast<double>(dim));
        std::uniform_real_distribution<double> noise(-amp, amp);
        std::uniform_real_distribution<double> bias(-0.2, 0.2);
        for (int l = 0; l < 3; ++l) {
            Tensor w = Tensor::identity(dim);
            for (double& v : w.data()) v += noise(rng);
            Tensor b(Shape{dim});
            for (double& v : b.data()) v = bias(rng);
            layers.push_back({std::move(w), std::move(b), net::ActivationKind::silu});
        }
        const net::Mlp transfer(std::move(layers));
        const auto net = kernels::net_of(transfer);

        for (std::size_t batch : batches) {
            if (batch == 0) throw ConfigError("bench batch sizes must be positive");
            std::uniform_real_distribution<double> coord(-0.5, 0.5);
            Tensor z(Shape{batch, dim});
            for (double& v : z.data()) v = coord(rng);

            const Measured analytic = measure(repetitions, [&] {
                const auto jet = kernels::propagate(net, z, 2);
                return std::pair{kernels::pullback(jet.j), kernels::metric_derivative(jet.j, jet.h)};
            });

            oracle::FdConfig inner;
            oracle::FdConfig outer;
            outer.step1 = 1e-3;
            const Measured numeric = measure(repetitions, [&] {
                Tensor g(Shape{batch, dim, dim});
                Tensor dg(Shape{batch, dim, dim, dim});
                const oracle::TensorFn f = [&](const Tensor& x) { return net::forward(transfer, x).output(); };
                const oracle::TensorFn metric = [&](const Tensor& x) {
                    const Tensor j = oracle::fd_derivative(f, x, 1, inner);
                    return contract(j, j, "mi,mj->ij");
                };
                for (std::size_t b = 0; b < batch; ++b) {
                    Tensor p(Shape{dim});
                    for (std::size_t i = 0; i < dim; ++i) p[i] = z(b, i);
                    const Tensor gb = metric(p);
                    const Tensor dgb = oracle::fd_derivative(metric, p, 1, outer);  // (i,j,k)
                    for (std::size_t i = 0; i < dim; ++i) {
                        for (std::size_t j = 0; j < dim; ++j) {
                            g(b, i, j) = gb(i, j);
                            for (std::size_t k = 0; k < dim; ++k) dg(b, k, i, j) = dgb(i, j, k);
                        }
                    }
                }
                return std::pair{std::move(g), std::move(dg)};
            });

            BenchRow row;
            row.dim = dim;
            row.batch = batch;
            row.analytic_seconds = std::max(analytic.seconds, 1e-9);
            row.numeric_seconds = std::max(numeric.seconds, 1e-9);
            row.analytic_peak_bytes = std::max<std::size_t>(analytic.peak_bytes, 1);
            row.numeric_peak_bytes = std::max<std::size_t>(numeric.peak_bytes, 1);
            row.time_ratio = row.numeric_seconds / row.analytic_seconds;
            row.memory_ratio = static_cast<double>(row.numeric_peak_bytes) / static_cast<double>(row.analytic_peak_bytes);
            row.metric_rel_err = rel_err(analytic.g, numeric.g);
            row.metric_derivative_rel_err = rel_err(analytic.dg, numeric.dg);
            report.agreement = report.agreement && row.metric_rel_err <= 1e-4;
            report.rows.push_back(row);
        }
    }
    return report;
}

nlohmann::json to_json(const BenchReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"dim", r.dim},
                        {"batch", r.batch},
                        {"analytic_seconds", r.analytic_seconds},
                        {"numeric_seconds", r.numeric_seconds},
                        {"analytic_peak_bytes", r.analytic_peak_bytes},
                        {"numeric_peak_bytes", r.numeric_peak_bytes},
                        {"time_ratio", r.time_ratio},
                        {"memory_ratio", r.memory_ratio},
                        {"metric_rel_err", r.metric_rel_err},
                        {"metric_derivative_rel_err", r.metric_derivative_rel_err}});
    }
    return {{"repetitions", report.repetitions}, {"agreement", report.agreement}, {"rows", std::move(rows)}};
}

}  // namespace gear::harness
