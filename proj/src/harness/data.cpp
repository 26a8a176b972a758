#include "gear/harness.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace gear::harness {
namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return saa > 0.0 && sbb > 0.0 ? sab / std::sqrt(saa * sbb) : 1.0;
}

void standardize(std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m) / n;
    const double s = var > 0.0 ? std::sqrt(var) : 1.0;
    for (double& x : v) x = (x - m) / s;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

double parse_number(const std::string& cell, std::size_t line) {
    const char* begin = cell.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (cell.empty() || end == begin || *end != '\0' || !std::isfinite(v)) {
        throw ParseError("non-numeric cell '" + cell + "'", line);
    }
    return v;
}

}  // namespace

void SyntheticPairSpec::validate() const {
    if (features == 0 || latent == 0) throw ConfigError("synthetic widths must be positive");
    if (n_source == 0 || n_target == 0) throw ConfigError("synthetic sample counts must be positive");
    if (!(noise_source >= 0.0) || !(noise_target >= 0.0)) throw ConfigError("noise std must be nonnegative");
    if (!(head_divergence >= 0.0)) throw ConfigError("head divergence must be nonnegative");
    for (std::size_t h : hidden) {
        if (h == 0) throw ConfigError("hidden widths must be positive");
    }
}

SyntheticPair generate_synthetic_pair(const SyntheticPairSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t pool = std::max(spec.n_source, spec.n_target);

    Tensor x(Shape{pool, spec.features});
    for (double& v : x.data()) v = normal(rng);

    std::vector<std::size_t> sizes{spec.features};
    sizes.insert(sizes.end(), spec.hidden.begin(), spec.hidden.end());
    sizes.push_back(spec.latent);
    const net::Mlp phi = net::init_params({sizes, net::ActivationKind::silu, std::nullopt, rng()});
    const Tensor u = net::forward_batch(phi, x);

    // Heads f(u) = wᵀu + vᵀ silu(u) sharing a common part.
    auto draw = [&](std::size_t n) {
        std::vector<double> w(n);
        for (double& v : w) v = normal(rng);
        return w;
    };
    const auto w0 = draw(spec.latent);
    const auto v0 = draw(spec.latent);
    auto head = [&](const std::vector<double>& dw, const std::vector<double>& dv) {
        std::vector<double> y(pool, 0.0);
        for (std::size_t r = 0; r < pool; ++r) {
            for (std::size_t k = 0; k < spec.latent; ++k) {
                const double uk = u(r, k);
                const double silu = uk / (1.0 + std::exp(-uk));
                y[r] += (w0[k] + spec.head_divergence * dw[k]) * uk + (v0[k] + spec.head_divergence * dv[k]) * silu;
            }
        }
        standardize(y);
        return y;
    };
    const auto dws = draw(spec.latent);
    const auto dvs = draw(spec.latent);
    const auto dwt = draw(spec.latent);
    const auto dvt = draw(spec.latent);
    auto ys = head(dws, dvs);
    auto yt = head(dwt, dvt);
    std::normal_distribution<double> eps_s(0.0, spec.noise_source);
    std::normal_distribution<double> eps_t(0.0, spec.noise_target);
    for (double& v : ys) v += spec.noise_source > 0.0 ? eps_s(rng) : 0.0;
    for (double& v : yt) v += spec.noise_target > 0.0 ? eps_t(rng) : 0.0;

    SyntheticPair out;
    out.shared_rows = std::min(spec.n_source, spec.n_target);
    out.label_correlation = pearson({ys.begin(), ys.begin() + static_cast<std::ptrdiff_t>(out.shared_rows)},
                                    {yt.begin(), yt.begin() + static_cast<std::ptrdiff_t>(out.shared_rows)});
    auto take = [&](std::size_t n, const std::vector<double>& y) {
        std::vector<double> xs(x.values().begin(), x.values().begin() + static_cast<std::ptrdiff_t>(n * spec.features));
        return train::Dataset{Tensor(Shape{n, spec.features}, std::move(xs)),
                              Tensor(Shape{n}, std::vector<double>(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(n)))};
    };
    out.data.source = take(spec.n_source, ys);
    out.data.target = take(spec.n_target, yt);
    return out;
}

train::Dataset parse_csv(const std::string& text, const CsvSchema& schema) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw ParseError("missing header", 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_line(line);
    if (header.size() < 2 || header.back() != "label") {
        throw ParseError("header must be feature_0,...,feature_{d-1},label", line_no);
    }
    const std::size_t d = header.size() - 1;
    for (std::size_t j = 0; j < d; ++j) {
        if (header[j] != "feature_" + std::to_string(j)) {
            throw ParseError("header column " + std::to_string(j) + " should be feature_" + std::to_string(j),
                             line_no);
        }
    }
    if (schema.features && *schema.features != d) {
        throw ParseError("expected " + std::to_string(*schema.features) + " features, header has " +
                             std::to_string(d),
                         line_no);
    }
    std::vector<double> xs;
    std::vector<double> ys;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != d + 1) {
            throw ParseError("expected " + std::to_string(d + 1) + " cells, found " + std::to_string(cells.size()),
                             line_no);
        }
        for (std::size_t j = 0; j < d; ++j) xs.push_back(parse_number(cells[j], line_no));
        ys.push_back(parse_number(cells[d], line_no));
    }
    const std::size_t n = ys.size();
    return {Tensor(Shape{n, d}, std::move(xs)), Tensor(Shape{n}, std::move(ys))};
}

train::Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_csv(buf.str(), schema);
}

Normalizer Normalizer::fit(const train::Dataset& d) {
    d.validate();
    const std::size_t n = d.rows();
    if (n == 0) throw ConfigError("cannot fit normalization on an empty split");
    const std::size_t f = d.x.extent(1);
    auto stats = [n](auto get) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += get(i);
        m /= static_cast<double>(n);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) v += (get(i) - m) * (get(i) - m);
        v /= static_cast<double>(n);
        return std::pair{m, v > 0.0 ? std::sqrt(v) : 1.0};
    };
    Normalizer out;
    for (std::size_t j = 0; j < f; ++j) {
        const auto [m, s] = stats([&](std::size_t i) { return d.x(i, j); });
        out.feature_mean.push_back(m);
        out.feature_std.push_back(s);
    }
    std::tie(out.label_mean, out.label_std) = stats([&](std::size_t i) { return d.y[i]; });
    return out;
}

train::Dataset Normalizer::apply(const train::Dataset& d) const {
    if (d.rows() > 0 && d.x.extent(1) != feature_mean.size()) throw ShapeError("normalizer width mismatch");
    train::Dataset out = d;
    for (std::size_t i = 0; i < d.rows(); ++i) {
        for (std::size_t j = 0; j < feature_mean.size(); ++j) {
            out.x(i, j) = (d.x(i, j) - feature_mean[j]) / feature_std[j];
        }
        out.y[i] = (d.y[i] - label_mean) / label_std;
    }
    return out;
}

Tensor Normalizer::denormalize_labels(const Tensor& y) const {
    Tensor out = y;
    for (double& v : out.data()) v = denormalize_label(v);
    return out;
}

}  // namespace gear::harness
