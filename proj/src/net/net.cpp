#include "gear/net.hpp"

#include <cmath>
#include <fstream>
#include <random>

namespace gear::net {

std::string_view to_string(ActivationKind act) {
    switch (act) {
        case ActivationKind::silu: return "silu";
        case ActivationKind::quadratic: return "quadratic";
        case ActivationKind::linear: return "linear";
    }
    return "unknown";
}

ActivationKind activation_from_string(std::string_view name) {
    if (name == "silu") return ActivationKind::silu;
    if (name == "quadratic") return ActivationKind::quadratic;
    if (name == "linear") return ActivationKind::linear;
    throw SpecError("unknown activation '" + std::string(name) + "'");
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    for (std::size_t n = 0; n < layers_.size(); ++n) {
        const auto& l = layers_[n];
        if (l.w.rank() != 2 || l.b.rank() != 1 || l.b.extent(0) != l.w.extent(0)) {
            throw ShapeError("layer " + std::to_string(n) + ": weight " + shape_string(l.w.shape()) +
                             " inconsistent with bias " + shape_string(l.b.shape()));
        }
        if (n > 0 && layers_[n - 1].out_dim() != l.in_dim()) {
            throw ShapeError("layer " + std::to_string(n) + " expects input " + std::to_string(l.in_dim()) +
                             " but previous layer emits " + std::to_string(layers_[n - 1].out_dim()));
        }
    }
}

std::size_t Mlp::input_dim() const {
    if (layers_.empty()) throw SpecError("empty Mlp has no input dimension");
    return layers_.front().in_dim();
}

std::size_t Mlp::output_dim() const {
    if (layers_.empty()) throw SpecError("empty Mlp has no output dimension");
    return layers_.back().out_dim();
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.w.size() + l.b.size();
    return n;
}

bool Mlp::constant_width() const {
    if (layers_.empty()) return false;
    const std::size_t n = layers_.front().in_dim();
    for (const auto& l : layers_) {
        if (l.in_dim() != n || l.out_dim() != n) return false;
    }
    return true;
}

namespace {

double logistic(double u) {
    if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
    const double e = std::exp(u);
    return e / (1.0 + e);
}

// SiLU f(u) = u·σ with σ = LS(u), E = e^{-u}. Because σ' = E·σ² and E' = -E,
// every derivative is a polynomial in u, E and σ. The products E^k·σ^(k+1)
// are evaluated as (1-σ)^k·σ, which equals them exactly but cannot overflow.
double silu_derivative(double u, int order) {
    const double s = logistic(u);
    const double q = logistic(-u);  // E·σ
    const double p1 = q * s;        // E σ²
    const double p2 = q * p1;       // E² σ³
    const double p3 = q * p2;       // E³ σ⁴
    const double p4 = q * p3;       // E⁴ σ⁵
    switch (order) {
        case 0: return u * s;
        case 1: return s + u * p1;
        case 2: return p1 + p1 - u * p1 + 2.0 * u * p2;
        case 3:
            return -2.0 * p1 - p1 + 4.0 * p2 + u * p1 - 2.0 * u * p2 + 2.0 * p2 - 4.0 * u * p2 +
                   6.0 * u * p3;
        case 4:
            return 4.0 * p1 - 24.0 * p2 + 24.0 * p3 - u * p1 + 14.0 * u * p2 - 36.0 * u * p3 +
                   24.0 * u * p4;
        default: throw SpecError("activation order out of range");
    }
}

double activation_scalar(ActivationKind act, double u, int order) {
    switch (act) {
        case ActivationKind::silu: return silu_derivative(u, order);
        case ActivationKind::quadratic:
            switch (order) {
                case 0: return u * u;
                case 1: return 2.0 * u;
                case 2: return 2.0;
                default: return 0.0;
            }
        case ActivationKind::linear:
            switch (order) {
                case 0: return u;
                case 1: return 1.0;
                default: return 0.0;
            }
    }
    return 0.0;
}

}  // namespace

Tensor activation_eval_extended(ActivationKind act, const Tensor& u, int order) {
    if (order < 0 || order > 4) throw SpecError("activation order must be in 0..4");
    Tensor out(u.shape());
    auto o = out.data();
    auto x = u.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = activation_scalar(act, x[i], order);
    return out;
}

Tensor activation_eval(ActivationKind act, const Tensor& u, int order) {
    if (order < 0 || order > 3) throw SpecError("activation order must be in 0..3");
    return activation_eval_extended(act, u, order);
}

SiluTerms silu_terms(const Tensor& u) {
    return {map(u, logistic), map(u, [](double v) { return std::exp(-v); })};
}

ForwardTrace forward(const Mlp& mlp, const Tensor& x) {
    if (x.rank() != 1 || x.extent(0) != mlp.input_dim()) {
        throw ShapeError("forward input " + shape_string(x.shape()) + " does not match Mlp input " +
                         std::to_string(mlp.input_dim()));
    }
    ForwardTrace trace;
    trace.input = x;
    const Tensor* prev = &trace.input;
    for (const auto& layer : mlp.layers()) {
        Tensor u = contract(layer.w, *prev, "ij,j->i") + layer.b;
        Tensor out = activation_eval(layer.act, u, 0);
        trace.pre_activations.push_back(std::move(u));
        trace.outputs.push_back(std::move(out));
        prev = &trace.outputs.back();
    }
    return trace;
}

Tensor forward_batch(const Mlp& mlp, const Tensor& x) {
    if (x.rank() != 2 || x.extent(1) != mlp.input_dim()) {
        throw ShapeError("forward_batch input " + shape_string(x.shape()) + " does not match Mlp input " +
                         std::to_string(mlp.input_dim()));
    }
    Tensor cur = x;
    const Tensor ones(Shape{x.extent(0)}, 1.0);
    for (const auto& layer : mlp.layers()) {
        Tensor u = contract(cur, layer.w, "Bj,ij->Bi") + contract(ones, layer.b, "B,i->Bi");
        cur = activation_eval(layer.act, u, 0);
    }
    return cur;
}

Mlp init_params(const InitSpec& spec) {
    if (spec.sizes.size() < 2) throw SpecError("init_params needs at least an input and an output size");
    for (std::size_t s : spec.sizes) {
        if (s == 0) throw SpecError("layer sizes must be positive");
    }
    std::mt19937_64 rng(spec.seed);
    std::vector<DenseLayer> layers;
    for (std::size_t n = 0; n + 1 < spec.sizes.size(); ++n) {
        const std::size_t fan_in = spec.sizes[n];
        const std::size_t fan_out = spec.sizes[n + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        Tensor w(Shape{fan_out, fan_in});
        for (double& v : w.data()) v = dist(rng);
        const bool last = n + 2 == spec.sizes.size();
        const ActivationKind act = last ? spec.output_activation.value_or(spec.activation) : spec.activation;
        layers.push_back({std::move(w), Tensor(Shape{fan_out}), act});
    }
    return Mlp(std::move(layers));
}

nlohmann::json to_json(const Mlp& mlp) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : mlp.layers()) {
        nlohmann::json w = nlohmann::json::array();
        for (std::size_t i = 0; i < l.out_dim(); ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t j = 0; j < l.in_dim(); ++j) row.push_back(l.w(i, j));
            w.push_back(std::move(row));
        }
        layers.push_back({{"w", std::move(w)}, {"b", l.b.values()}, {"act", std::string(to_string(l.act))}});
    }
    return {{"layers", std::move(layers)}};
}

Mlp mlp_from_json(const nlohmann::json& doc) {
    if (!doc.contains("layers") || !doc["layers"].is_array()) {
        throw SpecError("Mlp JSON lacks a 'layers' array");
    }
    std::vector<DenseLayer> layers;
    for (const auto& jl : doc["layers"]) {
        const auto& jw = jl.at("w");
        const std::size_t rows = jw.size();
        if (rows == 0 || jw[0].empty()) throw SpecError("empty weight matrix in Mlp JSON");
        const std::size_t cols = jw[0].size();
        std::vector<double> w;
        w.reserve(rows * cols);
        for (const auto& row : jw) {
            if (row.size() != cols) throw ShapeError("ragged weight matrix in Mlp JSON");
            for (const auto& v : row) w.push_back(v.get<double>());
        }
        auto b = jl.at("b").get<std::vector<double>>();
        if (b.empty()) throw SpecError("empty bias in Mlp JSON");
        const std::size_t nb = b.size();
        layers.push_back({Tensor(Shape{rows, cols}, std::move(w)), Tensor(Shape{nb}, std::move(b)),
                          activation_from_string(jl.at("act").get<std::string>())});
    }
    return Mlp(std::move(layers));
}

void save_json(const Mlp& mlp, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_json(mlp).dump(2) << '\n';
}

Mlp load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return mlp_from_json(nlohmann::json::parse(in));
}

}  // namespace gear::net
