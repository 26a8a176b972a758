#pragma once

#include "gear/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace gear::net {

/// SiLU and Quadratic are smooth everywhere; Linear is the identity
/// activation (affine layer).
enum class ActivationKind { silu, quadratic, linear };

[[nodiscard]] std::string_view to_string(ActivationKind act);
[[nodiscard]] ActivationKind activation_from_string(std::string_view name);

struct DenseLayer {
    Tensor w;  // (out, in)
    Tensor b;  // (out)
    ActivationKind act = ActivationKind::silu;

    [[nodiscard]] std::size_t in_dim() const { return w.extent(1); }
    [[nodiscard]] std::size_t out_dim() const { return w.extent(0); }

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

class Mlp {
public:
    Mlp() = default;
    explicit Mlp(std::vector<DenseLayer> layers);

    [[nodiscard]] const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
    [[nodiscard]] std::vector<DenseLayer>& layers() noexcept { return layers_; }
    [[nodiscard]] std::size_t depth() const noexcept { return layers_.size(); }
    [[nodiscard]] std::size_t input_dim() const;
    [[nodiscard]] std::size_t output_dim() const;
    [[nodiscard]] std::size_t parameter_count() const;
    /// True when every layer maps R^n to R^n for one n.
    [[nodiscard]] bool constant_width() const;

    friend bool operator==(const Mlp&, const Mlp&) = default;

private:
    std::vector<DenseLayer> layers_;
};

/// Cached pass through an Mlp: u[n] = W[n]·x[n-1] + b[n] and x[n] = f(u[n]).
struct ForwardTrace {
    Tensor input;
    std::vector<Tensor> pre_activations;
    std::vector<Tensor> outputs;

    [[nodiscard]] const Tensor& output() const { return outputs.empty() ? input : outputs.back(); }
    /// Input seen by layer n (x[n-1]).
    [[nodiscard]] const Tensor& layer_input(std::size_t n) const { return n == 0 ? input : outputs[n - 1]; }
};

/// f, f', f'' or f''' of the activation, entrywise at u (order 0..3).
/// SiLU derivatives are written in the logistic σ = LS(u) and E = e^{-u}
/// terms; see activation_eval_extended for the closed forms.
[[nodiscard]] Tensor activation_eval(ActivationKind act, const Tensor& u, int order);
/// Same as activation_eval but also serves order 4, which reverse-mode
/// differentiation of the third-derivative block needs.
[[nodiscard]] Tensor activation_eval_extended(ActivationKind act, const Tensor& u, int order);

/// The logistic σ^i = LS(u^i) and the diagonal of E^i_i = e^{-u^i}.
struct SiluTerms {
    Tensor sigma;
    Tensor e;
};
[[nodiscard]] SiluTerms silu_terms(const Tensor& u);

[[nodiscard]] ForwardTrace forward(const Mlp& mlp, const Tensor& x);
/// Row-wise forward of a (batch, in) matrix.
[[nodiscard]] Tensor forward_batch(const Mlp& mlp, const Tensor& x);

struct InitSpec {
    std::vector<std::size_t> sizes;  // n_0, n_1, ..., n_L
    ActivationKind activation = ActivationKind::silu;
    /// Activation of the final layer; defaults to `activation`.
    std::optional<ActivationKind> output_activation;
    std::uint64_t seed = 0;
};

/// Glorot-uniform weights in ±sqrt(6/(fan_in+fan_out)), zero biases.
[[nodiscard]] Mlp init_params(const InitSpec& spec);

// {"layers":[{"w":[[...]],"b":[...],"act":"silu"}]}
[[nodiscard]] nlohmann::json to_json(const Mlp& mlp);
[[nodiscard]] Mlp mlp_from_json(const nlohmann::json& doc);
void save_json(const Mlp& mlp, const std::filesystem::path& path);
[[nodiscard]] Mlp load_json(const std::filesystem::path& path);

}  // namespace gear::net
