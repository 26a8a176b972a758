#pragma once

// Tensor-level reverse-mode differentiation. Every Var op records one node
// on a Tape holding the op's value and a closure that pushes the output
// adjoint back to its parents. The geometry and loss kernels are templates
// over the tensor type, so the same source computes plain values (Tensor)
// and differentiable values (Var).

#include "gear/net.hpp"
#include "gear/tensor.hpp"

#include <functional>
#include <string_view>
#include <vector>

namespace gear::ad {

class Tape;

class Var {
public:
    Var() = default;

    [[nodiscard]] const Tensor& value() const;
    [[nodiscard]] Tape* tape() const noexcept { return tape_; }
    [[nodiscard]] std::size_t id() const noexcept { return id_; }
    [[nodiscard]] const Shape& shape() const { return value().shape(); }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    /// Leaf that receives a gradient.
    [[nodiscard]] Var variable(Tensor value);
    /// Leaf that never receives a gradient.
    [[nodiscard]] Var constant(Tensor value);
    /// Interior node. `backward` is skipped when no parent needs a gradient.
    [[nodiscard]] Var record(Tensor value, std::initializer_list<Var> parents, Backward backward);

    /// Seeds d(root)/d(root) = 1 for a one-element root and runs all closures
    /// in reverse creation order.
    void backward(const Var& root);

    [[nodiscard]] const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    /// Adjoint buffer of node `id`, zero-initialized on first use.
    [[nodiscard]] Tensor& grad_buffer(std::size_t id);
    [[nodiscard]] bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }
    /// Gradient of the last backward() root with respect to `v` (zeros when unreached).
    [[nodiscard]] Tensor grad(const Var& v) const;

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        Backward backward;
    };
    std::vector<Node> nodes_;
};

[[nodiscard]] Var contract(const Var& a, const Var& b, std::string_view spec);
[[nodiscard]] Var contract(const Var& a, std::string_view spec);

[[nodiscard]] Var operator+(const Var& a, const Var& b);
[[nodiscard]] Var operator-(const Var& a, const Var& b);
[[nodiscard]] Var operator*(const Var& a, const Var& b);
[[nodiscard]] Var operator*(const Var& a, double s);
[[nodiscard]] Var operator*(double s, const Var& a);
[[nodiscard]] Var operator-(const Var& a);

[[nodiscard]] Var activation_eval(net::ActivationKind act, const Var& u, int order);
[[nodiscard]] Var clip(const Var& a, double lo, double hi);
[[nodiscard]] Var sum_all(const Var& a);
[[nodiscard]] Var invert_batched(const Var& g, double ridge = 0.0);
[[nodiscard]] Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
[[nodiscard]] Var symmetrize_trailing(const Var& a, std::size_t arity);

[[nodiscard]] inline const Tensor& value_of(const Var& v) { return v.value(); }
/// Constant on the same tape as `like`.
[[nodiscard]] Var lift(const Var& like, Tensor constant);

}  // namespace gear::ad
