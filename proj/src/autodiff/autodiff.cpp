#include "gear/autodiff.hpp"

#include <memory>

namespace gear::ad {

const Tensor& Var::value() const {
    if (tape_ == nullptr) throw EvaluationError("Var is not attached to a tape");
    return tape_->value(id_);
}

Var Tape::variable(Tensor value) {
    nodes_.push_back({std::move(value), Tensor{}, false, true, {}});
    return {this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
    nodes_.push_back({std::move(value), Tensor{}, false, false, {}});
    return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
    bool needs = false;
    for (const auto& p : parents) {
        if (p.tape() != this) throw EvaluationError("operands live on different tapes");
        needs = needs || nodes_[p.id()].requires_grad;
    }
    nodes_.push_back({std::move(value), Tensor{}, false, needs, needs ? std::move(backward) : Backward{}});
    return {this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape());
        n.has_grad = true;
    }
    return n.grad;
}

void Tape::backward(const Var& root) {
    if (root.tape() != this) throw EvaluationError("root belongs to another tape");
    if (value(root.id()).size() != 1) {
        throw ShapeError("backward root must hold one value, got " + shape_string(value(root.id()).shape()));
    }
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor{};
    }
    grad_buffer(root.id())[0] = 1.0;
    for (std::size_t id = root.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (n.has_grad && n.backward) n.backward(*this, id);
    }
}

Tensor Tape::grad(const Var& v) const {
    const Node& n = nodes_[v.id()];
    return n.has_grad ? n.grad : Tensor(n.value.shape());
}

namespace {

Tape& tape_of(const Var& a) {
    if (a.tape() == nullptr) throw EvaluationError("Var is not attached to a tape");
    return *a.tape();
}

// grad_buffer of a parent, or nullptr when it takes no gradient.
double* sink(Tape& t, const Var& v) {
    return t.requires_grad(v.id()) ? t.grad_buffer(v.id()).data().data() : nullptr;
}

}  // namespace

Var contract(const Var& a, const Var& b, std::string_view spec) {
    Tape& t = tape_of(a);
    auto plan = std::make_shared<const ContractionPlan>(ContractionSpec::parse(spec), a.shape(), &b.shape());
    Tensor out(plan->output_shape());
    plan->forward(a.value().data().data(), b.value().data().data(), out.data().data());
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return t.record(std::move(out), {a, b}, [plan, a, b, ia, ib](Tape& tp, std::size_t self) {
        const double* g = tp.grad_buffer(self).data().data();
        if (double* ga = sink(tp, a)) plan->backward_a(g, tp.value(ib).data().data(), ga);
        if (double* gb = sink(tp, b)) plan->backward_b(g, tp.value(ia).data().data(), gb);
    });
}

Var contract(const Var& a, std::string_view spec) {
    Tape& t = tape_of(a);
    auto plan = std::make_shared<const ContractionPlan>(ContractionSpec::parse(spec), a.shape(), nullptr);
    Tensor out(plan->output_shape());
    plan->forward(a.value().data().data(), nullptr, out.data().data());
    return t.record(std::move(out), {a}, [plan, a](Tape& tp, std::size_t self) {
        if (double* ga = sink(tp, a)) plan->backward_a(tp.grad_buffer(self).data().data(), nullptr, ga);
    });
}

namespace {

// Elementwise binary op; `b` may be rank-0 (broadcast scalar).
Var binary(const Var& a, const Var& b, ElementwiseOp op) {
    Tape& t = tape_of(a);
    Tensor out = elementwise(a.value(), b.value(), op);
    return t.record(std::move(out), {a, b}, [a, b, op](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_buffer(self);
        const Tensor& va = tp.value(a.id());
        const Tensor& vb = tp.value(b.id());
        const bool scalar_b = vb.size() == 1 && va.size() != 1;
        const std::size_t n = g.size();
        if (double* ga = sink(tp, a)) {
            for (std::size_t i = 0; i < n; ++i) {
                const double bi = scalar_b ? vb[0] : vb[i];
                ga[i] += op == ElementwiseOp::mul ? g[i] * bi : g[i];
            }
        }
        if (double* gb = sink(tp, b)) {
            const double sign = op == ElementwiseOp::sub ? -1.0 : 1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = op == ElementwiseOp::mul ? g[i] * va[i] : sign * g[i];
                gb[scalar_b ? 0 : i] += d;
            }
        }
    });
}

}  // namespace

Var operator+(const Var& a, const Var& b) { return binary(a, b, ElementwiseOp::add); }
Var operator-(const Var& a, const Var& b) { return binary(a, b, ElementwiseOp::sub); }
Var operator*(const Var& a, const Var& b) { return binary(a, b, ElementwiseOp::mul); }

Var operator*(const Var& a, double s) {
    Tape& t = tape_of(a);
    return t.record(a.value() * s, {a}, [a, s](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_buffer(self);
        if (double* ga = sink(tp, a)) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
        }
    });
}

Var operator*(double s, const Var& a) { return a * s; }
Var operator-(const Var& a) { return a * -1.0; }

Var activation_eval(net::ActivationKind act, const Var& u, int order) {
    Tape& t = tape_of(u);
    Tensor out = net::activation_eval(act, u.value(), order);
    return t.record(std::move(out), {u}, [act, u, order](Tape& tp, std::size_t self) {
        if (double* gu = sink(tp, u)) {
            const Tensor& g = tp.grad_buffer(self);
            const Tensor d = net::activation_eval_extended(act, tp.value(u.id()), order + 1);
            for (std::size_t i = 0; i < g.size(); ++i) gu[i] += g[i] * d[i];
        }
    });
}

Var clip(const Var& a, double lo, double hi) {
    Tape& t = tape_of(a);
    return t.record(gear::clip(a.value(), lo, hi), {a}, [a, lo, hi](Tape& tp, std::size_t self) {
        if (double* ga = sink(tp, a)) {
            const Tensor& g = tp.grad_buffer(self);
            const Tensor& v = tp.value(a.id());
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (v[i] > lo && v[i] < hi) ga[i] += g[i];
            }
        }
    });
}

Var sum_all(const Var& a) {
    Tape& t = tape_of(a);
    return t.record(gear::sum_all(a.value()), {a}, [a](Tape& tp, std::size_t self) {
        if (double* ga = sink(tp, a)) {
            const double g = tp.grad_buffer(self)[0];
            const std::size_t n = tp.value(a.id()).size();
            for (std::size_t i = 0; i < n; ++i) ga[i] += g;
        }
    });
}

Var invert_batched(const Var& g, double ridge) {
    Tape& t = tape_of(g);
    return t.record(gear::invert_batched(g.value(), ridge), {g}, [g](Tape& tp, std::size_t self) {
        if (tp.requires_grad(g.id())) {
            // d(Y) = -Y dG Y, so dL/dG = -Yᵀ (dL/dY) Yᵀ per slice.
            const Tensor& y = tp.value(self);
            const Tensor& gy = tp.grad_buffer(self);
            const Tensor left = contract(y, gy, "Bji,Bjk->Bik");
            const Tensor full = contract(left, y, "Bik,Blk->Bil");
            double* gg = sink(tp, g);
            for (std::size_t i = 0; i < full.size(); ++i) gg[i] -= full[i];
        }
    });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
    Tape& t = tape_of(a);
    Tensor out = gear::slice_rows(a.value(), begin, count);
    const std::size_t offset = begin * (a.value().size() / a.value().extent(0));
    return t.record(std::move(out), {a}, [a, offset](Tape& tp, std::size_t self) {
        if (double* ga = sink(tp, a)) {
            const Tensor& g = tp.grad_buffer(self);
            for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
        }
    });
}

Var symmetrize_trailing(const Var& a, std::size_t arity) {
    Tape& t = tape_of(a);
    auto src = std::make_shared<const std::vector<std::size_t>>(symmetric_source_map(a.shape(), arity));
    Tensor out(a.shape());
    const Tensor& v = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[(*src)[i]];
    return t.record(std::move(out), {a}, [a, src](Tape& tp, std::size_t self) {
        if (double* ga = sink(tp, a)) {
            const Tensor& g = tp.grad_buffer(self);
            for (std::size_t i = 0; i < g.size(); ++i) ga[(*src)[i]] += g[i];
        }
    });
}

Var lift(const Var& like, Tensor constant) { return tape_of(like).constant(std::move(constant)); }

}  // namespace gear::ad
