#pragma once

// Batched geometry and network kernels, templated over the tensor type.
// T is either gear::Tensor (plain values) or gear::ad::Var (taped values);
// both expose contract, +, -, *, activation_eval, clip, sum_all,
// invert_batched, slice_rows, symmetrize_trailing, value_of and lift.
// Every tensor carries a leading batch axis labelled B.

#include "gear/net.hpp"
#include "gear/tensor.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace gear::geometry {

enum class InverseMode { exact, learned };

namespace detail {
void count_curvature_points(std::uint64_t n);
}  // namespace detail

}  // namespace gear::geometry

namespace gear::kernels {

using net::ActivationKind;

template <class T>
struct LayerOf {
    T w;  // (out, in)
    T b;  // (out)
    ActivationKind act = ActivationKind::silu;
};

template <class T>
using NetOf = std::vector<LayerOf<T>>;

[[nodiscard]] inline NetOf<Tensor> net_of(const net::Mlp& mlp) {
    NetOf<Tensor> out;
    out.reserve(mlp.depth());
    for (const auto& l : mlp.layers()) out.push_back({l.w, l.b, l.act});
    return out;
}

template <class T>
[[nodiscard]] std::size_t rows_of(const T& x) {
    return value_of(x).extent(0);
}

/// (B,in) -> (B,out) pre-activation W x + b.
template <class T>
[[nodiscard]] T affine(const LayerOf<T>& l, const T& x) {
    const T ones = lift(x, Tensor(Shape{rows_of(x)}, 1.0));
    return contract(x, l.w, "Bj,ij->Bi") + contract(ones, l.b, "B,i->Bi");
}

/// Row-wise forward pass. `masks`, when given, holds one (B,width) multiplier
/// per hidden layer output (the final output is never masked).
template <class T>
[[nodiscard]] T forward(const NetOf<T>& net, const T& x, const std::vector<Tensor>* masks = nullptr) {
    T cur = x;
    for (std::size_t n = 0; n < net.size(); ++n) {
        cur = activation_eval(net[n].act, affine(net[n], cur), 0);
        if (masks != nullptr && n + 1 < net.size()) cur = cur * lift(cur, (*masks)[n]);
    }
    return cur;
}

/// Derivative blocks of one layer x' = f(W x + b) at a batch of inputs:
/// jl(B,i,j) = f'(u_i) W_ij, hl(B,i,j,k) = f''(u_i) W_ij W_ik,
/// tl(B,i,j,k,l) = f'''(u_i) W_ij W_ik W_il. Blocks of order ≥ 2 are absent
/// for linear layers.
template <class T>
struct LayerBlocksOf {
    T value;
    T jl;
    std::optional<T> hl;
    std::optional<T> tl;
};

template <class T>
[[nodiscard]] LayerBlocksOf<T> layer_blocks(const LayerOf<T>& l, const T& x, int order) {
    const T u = affine(l, x);
    LayerBlocksOf<T> out{activation_eval(l.act, u, 0), contract(activation_eval(l.act, u, 1), l.w, "Bi,ij->Bij"),
                         std::nullopt, std::nullopt};
    if (order < 2 || l.act == ActivationKind::linear) return out;
    const T ww = contract(l.w, l.w, "ij,ik->ijk");
    out.hl = contract(activation_eval(l.act, u, 2), ww, "Bi,ijk->Bijk");
    if (order < 3 || l.act == ActivationKind::quadratic) return out;
    const T www = symmetrize_trailing(contract(ww, l.w, "ijk,il->ijkl"), 3);
    out.tl = contract(activation_eval(l.act, u, 3), www, "Bi,ijkl->Bijkl");
    return out;
}

/// Output value and derivatives (J, H, T3) of a network at a batch of points.
template <class T>
struct JetOf {
    T value;
    T j;   // (B,i,a)       ∂x'^i/∂x^a
    T h;   // (B,i,a,c)     ∂²x'^i/∂x^a∂x^c
    T t3;  // (B,i,a,c,d)   ∂³x'^i/∂x^a∂x^c∂x^d
};

namespace detail {
template <class T>
void accumulate(std::optional<T>& acc, const T& term) {
    acc = acc.has_value() ? *acc + term : term;
}
}  // namespace detail

/// Layer-by-layer chain rule up to `order` (1..3):
///   J ← JL·J
///   H ← JL·H + HL(J,J)
///   T ← JL·T + HL(J,H) + HL(H,J) permutations + TL(J,J,J)
/// H and T3 are re-symmetrized after every layer so they are exactly
/// symmetric in their differentiation indices. Orders not requested are
/// returned as zeros.
template <class T>
[[nodiscard]] JetOf<T> propagate(const NetOf<T>& net, const T& x, int order) {
    if (net.empty()) throw SpecError("cannot differentiate an empty network");
    std::optional<T> value;
    std::optional<T> j;
    std::optional<T> h;
    std::optional<T> t3;
    for (const auto& l : net) {
        const T& in = value.has_value() ? *value : x;
        LayerBlocksOf<T> blk = layer_blocks(l, in, order);
        if (!j.has_value()) {
            j = blk.jl;
            h = blk.hl;
            t3 = blk.tl;
            value = blk.value;
            continue;
        }
        std::optional<T> t_next;
        std::optional<T> h_next;
        std::optional<T> x1;  // HL(J, ·)
        if (blk.hl.has_value()) x1 = contract(*blk.hl, *j, "Bijk,Bja->Biak");
        if (order >= 3) {
            if (t3.has_value()) detail::accumulate(t_next, contract(blk.jl, *t3, "Bij,Bjacd->Biacd"));
            if (x1.has_value() && h.has_value()) {
                const T y = contract(*x1, *h, "Biak,Bkcd->Biacd");
                detail::accumulate(t_next, (y + contract(y, "Bicad->Biacd")) + contract(y, "Bidac->Biacd"));
            }
            if (blk.tl.has_value()) {
                const T z1 = contract(*blk.tl, *j, "Bijkl,Bja->Biakl");
                const T z2 = contract(z1, *j, "Biakl,Bkc->Biacl");
                detail::accumulate(t_next, contract(z2, *j, "Biacl,Bld->Biacd"));
            }
            if (t_next.has_value()) t_next = symmetrize_trailing(*t_next, 3);
        }
        if (order >= 2) {
            if (h.has_value()) detail::accumulate(h_next, contract(blk.jl, *h, "Bij,Bjac->Biac"));
            if (x1.has_value()) detail::accumulate(h_next, contract(*x1, *j, "Biak,Bkc->Biac"));
            if (h_next.has_value()) h_next = symmetrize_trailing(*h_next, 2);
        }
        j = contract(blk.jl, *j, "Bij,Bja->Bia");
        h = std::move(h_next);
        t3 = std::move(t_next);
        value = std::move(blk.value);
    }
    const Shape& js = value_of(*j).shape();
    const std::size_t b = js[0];
    const std::size_t m = js[1];
    const std::size_t n = js[2];
    JetOf<T> out{*value, *j, h.has_value() ? *h : lift(x, Tensor(Shape{b, m, n, n})),
                 t3.has_value() ? *t3 : lift(x, Tensor(Shape{b, m, n, n, n}))};
    return out;
}

/// g_ij = J^m_i J^m_j (flat η = I).
template <class T>
[[nodiscard]] T pullback(const T& j) {
    return contract(j, j, "Bmi,Bmj->Bij");
}

/// ∂_k g_ij = H^m_ki J^m_j + H^m_kj J^m_i, laid out (B,k,i,j).
template <class T>
[[nodiscard]] T metric_derivative(const T& j, const T& h) {
    const T p = contract(h, j, "Bmki,Bmj->Bkij");
    return p + contract(p, "Bkji->Bkij");
}

/// ∂_j∂_k g_ml, laid out (B,j,k,m,l).
template <class T>
[[nodiscard]] T metric_second_derivative(const T& j, const T& h, const T& t3) {
    const T q = contract(t3, j, "Bojkm,Bol->Bjkml");
    const T r = contract(h, h, "Bokm,Bojl->Bjkml");
    return (q + contract(q, "Bjklm->Bjkml")) + (r + contract(r, "Bkjml->Bjkml"));
}

/// g^{ij} = J'^i_m J'^j_m from the Jacobian of the inverse map.
template <class T>
[[nodiscard]] T learned_inverse(const T& j_inv) {
    return contract(j_inv, j_inv, "Bim,Bjm->Bij");
}

/// ∂_j g^{im} = -g^{ia} ∂_j g_ab g^{bm}, laid out (B,j,i,m).
template <class T>
[[nodiscard]] T inverse_derivative(const T& g_inv, const T& dg) {
    const T x = contract(g_inv, dg, "Bia,Bjab->Bjib");
    return -contract(x, g_inv, "Bjib,Bbm->Bjim");
}

/// S_mjk = ∂_j g_mk + ∂_k g_mj - ∂_m g_kj, laid out (B,m,j,k).
template <class T>
[[nodiscard]] T christoffel_bracket(const T& dg) {
    return (contract(dg, "Bjmk->Bmjk") + contract(dg, "Bkmj->Bmjk")) - contract(dg, "Bmkj->Bmjk");
}

/// Γ^i_jk = ½ g^{im} S_mjk, laid out (B,i,j,k).
template <class T>
[[nodiscard]] T christoffel(const T& g_inv, const T& dg) {
    return contract(g_inv, christoffel_bracket(dg), "Bim,Bmjk->Bijk") * 0.5;
}

/// ∂_j Γ^i_kl = ½(∂_j g^{im} S_mkl + g^{im} U_jmkl), laid out (B,j,i,k,l), with
/// U_jmkl = ∂_j∂_k g_ml + ∂_j∂_l g_mk - ∂_j∂_m g_lk.
template <class T>
[[nodiscard]] T christoffel_derivative(const T& g_inv, const T& dg, const T& ddg, const T& dg_inv) {
    const T s = christoffel_bracket(dg);
    const T u = (contract(ddg, "Bjkml->Bjmkl") + contract(ddg, "Bjlmk->Bjmkl")) - contract(ddg, "Bjmlk->Bjmkl");
    return (contract(dg_inv, s, "Bjim,Bmkl->Bjikl") + contract(g_inv, u, "Bim,Bjmkl->Bjikl")) * 0.5;
}

/// R^λ_ρμν = ∂_μΓ^λ_νρ - ∂_νΓ^λ_μρ + Γ^λ_μσΓ^σ_νρ - Γ^λ_νσΓ^σ_μρ, laid out
/// (B,λ,ρ,μ,ν). Both differences are formed before adding so the result is
/// exactly antisymmetric in (μ,ν).
template <class T>
[[nodiscard]] T riemann(const T& gamma, const T& dgamma) {
    const T d = contract(dgamma, "Bmlnr->Blrmn") - contract(dgamma, "Bnlmr->Blrmn");
    const T p = contract(gamma, gamma, "Blms,Bsnr->Blrmn");
    return d + (p - contract(p, "Blrnm->Blrmn"));
}

/// Riemann with its first index lowered: R_λρμν = g_λa R^a_ρμν.
template <class T>
[[nodiscard]] T lower_first(const T& g, const T& r) {
    return contract(g, r, "Bla,Barmn->Blrmn");
}

/// R_ρν = g^{λμ} R_λρμν, laid out (B,ρ,ν).
template <class T>
[[nodiscard]] T ricci_tensor(const T& g, const T& g_inv, const T& r) {
    return contract(g_inv, lower_first(g, r), "Blm,Blrmn->Brn");
}

/// R = g^{ρν} R_ρν, one value per row.
template <class T>
[[nodiscard]] T ricci_scalar(const T& g_inv, const T& ric) {
    return contract(g_inv, ric, "Brn,Brn->B");
}

template <class T>
struct CurvatureOf {
    JetOf<T> jet;
    T g;
    T g_inv;
    T dg;
    T ddg;
    T dg_inv;
    T gamma;
    T dgamma;
    T riemann;
    T ricci;
    T scalar;  // (B)
};

/// Full pipeline at a batch of curved-frame points z (B,n). In learned mode
/// g^{-1} comes from the inverse network's Jacobian at z' = transfer(z) and
/// its derivative from the exact-inverse identity applied to that g^{-1}.
template <class T>
[[nodiscard]] CurvatureOf<T> curvature(const NetOf<T>& transfer, const NetOf<T>& inverse, const T& z,
                                       geometry::InverseMode mode, double ridge) {
    geometry::detail::count_curvature_points(rows_of(z));
    JetOf<T> jet = propagate(transfer, z, 3);
    T g = pullback(jet.j);
    T dg = metric_derivative(jet.j, jet.h);
    T ddg = metric_second_derivative(jet.j, jet.h, jet.t3);
    T g_inv = mode == geometry::InverseMode::exact ? invert_batched(g, ridge)
                                                   : learned_inverse(propagate(inverse, jet.value, 1).j);
    T dg_inv = inverse_derivative(g_inv, dg);
    T gamma = christoffel(g_inv, dg);
    T dgamma = christoffel_derivative(g_inv, dg, ddg, dg_inv);
    T r = riemann(gamma, dgamma);
    T ric = ricci_tensor(g, g_inv, r);
    T scalar = ricci_scalar(g_inv, ric);
    return {std::move(jet), std::move(g),      std::move(g_inv),  std::move(dg),
            std::move(ddg), std::move(dg_inv), std::move(gamma),  std::move(dgamma),
            std::move(r),   std::move(ric),    std::move(scalar)};
}

}  // namespace gear::kernels
