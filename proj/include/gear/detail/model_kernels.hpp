#pragma once

// Loss kernels of the GEAR model, templated over Tensor / ad::Var like
// gear/detail/kernels.hpp.

#include "gear/detail/kernels.hpp"
#include "gear/model.hpp"

#include <functional>
#include <optional>

namespace gear::model::kernels {

using gear::kernels::NetOf;

template <class T>
struct PipelineOf {
    NetOf<T> embed, encoder, transfer, inverse, head;
};

template <class T>
struct ModelOf {
    PipelineOf<T> source, target;
};

[[nodiscard]] inline PipelineOf<Tensor> pipeline_of(const TaskPipeline& p) {
    using gear::kernels::net_of;
    return {net_of(p.embed), net_of(p.encoder), net_of(p.transfer), net_of(p.inverse), net_of(p.head)};
}

[[nodiscard]] inline ModelOf<Tensor> model_of(const GearModel& m) {
    return {pipeline_of(m.source), pipeline_of(m.target)};
}

/// Inverted-dropout mask of shape (rows, width): entries 0 or 1/(1-p).
using DropoutFn = std::function<Tensor(std::size_t rows, std::size_t width)>;

/// Forward pass that masks hidden outputs when `drop` is set.
template <class T>
[[nodiscard]] T run(const NetOf<T>& net, const T& x, const DropoutFn* drop) {
    if (drop == nullptr || net.size() < 2) return gear::kernels::forward(net, x);
    std::vector<Tensor> masks;
    const std::size_t rows = gear::kernels::rows_of(x);
    for (std::size_t n = 0; n + 1 < net.size(); ++n) masks.push_back((*drop)(rows, value_of(net[n].w).extent(0)));
    return gear::kernels::forward(net, x, &masks);
}

template <class T>
struct RecordOf {
    T z_t, zp_t, zhat_t, yhat_t;
    std::optional<T> z_s, zp_s, zhat_s, yhat_st;
};

/// Dropout touches transfer, inverse and head only.
template <class T>
[[nodiscard]] RecordOf<T> forward_pair(const PipelineOf<T>& tgt, const PipelineOf<T>* src, const T& x,
                                       const DropoutFn* drop) {
    RecordOf<T> r;
    r.z_t = run(tgt.encoder, run(tgt.embed, x, nullptr), nullptr);
    r.zp_t = run(tgt.transfer, r.z_t, drop);
    r.zhat_t = run(tgt.inverse, r.zp_t, drop);
    r.yhat_t = run(tgt.head, r.z_t, drop);
    if (src != nullptr) {
        r.z_s = run(src->encoder, run(src->embed, x, nullptr), nullptr);
        r.zp_s = run(src->transfer, *r.z_s, drop);
        r.zhat_s = run(src->inverse, *r.zp_s, drop);
        r.yhat_st = run(tgt.head, run(tgt.inverse, *r.zp_s, drop), drop);
    }
    return r;
}

/// Mean over every entry.
template <class T>
[[nodiscard]] T mse(const T& a, const T& b) {
    const T d = a - b;
    return sum_all(d * d) * (1.0 / static_cast<double>(value_of(d).size()));
}

/// Mean over rows with mask 1 of (pred - y)²; pred is (rows, 1).
template <class T>
[[nodiscard]] T labelled_mse(const T& pred, const Tensor& y, const Tensor& mask, std::size_t count) {
    if (count == 0) return lift(pred, Tensor{});
    const T d = contract(pred, "Bi->B") - lift(pred, y);
    return sum_all(d * d * lift(pred, mask)) * (1.0 / static_cast<double>(count));
}

/// Σ_k MSE(I, AᵀA) + MSE(I, BᵀB) with A = J_fwd·J_inv, B = J_inv·J_fwd, the
/// flat point advancing by one round trip per k.
template <class T>
[[nodiscard]] T round_trip_penalty(const PipelineOf<T>& p, const T& zp, int k_loops) {
    const Shape& s = value_of(zp).shape();
    const Tensor eye = Tensor::identity_batch(s[0], s[1]);
    T flat = zp;
    std::optional<T> acc;
    for (int k = 0; k < k_loops; ++k) {
        const auto ji = gear::kernels::propagate(p.inverse, flat, 1);
        const auto jf = gear::kernels::propagate(p.transfer, ji.value, 1);
        const T a = contract(jf.j, ji.j, "Bij,Bjk->Bik");
        const T b = contract(ji.j, jf.j, "Bij,Bjk->Bik");
        const T term = mse(contract(a, a, "Bki,Bkj->Bij"), lift(a, eye)) + mse(contract(b, b, "Bki,Bkj->Bij"), lift(b, eye));
        acc = acc.has_value() ? *acc + term : term;
        flat = jf.value;
    }
    return *acc;
}

template <class T>
[[nodiscard]] T ricci_scalars(const PipelineOf<T>& p, const T& z, geometry::InverseMode mode, double ridge) {
    try {
        return gear::kernels::curvature(p.transfer, p.inverse, z, mode, ridge).scalar;
    } catch (const SingularityError&) {
        if (mode != geometry::InverseMode::exact) throw;
        return gear::kernels::curvature(p.transfer, p.inverse, z, mode, std::max(1e-8, 10.0 * ridge)).scalar;
    }
}

template <class T>
[[nodiscard]] T curvature_penalty(const PipelineOf<T>& src, const PipelineOf<T>& tgt, const T& z_s, const T& z_t,
                                  geometry::InverseMode mode, double ridge, double limit) {
    const T rs = clip(ricci_scalars(src, z_s, mode, ridge), -limit, limit);
    const T rt = clip(ricci_scalars(tgt, z_t, mode, ridge), -limit, limit);
    return mse(rs, rt);
}

template <class T>
struct PartsOf {
    T reg, autoencoder, cons, map, metric, curv;
    std::size_t labelled_rows = 0;
};

/// Every loss component of one batch. Disabled components are constant zeros
/// and their inputs are never computed.
template <class T>
[[nodiscard]] PartsOf<T> loss_parts(const ModelOf<T>& m, const PairBatch& batch, Direction dir,
                                    const LossOptions& o, const T& x, const DropoutFn* drop) {
    const bool forward_dir = dir == Direction::source_to_target;
    const PipelineOf<T>& tgt = forward_dir ? m.target : m.source;
    const PipelineOf<T>& src = forward_dir ? m.source : m.target;
    const bool coupled = !o.single_task;
    const RecordOf<T> r = forward_pair(tgt, coupled ? &src : nullptr, x, drop);

    std::size_t labelled = 0;
    for (double v : batch.mask_t.data()) labelled += v != 0.0 ? 1 : 0;

    const T zero = lift(x, Tensor{});
    PartsOf<T> p{zero, zero, zero, zero, zero, zero, labelled};
    p.reg = labelled_mse(r.yhat_t, batch.y_t, batch.mask_t, labelled);
    p.autoencoder = mse(r.z_t, r.zhat_t);
    if (!coupled) return p;

    p.autoencoder = p.autoencoder + mse(*r.z_s, *r.zhat_s);
    if (o.enable_cons) p.cons = mse(*r.zp_s, r.zp_t);
    if (o.enable_map) p.map = labelled_mse(*r.yhat_st, batch.y_t, batch.mask_t, labelled);

    const std::size_t g = std::min(o.geometry_rows, batch.rows());
    if (g == 0) return p;
    if (o.enable_metric) {
        p.metric = round_trip_penalty(src, slice_rows(*r.zp_s, 0, g), o.k_loops) +
                   round_trip_penalty(tgt, slice_rows(r.zp_t, 0, g), o.k_loops);
    }
    if (o.enable_curv) {
        p.curv = curvature_penalty(src, tgt, slice_rows(*r.z_s, 0, g), slice_rows(r.z_t, 0, g), o.curvature_mode,
                                   o.ridge, o.curvature_clip);
    }
    return p;
}

template <class T>
[[nodiscard]] T weighted_total(const PartsOf<T>& p, const LossWeights& w) {
    return p.reg + p.autoencoder * w.alpha + p.cons * w.beta + p.map * w.gamma + p.metric * w.delta +
           p.curv * w.epsilon;
}

}  // namespace gear::model::kernels
