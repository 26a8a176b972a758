#include "gear/model.hpp"

#include "gear/detail/model_kernels.hpp"

#include <cmath>
#include <random>

namespace gear::model {
namespace {

std::vector<std::size_t> chain(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
    std::vector<std::size_t> sizes{in};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(out);
    return sizes;
}

// Small-signal start: the first layer shrinks inputs by `shrink`, SiLU acts
// as u/2 + u²/4 there, middle layers use 2I and the final linear layer
// scales back up. The map is I + noise to first order and its curvature is
// proportional to `shrink`.
net::Mlp near_identity(std::size_t dim, std::size_t silu_layers, std::mt19937_64& rng) {
    constexpr double shrink = 0.1;
    const double amp = 0.3 / std::sqrt(static_cast<double>(dim));
    std::uniform_real_distribution<double> noise(-amp, amp);
    std::vector<net::DenseLayer> layers;
    for (std::size_t n = 0; n <= silu_layers; ++n) {
        const bool last = n == silu_layers;
        const double diag = last ? 2.0 / shrink : (n == 0 ? shrink : 2.0);
        Tensor w = Tensor::identity(dim);
        for (double& v : w.data()) v += noise(rng);
        w = w * diag;
        layers.push_back({std::move(w), Tensor(Shape{dim}),
                          last ? net::ActivationKind::linear : net::ActivationKind::silu});
    }
    return net::Mlp(std::move(layers));
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

}  // namespace

std::vector<const net::Mlp*> TaskPipeline::networks() const { return {&embed, &encoder, &transfer, &inverse, &head}; }
std::vector<net::Mlp*> TaskPipeline::networks() { return {&embed, &encoder, &transfer, &inverse, &head}; }

void GearModel::validate() const {
    for (const TaskPipeline* p : {&source, &target}) {
        require(p->embed.output_dim() == p->encoder.input_dim(), "embedding and encoder widths differ");
        const std::size_t n = p->latent_dim();
        require(p->transfer.constant_width() && p->transfer.input_dim() == n,
                "transfer network must be constant-width at the latent size");
        require(p->inverse.constant_width() && p->inverse.input_dim() == n,
                "inverse network must be constant-width at the latent size");
        require(p->head.input_dim() == n && p->head.output_dim() == 1, "head must map the latent to one value");
    }
    require(source.latent_dim() == target.latent_dim(), "source and target latent widths differ");
    require(source.feature_dim() == target.feature_dim(), "source and target feature widths differ");
}

std::size_t GearModel::parameter_count() const {
    std::size_t n = 0;
    for (const TaskPipeline* p : {&source, &target}) {
        for (const net::Mlp* m : p->networks()) n += m->parameter_count();
    }
    return n;
}

TaskPipeline make_pipeline(const ArchitectureSpec& spec, std::uint64_t seed) {
    using net::ActivationKind;
    std::mt19937_64 rng(seed);
    auto next = [&rng] { return static_cast<std::uint64_t>(rng()); };
    TaskPipeline p;
    p.embed = net::init_params({chain(spec.features, spec.embed_hidden, spec.embedding), ActivationKind::silu,
                                std::nullopt, next()});
    p.encoder = net::init_params({chain(spec.embedding, spec.encoder_hidden, spec.latent), ActivationKind::silu,
                                  ActivationKind::linear, next()});
    p.transfer = near_identity(spec.latent, spec.transfer_layers, rng);
    p.inverse = near_identity(spec.latent, spec.transfer_layers, rng);
    p.head = net::init_params(
        {chain(spec.latent, spec.head_hidden, 1), ActivationKind::silu, ActivationKind::linear, next()});
    return p;
}

GearModel make_model(const ArchitectureSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::uint64_t s1 = rng();
    const std::uint64_t s2 = rng();
    GearModel m{make_pipeline(spec, s1), make_pipeline(spec, s2), {}};
    m.validate();
    return m;
}

PairBatch PairBatch::target_only(Tensor x, Tensor y_t) {
    const std::size_t n = x.extent(0);
    PairBatch b{std::move(x), std::move(y_t), Tensor(Shape{n}, 1.0), Tensor(Shape{n}), Tensor(Shape{n})};
    b.validate();
    return b;
}

void PairBatch::validate() const {
    if (x.rank() != 2) throw ShapeError("batch features must be (rows, features)");
    const Shape rows{x.extent(0)};
    for (const Tensor* t : {&y_t, &mask_t, &y_s, &mask_s}) {
        if (t->shape() != rows) throw ShapeError("batch label arrays must have one entry per row");
    }
    for (std::size_t i = 0; i < x.extent(0); ++i) {
        if (mask_t[i] == 0.0 && mask_s[i] == 0.0) {
            throw ShapeError("batch row " + std::to_string(i) + " carries no label");
        }
    }
}

PairRecord forward_pair(const GearModel& model, const PairBatch& batch, Direction direction) {
    model.validate();
    if (batch.x.rank() != 2 || batch.x.extent(1) != model.target.feature_dim()) {
        throw ShapeError("batch features " + shape_string(batch.x.shape()) + " do not match embedding input " +
                         std::to_string(model.target.feature_dim()));
    }
    const auto m = kernels::model_of(model);
    const bool fwd = direction == Direction::source_to_target;
    const auto r = kernels::forward_pair(fwd ? m.target : m.source, fwd ? &m.source : &m.target, batch.x, nullptr);
    return {r.z_t, r.zp_t, r.zhat_t, r.yhat_t, *r.z_s, *r.zp_s, *r.zhat_s, *r.yhat_st};
}

LossBreakdown base_losses(const PairRecord& r, const PairBatch& batch) {
    std::size_t labelled = 0;
    for (double v : batch.mask_t.data()) labelled += v != 0.0 ? 1 : 0;
    LossBreakdown out;
    out.labelled_rows = labelled;
    out.reg = kernels::labelled_mse(r.yhat_t, batch.y_t, batch.mask_t, labelled).item();
    out.autoencoder = (kernels::mse(r.z_t, r.zhat_t) + kernels::mse(r.z_s, r.zhat_s)).item();
    out.cons = kernels::mse(r.zp_s, r.zp_t).item();
    out.map = kernels::labelled_mse(r.yhat_st, batch.y_t, batch.mask_t, labelled).item();
    return out;
}

double metric_loss(const TaskPipeline& source, const TaskPipeline& target, const Tensor& zp_s, const Tensor& zp_t,
                   int k_loops) {
    if (k_loops < 1) throw SpecError("metric loss needs at least one round trip");
    return (kernels::round_trip_penalty(kernels::pipeline_of(source), zp_s, k_loops) +
            kernels::round_trip_penalty(kernels::pipeline_of(target), zp_t, k_loops))
        .item();
}

double curvature_loss(const TaskPipeline& source, const TaskPipeline& target, const Tensor& z_s, const Tensor& z_t,
                      geometry::InverseMode mode) {
    const LossOptions defaults;
    return kernels::curvature_penalty(kernels::pipeline_of(source), kernels::pipeline_of(target), z_s, z_t, mode,
                                      mode == geometry::InverseMode::exact ? 0.0 : defaults.ridge,
                                      defaults.curvature_clip)
        .item();
}

LossBreakdown total_loss(LossBreakdown p, const LossWeights& w) {
    const std::pair<const char*, double> parts[] = {{"reg", p.reg},   {"autoencoder", p.autoencoder},
                                                    {"cons", p.cons}, {"map", p.map},
                                                    {"metric", p.metric}, {"curv", p.curv}};
    for (const auto& [name, v] : parts) {
        if (!std::isfinite(v)) throw TrainingError("loss component is not finite", name);
    }
    p.total = p.reg + w.alpha * p.autoencoder + w.beta * p.cons + w.gamma * p.map + w.delta * p.metric +
              w.epsilon * p.curv;
    return p;
}

LossBreakdown evaluate(const GearModel& model, const PairBatch& batch, Direction direction, const LossOptions& options) {
    const auto m = kernels::model_of(model);
    const auto p = kernels::loss_parts(m, batch, direction, options, batch.x, nullptr);
    LossBreakdown out{p.reg.item(), p.autoencoder.item(), p.cons.item(), p.map.item(), p.metric.item(),
                      p.curv.item(), 0.0, p.labelled_rows};
    return total_loss(out, model.weights);
}

nlohmann::json to_json(const GearModel& model) {
    auto pipe = [](const TaskPipeline& p) {
        return nlohmann::json{{"embed", net::to_json(p.embed)},       {"encoder", net::to_json(p.encoder)},
                              {"transfer", net::to_json(p.transfer)}, {"inverse", net::to_json(p.inverse)},
                              {"head", net::to_json(p.head)}};
    };
    const auto& w = model.weights;
    return {{"source", pipe(model.source)},
            {"target", pipe(model.target)},
            {"weights",
             {{"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma}, {"delta", w.delta}, {"epsilon", w.epsilon}}}};
}

GearModel model_from_json(const nlohmann::json& doc) {
    auto pipe = [](const nlohmann::json& j) {
        return TaskPipeline{net::mlp_from_json(j.at("embed")), net::mlp_from_json(j.at("encoder")),
                            net::mlp_from_json(j.at("transfer")), net::mlp_from_json(j.at("inverse")),
                            net::mlp_from_json(j.at("head"))};
    };
    const auto& w = doc.at("weights");
    GearModel m{pipe(doc.at("source")), pipe(doc.at("target")),
                {w.at("alpha").get<double>(), w.at("beta").get<double>(), w.at("gamma").get<double>(),
                 w.at("delta").get<double>(), w.at("epsilon").get<double>()}};
    m.validate();
    return m;
}

}  // namespace gear::model
