#include "gear/train.hpp"

#include "gear/autodiff.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace gear::train {
namespace {

using model::Direction;
using model::GearModel;
using model::LossBreakdown;
using model::PairBatch;
namespace mk = model::kernels;

template <class T>
mk::ModelOf<T> bind_parameters(const GearModel& m, const std::vector<T>& p) {
    mk::ModelOf<T> out;
    std::size_t k = 0;
    auto pipe = [&](const model::TaskPipeline& src, mk::PipelineOf<T>& dst) {
        mk::NetOf<T>* nets[] = {&dst.embed, &dst.encoder, &dst.transfer, &dst.inverse, &dst.head};
        const auto srcs = src.networks();
        for (std::size_t n = 0; n < srcs.size(); ++n) {
            for (const auto& l : srcs[n]->layers()) {
                nets[n]->push_back({p[k], p[k + 1], l.act});
                k += 2;
            }
        }
    };
    pipe(m.source, out.source);
    pipe(m.target, out.target);
    return out;
}

constexpr const char* component_names[] = {"reg", "autoencoder", "cons", "map", "metric", "curv"};

template <class T>
std::vector<const T*> part_list(const mk::PartsOf<T>& p) {
    return {&p.reg, &p.autoencoder, &p.cons, &p.map, &p.metric, &p.curv};
}

LossBreakdown breakdown(const mk::PartsOf<Tensor>& p, const model::LossWeights& w) {
    LossBreakdown out{p.reg.item(), p.autoencoder.item(), p.cons.item(), p.map.item(), p.metric.item(),
                      p.curv.item(), 0.0, p.labelled_rows};
    return model::total_loss(out, w);
}

bool all_finite(const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

double total_at(const GearModel& m, const PairBatch& batch, const TrainConfig& cfg, Direction dir) {
    const auto parts = mk::loss_parts(mk::model_of(m), batch, dir, cfg.loss_options(), batch.x, nullptr);
    return mk::weighted_total(parts, cfg.effective_weights()).item();
}

nlohmann::json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.values()}}; }

Tensor tensor_from_json(const nlohmann::json& j) {
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

nlohmann::json parts_json(const LossBreakdown& p) {
    return {{"reg", p.reg},       {"autoencoder", p.autoencoder}, {"cons", p.cons}, {"map", p.map},
            {"metric", p.metric}, {"curv", p.curv},               {"total", p.total}};
}

}  // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
    const std::size_t f = x.extent(1);
    Dataset out{Tensor(Shape{rows.size(), f}), Tensor(Shape{rows.size()})};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= this->rows()) throw ShapeError("row index " + std::to_string(rows[i]) + " out of range");
        for (std::size_t j = 0; j < f; ++j) out.x(i, j) = x(rows[i], j);
        out.y[i] = y[rows[i]];
    }
    return out;
}

Dataset Dataset::concat(const Dataset& other) const {
    if (other.rows() == 0) return *this;
    if (rows() == 0) return other;
    if (other.x.extent(1) != x.extent(1)) throw ShapeError("cannot join datasets of different feature widths");
    std::vector<double> xs = x.values();
    std::vector<double> ys = y.values();
    const auto ox = other.x.values();
    const auto oy = other.y.values();
    xs.insert(xs.end(), ox.begin(), ox.end());
    ys.insert(ys.end(), oy.begin(), oy.end());
    const std::size_t n = rows() + other.rows();
    return {Tensor(Shape{n, x.extent(1)}, std::move(xs)), Tensor(Shape{n}, std::move(ys))};
}

void Dataset::validate() const {
    if (x.rank() != 2) throw ShapeError("dataset features must be (rows, features)");
    if (y.shape() != Shape{x.extent(0)}) throw ShapeError("dataset needs one label per row");
}

std::vector<Tensor*> parameters(GearModel& model) {
    std::vector<Tensor*> out;
    for (model::TaskPipeline* p : {&model.source, &model.target}) {
        for (net::Mlp* m : p->networks()) {
            for (auto& l : m->layers()) {
                out.push_back(&l.w);
                out.push_back(&l.b);
            }
        }
    }
    return out;
}

std::vector<const Tensor*> parameters(const GearModel& model) {
    auto mut = parameters(const_cast<GearModel&>(model));
    return {mut.begin(), mut.end()};
}

double GradientSet::max_abs() const {
    double m = 0.0;
    for (const auto& g : grads) m = std::max(m, g.max_abs());
    return m;
}

OptimizerState OptimizerState::for_model(const GearModel& model, AdamWConfig hp) {
    OptimizerState s;
    s.hp = hp;
    for (const Tensor* p : parameters(model)) {
        s.m.emplace_back(p->shape());
        s.v.emplace_back(p->shape());
    }
    return s;
}

void TrainConfig::validate() const {
    if (epochs > 1'000'000) throw ConfigError("epochs out of range");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (folds == 0) throw ConfigError("fold count must be positive");
    if (k_loops < 1) throw ConfigError("K must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    const auto& w = weights;
    for (double v : {w.alpha, w.beta, w.gamma, w.delta, w.epsilon}) {
        if (!(v >= 0.0)) throw ConfigError("loss weights must be nonnegative");
    }
}

model::LossOptions TrainConfig::loss_options() const {
    model::LossOptions o;
    o.enable_cons = enable_cons;
    o.enable_map = enable_map;
    o.enable_metric = enable_metric;
    o.enable_curv = enable_curv;
    o.single_task = single_task;
    o.k_loops = k_loops;
    o.geometry_rows = geometry_rows;
    o.curvature_mode = curvature_mode;
    o.curvature_clip = curvature_clip;
    return o;
}

model::LossWeights TrainConfig::effective_weights() const {
    model::LossWeights w = weights;
    if (!enable_cons || single_task) w.beta = 0.0;
    if (!enable_map || single_task) w.gamma = 0.0;
    if (!enable_metric || single_task) w.delta = 0.0;
    if (!enable_curv || single_task) w.epsilon = 0.0;
    return w;
}

TrainConfig single_task_config(TrainConfig cfg) {
    cfg.single_task = true;
    return cfg;
}

GradientSet grad_total(const GearModel& model, const PairBatch& batch, const TrainConfig& cfg, Direction direction,
                       const mk::DropoutFn* dropout) {
    if (batch.rows() == 0) throw TrainingError("empty batch", "batch");
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Tensor* p : parameters(model)) vars.push_back(tape.variable(*p));
    const auto m = bind_parameters(model, vars);
    const ad::Var x = tape.constant(batch.x);
    const auto weights = cfg.effective_weights();
    const auto parts = mk::loss_parts(m, batch, direction, cfg.loss_options(), x, dropout);
    const ad::Var total = mk::weighted_total(parts, weights);

    const auto roots = part_list(parts);
    mk::PartsOf<Tensor> values{roots[0]->value(), roots[1]->value(), roots[2]->value(), roots[3]->value(),
                               roots[4]->value(), roots[5]->value(), parts.labelled_rows};
    GradientSet out;
    out.loss = breakdown(values, weights);

    tape.backward(total);
    bool finite = true;
    for (const auto& v : vars) {
        out.grads.push_back(tape.grad(v));
        finite = finite && all_finite(out.grads.back());
    }
    if (finite) return out;

    // Name the first component whose own gradient is non-finite.
    for (std::size_t c = 0; c < roots.size(); ++c) {
        tape.backward(*roots[c]);
        for (const auto& v : vars) {
            if (!all_finite(tape.grad(v))) throw TrainingError("gradient is not finite", component_names[c]);
        }
    }
    throw TrainingError("gradient is not finite", "total");
}

GradientSet fd_gradient(const GearModel& model, const PairBatch& batch, const TrainConfig& cfg, Direction direction,
                        double step) {
    GearModel work = model;
    auto params = parameters(work);
    GradientSet out;
    out.loss = breakdown(mk::loss_parts(mk::model_of(model), batch, direction, cfg.loss_options(), batch.x, nullptr),
                         cfg.effective_weights());
    for (Tensor* p : params) {
        Tensor g(p->shape());
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double keep = (*p)[i];
            double f[4];
            const double offsets[] = {2.0, 1.0, -1.0, -2.0};
            for (int k = 0; k < 4; ++k) {
                (*p)[i] = keep + offsets[k] * step;
                f[k] = total_at(work, batch, cfg, direction);
            }
            (*p)[i] = keep;
            g[i] = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * step);
        }
        out.grads.push_back(std::move(g));
    }
    return out;
}

void adamw_step(GearModel& model, const GradientSet& grads, OptimizerState& state) {
    auto params = parameters(model);
    if (grads.size() != params.size() || state.m.size() != params.size()) {
        throw ShapeError("gradient set does not match the model parameters");
    }
    const auto& hp = state.hp;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(hp.beta1, t);
    const double c2 = 1.0 - std::pow(hp.beta2, t);
    const double decay = 1.0 - hp.lr * hp.weight_decay;
    for (std::size_t k = state.first_trainable; k < params.size(); ++k) {
        auto p = params[k]->data();
        auto g = grads.grads[k].data();
        auto m = state.m[k].data();
        auto v = state.v[k].data();
        if (g.size() != p.size()) throw ShapeError("gradient " + std::to_string(k) + " has the wrong size");
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] *= decay;
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            p[i] -= hp.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + hp.eps);
        }
    }
}

Tensor predict(const model::TaskPipeline& pipeline, const Tensor& x) {
    const auto p = mk::pipeline_of(pipeline);
    const Tensor z = mk::run(p.encoder, mk::run(p.embed, x, nullptr), nullptr);
    return contract(mk::run(p.head, z, nullptr), "Bi->B");
}

double rmse(const Tensor& prediction, const Tensor& y) {
    if (prediction.shape() != y.shape()) throw ShapeError("prediction and label shapes differ");
    if (y.size() == 0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (prediction[i] - y[i]) * (prediction[i] - y[i]);
    return std::sqrt(s / static_cast<double>(y.size()));
}

TrainResult train(const GearModel& initial, const PairSplit& data, const TrainConfig& cfg, std::size_t fold) {
    cfg.validate();
    for (const Dataset* d : {&data.source.train, &data.source.validation, &data.target.train,
                             &data.target.validation}) {
        if (d->rows() > 0) d->validate();
    }
    if (data.target.train.rows() == 0) throw ConfigError("target training split is empty");

    const auto clock_start = std::chrono::steady_clock::now();
    GearModel cur = initial;
    cur.weights = cfg.effective_weights();
    OptimizerState state = OptimizerState::for_model(cur, cfg.optimizer);
    if (cfg.single_task) {
        for (const net::Mlp* m : cur.source.networks()) state.first_trainable += 2 * m->layers().size();
    }
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + fold);

    std::bernoulli_distribution keep(1.0 - cfg.dropout);
    const double scale = 1.0 / (1.0 - cfg.dropout);
    const mk::DropoutFn drop_fn = [&](std::size_t rows, std::size_t width) {
        Tensor mask(Shape{rows, width});
        for (double& v : mask.data()) v = keep(rng) ? scale : 0.0;
        return mask;
    };
    const mk::DropoutFn* drop = cfg.dropout > 0.0 ? &drop_fn : nullptr;

    const Dataset& val = data.target.validation;
    auto val_rmse = [&](const GearModel& m) { return val.rows() > 0 ? rmse(predict(m.target, val.x), val.y) : 0.0; };

    TrainResult result{cur, {}};
    FoldReport& rep = result.report;
    rep.fold = fold;
    rep.initial_val_rmse = val_rmse(cur);
    rep.best_val_rmse = rep.initial_val_rmse;
    rep.best_val_loss = rep.best_val_rmse * rep.best_val_rmse;

    struct Role {
        const Dataset* train;
        Direction dir;
        std::size_t cap;
    };
    std::vector<Role> roles;
    if (!cfg.single_task && data.source.train.rows() > 0) {
        roles.push_back({&data.source.train, Direction::target_to_source, cfg.max_source_batches});
    }
    roles.push_back({&data.target.train, Direction::source_to_target, 0});

    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs && !rep.aborted; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        std::size_t batches = 0;
        for (const Role& role : roles) {
            std::vector<std::size_t> order(role.train->rows());
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), rng);
            std::size_t n_batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
            if (role.cap > 0) n_batches = std::min(n_batches, role.cap);
            for (std::size_t b = 0; b < n_batches && !rep.aborted; ++b) {
                const auto first = order.begin() + static_cast<std::ptrdiff_t>(b * cfg.batch_size);
                const auto last = order.begin() +
                                  static_cast<std::ptrdiff_t>(std::min(order.size(), (b + 1) * cfg.batch_size));
                const Dataset part = role.train->subset({first, last});
                const auto batch = PairBatch::target_only(part.x, part.y);
                try {
                    const GradientSet g = grad_total(cur, batch, cfg, role.dir, drop);
                    adamw_step(cur, g, state);
                    const auto& l = g.loss;
                    rec.parts.reg += l.reg;
                    rec.parts.autoencoder += l.autoencoder;
                    rec.parts.cons += l.cons;
                    rec.parts.map += l.map;
                    rec.parts.metric += l.metric;
                    rec.parts.curv += l.curv;
                    rec.parts.total += l.total;
                    ++batches;
                } catch (const TrainingError& e) {
                    rep.aborted = true;
                    rep.abort_reason = std::string(e.what()) + " (" + e.component() + ")";
                } catch (const SingularityError& e) {
                    rep.aborted = true;
                    rep.abort_reason = std::string(e.what()) + " (curv)";
                }
            }
        }
        if (rep.aborted) break;
        const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(batches, 1));
        for (double* v : {&rec.parts.reg, &rec.parts.autoencoder, &rec.parts.cons, &rec.parts.map,
                          &rec.parts.metric, &rec.parts.curv, &rec.parts.total}) {
            *v *= inv;
        }
        rec.train_total = rec.parts.total;
        rec.val_rmse = val_rmse(cur);
        rec.val_loss = rec.val_rmse * rec.val_rmse;
        if (!std::isfinite(rec.val_rmse)) {
            rep.history.push_back(rec);
            rep.aborted = true;
            rep.abort_reason = "validation RMSE is not finite";
            break;
        }
        rep.history.push_back(rec);
        if (rep.best_epoch == 0 || rec.val_rmse < rep.best_val_rmse) {
            rep.best_val_rmse = rec.val_rmse;
            rep.best_val_loss = rec.val_loss;
            rep.best_epoch = epoch;
            result.model = cur;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
    return result;
}

std::vector<std::size_t> fold_rows(std::size_t rows, std::size_t folds, std::size_t fold, std::uint64_t seed) {
    if (folds < 2) throw ConfigError("cross-validation needs at least two folds");
    if (rows < folds) {
        throw ConfigError("dataset of " + std::to_string(rows) + " rows is smaller than " + std::to_string(folds) +
                          " folds");
    }
    if (fold >= folds) throw ConfigError("fold index out of range");
    std::vector<std::size_t> perm(rows);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> out(perm.begin() + static_cast<std::ptrdiff_t>(fold * rows / folds),
                                 perm.begin() + static_cast<std::ptrdiff_t>((fold + 1) * rows / folds));
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

TaskSplit split_task(const Dataset& d, const std::vector<std::size_t>& val_rows) {
    std::vector<bool> in_val(d.rows(), false);
    for (std::size_t r : val_rows) in_val[r] = true;
    std::vector<std::size_t> train_rows;
    for (std::size_t r = 0; r < d.rows(); ++r) {
        if (!in_val[r]) train_rows.push_back(r);
    }
    return {d.subset(train_rows), d.subset(val_rows)};
}

}  // namespace

PairSplit fold_split(const PairDatasets& data, std::size_t folds, std::size_t fold, std::uint64_t seed) {
    data.target.validate();
    PairSplit out;
    out.target = split_task(data.target, fold_rows(data.target.rows(), folds, fold, seed));
    if (data.source.rows() > 0) {
        data.source.validate();
        out.source = split_task(data.source, fold_rows(data.source.rows(), folds, fold, seed + 1));
    }
    return out;
}

CvReport summarize(std::vector<FoldReport> folds) {
    CvReport out;
    out.folds = std::move(folds);
    if (out.folds.empty()) return out;
    const double n = static_cast<double>(out.folds.size());
    for (const auto& f : out.folds) out.mean_rmse += f.best_val_rmse / n;
    double var = 0.0;
    for (const auto& f : out.folds) var += (f.best_val_rmse - out.mean_rmse) * (f.best_val_rmse - out.mean_rmse) / n;
    out.std_rmse = std::sqrt(var);
    return out;
}

CvReport run_cv(const PairDatasets& data, const TrainConfig& cfg) {
    cfg.validate();
    model::ArchitectureSpec arch = cfg.architecture;
    arch.features = data.target.x.extent(1);
    std::vector<FoldReport> reports;
    for (std::size_t f = 0; f < cfg.folds; ++f) {
        const PairSplit split = fold_split(data, cfg.folds, f, cfg.seed);
        reports.push_back(train(model::make_model(arch, cfg.seed), split, cfg, f).report);
    }
    return summarize(std::move(reports));
}

Corruption corrupt_labels(const TaskSplit& data, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("corruption fraction must lie in [0, 1]");
    const Dataset& test = data.validation;
    if (test.rows() == 0) throw ConfigError("corruption needs a nonempty test split");
    Corruption out{data, {}, 0.0, false};

    const auto ys = test.y.values();
    const double n = static_cast<double>(ys.size());
    const double mean = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double var = 0.0;
    for (double v : ys) var += (v - mean) * (v - mean) / n;
    out.threshold = std::sqrt(var);

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < ys.size(); ++i) {
        if (std::abs(ys[i]) > out.threshold) eligible.push_back(i);
    }
    if (eligible.empty()) {
        out.warning = true;
        return out;
    }
    const auto wanted = static_cast<std::size_t>(std::llround(fraction * n));
    const std::size_t count = std::min(wanted, eligible.size());
    if (count == 0) return out;

    std::mt19937_64 rng(seed);
    std::shuffle(eligible.begin(), eligible.end(), rng);
    out.indices.assign(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(out.indices.begin(), out.indices.end());

    Dataset injected = test.subset(out.indices);
    for (double& v : injected.y.data()) v = -v;
    out.data.train = data.train.rows() > 0 ? data.train.concat(injected) : injected;
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const GearModel& model, const OptimizerState& state) {
    nlohmann::json m = nlohmann::json::array();
    nlohmann::json v = nlohmann::json::array();
    for (const auto& t : state.m) m.push_back(tensor_json(t));
    for (const auto& t : state.v) v.push_back(tensor_json(t));
    const auto& hp = state.hp;
    const nlohmann::json doc{{"model", model::to_json(model)},
                             {"optimizer",
                              {{"step", state.step},
                               {"first_trainable", state.first_trainable},
                               {"lr", hp.lr},
                               {"beta1", hp.beta1},
                               {"beta2", hp.beta2},
                               {"eps", hp.eps},
                               {"weight_decay", hp.weight_decay},
                               {"m", std::move(m)},
                               {"v", std::move(v)}}}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

std::pair<GearModel, OptimizerState> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    const auto doc = nlohmann::json::parse(in);
    GearModel m = model::model_from_json(doc.at("model"));
    const auto& o = doc.at("optimizer");
    OptimizerState s;
    s.hp = {o.at("lr").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
            o.at("eps").get<double>(), o.at("weight_decay").get<double>()};
    s.step = o.at("step").get<std::uint64_t>();
    s.first_trainable = o.value("first_trainable", std::size_t{0});
    for (const auto& t : o.at("m")) s.m.push_back(tensor_from_json(t));
    for (const auto& t : o.at("v")) s.v.push_back(tensor_from_json(t));
    const auto params = parameters(m);
    if (s.m.size() != params.size() || s.v.size() != params.size()) {
        throw ShapeError("optimizer state does not match the model");
    }
    return {std::move(m), std::move(s)};
}

std::string history_jsonl(const FoldReport& report) {
    std::ostringstream out;
    for (const auto& r : report.history) {
        nlohmann::json line = parts_json(r.parts);
        line["epoch"] = r.epoch;
        line["train_total"] = r.train_total;
        line["val_rmse"] = r.val_rmse;
        line["val_loss"] = r.val_loss;
        out << line.dump() << '\n';
    }
    return out.str();
}

nlohmann::json to_json(const FoldReport& report) {
    nlohmann::json history = nlohmann::json::array();
    for (const auto& r : report.history) {
        history.push_back({{"epoch", r.epoch},
                           {"train_total", r.train_total},
                           {"val_rmse", r.val_rmse},
                           {"val_loss", r.val_loss},
                           {"parts", parts_json(r.parts)}});
    }
    return {{"fold", report.fold},
            {"initial_val_rmse", report.initial_val_rmse},
            {"best_val_rmse", report.best_val_rmse},
            {"best_val_loss", report.best_val_loss},
            {"best_epoch", report.best_epoch},
            {"aborted", report.aborted},
            {"abort_reason", report.abort_reason},
            {"history", std::move(history)}};
}

}  // namespace gear::train
