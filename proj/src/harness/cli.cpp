#include "gear/harness.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>

namespace gear::harness {
namespace {

using nlohmann::json;

void reject_unknown(const json& doc, std::initializer_list<const char*> keys, const std::string& where) {
    if (!doc.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [k, v] : doc.items()) {
        if (std::find_if(keys.begin(), keys.end(), [&](const char* s) { return k == s; }) == keys.end()) {
            throw ConfigError("unknown key '" + k + "' in " + where);
        }
    }
}

template <class T>
void read(const json& doc, const char* key, T& out, const std::string& where) {
    if (!doc.contains(key)) return;
    try {
        out = doc.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
    }
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

void write_json(const std::filesystem::path& path, const json& doc) { write_file(path, doc.dump(2) + "\n"); }

SyntheticPairSpec synthetic_from_json(const json& doc) {
    const std::string where = "synthetic";
    reject_unknown(doc,
                   {"features", "latent", "hidden", "noise_source", "noise_target", "n_source", "n_target",
                    "head_divergence", "seed"},
                   where);
    SyntheticPairSpec s;
    read(doc, "features", s.features, where);
    read(doc, "latent", s.latent, where);
    read(doc, "hidden", s.hidden, where);
    read(doc, "noise_source", s.noise_source, where);
    read(doc, "noise_target", s.noise_target, where);
    read(doc, "n_source", s.n_source, where);
    read(doc, "n_target", s.n_target, where);
    read(doc, "head_divergence", s.head_divergence, where);
    read(doc, "seed", s.seed, where);
    s.validate();
    return s;
}

/// One fold with per-split z-scoring when `normalize` is set.
struct FoldOutcome {
    train::FoldReport report;
    double label_std = 1.0;
    train::TrainResult result;
};

train::PairSplit normalized(const train::PairSplit& split, double& label_std) {
    train::PairSplit out = split;
    const auto nt = Normalizer::fit(split.target.train);
    out.target = {nt.apply(split.target.train), nt.apply(split.target.validation)};
    if (split.source.train.rows() > 0) {
        const auto ns = Normalizer::fit(split.source.train);
        out.source = {ns.apply(split.source.train), ns.apply(split.source.validation)};
    }
    label_std = nt.label_std;
    return out;
}

json cv_json(const train::CvReport& cv, double label_std) {
    json folds = json::array();
    for (const auto& f : cv.folds) folds.push_back(train::to_json(f));
    return {{"folds", std::move(folds)},
            {"mean_rmse", cv.mean_rmse},
            {"std_rmse", cv.std_rmse},
            {"mean_rmse_raw", cv.mean_rmse * label_std},
            {"std_rmse_raw", cv.std_rmse * label_std}};
}

struct Context {
    RunConfig cfg;
    train::PairDatasets data;
    bool normalize = false;
    json metadata = json::object();
};

std::pair<train::PairSplit, double> fold_data(const Context& ctx, std::size_t folds, std::size_t fold,
                                              std::uint64_t seed) {
    train::PairSplit split = train::fold_split(ctx.data, folds, fold, seed);
    double label_std = 1.0;
    if (ctx.normalize) split = normalized(split, label_std);
    return {std::move(split), label_std};
}

int run_train(Context& ctx) {
    const auto& tc = ctx.cfg.train;
    std::vector<train::FoldReport> gear_folds;
    std::vector<train::FoldReport> stl_folds;
    double label_std = 1.0;
    json wall = json::array();
    for (std::size_t f = 0; f < tc.folds; ++f) {
        auto [split, sd] = fold_data(ctx, tc.folds, f, tc.seed);
        label_std = sd;
        const auto init = model::make_model(tc.architecture, tc.seed);
        auto gear_run = train::train(init, split, tc, f);
        auto stl_run = train::train(init, split, train::single_task_config(tc), f);
        write_file(ctx.cfg.output_dir / ("history_gear_fold" + std::to_string(f) + ".jsonl"),
                   train::history_jsonl(gear_run.report));
        write_file(ctx.cfg.output_dir / ("history_stl_fold" + std::to_string(f) + ".jsonl"),
                   train::history_jsonl(stl_run.report));
        wall.push_back({{"fold", f}, {"gear_seconds", gear_run.report.wall_seconds},
                        {"stl_seconds", stl_run.report.wall_seconds}});
        gear_folds.push_back(std::move(gear_run.report));
        stl_folds.push_back(std::move(stl_run.report));
    }
    const auto gear_cv = train::summarize(std::move(gear_folds));
    const auto stl_cv = train::summarize(std::move(stl_folds));
    write_json(ctx.cfg.output_dir / "train_report.json",
               {{"mode", "train"}, {"gear", cv_json(gear_cv, label_std)}, {"stl", cv_json(stl_cv, label_std)}});
    ctx.metadata["fold_wall_seconds"] = std::move(wall);
    std::cout << "GEAR RMSE " << gear_cv.mean_rmse << " ± " << gear_cv.std_rmse << "; STL RMSE " << stl_cv.mean_rmse
              << " ± " << stl_cv.std_rmse << "\n";
    return 0;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n == 0 ? 0.0 : (n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]));
}

double min_val_loss(const train::FoldReport& r) {
    double m = r.initial_val_rmse * r.initial_val_rmse;
    for (const auto& e : r.history) m = std::min(m, e.val_loss);
    return m;
}

int run_ablate(Context& ctx) {
    struct Arm {
        const char* name;
        bool map;
        bool curv;
    };
    const Arm arms[] = {{"both_off", false, false}, {"map_only", true, false}, {"both_on", true, true}};
    std::map<std::string, std::vector<double>> losses;
    json seeds = json::array();
    for (std::size_t s = 0; s < ctx.cfg.ablate_seeds; ++s) {
        train::TrainConfig tc = ctx.cfg.train;
        tc.seed = ctx.cfg.train.seed + s;
        Context local = ctx;
        if (ctx.cfg.synthetic) {
            SyntheticPairSpec spec = *ctx.cfg.synthetic;
            spec.seed += s;
            local.data = generate_synthetic_pair(spec).data;
        }
        auto [split, sd] = fold_data(local, std::max<std::size_t>(tc.folds, 2), 0, tc.seed);
        (void)sd;
        const auto init = model::make_model(tc.architecture, tc.seed);
        json row{{"seed", tc.seed}};
        for (const Arm& a : arms) {
            train::TrainConfig arm = tc;
            arm.enable_map = a.map;
            arm.enable_curv = a.curv;
            const auto run = train::train(init, split, arm);
            write_file(ctx.cfg.output_dir / ("ablate_seed" + std::to_string(tc.seed) + "_" + a.name + ".jsonl"),
                       train::history_jsonl(run.report));
            const double loss = min_val_loss(run.report);
            losses[a.name].push_back(loss);
            row[a.name] = {{"min_val_loss", loss}, {"best_val_rmse", run.report.best_val_rmse}};
        }
        seeds.push_back(std::move(row));
    }
    const double on = median(losses["both_on"]);
    const double map_only = median(losses["map_only"]);
    const double off = median(losses["both_off"]);
    write_json(ctx.cfg.output_dir / "ablate_report.json",
               {{"mode", "ablate"},
                {"seeds", std::move(seeds)},
                {"median_min_val_loss", {{"both_on", on}, {"map_only", map_only}, {"both_off", off}}},
                {"both_on_le_map_only", on <= map_only},
                {"map_only_le_both_off", map_only <= off}});
    std::cout << "median min validation loss: both_on " << on << ", map_only " << map_only << ", both_off " << off
              << "\n";
    return 0;
}

int run_corrupt(Context& ctx) {
    const auto& tc = ctx.cfg.train;
    auto [split, label_std] = fold_data(ctx, std::max<std::size_t>(tc.folds, 2), 0, tc.seed);
    const auto corruption = train::corrupt_labels(split.target, ctx.cfg.corrupt_fraction, tc.seed);
    train::PairSplit corrupted = split;
    corrupted.target = corruption.data;
    const auto init = model::make_model(tc.architecture, tc.seed);
    const auto clean_run = train::train(init, split, tc);
    const auto dirty_run = train::train(init, corrupted, tc);

    auto clean_rmse_on = [&](const model::GearModel& m) {
        if (corruption.indices.empty()) return 0.0;
        const auto rows = split.target.validation.subset(corruption.indices);
        return train::rmse(train::predict(m.target, rows.x), rows.y);
    };
    const double dirty_on_idx = clean_rmse_on(dirty_run.model);
    const double clean_on_idx = clean_rmse_on(clean_run.model);
    write_json(ctx.cfg.output_dir / "corrupt_report.json",
               {{"mode", "corrupt"},
                {"fraction", ctx.cfg.corrupt_fraction},
                {"threshold", corruption.threshold},
                {"warning", corruption.warning},
                {"corrupted_indices", corruption.indices},
                {"corrupted_run",
                 {{"clean_label_rmse_on_corrupted", dirty_on_idx},
                  {"clean_label_rmse_on_corrupted_raw", dirty_on_idx * label_std},
                  {"best_val_rmse", dirty_run.report.best_val_rmse}}},
                {"clean_run",
                 {{"clean_label_rmse_on_corrupted", clean_on_idx},
                  {"clean_label_rmse_on_corrupted_raw", clean_on_idx * label_std},
                  {"best_val_rmse", clean_run.report.best_val_rmse}}}});
    if (corruption.warning) std::cerr << "warning: no label exceeds the standard deviation; nothing corrupted\n";
    std::cout << corruption.indices.size() << " labels corrupted; clean-label RMSE on them " << dirty_on_idx
              << " (uncorrupted training " << clean_on_idx << ")\n";
    return 0;
}

int run_bench(Context& ctx) {
    const auto report = bench(ctx.cfg.bench_dims, ctx.cfg.bench_batches, ctx.cfg.bench_repetitions, ctx.cfg.train.seed);
    // Timings and byte counts vary run to run, so the whole report is
    // measurement output.
    write_json(ctx.cfg.output_dir / "bench_report.json", to_json(report));
    for (const auto& r : report.rows) {
        std::cout << "dim " << r.dim << " batch " << r.batch << ": time ×" << r.time_ratio << ", memory ×"
                  << r.memory_ratio << "\n";
    }
    return report.agreement ? 0 : 1;
}

int run_verify(Context& ctx) {
    const auto report = verify(ctx.cfg.verify_modules, ctx.cfg.train.seed);
    write_json(ctx.cfg.output_dir / "verify_report.json", to_json(report));
    for (const auto& c : report.checks) {
        std::cout << (c.pass ? "PASS " : "FAIL ") << c.check_name << " err=" << c.max_rel_err << " tol=" << c.tolerance
                  << "\n";
    }
    return report.pass() ? 0 : 1;
}

}  // namespace

std::string_view to_string(Mode mode) {
    switch (mode) {
        case Mode::verify: return "verify";
        case Mode::train: return "train";
        case Mode::bench: return "bench";
        case Mode::ablate: return "ablate";
        case Mode::corrupt: return "corrupt";
    }
    return "unknown";
}

Mode mode_from_string(std::string_view name) {
    for (Mode m : {Mode::verify, Mode::train, Mode::bench, Mode::ablate, Mode::corrupt}) {
        if (to_string(m) == name) return m;
    }
    throw ConfigError("unknown mode '" + std::string(name) + "'");
}

train::TrainConfig train_config_from_json(const json& doc) {
    const std::string where = "train";
    reject_unknown(doc,
                   {"epochs", "batch_size", "weights", "k_loops", "enable_cons", "enable_map", "enable_metric",
                    "enable_curv", "single_task", "seed", "patience", "folds", "lr", "beta1", "beta2", "eps",
                    "weight_decay", "dropout", "geometry_rows", "curvature_mode", "curvature_clip",
                    "max_source_batches", "architecture"},
                   where);
    train::TrainConfig c;
    read(doc, "epochs", c.epochs, where);
    read(doc, "batch_size", c.batch_size, where);
    read(doc, "k_loops", c.k_loops, where);
    read(doc, "enable_cons", c.enable_cons, where);
    read(doc, "enable_map", c.enable_map, where);
    read(doc, "enable_metric", c.enable_metric, where);
    read(doc, "enable_curv", c.enable_curv, where);
    read(doc, "single_task", c.single_task, where);
    read(doc, "seed", c.seed, where);
    read(doc, "patience", c.patience, where);
    read(doc, "folds", c.folds, where);
    read(doc, "lr", c.optimizer.lr, where);
    read(doc, "beta1", c.optimizer.beta1, where);
    read(doc, "beta2", c.optimizer.beta2, where);
    read(doc, "eps", c.optimizer.eps, where);
    read(doc, "weight_decay", c.optimizer.weight_decay, where);
    read(doc, "dropout", c.dropout, where);
    read(doc, "geometry_rows", c.geometry_rows, where);
    read(doc, "curvature_clip", c.curvature_clip, where);
    read(doc, "max_source_batches", c.max_source_batches, where);
    if (doc.contains("curvature_mode")) {
        try {
            c.curvature_mode = geometry::inverse_mode_from_string(doc.at("curvature_mode").get<std::string>());
        } catch (const std::exception&) {
            throw ConfigError("bad value for 'curvature_mode' in train");
        }
    }
    if (doc.contains("weights")) {
        const auto& w = doc.at("weights");
        reject_unknown(w, {"alpha", "beta", "gamma", "delta", "epsilon"}, "train.weights");
        read(w, "alpha", c.weights.alpha, "train.weights");
        read(w, "beta", c.weights.beta, "train.weights");
        read(w, "gamma", c.weights.gamma, "train.weights");
        read(w, "delta", c.weights.delta, "train.weights");
        read(w, "epsilon", c.weights.epsilon, "train.weights");
    }
    if (doc.contains("architecture")) {
        const auto& a = doc.at("architecture");
        const std::string aw = "train.architecture";
        reject_unknown(a, {"embed_hidden", "embedding", "encoder_hidden", "latent", "transfer_layers", "head_hidden"},
                       aw);
        read(a, "embed_hidden", c.architecture.embed_hidden, aw);
        read(a, "embedding", c.architecture.embedding, aw);
        read(a, "encoder_hidden", c.architecture.encoder_hidden, aw);
        read(a, "latent", c.architecture.latent, aw);
        read(a, "transfer_layers", c.architecture.transfer_layers, aw);
        read(a, "head_hidden", c.architecture.head_hidden, aw);
    }
    c.validate();
    return c;
}

RunConfig run_config_from_json(const json& doc, const std::filesystem::path& base_dir) {
    const std::string where = "run config";
    reject_unknown(doc,
                   {"mode", "synthetic", "source_csv", "target_csv", "train", "output_dir", "bench", "ablate",
                    "corrupt", "verify"},
                   where);
    RunConfig c;
    if (doc.contains("mode")) {
        if (!doc.at("mode").is_string()) throw ConfigError("mode must be a string");
        c.mode = mode_from_string(doc.at("mode").get<std::string>());
    }
    if (doc.contains("synthetic")) c.synthetic = synthetic_from_json(doc.at("synthetic"));
    auto path = [&](const char* key) -> std::optional<std::filesystem::path> {
        if (!doc.contains(key)) return std::nullopt;
        if (!doc.at(key).is_string()) throw ConfigError(std::string(key) + " must be a path string");
        std::filesystem::path p = doc.at(key).get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        if (!std::filesystem::exists(p)) throw ConfigError(std::string(key) + " '" + p.string() + "' does not exist");
        return p;
    };
    c.source_csv = path("source_csv");
    c.target_csv = path("target_csv");
    if (c.synthetic && (c.source_csv || c.target_csv)) throw ConfigError("give either synthetic or CSV data, not both");
    if (c.source_csv.has_value() != c.target_csv.has_value()) {
        throw ConfigError("source_csv and target_csv must be given together");
    }
    if (doc.contains("train")) c.train = train_config_from_json(doc.at("train"));
    if (doc.contains("output_dir")) {
        if (!doc.at("output_dir").is_string()) throw ConfigError("output_dir must be a string");
        c.output_dir = doc.at("output_dir").get<std::string>();
    }
    if (doc.contains("bench")) {
        const auto& b = doc.at("bench");
        reject_unknown(b, {"dims", "batches", "repetitions"}, "bench");
        read(b, "dims", c.bench_dims, "bench");
        read(b, "batches", c.bench_batches, "bench");
        read(b, "repetitions", c.bench_repetitions, "bench");
    }
    if (doc.contains("ablate")) {
        reject_unknown(doc.at("ablate"), {"seeds"}, "ablate");
        read(doc.at("ablate"), "seeds", c.ablate_seeds, "ablate");
    }
    if (doc.contains("corrupt")) {
        reject_unknown(doc.at("corrupt"), {"fraction"}, "corrupt");
        read(doc.at("corrupt"), "fraction", c.corrupt_fraction, "corrupt");
        if (!(c.corrupt_fraction >= 0.0 && c.corrupt_fraction <= 1.0)) {
            throw ConfigError("corrupt.fraction must lie in [0, 1]");
        }
    }
    if (doc.contains("verify")) {
        reject_unknown(doc.at("verify"), {"modules"}, "verify");
        read(doc.at("verify"), "modules", c.verify_modules, "verify");
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return run_config_from_json(doc, path.parent_path());
}

train::PairDatasets load_datasets(RunConfig& cfg) {
    train::PairDatasets data;
    if (cfg.source_csv) {
        data.source = load_csv(*cfg.source_csv);
        data.target = load_csv(*cfg.target_csv, {data.source.x.extent(1)});
    } else {
        if (!cfg.synthetic) cfg.synthetic = SyntheticPairSpec{};
        data = generate_synthetic_pair(*cfg.synthetic).data;
    }
    cfg.train.architecture.features = data.target.x.extent(1);
    return data;
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"GEAR: curvature-matched transfer learning with analytic latent geometry", "gear"};
    std::string mode_name;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::size_t> seeds;
    app.add_option("mode", mode_name, "verify | train | bench | ablate | corrupt")->required();
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--seed", seed, "override the training seed");
    app.add_option("--out", out_dir, "override the output directory");
    app.add_option("--seeds", seeds, "number of ablation seeds");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        (void)app.exit(e);
        return 2;
    }

    const auto start = std::chrono::steady_clock::now();
    try {
        Context ctx;
        const Mode mode = mode_from_string(mode_name);
        if (!config_path.empty()) ctx.cfg = load_run_config(config_path);
        if (ctx.cfg.mode && *ctx.cfg.mode != mode) {
            throw ConfigError("config is for mode '" + std::string(to_string(*ctx.cfg.mode)) + "', not '" + mode_name +
                              "'");
        }
        if (seed) ctx.cfg.train.seed = *seed;
        if (out_dir) ctx.cfg.output_dir = *out_dir;
        if (seeds) ctx.cfg.ablate_seeds = *seeds;
        std::filesystem::create_directories(ctx.cfg.output_dir);
        if (mode == Mode::train || mode == Mode::ablate || mode == Mode::corrupt) {
            ctx.normalize = ctx.cfg.source_csv.has_value();
            ctx.data = load_datasets(ctx.cfg);
        }

        int code = 0;
        switch (mode) {
            case Mode::verify: code = run_verify(ctx); break;
            case Mode::train: code = run_train(ctx); break;
            case Mode::bench: code = run_bench(ctx); break;
            case Mode::ablate: code = run_ablate(ctx); break;
            case Mode::corrupt: code = run_corrupt(ctx); break;
        }
        const auto stamp = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char when[32];
        std::strftime(when, sizeof when, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&stamp));
        ctx.metadata["mode"] = mode_name;
        ctx.metadata["finished_at"] = when;
        ctx.metadata["wall_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_json(ctx.cfg.output_dir / "metadata.json", ctx.metadata);
        return code;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "parse error at line " << e.line() << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace gear::harness
