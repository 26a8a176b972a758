#include "gear/errors.hpp"
#include "gear/harness.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace gear;
using namespace gear::harness;

namespace {

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("gear_harness_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "gear");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string csv(std::size_t rows, std::size_t features, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    std::ostringstream out;
    for (std::size_t j = 0; j < features; ++j) out << "feature_" << j << ",";
    out << "label\n";
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < features; ++j) {
            const double v = 3.0 + 2.0 * n(rng);
            s += v;
            out << v << ",";
        }
        out << 10.0 + s << "\n";
    }
    return out.str();
}

}  // namespace

TEST_CASE("synthetic pair is deterministic per seed") {
    SyntheticPairSpec spec;
    spec.n_source = 50;
    spec.n_target = 20;
    spec.seed = 4;
    const auto a = generate_synthetic_pair(spec);
    const auto b = generate_synthetic_pair(spec);
    CHECK(a.data.source.x == b.data.source.x);
    CHECK(a.data.target.y == b.data.target.y);
    CHECK(a.data.source.rows() == 50);
    CHECK(a.data.target.rows() == 20);
    CHECK(a.data.target.x.extent(1) == spec.features);
    CHECK(a.shared_rows == 20);
    spec.seed = 5;
    CHECK_FALSE(generate_synthetic_pair(spec).data.target.y == a.data.target.y);
}

TEST_CASE("identical heads without noise give identical labels on shared rows") {
    SyntheticPairSpec spec;
    spec.n_source = 30;
    spec.n_target = 30;
    spec.noise_source = 0.0;
    spec.noise_target = 0.0;
    spec.head_divergence = 0.0;
    const auto p = generate_synthetic_pair(spec);
    CHECK(p.data.source.x == p.data.target.x);
    CHECK(p.data.source.y == p.data.target.y);
    CHECK(p.label_correlation == doctest::Approx(1.0));
}

TEST_CASE("default synthetic tasks are related") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        SyntheticPairSpec spec;
        spec.seed = seed;
        CHECK(generate_synthetic_pair(spec).label_correlation > 0.5);
    }
    SyntheticPairSpec bad;
    bad.n_target = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("CSV parsing") {
    const auto d = parse_csv("feature_0,feature_1,label\n1,2,3\r\n4,5.5,-6e-1\n");
    REQUIRE(d.rows() == 2);
    CHECK(d.x(1, 1) == 5.5);
    CHECK(d.y[1] == -0.6);
    CHECK(parse_csv("feature_0,label\n1,2\n", {1}).rows() == 1);
}

TEST_CASE("CSV errors carry line numbers") {
    auto line_of = [](const std::string& text, CsvSchema schema = {}) {
        try {
            (void)parse_csv(text, schema);
        } catch (const ParseError& e) {
            return e.line();
        }
        return std::size_t{0};
    };
    CHECK(line_of("x,label\n1,2\n") == 1);
    CHECK(line_of("feature_0,feature_1\n1,2\n") == 1);
    CHECK(line_of("feature_0,label\n1,2\n3\n") == 3);
    CHECK(line_of("feature_0,label\n1,2\n3,4\nabc,5\n") == 4);
    CHECK(line_of("feature_0,label\n1,2\n", {2}) == 1);
    CHECK_THROWS_AS((void)load_csv("/nonexistent/gear.csv"), ConfigError);
}

TEST_CASE("normalization uses training statistics") {
    const auto train = parse_csv(csv(40, 3, 1));
    const auto n = Normalizer::fit(train);
    const auto z = n.apply(train);
    for (std::size_t j = 0; j < 3; ++j) {
        double mean = 0.0;
        double sq = 0.0;
        for (std::size_t i = 0; i < z.rows(); ++i) {
            mean += z.x(i, j);
            sq += z.x(i, j) * z.x(i, j);
        }
        mean /= 40.0;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
        CHECK(sq / 40.0 - mean * mean == doctest::Approx(1.0));
    }
    const Tensor back = n.denormalize_labels(z.y);
    for (std::size_t i = 0; i < train.rows(); ++i) CHECK(std::abs(back[i] - train.y[i]) <= 1e-12 * std::abs(train.y[i]));

    const auto flat = parse_csv("feature_0,label\n2,1\n2,3\n");
    const auto nf = Normalizer::fit(flat);
    CHECK(nf.feature_std[0] == 1.0);
    CHECK(nf.apply(flat).x(0, 0) == 0.0);
}

TEST_CASE("bench report shape and agreement") {
    const auto r = bench({2, 3}, {1, 4}, 1, 2);
    REQUIRE(r.rows.size() == 4);
    CHECK(r.agreement);
    for (const auto& row : r.rows) {
        CHECK(row.analytic_seconds > 0.0);
        CHECK(row.numeric_seconds > 0.0);
        CHECK(row.analytic_peak_bytes > 0);
        CHECK(row.numeric_peak_bytes > 0);
        CHECK(row.time_ratio == doctest::Approx(row.numeric_seconds / row.analytic_seconds));
        CHECK(row.memory_ratio ==
              doctest::Approx(static_cast<double>(row.numeric_peak_bytes) / static_cast<double>(row.analytic_peak_bytes)));
        CHECK(row.metric_rel_err <= 1e-4);
    }
    CHECK(to_json(r).at("rows").size() == 4);
}

TEST_CASE("allocation counters track live and peak bytes") {
    reset_peak_allocated_bytes();
    const std::size_t before = allocated_bytes();
    {
        std::vector<char> block(1 << 20);
        CHECK(allocated_bytes() >= before + (1 << 20));
    }
    CHECK(peak_allocated_bytes() >= before + (1 << 20));
    CHECK(allocated_bytes() < before + (1 << 20));
}

TEST_CASE("verification suite passes") {
    const auto r = verify(6, 1);
    CHECK(r.pass());
    for (const auto& c : r.checks) {
        INFO(c.check_name);
        CHECK(c.pass);
    }
}

TEST_CASE("run configuration parsing") {
    const auto dir = scratch("config");
    write(dir / "s.csv", csv(10, 2, 1));
    write(dir / "t.csv", csv(10, 2, 2));
    const auto c = run_config_from_json(nlohmann::json::parse(R"({"mode": "train", "source_csv": "s.csv",
        "target_csv": "t.csv", "train": {"lr": 0.002, "epochs": 7, "curvature_mode": "exact",
        "weights": {"gamma": 0.5}, "architecture": {"latent": 3}}})"),
                                        dir);
    CHECK(c.mode == Mode::train);
    CHECK(c.train.optimizer.lr == 0.002);
    CHECK(c.train.epochs == 7);
    CHECK(c.train.weights.gamma == 0.5);
    CHECK(c.train.architecture.latent == 3);
    CHECK(c.train.curvature_mode == geometry::InverseMode::exact);
    CHECK_THROWS_AS((void)run_config_from_json(nlohmann::json::parse(R"({"trian": {}})")), ConfigError);
    CHECK_THROWS_AS((void)run_config_from_json(nlohmann::json::parse(R"({"train": {"epoch": 3}})")), ConfigError);
    CHECK_THROWS_AS((void)run_config_from_json(nlohmann::json::parse(R"({"mode": "fit"})")), ConfigError);
    CHECK_THROWS_AS((void)run_config_from_json(nlohmann::json::parse(R"({"source_csv": "missing.csv",
        "target_csv": "t.csv"})"), dir),
                    ConfigError);
    CHECK_THROWS_AS((void)run_config_from_json(nlohmann::json::parse(R"({"train": {"lr": "fast"}})")), ConfigError);
    for (Mode m : {Mode::verify, Mode::train, Mode::bench, Mode::ablate, Mode::corrupt}) {
        CHECK(mode_from_string(to_string(m)) == m);
    }
}

TEST_CASE("command-line exit codes") {
    const auto dir = scratch("cli");
    CHECK(cli({"train", "--config", (dir / "absent.json").string()}) == 2);
    write(dir / "bad.json", R"({"mode": "train", "bogus": 1})");
    CHECK(cli({"train", "--config", (dir / "bad.json").string()}) == 2);
    write(dir / "broken.json", "{ not json");
    CHECK(cli({"train", "--config", (dir / "broken.json").string()}) == 2);
    CHECK(cli({"dance"}) == 2);
    CHECK(cli({"verify", "--out", (dir / "verify").string()}) == 0);
    CHECK(std::filesystem::exists(dir / "verify" / "verify_report.json"));
    CHECK(std::filesystem::exists(dir / "verify" / "metadata.json"));
}

TEST_CASE("training from CSV files is reproducible") {
    const auto dir = scratch("train");
    write(dir / "s.csv", csv(40, 2, 3));
    write(dir / "t.csv", csv(16, 2, 4));
    write(dir / "run.json", R"({"mode": "train", "source_csv": "s.csv", "target_csv": "t.csv",
        "output_dir": "out", "train": {"epochs": 3, "folds": 2, "geometry_rows": 4, "lr": 0.001,
        "architecture": {"embed_hidden": [4], "embedding": 4, "encoder_hidden": [], "latent": 2,
        "transfer_layers": 1, "head_hidden": [3]}}})");
    const auto config = (dir / "run.json").string();
    REQUIRE(cli({"train", "--config", config, "--out", (dir / "a").string()}) == 0);
    REQUIRE(cli({"train", "--config", config, "--out", (dir / "b").string()}) == 0);
    const std::string a = slurp(dir / "a" / "train_report.json");
    CHECK(a == slurp(dir / "b" / "train_report.json"));
    CHECK(slurp(dir / "a" / "history_gear_fold1.jsonl") == slurp(dir / "b" / "history_gear_fold1.jsonl"));
    const auto report = nlohmann::json::parse(a);
    CHECK(report.at("gear").at("folds").size() == 2);
    CHECK(report.at("stl").at("folds").size() == 2);
    // Labels are about 10 + Σx with std near 3, so raw RMSE is larger than
    // the normalized one.
    CHECK(report.at("gear").at("mean_rmse_raw").get<double>() > report.at("gear").at("mean_rmse").get<double>());
    CHECK(cli({"train", "--config", config, "--seed", "9", "--out", (dir / "c").string()}) == 0);
    CHECK(slurp(dir / "c" / "train_report.json") != a);
}

TEST_CASE("ablation and corruption modes write their reports") {
    const auto dir = scratch("modes");
    write(dir / "run.json", R"({"synthetic": {"n_source": 60, "n_target": 24},
        "train": {"epochs": 2, "geometry_rows": 4, "lr": 0.001}, "corrupt": {"fraction": 0.5}})");
    const auto config = (dir / "run.json").string();
    REQUIRE(cli({"ablate", "--config", config, "--seeds", "2", "--out", dir.string()}) == 0);
    const auto ab = nlohmann::json::parse(slurp(dir / "ablate_report.json"));
    CHECK(ab.at("seeds").size() == 2);
    for (const char* arm : {"both_off", "map_only", "both_on"}) {
        CHECK(std::filesystem::exists(dir / (std::string("ablate_seed1_") + arm + ".jsonl")));
    }
    REQUIRE(cli({"corrupt", "--config", config, "--out", dir.string()}) == 0);
    const auto co = nlohmann::json::parse(slurp(dir / "corrupt_report.json"));
    CHECK(co.at("corrupted_indices").size() > 0);
    CHECK(std::isfinite(co.at("corrupted_run").at("clean_label_rmse_on_corrupted").get<double>()));
}
