#pragma once

// Synthetic task pairs, CSV ingestion, the analytic-vs-numeric benchmark,
// the golden/oracle verification suite and the command-line driver.

#include "gear/train.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gear::harness {

/// Two regression tasks sharing a smooth latent: x ~ N(0, I), u = φ(x) through
/// a random SiLU map, y_τ = f_τ(u) + ε_τ with related random heads.
struct SyntheticPairSpec {
    std::size_t features = 8;
    std::size_t latent = 4;
    /// Hidden widths of φ between the features and the latent.
    std::vector<std::size_t> hidden{8};
    double noise_source = 0.1;
    double noise_target = 0.1;
    std::size_t n_source = 2000;
    std::size_t n_target = 200;
    /// Head spread: 0 gives identical heads for both tasks.
    double head_divergence = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticPair {
    train::PairDatasets data;
    /// Pearson correlation of the two label sets on the shared rows.
    double label_correlation = 0.0;
    /// Rows 0..shared_rows-1 of both tasks use the same features.
    std::size_t shared_rows = 0;
};

/// Deterministic per seed. Noise-free labels are standardized before noise
/// is added, so the noise std is relative to a unit-variance signal.
[[nodiscard]] SyntheticPair generate_synthetic_pair(const SyntheticPairSpec& spec);

struct CsvSchema {
    /// Expected feature count; unset accepts any width.
    std::optional<std::size_t> features;
};

/// Reads `feature_0,...,feature_{d-1},label`. Throws ParseError carrying the
/// line number on a bad header, ragged row or non-numeric cell.
[[nodiscard]] train::Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
[[nodiscard]] train::Dataset parse_csv(const std::string& text, const CsvSchema& schema = {});

/// Per-column z-score parameters fitted on a training split.
struct Normalizer {
    std::vector<double> feature_mean;
    std::vector<double> feature_std;
    double label_mean = 0.0;
    double label_std = 1.0;

    /// Population statistics; a constant column keeps std 1.
    [[nodiscard]] static Normalizer fit(const train::Dataset& train);
    [[nodiscard]] train::Dataset apply(const train::Dataset& d) const;
    [[nodiscard]] double denormalize_label(double y) const { return y * label_std + label_mean; }
    [[nodiscard]] Tensor denormalize_labels(const Tensor& y) const;
};

struct BenchRow {
    std::size_t dim = 0;
    std::size_t batch = 0;
    double analytic_seconds = 0.0;
    double numeric_seconds = 0.0;
    std::size_t analytic_peak_bytes = 0;
    std::size_t numeric_peak_bytes = 0;
    double time_ratio = 0.0;    // numeric / analytic
    double memory_ratio = 0.0;  // numeric / analytic
    /// Largest relative metric disagreement between the two paths.
    double metric_rel_err = 0.0;
    double metric_derivative_rel_err = 0.0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    std::size_t repetitions = 0;
    bool agreement = true;  // every metric_rel_err within 1e-4
};

/// Times g and ∂g at `batch` random points of a random constant-width SiLU
/// transfer, analytically and by finite differences, with peak transient
/// allocation from an instrumented global allocator.
[[nodiscard]] BenchReport bench(const std::vector<std::size_t>& dims, const std::vector<std::size_t>& batches,
                                std::size_t repetitions, std::uint64_t seed = 0);

[[nodiscard]] nlohmann::json to_json(const BenchReport& report);

/// Bytes currently held through the global allocator, and the peak since the
/// last reset.
[[nodiscard]] std::size_t allocated_bytes();
[[nodiscard]] std::size_t peak_allocated_bytes();
void reset_peak_allocated_bytes();

struct VerifyCheck {
    std::string check_name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct VerifyReport {
    std::vector<VerifyCheck> checks;
    [[nodiscard]] bool pass() const;
};

/// Constant-width SiLU transfer with weights I + U(±0.3/√dim) and biases
/// U(±0.2): moderately conditioned, so exact-mode checks stay meaningful.
[[nodiscard]] net::Mlp random_transfer(std::size_t dim, std::size_t layers, std::uint64_t seed);

/// Golden worked examples, then analytic-vs-oracle, flatness and symmetry
/// checks on `modules` random SiLU transfers (dims 2–6, 1–4 layers).
[[nodiscard]] VerifyReport verify(std::size_t modules = 20, std::uint64_t seed = 0);
[[nodiscard]] nlohmann::json to_json(const VerifyReport& report);

enum class Mode { verify, train, bench, ablate, corrupt };

[[nodiscard]] std::string_view to_string(Mode mode);
[[nodiscard]] Mode mode_from_string(std::string_view name);

/// Contents of the JSON run file; see README for the schema.
struct RunConfig {
    std::optional<Mode> mode;
    std::optional<SyntheticPairSpec> synthetic;
    std::optional<std::filesystem::path> source_csv;
    std::optional<std::filesystem::path> target_csv;
    train::TrainConfig train;
    std::filesystem::path output_dir = "gear_out";
    std::vector<std::size_t> bench_dims{2, 4, 8};
    std::vector<std::size_t> bench_batches{1, 10, 30};
    std::size_t bench_repetitions = 3;
    std::size_t ablate_seeds = 5;
    double corrupt_fraction = 0.1;
    std::size_t verify_modules = 20;
};

/// Throws ConfigError on unknown keys, bad values or missing referenced files.
[[nodiscard]] RunConfig run_config_from_json(const nlohmann::json& doc,
                                             const std::filesystem::path& base_dir = {});
[[nodiscard]] RunConfig load_run_config(const std::filesystem::path& path);
[[nodiscard]] train::TrainConfig train_config_from_json(const nlohmann::json& doc);

/// Raw datasets named by the config (synthetic or CSV). Feature width is
/// copied into the architecture. CSV data is normalized per split later,
/// with training-split statistics.
[[nodiscard]] train::PairDatasets load_datasets(RunConfig& cfg);

/// `gear {verify|train|bench|ablate|corrupt} [--config <path>] [--seed N]
/// [--out DIR] [--seeds N]`. Without --config every setting takes its
/// default. Returns 0 on success, 1 on a failed verification, 2 on a
/// configuration error.
[[nodiscard]] int run_cli(int argc, const char* const* argv);

}  // namespace gear::harness
