#pragma once

// Gradients of the total loss, AdamW, the epoch loop with early stopping,
// cross-validation, the single-task baseline and label corruption.

#include "gear/detail/model_kernels.hpp"
#include "gear/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gear::train {

/// Feature rows with one scalar label each.
struct Dataset {
    Tensor x;  // (rows, features)
    Tensor y;  // (rows)

    [[nodiscard]] std::size_t rows() const { return x.rank() == 2 ? x.extent(0) : 0; }
    [[nodiscard]] Dataset subset(const std::vector<std::size_t>& rows) const;
    /// Rows of `other` appended after the rows of this dataset.
    [[nodiscard]] Dataset concat(const Dataset& other) const;
    void validate() const;
};

struct TaskSplit {
    Dataset train;
    Dataset validation;
};

struct PairSplit {
    TaskSplit source;
    TaskSplit target;
};

struct PairDatasets {
    Dataset source;
    Dataset target;
};

/// Parameter tensors in a fixed order: source then target pipeline, networks
/// in TaskPipeline::networks() order, each layer's weight then bias.
[[nodiscard]] std::vector<Tensor*> parameters(model::GearModel& model);
[[nodiscard]] std::vector<const Tensor*> parameters(const model::GearModel& model);

/// One gradient per parameter tensor, in parameters() order, plus the loss
/// evaluated on the way.
struct GradientSet {
    std::vector<Tensor> grads;
    model::LossBreakdown loss;

    [[nodiscard]] std::size_t size() const { return grads.size(); }
    [[nodiscard]] double max_abs() const;
};

struct AdamWConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct OptimizerState {
    AdamWConfig hp;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::uint64_t step = 0;
    /// Parameter tensors before this index are frozen: no decay, no update.
    std::size_t first_trainable = 0;

    /// Zero moments shaped like the model's parameters.
    [[nodiscard]] static OptimizerState for_model(const model::GearModel& model, AdamWConfig hp = {});
};

struct TrainConfig {
    std::size_t epochs = 300;
    std::size_t batch_size = 64;
    model::LossWeights weights;
    int k_loops = 1;
    bool enable_cons = true;
    bool enable_map = true;
    bool enable_metric = true;
    bool enable_curv = true;
    /// Target pipeline alone with reg + α·autoencoder.
    bool single_task = false;
    std::uint64_t seed = 0;
    std::size_t patience = 50;
    std::size_t folds = 4;
    AdamWConfig optimizer;
    /// Drop probability on hidden outputs of transfer, inverse and head.
    double dropout = 0.2;
    std::size_t geometry_rows = 16;
    geometry::InverseMode curvature_mode = geometry::InverseMode::learned;
    double curvature_clip = 1e4;
    /// Cap on source-role batches per epoch (0 keeps all of them).
    std::size_t max_source_batches = 0;
    model::ArchitectureSpec architecture;

    /// Throws ConfigError on a zero batch size or fold count, K < 1, dropout
    /// outside [0, 1) or a negative loss weight.
    void validate() const;
    [[nodiscard]] model::LossOptions loss_options() const;
    /// Loss weights with disabled components set to zero.
    [[nodiscard]] model::LossWeights effective_weights() const;
};

/// Same pipeline trained alone with reg + α·autoencoder.
[[nodiscard]] TrainConfig single_task_config(TrainConfig cfg);

/// Exact gradient of the weighted total loss by reverse-mode differentiation
/// through every loss, including the analytic curvature pipeline. Throws
/// TrainingError naming the first component whose value or gradient is not
/// finite.
[[nodiscard]] GradientSet grad_total(const model::GearModel& model, const model::PairBatch& batch,
                                     const TrainConfig& cfg,
                                     model::Direction direction = model::Direction::source_to_target,
                                     const model::kernels::DropoutFn* dropout = nullptr);

/// Central finite differences of the total loss, one coordinate at a time.
/// Meant for small models (a few hundred parameters).
[[nodiscard]] GradientSet fd_gradient(const model::GearModel& model, const model::PairBatch& batch,
                                      const TrainConfig& cfg,
                                      model::Direction direction = model::Direction::source_to_target,
                                      double step = 1e-5);

/// Decoupled weight decay followed by the bias-corrected Adam update.
void adamw_step(model::GearModel& model, const GradientSet& grads, OptimizerState& state);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_total = 0.0;
    double val_rmse = 0.0;
    /// Target-task validation MSE, comparable across loss configurations.
    double val_loss = 0.0;
    model::LossBreakdown parts;  // mean over the epoch's batches
};

struct FoldReport {
    std::size_t fold = 0;
    std::vector<EpochRecord> history;
    double initial_val_rmse = 0.0;
    double best_val_rmse = 0.0;
    double best_val_loss = 0.0;
    std::size_t best_epoch = 0;  // 0 means the initial model
    double wall_seconds = 0.0;
    bool aborted = false;
    std::string abort_reason;
};

struct TrainResult {
    model::GearModel model;
    FoldReport report;
};

/// Target pipeline predictions head(encoder(embed(x))) as a (rows) tensor.
[[nodiscard]] Tensor predict(const model::TaskPipeline& pipeline, const Tensor& x);
[[nodiscard]] double rmse(const Tensor& prediction, const Tensor& y);

/// Epoch loop of the two-task algorithm: each task is the target for its own
/// batches with the other as subtask. Returns the best-validation parameters;
/// a non-finite loss stops training with the history kept.
[[nodiscard]] TrainResult train(const model::GearModel& model, const PairSplit& data, const TrainConfig& cfg,
                                std::size_t fold = 0);

/// Validation rows of fold `fold` out of `folds`, from a seeded permutation.
[[nodiscard]] std::vector<std::size_t> fold_rows(std::size_t rows, std::size_t folds, std::size_t fold,
                                                 std::uint64_t seed);
/// Train/validation split of both tasks for one fold.
[[nodiscard]] PairSplit fold_split(const PairDatasets& data, std::size_t folds, std::size_t fold,
                                   std::uint64_t seed);

struct CvReport {
    std::vector<FoldReport> folds;
    double mean_rmse = 0.0;
    double std_rmse = 0.0;  // population standard deviation over folds
};

[[nodiscard]] CvReport summarize(std::vector<FoldReport> folds);
/// Trains a fresh model per fold from cfg.architecture and cfg.seed.
[[nodiscard]] CvReport run_cv(const PairDatasets& data, const TrainConfig& cfg);

struct Corruption {
    TaskSplit data;
    /// Validation rows whose negated copies were added to the training split.
    std::vector<std::size_t> indices;
    double threshold = 0.0;  // population std of the validation labels
    bool warning = false;    // no eligible rows
};

/// Picks round(fraction·|validation|) rows with |label| > std (capped at the
/// eligible count), negates their labels and appends them to the training split.
[[nodiscard]] Corruption corrupt_labels(const TaskSplit& data, double fraction, std::uint64_t seed);

// {"model": ..., "optimizer": {"step": n, "m": [...], "v": [...], hyperparameters}}
void save_checkpoint(const std::filesystem::path& path, const model::GearModel& model, const OptimizerState& state);
[[nodiscard]] std::pair<model::GearModel, OptimizerState> load_checkpoint(const std::filesystem::path& path);

/// One JSON object per line: epoch, train_total, val_rmse, val_loss and the
/// per-component losses.
[[nodiscard]] std::string history_jsonl(const FoldReport& report);
[[nodiscard]] nlohmann::json to_json(const FoldReport& report);

}  // namespace gear::train
