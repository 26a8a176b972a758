#pragma once

// Two-task GEAR model: per-task embedding, encoder, transfer, inverse
// transfer and head networks, coupled only through the consistency,
// mapping, metric and curvature losses.

#include "gear/geometry.hpp"
#include "gear/net.hpp"
#include "gear/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

namespace gear::model {

struct TaskPipeline {
    net::Mlp embed;     // features -> embedding
    net::Mlp encoder;   // embedding -> latent z
    net::Mlp transfer;  // z -> z' (constant width)
    net::Mlp inverse;   // z' -> ẑ (constant width)
    net::Mlp head;      // z -> scalar prediction

    [[nodiscard]] std::size_t latent_dim() const { return encoder.output_dim(); }
    [[nodiscard]] std::size_t feature_dim() const { return embed.input_dim(); }
    /// Networks in a fixed order: embed, encoder, transfer, inverse, head.
    [[nodiscard]] std::vector<const net::Mlp*> networks() const;
    [[nodiscard]] std::vector<net::Mlp*> networks();

    friend bool operator==(const TaskPipeline&, const TaskPipeline&) = default;
};

struct LossWeights {
    double alpha = 0.1;    // autoencoder
    double beta = 0.1;     // consistency
    double gamma = 0.2;    // mapping
    double delta = 0.1;    // metric
    double epsilon = 0.2;  // curvature

    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct GearModel {
    TaskPipeline source;
    TaskPipeline target;
    LossWeights weights;

    /// Throws ShapeError unless both pipelines share feature and latent widths
    /// and transfer/inverse networks are constant-width at the latent size.
    void validate() const;
    [[nodiscard]] std::size_t parameter_count() const;

    friend bool operator==(const GearModel&, const GearModel&) = default;
};

/// Layer sizes of one pipeline. Transfer and inverse use `transfer_layers`
/// SiLU layers of latent width followed by one linear layer.
struct ArchitectureSpec {
    std::size_t features = 8;
    std::vector<std::size_t> embed_hidden{16};
    std::size_t embedding = 16;
    std::vector<std::size_t> encoder_hidden{8};
    std::size_t latent = 4;
    std::size_t transfer_layers = 3;
    std::vector<std::size_t> head_hidden{8, 4};
};

/// Glorot embed/encoder/head. Transfer and inverse start as small-signal
/// SiLU stacks whose linear part is I + U(-s, s), s = 0.3/sqrt(latent), with
/// weak curvature, so the initial geometry losses are of order one.
[[nodiscard]] TaskPipeline make_pipeline(const ArchitectureSpec& spec, std::uint64_t seed);
[[nodiscard]] GearModel make_model(const ArchitectureSpec& spec, std::uint64_t seed);

/// Rows of raw features with the labels of either task. A zero in a mask
/// marks a missing label.
struct PairBatch {
    Tensor x;       // (rows, features)
    Tensor y_t;     // (rows)
    Tensor mask_t;  // (rows)
    Tensor y_s;     // (rows)
    Tensor mask_s;  // (rows)

    [[nodiscard]] std::size_t rows() const { return x.extent(0); }
    /// Every row labelled for the target role only.
    [[nodiscard]] static PairBatch target_only(Tensor x, Tensor y_t);
    void validate() const;
};

/// Which pipeline plays the target role for a batch.
enum class Direction { source_to_target, target_to_source };

struct PairRecord {
    Tensor z_t, zp_t, zhat_t, yhat_t;  // target pipeline
    Tensor z_s, zp_s, zhat_s;          // source pipeline on the same rows
    Tensor yhat_st;                    // head_t(inverse_t(z'_s))
};

[[nodiscard]] PairRecord forward_pair(const GearModel& model, const PairBatch& batch,
                                      Direction direction = Direction::source_to_target);

struct LossBreakdown {
    double reg = 0.0;
    double autoencoder = 0.0;
    double cons = 0.0;
    double map = 0.0;
    double metric = 0.0;
    double curv = 0.0;
    double total = 0.0;
    /// Rows contributing to reg and map; 0 flags an empty term.
    std::size_t labelled_rows = 0;
};

/// reg, autoencoder (both pipelines), cons and map from a record.
[[nodiscard]] LossBreakdown base_losses(const PairRecord& record, const PairBatch& batch);

/// Round-trip flatness penalty summed over both pipelines, both sides and K
/// round trips, averaged over rows. zp_* are flat-frame points z'.
[[nodiscard]] double metric_loss(const TaskPipeline& source, const TaskPipeline& target, const Tensor& zp_s,
                                 const Tensor& zp_t, int k_loops = 1);

/// mean((clip(R_s) - clip(R_t))²) with R the Ricci scalar at each row's latent.
[[nodiscard]] double curvature_loss(const TaskPipeline& source, const TaskPipeline& target, const Tensor& z_s,
                                    const Tensor& z_t, geometry::InverseMode mode = geometry::InverseMode::learned);

/// Fills `total`; throws TrainingError naming the first non-finite part.
[[nodiscard]] LossBreakdown total_loss(LossBreakdown parts, const LossWeights& w);

/// Loss switches and geometry settings shared by evaluation and training.
struct LossOptions {
    bool enable_cons = true;
    bool enable_map = true;
    bool enable_metric = true;
    bool enable_curv = true;
    /// Train only the target-role pipeline with reg + α·autoencoder.
    bool single_task = false;
    int k_loops = 1;
    /// Rows of each batch used for the metric and curvature terms.
    std::size_t geometry_rows = 16;
    geometry::InverseMode curvature_mode = geometry::InverseMode::learned;
    double ridge = 1e-8;
    double curvature_clip = 1e4;
};

/// Full weighted loss of one batch with dropout disabled.
[[nodiscard]] LossBreakdown evaluate(const GearModel& model, const PairBatch& batch, Direction direction,
                                     const LossOptions& options = {});

// {"source": {...}, "target": {...}, "weights": {...}}; networks use net::to_json.
[[nodiscard]] nlohmann::json to_json(const GearModel& model);
[[nodiscard]] GearModel model_from_json(const nlohmann::json& doc);

}  // namespace gear::model
