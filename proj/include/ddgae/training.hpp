#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddgae/diffusion.hpp"
#include "ddgae/graph_data.hpp"
#include "ddgae/networks.hpp"

namespace ddgae::train {

struct TrainConfig {
    int diffusion_steps = 32;
    double lambda = 1e-3;
    double learning_rate = 1e-4;
    int batch_size = 32;
    int epochs = 200;
    std::uint64_t seed = 0;
    data::FeaturePolicy feature_policy = data::FeaturePolicy::degree_onehot;
    diffusion::ScheduleKind schedule = diffusion::ScheduleKind::absorbing_linear;
    nn::EncoderConfig encoder;    // in_features set from the prepared dataset
    nn::DenoiserConfig denoiser;  // n_max set from the prepared dataset
    int checkpoint_every = 10;    // epochs; 0 writes only the final checkpoint

    int n_max() const { return denoiser.n_max; }
    int feature_width() const { return encoder.in_features; }

    /// Copies n_max, feature width and policy from a prepared dataset.
    void bind(const data::PreparedDataset& prepared);
    /// Throws ConfigError on out-of-range values.
    void validate() const;
    /// Everything except the epoch budget and checkpoint cadence must match.
    bool resume_compatible(const TrainConfig& other) const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct Model {
    nn::GcnEncoder encoder;
    nn::Denoiser denoiser;

    static Model init(const TrainConfig& config);
};

struct ModelGrads {
    nn::ParamSet encoder;
    nn::ParamSet denoiser;

    static ModelGrads zeros_like(const Model& model);
    void set_zero();
    bool all_finite() const;
    double squared_norm() const;
};

struct AdamMoments {
    nn::ParamSet m;
    nn::ParamSet v;

    static AdamMoments zeros_like(const nn::ParamSet& params);
};

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// One Adam update; `step` is the 1-based update count used for bias
/// correction.
void adam_update(nn::ParamSet& params, const nn::ParamSet& grads, AdamMoments& moments, std::int64_t step,
                 const AdamConfig& config);

struct TrainState {
    std::int64_t step = 0;
    Model model;
    AdamMoments encoder_moments;
    AdamMoments denoiser_moments;
    std::uint64_t rng_seed = 0;  // all randomness is derived from (rng_seed, step)

    static TrainState init(const TrainConfig& config);
};

/// Loss of one graph at timestep t, accumulating gradients into `grads`
/// when non-null. `x0_override` replaces the denoiser output in the loss
/// (gradients are still routed through the denoiser as if it had produced
/// those probabilities).
diffusion::LossBreakdown graph_loss(const Model& model, const data::PaddedGraph& graph, int t,
                                    const diffusion::NoiseSchedule& schedule, double lambda,
                                    std::uint64_t corrupt_seed, ModelGrads* grads = nullptr,
                                    const Eigen::MatrixXd* x0_override = nullptr);

struct StepRecord {
    std::int64_t step = 0;  // update count after this step
    double t_mean = 0.0;
    double l_vb = 0.0;
    double aux_ce = 0.0;
    double total = 0.0;

    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

nlohmann::json to_json(const StepRecord& record);

/// Batch-mean loss and one joint Adam update of encoder and denoiser.
/// Throws NumericError, leaving the state untouched, when the loss or a
/// gradient is not finite.
StepRecord train_step(TrainState& state, const TrainConfig& config, std::span<const data::PaddedGraph* const> batch,
                      const diffusion::NoiseSchedule& schedule);

/// Binary checkpoint: magic, format version, JSON header (config, schedule,
/// step, tensor directory) and the raw tensors at full precision.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    TrainConfig config;
    diffusion::NoiseSchedule schedule;
    TrainState state;
    nlohmann::json meta;  // caller-supplied provenance, stored verbatim
};

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config,
                     const diffusion::NoiseSchedule& schedule, const TrainState& state,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainOptions {
    std::filesystem::path out_dir;
    std::optional<std::filesystem::path> resume_from;
    std::function<void(const StepRecord&)> on_step;
    nlohmann::json meta = nlohmann::json::object();  // copied into every checkpoint
};

struct TrainOutcome {
    std::filesystem::path checkpoint;
    std::filesystem::path metrics;
    std::int64_t steps = 0;
    std::vector<StepRecord> records;  // steps run by this call
};

/// Runs the configured epochs. Batches come from a per-epoch shuffle, so a
/// resumed run replays exactly the batches an uninterrupted run would see.
/// Writes `metrics.ndjson` (appended), periodic `checkpoint-step<N>.ckpt`
/// files and a final `model.ckpt` into out_dir.
TrainOutcome train(const TrainConfig& config, const data::PreparedDataset& dataset, const TrainOptions& options);

}  // namespace ddgae::train
