#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "ddgae/diffusion.hpp"
#include "ddgae/graph_data.hpp"
#include "ddgae/nn_core.hpp"

namespace ddgae::nn {

/// D^{-1/2} (A + I) D^{-1/2} with self-loops on real nodes only; padded rows
/// and columns are zero.
Eigen::MatrixXd gcn_normalize(const Eigen::MatrixXd& adjacency, const Eigen::VectorXd& node_mask);

/// Sinusoidal timestep features: [sin(t f_0) .. sin(t f_{d/2-1}), cos(t f_0) ..]
/// with f_i = 10000^{-i/(d/2)}. dim must be even.
Eigen::VectorXd time_embedding(int t, int dim);

struct EncoderConfig {
    int in_features = 0;
    int layers = 3;
    int hidden = 128;
    int out = 64;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Stack of GCN layers (ReLU between layers, linear output) followed by a
/// mean over real nodes.
class GcnEncoder {
public:
    struct Tape {
        Eigen::MatrixXd norm_adj;               // real-node block of the normalised operator
        std::vector<Eigen::MatrixXd> inputs;    // input to each layer (n x width)
        std::vector<Eigen::MatrixXd> pre_acts;  // A H W + b for each layer
    };

    GcnEncoder(const EncoderConfig& config, std::uint64_t seed);
    /// Adopts stored parameters; throws InvalidArgument on layout mismatch.
    GcnEncoder(const EncoderConfig& config, ParamSet params);

    const EncoderConfig& config() const noexcept { return config_; }
    const ParamSet& params() const noexcept { return params_; }
    ParamSet& params() noexcept { return params_; }

    Eigen::VectorXd encode(const data::PaddedGraph& graph) const;
    Eigen::VectorXd forward(const data::PaddedGraph& graph, Tape& tape) const;
    void backward(const Tape& tape, const Eigen::VectorXd& d_out, ParamSet& grads) const;

private:
    void build_layout(std::uint64_t seed);

    EncoderConfig config_;
    ParamSet params_;
    std::vector<Linear> layers_;  // weight (out, in); applied as H W^T
};

struct DenoiserConfig {
    int n_max = 0;
    std::vector<int> widths{32, 64, 128};  // one per pooling level
    int time_dim = 64;
    int time_hidden = 128;
    int cond_dim = 64;  // width of z_enc
    int tap_dim = 64;   // width of h_int
    bool zero_init_head = true;

    int levels() const { return static_cast<int>(widths.size()); }

    friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

struct DenoiserOutput {
    Eigen::MatrixXd x0_probs;  // symmetric, zero outside edge_mask
    Eigen::VectorXd h_int;
};

/// Residual block: conv3x3(silu(x)) + proj(cond) -> conv3x3(silu(.)) plus a
/// 1x1 skip when widths differ. Activations are re-masked after every
/// spatial op so padding never leaks into real cells.
struct ResBlock {
    Conv2d conv1;
    Conv2d conv2;
    Linear cond_proj;
    bool has_skip = false;
    Conv2d skip;

    struct Cache {
        FeatureMap x;
        FeatureMap h;  // masked conv1 output + conditioning bias
    };

    static ResBlock create(ParamSet& params, const std::string& name, int in, int out, int cond_width,
                           std::uint64_t seed);
    FeatureMap forward(const ParamSet& p, const FeatureMap& x, const Eigen::VectorXd& cond,
                       const Eigen::RowVectorXd& mask, Cache& cache) const;
    /// Returns dL/dx; adds dL/dcond into d_cond.
    FeatureMap backward(const ParamSet& p, const Cache& cache, const FeatureMap& d_out, const Eigen::VectorXd& cond,
                        const Eigen::RowVectorXd& mask, Eigen::VectorXd& d_cond, ParamSet& grads) const;
};

/// Conditional UNet over the adjacency grid. Predicts p(x_0 = 1 | A_t) per
/// slot and exposes a pooled bottleneck embedding.
class Denoiser {
public:
    struct Tape {
        Eigen::VectorXd time_emb;
        Eigen::VectorXd time_pre1;
        Eigen::VectorXd time_pre2;
        Eigen::VectorXd time_hidden;
        Eigen::VectorXd cond;
        std::vector<Eigen::RowVectorXd> masks;  // per resolution level
        FeatureMap input;
        FeatureMap stem_out;
        std::vector<ResBlock::Cache> down;
        std::vector<FeatureMap> skips;
        ResBlock::Cache mid;
        FeatureMap mid_out;
        Eigen::VectorXd tap_pool;
        std::vector<ResBlock::Cache> up;
        FeatureMap head_in;
        Eigen::MatrixXd raw_probs;  // sigmoid of symmetrised logits before masking
        Eigen::MatrixXd edge_mask;
    };

    Denoiser(const DenoiserConfig& config, std::uint64_t seed);
    Denoiser(const DenoiserConfig& config, ParamSet params);

    const DenoiserConfig& config() const noexcept { return config_; }
    const ParamSet& params() const noexcept { return params_; }
    ParamSet& params() noexcept { return params_; }

    DenoiserOutput denoise(const diffusion::NoisyAdjacency& noisy, const Eigen::VectorXd& node_mask,
                           const Eigen::VectorXd& z_enc) const;
    DenoiserOutput forward(const diffusion::NoisyAdjacency& noisy, const Eigen::VectorXd& node_mask,
                           const Eigen::VectorXd& z_enc, Tape& tape) const;
    /// d_probs: dL/dx0_probs (any slot; only masked entries are used, and
    /// (i, j) and (j, i) are both honoured). d_h_int may be empty.
    /// Returns dL/dz_enc.
    Eigen::VectorXd backward(const Tape& tape, const Eigen::MatrixXd& d_probs, const Eigen::VectorXd& d_h_int,
                             ParamSet& grads) const;

private:
    void build_layout(std::uint64_t seed);

    DenoiserConfig config_;
    ParamSet params_;
    Linear time1_;
    Linear time2_;
    Conv2d stem_;
    std::vector<ResBlock> down_;
    ResBlock mid_;
    Linear tap_;
    std::vector<ResBlock> up_;
    Conv2d head_;
};

}  // namespace ddgae::nn
