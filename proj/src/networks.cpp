#include "ddgae/networks.hpp"

#include <cmath>
#include <string>

#include "ddgae/errors.hpp"
#include "ddgae/rng.hpp"

namespace ddgae::nn {

Eigen::MatrixXd gcn_normalize(const Eigen::MatrixXd& adjacency, const Eigen::VectorXd& node_mask) {
    const auto n = adjacency.rows();
    if (adjacency.cols() != n || node_mask.size() != n) throw InvalidArgument("gcn_normalize: shape mismatch");
    Eigen::MatrixXd a = adjacency;
    a.array().colwise() *= node_mask.array();
    a.array().rowwise() *= node_mask.transpose().array();
    a.diagonal() += node_mask;
    const Eigen::VectorXd degree = a.rowwise().sum();
    Eigen::VectorXd inv_sqrt = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i)
        if (degree(i) > 0.0) inv_sqrt(i) = 1.0 / std::sqrt(degree(i));
    return inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
}

Eigen::VectorXd time_embedding(int t, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw InvalidArgument("time embedding width must be a positive even number");
    const int half = dim / 2;
    Eigen::VectorXd e(dim);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        e(i) = std::sin(static_cast<double>(t) * freq);
        e(half + i) = std::cos(static_cast<double>(t) * freq);
    }
    return e;
}

// ---------------------------------------------------------------------------
// GCN encoder

GcnEncoder::GcnEncoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) { build_layout(seed); }

GcnEncoder::GcnEncoder(const EncoderConfig& config, ParamSet params) : config_(config) {
    build_layout(0);
    if (!params_.same_layout(params)) throw InvalidArgument("encoder parameters do not match the configuration");
    params_ = std::move(params);
}

void GcnEncoder::build_layout(std::uint64_t seed) {
    if (config_.in_features < 1 || config_.layers < 1 || config_.hidden < 1 || config_.out < 1) {
        throw InvalidArgument("encoder dimensions must be positive");
    }
    layers_.clear();
    params_ = ParamSet{};
    int width = config_.in_features;
    for (int l = 0; l < config_.layers; ++l) {
        const int out = l + 1 == config_.layers ? config_.out : config_.hidden;
        layers_.push_back(Linear::create(params_, "encoder.gcn" + std::to_string(l), width, out,
                                         derive_seed(seed, {1, static_cast<std::uint64_t>(l)})));
        width = out;
    }
}

Eigen::VectorXd GcnEncoder::encode(const data::PaddedGraph& graph) const {
    Tape tape;
    return forward(graph, tape);
}

Eigen::VectorXd GcnEncoder::forward(const data::PaddedGraph& graph, Tape& tape) const {
    const int n = graph.n_nodes;
    if (n < 1) throw InvalidArgument("cannot encode a graph without nodes");
    if (graph.features.cols() != config_.in_features) {
        throw InvalidArgument("feature width " + std::to_string(graph.features.cols()) + " does not match encoder input " +
                              std::to_string(config_.in_features));
    }
    tape.norm_adj = gcn_normalize(graph.adjacency, graph.node_mask).topLeftCorner(n, n);
    tape.inputs.clear();
    tape.pre_acts.clear();

    Eigen::MatrixXd h = graph.features.topRows(n);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        tape.inputs.push_back(h);
        Eigen::MatrixXd z = tape.norm_adj * (h * params_[layer.weight].transpose());
        z.rowwise() += params_[layer.bias].col(0).transpose();
        tape.pre_acts.push_back(z);
        h = l + 1 < layers_.size() ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
    }
    return h.colwise().mean().transpose();
}

void GcnEncoder::backward(const Tape& tape, const Eigen::VectorXd& d_out, ParamSet& grads) const {
    const auto n = tape.norm_adj.rows();
    Eigen::MatrixXd d_h = Eigen::MatrixXd::Ones(n, 1) * (d_out.transpose() / static_cast<double>(n));
    for (std::size_t k = layers_.size(); k-- > 0;) {
        const auto& layer = layers_[k];
        const auto& z = tape.pre_acts[k];
        Eigen::MatrixXd d_z = k + 1 < layers_.size() ? Eigen::MatrixXd(d_h.cwiseProduct(
                                                           (z.array() > 0.0).cast<double>().matrix()))
                                                     : d_h;
        const Eigen::MatrixXd agg = tape.norm_adj * tape.inputs[k];
        grads[layer.weight].noalias() += d_z.transpose() * agg;
        grads[layer.bias].col(0) += d_z.colwise().sum().transpose();
        if (k > 0) d_h = tape.norm_adj.transpose() * (d_z * params_[layer.weight]);
    }
}

// ---------------------------------------------------------------------------
// Residual block

ResBlock ResBlock::create(ParamSet& params, const std::string& name, int in, int out, int cond_width,
                          std::uint64_t seed) {
    ResBlock b;
    b.conv1 = Conv2d::create(params, name + ".conv1", in, out, 3, derive_seed(seed, {1}));
    b.cond_proj = Linear::create(params, name + ".cond", cond_width, out, derive_seed(seed, {2}));
    b.conv2 = Conv2d::create(params, name + ".conv2", out, out, 3, derive_seed(seed, {3}));
    b.has_skip = in != out;
    if (b.has_skip) b.skip = Conv2d::create(params, name + ".skip", in, out, 1, derive_seed(seed, {4}));
    return b;
}

FeatureMap ResBlock::forward(const ParamSet& p, const FeatureMap& x, const Eigen::VectorXd& cond,
                             const Eigen::RowVectorXd& mask, Cache& cache) const {
    cache.x = x;
    FeatureMap h = conv1.forward(p, silu(x));
    h.data.colwise() += cond_proj.forward(p, cond);
    apply_mask(h, mask);
    FeatureMap out = conv2.forward(p, silu(h));
    cache.h = std::move(h);
    if (has_skip) {
        out.data += skip.forward(p, x).data;
    } else {
        out.data += x.data;
    }
    apply_mask(out, mask);
    return out;
}

FeatureMap ResBlock::backward(const ParamSet& p, const Cache& cache, const FeatureMap& d_out,
                              const Eigen::VectorXd& cond, const Eigen::RowVectorXd& mask, Eigen::VectorXd& d_cond,
                              ParamSet& grads) const {
    FeatureMap d = d_out;
    apply_mask(d, mask);
    FeatureMap d_h = silu_backward(cache.h, conv2.backward(p, silu(cache.h), d, grads));
    apply_mask(d_h, mask);
    const Eigen::VectorXd d_proj = d_h.data.rowwise().sum();
    d_cond += cond_proj.backward(p, cond, d_proj, grads);
    FeatureMap d_x = silu_backward(cache.x, conv1.backward(p, silu(cache.x), d_h, grads));
    if (has_skip) {
        d_x.data += skip.backward(p, cache.x, d, grads).data;
    } else {
        d_x.data += d.data;
    }
    return d_x;
}

// ---------------------------------------------------------------------------
// Denoiser

Denoiser::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) { build_layout(seed); }

Denoiser::Denoiser(const DenoiserConfig& config, ParamSet params) : config_(config) {
    build_layout(0);
    if (!params_.same_layout(params)) throw InvalidArgument("denoiser parameters do not match the configuration");
    params_ = std::move(params);
}

void Denoiser::build_layout(std::uint64_t seed) {
    const int levels = config_.levels();
    if (levels < 1) throw InvalidArgument("denoiser needs at least one level");
    if (config_.n_max < 1 || config_.n_max % (1 << levels) != 0) {
        throw InvalidArgument("N_max " + std::to_string(config_.n_max) + " must be a positive multiple of 2^" +
                              std::to_string(levels));
    }
    for (int w : config_.widths)
        if (w < 1) throw InvalidArgument("channel widths must be positive");
    if (config_.time_hidden < 1 || config_.cond_dim < 1 || config_.tap_dim < 1) {
        throw InvalidArgument("denoiser dimensions must be positive");
    }

    params_ = ParamSet{};
    down_.clear();
    up_.clear();
    const int cond_width = config_.time_hidden + config_.cond_dim;
    std::uint64_t k = 0;
    auto next_seed = [&] { return derive_seed(seed, {2, k++}); };

    time1_ = Linear::create(params_, "denoiser.time1", config_.time_dim, config_.time_hidden, next_seed());
    time2_ = Linear::create(params_, "denoiser.time2", config_.time_hidden, config_.time_hidden, next_seed());
    const auto& w = config_.widths;
    stem_ = Conv2d::create(params_, "denoiser.stem", 1, w[0], 3, next_seed());
    for (int l = 0; l < levels; ++l) {
        const int in = l == 0 ? w[0] : w[static_cast<std::size_t>(l - 1)];
        down_.push_back(ResBlock::create(params_, "denoiser.down" + std::to_string(l), in,
                                         w[static_cast<std::size_t>(l)], cond_width, next_seed()));
    }
    const int deepest = w.back();
    mid_ = ResBlock::create(params_, "denoiser.mid", deepest, deepest, cond_width, next_seed());
    tap_ = Linear::create(params_, "denoiser.tap", deepest, config_.tap_dim, next_seed());
    up_.resize(static_cast<std::size_t>(levels));
    for (int l = levels - 1; l >= 0; --l) {
        const int below = l == levels - 1 ? deepest : w[static_cast<std::size_t>(l + 1)];
        up_[static_cast<std::size_t>(l)] =
            ResBlock::create(params_, "denoiser.up" + std::to_string(l), below + w[static_cast<std::size_t>(l)],
                             w[static_cast<std::size_t>(l)], cond_width, next_seed());
    }
    head_ = Conv2d::create(params_, "denoiser.head", w[0], 1, 3, next_seed(), config_.zero_init_head);
}

DenoiserOutput Denoiser::denoise(const diffusion::NoisyAdjacency& noisy, const Eigen::VectorXd& node_mask,
                                 const Eigen::VectorXd& z_enc) const {
    Tape tape;
    return forward(noisy, node_mask, z_enc, tape);
}

DenoiserOutput Denoiser::forward(const diffusion::NoisyAdjacency& noisy, const Eigen::VectorXd& node_mask,
                                 const Eigen::VectorXd& z_enc, Tape& tape) const {
    const int n = config_.n_max;
    if (noisy.bits.rows() != n || noisy.bits.cols() != n || noisy.edge_mask.rows() != n ||
        noisy.edge_mask.cols() != n || node_mask.size() != n) {
        throw InvalidArgument("denoiser expects " + std::to_string(n) + "x" + std::to_string(n) + " inputs");
    }
    if (z_enc.size() != config_.cond_dim) throw InvalidArgument("conditioning vector width mismatch");
    if (noisy.t < 0) throw InvalidArgument("negative timestep");
    const int levels = config_.levels();

    tape.masks.assign(1, Eigen::RowVectorXd(static_cast<Eigen::Index>(n) * n));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) tape.masks[0](static_cast<Eigen::Index>(i) * n + j) = node_mask(i) * node_mask(j);
    for (int l = 0; l < levels; ++l) tape.masks.push_back(pool_mask(tape.masks.back(), n >> l));

    tape.time_emb = time_embedding(noisy.t, config_.time_dim);
    tape.time_pre1 = time1_.forward(params_, tape.time_emb);
    tape.time_hidden = silu(tape.time_pre1);
    tape.time_pre2 = time2_.forward(params_, tape.time_hidden);
    tape.cond.resize(config_.time_hidden + config_.cond_dim);
    tape.cond << silu(tape.time_pre2), z_enc;

    tape.input = FeatureMap::zeros(1, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) tape.input.data(0, static_cast<Eigen::Index>(i) * n + j) = noisy.bits(i, j);

    FeatureMap h = stem_.forward(params_, tape.input);
    apply_mask(h, tape.masks[0]);
    tape.stem_out = h;

    tape.down.assign(static_cast<std::size_t>(levels), {});
    tape.skips.assign(static_cast<std::size_t>(levels), {});
    for (int l = 0; l < levels; ++l) {
        const auto li = static_cast<std::size_t>(l);
        h = down_[li].forward(params_, h, tape.cond, tape.masks[li], tape.down[li]);
        tape.skips[li] = h;
        h = avg_pool2(h);
    }
    h = mid_.forward(params_, h, tape.cond, tape.masks[static_cast<std::size_t>(levels)], tape.mid);
    tape.mid_out = h;
    tape.tap_pool = masked_mean(h, tape.masks[static_cast<std::size_t>(levels)]);

    DenoiserOutput out;
    out.h_int = tap_.forward(params_, tape.tap_pool);

    tape.up.assign(static_cast<std::size_t>(levels), {});
    for (int l = levels - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        FeatureMap u = upsample2(h);
        apply_mask(u, tape.masks[li]);
        h = up_[li].forward(params_, concat_channels(u, tape.skips[li]), tape.cond, tape.masks[li], tape.up[li]);
    }
    tape.head_in = h;
    const FeatureMap logits = head_.forward(params_, silu(h));

    Eigen::MatrixXd l(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) l(i, j) = logits.data(0, static_cast<Eigen::Index>(i) * n + j);
    const Eigen::MatrixXd sym = 0.5 * (l + l.transpose());
    tape.raw_probs = sym.unaryExpr(&sigmoid);
    tape.edge_mask = noisy.edge_mask;
    out.x0_probs = tape.raw_probs.cwiseProduct(noisy.edge_mask);
    return out;
}

Eigen::VectorXd Denoiser::backward(const Tape& tape, const Eigen::MatrixXd& d_probs, const Eigen::VectorXd& d_h_int,
                                   ParamSet& grads) const {
    const int n = config_.n_max;
    const int levels = config_.levels();
    if (d_probs.rows() != n || d_probs.cols() != n) throw InvalidArgument("gradient shape mismatch");

    const Eigen::MatrixXd d_sym =
        d_probs.cwiseProduct(tape.edge_mask)
            .cwiseProduct(tape.raw_probs.cwiseProduct((1.0 - tape.raw_probs.array()).matrix()));
    const Eigen::MatrixXd d_logit = 0.5 * (d_sym + d_sym.transpose());
    FeatureMap d_head = FeatureMap::zeros(1, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) d_head.data(0, static_cast<Eigen::Index>(i) * n + j) = d_logit(i, j);

    Eigen::VectorXd d_cond = Eigen::VectorXd::Zero(tape.cond.size());
    FeatureMap d_h = silu_backward(tape.head_in, head_.backward(params_, silu(tape.head_in), d_head, grads));

    std::vector<FeatureMap> d_skips(static_cast<std::size_t>(levels));
    for (int l = 0; l < levels; ++l) {
        const auto li = static_cast<std::size_t>(l);
        const FeatureMap d_cat = up_[li].backward(params_, tape.up[li], d_h, tape.cond, tape.masks[li], d_cond, grads);
        const int below = d_cat.channels - config_.widths[li];
        FeatureMap d_u{below, d_cat.side, d_cat.data.topRows(below)};
        d_skips[li] = FeatureMap{config_.widths[li], d_cat.side, d_cat.data.bottomRows(config_.widths[li])};
        apply_mask(d_u, tape.masks[li]);
        d_h = upsample2_backward(d_u);
    }

    const auto deepest = static_cast<std::size_t>(levels);
    if (d_h_int.size() > 0) {
        const Eigen::VectorXd d_pool = tap_.backward(params_, tape.tap_pool, d_h_int, grads);
        d_h.data += masked_mean_backward(d_pool, tape.masks[deepest], tape.mid_out.side).data;
    }
    d_h = mid_.backward(params_, tape.mid, d_h, tape.cond, tape.masks[deepest], d_cond, grads);

    for (int l = levels - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        d_h = avg_pool2_backward(d_h);
        d_h.data += d_skips[li].data;
        d_h = down_[li].backward(params_, tape.down[li], d_h, tape.cond, tape.masks[li], d_cond, grads);
    }
    apply_mask(d_h, tape.masks[0]);
    stem_.backward(params_, tape.input, d_h, grads);

    const Eigen::VectorXd d_time = silu_backward(tape.time_pre2, d_cond.head(config_.time_hidden));
    const Eigen::VectorXd d_hidden = time2_.backward(params_, tape.time_hidden, d_time, grads);
    time1_.backward(params_, tape.time_emb, silu_backward(tape.time_pre1, d_hidden), grads);
    return d_cond.tail(config_.cond_dim);
}

}  // namespace ddgae::nn
