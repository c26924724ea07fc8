#include "ddgae/nn_core.hpp"

#include <cmath>

#include "ddgae/errors.hpp"
#include "ddgae/rng.hpp"

namespace ddgae::nn {

std::size_t ParamSet::add(std::string name, Eigen::MatrixXd value) {
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
    return tensors_.size() - 1;
}

std::size_t ParamSet::scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
    return n;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (std::size_t i = 0; i < tensors_.size(); ++i)
        out.add(names_[i], Eigen::MatrixXd::Zero(tensors_[i].rows(), tensors_[i].cols()));
    return out;
}

void ParamSet::set_zero() {
    for (auto& t : tensors_) t.setZero();
}

void ParamSet::add_scaled(const ParamSet& other, double scale) {
    for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i] += scale * other.tensors_[i];
}

void ParamSet::scale(double factor) {
    for (auto& t : tensors_) t *= factor;
}

double ParamSet::squared_norm() const {
    double s = 0.0;
    for (const auto& t : tensors_) s += t.squaredNorm();
    return s;
}

bool ParamSet::all_finite() const {
    for (const auto& t : tensors_)
        if (!t.allFinite()) return false;
    return true;
}

bool ParamSet::same_layout(const ParamSet& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        if (names_[i] != other.names_[i] || tensors_[i].rows() != other.tensors_[i].rows() ||
            tensors_[i].cols() != other.tensors_[i].cols())
            return false;
    }
    return true;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
    if (!a.same_layout(b)) return false;
    for (std::size_t i = 0; i < a.tensors_.size(); ++i)
        if (a.tensors_[i] != b.tensors_[i]) return false;
    return true;
}

Eigen::MatrixXd fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, std::uint64_t seed) {
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
    return m;
}

Linear Linear::create(ParamSet& params, const std::string& name, int in, int out, std::uint64_t seed, bool zero_init) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = params.add(name + ".weight",
                          zero_init ? Eigen::MatrixXd::Zero(out, in) : fan_in_uniform(out, in, in, seed));
    l.bias = params.add(name + ".bias", Eigen::MatrixXd::Zero(out, 1));
    return l;
}

Eigen::VectorXd Linear::forward(const ParamSet& p, const Eigen::VectorXd& x) const {
    if (x.size() != in) throw InvalidArgument("linear layer input width mismatch");
    return p[weight] * x + p[bias].col(0);
}

Eigen::VectorXd Linear::backward(const ParamSet& p, const Eigen::VectorXd& x, const Eigen::VectorXd& d_out,
                                 ParamSet& grads) const {
    grads[weight].noalias() += d_out * x.transpose();
    grads[bias].col(0) += d_out;
    return p[weight].transpose() * d_out;
}

FeatureMap FeatureMap::zeros(int channels, int side) {
    return {channels, side, MapData::Zero(channels, static_cast<Eigen::Index>(side) * side)};
}

namespace {

/// out(c, y, x) = in(c, y + dy, x + dx), zero outside.
void shift_into(const MapData& in, int side, int dy, int dx, MapData& out) {
    out.setZero(in.rows(), in.cols());
    const int x_lo = std::max(0, -dx);
    const int x_hi = std::min(side, side - dx);
    if (x_hi <= x_lo) return;
    const int width = x_hi - x_lo;
    for (int y = std::max(0, -dy); y < std::min(side, side - dy); ++y) {
        const Eigen::Index dst = static_cast<Eigen::Index>(y) * side + x_lo;
        const Eigen::Index src = static_cast<Eigen::Index>(y + dy) * side + x_lo + dx;
        out.middleCols(dst, width) = in.middleCols(src, width);
    }
}

/// Adjoint of shift_into: acc(c, y + dy, x + dx) += d(c, y, x).
void shift_accumulate(const MapData& d, int side, int dy, int dx, MapData& acc) {
    const int x_lo = std::max(0, -dx);
    const int x_hi = std::min(side, side - dx);
    if (x_hi <= x_lo) return;
    const int width = x_hi - x_lo;
    for (int y = std::max(0, -dy); y < std::min(side, side - dy); ++y) {
        const Eigen::Index src = static_cast<Eigen::Index>(y) * side + x_lo;
        const Eigen::Index dst = static_cast<Eigen::Index>(y + dy) * side + x_lo + dx;
        acc.middleCols(dst, width) += d.middleCols(src, width);
    }
}

}  // namespace

Conv2d Conv2d::create(ParamSet& params, const std::string& name, int in, int out, int kernel, std::uint64_t seed,
                      bool zero_init) {
    if (kernel != 1 && kernel != 3) throw InvalidArgument("only 1x1 and 3x3 kernels are supported");
    Conv2d c;
    c.in = in;
    c.out = out;
    c.kernel = kernel;
    const int taps = kernel * kernel;
    c.weight = params.add(name + ".weight", zero_init ? Eigen::MatrixXd::Zero(out, taps * in)
                                                      : fan_in_uniform(out, taps * in, taps * in, seed));
    c.bias = params.add(name + ".bias", Eigen::MatrixXd::Zero(out, 1));
    return c;
}

FeatureMap Conv2d::forward(const ParamSet& p, const FeatureMap& x) const {
    if (x.channels != in) throw InvalidArgument("conv input channel mismatch");
    FeatureMap y{out, x.side, MapData(out, x.pixels())};
    y.data.colwise() = p[bias].col(0);
    const auto& w = p[weight];
    if (kernel == 1) {
        y.data.noalias() += w * x.data;
        return y;
    }
    MapData shifted;
    int o = 0;
    for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx, ++o) {
            shift_into(x.data, x.side, dy, dx, shifted);
            y.data.noalias() += w.middleCols(static_cast<Eigen::Index>(o) * in, in) * shifted;
        }
    }
    return y;
}

FeatureMap Conv2d::backward(const ParamSet& p, const FeatureMap& x, const FeatureMap& d_out, ParamSet& grads) const {
    const auto& w = p[weight];
    auto& dw = grads[weight];
    grads[bias].col(0) += d_out.data.rowwise().sum().transpose();
    FeatureMap dx = FeatureMap::zeros(in, x.side);
    if (kernel == 1) {
        dw.noalias() += d_out.data * x.data.transpose();
        dx.data.noalias() = w.transpose() * d_out.data;
        return dx;
    }
    MapData shifted;
    MapData d_shifted;
    int o = 0;
    for (int dy = -1; dy <= 1; ++dy) {
        for (int dx_off = -1; dx_off <= 1; ++dx_off, ++o) {
            const auto cols = static_cast<Eigen::Index>(o) * in;
            shift_into(x.data, x.side, dy, dx_off, shifted);
            dw.middleCols(cols, in).noalias() += d_out.data * shifted.transpose();
            d_shifted.noalias() = w.middleCols(cols, in).transpose() * d_out.data;
            shift_accumulate(d_shifted, x.side, dy, dx_off, dx.data);
        }
    }
    return dx;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace {

double silu_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

}  // namespace

FeatureMap silu(const FeatureMap& x) {
    FeatureMap y{x.channels, x.side, x.data.unaryExpr([](double v) { return v * sigmoid(v); })};
    return y;
}

FeatureMap silu_backward(const FeatureMap& x, const FeatureMap& d_out) {
    return {x.channels, x.side, d_out.data.cwiseProduct(x.data.unaryExpr(&silu_grad))};
}

Eigen::VectorXd silu(const Eigen::VectorXd& x) {
    return x.unaryExpr([](double v) { return v * sigmoid(v); });
}

Eigen::VectorXd silu_backward(const Eigen::VectorXd& x, const Eigen::VectorXd& d_out) {
    return d_out.cwiseProduct(x.unaryExpr(&silu_grad));
}

void apply_mask(FeatureMap& x, const Eigen::RowVectorXd& mask) {
    if (mask.size() != x.pixels()) throw InvalidArgument("mask size does not match feature map");
    x.data.array().rowwise() *= mask.array();
}

FeatureMap avg_pool2(const FeatureMap& x) {
    if (x.side % 2 != 0) throw InvalidArgument("average pooling needs an even side");
    const int half = x.side / 2;
    FeatureMap y = FeatureMap::zeros(x.channels, half);
    for (int c = 0; c < x.channels; ++c) {
        for (int r = 0; r < half; ++r) {
            for (int q = 0; q < half; ++q) {
                const auto base = static_cast<Eigen::Index>(2 * r) * x.side + 2 * q;
                y.data(c, static_cast<Eigen::Index>(r) * half + q) =
                    0.25 * (x.data(c, base) + x.data(c, base + 1) + x.data(c, base + x.side) +
                            x.data(c, base + x.side + 1));
            }
        }
    }
    return y;
}

FeatureMap avg_pool2_backward(const FeatureMap& d_out) {
    const int side = d_out.side * 2;
    FeatureMap dx = FeatureMap::zeros(d_out.channels, side);
    for (int c = 0; c < d_out.channels; ++c) {
        for (int r = 0; r < d_out.side; ++r) {
            for (int q = 0; q < d_out.side; ++q) {
                const double g = 0.25 * d_out.data(c, static_cast<Eigen::Index>(r) * d_out.side + q);
                const auto base = static_cast<Eigen::Index>(2 * r) * side + 2 * q;
                dx.data(c, base) = g;
                dx.data(c, base + 1) = g;
                dx.data(c, base + side) = g;
                dx.data(c, base + side + 1) = g;
            }
        }
    }
    return dx;
}

FeatureMap upsample2(const FeatureMap& x) {
    const int side = x.side * 2;
    FeatureMap y = FeatureMap::zeros(x.channels, side);
    for (int c = 0; c < x.channels; ++c) {
        for (int r = 0; r < side; ++r) {
            for (int q = 0; q < side; ++q) {
                y.data(c, static_cast<Eigen::Index>(r) * side + q) =
                    x.data(c, static_cast<Eigen::Index>(r / 2) * x.side + q / 2);
            }
        }
    }
    return y;
}

FeatureMap upsample2_backward(const FeatureMap& d_out) {
    const int half = d_out.side / 2;
    FeatureMap dx = FeatureMap::zeros(d_out.channels, half);
    for (int c = 0; c < d_out.channels; ++c) {
        for (int r = 0; r < d_out.side; ++r) {
            for (int q = 0; q < d_out.side; ++q) {
                dx.data(c, static_cast<Eigen::Index>(r / 2) * half + q / 2) +=
                    d_out.data(c, static_cast<Eigen::Index>(r) * d_out.side + q);
            }
        }
    }
    return dx;
}

Eigen::RowVectorXd pool_mask(const Eigen::RowVectorXd& mask, int side) {
    const int half = side / 2;
    Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(half) * half);
    for (int r = 0; r < half; ++r) {
        for (int q = 0; q < half; ++q) {
            const auto base = static_cast<Eigen::Index>(2 * r) * side + 2 * q;
            const bool live = mask(base) != 0.0 || mask(base + 1) != 0.0 || mask(base + side) != 0.0 ||
                              mask(base + side + 1) != 0.0;
            out(static_cast<Eigen::Index>(r) * half + q) = live ? 1.0 : 0.0;
        }
    }
    return out;
}

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
    if (a.side != b.side) throw InvalidArgument("concat of maps with different sides");
    FeatureMap y{a.channels + b.channels, a.side, MapData(a.channels + b.channels, a.pixels())};
    y.data.topRows(a.channels) = a.data;
    y.data.bottomRows(b.channels) = b.data;
    return y;
}

Eigen::VectorXd masked_mean(const FeatureMap& x, const Eigen::RowVectorXd& mask) {
    const double count = mask.sum();
    if (count <= 0.0) throw InvalidArgument("masked mean over an empty mask");
    return (x.data * mask.transpose()) / count;
}

FeatureMap masked_mean_backward(const Eigen::VectorXd& d_out, const Eigen::RowVectorXd& mask, int side) {
    const double count = mask.sum();
    FeatureMap dx{static_cast<int>(d_out.size()), side, (d_out * mask) / count};
    return dx;
}

}  // namespace ddgae::nn
