#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ddgae::nn {

/// Named, ordered collection of parameter tensors. Layers refer to entries
/// by index, so a gradient buffer is simply another ParamSet of equal shape.
class ParamSet {
public:
    std::size_t add(std::string name, Eigen::MatrixXd value);

    std::size_t size() const noexcept { return tensors_.size(); }
    std::size_t scalar_count() const noexcept;

    Eigen::MatrixXd& operator[](std::size_t i) { return tensors_[i]; }
    const Eigen::MatrixXd& operator[](std::size_t i) const { return tensors_[i]; }
    const std::string& name(std::size_t i) const { return names_[i]; }

    ParamSet zeros_like() const;
    void set_zero();
    /// this += scale * other
    void add_scaled(const ParamSet& other, double scale);
    void scale(double factor);
    double squared_norm() const;
    bool all_finite() const;
    bool same_layout(const ParamSet& other) const;

    friend bool operator==(const ParamSet& a, const ParamSet& b);

private:
    std::vector<std::string> names_;
    std::vector<Eigen::MatrixXd> tensors_;
};

/// Parameter initialisation: uniform in +-1/sqrt(fan_in).
Eigen::MatrixXd fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, std::uint64_t seed);

/// y = W x + b with W of shape (out, in).
struct Linear {
    std::size_t weight = 0;
    std::size_t bias = 0;
    int in = 0;
    int out = 0;

    static Linear create(ParamSet& params, const std::string& name, int in, int out, std::uint64_t seed,
                         bool zero_init = false);

    Eigen::VectorXd forward(const ParamSet& p, const Eigen::VectorXd& x) const;
    /// Accumulates parameter gradients, returns dL/dx.
    Eigen::VectorXd backward(const ParamSet& p, const Eigen::VectorXd& x, const Eigen::VectorXd& d_out,
                             ParamSet& grads) const;
};

using MapData = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Square multi-channel grid; row c holds channel c flattened row-major.
struct FeatureMap {
    int channels = 0;
    int side = 0;
    MapData data;

    static FeatureMap zeros(int channels, int side);
    Eigen::Index pixels() const { return static_cast<Eigen::Index>(side) * side; }
};

/// Same-padded square convolution (kernel 1 or 3) with per-channel bias.
/// Weight shape is (out, k*k*in); the column block for kernel offset o
/// is [o*in, (o+1)*in).
struct Conv2d {
    std::size_t weight = 0;
    std::size_t bias = 0;
    int in = 0;
    int out = 0;
    int kernel = 3;

    static Conv2d create(ParamSet& params, const std::string& name, int in, int out, int kernel, std::uint64_t seed,
                         bool zero_init = false);

    FeatureMap forward(const ParamSet& p, const FeatureMap& x) const;
    FeatureMap backward(const ParamSet& p, const FeatureMap& x, const FeatureMap& d_out, ParamSet& grads) const;
};

double sigmoid(double x);

FeatureMap silu(const FeatureMap& x);
/// d_out * silu'(x)
FeatureMap silu_backward(const FeatureMap& x, const FeatureMap& d_out);
Eigen::VectorXd silu(const Eigen::VectorXd& x);
Eigen::VectorXd silu_backward(const Eigen::VectorXd& x, const Eigen::VectorXd& d_out);

/// Multiplies every channel by a side x side 0/1 mask (row-major flattened).
void apply_mask(FeatureMap& x, const Eigen::RowVectorXd& mask);

/// 2x2 average pooling; side must be even.
FeatureMap avg_pool2(const FeatureMap& x);
FeatureMap avg_pool2_backward(const FeatureMap& d_out);
/// 2x nearest-neighbour upsampling.
FeatureMap upsample2(const FeatureMap& x);
FeatureMap upsample2_backward(const FeatureMap& d_out);
/// A coarse cell is live when any of its four children is.
Eigen::RowVectorXd pool_mask(const Eigen::RowVectorXd& mask, int side);

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b);

/// Per-channel mean over cells where mask is 1.
Eigen::VectorXd masked_mean(const FeatureMap& x, const Eigen::RowVectorXd& mask);
FeatureMap masked_mean_backward(const Eigen::VectorXd& d_out, const Eigen::RowVectorXd& mask, int side);

}  // namespace ddgae::nn
