#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace ddgae::svm {

/// K(a, b) = exp(-gamma |a - b|^2) between the rows of `a` and `b`.
Eigen::MatrixXd rbf_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double gamma);

/// gamma = 1 / (2 sigma^2) with sigma the median pairwise distance between
/// rows. Falls back to 1 / d when all rows coincide.
double median_heuristic_gamma(const Eigen::MatrixXd& x);

/// Per-feature z-scoring fitted on one split. Constant features get unit
/// scale.
struct Standardizer {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd scale;

    static Standardizer fit(const Eigen::MatrixXd& x);
    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;

    friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

struct SmoOptions {
    double tolerance = 1e-3;
    std::int64_t max_iterations = 0;  // 0 -> max(10^5, 100 n)
};

/// Binary C-SVC dual solution. `coef` holds alpha_i y_i for every training
/// row (zero for non-support vectors).
struct SvmModel {
    Eigen::VectorXd coef;
    double rho = 0.0;
    std::int64_t iterations = 0;
    bool converged = false;
};

/// SMO with second-order working-set selection on a precomputed training
/// kernel. Labels are +1 / -1.
SvmModel fit(const Eigen::MatrixXd& kernel, std::span<const int> y, double c, const SmoOptions& options = {});

/// Decision values for rows of K(test, train).
Eigen::VectorXd decision(const SvmModel& model, const Eigen::MatrixXd& kernel_test_train);

}  // namespace ddgae::svm
