#include "ddgae/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ddgae/errors.hpp"

namespace ddgae::svm {

namespace {
constexpr double kTau = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

Eigen::MatrixXd rbf_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double gamma) {
    if (a.cols() != b.cols()) throw InvalidArgument("rbf_kernel: feature widths differ");
    const Eigen::VectorXd na = a.rowwise().squaredNorm();
    const Eigen::VectorXd nb = b.rowwise().squaredNorm();
    Eigen::MatrixXd d2 = (-2.0 * a * b.transpose()).colwise() + na;
    d2.rowwise() += nb.transpose();
    return (-gamma * d2.cwiseMax(0.0)).array().exp().matrix();
}

double median_heuristic_gamma(const Eigen::MatrixXd& x) {
    const auto n = x.rows();
    std::vector<double> d2;
    d2.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) d2.push_back((x.row(i) - x.row(j)).squaredNorm());
    if (d2.empty()) return 1.0 / static_cast<double>(std::max<Eigen::Index>(1, x.cols()));
    const auto mid = d2.begin() + static_cast<std::ptrdiff_t>(d2.size() / 2);
    std::nth_element(d2.begin(), mid, d2.end());
    const double median_sq = *mid;
    if (!(median_sq > 0.0)) return 1.0 / static_cast<double>(std::max<Eigen::Index>(1, x.cols()));
    return 1.0 / (2.0 * median_sq);
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& x) {
    if (x.rows() == 0) throw InvalidArgument("cannot standardise an empty split");
    Standardizer s;
    s.mean = x.colwise().mean();
    const Eigen::MatrixXd centred = x.rowwise() - s.mean;
    s.scale = (centred.colwise().squaredNorm() / static_cast<double>(x.rows())).cwiseSqrt();
    for (Eigen::Index j = 0; j < s.scale.size(); ++j)
        if (!(s.scale(j) > 1e-12)) s.scale(j) = 1.0;
    return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const {
    if (x.cols() != mean.size()) throw InvalidArgument("standardiser width mismatch");
    return (x.rowwise() - mean).array().rowwise() / scale.array();
}

SvmModel fit(const Eigen::MatrixXd& k, std::span<const int> y, double c, const SmoOptions& options) {
    const auto n = static_cast<Eigen::Index>(y.size());
    if (k.rows() != n || k.cols() != n) throw InvalidArgument("svm fit: kernel must be n x n");
    if (!(c > 0.0)) throw InvalidArgument("svm fit: C must be positive");
    for (int v : y)
        if (v != 1 && v != -1) throw InvalidArgument("svm fit: labels must be +1 or -1");

    auto yd = [&](Eigen::Index t) { return static_cast<double>(y[static_cast<std::size_t>(t)]); };
    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd grad = Eigen::VectorXd::Constant(n, -1.0);
    auto upper = [&](Eigen::Index t) { return alpha(t) >= c; };
    auto lower = [&](Eigen::Index t) { return alpha(t) <= 0.0; };

    const std::int64_t max_iter =
        options.max_iterations > 0 ? options.max_iterations : std::max<std::int64_t>(100000, 100 * n);
    SvmModel model;
    std::int64_t iter = 0;
    for (; iter < max_iter; ++iter) {
        double gmax = -kInf;
        Eigen::Index i = -1;
        for (Eigen::Index t = 0; t < n; ++t) {
            if (y[static_cast<std::size_t>(t)] == 1) {
                if (!upper(t) && -grad(t) >= gmax) gmax = -grad(t), i = t;
            } else if (!lower(t) && grad(t) >= gmax) {
                gmax = grad(t), i = t;
            }
        }
        double gmax2 = -kInf;
        double best = kInf;
        Eigen::Index j = -1;
        for (Eigen::Index t = 0; t < n; ++t) {
            if (y[static_cast<std::size_t>(t)] == 1) {
                if (lower(t)) continue;
                const double diff = gmax + grad(t);
                gmax2 = std::max(gmax2, grad(t));
                if (diff > 0.0 && i >= 0) {
                    const double quad = k(i, i) + k(t, t) - 2.0 * k(i, t) * yd(t);
                    const double obj = -diff * diff / (quad > 0.0 ? quad : kTau);
                    if (obj <= best) best = obj, j = t;
                }
            } else {
                if (upper(t)) continue;
                const double diff = gmax - grad(t);
                gmax2 = std::max(gmax2, -grad(t));
                if (diff > 0.0 && i >= 0) {
                    const double quad = k(i, i) + k(t, t) + 2.0 * k(i, t) * yd(t);
                    const double obj = -diff * diff / (quad > 0.0 ? quad : kTau);
                    if (obj <= best) best = obj, j = t;
                }
            }
        }
        if (i < 0 || j < 0 || gmax + gmax2 < options.tolerance) {
            model.converged = true;
            break;
        }

        const double qij = yd(i) * yd(j) * k(i, j);
        const double old_i = alpha(i);
        const double old_j = alpha(j);
        if (yd(i) != yd(j)) {
            double quad = k(i, i) + k(j, j) + 2.0 * qij;
            if (quad <= 0.0) quad = kTau;
            const double delta = (-grad(i) - grad(j)) / quad;
            const double diff = alpha(i) - alpha(j);
            alpha(i) += delta;
            alpha(j) += delta;
            if (diff > 0.0) {
                if (alpha(j) < 0.0) alpha(j) = 0.0, alpha(i) = diff;
            } else if (alpha(i) < 0.0) {
                alpha(i) = 0.0, alpha(j) = -diff;
            }
            if (diff > 0.0) {
                if (alpha(i) > c) alpha(i) = c, alpha(j) = c - diff;
            } else if (alpha(j) > c) {
                alpha(j) = c, alpha(i) = c + diff;
            }
        } else {
            double quad = k(i, i) + k(j, j) - 2.0 * qij;
            if (quad <= 0.0) quad = kTau;
            const double delta = (grad(i) - grad(j)) / quad;
            const double sum = alpha(i) + alpha(j);
            alpha(i) -= delta;
            alpha(j) += delta;
            if (sum > c) {
                if (alpha(i) > c) alpha(i) = c, alpha(j) = sum - c;
            } else if (alpha(j) < 0.0) {
                alpha(j) = 0.0, alpha(i) = sum;
            }
            if (sum > c) {
                if (alpha(j) > c) alpha(j) = c, alpha(i) = sum - c;
            } else if (alpha(i) < 0.0) {
                alpha(i) = 0.0, alpha(j) = sum;
            }
        }
        const double di = alpha(i) - old_i;
        const double dj = alpha(j) - old_j;
        // G_k += Q_ki di + Q_kj dj with Q_ab = y_a y_b K_ab
        for (Eigen::Index t = 0; t < n; ++t)
            grad(t) += yd(t) * (yd(i) * k(t, i) * di + yd(j) * k(t, j) * dj);
    }
    model.iterations = iter;

    double ub = kInf, lb = -kInf, sum_free = 0.0;
    int n_free = 0;
    for (Eigen::Index t = 0; t < n; ++t) {
        const double yg = yd(t) * grad(t);
        if (upper(t)) {
            if (yd(t) < 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else if (lower(t)) {
            if (yd(t) > 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else {
            ++n_free;
            sum_free += yg;
        }
    }
    model.rho = n_free > 0 ? sum_free / n_free : (ub + lb) / 2.0;
    model.coef.resize(n);
    for (Eigen::Index t = 0; t < n; ++t) model.coef(t) = alpha(t) * yd(t);
    return model;
}

Eigen::VectorXd decision(const SvmModel& model, const Eigen::MatrixXd& kt) {
    if (kt.cols() != model.coef.size()) throw InvalidArgument("svm decision: kernel width differs from training set");
    return (kt * model.coef).array() - model.rho;
}

}  // namespace ddgae::svm
