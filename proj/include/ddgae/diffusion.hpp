#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace ddgae::diffusion {

/// Probabilities are clamped into [kProbClamp, 1 - kProbClamp] before any
/// logarithm is taken.
inline constexpr double kProbClamp = 1e-12;

enum class ScheduleKind { absorbing_linear };

ScheduleKind parse_schedule_kind(std::string_view name);
std::string_view to_string(ScheduleKind kind);

/// Per-step deletion probabilities beta_t (t = 1..T) and cumulative survival
/// alpha_bar_t (t = 0..T) of the absorbing edge process. State 0 (no edge)
/// is absorbing; an edge present at t-1 is deleted at step t with
/// probability beta_t.
class NoiseSchedule {
public:
    static NoiseSchedule build(int steps, ScheduleKind kind = ScheduleKind::absorbing_linear);

    /// Rebuilds a schedule from stored betas, recomputing alpha_bar.
    static NoiseSchedule from_betas(std::vector<double> betas);

    int steps() const noexcept { return static_cast<int>(beta_.size()); }
    double beta(int t) const;
    double alpha_bar(int t) const;

    std::span<const double> betas() const noexcept { return beta_; }
    std::span<const double> alpha_bars() const noexcept { return alpha_bar_; }

    friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

private:
    explicit NoiseSchedule(std::vector<double> betas);

    std::vector<double> beta_;       // index t-1
    std::vector<double> alpha_bar_;  // index t, alpha_bar_[0] == 1
};

struct EdgePosterior {
    double p_prev_one = 0.0;
};

/// q(x_t = 1 | x_0 = a0).
double forward_marginal(bool a0, int t, const NoiseSchedule& schedule);

/// q(x_{t-1} = 1 | x_t = a_t, x_0 = a0). Throws InconsistentState when
/// a_t = 1 and a0 = 0.
EdgePosterior true_posterior(bool a_t, bool a0, int t, const NoiseSchedule& schedule);

/// p(x_{t-1} = 1 | x_t) assembled from a predicted p(x_0 = 1 | x_t) by
/// mixing the two true posteriors.
EdgePosterior model_reverse(double x0_prob, bool a_t, int t, const NoiseSchedule& schedule);

/// KL(Bern(p) || Bern(q)) with q clamped; zero when p == q exactly.
double bernoulli_kl(double p, double q);

/// Per-edge L_{t-1} term for t >= 2, in nats.
double kl_edge(bool a0, double x0_prob, bool a_t, int t, const NoiseSchedule& schedule);
/// d kl_edge / d x0_prob, zero where the clamp is active.
double kl_edge_grad(bool a0, double x0_prob, bool a_t, int t, const NoiseSchedule& schedule);

/// Clamped Bernoulli negative log-likelihood of a0 under x0_prob.
double recon_edge(bool a0, double x0_prob);
double recon_edge_grad(bool a0, double x0_prob);

/// Symmetric 0/1 adjacency at diffusion time t. edge_mask marks slots that
/// belong to real (unpadded) node pairs; its diagonal is zero.
struct NoisyAdjacency {
    Eigen::MatrixXd bits;
    int t = 0;
    Eigen::MatrixXd edge_mask;
};

/// Samples A_t ~ q(A_t | A_0) on the strict upper triangle and mirrors it.
NoisyAdjacency corrupt(const NoisyAdjacency& clean, int t, const NoiseSchedule& schedule, std::uint64_t seed);

/// One forward transition A_{t-1} -> A_t.
NoisyAdjacency corrupt_step(const NoisyAdjacency& previous, const NoiseSchedule& schedule, std::uint64_t seed);

struct LossBreakdown {
    double l_vb_term = 0.0;  // L_{t-1} for t >= 2, L_0 for t = 1
    double aux_ce = 0.0;     // -log p~(x_0 | x_t)
    double lambda = 0.0;
    double total = 0.0;
    int t_sampled = 0;
};

/// Hybrid objective for one graph, averaged over the masked strict upper
/// triangle. When `grad` is non-null it receives d total / d x0_probs, which
/// is nonzero only on masked upper-triangle slots (callers mirror it).
LossBreakdown hybrid_loss(const Eigen::MatrixXd& clean, const NoisyAdjacency& noisy, const Eigen::MatrixXd& x0_probs,
                          double lambda, const NoiseSchedule& schedule, Eigen::MatrixXd* grad = nullptr);

}  // namespace ddgae::diffusion
