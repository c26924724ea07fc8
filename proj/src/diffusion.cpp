#include "ddgae/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ddgae/errors.hpp"
#include "ddgae/rng.hpp"

namespace ddgae::diffusion {

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

bool clamped(double p) { return p < kProbClamp || p > 1.0 - kProbClamp; }

void check_timestep(int t, int lo, const NoiseSchedule& s) {
    if (t < lo || t > s.steps()) {
        throw InvalidArgument("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                              std::to_string(s.steps()) + "]");
    }
}

void check_square(const Eigen::MatrixXd& m, Eigen::Index n, const char* what) {
    if (m.rows() != n || m.cols() != n) {
        throw InvalidArgument(std::string(what) + " has shape " + std::to_string(m.rows()) + "x" +
                              std::to_string(m.cols()) + ", expected " + std::to_string(n) + "x" + std::to_string(n));
    }
}

/// q(x_{t-1} = 1 | x_t = 0, x_0 = 1).
double deleted_edge_posterior(int t, const NoiseSchedule& s) {
    return s.beta(t) * s.alpha_bar(t - 1) / (1.0 - s.alpha_bar(t));
}

}  // namespace

ScheduleKind parse_schedule_kind(std::string_view name) {
    if (name == "absorbing_linear") return ScheduleKind::absorbing_linear;
    throw InvalidArgument("unknown schedule kind '" + std::string(name) + "'");
}

std::string_view to_string(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::absorbing_linear:
            return "absorbing_linear";
    }
    return "unknown";
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    alpha_bar_.resize(beta_.size() + 1);
    alpha_bar_[0] = 1.0;
    for (std::size_t t = 1; t <= beta_.size(); ++t) alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - beta_[t - 1]);
}

NoiseSchedule NoiseSchedule::build(int steps, ScheduleKind kind) {
    if (steps < 1) throw InvalidArgument("diffusion step count must be >= 1, got " + std::to_string(steps));
    std::vector<double> betas(static_cast<std::size_t>(steps));
    switch (kind) {
        case ScheduleKind::absorbing_linear:
            // Uniform absorption time: alpha_bar_t = (T - t) / T.
            for (int t = 1; t <= steps; ++t) betas[t - 1] = 1.0 / static_cast<double>(steps - t + 1);
            break;
    }
    NoiseSchedule s(std::move(betas));
    // Assign the closed form so the telescoping product is exact.
    if (kind == ScheduleKind::absorbing_linear) {
        for (int t = 0; t <= steps; ++t)
            s.alpha_bar_[t] = static_cast<double>(steps - t) / static_cast<double>(steps);
    }
    return s;
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    if (betas.empty()) throw InvalidArgument("schedule needs at least one step");
    for (double b : betas) {
        if (!(b > 0.0 && b <= 1.0)) throw InvalidArgument("beta outside (0, 1]: " + std::to_string(b));
    }
    if (betas.back() != 1.0) throw InvalidArgument("absorbing schedule must end with beta_T = 1");
    NoiseSchedule s(std::move(betas));
    // Recognise the uniform schedule and use its exact closed form.
    const int steps = s.steps();
    bool uniform = true;
    for (int t = 1; t <= steps && uniform; ++t) uniform = s.beta_[t - 1] == 1.0 / static_cast<double>(steps - t + 1);
    if (uniform) {
        for (int t = 0; t <= steps; ++t)
            s.alpha_bar_[t] = static_cast<double>(steps - t) / static_cast<double>(steps);
    }
    return s;
}

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > steps()) throw InvalidArgument("beta index out of range: " + std::to_string(t));
    return beta_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > steps()) throw InvalidArgument("alpha_bar index out of range: " + std::to_string(t));
    return alpha_bar_[static_cast<std::size_t>(t)];
}

double forward_marginal(bool a0, int t, const NoiseSchedule& schedule) {
    check_timestep(t, 0, schedule);
    return a0 ? schedule.alpha_bar(t) : 0.0;
}

EdgePosterior true_posterior(bool a_t, bool a0, int t, const NoiseSchedule& schedule) {
    check_timestep(t, 1, schedule);
    if (a_t && !a0) throw InconsistentState("edge present at t but absent at t=0; absorbing process never adds edges");
    if (a_t) return {1.0};
    if (!a0) return {0.0};
    return {deleted_edge_posterior(t, schedule)};
}

EdgePosterior model_reverse(double x0_prob, bool a_t, int t, const NoiseSchedule& schedule) {
    check_timestep(t, 1, schedule);
    if (a_t) return {1.0};
    // x0_prob * q(.|0, x0=1) + (1 - x0_prob) * q(.|0, x0=0), the second being 0.
    return {x0_prob * deleted_edge_posterior(t, schedule)};
}

double bernoulli_kl(double p, double q) {
    if (p == q) return 0.0;
    const double qc = clamp_prob(q);
    double kl = 0.0;
    if (p > 0.0) kl += p * std::log(p / qc);
    if (p < 1.0) kl += (1.0 - p) * std::log((1.0 - p) / (1.0 - qc));
    return kl;
}

double kl_edge(bool a0, double x0_prob, bool a_t, int t, const NoiseSchedule& schedule) {
    check_timestep(t, 2, schedule);
    const double q = true_posterior(a_t, a0, t, schedule).p_prev_one;
    const double m = model_reverse(x0_prob, a_t, t, schedule).p_prev_one;
    return bernoulli_kl(q, m);
}

double kl_edge_grad(bool a0, double x0_prob, bool a_t, int t, const NoiseSchedule& schedule) {
    check_timestep(t, 2, schedule);
    const double q = true_posterior(a_t, a0, t, schedule).p_prev_one;
    if (a_t) return 0.0;
    const double m = model_reverse(x0_prob, a_t, t, schedule).p_prev_one;
    if (m == q || clamped(m)) return 0.0;
    double d_m = 0.0;
    if (q > 0.0) d_m -= q / m;
    if (q < 1.0) d_m += (1.0 - q) / (1.0 - m);
    return d_m * deleted_edge_posterior(t, schedule);
}

double recon_edge(bool a0, double x0_prob) {
    if ((a0 && x0_prob == 1.0) || (!a0 && x0_prob == 0.0)) return 0.0;
    const double p = clamp_prob(x0_prob);
    return a0 ? -std::log(p) : -std::log(1.0 - p);
}

double recon_edge_grad(bool a0, double x0_prob) {
    if (clamped(x0_prob)) return 0.0;
    return a0 ? -1.0 / x0_prob : 1.0 / (1.0 - x0_prob);
}

NoisyAdjacency corrupt(const NoisyAdjacency& clean, int t, const NoiseSchedule& schedule, std::uint64_t seed) {
    if (clean.t != 0) throw InvalidArgument("corrupt expects a clean (t = 0) adjacency");
    check_timestep(t, 1, schedule);
    const auto n = clean.bits.rows();
    check_square(clean.bits, n, "adjacency");
    check_square(clean.edge_mask, n, "edge mask");

    const double keep = schedule.alpha_bar(t);
    Rng rng(seed);
    NoisyAdjacency out{Eigen::MatrixXd::Zero(n, n), t, clean.edge_mask};
    // Column-major over the upper triangle: the real-node block is visited
    // first, so extra padding never shifts its draws.
    for (Eigen::Index j = 1; j < n; ++j) {
        for (Eigen::Index i = 0; i < j; ++i) {
            const double u = rng.uniform();
            if (clean.edge_mask(i, j) != 0.0 && clean.bits(i, j) != 0.0 && u < keep) {
                out.bits(i, j) = 1.0;
                out.bits(j, i) = 1.0;
            }
        }
    }
    return out;
}

NoisyAdjacency corrupt_step(const NoisyAdjacency& previous, const NoiseSchedule& schedule, std::uint64_t seed) {
    const int t = previous.t + 1;
    check_timestep(t, 1, schedule);
    const auto n = previous.bits.rows();
    check_square(previous.bits, n, "adjacency");
    check_square(previous.edge_mask, n, "edge mask");

    const double drop = schedule.beta(t);
    Rng rng(seed);
    NoisyAdjacency out{Eigen::MatrixXd::Zero(n, n), t, previous.edge_mask};
    for (Eigen::Index j = 1; j < n; ++j) {
        for (Eigen::Index i = 0; i < j; ++i) {
            const double u = rng.uniform();
            if (previous.edge_mask(i, j) != 0.0 && previous.bits(i, j) != 0.0 && u >= drop) {
                out.bits(i, j) = 1.0;
                out.bits(j, i) = 1.0;
            }
        }
    }
    return out;
}

LossBreakdown hybrid_loss(const Eigen::MatrixXd& clean, const NoisyAdjacency& noisy, const Eigen::MatrixXd& x0_probs,
                          double lambda, const NoiseSchedule& schedule, Eigen::MatrixXd* grad) {
    const auto n = clean.rows();
    check_square(clean, n, "clean adjacency");
    check_square(noisy.bits, n, "noisy adjacency");
    check_square(noisy.edge_mask, n, "edge mask");
    check_square(x0_probs, n, "x0 probabilities");
    check_timestep(noisy.t, 1, schedule);
    if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be non-negative");

    const int t = noisy.t;
    double vb_sum = 0.0;
    double ce_sum = 0.0;
    std::size_t count = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (noisy.edge_mask(i, j) == 0.0) continue;
            ++count;
            const bool a0 = clean(i, j) != 0.0;
            const bool at = noisy.bits(i, j) != 0.0;
            const double p = x0_probs(i, j);
            vb_sum += t == 1 ? recon_edge(a0, p) : kl_edge(a0, p, at, t, schedule);
            ce_sum += recon_edge(a0, p);
        }
    }

    LossBreakdown out;
    out.lambda = lambda;
    out.t_sampled = t;
    if (count > 0) {
        out.l_vb_term = vb_sum / static_cast<double>(count);
        out.aux_ce = ce_sum / static_cast<double>(count);
    }
    out.total = out.l_vb_term + lambda * out.aux_ce;

    if (grad != nullptr) {
        grad->setZero(n, n);
        if (count > 0) {
            const double inv = 1.0 / static_cast<double>(count);
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index j = i + 1; j < n; ++j) {
                    if (noisy.edge_mask(i, j) == 0.0) continue;
                    const bool a0 = clean(i, j) != 0.0;
                    const bool at = noisy.bits(i, j) != 0.0;
                    const double p = x0_probs(i, j);
                    const double d_vb = t == 1 ? recon_edge_grad(a0, p) : kl_edge_grad(a0, p, at, t, schedule);
                    (*grad)(i, j) = inv * (d_vb + lambda * recon_edge_grad(a0, p));
                }
            }
        }
    }
    return out;
}

}  // namespace ddgae::diffusion
