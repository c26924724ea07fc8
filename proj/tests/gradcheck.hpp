#pragma once

// Central finite differences over every scalar of a ParamSet.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "ddgae/nn_core.hpp"

namespace ddgae::testing {

struct GradCheckResult {
    std::size_t checked = 0;
    std::size_t agreed = 0;
    double worst_relative = 0.0;
    std::string worst_name;

    double agreement() const { return checked ? static_cast<double>(agreed) / static_cast<double>(checked) : 1.0; }
};

/// Gradients whose analytic and numeric magnitudes are both below
/// `abs_floor` count as agreeing; that is the round-off level of the
/// difference quotient.
inline GradCheckResult finite_difference_check(nn::ParamSet& params, const nn::ParamSet& analytic,
                                               const std::function<double()>& loss, double step = 1e-4,
                                               double rel_tol = 1e-3, double abs_floor = 1e-9) {
    GradCheckResult r;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& tensor = params[k];
        for (Eigen::Index i = 0; i < tensor.size(); ++i) {
            double& w = tensor.data()[i];
            const double saved = w;
            w = saved + step;
            const double up = loss();
            w = saved - step;
            const double down = loss();
            w = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double exact = analytic[k].data()[i];
            const double scale = std::max(std::abs(numeric), std::abs(exact));
            const double diff = std::abs(numeric - exact);
            ++r.checked;
            double rel = 0.0;
            if (scale < abs_floor) {
                ++r.agreed;
            } else {
                rel = diff / scale;
                if (rel <= rel_tol) ++r.agreed;
            }
            if (rel > r.worst_relative) {
                r.worst_relative = rel;
                r.worst_name = params.name(k) + "[" + std::to_string(i) + "]";
            }
        }
    }
    return r;
}

}  // namespace ddgae::testing
