#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mmrec/autodiff.hpp"

namespace mmrec {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t worst_index = -1;
    double worst_fd = 0.0;
    double worst_analytic = 0.0;
    int64_t n_checked = 0;
    bool pass(double tolerance) const { return max_rel_err < tolerance; }
};

// loss_fn(with_grad): rebuild the loss from scratch; when with_grad, also run
// backward so gradients accumulate into the parameters. It must be
// deterministic across calls (dropout off or replayed from a fixed seed).
// Central differences are taken on up to `samples_per_param` coordinates per
// parameter (all of them when the parameter is small); relative error uses
// denominator max(|fd|, |analytic|, 1e-8).
GradCheckReport grad_check(std::vector<Parameter*> params,
                           const std::function<double(bool)>& loss_fn, double fd_eps,
                           int64_t samples_per_param, Rng& rng);

// Redraw every parameter entry ~ N(0, scale). Finite differences need weights
// of healthy magnitude: at the 0.02 training init the normalized-embedding
// losses sit in a region of extreme curvature (branch norms near zero), where
// the truncation error of the central difference swamps the tolerance.
void randomize_params(const std::vector<Parameter*>& params, Rng& rng, double scale);

}  // namespace mmrec
