#include "mmrec/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mmrec/error.hpp"

namespace mmrec {

GradCheckReport grad_check(std::vector<Parameter*> params,
                           const std::function<double(bool)>& loss_fn, double fd_eps,
                           int64_t samples_per_param, Rng& rng) {
    if (fd_eps <= 0.0) throw Error(ErrorKind::config, "grad_check: fd_eps must be positive");
    if (samples_per_param < 1)
        throw Error(ErrorKind::config, "grad_check: samples_per_param must be >= 1");

    for (Parameter* p : params) p->zero_grad();
    loss_fn(true);

    GradCheckReport report;
    for (Parameter* p : params) {
        const int64_t n = static_cast<int64_t>(p->value.data.size());
        std::vector<int64_t> coords;
        if (n <= samples_per_param) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            for (int64_t i = 0; i < samples_per_param; ++i)
                coords.push_back(static_cast<int64_t>(rng.uniform_below(static_cast<uint64_t>(n))));
        }
        for (int64_t c : coords) {
            double& slot = p->value.data[static_cast<size_t>(c)];
            const double keep = slot;
            slot = keep + fd_eps;
            const double hi = loss_fn(false);
            slot = keep - fd_eps;
            const double lo = loss_fn(false);
            slot = keep;
            const double fd = (hi - lo) / (2.0 * fd_eps);
            const double analytic = p->grad.data[static_cast<size_t>(c)];
            const double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-8});
            const double rel = std::fabs(fd - analytic) / denom;
            ++report.n_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = p->name;
                report.worst_index = c;
                report.worst_fd = fd;
                report.worst_analytic = analytic;
            }
        }
    }
    return report;
}

void randomize_params(const std::vector<Parameter*>& params, Rng& rng, double scale) {
    if (scale <= 0.0) throw Error(ErrorKind::config, "randomize_params: scale must be positive");
    for (Parameter* p : params)
        for (double& v : p->value.data) v = rng.normal() * scale;
}

}  // namespace mmrec
