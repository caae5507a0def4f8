#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "parkcast/tensor.hpp"

namespace parkcast::testing {

/// Central-difference gradient of `eval` w.r.t. every element of `t`.
/// `eval` must be a pure function of the tensor contents (run under NoGrad).
inline std::vector<double> fd_grad(Tensor t, const std::function<double()>& eval,
                                   double h = 1e-5) {
    std::vector<double> grad(t.size());
    auto& data = t.data();
    NoGradGuard guard;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double saved = data[i];
        data[i] = saved + h;
        const double up = eval();
        data[i] = saved - h;
        const double down = eval();
        data[i] = saved;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

/// Max relative error between analytic and numeric gradients. Denominator is
/// floored to keep finite-difference noise in near-zero components from
/// registering as error.
inline double max_rel_err(const std::vector<double>& analytic,
                          const std::vector<double>& numeric) {
    double scale = 1e-4;
    for (double v : numeric) scale = std::max(scale, 1e-4 * std::abs(v));
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), scale});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

} // namespace parkcast::testing
