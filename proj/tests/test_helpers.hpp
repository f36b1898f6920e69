// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tt/rng.hpp"
#include "tt/tensor.hpp"

namespace tthelp {

// Central-difference oracle kept independent of tt::grad_check so the
// engine's analytic gradients are checked against test-owned arithmetic.
inline double fd_max_rel_err(const std::function<tt::Tensor<double>()>& loss_fn,
                             const std::vector<tt::Tensor<double>>& params,
                             double eps = 1e-5) {
    for (auto& p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    auto loss = loss_fn();
    tt::backward(loss);
    double worst = 0.0;
    for (auto& p : params) {
        for (std::size_t i = 0; i < p->numel(); ++i) {
            double saved = p->value[i];
            p->value[i] = saved + eps;
            double up = loss_fn()->value[0];
            p->value[i] = saved - eps;
            double down = loss_fn()->value[0];
            p->value[i] = saved;
            double fd = (up - down) / (2.0 * eps);
            double err = std::abs(p->grad[i] - fd) / std::max(1.0, std::abs(fd));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

inline std::vector<double> random_vec(std::size_t n, tt::Rng& rng, double lo = -1.0,
                                      double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

inline std::vector<float> random_vecf(std::size_t n, tt::Rng& rng, float lo = -1.0f,
                                      float hi = 1.0f) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

}  // namespace tthelp
