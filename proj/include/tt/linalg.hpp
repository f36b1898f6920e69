// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "tt/tensor.hpp"

namespace tt {

// Small dense row-major matrix used by the offline 64-bit math (whitening,
// feature statistics, head inversion).
struct Matd {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Matd() = default;
    Matd(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    static Matd identity(std::size_t n) {
        Matd m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

Matd mat_mul(const Matd& a, const Matd& b);
Matd mat_transpose(const Matd& m);
Matd mat_sub(const Matd& a, const Matd& b);
double mat_frobenius(const Matd& m);
std::vector<double> mat_vec(const Matd& m, const std::vector<double>& v);

struct SymEigResult {
    std::vector<double> eigenvalues;  // ascending
    Matd eigenvectors;                // columns correspond to eigenvalues
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Sweeps run in a
// fixed row-major order until the off-diagonal Frobenius norm drops below
// 1e-12 (or a machine-precision floor relative to the input), capped at 100
// sweeps, so results are bitwise repeatable for identical input.
SymEigResult sym_eig(const Matd& m);

// V diag(max(lambda, floor))^{-1/2} V^T. Eigenvalues below -1e-9 reject the
// input as non-PSD.
Matd psd_inv_sqrt(const Matd& m, double floor);

// V diag(max(lambda, 0))^{1/2} V^T with the same PSD tolerance.
Matd psd_sqrt(const Matd& m);

// Max over all parameter entries of |analytic - central difference| scaled by
// max(1, |central difference|). The loss function must rebuild its graph from
// the given leaves on every call.
double grad_check(const std::function<Tensor<double>()>& loss_fn,
                  const std::vector<Tensor<double>>& params, double eps);

}  // namespace tt
