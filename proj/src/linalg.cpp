// SPDX-License-Identifier: Apache-2.0
#include "tt/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tt/errors.hpp"

namespace tt {

Matd mat_mul(const Matd& a, const Matd& b) {
    if (a.cols != b.rows) throw ContractError("mat_mul: inner dimensions disagree");
    Matd c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k) {
            double av = a(i, k);
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += av * b(k, j);
        }
    return c;
}

Matd mat_transpose(const Matd& m) {
    Matd t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
    return t;
}

Matd mat_sub(const Matd& a, const Matd& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw ContractError("mat_sub: shape mismatch");
    Matd c(a.rows, a.cols);
    for (std::size_t i = 0; i < a.a.size(); ++i) c.a[i] = a.a[i] - b.a[i];
    return c;
}

double mat_frobenius(const Matd& m) {
    double acc = 0.0;
    for (double v : m.a) acc += v * v;
    return std::sqrt(acc);
}

std::vector<double> mat_vec(const Matd& m, const std::vector<double>& v) {
    if (m.cols != v.size()) throw ContractError("mat_vec: dimension mismatch");
    std::vector<double> out(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) acc += m(i, j) * v[j];
        out[i] = acc;
    }
    return out;
}

namespace {

double off_diag_frobenius(const Matd& m) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j)
            if (i != j) acc += m(i, j) * m(i, j);
    return std::sqrt(acc);
}

}  // namespace

SymEigResult sym_eig(const Matd& m) {
    if (m.rows != m.cols) throw ContractError("sym_eig: matrix must be square");
    const std::size_t n = m.rows;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(m(i, j) - m(j, i)) > 1e-9)
                throw ContractError("sym_eig: input is not symmetric within 1e-9");

    Matd a = m;
    // Work on the exactly symmetric average so rotations stay consistent.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double avg = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = avg;
            a(j, i) = avg;
        }

    Matd v = Matd::identity(n);
    const double frob = mat_frobenius(a);
    const double tol = std::max(1e-12, 1e-15 * frob);
    for (int sweep = 0; sweep < 100; ++sweep) {
        if (off_diag_frobenius(a) < tol) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = a(p, q);
                if (apq == 0.0) continue;
                double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;

                for (std::size_t k = 0; k < n; ++k) {
                    double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&a](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });

    SymEigResult res;
    res.eigenvalues.resize(n);
    res.eigenvectors = Matd(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        res.eigenvalues[j] = a(idx[j], idx[j]);
        for (std::size_t i = 0; i < n; ++i) res.eigenvectors(i, j) = v(i, idx[j]);
    }
    return res;
}

namespace {

Matd rebuild_from_spectrum(const SymEigResult& eig, const std::vector<double>& lambda) {
    const std::size_t n = eig.eigenvalues.size();
    Matd out(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k)
                acc += eig.eigenvectors(i, k) * lambda[k] * eig.eigenvectors(j, k);
            out(i, j) = acc;
            out(j, i) = acc;
        }
    return out;
}

}  // namespace

Matd psd_inv_sqrt(const Matd& m, double floor) {
    if (floor <= 0.0) throw ContractError("psd_inv_sqrt: floor must be positive");
    SymEigResult eig = sym_eig(m);
    std::vector<double> lambda(eig.eigenvalues.size());
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        double ev = eig.eigenvalues[i];
        if (ev < -1e-9) throw ContractError("psd_inv_sqrt: matrix is not PSD");
        lambda[i] = 1.0 / std::sqrt(std::max(ev, floor));
    }
    return rebuild_from_spectrum(eig, lambda);
}

Matd psd_sqrt(const Matd& m) {
    SymEigResult eig = sym_eig(m);
    std::vector<double> lambda(eig.eigenvalues.size());
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        double ev = eig.eigenvalues[i];
        if (ev < -1e-9) throw ContractError("psd_sqrt: matrix is not PSD");
        lambda[i] = std::sqrt(std::max(ev, 0.0));
    }
    return rebuild_from_spectrum(eig, lambda);
}

double grad_check(const std::function<Tensor<double>()>& loss_fn,
                  const std::vector<Tensor<double>>& params, double eps) {
    if (!(eps > 0.0 && eps <= 1e-2)) throw ContractError("grad_check: eps must be in (0, 1e-2]");

    for (const auto& p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    Tensor<double> loss = loss_fn();
    if (!std::isfinite(loss->value[0])) throw NumericError("grad_check: non-finite loss");
    backward(loss);

    double worst = 0.0;
    for (const auto& p : params) {
        for (std::size_t i = 0; i < p->numel(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + eps;
            double up = loss_fn()->value[0];
            p->value[i] = saved - eps;
            double down = loss_fn()->value[0];
            p->value[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("grad_check: non-finite loss under perturbation");
            double fd = (up - down) / (2.0 * eps);
            double err = std::abs(p->grad[i] - fd) / std::max(1.0, std::abs(fd));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace tt
