// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "tt/fast_math.hpp"
#include "tt/tensor.hpp"

namespace tt {
namespace detail {

// All kernels assign each output element to exactly one thread and accumulate
// serially within it, so results are bit-identical for any thread count.

// C += A(m x k) * B(k x n)
template <class S>
void gemm_nn(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (m >= 32)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        const S* arow = a + i * k;
        S* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            S av = arow[p];
            const S* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A(m x k) * B^T, with B stored (n x k)
template <class S>
void gemm_nt(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (m >= 32)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        const S* arow = a + i * k;
        S* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const S* brow = b + j * k;
            S acc = S(0);
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C(k x n) += A^T * B, with A stored (m x k), B stored (m x n)
template <class S>
void gemm_tn(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (k >= 32)
    for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(k); ++p) {
        S* crow = c + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            S av = a[i * k + p];
            const S* brow = b + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class S>
void require_matrix(const Tensor<S>& t, const char* who) {
    if (t->shape.size() != 2) throw ContractError(std::string(who) + ": expected a matrix");
}

}  // namespace detail

// y = a + b, identical shapes.
template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (a->shape != b->shape) throw ContractError("add: shape mismatch");
    auto out = make_node<S>(a->shape, a->requires_grad || b->requires_grad);
    const std::size_t n = out->numel();
    const S* av = a->val();
    const S* bv = b->val();
    S* ov = out->val();
#pragma omp parallel for schedule(static) if (n >= 4096)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) ov[i] = av[i] + bv[i];
    if (out->requires_grad) {
        out->parents = {a, b};
        auto* o = out.get();
        auto* ap = a.get();
        auto* bp = b.get();
        out->backward_fn = [o, ap, bp, n]() {
            const S* g = o->g();
            if (ap->requires_grad) {
                S* ga = ap->g();
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (bp->requires_grad) {
                S* gb = bp->g();
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        };
    }
    return out;
}

// y = alpha * a + beta * b with constant coefficients; gradient flows to both.
template <class S>
Tensor<S> add_scaled(S alpha, const Tensor<S>& a, S beta, const Tensor<S>& b) {
    if (a->shape != b->shape) throw ContractError("add_scaled: shape mismatch");
    auto out = make_node<S>(a->shape, a->requires_grad || b->requires_grad);
    const std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) out->value[i] = alpha * a->value[i] + beta * b->value[i];
    if (out->requires_grad) {
        out->parents = {a, b};
        auto* o = out.get();
        auto* ap = a.get();
        auto* bp = b.get();
        out->backward_fn = [o, ap, bp, n, alpha, beta]() {
            const S* g = o->g();
            if (ap->requires_grad)
                for (std::size_t i = 0; i < n; ++i) ap->grad[i] += alpha * g[i];
            if (bp->requires_grad)
                for (std::size_t i = 0; i < n; ++i) bp->grad[i] += beta * g[i];
        };
    }
    return out;
}

// Elementwise product.
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a->shape != b->shape) throw ContractError("mul: shape mismatch");
    auto out = make_node<S>(a->shape, a->requires_grad || b->requires_grad);
    const std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) out->value[i] = a->value[i] * b->value[i];
    if (out->requires_grad) {
        out->parents = {a, b};
        auto* o = out.get();
        auto* ap = a.get();
        auto* bp = b.get();
        out->backward_fn = [o, ap, bp, n]() {
            const S* g = o->g();
            if (ap->requires_grad)
                for (std::size_t i = 0; i < n; ++i) ap->grad[i] += g[i] * bp->value[i];
            if (bp->requires_grad)
                for (std::size_t i = 0; i < n; ++i) bp->grad[i] += g[i] * ap->value[i];
        };
    }
    return out;
}

// y = X W + 1 b^T. Pass a null bias for a plain product.
template <class S>
Tensor<S> affine(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    detail::require_matrix(x, "affine");
    detail::require_matrix(w, "affine");
    const std::size_t m = x->shape[0], k = x->shape[1];
    if (w->shape[0] != k) throw ContractError("affine: inner dimensions disagree");
    const std::size_t n = w->shape[1];
    if (b && b->numel() != n) throw ContractError("affine: bias length mismatch");

    bool rg = x->requires_grad || w->requires_grad || (b && b->requires_grad);
    auto out = make_node<S>({m, n}, rg);
    if (b) {
        const S* bv = b->val();
#pragma omp parallel for schedule(static) if (m >= 64)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i)
            std::copy(bv, bv + n, out->val() + i * n);
    }
    detail::gemm_nn(x->val(), w->val(), out->val(), m, k, n);

    if (out->requires_grad) {
        out->parents = {x, w};
        if (b) out->parents.push_back(b);
        auto* o = out.get();
        auto* xp = x.get();
        auto* wp = w.get();
        auto* bp = b ? b.get() : nullptr;
        out->backward_fn = [o, xp, wp, bp, m, k, n]() {
            const S* g = o->g();
            if (xp->requires_grad) detail::gemm_nt(g, wp->val(), xp->g(), m, n, k);
            if (wp->requires_grad) detail::gemm_tn(xp->val(), g, wp->g(), m, k, n);
            if (bp && bp->requires_grad) {
                S* gb = bp->g();
                for (std::size_t i = 0; i < m; ++i) {
                    const S* grow = g + i * n;
                    for (std::size_t j = 0; j < n; ++j) gb[j] += grow[j];
                }
            }
        };
    }
    return out;
}

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    return affine(a, b, Tensor<S>{});
}

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
    auto out = make_node<S>({1}, x->requires_grad);
    double acc = 0.0;
    for (S v : x->value) acc += static_cast<double>(v);
    out->value[0] = static_cast<S>(acc);
    if (out->requires_grad) {
        out->parents = {x};
        auto* o = out.get();
        auto* xp = x.get();
        out->backward_fn = [o, xp]() {
            S g = o->grad[0];
            for (auto& gv : xp->grad) gv += g;
        };
    }
    return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& x) {
    auto out = make_node<S>({1}, x->requires_grad);
    double acc = 0.0;
    for (S v : x->value) acc += static_cast<double>(v);
    const std::size_t n = x->numel();
    out->value[0] = static_cast<S>(acc / static_cast<double>(n));
    if (out->requires_grad) {
        out->parents = {x};
        auto* o = out.get();
        auto* xp = x.get();
        out->backward_fn = [o, xp, n]() {
            S g = o->grad[0] / static_cast<S>(n);
            for (auto& gv : xp->grad) gv += g;
        };
    }
    return out;
}

// Row-wise layer normalization with learnable scale and offset.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps) {
    detail::require_matrix(x, "layer_norm");
    const std::size_t m = x->shape[0], n = x->shape[1];
    if (gamma->numel() != n || beta->numel() != n)
        throw ContractError("layer_norm: scale/offset length mismatch");

    auto out = make_node<S>(
        {m, n}, x->requires_grad || gamma->requires_grad || beta->requires_grad);
    const bool rg = out->requires_grad;
    // x_hat and 1/sigma are cached for the backward pass.
    auto xhat = std::make_shared<std::vector<S>>(rg ? m * n : 0);
    auto rstd = std::make_shared<std::vector<S>>(rg ? m : 0);

    const S* gv = gamma->val();
    const S* bv = beta->val();
#pragma omp parallel for schedule(static) if (m >= 64)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        const S* row = x->val() + i * n;
        S* orow = out->val() + i * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += static_cast<double>(row[j]);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double d = static_cast<double>(row[j]) - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        S r = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        if (rg) (*rstd)[i] = r;
        for (std::size_t j = 0; j < n; ++j) {
            S xh = (row[j] - static_cast<S>(mu)) * r;
            if (rg) (*xhat)[i * n + j] = xh;
            orow[j] = gv[j] * xh + bv[j];
        }
    }

    if (rg) {
        out->parents = {x, gamma, beta};
        auto* o = out.get();
        auto* xp = x.get();
        auto* gp = gamma.get();
        auto* bp = beta.get();
        out->backward_fn = [o, xp, gp, bp, xhat, rstd, m, n]() {
            const S* g = o->g();
            const S* xh = xhat->data();
            if (gp->requires_grad || bp->requires_grad) {
                S* gg = gp->g();
                S* gb = bp->g();
                for (std::size_t i = 0; i < m; ++i) {
                    const S* grow = g + i * n;
                    const S* hrow = xh + i * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        if (gp->requires_grad) gg[j] += grow[j] * hrow[j];
                        if (bp->requires_grad) gb[j] += grow[j];
                    }
                }
            }
            if (xp->requires_grad) {
                const S* gammav = gp->val();
#pragma omp parallel for schedule(static) if (m >= 64)
                for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
                    const S* grow = g + i * n;
                    const S* hrow = xh + i * n;
                    S* gx = xp->g() + i * n;
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        double gh = static_cast<double>(grow[j]) * static_cast<double>(gammav[j]);
                        s1 += gh;
                        s2 += gh * static_cast<double>(hrow[j]);
                    }
                    s1 /= static_cast<double>(n);
                    s2 /= static_cast<double>(n);
                    S r = (*rstd)[i];
                    for (std::size_t j = 0; j < n; ++j) {
                        S gh = grow[j] * gammav[j];
                        gx[j] += r * (gh - static_cast<S>(s1) - hrow[j] * static_cast<S>(s2));
                    }
                }
            }
        };
    }
    return out;
}

// GELU in the tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
    auto out = make_node<S>(x->shape, x->requires_grad);
    const std::size_t n = x->numel();
    const bool rg = out->requires_grad;
    auto tcache = std::make_shared<std::vector<S>>(rg ? n : 0);
    constexpr S kSqrt2OverPi = S(0.7978845608028654);
    constexpr S kCubic = S(0.044715);
    const S* xv = x->val();
    S* ov = out->val();
    S* tc = tcache->data();
#pragma omp parallel for schedule(static) if (n >= 8192)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        S v = xv[i];
        S t = scalar_tanh<S>(kSqrt2OverPi * (v + kCubic * v * v * v));
        if (rg) tc[i] = t;
        ov[i] = S(0.5) * v * (S(1) + t);
    }
    if (rg) {
        out->parents = {x};
        auto* o = out.get();
        auto* xp = x.get();
        out->backward_fn = [o, xp, tcache, n]() {
            const S* g = o->g();
            const S* tv = tcache->data();
            const S* xv2 = xp->val();
            S* gx = xp->g();
#pragma omp parallel for schedule(static) if (n >= 8192)
            for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
                S v = xv2[i];
                S t = tv[i];
                S du = kSqrt2OverPi * (S(1) + S(3) * kCubic * v * v);
                S d = S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * du;
                gx[i] += g[i] * d;
            }
        };
    }
    return out;
}

// Row-wise softmax with max-shift stabilization.
template <class S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
    detail::require_matrix(x, "softmax_rows");
    const std::size_t m = x->shape[0], n = x->shape[1];
    auto out = make_node<S>({m, n}, x->requires_grad);
#pragma omp parallel for schedule(static) if (m >= 64)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        const S* row = x->val() + i * n;
        S* orow = out->val() + i * n;
        S mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            S e = scalar_exp<S>(row[j] - mx);
            orow[j] = e;
            denom += static_cast<double>(e);
        }
        S inv = static_cast<S>(1.0 / denom);
        for (std::size_t j = 0; j < n; ++j) orow[j] *= inv;
    }
    if (out->requires_grad) {
        out->parents = {x};
        auto* o = out.get();
        auto* xp = x.get();
        out->backward_fn = [o, xp, m, n]() {
            const S* g = o->g();
            const S* y = o->val();
            S* gx = xp->g();
#pragma omp parallel for schedule(static) if (m >= 64)
            for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
                const S* grow = g + i * n;
                const S* yrow = y + i * n;
                S* gxrow = gx + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    dot += static_cast<double>(grow[j]) * static_cast<double>(yrow[j]);
                for (std::size_t j = 0; j < n; ++j)
                    gxrow[j] += yrow[j] * (grow[j] - static_cast<S>(dot));
            }
        };
    }
    return out;
}

// L2-normalizes each row; zero rows pass through unchanged.
template <class S>
Tensor<S> l2_normalize_rows(const Tensor<S>& x) {
    detail::require_matrix(x, "l2_normalize_rows");
    const std::size_t m = x->shape[0], n = x->shape[1];
    auto out = make_node<S>({m, n}, x->requires_grad);
    auto inv_norm = std::make_shared<std::vector<S>>(m);
    for (std::size_t i = 0; i < m; ++i) {
        const S* row = x->val() + i * n;
        double sq = 0.0;
        for (std::size_t j = 0; j < n; ++j) sq += static_cast<double>(row[j]) * row[j];
        S inv = sq > 0.0 ? static_cast<S>(1.0 / std::sqrt(sq)) : S(0);
        (*inv_norm)[i] = inv;
        S* orow = out->val() + i * n;
        if (inv == S(0)) {
            std::copy(row, row + n, orow);
        } else {
            for (std::size_t j = 0; j < n; ++j) orow[j] = row[j] * inv;
        }
    }
    if (out->requires_grad) {
        out->parents = {x};
        auto* o = out.get();
        auto* xp = x.get();
        out->backward_fn = [o, xp, inv_norm, m, n]() {
            const S* g = o->g();
            const S* y = o->val();
            S* gx = xp->g();
            for (std::size_t i = 0; i < m; ++i) {
                S inv = (*inv_norm)[i];
                const S* grow = g + i * n;
                if (inv == S(0)) {
                    for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += grow[j];
                    continue;
                }
                const S* yrow = y + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    dot += static_cast<double>(grow[j]) * static_cast<double>(yrow[j]);
                for (std::size_t j = 0; j < n; ++j)
                    gx[i * n + j] += inv * (grow[j] - yrow[j] * static_cast<S>(dot));
            }
        };
    }
    return out;
}

// Gathers rows offset, offset+stride, ... (count rows). Backward scatters.
template <class S>
Tensor<S> select_rows(const Tensor<S>& x, std::size_t offset, std::size_t stride,
                      std::size_t count) {
    detail::require_matrix(x, "select_rows");
    const std::size_t n = x->shape[1];
    if (count == 0 || offset + (count - 1) * stride >= x->shape[0])
        throw ContractError("select_rows: selection exceeds input rows");
    auto out = make_node<S>({count, n}, x->requires_grad);
    for (std::size_t i = 0; i < count; ++i)
        std::copy(x->val() + (offset + i * stride) * n, x->val() + (offset + i * stride + 1) * n,
                  out->val() + i * n);
    if (out->requires_grad) {
        out->parents = {x};
        auto* o = out.get();
        auto* xp = x.get();
        out->backward_fn = [o, xp, offset, stride, count, n]() {
            const S* g = o->g();
            S* gx = xp->g();
            for (std::size_t i = 0; i < count; ++i) {
                S* dst = gx + (offset + i * stride) * n;
                const S* src = g + i * n;
                for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
            }
        };
    }
    return out;
}

// Builds the transformer input sequence: for every sample the class token is
// prepended to its patch embeddings, then positional embeddings are added to
// every token (position 0 belongs to the class token).
template <class S>
Tensor<S> assemble_tokens(const Tensor<S>& patch_embed, const Tensor<S>& cls,
                          const Tensor<S>& pos, std::size_t batch, std::size_t n_patches) {
    detail::require_matrix(patch_embed, "assemble_tokens");
    const std::size_t d = patch_embed->shape[1];
    const std::size_t tokens = n_patches + 1;
    if (patch_embed->shape[0] != batch * n_patches)
        throw ContractError("assemble_tokens: patch rows do not match batch * n_patches");
    if (cls->numel() != d) throw ContractError("assemble_tokens: class token width mismatch");
    if (pos->shape.size() != 2 || pos->shape[0] != tokens || pos->shape[1] != d)
        throw ContractError("assemble_tokens: positional table shape mismatch");

    auto out = make_node<S>({batch * tokens, d}, patch_embed->requires_grad ||
                                                     cls->requires_grad || pos->requires_grad);
    const bool rg = out->requires_grad;
    const S* cv = cls->val();
    const S* pv = pos->val();
#pragma omp parallel for schedule(static) if (batch >= 8)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(batch); ++b) {
        S* orow = out->val() + b * tokens * d;
        for (std::size_t j = 0; j < d; ++j) orow[j] = cv[j] + pv[j];
        for (std::size_t t = 0; t < n_patches; ++t) {
            const S* prow = patch_embed->val() + (b * n_patches + t) * d;
            const S* posrow = pv + (t + 1) * d;
            S* dst = orow + (t + 1) * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] = prow[j] + posrow[j];
        }
    }
    if (rg) {
        out->parents = {patch_embed, cls, pos};
        auto* o = out.get();
        auto* pe = patch_embed.get();
        auto* cp = cls.get();
        auto* pp = pos.get();
        out->backward_fn = [o, pe, cp, pp, batch, n_patches, d]() {
            const std::size_t tokens = n_patches + 1;
            const S* g = o->g();
            if (pe->requires_grad) {
#pragma omp parallel for schedule(static) if (batch >= 8)
                for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(batch); ++b)
                    for (std::size_t t = 0; t < n_patches; ++t) {
                        S* dst = pe->g() + (b * n_patches + t) * d;
                        const S* src = g + (b * tokens + t + 1) * d;
                        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                    }
            }
            if (cp->requires_grad) {
                S* gc = cp->g();
                for (std::size_t b = 0; b < batch; ++b) {
                    const S* src = g + b * tokens * d;
                    for (std::size_t j = 0; j < d; ++j) gc[j] += src[j];
                }
            }
            if (pp->requires_grad) {
                S* gp = pp->g();
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t t = 0; t < tokens; ++t) {
                        const S* src = g + (b * tokens + t) * d;
                        S* dst = gp + t * d;
                        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                    }
            }
        };
    }
    return out;
}

// Multi-head self-attention over a packed qkv matrix of shape
// (batch*tokens, 3*width); column blocks are [Q | K | V], each split into
// heads of width/heads columns. Softmax matrices are cached for backward.
template <class S>
Tensor<S> self_attention(const Tensor<S>& qkv, std::size_t batch, std::size_t tokens,
                         std::size_t heads) {
    detail::require_matrix(qkv, "self_attention");
    if (qkv->shape[1] % 3 != 0) throw ContractError("self_attention: qkv width not 3*d");
    const std::size_t d = qkv->shape[1] / 3;
    if (d % heads != 0) throw ContractError("self_attention: width not divisible by heads");
    if (qkv->shape[0] != batch * tokens)
        throw ContractError("self_attention: rows do not match batch * tokens");
    const std::size_t hd = d / heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));

    auto out = make_node<S>({batch * tokens, d}, qkv->requires_grad);
    const bool rg = out->requires_grad;
    auto attn = std::make_shared<std::vector<S>>(rg ? batch * heads * tokens * tokens : 0);

    const std::size_t pairs = batch * heads;
#pragma omp parallel for schedule(static) if (pairs >= 2)
    for (std::ptrdiff_t pair = 0; pair < static_cast<std::ptrdiff_t>(pairs); ++pair) {
        const std::size_t b = pair / heads;
        const std::size_t h = pair % heads;
        std::vector<S> q(tokens * hd), k(tokens * hd), v(tokens * hd);
        std::vector<S> scores(tokens * tokens, S(0));
        const S* base = qkv->val() + b * tokens * 3 * d;
        for (std::size_t t = 0; t < tokens; ++t) {
            const S* row = base + t * 3 * d;
            std::copy(row + h * hd, row + h * hd + hd, q.begin() + t * hd);
            std::copy(row + d + h * hd, row + d + h * hd + hd, k.begin() + t * hd);
            std::copy(row + 2 * d + h * hd, row + 2 * d + h * hd + hd, v.begin() + t * hd);
        }
        detail::gemm_nt(q.data(), k.data(), scores.data(), tokens, hd, tokens);
        S* a = rg ? attn->data() + pair * tokens * tokens : scores.data();
        for (std::size_t t = 0; t < tokens; ++t) {
            S* srow = scores.data() + t * tokens;
            S mx = srow[0] * scale;
            for (std::size_t u = 0; u < tokens; ++u) {
                srow[u] *= scale;
                mx = std::max(mx, srow[u]);
            }
            double denom = 0.0;
            S* arow = a + t * tokens;
            for (std::size_t u = 0; u < tokens; ++u) {
                S e = scalar_exp<S>(srow[u] - mx);
                arow[u] = e;
                denom += static_cast<double>(e);
            }
            S inv = static_cast<S>(1.0 / denom);
            for (std::size_t u = 0; u < tokens; ++u) arow[u] *= inv;
        }
        // out[b, t, h*hd:] = A V
        std::vector<S> o(tokens * hd, S(0));
        detail::gemm_nn(a, v.data(), o.data(), tokens, tokens, hd);
        for (std::size_t t = 0; t < tokens; ++t)
            std::copy(o.begin() + t * hd, o.begin() + (t + 1) * hd,
                      out->val() + (b * tokens + t) * d + h * hd);
    }

    if (rg) {
        out->parents = {qkv};
        auto* o = out.get();
        auto* qp = qkv.get();
        out->backward_fn = [o, qp, attn, batch, tokens, heads, d, hd, scale]() {
            const std::size_t pairs = batch * heads;
#pragma omp parallel for schedule(static) if (pairs >= 2)
            for (std::ptrdiff_t pair = 0; pair < static_cast<std::ptrdiff_t>(pairs); ++pair) {
                const std::size_t b = pair / heads;
                const std::size_t h = pair % heads;
                std::vector<S> q(tokens * hd), k(tokens * hd), v(tokens * hd);
                std::vector<S> dout(tokens * hd);
                const S* base = qp->val() + b * tokens * 3 * d;
                for (std::size_t t = 0; t < tokens; ++t) {
                    const S* row = base + t * 3 * d;
                    std::copy(row + h * hd, row + h * hd + hd, q.begin() + t * hd);
                    std::copy(row + d + h * hd, row + d + h * hd + hd, k.begin() + t * hd);
                    std::copy(row + 2 * d + h * hd, row + 2 * d + h * hd + hd,
                              v.begin() + t * hd);
                    const S* grow = o->g() + (b * tokens + t) * d + h * hd;
                    std::copy(grow, grow + hd, dout.begin() + t * hd);
                }
                const S* a = attn->data() + pair * tokens * tokens;
                std::vector<S> da(tokens * tokens, S(0));
                std::vector<S> dv(tokens * hd, S(0));
                detail::gemm_nt(dout.data(), v.data(), da.data(), tokens, hd, tokens);
                detail::gemm_tn(a, dout.data(), dv.data(), tokens, tokens, hd);
                // dS = A o (dA - rowsum(dA o A)), then dQ = scale dS K, dK = scale dS^T Q.
                std::vector<S> ds(tokens * tokens);
                for (std::size_t t = 0; t < tokens; ++t) {
                    const S* arow = a + t * tokens;
                    const S* darow = da.data() + t * tokens;
                    double dot = 0.0;
                    for (std::size_t u = 0; u < tokens; ++u)
                        dot += static_cast<double>(darow[u]) * static_cast<double>(arow[u]);
                    S* dsrow = ds.data() + t * tokens;
                    for (std::size_t u = 0; u < tokens; ++u)
                        dsrow[u] = arow[u] * (darow[u] - static_cast<S>(dot)) * scale;
                }
                std::vector<S> dq(tokens * hd, S(0)), dk(tokens * hd, S(0));
                detail::gemm_nn(ds.data(), k.data(), dq.data(), tokens, tokens, hd);
                detail::gemm_tn(ds.data(), q.data(), dk.data(), tokens, tokens, hd);
                S* gbase = qp->g() + b * tokens * 3 * d;
                for (std::size_t t = 0; t < tokens; ++t) {
                    S* grow = gbase + t * 3 * d;
                    for (std::size_t j = 0; j < hd; ++j) {
                        grow[h * hd + j] += dq[t * hd + j];
                        grow[d + h * hd + j] += dk[t * hd + j];
                        grow[2 * d + h * hd + j] += dv[t * hd + j];
                    }
                }
            }
        };
    }
    return out;
}

// Mean cross-entropy of row-stochastic predictions against integer labels,
// with optional label smoothing.
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& probs, const std::vector<int>& labels,
                        double smoothing) {
    detail::require_matrix(probs, "cross_entropy");
    const std::size_t b = probs->shape[0], c = probs->shape[1];
    if (labels.size() != b) throw ContractError("cross_entropy: one label per row required");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw ContractError("cross_entropy: label out of range");
    if (smoothing < 0.0 || smoothing >= 1.0)
        throw ContractError("cross_entropy: smoothing must be in [0, 1)");

    auto out = make_node<S>({1}, probs->requires_grad);
    const double off = smoothing / static_cast<double>(c);
    const double on = 1.0 - smoothing;
    double acc = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const S* row = probs->val() + i * c;
        acc -= on * std::log(static_cast<double>(row[labels[i]]));
        if (smoothing > 0.0)
            for (std::size_t j = 0; j < c; ++j)
                acc -= off * std::log(static_cast<double>(row[j]));
    }
    out->value[0] = static_cast<S>(acc / static_cast<double>(b));

    if (out->requires_grad) {
        out->parents = {probs};
        auto labels_copy = std::make_shared<std::vector<int>>(labels);
        auto* o = out.get();
        auto* pp = probs.get();
        out->backward_fn = [o, pp, labels_copy, b, c, on, off]() {
            const S g = o->grad[0];
            for (std::size_t i = 0; i < b; ++i) {
                const S* row = pp->val() + i * c;
                S* grow = pp->g() + i * c;
                const std::size_t y = static_cast<std::size_t>((*labels_copy)[i]);
                const S scale = g / static_cast<S>(b);
                if (off > 0.0) {
                    for (std::size_t j = 0; j < c; ++j) {
                        double w = off + (j == y ? on : 0.0);
                        grow[j] -= scale * static_cast<S>(w) / row[j];
                    }
                } else {
                    grow[y] -= scale * static_cast<S>(on) / row[y];
                }
            }
        };
    }
    return out;
}

// Symmetric InfoNCE between predicted rows and fixed target rows on raw inner
// products. Targets are constants; only the prediction side receives
// gradient. Log-sum-exp is max-shifted along each direction.
template <class S>
Tensor<S> info_nce(const Tensor<S>& pred, const std::vector<S>& targets) {
    detail::require_matrix(pred, "info_nce");
    const std::size_t b = pred->shape[0], d = pred->shape[1];
    if (targets.size() != b * d) throw ContractError("info_nce: target shape mismatch");

    // logits[j][k] = <pred_j, target_k>, accumulated in double.
    std::vector<double> logits(b * b, 0.0);
    for (std::size_t j = 0; j < b; ++j) {
        const S* prow = pred->val() + j * d;
        for (std::size_t k = 0; k < b; ++k) {
            const S* trow = targets.data() + k * d;
            double acc = 0.0;
            for (std::size_t t = 0; t < d; ++t)
                acc += static_cast<double>(prow[t]) * static_cast<double>(trow[t]);
            if (!std::isfinite(acc)) throw NumericError("info_nce: non-finite inner product");
            logits[j * b + k] = acc;
        }
    }

    auto row_soft = std::make_shared<std::vector<double>>(b * b);
    auto col_soft = std::make_shared<std::vector<double>>(b * b);
    double loss = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
        double mx = logits[j * b];
        for (std::size_t k = 1; k < b; ++k) mx = std::max(mx, logits[j * b + k]);
        double denom = 0.0;
        for (std::size_t k = 0; k < b; ++k) {
            double e = std::exp(logits[j * b + k] - mx);
            (*row_soft)[j * b + k] = e;
            denom += e;
        }
        for (std::size_t k = 0; k < b; ++k) (*row_soft)[j * b + k] /= denom;
        loss -= (logits[j * b + j] - mx - std::log(denom));
    }
    for (std::size_t j = 0; j < b; ++j) {
        double mx = logits[j];
        for (std::size_t k = 1; k < b; ++k) mx = std::max(mx, logits[k * b + j]);
        double denom = 0.0;
        for (std::size_t k = 0; k < b; ++k) {
            double e = std::exp(logits[k * b + j] - mx);
            (*col_soft)[k * b + j] = e;
            denom += e;
        }
        for (std::size_t k = 0; k < b; ++k) (*col_soft)[k * b + j] /= denom;
        loss -= (logits[j * b + j] - mx - std::log(denom));
    }

    auto out = make_node<S>({1}, pred->requires_grad);
    out->value[0] = static_cast<S>(loss / static_cast<double>(b));

    if (out->requires_grad) {
        out->parents = {pred};
        auto tcopy = std::make_shared<std::vector<S>>(targets);
        auto* o = out.get();
        auto* pp = pred.get();
        out->backward_fn = [o, pp, row_soft, col_soft, tcopy, b, d]() {
            const double g = static_cast<double>(o->grad[0]) / static_cast<double>(b);
            // dL/dlogits = (R - I) + (C - I); dPred = dL/dlogits * T.
            for (std::size_t j = 0; j < b; ++j) {
                S* grow = pp->g() + j * d;
                for (std::size_t k = 0; k < b; ++k) {
                    double dl = (*row_soft)[j * b + k] + (*col_soft)[j * b + k];
                    if (j == k) dl -= 2.0;
                    const double w = g * dl;
                    const S* trow = tcopy->data() + k * d;
                    for (std::size_t t = 0; t < d; ++t)
                        grow[t] += static_cast<S>(w * static_cast<double>(trow[t]));
                }
            }
        };
    }
    return out;
}

}  // namespace tt
