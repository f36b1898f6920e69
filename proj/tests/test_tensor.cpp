// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_helpers.hpp"
#include "tt/ops.hpp"
#include "tt/rng.hpp"
#include "tt/tensor.hpp"

using tt::Tensor;

TEST_CASE("backward of x*x gives 2x") {
    auto x = tt::param<double>({1}, {3.0});
    auto y = tt::mul(x, x);
    tt::backward(y);
    CHECK(x->grad[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar root") {
    auto x = tt::param<double>({2}, {1.0, 2.0});
    auto y = tt::add(x, x);
    CHECK_THROWS_AS(tt::backward(y), tt::ContractError);
}

TEST_CASE("sum of softmax has zero gradient") {
    tt::Rng rng(7);
    auto x = tt::param<double>({3, 5}, tthelp::random_vec(15, rng, -2.0, 2.0));
    auto s = tt::sum(tt::softmax_rows(x));
    tt::backward(s);
    for (double g : x->grad) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("gradients accumulate across uses and across backward calls") {
    // y = x + x: two uses of the same node.
    auto x = tt::param<double>({1}, {1.5});
    auto y = tt::add(x, x);
    auto s = tt::sum(y);
    tt::backward(s);
    CHECK(x->grad[0] == doctest::Approx(2.0));
    CHECK(s->grad[0] == doctest::Approx(1.0));
    tt::backward(s);
    CHECK(x->grad[0] == doctest::Approx(4.0));

    // Deeper graph: f(x) = sum((x * x) * c); repeated calls double the grads.
    auto x2 = tt::param<double>({2}, {0.5, -2.0});
    auto c = tt::constant<double>({2}, {3.0, 1.0});
    auto f = tt::sum(tt::mul(tt::mul(x2, x2), c));
    tt::backward(f);
    std::vector<double> once = x2->grad;
    tt::backward(f);
    CHECK(x2->grad[0] == doctest::Approx(2.0 * once[0]).epsilon(1e-12));
    CHECK(x2->grad[1] == doctest::Approx(2.0 * once[1]).epsilon(1e-12));
}

TEST_CASE("affine matches finite differences") {
    tt::Rng rng(11);
    auto x = tt::param<double>({4, 3}, tthelp::random_vec(12, rng));
    auto w = tt::param<double>({3, 5}, tthelp::random_vec(15, rng));
    auto b = tt::param<double>({5}, tthelp::random_vec(5, rng));
    auto loss = [&]() { return tt::mean(tt::gelu(tt::affine(x, w, b))); };
    CHECK(tthelp::fd_max_rel_err(loss, {x, w, b}) < 1e-7);
}

TEST_CASE("layer_norm matches finite differences") {
    tt::Rng rng(13);
    auto x = tt::param<double>({5, 8}, tthelp::random_vec(40, rng, -2.0, 2.0));
    auto g = tt::param<double>({8}, tthelp::random_vec(8, rng, 0.5, 1.5));
    auto b = tt::param<double>({8}, tthelp::random_vec(8, rng));
    auto loss = [&]() {
        auto y = tt::layer_norm(x, g, b, 1e-5);
        return tt::mean(tt::mul(y, y));
    };
    CHECK(tthelp::fd_max_rel_err(loss, {x, g, b}) < 1e-6);
}

TEST_CASE("softmax and gelu match finite differences") {
    tt::Rng rng(17);
    auto x = tt::param<double>({4, 6}, tthelp::random_vec(24, rng, -2.0, 2.0));
    auto smx = [&]() { return tt::mean(tt::mul(tt::softmax_rows(x), x)); };
    CHECK(tthelp::fd_max_rel_err(smx, {x}) < 1e-6);
    auto gl = [&]() { return tt::mean(tt::mul(tt::gelu(x), x)); };
    CHECK(tthelp::fd_max_rel_err(gl, {x}) < 1e-6);
}

TEST_CASE("self_attention matches finite differences") {
    tt::Rng rng(19);
    const std::size_t batch = 2, tokens = 3, d = 4, heads = 2;
    auto qkv = tt::param<double>({batch * tokens, 3 * d},
                                 tthelp::random_vec(batch * tokens * 3 * d, rng));
    auto weight = tt::constant<double>({batch * tokens, d},
                                       tthelp::random_vec(batch * tokens * d, rng));
    auto loss = [&]() {
        auto o = tt::self_attention(qkv, batch, tokens, heads);
        return tt::mean(tt::mul(o, weight));
    };
    CHECK(tthelp::fd_max_rel_err(loss, {qkv}) < 1e-6);
}

TEST_CASE("cross_entropy matches finite differences, with and without smoothing") {
    tt::Rng rng(23);
    auto logits = tt::param<double>({3, 4}, tthelp::random_vec(12, rng, -1.0, 1.0));
    std::vector<int> labels = {1, 3, 0};
    for (double sm : {0.0, 0.1}) {
        auto loss = [&]() {
            return tt::cross_entropy(tt::softmax_rows(logits), labels, sm);
        };
        CHECK(tthelp::fd_max_rel_err(loss, {logits}) < 1e-6);
    }
}

TEST_CASE("info_nce matches finite differences") {
    tt::Rng rng(29);
    const std::size_t b = 4, d = 3;
    auto p = tt::param<double>({b, d}, tthelp::random_vec(b * d, rng));
    std::vector<double> targets = tthelp::random_vec(b * d, rng);
    auto loss = [&]() { return tt::info_nce(p, targets); };
    CHECK(tthelp::fd_max_rel_err(loss, {p}) < 1e-6);
}

TEST_CASE("l2_normalize_rows matches finite differences and passes zero rows") {
    tt::Rng rng(31);
    auto x = tt::param<double>({3, 4}, tthelp::random_vec(12, rng));
    auto w = tt::constant<double>({3, 4}, tthelp::random_vec(12, rng));
    auto loss = [&]() { return tt::mean(tt::mul(tt::l2_normalize_rows(x), w)); };
    CHECK(tthelp::fd_max_rel_err(loss, {x}) < 1e-6);

    auto z = tt::param<double>({1, 3}, {0.0, 0.0, 0.0});
    auto y = tt::l2_normalize_rows(z);
    for (double v : y->value) CHECK(v == 0.0);
}

TEST_CASE("select_rows and assemble_tokens match finite differences") {
    tt::Rng rng(37);
    const std::size_t batch = 2, patches = 3, d = 4;
    auto pe = tt::param<double>({batch * patches, d},
                                tthelp::random_vec(batch * patches * d, rng));
    auto cls = tt::param<double>({d}, tthelp::random_vec(d, rng));
    auto pos = tt::param<double>({patches + 1, d}, tthelp::random_vec((patches + 1) * d, rng));
    auto w = tt::constant<double>({batch, d}, tthelp::random_vec(batch * d, rng));
    auto loss = [&]() {
        auto toks = tt::assemble_tokens(pe, cls, pos, batch, patches);
        auto z = tt::select_rows(toks, 0, patches + 1, batch);
        return tt::mean(tt::mul(z, w));
    };
    CHECK(tthelp::fd_max_rel_err(loss, {pe, cls, pos}) < 1e-7);
}

TEST_CASE("three-layer MLP gradients match central finite differences") {
    tt::Rng rng(41);
    const std::size_t in = 6, h1 = 8, h2 = 5, out = 3, b = 4;
    auto x = tt::constant<double>({b, in}, tthelp::random_vec(b * in, rng));
    auto w1 = tt::param<double>({in, h1}, tthelp::random_vec(in * h1, rng, -0.5, 0.5));
    auto b1 = tt::param<double>({h1}, tthelp::random_vec(h1, rng, -0.1, 0.1));
    auto w2 = tt::param<double>({h1, h2}, tthelp::random_vec(h1 * h2, rng, -0.5, 0.5));
    auto b2 = tt::param<double>({h2}, tthelp::random_vec(h2, rng, -0.1, 0.1));
    auto w3 = tt::param<double>({h2, out}, tthelp::random_vec(h2 * out, rng, -0.5, 0.5));
    auto b3 = tt::param<double>({out}, tthelp::random_vec(out, rng, -0.1, 0.1));
    std::vector<int> labels = {0, 2, 1, 1};
    auto loss = [&]() {
        auto a1 = tt::gelu(tt::affine(x, w1, b1));
        auto a2 = tt::gelu(tt::affine(a1, w2, b2));
        auto logits = tt::affine(a2, w3, b3);
        return tt::cross_entropy(tt::softmax_rows(logits), labels, 0.0);
    };
    double err = tthelp::fd_max_rel_err(loss, {w1, b1, w2, b2, w3, b3}, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("scoped backward stops at the boundary") {
    auto x = tt::param<double>({1}, {2.0});
    auto y = tt::mul(x, x);       // y = x^2
    auto z = tt::mul(y, y);       // z = y^2 = x^4
    tt::backward_scoped(z, y.get());
    CHECK(y->grad[0] == doctest::Approx(2.0 * y->value[0]));  // dz/dy = 2y = 8
    CHECK(x->grad[0] == 0.0);

    auto nodes = tt::graph_nodes(z);
    tt::zero_grads(nodes);
    tt::backward(z);
    CHECK(x->grad[0] == doctest::Approx(4.0 * 8.0));  // dz/dx = 4x^3 = 32
}

TEST_CASE("no-grad mode skips graph construction") {
    auto x = tt::param<double>({2, 2}, {1.0, 2.0, 3.0, 4.0});
    {
        tt::NoGradGuard guard;
        auto y = tt::gelu(tt::matmul(x, x));
        CHECK_FALSE(y->requires_grad);
        CHECK(y->parents.empty());
        CHECK_FALSE(static_cast<bool>(y->backward_fn));
    }
    auto y = tt::matmul(x, x);
    CHECK(y->requires_grad);
}

TEST_CASE("float and double instantiations agree to float precision") {
    tt::Rng rng(43);
    const std::size_t batch = 2, tokens = 5, d = 8, heads = 2;
    auto xd = tthelp::random_vec(batch * tokens * 3 * d, rng, -0.5, 0.5);
    std::vector<float> xf(xd.begin(), xd.end());
    auto qd = tt::constant<double>({batch * tokens, 3 * d}, xd);
    auto qf = tt::constant<float>({batch * tokens, 3 * d}, xf);
    auto od = tt::self_attention(qd, batch, tokens, heads);
    auto of = tt::self_attention(qf, batch, tokens, heads);
    for (std::size_t i = 0; i < od->numel(); ++i)
        CHECK(std::abs(od->value[i] - static_cast<double>(of->value[i])) < 1e-5);
}

TEST_CASE("tensor invariants: value, grad and shape sizes agree") {
    auto x = tt::param<double>({3, 4}, std::vector<double>(12, 1.0));
    CHECK(x->numel() == 12);
    CHECK(x->grad.size() == x->value.size());
    CHECK_THROWS_AS(tt::param<double>({3, 4}, std::vector<double>(11, 1.0)),
                    tt::ContractError);
}
