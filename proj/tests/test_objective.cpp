// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "test_helpers.hpp"
#include "tt/objective.hpp"

namespace {

// Direct enumeration of the symmetric InfoNCE definition, no log-sum-exp
// tricks: the oracle the stable implementation is checked against.
double info_nce_oracle(const std::vector<double>& p, const std::vector<double>& t,
                       std::size_t b, std::size_t d) {
    auto dot = [&](std::size_t i, std::size_t j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += p[i * d + k] * t[j * d + k];
        return acc;
    };
    double loss = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
        double denom_row = 0.0, denom_col = 0.0;
        for (std::size_t k = 0; k < b; ++k) {
            denom_row += std::exp(dot(j, k));
            denom_col += std::exp(dot(k, j));
        }
        loss -= std::log(std::exp(dot(j, j)) / denom_row);
        loss -= std::log(std::exp(dot(j, j)) / denom_col);
    }
    return loss / static_cast<double>(b);
}

}  // namespace

TEST_CASE("forward_heads basics") {
    const std::size_t d = 4, c = 3;
    auto heads = tt::init_heads<double>(d, c, d, 7);
    // zero embedding, zero bias -> uniform class probabilities
    auto z = tt::constant<double>({2, d}, std::vector<double>(2 * d, 0.0));
    auto out = tt::forward_heads(z, heads);
    for (double v : out.p_cls->value) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    // identity text head passes z through
    std::fill(heads.a_txt->value.begin(), heads.a_txt->value.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i) heads.a_txt->value[i * d + i] = 1.0;
    tt::Rng rng(3);
    auto z2 = tt::constant<double>({2, d}, tthelp::random_vec(2 * d, rng));
    auto out2 = tt::forward_heads(z2, heads);
    CHECK(out2.p_txt->value == z2->value);

    // rows of p_cls sum to one
    for (std::size_t i = 0; i < 2; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += out2.p_cls->value[i * c + j];
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("classification_loss examples") {
    auto onehot = tt::constant<double>({1, 3}, {1.0, 0.0, 0.0});
    CHECK(tt::classification_loss(onehot, {0}, 0.0)->value[0] == doctest::Approx(0.0));

    auto uniform = tt::constant<double>({1, 4}, std::vector<double>(4, 0.25));
    CHECK(tt::classification_loss(uniform, {2}, 0.0)->value[0] ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));

    auto p = tt::constant<double>({1, 3}, {0.7, 0.2, 0.1});
    CHECK(tt::classification_loss(p, {0}, 0.0)->value[0] ==
          doctest::Approx(0.356675).epsilon(1e-5));

    CHECK_THROWS_AS(tt::classification_loss(p, {3}, 0.0), tt::ContractError);
    CHECK_THROWS_AS(tt::classification_loss(p, {-1}, 0.0), tt::ContractError);

    // smoothing pulls the optimum away from the one-hot corner
    CHECK(tt::classification_loss(onehot, {0}, 0.1)->value[0] > 0.0);
}

TEST_CASE("text_alignment_loss identities") {
    // B = 1: exactly zero
    auto p1 = tt::constant<double>({1, 3}, {0.3, -2.0, 5.0});
    CHECK(tt::text_alignment_loss(p1, {1.0, 2.0, 3.0})->value[0] == 0.0);

    // identical rows on both sides: 2 ln B
    const std::size_t b = 4, d = 3;
    std::vector<double> prow = {0.5, -1.0, 2.0}, trow = {1.0, 0.0, -1.0};
    std::vector<double> pv, tv;
    for (std::size_t i = 0; i < b; ++i) {
        pv.insert(pv.end(), prow.begin(), prow.end());
        tv.insert(tv.end(), trow.begin(), trow.end());
    }
    auto pb = tt::constant<double>({b, d}, pv);
    CHECK(std::abs(tt::text_alignment_loss(pb, tv)->value[0] - 2.0 * std::log(4.0)) < 1e-9);
}

TEST_CASE("text_alignment_loss matches the enumeration oracle") {
    // Hand value: B=2 identity alignment gives 2 ln(1 + e^-1)
    auto p = tt::constant<double>({2, 2}, {1.0, 0.0, 0.0, 1.0});
    std::vector<double> t = {1.0, 0.0, 0.0, 1.0};
    double expected = 2.0 * std::log(1.0 + std::exp(-1.0));
    CHECK(tt::text_alignment_loss(p, t)->value[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.626523).epsilon(1e-5));

    tt::Rng rng(17);
    for (std::size_t batch : {2u, 3u, 4u}) {
        const std::size_t dim = 5;
        auto pv = tthelp::random_vec(batch * dim, rng);
        auto tv = tthelp::random_vec(batch * dim, rng);
        auto node = tt::text_alignment_loss(tt::constant<double>({batch, dim}, pv), tv);
        CHECK(std::abs(node->value[0] - info_nce_oracle(pv, tv, batch, dim)) < 1e-12);
    }
}

TEST_CASE("text_alignment_loss is invariant to joint row permutation") {
    tt::Rng rng(19);
    const std::size_t b = 5, d = 4;
    auto pv = tthelp::random_vec(b * d, rng);
    auto tv = tthelp::random_vec(b * d, rng);
    double base =
        tt::text_alignment_loss(tt::constant<double>({b, d}, pv), tv)->value[0];

    std::vector<std::size_t> perm = {3, 0, 4, 2, 1};
    std::vector<double> pp(b * d), tp(b * d);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            pp[i * d + j] = pv[perm[i] * d + j];
            tp[i * d + j] = tv[perm[i] * d + j];
        }
    double permuted =
        tt::text_alignment_loss(tt::constant<double>({b, d}, pp), tp)->value[0];
    CHECK(std::abs(base - permuted) < 1e-10);
}

TEST_CASE("l2-normalized variant uses unit rows on both sides") {
    tt::Rng rng(23);
    const std::size_t b = 3, d = 4;
    auto pv = tthelp::random_vec(b * d, rng);
    auto tv = tthelp::random_vec(b * d, rng);
    // scaling either side must not change the normalized loss
    auto scaled = tv;
    for (auto& v : scaled) v *= 7.5;
    auto p = tt::constant<double>({b, d}, pv);
    CHECK(tt::text_alignment_loss(p, tv, true)->value[0] ==
          doctest::Approx(tt::text_alignment_loss(p, scaled, true)->value[0])
              .epsilon(1e-12));
}

TEST_CASE("adaptive_weight examples") {
    std::vector<double> g1 = {3.0, 4.0};         // norm 5
    std::vector<double> g2 = {0.0, 5.0};         // norm 5
    CHECK(tt::adaptive_weight(g1, g2, 1e-8) == doctest::Approx(1.0).epsilon(1e-8));

    std::vector<double> g2c = {0.0, 10.0};       // scaled by 2 -> alpha halves
    CHECK(tt::adaptive_weight(g1, g2c, 1e-8) ==
          doctest::Approx(0.5).epsilon(1e-8));

    std::vector<double> zero = {0.0, 0.0};
    CHECK(tt::adaptive_weight(g1, zero, 1e-8) == doctest::Approx(5.0 / 1e-8));
}

TEST_CASE("total_loss combinations") {
    auto lt = tt::constant<double>({1}, {1.0});
    auto lc = tt::constant<double>({1}, {3.0});
    CHECK(tt::total_loss(lt, lc, 0.0, 123.0)->value[0] == 3.0);  // lambda 0: exactly L_cls
    CHECK(tt::total_loss(lt, lc, 1.0, 1.0)->value[0] == 1.0);
    CHECK(tt::total_loss(lt, lc, 0.5, 2.0)->value[0] == doctest::Approx(2.5));
    CHECK_THROWS_AS(tt::total_loss(lt, lc, 1.5, 1.0), tt::ContractError);
}

TEST_CASE("gradient-magnitude equalization holds at the shared representation") {
    tt::Rng rng(29);
    const std::size_t batch = 4, d = 8, c = 3, d_txt = 8;
    auto heads = tt::init_heads<double>(d, c, d_txt, 31);
    for (auto& ref : heads.params)
        for (auto& v : ref.tensor->value) v = rng.uniform(-0.3, 0.3);

    auto z = tt::param<double>({batch, d}, tthelp::random_vec(batch * d, rng));
    std::vector<int> labels = {0, 2, 1, 0};
    std::vector<double> targets = tthelp::random_vec(batch * d_txt, rng);

    auto out = tt::forward_heads(z, heads);
    auto l_cls = tt::classification_loss(out.p_cls, labels, 0.0);
    auto l_txt = tt::text_alignment_loss(out.p_txt, targets);

    tt::backward_scoped(l_cls, z.get());
    auto g_cls = z->grad;
    tt::zero_grads(tt::graph_nodes(l_cls));
    tt::backward_scoped(l_txt, z.get());
    auto g_txt = z->grad;
    tt::zero_grads(tt::graph_nodes(l_txt));

    const double eps = 1e-8;
    double alpha = tt::adaptive_weight(g_cls, g_txt, eps);
    // |d(alpha L_txt)/dz| == alpha |g_txt| == |g_cls| up to the eps shift
    double lhs = alpha * tt::frobenius_norm(g_txt);
    double rhs = tt::frobenius_norm(g_cls);
    CHECK(lhs / rhs == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("lambda_at reproduces the published schedule values") {
    tt::ScheduleSpec spec;
    spec.kind = tt::ScheduleKind::Const;
    spec.peak = 0.5;
    spec.total_epochs = 100;
    for (std::size_t e : {0u, 17u, 50u, 99u}) CHECK(tt::lambda_at(spec, e) == 0.5);

    spec.kind = tt::ScheduleKind::Jump;
    spec.jump_epoch = 50;
    spec.ramp = 10;
    CHECK(tt::lambda_at(spec, 55) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(tt::lambda_at(spec, 49) == 0.5);
    CHECK(tt::lambda_at(spec, 60) == 0.0);
    CHECK(tt::lambda_at(spec, 75) == 0.0);

    spec.kind = tt::ScheduleKind::Linear;
    CHECK(tt::lambda_at(spec, 0) == 0.5);
    CHECK(tt::lambda_at(spec, 99) == doctest::Approx(0.005));

    CHECK_THROWS_AS(tt::lambda_at(spec, 100), tt::ContractError);
    CHECK_THROWS_AS(tt::lambda_at(spec, 100000), tt::ContractError);
}

TEST_CASE("early-mass ordering: const >= halfcos >= cos >= linear on [0, E/2]") {
    const std::size_t total = 100;
    tt::ScheduleSpec cs{tt::ScheduleKind::Const, 0.5, total, 0, 10};
    tt::ScheduleSpec half{tt::ScheduleKind::HalfCos, 0.5, total, 0, 10};
    tt::ScheduleSpec cos_s{tt::ScheduleKind::Cos, 0.5, total, 0, 10};
    tt::ScheduleSpec lin{tt::ScheduleKind::Linear, 0.5, total, 0, 10};

    // spot values at e/E = 0.25
    CHECK(tt::lambda_at(half, 25) == doctest::Approx(0.46194).epsilon(1e-4));
    CHECK(tt::lambda_at(cos_s, 25) == doctest::Approx(0.42678).epsilon(1e-4));
    CHECK(tt::lambda_at(lin, 25) == doctest::Approx(0.375).epsilon(1e-12));

    for (std::size_t e = 0; e <= total / 2; ++e) {
        double vc = tt::lambda_at(cs, e);
        double vh = tt::lambda_at(half, e);
        double vcos = tt::lambda_at(cos_s, e);
        double vl = tt::lambda_at(lin, e);
        CHECK(vc >= vh - 1e-12);
        CHECK(vh >= vcos - 1e-12);
        CHECK(vcos >= vl - 1e-12);
    }
}

TEST_CASE("schedule validation") {
    tt::ScheduleSpec bad{tt::ScheduleKind::Jump, 0.5, 30, 25, 10};  // 25 + 10 > 30
    CHECK_THROWS_AS(bad.validate(), tt::ContractError);
    tt::ScheduleSpec bad2{tt::ScheduleKind::Const, 1.5, 30, 0, 10};
    CHECK_THROWS_AS(bad2.validate(), tt::ContractError);
    CHECK(tt::schedule_kind_from_string("halfcos") == tt::ScheduleKind::HalfCos);
    CHECK_THROWS_AS(tt::schedule_kind_from_string("bogus"), tt::ContractError);
}
