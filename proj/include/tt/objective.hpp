// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tt/backbone.hpp"
#include "tt/ops.hpp"

namespace tt {

template <class S>
struct DualHeads {
    Tensor<S> a_cls;  // d x C
    Tensor<S> b_cls;  // C
    Tensor<S> a_txt;  // d x d_txt
    Tensor<S> b_txt;  // d_txt

    std::vector<ParamRef<S>> params;

    std::size_t n_classes() const { return a_cls->shape[1]; }
    std::size_t d_txt() const { return a_txt->shape[1]; }
};

template <class S>
DualHeads<S> init_heads(std::size_t width, std::size_t n_classes, std::size_t d_txt,
                        std::uint64_t seed) {
    if (n_classes < 2) throw ContractError("init_heads: need at least two classes");
    constexpr double kStd = 0.02;
    DualHeads<S> h;
    h.a_cls = detail::init_param<S>(h.params, "head.a_cls", {width, n_classes}, seed, kStd,
                                    0.0, true);
    h.b_cls = detail::init_param<S>(h.params, "head.b_cls", {n_classes}, seed, 0.0, 0.0,
                                    false);
    h.a_txt = detail::init_param<S>(h.params, "head.a_txt", {width, d_txt}, seed, kStd, 0.0,
                                    true);
    h.b_txt = detail::init_param<S>(h.params, "head.b_txt", {d_txt}, seed, 0.0, 0.0, false);
    return h;
}

template <class S>
struct HeadOutputs {
    Tensor<S> p_cls;  // batch x C, rows sum to one
    Tensor<S> p_txt;  // batch x d_txt, raw projection
};

// p_cls = softmax(z A_cls + b_cls) row-wise, p_txt = z A_txt + b_txt.
template <class S>
HeadOutputs<S> forward_heads(const Tensor<S>& z, const DualHeads<S>& heads) {
    if (z->shape.size() != 2 || z->shape[1] != heads.a_cls->shape[0])
        throw ContractError("forward_heads: embedding width mismatch");
    HeadOutputs<S> out;
    out.p_cls = softmax_rows(affine(z, heads.a_cls, heads.b_cls));
    out.p_txt = affine(z, heads.a_txt, heads.b_txt);
    return out;
}

// Mean cross-entropy over the batch, optional label smoothing.
template <class S>
Tensor<S> classification_loss(const Tensor<S>& p_cls, const std::vector<int>& labels,
                              double smoothing) {
    return cross_entropy(p_cls, labels, smoothing);
}

// Symmetric InfoNCE between predictions and their fixed targets (flattened
// batch x d_txt, row-major). Optionally L2-normalizes both sides first.
template <class S>
Tensor<S> text_alignment_loss(const Tensor<S>& p_txt, const std::vector<S>& targets,
                              bool l2_normalize = false) {
    if (!l2_normalize) return info_nce(p_txt, targets);
    const std::size_t b = p_txt->shape[0], d = p_txt->shape[1];
    std::vector<S> normed = targets;
    for (std::size_t i = 0; i < b; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j)
            sq += static_cast<double>(normed[i * d + j]) * normed[i * d + j];
        if (sq > 0.0) {
            S inv = static_cast<S>(1.0 / std::sqrt(sq));
            for (std::size_t j = 0; j < d; ++j) normed[i * d + j] *= inv;
        }
    }
    return info_nce(l2_normalize_rows(p_txt), normed);
}

// alpha = |grad_cls| / (|grad_txt| + eps), Frobenius norms over the whole
// batch, treated downstream as a plain constant (stop-gradient).
template <class S>
double adaptive_weight(const std::vector<S>& grad_cls_z, const std::vector<S>& grad_txt_z,
                       double eps) {
    if (grad_cls_z.size() != grad_txt_z.size())
        throw ContractError("adaptive_weight: gradient shapes disagree");
    return frobenius_norm(grad_cls_z) / (frobenius_norm(grad_txt_z) + eps);
}

// lambda * alpha * L_txt + (1 - lambda) * L_cls. alpha enters as a constant;
// gradient flows through both loss terms only.
template <class S>
Tensor<S> total_loss(const Tensor<S>& loss_txt, const Tensor<S>& loss_cls, double lambda,
                     double alpha) {
    if (lambda < 0.0 || lambda > 1.0) throw ContractError("total_loss: lambda not in [0,1]");
    if (alpha < 0.0) throw ContractError("total_loss: alpha must be non-negative");
    return add_scaled(static_cast<S>(lambda * alpha), loss_txt,
                      static_cast<S>(1.0 - lambda), loss_cls);
}

enum class ScheduleKind { Const, Linear, Cos, HalfCos, Jump };

const char* to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(const std::string& s);

struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::Const;
    double peak = 0.5;              // lambda
    std::size_t total_epochs = 30;  // E
    std::size_t jump_epoch = 0;     // t*, jump only
    std::size_t ramp = 10;          // jump only

    void validate() const {
        if (peak < 0.0 || peak > 1.0)
            throw ContractError("schedule: peak lambda must be in [0,1]");
        if (total_epochs == 0) throw ContractError("schedule: total_epochs must be positive");
        if (kind == ScheduleKind::Jump && jump_epoch + ramp > total_epochs)
            throw ContractError("schedule: jump epoch plus ramp exceeds total epochs");
    }
};

// Mixing weight at integer epoch e in [0, E).
//   const:   lambda
//   linear:  lambda (1 - e/E)
//   cos:     lambda (1 + cos(pi e/E)) / 2
//   halfcos: lambda cos(pi e / (2E))
//   jump:    lambda until t*, linear to zero over `ramp` epochs, then zero
inline double lambda_at(const ScheduleSpec& spec, std::size_t epoch) {
    spec.validate();
    if (epoch >= spec.total_epochs) throw ContractError("lambda_at: epoch out of range");
    const double e = static_cast<double>(epoch);
    const double total = static_cast<double>(spec.total_epochs);
    switch (spec.kind) {
        case ScheduleKind::Const:
            return spec.peak;
        case ScheduleKind::Linear:
            return spec.peak * (1.0 - e / total);
        case ScheduleKind::Cos:
            return spec.peak * (1.0 + std::cos(M_PI * e / total)) / 2.0;
        case ScheduleKind::HalfCos:
            return spec.peak * std::cos(M_PI * e / (2.0 * total));
        case ScheduleKind::Jump: {
            if (epoch < spec.jump_epoch) return spec.peak;
            if (epoch < spec.jump_epoch + spec.ramp)
                return spec.peak *
                       (1.0 - static_cast<double>(epoch - spec.jump_epoch) /
                                  static_cast<double>(spec.ramp));
            return 0.0;
        }
    }
    throw ContractError("lambda_at: unknown schedule kind");
}

inline const char* to_string(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::Const: return "const";
        case ScheduleKind::Linear: return "linear";
        case ScheduleKind::Cos: return "cos";
        case ScheduleKind::HalfCos: return "halfcos";
        case ScheduleKind::Jump: return "jump";
    }
    return "const";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "const") return ScheduleKind::Const;
    if (s == "linear") return ScheduleKind::Linear;
    if (s == "cos") return ScheduleKind::Cos;
    if (s == "halfcos") return ScheduleKind::HalfCos;
    if (s == "jump") return ScheduleKind::Jump;
    throw ContractError("unknown schedule kind: " + s);
}

}  // namespace tt
