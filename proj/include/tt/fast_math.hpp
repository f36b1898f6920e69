// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace tt {

// Branch-free polynomial expf. The hot paths (attention softmax, GELU) call
// exp millions of times per step and glibc's scalar expf blocks
// autovectorization; this version is plain arithmetic, so gcc vectorizes the
// surrounding loops and results stay bit-identical for a given binary.
// Max relative error ~2e-7 over the clamped range.
inline float fast_expf(float x) {
    x = x < -87.0f ? -87.0f : (x > 88.0f ? 88.0f : x);
    const float log2e = 1.442695040f;
    float t = x * log2e;
    float n = std::floor(t + 0.5f);
    // Cody-Waite split of ln2 keeps r accurate near the breakpoints.
    float r = x - n * 0.693145751953125f - n * 1.428606765330187e-06f;
    // Degree-5 minimax of e^r on [-ln2/2, ln2/2].
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    p = p * r * r + r + 1.0f;
    std::int32_t biased = static_cast<std::int32_t>(n) + 127;
    float scale = std::bit_cast<float>(biased << 23);
    return p * scale;
}

inline float fast_tanhf(float x) {
    if (x > 9.0f) return 1.0f;
    if (x < -9.0f) return -1.0f;
    return 1.0f - 2.0f / (fast_expf(2.0f * x) + 1.0f);
}

// Scalar-generic exp/tanh: precise libm in double (tests and analysis run in
// 64-bit), fast approximations in float (training).
template <class S>
inline S scalar_exp(S x) {
    return std::exp(x);
}
template <>
inline float scalar_exp<float>(float x) {
    return fast_expf(x);
}

template <class S>
inline S scalar_tanh(S x) {
    return std::tanh(x);
}
template <>
inline float scalar_tanh<float>(float x) {
    return fast_tanhf(x);
}

}  // namespace tt
