// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tt/linalg.hpp"

namespace tt {

// Per-sample text embeddings keyed by sample id. Rows are stored as f32, the
// unit they travel in on disk; the statistics math runs in 64-bit.
struct RawEmbeddingSet {
    std::uint32_t dim = 0;
    std::vector<std::string> ids;
    std::vector<std::vector<float>> rows;

    std::size_t size() const { return rows.size(); }
    std::unordered_map<std::string, std::size_t> index() const;
};

struct WhiteningStats {
    std::vector<double> mean;
    Matd inv_sqrt_cov;
    double floor = 0.0;

    std::uint32_t dim() const { return static_cast<std::uint32_t>(mean.size()); }
};

struct WhitenedTargetSet {
    WhiteningStats stats;
    std::uint32_t dim = 0;
    std::vector<std::string> ids;
    std::vector<std::vector<float>> targets;

    std::size_t size() const { return targets.size(); }
    std::unordered_map<std::string, std::size_t> index() const;
};

// Deterministic stand-in for a frozen text encoder: lowercase the caption,
// split on non-alphanumeric bytes, hash every token with seeded 64-bit
// FNV-1a, and add a signed unit impulse per token (index = hash mod dim,
// sign from bit 63). Token order does not matter; an empty caption maps to
// the zero vector.
std::vector<double> pseudo_encode(std::string_view caption, std::uint32_t dim,
                                  std::uint64_t seed);

RawEmbeddingSet pseudo_encode_all(const std::vector<std::string>& ids,
                                  const std::vector<std::string>& captions,
                                  std::uint32_t dim, std::uint64_t seed);

// Empirical mean and 1/N covariance of the rows, inverted through
// psd_inv_sqrt with the given eigenvalue floor. Needs at least two samples.
WhiteningStats fit_whitening(const RawEmbeddingSet& raw, double floor);

// inv_sqrt_cov * (v - mean), in 64-bit.
std::vector<double> whiten(const std::vector<double>& v, const WhiteningStats& stats);

WhitenedTargetSet whiten_set(const RawEmbeddingSet& raw, const WhiteningStats& stats);

inline constexpr double kDefaultWhiteningFloor = 1e-6;

// Embedding cache ("TTEC") on disk, little-endian:
//   magic "TTEC" | u32 version=1 | u8 kind (0 raw, 1 whitened) | u32 dim |
//   u64 count | count * { u16 id_len | id bytes | dim * f32 }
// Whitened files append mean (dim * f64) and inv_sqrt_cov (dim^2 * f64).
struct TtecFile {
    std::uint8_t kind = 0;
    RawEmbeddingSet rows;
    std::optional<WhiteningStats> stats;
};

void save_cache(const RawEmbeddingSet& set, const std::string& path);
void save_cache(const WhitenedTargetSet& set, const std::string& path);
TtecFile load_cache(const std::string& path);

// Convenience wrappers that insist on a specific kind.
RawEmbeddingSet load_raw_cache(const std::string& path);
WhitenedTargetSet load_whitened_cache(const std::string& path);

}  // namespace tt
