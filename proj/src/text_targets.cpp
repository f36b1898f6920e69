// SPDX-License-Identifier: Apache-2.0
#include "tt/text_targets.hpp"

#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>

#include "tt/errors.hpp"
#include "tt/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "cache formats are little-endian; big-endian hosts are unsupported");

namespace tt {

std::unordered_map<std::string, std::size_t> RawEmbeddingSet::index() const {
    std::unordered_map<std::string, std::size_t> m;
    m.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) m.emplace(ids[i], i);
    return m;
}

std::unordered_map<std::string, std::size_t> WhitenedTargetSet::index() const {
    std::unordered_map<std::string, std::size_t> m;
    m.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) m.emplace(ids[i], i);
    return m;
}

namespace {

std::uint64_t seeded_fnv1a(std::string_view token, std::uint64_t seed) {
    // The seed enters the stream as eight little-endian bytes ahead of the
    // token, so distinct seeds produce unrelated hash families.
    std::uint64_t h = 14695981039346656037ULL;
    for (int i = 0; i < 8; ++i) {
        h ^= static_cast<unsigned char>(seed >> (8 * i));
        h *= 1099511628211ULL;
    }
    for (unsigned char c : token) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

bool is_token_byte(unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

}  // namespace

std::vector<double> pseudo_encode(std::string_view caption, std::uint32_t dim,
                                  std::uint64_t seed) {
    if (dim < 8) throw ContractError("pseudo_encode: dim must be at least 8");
    std::vector<double> out(dim, 0.0);
    std::size_t i = 0;
    std::string token;
    while (i < caption.size()) {
        while (i < caption.size() && !is_token_byte(caption[i])) ++i;
        token.clear();
        while (i < caption.size() && is_token_byte(caption[i])) {
            unsigned char c = caption[i++];
            if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
            token.push_back(static_cast<char>(c));
        }
        if (token.empty()) continue;
        std::uint64_t h = seeded_fnv1a(token, seed);
        double sign = (h >> 63) ? -1.0 : 1.0;
        out[h % dim] += sign;
    }
    return out;
}

RawEmbeddingSet pseudo_encode_all(const std::vector<std::string>& ids,
                                  const std::vector<std::string>& captions,
                                  std::uint32_t dim, std::uint64_t seed) {
    if (ids.size() != captions.size())
        throw ContractError("pseudo_encode_all: ids and captions disagree in length");
    RawEmbeddingSet set;
    set.dim = dim;
    set.ids = ids;
    set.rows.reserve(ids.size());
    for (const auto& cap : captions) {
        std::vector<double> v = pseudo_encode(cap, dim, seed);
        set.rows.emplace_back(v.begin(), v.end());
    }
    return set;
}

WhiteningStats fit_whitening(const RawEmbeddingSet& raw, double floor) {
    const std::size_t n = raw.size();
    if (n < 2) throw ContractError("fit_whitening: need at least two samples");
    const std::uint32_t d = raw.dim;

    WhiteningStats stats;
    stats.floor = floor;
    stats.mean.assign(d, 0.0);
    for (const auto& row : raw.rows)
        for (std::uint32_t j = 0; j < d; ++j) stats.mean[j] += static_cast<double>(row[j]);
    for (double& v : stats.mean) v /= static_cast<double>(n);

    Matd cov(d, d);
    std::vector<double> centered(d);
    for (const auto& row : raw.rows) {
        for (std::uint32_t j = 0; j < d; ++j)
            centered[j] = static_cast<double>(row[j]) - stats.mean[j];
        for (std::uint32_t i = 0; i < d; ++i) {
            double ci = centered[i];
            for (std::uint32_t j = i; j < d; ++j) cov(i, j) += ci * centered[j];
        }
    }
    // 1/N normalization (not 1/(N-1)); the whitening identity tests assume it.
    for (std::uint32_t i = 0; i < d; ++i)
        for (std::uint32_t j = i; j < d; ++j) {
            cov(i, j) /= static_cast<double>(n);
            cov(j, i) = cov(i, j);
        }

    stats.inv_sqrt_cov = psd_inv_sqrt(cov, floor);
    return stats;
}

std::vector<double> whiten(const std::vector<double>& v, const WhiteningStats& stats) {
    if (v.size() != stats.mean.size()) throw ContractError("whiten: dimension mismatch");
    std::vector<double> centered(v.size());
    for (std::size_t j = 0; j < v.size(); ++j) centered[j] = v[j] - stats.mean[j];
    return mat_vec(stats.inv_sqrt_cov, centered);
}

WhitenedTargetSet whiten_set(const RawEmbeddingSet& raw, const WhiteningStats& stats) {
    if (raw.dim != stats.dim()) throw ContractError("whiten_set: dimension mismatch");
    WhitenedTargetSet out;
    out.stats = stats;
    out.dim = raw.dim;
    out.ids = raw.ids;
    out.targets.reserve(raw.size());
    std::vector<double> v(raw.dim);
    for (const auto& row : raw.rows) {
        for (std::uint32_t j = 0; j < raw.dim; ++j) v[j] = static_cast<double>(row[j]);
        std::vector<double> t = whiten(v, stats);
        out.targets.emplace_back(t.begin(), t.end());
    }
    return out;
}

namespace {

constexpr char kMagic[4] = {'T', 'T', 'E', 'C'};
constexpr std::uint32_t kVersion = 1;

void write_bytes(std::ofstream& f, const void* p, std::size_t n) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!f) throw FileError(FileErrorKind::Io, "write failed");
}

template <class T>
void write_pod(std::ofstream& f, T v) {
    write_bytes(f, &v, sizeof(T));
}

void read_bytes(std::ifstream& f, void* p, std::size_t n, const char* what) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f.gcount()) != n)
        throw FileError(FileErrorKind::Truncated, what);
}

template <class T>
T read_pod(std::ifstream& f, const char* what) {
    T v;
    read_bytes(f, &v, sizeof(T), what);
    return v;
}

void write_records(std::ofstream& f, const std::vector<std::string>& ids,
                   const std::vector<std::vector<float>>& rows, std::uint8_t kind,
                   std::uint32_t dim) {
    write_bytes(f, kMagic, 4);
    write_pod(f, kVersion);
    write_pod(f, kind);
    write_pod(f, dim);
    write_pod(f, static_cast<std::uint64_t>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (ids[i].size() > 0xffff)
            throw ContractError("save_cache: sample id longer than 65535 bytes");
        write_pod(f, static_cast<std::uint16_t>(ids[i].size()));
        write_bytes(f, ids[i].data(), ids[i].size());
        write_bytes(f, rows[i].data(), sizeof(float) * dim);
    }
}

}  // namespace

void save_cache(const RawEmbeddingSet& set, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FileError(FileErrorKind::Io, "cannot open " + path);
    write_records(f, set.ids, set.rows, 0, set.dim);
}

void save_cache(const WhitenedTargetSet& set, const std::string& path) {
    if (set.stats.dim() != set.dim || set.stats.inv_sqrt_cov.rows != set.dim ||
        set.stats.inv_sqrt_cov.cols != set.dim)
        throw ContractError("save_cache: stats dimension mismatch");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FileError(FileErrorKind::Io, "cannot open " + path);
    write_records(f, set.ids, set.targets, 1, set.dim);
    write_bytes(f, set.stats.mean.data(), sizeof(double) * set.dim);
    write_bytes(f, set.stats.inv_sqrt_cov.a.data(),
                sizeof(double) * static_cast<std::size_t>(set.dim) * set.dim);
}

TtecFile load_cache(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FileError(FileErrorKind::Io, "cannot open " + path);

    char magic[4];
    read_bytes(f, magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FileError(FileErrorKind::BadMagic, path);
    const auto version = read_pod<std::uint32_t>(f, "version");
    if (version != kVersion)
        throw FileError(FileErrorKind::BadVersion, "got " + std::to_string(version));
    const auto kind = read_pod<std::uint8_t>(f, "kind");
    if (kind > 1) throw FileError(FileErrorKind::BadKind, "kind " + std::to_string(kind));

    TtecFile out;
    out.kind = kind;
    out.rows.dim = read_pod<std::uint32_t>(f, "dim");
    const auto count = read_pod<std::uint64_t>(f, "count");
    out.rows.ids.reserve(count);
    out.rows.rows.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto id_len = read_pod<std::uint16_t>(f, "id length");
        std::string id(id_len, '\0');
        if (id_len > 0) read_bytes(f, id.data(), id_len, "id bytes");
        std::vector<float> row(out.rows.dim);
        read_bytes(f, row.data(), sizeof(float) * out.rows.dim, "embedding row");
        out.rows.ids.push_back(std::move(id));
        out.rows.rows.push_back(std::move(row));
    }
    if (kind == 1) {
        WhiteningStats stats;
        stats.mean.resize(out.rows.dim);
        read_bytes(f, stats.mean.data(), sizeof(double) * out.rows.dim, "whitening mean");
        stats.inv_sqrt_cov = Matd(out.rows.dim, out.rows.dim);
        read_bytes(f, stats.inv_sqrt_cov.a.data(),
                   sizeof(double) * static_cast<std::size_t>(out.rows.dim) * out.rows.dim,
                   "whitening matrix");
        out.stats = std::move(stats);
    }
    if (f.peek() != std::ifstream::traits_type::eof())
        throw FileError(FileErrorKind::TrailingBytes, path);
    return out;
}

RawEmbeddingSet load_raw_cache(const std::string& path) {
    TtecFile file = load_cache(path);
    if (file.kind != 0)
        throw FileError(FileErrorKind::BadKind, "expected a raw cache: " + path);
    return std::move(file.rows);
}

WhitenedTargetSet load_whitened_cache(const std::string& path) {
    TtecFile file = load_cache(path);
    if (file.kind != 1)
        throw FileError(FileErrorKind::BadKind, "expected a whitened cache: " + path);
    WhitenedTargetSet out;
    out.stats = std::move(*file.stats);
    out.dim = file.rows.dim;
    out.ids = std::move(file.rows.ids);
    out.targets = std::move(file.rows.rows);
    return out;
}

}  // namespace tt
