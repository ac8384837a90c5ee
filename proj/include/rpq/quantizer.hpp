#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <vector>

#include "rpq/codebook.hpp"
#include "rpq/common.hpp"
#include "rpq/dataset.hpp"
#include "rpq/distance.hpp"
#include "rpq/rng.hpp"
#include "rpq/rotation.hpp"

namespace rpq {

/// M codeword identifiers encoding one vector. K <= 256, so one byte per id.
struct CompactCode {
    std::vector<std::uint8_t> ids;
};

/// Codes for a whole dataset, one row of M bytes per vector.
struct CodeArray {
    std::uint32_t m = 0;
    std::uint32_t k = 0;
    std::size_t n = 0;
    std::vector<std::uint8_t> ids;

    const std::uint8_t* row(std::size_t i) const { return ids.data() + i * m; }
    std::uint8_t* row(std::size_t i) { return ids.data() + i * m; }
};

/// Per-query cache of sub-query-to-codeword distances.
struct LookupTable {
    std::uint32_t m = 0;
    std::uint32_t k = 0;
    std::uint32_t query_dim = 0;
    std::vector<double> entries; // m x k

    double at(std::uint32_t chunk, std::uint32_t id) const {
        return entries[static_cast<std::size_t>(chunk) * k + id];
    }
};

/// Relaxed code: one weight distribution over codewords per chunk.
struct SoftCode {
    std::uint32_t m = 0;
    std::uint32_t k = 0;
    std::vector<double> weights; // m x k, rows sum to 1

    const double* row(std::uint32_t chunk) const {
        return weights.data() + static_cast<std::size_t>(chunk) * k;
    }
};

namespace detail {

inline std::uint32_t nearest_word(const double* sub, const Codebook& cb, std::uint32_t chunk) {
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_id = 0;
    for (std::uint32_t id = 0; id < cb.k; ++id) {
        const double d = l2sq(sub, cb.word(chunk, id), cb.sub_dim);
        if (d < best) {
            best = d;
            best_id = id;
        }
    }
    return best_id;
}

// Numerically stable softmax of `logits`, in place.
inline void softmax_inplace(double* logits, std::size_t k) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        logits[i] = std::exp(logits[i] - mx);
        sum += logits[i];
    }
    const double inv = 1.0 / sum;
    for (std::size_t i = 0; i < k; ++i) logits[i] *= inv;
}

} // namespace detail

inline void check_model_dims(const RotationMatrix& r, const Codebook& cb) {
    if (cb.dim() != r.dim)
        throw ConfigError("codebook dimensions do not match rotation");
}

inline CompactCode encode(const float* x, const RotationMatrix& r, const Codebook& cb) {
    check_model_dims(r, cb);
    std::vector<double> y = rotate(r, x);
    CompactCode code;
    code.ids.resize(cb.m);
    for (std::uint32_t j = 0; j < cb.m; ++j)
        code.ids[j] = static_cast<std::uint8_t>(
            detail::nearest_word(y.data() + static_cast<std::size_t>(j) * cb.sub_dim, cb, j));
    return code;
}

inline CodeArray encode_all(const VectorDataset& data, const RotationMatrix& r,
                            const Codebook& cb) {
    check_model_dims(r, cb);
    CodeArray codes;
    codes.m = cb.m;
    codes.k = cb.k;
    codes.n = data.count;
    codes.ids.resize(data.count * static_cast<std::size_t>(cb.m));
    std::vector<double> y(r.dim);
    for (std::size_t i = 0; i < data.count; ++i) {
        r.apply(data.row(i), y.data());
        std::uint8_t* row = codes.row(i);
        for (std::uint32_t j = 0; j < cb.m; ++j)
            row[j] = static_cast<std::uint8_t>(
                detail::nearest_word(y.data() + static_cast<std::size_t>(j) * cb.sub_dim, cb, j));
    }
    return codes;
}

/// Concatenation of the selected codewords; lives in the rotated space.
inline std::vector<double> decode(const CompactCode& code, const Codebook& cb) {
    if (code.ids.size() != cb.m) throw ArgumentError("decode: code length != M");
    std::vector<double> out(cb.dim());
    for (std::uint32_t j = 0; j < cb.m; ++j) {
        if (code.ids[j] >= cb.k) throw std::out_of_range("decode: codeword id >= K");
        std::copy_n(cb.word(j, code.ids[j]), cb.sub_dim,
                    out.begin() + static_cast<std::size_t>(j) * cb.sub_dim);
    }
    return out;
}

inline LookupTable build_lookup(const float* q, const RotationMatrix& r, const Codebook& cb) {
    check_model_dims(r, cb);
    std::vector<double> y = rotate(r, q);
    LookupTable lut;
    lut.m = cb.m;
    lut.k = cb.k;
    lut.query_dim = r.dim;
    lut.entries.resize(static_cast<std::size_t>(cb.m) * cb.k);
    for (std::uint32_t j = 0; j < cb.m; ++j) {
        const double* sub = y.data() + static_cast<std::size_t>(j) * cb.sub_dim;
        double* out = lut.entries.data() + static_cast<std::size_t>(j) * cb.k;
        for (std::uint32_t id = 0; id < cb.k; ++id)
            out[id] = l2sq(sub, cb.word(j, id), cb.sub_dim);
    }
    return lut;
}

inline double adc_distance(const std::uint8_t* ids, const LookupTable& lut) {
    double acc = 0.0;
    for (std::uint32_t j = 0; j < lut.m; ++j) acc += lut.at(j, ids[j]);
    return acc;
}

inline double adc_distance(const CompactCode& code, const LookupTable& lut) {
    if (code.ids.size() != lut.m) throw ArgumentError("adc_distance: code length != M");
    return adc_distance(code.ids.data(), lut);
}

inline double sdc_distance(const CompactCode& a, const CompactCode& b, const Codebook& cb) {
    const std::vector<double> da = decode(a, cb);
    const std::vector<double> db = decode(b, cb);
    return l2sq(da.data(), db.data(), cb.dim());
}

// Codeword assignment probability (softmax over negated squared distances,
// so the nearest codeword gets the highest probability).
inline std::vector<double> assignment_probs(const double* sub, std::uint32_t chunk,
                                            const Codebook& cb) {
    std::vector<double> p(cb.k);
    for (std::uint32_t id = 0; id < cb.k; ++id)
        p[id] = -l2sq(sub, cb.word(chunk, id), cb.sub_dim);
    detail::softmax_inplace(p.data(), cb.k);
    return p;
}

// softmax((log p_k + z_k) / tau) with z_k ~ Gumbel(0,1) when noise is on.
inline std::vector<double> gumbel_soft_assign(const std::vector<double>& probs,
                                              double tau, Rng& g, bool noise) {
    if (!(tau > 0.0)) throw ArgumentError("gumbel_soft_assign: tau must be > 0");
    std::vector<double> logits(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double z = noise ? rng::gumbel(g) : 0.0;
        logits[i] = (std::log(probs[i]) + z) / tau;
    }
    detail::softmax_inplace(logits.data(), logits.size());
    return logits;
}

inline std::vector<double> gumbel_soft_assign(const std::vector<double>& probs,
                                              double tau, std::uint64_t seed, bool noise) {
    Rng g(seed);
    return gumbel_soft_assign(probs, tau, g, noise);
}

/// Per chunk, the convex combination of codewords under the soft weights.
inline std::vector<double> soft_decode(const SoftCode& soft, const Codebook& cb) {
    if (soft.m != cb.m || soft.k != cb.k)
        throw ArgumentError("soft_decode: shape mismatch");
    std::vector<double> out(cb.dim(), 0.0);
    for (std::uint32_t j = 0; j < cb.m; ++j) {
        const double* w = soft.row(j);
        double* o = out.data() + static_cast<std::size_t>(j) * cb.sub_dim;
        for (std::uint32_t id = 0; id < cb.k; ++id) {
            const double wi = w[id];
            if (wi == 0.0) continue;
            const double* c = cb.word(j, id);
            for (std::uint32_t t = 0; t < cb.sub_dim; ++t) o[t] += wi * c[t];
        }
    }
    return out;
}

// Accounting size of N compact codes (whole bytes once K is a power of two).
inline std::size_t compact_code_bytes(std::size_t n, std::uint32_t m, std::uint32_t k) {
    std::uint32_t bits = 0;
    while ((1u << bits) < k) ++bits; // ceil(log2 k)
    return (n * m * bits + 7) / 8;
}

// --- codes blob: header {N, M, K} as u32 little-endian, then N*M bytes ---

inline void save_codes(const CodeArray& codes, const std::string& path) {
    if (codes.k > 256) throw ConfigError("save_codes: K must be <= 256");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    const std::uint32_t header[3] = {static_cast<std::uint32_t>(codes.n), codes.m, codes.k};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    out.write(reinterpret_cast<const char*>(codes.ids.data()),
              static_cast<std::streamsize>(codes.ids.size()));
    if (!out) throw IoError("write failed: " + path);
}

inline CodeArray load_codes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open codes file: " + path);
    std::uint32_t header[3];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (in.gcount() != sizeof(header)) throw FormatError(path + ": truncated codes header");
    CodeArray codes;
    codes.n = header[0];
    codes.m = header[1];
    codes.k = header[2];
    codes.ids.resize(codes.n * static_cast<std::size_t>(codes.m));
    in.read(reinterpret_cast<char*>(codes.ids.data()),
            static_cast<std::streamsize>(codes.ids.size()));
    if (static_cast<std::size_t>(in.gcount()) != codes.ids.size())
        throw FormatError(path + ": truncated codes payload");
    for (std::uint8_t id : codes.ids)
        if (id >= codes.k) throw FormatError(path + ": codeword id out of range");
    return codes;
}

} // namespace rpq
