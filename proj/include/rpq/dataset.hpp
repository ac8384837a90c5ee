#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "rpq/common.hpp"
#include "rpq/distance.hpp"
#include "rpq/rng.hpp"

namespace rpq {

/// N dense D-dimensional float vectors, row-major. Ids are implicit 0..N-1.
struct VectorDataset {
    std::uint32_t dim = 0;
    std::size_t count = 0;
    std::vector<float> data;

    const float* row(std::size_t i) const { return data.data() + i * dim; }
    float* row(std::size_t i) { return data.data() + i * dim; }
};

enum class VecFormat { fvecs, bvecs, ivecs };

inline VecFormat format_from_path(const std::string& path) {
    if (path.size() >= 6) {
        const std::string ext = path.substr(path.size() - 6);
        if (ext == ".fvecs") return VecFormat::fvecs;
        if (ext == ".bvecs") return VecFormat::bvecs;
        if (ext == ".ivecs") return VecFormat::ivecs;
    }
    throw ArgumentError("cannot infer vector format from path: " + path);
}

namespace detail {

inline std::size_t payload_bytes(VecFormat f, std::uint32_t dim) {
    return f == VecFormat::bvecs ? dim : dim * 4u;
}

} // namespace detail

// TEXMEX container: each record is a little-endian int32 dimension header
// followed by dim entries (float32 / uint8 / int32). bvecs and ivecs payloads
// are widened to float so downstream code handles one numeric type.
inline VectorDataset load_vectors(const std::string& path, VecFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vector file: " + path);

    VectorDataset ds;
    std::vector<unsigned char> buf;
    while (true) {
        std::int32_t header = 0;
        in.read(reinterpret_cast<char*>(&header), 4);
        if (in.gcount() == 0) break; // clean EOF
        if (in.gcount() != 4)
            throw FormatError(path + ": truncated record header");
        if (header <= 0)
            throw FormatError(path + ": non-positive dimension header");
        const auto dim = static_cast<std::uint32_t>(header);
        if (ds.count == 0) {
            ds.dim = dim;
        } else if (dim != ds.dim) {
            throw FormatError(path + ": record dimension " + std::to_string(dim) +
                              " does not match first record " + std::to_string(ds.dim));
        }
        const std::size_t nbytes = detail::payload_bytes(format, dim);
        buf.resize(nbytes);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(nbytes));
        if (static_cast<std::size_t>(in.gcount()) != nbytes)
            throw FormatError(path + ": truncated record payload");

        const std::size_t base = ds.data.size();
        ds.data.resize(base + dim);
        switch (format) {
        case VecFormat::fvecs: {
            std::memcpy(ds.data.data() + base, buf.data(), nbytes);
            break;
        }
        case VecFormat::bvecs: {
            for (std::uint32_t j = 0; j < dim; ++j)
                ds.data[base + j] = static_cast<float>(buf[j]);
            break;
        }
        case VecFormat::ivecs: {
            for (std::uint32_t j = 0; j < dim; ++j) {
                std::int32_t v;
                std::memcpy(&v, buf.data() + 4 * j, 4);
                ds.data[base + j] = static_cast<float>(v);
            }
            break;
        }
        }
        for (std::uint32_t j = 0; j < dim; ++j)
            if (!std::isfinite(ds.data[base + j]))
                throw FormatError(path + ": non-finite entry in record " +
                                  std::to_string(ds.count));
        ds.count += 1;
    }
    return ds;
}

inline void save_vectors(const VectorDataset& ds, const std::string& path, VecFormat format) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    const auto header = static_cast<std::int32_t>(ds.dim);
    std::vector<unsigned char> buf(detail::payload_bytes(format, ds.dim));
    for (std::size_t i = 0; i < ds.count; ++i) {
        out.write(reinterpret_cast<const char*>(&header), 4);
        const float* r = ds.row(i);
        switch (format) {
        case VecFormat::fvecs:
            out.write(reinterpret_cast<const char*>(r), 4ll * ds.dim);
            break;
        case VecFormat::bvecs:
            for (std::uint32_t j = 0; j < ds.dim; ++j)
                buf[j] = static_cast<unsigned char>(r[j]);
            out.write(reinterpret_cast<const char*>(buf.data()), ds.dim);
            break;
        case VecFormat::ivecs:
            for (std::uint32_t j = 0; j < ds.dim; ++j) {
                const auto v = static_cast<std::int32_t>(r[j]);
                std::memcpy(buf.data() + 4 * j, &v, 4);
            }
            out.write(reinterpret_cast<const char*>(buf.data()), 4ll * ds.dim);
            break;
        }
    }
    if (!out) throw IoError("write failed: " + path);
}

/// Exact k-nearest-neighbor lists, row-sorted by ascending distance.
struct GroundTruth {
    std::uint32_t k = 0;
    std::size_t nq = 0;
    std::vector<std::uint32_t> neighbors; // nq x k

    const std::uint32_t* row(std::size_t q) const { return neighbors.data() + q * k; }
};

// Brute-force oracle for recall evaluation. Ties break toward the lower
// index. Queries are partitioned across workers; each row depends only on
// its own query, so results are independent of the worker count.
inline GroundTruth compute_ground_truth(const VectorDataset& base,
                                        const VectorDataset& queries,
                                        std::uint32_t k,
                                        unsigned threads = 1) {
    if (base.dim != queries.dim)
        throw ArgumentError("ground truth: base dim != query dim");
    if (k == 0 || static_cast<std::size_t>(k) > base.count)
        throw ArgumentError("ground truth: k must be in [1, base.count]");

    GroundTruth gt;
    gt.k = k;
    gt.nq = queries.count;
    gt.neighbors.assign(gt.nq * k, 0);

    auto worker = [&](std::size_t qbegin, std::size_t qend) {
        std::vector<std::pair<float, std::uint32_t>> best;
        for (std::size_t q = qbegin; q < qend; ++q) {
            best.clear();
            best.reserve(base.count);
            const float* qv = queries.row(q);
            for (std::size_t i = 0; i < base.count; ++i)
                best.emplace_back(l2sq(base.row(i), qv, base.dim),
                                  static_cast<std::uint32_t>(i));
            std::partial_sort(best.begin(), best.begin() + k, best.end());
            for (std::uint32_t j = 0; j < k; ++j)
                gt.neighbors[q * k + j] = best[j].second;
        }
    };

    if (threads <= 1 || gt.nq < 2) {
        worker(0, gt.nq);
    } else {
        const unsigned nt = std::min<unsigned>(threads, static_cast<unsigned>(gt.nq));
        std::vector<std::thread> pool;
        const std::size_t chunk = (gt.nq + nt - 1) / nt;
        for (unsigned t = 0; t < nt; ++t) {
            const std::size_t b = t * chunk;
            const std::size_t e = std::min(gt.nq, b + chunk);
            if (b < e) pool.emplace_back(worker, b, e);
        }
        for (auto& th : pool) th.join();
    }
    return gt;
}

inline void save_ground_truth(const GroundTruth& gt, const std::string& path) {
    VectorDataset as_vecs;
    as_vecs.dim = gt.k;
    as_vecs.count = gt.nq;
    as_vecs.data.resize(gt.nq * gt.k);
    for (std::size_t i = 0; i < gt.neighbors.size(); ++i)
        as_vecs.data[i] = static_cast<float>(gt.neighbors[i]);
    save_vectors(as_vecs, path, VecFormat::ivecs);
}

inline GroundTruth load_ground_truth(const std::string& path) {
    const VectorDataset as_vecs = load_vectors(path, VecFormat::ivecs);
    GroundTruth gt;
    gt.k = as_vecs.dim;
    gt.nq = as_vecs.count;
    gt.neighbors.resize(gt.nq * gt.k);
    for (std::size_t i = 0; i < gt.neighbors.size(); ++i)
        gt.neighbors[i] = static_cast<std::uint32_t>(as_vecs.data[i]);
    return gt;
}

// Gaussian blobs around `clusters` random centers. Each blob gets its own
// anisotropic covariance (random orthogonal frame with a decaying spectrum),
// which gives the generated data the kind of correlated, unevenly spread
// dimensions that real descriptor datasets have. Bit-deterministic per seed.
inline VectorDataset make_synthetic(std::size_t n, std::uint32_t d,
                                    std::size_t clusters, std::uint64_t seed) {
    if (n < 1 || d < 1 || clusters < 1)
        throw ArgumentError("make_synthetic: n, d, clusters must be >= 1");

    Rng g(rng::derive(seed, 0x5947));
    VectorDataset ds;
    ds.dim = d;
    ds.count = n;
    ds.data.resize(n * static_cast<std::size_t>(d));

    std::vector<double> centers(clusters * static_cast<std::size_t>(d));
    for (double& c : centers) c = 3.0 * rng::normal(g);

    // Per-cluster frame: a handful of random directions with decaying scale
    // on top of a small isotropic floor.
    const std::uint32_t rank = std::min<std::uint32_t>(d, 16);
    std::vector<double> frames(clusters * static_cast<std::size_t>(rank) * d);
    for (std::size_t c = 0; c < clusters; ++c) {
        for (std::uint32_t r = 0; r < rank; ++r) {
            double* dir = frames.data() + (c * rank + r) * d;
            double norm = 0.0;
            for (std::uint32_t j = 0; j < d; ++j) {
                dir[j] = rng::normal(g);
                norm += dir[j] * dir[j];
            }
            norm = std::sqrt(norm);
            const double scale = 1.0 / std::sqrt(1.0 + r);
            for (std::uint32_t j = 0; j < d; ++j) dir[j] *= scale / norm;
        }
    }

    std::vector<double> coeff(rank);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = static_cast<std::size_t>(rng::below(g, clusters));
        for (std::uint32_t r = 0; r < rank; ++r) coeff[r] = rng::normal(g);
        float* out = ds.row(i);
        const double* center = centers.data() + c * d;
        const double* frame = frames.data() + c * rank * static_cast<std::size_t>(d);
        for (std::uint32_t j = 0; j < d; ++j) {
            double v = center[j] + 0.05 * rng::normal(g);
            for (std::uint32_t r = 0; r < rank; ++r) v += coeff[r] * frame[r * d + j];
            out[j] = static_cast<float>(v);
        }
    }
    return ds;
}

// Uniform sample without replacement (training subsets).
inline std::vector<std::uint32_t> sample_ids(std::size_t n, std::size_t take, Rng& g) {
    take = std::min(take, n);
    std::vector<std::uint32_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<std::uint32_t>(i);
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng::below(g, n - i));
        std::swap(ids[i], ids[j]);
    }
    ids.resize(take);
    return ids;
}

} // namespace rpq
