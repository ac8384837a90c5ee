#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "rpq/common.hpp"
#include "rpq/distance.hpp"
#include "rpq/rng.hpp"

namespace rpq {

/// M sub-codebooks of K codewords each; words laid out [chunk][codeword][coord].
struct Codebook {
    std::uint32_t m = 0;
    std::uint32_t k = 0;
    std::uint32_t sub_dim = 0;
    std::vector<double> words;

    static Codebook zeros(std::uint32_t m, std::uint32_t k, std::uint32_t sub_dim) {
        Codebook c;
        c.m = m;
        c.k = k;
        c.sub_dim = sub_dim;
        c.words.assign(static_cast<std::size_t>(m) * k * sub_dim, 0.0);
        return c;
    }

    std::uint32_t dim() const { return m * sub_dim; }
    const double* word(std::uint32_t chunk, std::uint32_t id) const {
        return words.data() + (static_cast<std::size_t>(chunk) * k + id) * sub_dim;
    }
    double* word(std::uint32_t chunk, std::uint32_t id) {
        return words.data() + (static_cast<std::size_t>(chunk) * k + id) * sub_dim;
    }
};

namespace detail {

struct KmeansResult {
    std::vector<double> centroids; // k x dim
    double distortion = 0.0;       // mean squared distance to assigned centroid
};

inline double kmeans_assign(const double* points, std::size_t n, std::size_t dim,
                            const std::vector<double>& centroids, std::size_t k,
                            std::vector<std::uint32_t>& assign) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* p = points + i * dim;
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_c = 0;
        for (std::size_t c = 0; c < k; ++c) {
            const double d = l2sq(p, centroids.data() + c * dim, dim);
            if (d < best) {
                best = d;
                best_c = static_cast<std::uint32_t>(c);
            }
        }
        assign[i] = best_c;
        total += best;
    }
    return total / static_cast<double>(n);
}

// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded on
// the point currently farthest from its centroid.
inline KmeansResult kmeans(const double* points, std::size_t n, std::size_t dim,
                           std::size_t k, int iters, Rng& g) {
    if (n < k) throw ArgumentError("kmeans: fewer points than clusters");

    KmeansResult res;
    res.centroids.assign(k * dim, 0.0);

    // k-means++ init
    std::vector<double> mind(n, std::numeric_limits<double>::infinity());
    {
        std::size_t first = static_cast<std::size_t>(rng::below(g, n));
        std::copy_n(points + first * dim, dim, res.centroids.begin());
        for (std::size_t c = 1; c < k; ++c) {
            const double* last = res.centroids.data() + (c - 1) * dim;
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                mind[i] = std::min(mind[i], static_cast<double>(l2sq(points + i * dim, last, dim)));
                sum += mind[i];
            }
            std::size_t pick = 0;
            if (sum > 0.0) {
                double r = rng::uniform(g) * sum;
                for (std::size_t i = 0; i < n; ++i) {
                    r -= mind[i];
                    if (r <= 0.0) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = static_cast<std::size_t>(rng::below(g, n));
            }
            std::copy_n(points + pick * dim, dim, res.centroids.begin() + c * dim);
        }
    }

    std::vector<std::uint32_t> assign(n, 0);
    std::vector<std::size_t> counts(k, 0);
    res.distortion = kmeans_assign(points, n, dim, res.centroids, k, assign);

    for (int it = 0; it < iters; ++it) {
        std::fill(res.centroids.begin(), res.centroids.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            double* c = res.centroids.data() + assign[i] * dim;
            const double* p = points + i * dim;
            for (std::size_t j = 0; j < dim; ++j) c[j] += p[j];
            counts[assign[i]] += 1;
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            const double inv = 1.0 / static_cast<double>(counts[c]);
            for (std::size_t j = 0; j < dim; ++j) res.centroids[c * dim + j] *= inv;
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            // farthest point from its current centroid becomes the new seed
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = l2sq(points + i * dim,
                                      res.centroids.data() + assign[i] * dim, dim);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            std::copy_n(points + far * dim, dim, res.centroids.begin() + c * dim);
            assign[far] = static_cast<std::uint32_t>(c);
        }
        const double next = kmeans_assign(points, n, dim, res.centroids, k, assign);
        if (next == res.distortion) {
            res.distortion = next;
            break;
        }
        res.distortion = next;
    }
    return res;
}

} // namespace detail

// Lloyd k-means per chunk over the supplied training sub-vectors.
// chunks[j] holds the j-th chunk's points, flattened n_j x sub_dim.
inline Codebook train_codebook(const std::vector<std::vector<double>>& chunks,
                               std::uint32_t sub_dim, std::uint32_t k,
                               int iters, std::uint64_t seed) {
    if (chunks.empty() || k == 0) throw ArgumentError("train_codebook: empty input");
    Codebook cb = Codebook::zeros(static_cast<std::uint32_t>(chunks.size()), k, sub_dim);
    for (std::uint32_t j = 0; j < cb.m; ++j) {
        const std::size_t n = chunks[j].size() / sub_dim;
        if (n < k)
            throw ArgumentError("train_codebook: chunk " + std::to_string(j) +
                                " has fewer points than K");
        Rng g(rng::derive(seed, 0xC0DEB00C + j));
        const detail::KmeansResult km = detail::kmeans(chunks[j].data(), n, sub_dim, k, iters, g);
        std::copy(km.centroids.begin(), km.centroids.end(), cb.word(j, 0));
    }
    return cb;
}

} // namespace rpq
