#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "rpq/common.hpp"
#include "rpq/dataset.hpp"
#include "rpq/distance.hpp"
#include "rpq/rng.hpp"

namespace rpq {

/// Directed proximity graph over the dataset's vertices (id-bijective).
struct ProximityGraph {
    std::uint32_t n = 0;
    std::uint32_t max_degree = 0;
    std::uint32_t entry = 0;
    std::vector<std::vector<std::uint32_t>> adjacency; // per-vertex sorted ids

    const std::vector<std::uint32_t>& neighbors(std::uint32_t v) const { return adjacency[v]; }
};

struct SearchResult {
    std::vector<std::uint32_t> ids; // ascending estimated distance
    std::vector<double> dists;      // matching estimated distances
    std::size_t hops = 0;           // expansion steps
    std::size_t distance_evals = 0;
};

namespace detail {

struct PoolEntry {
    double dist;
    std::uint32_t id;
    bool visited;
};

inline bool pool_less(const PoolEntry& a, const PoolEntry& b) {
    return a.dist < b.dist || (a.dist == b.dist && a.id < b.id);
}

struct BeamResult {
    std::vector<PoolEntry> pool; // sorted by (dist, id)
    std::vector<std::pair<std::uint32_t, double>> expanded; // in expansion order
    std::size_t hops = 0;
    std::size_t evals = 0;
};

struct NoHook {
    void operator()(const std::vector<PoolEntry>&) const {}
};

// Best-first beam search. Keeps the h closest candidates seen so far in a
// sorted pool, always expands the closest unvisited one, and stops when the
// whole pool is visited. Each vertex is inserted (and its distance computed)
// at most once. Ties resolve toward the lower id. `hook` observes the pool
// after every expansion.
template <class DistFn, class NeighborsFn, class StepHook = NoHook>
BeamResult beam_search_core(std::uint32_t n, std::uint32_t entry, DistFn&& dist,
                            NeighborsFn&& neighbors, std::size_t h,
                            StepHook&& hook = StepHook{}) {
    BeamResult res;
    if (n == 0) return res;

    std::vector<PoolEntry>& pool = res.pool;
    pool.reserve(h + 1);
    std::vector<std::uint8_t> seen(n, 0);

    auto insert = [&](std::uint32_t id) {
        if (seen[id]) return;
        seen[id] = 1;
        const double d = dist(id);
        ++res.evals;
        PoolEntry e{d, id, false};
        auto it = std::lower_bound(pool.begin(), pool.end(), e, pool_less);
        pool.insert(it, e);
        if (pool.size() > h) pool.pop_back();
    };

    insert(entry);
    while (true) {
        std::size_t next = pool.size();
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (!pool[i].visited) {
                next = i;
                break;
            }
        }
        if (next == pool.size()) break;
        pool[next].visited = true;
        const std::uint32_t v = pool[next].id;
        res.expanded.emplace_back(v, pool[next].dist);
        ++res.hops;
        for (std::uint32_t u : neighbors(v)) insert(u);
        hook(pool);
    }
    return res;
}

} // namespace detail

template <class DistFn>
SearchResult beam_search(const ProximityGraph& g, DistFn&& dist, std::size_t h, std::size_t k) {
    if (h < k || k < 1) throw ArgumentError("beam_search: require h >= k >= 1");
    auto nbrs = [&](std::uint32_t v) -> const std::vector<std::uint32_t>& {
        return g.adjacency[v];
    };
    detail::BeamResult br = detail::beam_search_core(g.n, g.entry, dist, nbrs, h);
    SearchResult res;
    res.hops = br.hops;
    res.distance_evals = br.evals;
    const std::size_t take = std::min(k, br.pool.size());
    res.ids.reserve(take);
    res.dists.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        res.ids.push_back(br.pool[i].id);
        res.dists.push_back(br.pool[i].dist);
    }
    return res;
}

/// |found ∩ truth| / |truth|
inline double recall_at_k(const std::vector<std::uint32_t>& found,
                          const std::vector<std::uint32_t>& truth) {
    if (truth.empty()) throw ArgumentError("recall_at_k: empty truth");
    std::vector<std::uint32_t> t(truth);
    std::sort(t.begin(), t.end());
    std::size_t hits = 0;
    for (std::uint32_t id : found)
        if (std::binary_search(t.begin(), t.end(), id)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

inline double recall_at_k(const std::vector<std::uint32_t>& found,
                          const std::uint32_t* truth, std::size_t k) {
    return recall_at_k(found, std::vector<std::uint32_t>(truth, truth + k));
}

namespace detail {

// Vamana-style pruning: keep the closest candidate, drop everything it
// alpha-dominates, repeat. Distances are squared, so the rule uses alpha^2.
inline std::vector<std::uint32_t> robust_prune(
    const VectorDataset& data, std::vector<std::pair<double, std::uint32_t>>& cand,
    double alpha, std::uint32_t max_degree) {
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end(),
                           [](const auto& a, const auto& b) { return a.second == b.second; }),
               cand.end());

    const double a2 = alpha * alpha;
    std::vector<std::uint32_t> result;
    std::vector<bool> dropped(cand.size(), false);
    for (std::size_t i = 0; i < cand.size() && result.size() < max_degree; ++i) {
        if (dropped[i]) continue;
        const std::uint32_t p = cand[i].second;
        result.push_back(p);
        const float* pv = data.row(p);
        for (std::size_t j = i + 1; j < cand.size(); ++j) {
            if (dropped[j]) continue;
            const std::uint32_t u = cand[j].second;
            const double d_pu = l2sq(pv, data.row(u), data.dim);
            if (a2 * d_pu <= cand[j].first) dropped[j] = true;
        }
    }
    return result;
}

inline std::vector<std::uint8_t> reachable_from(const ProximityGraph& g, std::uint32_t start) {
    std::vector<std::uint8_t> vis(g.n, 0);
    std::vector<std::uint32_t> stack{start};
    vis[start] = 1;
    while (!stack.empty()) {
        const std::uint32_t v = stack.back();
        stack.pop_back();
        for (std::uint32_t u : g.adjacency[v])
            if (!vis[u]) {
                vis[u] = 1;
                stack.push_back(u);
            }
    }
    return vis;
}

} // namespace detail

// Medoid under squared Euclidean distance against a fixed sample; expanded
// analytically: sum_s ||v - s||^2 = S*||v||^2 - 2<v, sum(s)> + const.
inline std::uint32_t medoid(const VectorDataset& data, std::size_t sample_size, Rng& g) {
    const std::size_t s = std::min(sample_size, data.count);
    std::vector<std::uint32_t> sample = sample_ids(data.count, s, g);
    std::vector<double> sum(data.dim, 0.0);
    for (std::uint32_t id : sample) {
        const float* r = data.row(id);
        for (std::uint32_t j = 0; j < data.dim; ++j) sum[j] += r[j];
    }
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_v = 0;
    for (std::size_t v = 0; v < data.count; ++v) {
        const float* r = data.row(v);
        double norm = 0.0, dot = 0.0;
        for (std::uint32_t j = 0; j < data.dim; ++j) {
            norm += static_cast<double>(r[j]) * r[j];
            dot += r[j] * sum[j];
        }
        const double score = static_cast<double>(s) * norm - 2.0 * dot;
        if (score < best) {
            best = score;
            best_v = static_cast<std::uint32_t>(v);
        }
    }
    return best_v;
}

// Vamana-style incremental build: random initial graph, then two passes of
// greedy-search + robust-prune reinsertion (alpha = 1 first, alpha_prune
// second). A final repair pass guarantees every vertex is reachable from
// the entry (the medoid). Deterministic for a fixed seed.
inline ProximityGraph build_graph(const VectorDataset& data, std::uint32_t max_degree,
                                  std::uint32_t build_beam, double alpha_prune,
                                  std::uint64_t seed) {
    if (data.count == 0) throw ArgumentError("build_graph: empty dataset");
    if (max_degree < 1 || build_beam < 1 || alpha_prune < 1.0)
        throw ArgumentError("build_graph: invalid parameters");

    const auto n = static_cast<std::uint32_t>(data.count);
    ProximityGraph g;
    g.n = n;
    g.max_degree = max_degree;
    g.adjacency.assign(n, {});

    Rng rng_(rng::derive(seed, 0x6E47));
    g.entry = medoid(data, 1000, rng_);

    if (n == 1) return g;

    // random initial out-edges
    const std::uint32_t init_deg = std::min(max_degree, n - 1);
    for (std::uint32_t v = 0; v < n; ++v) {
        auto& adj = g.adjacency[v];
        while (adj.size() < init_deg) {
            const auto u = static_cast<std::uint32_t>(rng::below(rng_, n));
            if (u != v && std::find(adj.begin(), adj.end(), u) == adj.end())
                adj.push_back(u);
        }
    }

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    std::vector<std::pair<double, std::uint32_t>> cand;
    for (int pass = 0; pass < 2; ++pass) {
        const double alpha = pass == 0 ? 1.0 : alpha_prune;
        for (std::uint32_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[rng::below(rng_, i)]);
        for (std::uint32_t v : order) {
            const float* xv = data.row(v);
            auto dist = [&](std::uint32_t u) {
                return static_cast<double>(l2sq(data.row(u), xv, data.dim));
            };
            auto nbrs = [&](std::uint32_t u) -> const std::vector<std::uint32_t>& {
                return g.adjacency[u];
            };
            detail::BeamResult br =
                detail::beam_search_core(n, g.entry, dist, nbrs, build_beam);

            cand.clear();
            for (const auto& [id, d] : br.expanded)
                if (id != v) cand.emplace_back(d, id);
            for (std::uint32_t u : g.adjacency[v])
                if (u != v) cand.emplace_back(dist(u), u);
            g.adjacency[v] = detail::robust_prune(data, cand, alpha, max_degree);

            for (std::uint32_t u : g.adjacency[v]) {
                auto& back = g.adjacency[u];
                if (std::find(back.begin(), back.end(), v) != back.end()) continue;
                if (back.size() < max_degree) {
                    back.push_back(v);
                } else {
                    const float* xu = data.row(u);
                    cand.clear();
                    cand.emplace_back(static_cast<double>(l2sq(xv, xu, data.dim)), v);
                    for (std::uint32_t w : back)
                        cand.emplace_back(static_cast<double>(l2sq(data.row(w), xu, data.dim)), w);
                    g.adjacency[u] = detail::robust_prune(data, cand, alpha, max_degree);
                }
            }
        }
    }

    // Repair: attach any vertex unreachable from the entry to its nearest
    // reachable vertex. Rare on non-degenerate data, but guarantees the
    // reachability invariant.
    for (std::uint32_t guard = 0; guard < n; ++guard) {
        std::vector<std::uint8_t> vis = detail::reachable_from(g, g.entry);
        std::uint32_t orphan = n;
        for (std::uint32_t v = 0; v < n; ++v)
            if (!vis[v]) {
                orphan = v;
                break;
            }
        if (orphan == n) break;
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t host = g.entry;
        for (std::uint32_t v = 0; v < n; ++v) {
            if (!vis[v]) continue;
            const double d = l2sq(data.row(v), data.row(orphan), data.dim);
            if (d < best) {
                best = d;
                host = v;
            }
        }
        auto& adj = g.adjacency[host];
        if (adj.size() >= max_degree) {
            // drop the farthest neighbor to make room
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < adj.size(); ++i) {
                const double d = l2sq(data.row(adj[i]), data.row(host), data.dim);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            adj.erase(adj.begin() + static_cast<std::ptrdiff_t>(far));
        }
        adj.push_back(orphan);
    }

    for (auto& adj : g.adjacency) std::sort(adj.begin(), adj.end());
    return g;
}

// --- graph file: header {n, max_degree, entry} u32, then per-vertex
// {degree, neighbor ids} as u32 little-endian ---

inline void save_graph(const ProximityGraph& g, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    const std::uint32_t header[3] = {g.n, g.max_degree, g.entry};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    for (const auto& adj : g.adjacency) {
        const auto deg = static_cast<std::uint32_t>(adj.size());
        out.write(reinterpret_cast<const char*>(&deg), 4);
        out.write(reinterpret_cast<const char*>(adj.data()), 4ll * deg);
    }
    if (!out) throw IoError("write failed: " + path);
}

inline ProximityGraph load_graph(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open graph file: " + path);
    std::uint32_t header[3];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (in.gcount() != sizeof(header)) throw FormatError(path + ": truncated graph header");
    ProximityGraph g;
    g.n = header[0];
    g.max_degree = header[1];
    g.entry = header[2];
    if (g.n > 0 && g.entry >= g.n) throw FormatError(path + ": entry vertex out of range");
    g.adjacency.resize(g.n);
    for (std::uint32_t v = 0; v < g.n; ++v) {
        std::uint32_t deg = 0;
        in.read(reinterpret_cast<char*>(&deg), 4);
        if (in.gcount() != 4) throw FormatError(path + ": truncated adjacency");
        if (deg > g.max_degree) throw FormatError(path + ": degree exceeds max_degree");
        g.adjacency[v].resize(deg);
        in.read(reinterpret_cast<char*>(g.adjacency[v].data()), 4ll * deg);
        if (static_cast<std::size_t>(in.gcount()) != 4u * deg)
            throw FormatError(path + ": truncated adjacency");
        std::uint32_t prev = 0;
        bool first = true;
        for (std::uint32_t u : g.adjacency[v]) {
            if (u >= g.n || u == v) throw FormatError(path + ": invalid neighbor id");
            if (!first && u <= prev) throw FormatError(path + ": neighbor list not sorted");
            prev = u;
            first = false;
        }
    }
    return g;
}

} // namespace rpq
