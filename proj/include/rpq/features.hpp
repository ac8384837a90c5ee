#pragma once

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <vector>

#include "rpq/common.hpp"
#include "rpq/dataset.hpp"
#include "rpq/distance.hpp"
#include "rpq/graph.hpp"
#include "rpq/model.hpp"
#include "rpq/quantizer.hpp"
#include "rpq/rng.hpp"

namespace rpq {

/// One contrastive training triple of vertex ids.
struct TripletSample {
    std::uint32_t anchor = 0;
    std::uint32_t positive = 0;
    std::uint32_t negative = 0;
};

/// Ranked candidate pool at one beam-search step, plus the teacher-optimal
/// next hop (index into `candidates`).
struct DecisionRecord {
    std::vector<std::uint32_t> candidates; // ascending ADC distance
    std::uint32_t chosen = 0;
};

/// The full decision sequence of one training query's beam search.
struct RoutingTrace {
    std::uint32_t query_id = 0;
    std::vector<float> query;
    std::vector<DecisionRecord> steps;

    std::size_t length() const { return steps.size(); }
};

namespace detail {

// Scratch for repeated BFS calls over the same graph (timestamp trick).
struct HopScratch {
    std::vector<std::uint32_t> stamp;
    std::uint32_t epoch = 0;
};

} // namespace detail

/// All vertices within n hops of v, excluding v itself.
inline std::vector<std::uint32_t> n_hop_neighborhood(const ProximityGraph& g,
                                                     std::uint32_t v, std::uint32_t n,
                                                     detail::HopScratch* scratch = nullptr) {
    detail::HopScratch local;
    detail::HopScratch& s = scratch ? *scratch : local;
    if (s.stamp.size() != g.n) {
        s.stamp.assign(g.n, 0);
        s.epoch = 0;
    }
    const std::uint32_t mark = ++s.epoch;
    s.stamp[v] = mark;

    std::vector<std::uint32_t> result;
    std::vector<std::uint32_t> frontier{v};
    std::vector<std::uint32_t> next;
    for (std::uint32_t hop = 0; hop < n && !frontier.empty(); ++hop) {
        next.clear();
        for (std::uint32_t u : frontier) {
            for (std::uint32_t w : g.adjacency[u]) {
                if (s.stamp[w] == mark) continue;
                s.stamp[w] = mark;
                next.push_back(w);
                result.push_back(w);
            }
        }
        frontier.swap(next);
    }
    return result;
}

// Alg-style n-propagation sampling: sort the n-hop neighborhood by exact
// distance to the anchor, draw the positive uniformly from the k_pos nearest
// and the negative from the next k_neg.
inline TripletSample n_propagation_sample(const ProximityGraph& g, const VectorDataset& data,
                                          std::uint32_t v, std::uint32_t n,
                                          std::uint32_t k_pos, std::uint32_t k_neg,
                                          Rng& rng_, detail::HopScratch* scratch = nullptr) {
    if (k_pos < 1 || k_neg < 1)
        throw ArgumentError("n_propagation_sample: k_pos and k_neg must be >= 1");
    std::vector<std::uint32_t> hood = n_hop_neighborhood(g, v, n, scratch);
    if (hood.size() < static_cast<std::size_t>(k_pos) + k_neg)
        throw SamplingError("n_propagation_sample: neighborhood smaller than k_pos + k_neg");

    const float* xv = data.row(v);
    std::vector<std::pair<float, std::uint32_t>> ranked;
    ranked.reserve(hood.size());
    for (std::uint32_t u : hood) ranked.emplace_back(l2sq(data.row(u), xv, data.dim), u);
    const std::size_t keep = k_pos + k_neg;
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep),
                      ranked.end());

    TripletSample t;
    t.anchor = v;
    t.positive = ranked[rng::below(rng_, k_pos)].second;
    t.negative = ranked[k_pos + rng::below(rng_, k_neg)].second;
    return t;
}

inline TripletSample n_propagation_sample(const ProximityGraph& g, const VectorDataset& data,
                                          std::uint32_t v, std::uint32_t n,
                                          std::uint32_t k_pos, std::uint32_t k_neg,
                                          std::uint64_t seed) {
    Rng rng_(seed);
    return n_propagation_sample(g, data, v, n, k_pos, k_neg, rng_);
}

// Replays beam search with ADC distances under the given model snapshot and
// records, at every expansion, the ranked candidate pool together with the
// teacher choice: the candidate nearest to the query by exact distance.
inline std::vector<RoutingTrace> collect_routing_traces(
    const ProximityGraph& g, const VectorDataset& data, const RotationMatrix& rot,
    const Codebook& cb, const CodeArray& codes,
    const std::vector<std::uint32_t>& query_ids, std::size_t h) {
    if (codes.n != data.count)
        throw ArgumentError("collect_routing_traces: codes do not cover the dataset");

    std::vector<RoutingTrace> traces;
    traces.reserve(query_ids.size());
    for (std::uint32_t qid : query_ids) {
        const float* q = data.row(qid);
        const LookupTable lut = build_lookup(q, rot, cb);

        RoutingTrace trace;
        trace.query_id = qid;
        trace.query.assign(q, q + data.dim);

        auto dist = [&](std::uint32_t u) { return adc_distance(codes.row(u), lut); };
        auto nbrs = [&](std::uint32_t u) -> const std::vector<std::uint32_t>& {
            return g.adjacency[u];
        };
        auto hook = [&](const std::vector<detail::PoolEntry>& pool) {
            DecisionRecord rec;
            rec.candidates.reserve(pool.size());
            for (const auto& e : pool) rec.candidates.push_back(e.id);
            float best = std::numeric_limits<float>::infinity();
            std::uint32_t best_i = 0;
            for (std::uint32_t i = 0; i < rec.candidates.size(); ++i) {
                const float d = l2sq(data.row(rec.candidates[i]), q, data.dim);
                if (d < best) {
                    best = d;
                    best_i = i;
                }
            }
            rec.chosen = best_i;
            trace.steps.push_back(std::move(rec));
        };
        detail::beam_search_core(g.n, g.entry, dist, nbrs, h, hook);
        traces.push_back(std::move(trace));
    }
    return traces;
}

inline std::vector<RoutingTrace> collect_routing_traces(
    const ProximityGraph& g, const VectorDataset& data, const QuantizerModel& model,
    const std::vector<std::uint32_t>& query_ids, std::size_t h) {
    const RotationMatrix rot = model.rotation();
    const CodeArray codes = encode_all(data, rot, model.codebook);
    return collect_routing_traces(g, data, rot, model.codebook, codes, query_ids, h);
}

// Debug dump: one trace per line ("qid L | cand,... > chosen | ...").
inline void dump_traces(const std::vector<RoutingTrace>& traces, std::ostream& out) {
    for (const auto& t : traces) {
        out << t.query_id << ' ' << t.steps.size();
        for (const auto& s : t.steps) {
            out << " |";
            for (std::uint32_t id : s.candidates) out << ' ' << id;
            out << " > " << s.candidates[s.chosen];
        }
        out << '\n';
    }
}

} // namespace rpq
