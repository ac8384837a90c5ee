#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rpq/common.hpp"
#include "rpq/dataset.hpp"
#include "rpq/graph.hpp"
#include "rpq/model.hpp"
#include "rpq/quantizer.hpp"
#include "rpq/scenarios.hpp"

namespace rpq {

/// One benchmark run's aggregate metrics plus an echo of its configuration.
struct BenchReport {
    double recall_at_k = 0.0;
    double qps = 0.0;
    double mean_hops = 0.0;
    double mean_vector_fetches = 0.0;
    double simulated_io_ms = 0.0;
    std::map<std::string, std::string> config;

    nlohmann::json to_json() const {
        return nlohmann::json{{"recall_at_k", recall_at_k},
                              {"qps", qps},
                              {"mean_hops", mean_hops},
                              {"mean_vector_fetches", mean_vector_fetches},
                              {"simulated_io_ms", simulated_io_ms},
                              {"config", config}};
    }

    static BenchReport from_json(const nlohmann::json& j) {
        BenchReport r;
        r.recall_at_k = j.at("recall_at_k").get<double>();
        r.qps = j.at("qps").get<double>();
        r.mean_hops = j.at("mean_hops").get<double>();
        r.mean_vector_fetches = j.at("mean_vector_fetches").get<double>();
        r.simulated_io_ms = j.at("simulated_io_ms").get<double>();
        r.config = j.at("config").get<std::map<std::string, std::string>>();
        return r;
    }

    static std::string csv_header() {
        return "recall_at_k,qps,mean_hops,mean_vector_fetches,simulated_io_ms";
    }
    std::string csv_row() const {
        char buf[200];
        std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g,%.10g,%.10g", recall_at_k, qps,
                      mean_hops, mean_vector_fetches, simulated_io_ms);
        return buf;
    }
};

/// Small textual key-value file pinning an index bundle's shape so that
/// mismatched artifacts fail fast.
struct Manifest {
    std::map<std::string, std::string> kv;

    void set(const std::string& key, const std::string& value) { kv[key] = value; }
    void set_u64(const std::string& key, std::uint64_t value) {
        kv[key] = std::to_string(value);
    }
    const std::string& get(const std::string& key) const {
        auto it = kv.find(key);
        if (it == kv.end()) throw ConfigError("manifest: missing key " + key);
        return it->second;
    }
    std::uint64_t get_u64(const std::string& key) const {
        return std::stoull(get(key));
    }
    bool has(const std::string& key) const { return kv.count(key) > 0; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + path);
        for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
    }

    static Manifest load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open manifest: " + path);
        Manifest m;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw FormatError(path + ": bad manifest line");
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t");
                const auto e = s.find_last_not_of(" \t");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            m.kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
        return m;
    }
};

enum class SearchMode { memory, hybrid };

struct BenchSettings {
    SearchMode mode = SearchMode::memory;
    std::size_t h = 32;
    std::size_t k = 10;
    std::size_t rerank_depth = 32;
    bool progressive = false;
    int repeats = 1;
    unsigned threads = 1;
};

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

// Runs the full query set `repeats` times and reports per-run medians.
// Per-query metrics land in arrays indexed by query id, so aggregation is
// independent of the worker count and fan-out order.
inline BenchReport run_search_benchmark(const ProximityGraph& g, const QuantizerModel& model,
                                        const CodeArray& codes, const VectorDataset& queries,
                                        const GroundTruth& gt, const BenchSettings& s,
                                        HybridStore* store = nullptr) {
    if (queries.count == 0) throw ArgumentError("benchmark: empty query set");
    if (gt.nq != queries.count) throw ConfigError("benchmark: ground truth size mismatch");
    if (s.mode == SearchMode::hybrid && store == nullptr)
        throw ConfigError("benchmark: hybrid mode requires a hybrid store");

    const RotationMatrix rot = model.rotation();
    const std::size_t nq = queries.count;
    std::vector<double> recalls(nq), hops(nq), fetches(nq), io_ms(nq);

    std::vector<double> run_qps, run_recall, run_hops, run_fetch, run_io;
    for (int rep = 0; rep < s.repeats; ++rep) {
        auto work = [&](std::size_t qb, std::size_t qe) {
            for (std::size_t qi = qb; qi < qe; ++qi) {
                const float* q = queries.row(qi);
                if (s.mode == SearchMode::memory) {
                    const SearchResult r =
                        search_in_memory(g, rot, model.codebook, codes, q, s.h, s.k);
                    recalls[qi] = recall_at_k(r.ids, gt.row(qi), gt.k);
                    hops[qi] = static_cast<double>(r.hops);
                    fetches[qi] = 0.0;
                    io_ms[qi] = 0.0;
                } else {
                    HybridResult r =
                        search_hybrid(*store, q, s.h, s.k, s.rerank_depth, s.progressive);
                    recalls[qi] = recall_at_k(r.result.ids, gt.row(qi), gt.k);
                    hops[qi] = static_cast<double>(r.result.hops);
                    fetches[qi] = static_cast<double>(r.io.vector_fetches);
                    io_ms[qi] = r.io.simulated_io_ms;
                }
            }
        };

        const auto t0 = std::chrono::steady_clock::now();
        if (s.threads <= 1) {
            work(0, nq);
        } else {
            std::vector<std::thread> pool;
            const unsigned nt = std::min<unsigned>(s.threads, static_cast<unsigned>(nq));
            const std::size_t chunk = (nq + nt - 1) / nt;
            for (unsigned t = 0; t < nt; ++t) {
                const std::size_t b = t * chunk;
                const std::size_t e = std::min(nq, b + chunk);
                if (b < e) pool.emplace_back(work, b, e);
            }
            for (auto& th : pool) th.join();
        }
        const auto t1 = std::chrono::steady_clock::now();
        const double secs = std::chrono::duration<double>(t1 - t0).count();

        double sr = 0, sh = 0, sf = 0, si = 0;
        for (std::size_t qi = 0; qi < nq; ++qi) {
            sr += recalls[qi];
            sh += hops[qi];
            sf += fetches[qi];
            si += io_ms[qi];
        }
        run_qps.push_back(static_cast<double>(nq) / std::max(secs, 1e-12));
        run_recall.push_back(sr / static_cast<double>(nq));
        run_hops.push_back(sh / static_cast<double>(nq));
        run_fetch.push_back(sf / static_cast<double>(nq));
        run_io.push_back(si / static_cast<double>(nq));
    }

    BenchReport report;
    report.recall_at_k = detail::median(run_recall);
    report.qps = detail::median(run_qps);
    report.mean_hops = detail::median(run_hops);
    report.mean_vector_fetches = detail::median(run_fetch);
    report.simulated_io_ms = detail::median(run_io);
    return report;
}

} // namespace rpq
