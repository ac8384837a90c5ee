#pragma once

#include <atomic>
#include <utility>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include "rpq/common.hpp"
#include "rpq/dataset.hpp"
#include "rpq/distance.hpp"
#include "rpq/graph.hpp"
#include "rpq/model.hpp"
#include "rpq/quantizer.hpp"

namespace rpq {

/// Per-query I/O accounting; each query owns its own instance.
struct IoStats {
    std::uint64_t vector_fetches = 0;
    std::uint64_t adjacency_fetches = 0;
    std::uint64_t bytes_read = 0;
    double simulated_io_ms = 0.0;
};

// Byte-accounting stand-in for an SSD: raw vectors live in a headerless
// float32 file (row i at offset i*D*4), adjacency in the graph file format.
// Reads go through pread so concurrent queries never share a file cursor.
class DiskSim {
public:
    DiskSim() = default;
    ~DiskSim() { close_all(); }
    DiskSim(const DiskSim&) = delete;
    DiskSim& operator=(const DiskSim&) = delete;
    DiskSim(DiskSim&& other) noexcept { *this = std::move(other); }
    DiskSim& operator=(DiskSim&& other) noexcept {
        if (this != &other) {
            close_all();
            vec_fd_ = std::exchange(other.vec_fd_, -1);
            adj_fd_ = std::exchange(other.adj_fd_, -1);
            dim_ = other.dim_;
            n_ = other.n_;
            max_degree_ = other.max_degree_;
            entry_ = other.entry_;
            latency_us_ = other.latency_us_;
            fail_after_ = other.fail_after_;
            offsets_ = std::move(other.offsets_);
            degrees_ = std::move(other.degrees_);
            reads_.store(other.reads_.load());
        }
        return *this;
    }

    void open_vectors(const std::string& path, std::uint32_t dim) {
        vec_fd_ = ::open(path.c_str(), O_RDONLY);
        if (vec_fd_ < 0) throw IoError("cannot open raw vector store: " + path);
        dim_ = dim;
    }

    void open_graph(const std::string& path) {
        adj_fd_ = ::open(path.c_str(), O_RDONLY);
        if (adj_fd_ < 0) throw IoError("cannot open graph store: " + path);
        std::uint32_t header[3];
        if (::pread(adj_fd_, header, sizeof(header), 0) != sizeof(header))
            throw FormatError(path + ": truncated graph header");
        n_ = header[0];
        max_degree_ = header[1];
        entry_ = header[2];
        // per-vertex byte offsets gathered in one sequential scan
        offsets_.resize(n_);
        degrees_.resize(n_);
        std::uint64_t off = sizeof(header);
        for (std::uint32_t v = 0; v < n_; ++v) {
            std::uint32_t deg = 0;
            if (::pread(adj_fd_, &deg, 4, static_cast<off_t>(off)) != 4)
                throw FormatError(path + ": truncated adjacency");
            offsets_[v] = off;
            degrees_[v] = deg;
            off += 4 + 4ull * deg;
        }
    }

    void set_latency_us(double us) { latency_us_ = us; }
    /// Test hook: reads past this count raise QueryError.
    void fail_after(std::uint64_t reads) { fail_after_ = reads; }

    std::uint32_t n() const { return n_; }
    std::uint32_t entry() const { return entry_; }
    std::uint32_t max_degree() const { return max_degree_; }
    std::uint32_t dim() const { return dim_; }

    void read_vector(std::uint32_t id, float* out, IoStats& io) const {
        account(io);
        const std::uint64_t bytes = 4ull * dim_;
        if (::pread(vec_fd_, out, bytes, static_cast<off_t>(bytes * id)) !=
            static_cast<ssize_t>(bytes))
            throw QueryError("raw vector read failed for id " + std::to_string(id));
        io.vector_fetches += 1;
        io.bytes_read += bytes;
    }

    void read_adjacency(std::uint32_t id, std::vector<std::uint32_t>& out, IoStats& io) const {
        account(io);
        const std::uint32_t deg = degrees_[id];
        out.resize(deg);
        const std::uint64_t bytes = 4ull * deg;
        if (deg > 0 &&
            ::pread(adj_fd_, out.data(), bytes, static_cast<off_t>(offsets_[id] + 4)) !=
                static_cast<ssize_t>(bytes))
            throw QueryError("adjacency read failed for id " + std::to_string(id));
        io.adjacency_fetches += 1;
        io.bytes_read += 4 + bytes; // degree word + ids
    }

private:
    void account(IoStats& io) const {
        const std::uint64_t r = reads_.fetch_add(1, std::memory_order_relaxed);
        if (r >= fail_after_) throw QueryError("simulated disk failure injected");
        io.simulated_io_ms += latency_us_ / 1000.0;
    }
    void close_all() {
        if (vec_fd_ >= 0) ::close(vec_fd_);
        if (adj_fd_ >= 0) ::close(adj_fd_);
        vec_fd_ = adj_fd_ = -1;
    }

    int vec_fd_ = -1;
    int adj_fd_ = -1;
    std::uint32_t dim_ = 0;
    std::uint32_t n_ = 0;
    std::uint32_t max_degree_ = 0;
    std::uint32_t entry_ = 0;
    double latency_us_ = 0.0;
    std::uint64_t fail_after_ = UINT64_MAX;
    std::vector<std::uint64_t> offsets_;
    std::vector<std::uint32_t> degrees_;
    mutable std::atomic<std::uint64_t> reads_{0};
};

inline void write_raw_vectors(const VectorDataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(data.data.data()),
              static_cast<std::streamsize>(4ull * data.data.size()));
    if (!out) throw IoError("write failed: " + path);
}

/// Compact codes, codebook and rotation in memory; raw vectors and adjacency
/// behind the simulated disk.
struct HybridStore {
    RotationMatrix rot;
    Codebook codebook;
    CodeArray codes;
    DiskSim disk;

    static HybridStore make(const QuantizerModel& model, CodeArray codes,
                            const std::string& raw_path, const std::string& graph_path,
                            double latency_us = 0.0) {
        HybridStore s;
        s.rot = model.rotation();
        s.codebook = model.codebook;
        s.codes = std::move(codes);
        s.disk.open_vectors(raw_path, model.dim());
        s.disk.open_graph(graph_path);
        s.disk.set_latency_us(latency_us);
        if (s.disk.n() != s.codes.n)
            throw ConfigError("hybrid store: codes do not cover the on-disk graph");
        return s;
    }
};

/// PQ-only navigation: beam search over ADC lookup distances; the raw vector
/// store is never touched.
inline SearchResult search_in_memory(const ProximityGraph& g, const RotationMatrix& rot,
                                     const Codebook& cb, const CodeArray& codes,
                                     const float* q, std::size_t h, std::size_t k) {
    if (codes.n != g.n) throw ConfigError("search_in_memory: codes do not cover the graph");
    const LookupTable lut = build_lookup(q, rot, cb);
    return beam_search(
        g, [&](std::uint32_t v) { return adc_distance(codes.row(v), lut); }, h, k);
}

inline SearchResult search_in_memory(const ProximityGraph& g, const QuantizerModel& model,
                                     const CodeArray& codes, const float* q, std::size_t h,
                                     std::size_t k) {
    return search_in_memory(g, model.rotation(), model.codebook, codes, q, h, k);
}

struct HybridResult {
    SearchResult result; // final top-k by exact distance
    IoStats io;
};

// ADC-guided beam search with adjacency read from disk per expansion. In the
// default (final-rerank) mode the top rerank_depth pool candidates' raw
// vectors are fetched once at the end and re-sorted by exact distance; in
// progressive mode every expanded vertex's raw vector is fetched as the
// search walks, mirroring DiskANN's sector reads.
inline HybridResult search_hybrid(HybridStore& store, const float* q, std::size_t h,
                                  std::size_t k, std::size_t rerank_depth,
                                  bool progressive = false) {
    if (rerank_depth < k) throw ArgumentError("search_hybrid: rerank_depth must be >= k");
    HybridResult out;
    const LookupTable lut = build_lookup(q, store.rot, store.codebook);
    std::vector<std::uint32_t> adj_scratch;
    std::vector<float> vec_scratch(store.disk.dim());

    std::vector<std::pair<float, std::uint32_t>> exact; // (exact dist, id)
    auto fetch_exact = [&](std::uint32_t v) {
        store.disk.read_vector(v, vec_scratch.data(), out.io);
        exact.emplace_back(l2sq(vec_scratch.data(), q, store.disk.dim()), v);
    };

    auto dist = [&](std::uint32_t v) { return adc_distance(store.codes.row(v), lut); };
    auto nbrs = [&](std::uint32_t v) -> const std::vector<std::uint32_t>& {
        store.disk.read_adjacency(v, adj_scratch, out.io);
        return adj_scratch;
    };
    detail::BeamResult br =
        detail::beam_search_core(store.disk.n(), store.disk.entry(), dist, nbrs, h);
    if (progressive) {
        // exact distance for every vertex expanded along the walk
        for (const auto& [id, d] : br.expanded) {
            (void)d;
            fetch_exact(id);
        }
    } else {
        const std::size_t depth = std::min(rerank_depth, br.pool.size());
        for (std::size_t i = 0; i < depth; ++i) fetch_exact(br.pool[i].id);
    }

    std::sort(exact.begin(), exact.end());
    const std::size_t take = std::min(k, exact.size());
    out.result.hops = br.hops;
    out.result.distance_evals = br.evals;
    out.result.ids.reserve(take);
    out.result.dists.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        out.result.ids.push_back(exact[i].second);
        out.result.dists.push_back(static_cast<double>(exact[i].first));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Memory budget accounting
// ---------------------------------------------------------------------------

struct MemoryBudget {
    double fraction = 1.0 / 32.0;
    std::uint64_t raw_bytes = 0;
    std::uint64_t graph_bytes = 0;
    double budget_bytes() const {
        return fraction * (static_cast<double>(raw_bytes) + static_cast<double>(graph_bytes));
    }
};

struct BudgetReport {
    bool admissible = false;
    std::uint64_t code_bytes = 0;
    std::uint64_t codebook_bytes = 0;
    std::uint64_t rotation_bytes = 0;
    double budget_bytes = 0.0;
    std::uint64_t in_memory_bytes() const {
        return code_bytes + codebook_bytes + rotation_bytes;
    }
};

/// In-memory footprint (codes + codebook + rotation, 4-byte floats) against
/// a budget of `fraction` times the raw-vector plus graph bytes.
inline BudgetReport check_budget(std::uint64_t n, std::uint64_t d, std::uint32_t m,
                                 std::uint32_t k_codewords, double fraction,
                                 std::uint64_t graph_bytes) {
    if (n == 0 || d == 0 || m == 0 || k_codewords == 0 || fraction <= 0.0)
        throw ArgumentError("check_budget: arguments must be positive");
    BudgetReport r;
    r.code_bytes = compact_code_bytes(n, m, k_codewords);
    r.codebook_bytes = static_cast<std::uint64_t>(k_codewords) * d * 4;
    r.rotation_bytes = d * d * 4;
    MemoryBudget b;
    b.fraction = fraction;
    b.raw_bytes = n * d * 4;
    b.graph_bytes = graph_bytes;
    r.budget_bytes = b.budget_bytes();
    r.admissible = static_cast<double>(r.in_memory_bytes()) <= r.budget_bytes;
    return r;
}

// ---------------------------------------------------------------------------
// Distance-comparison identity diagnostic
// ---------------------------------------------------------------------------

struct Eq5Report {
    double lhs = 0.0;
    double rhs = 0.0;
    double abs_error = 0.0;
};

// ||xa-q||^2 - ||xb-q||^2 against its factored form
// 2*||xb-xa|| * ||q - (xa+xb)/2|| * cos(theta), theta between (xb-xa) and
// q - midpoint. Degenerate inputs (xa == xb or q at the midpoint) report
// both sides as equal by convention.
inline Eq5Report eq5_diagnostic(const std::vector<double>& xa, const std::vector<double>& xb,
                                const std::vector<double>& q) {
    if (xa.size() != xb.size() || xa.size() != q.size())
        throw ArgumentError("eq5_diagnostic: dimension mismatch");
    const std::size_t d = xa.size();
    Eq5Report r;
    r.lhs = l2sq(xa.data(), q.data(), d) - l2sq(xb.data(), q.data(), d);

    double ab = 0.0, qm = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = xb[i] - xa[i];
        const double mid = q[i] - 0.5 * (xa[i] + xb[i]);
        ab += diff * diff;
        qm += mid * mid;
        dot += diff * mid;
    }
    if (ab == 0.0 || qm == 0.0) {
        r.rhs = r.lhs; // cos(theta) undefined; both sides vanish identically
        r.abs_error = 0.0;
        return r;
    }
    const double cos_theta = dot / (std::sqrt(ab) * std::sqrt(qm));
    r.rhs = 2.0 * std::sqrt(ab) * std::sqrt(qm) * cos_theta;
    r.abs_error = std::abs(r.lhs - r.rhs);
    return r;
}

} // namespace rpq
