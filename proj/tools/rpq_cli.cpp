// rpq: build, train, encode and benchmark RPQ indexes from the command line.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rpq/rpq.hpp"

namespace {

rpq::VectorDataset load_any(const std::string& path) {
    return rpq::load_vectors(path, rpq::format_from_path(path));
}

std::string manifest_path(const std::string& artifact) { return artifact + ".manifest"; }

void write_model_manifest(const std::string& model_path, const rpq::QuantizerModel& model,
                          std::uint64_t seed, const std::string& data_path) {
    rpq::Manifest m;
    m.set("format_version", "1");
    m.set_u64("d", model.dim());
    m.set_u64("m", model.m());
    m.set_u64("k", model.k());
    m.set_u64("seed", seed);
    m.set("data", data_path);
    m.save(manifest_path(model_path));
}

int cmd_gen(const std::string& out, std::size_t n, std::uint32_t dim, std::size_t clusters,
            std::uint64_t seed) {
    const rpq::VectorDataset ds = rpq::make_synthetic(n, dim, clusters, seed);
    rpq::save_vectors(ds, out, rpq::format_from_path(out));
    std::printf("gen: wrote %zu x %u vectors to %s\n", ds.count, ds.dim, out.c_str());
    return 0;
}

int cmd_gt(const std::string& base_path, const std::string& query_path, std::uint32_t k,
           const std::string& out, unsigned threads) {
    const rpq::VectorDataset base = load_any(base_path);
    const rpq::VectorDataset queries = load_any(query_path);
    const rpq::GroundTruth gt = rpq::compute_ground_truth(base, queries, k, threads);
    rpq::save_ground_truth(gt, out);
    std::printf("gt: wrote %zu x %u exact neighbor lists to %s\n", gt.nq, gt.k, out.c_str());
    return 0;
}

int cmd_build(const std::string& data_path, const std::string& out, std::uint32_t max_degree,
              std::uint32_t build_beam, double alpha, std::uint64_t seed) {
    const rpq::VectorDataset data = load_any(data_path);
    const rpq::ProximityGraph g = rpq::build_graph(data, max_degree, build_beam, alpha, seed);
    rpq::save_graph(g, out);
    std::size_t edges = 0;
    for (const auto& adj : g.adjacency) edges += adj.size();
    std::printf("build: n=%u entry=%u max_degree=%u mean_degree=%.2f -> %s\n", g.n, g.entry,
                g.max_degree, g.n ? static_cast<double>(edges) / g.n : 0.0, out.c_str());
    return 0;
}

struct TrainArgs {
    std::string data, graph, out, loss_log, baseline = "rpq", mode = "joint";
    rpq::TrainingConfig cfg;
};

int cmd_train(const TrainArgs& a) {
    const rpq::VectorDataset data = load_any(a.data);
    rpq::TrainingConfig cfg = a.cfg;
    if (a.mode == "joint")
        cfg.mode = rpq::TrainMode::joint;
    else if (a.mode == "routing")
        cfg.mode = rpq::TrainMode::routing_only;
    else if (a.mode == "neighborhood")
        cfg.mode = rpq::TrainMode::neighborhood_only;
    else
        throw rpq::ConfigError("unknown --train-mode: " + a.mode);

    if (a.baseline == "pq") {
        // k-means codebook with the identity rotation; no training loop
        rpq::QuantizerModel model = rpq::init_model(data, cfg.m, cfg.k, cfg.kmeans_iters,
                                                    cfg.seed, cfg.kmeans_sample);
        rpq::OptimizerState opt;
        opt.init(model.param_count());
        rpq::save_checkpoint(model, opt, a.out);
        write_model_manifest(a.out, model, cfg.seed, a.data);
        std::printf("train: PQ baseline checkpoint -> %s\n", a.out.c_str());
        return 0;
    }
    if (a.baseline != "rpq") throw rpq::ConfigError("unknown --baseline: " + a.baseline);

    const rpq::ProximityGraph g = rpq::load_graph(a.graph);
    const rpq::FitResult res = rpq::fit(data, g, cfg, a.out);
    write_model_manifest(a.out, res.model, cfg.seed, a.data);
    if (!a.loss_log.empty()) rpq::write_loss_log(res.log, a.loss_log);
    if (res.diverged) {
        std::fprintf(stderr,
                     "train: diverged (non-finite loss); kept last good checkpoint %s\n",
                     a.out.c_str());
        return 1;
    }
    if (!res.log.empty())
        std::printf("train: %d epochs, final l_routing=%.6g l_neighborhood=%.6g alpha=%.4g -> %s\n",
                    cfg.epochs, res.log.back().l_routing, res.log.back().l_neighborhood,
                    res.log.back().alpha, a.out.c_str());
    else
        std::printf("train: 0 epochs, wrote initial model -> %s\n", a.out.c_str());
    return 0;
}

int cmd_encode(const std::string& data_path, const std::string& model_path,
               const std::string& out, const std::string& raw_out) {
    const rpq::VectorDataset data = load_any(data_path);
    const rpq::QuantizerModel model = rpq::load_model(model_path);
    if (model.dim() != data.dim)
        throw rpq::ConfigError("encode: model dimension does not match data");
    const rpq::CodeArray codes = rpq::encode_all(data, model.rotation(), model.codebook);
    rpq::save_codes(codes, out);
    if (!raw_out.empty()) rpq::write_raw_vectors(data, raw_out);
    std::printf("encode: %zu codes (M=%u, K=%u) -> %s\n", codes.n, codes.m, codes.k,
                out.c_str());
    return 0;
}

struct SearchArgs {
    std::string graph, model, codes, queries, gt, raw, mode = "memory";
    std::string json_out, csv_out;
    std::size_t beam = 32, k = 10, rerank = 0;
    int repeats = 1;
    unsigned threads = 1;
    double io_latency_us = 100.0;
    double budget_fraction = 0.0;
    bool progressive = false;
};

int cmd_search(const SearchArgs& a) {
    const rpq::QuantizerModel model = rpq::load_model(a.model);

    // fail fast on mismatched artifacts
    const std::string mpath = manifest_path(a.model);
    if (std::filesystem::exists(mpath)) {
        const rpq::Manifest man = rpq::Manifest::load(mpath);
        if (man.get_u64("d") != model.dim() || man.get_u64("m") != model.m() ||
            man.get_u64("k") != model.k())
            throw rpq::ConfigError("search: checkpoint does not match its manifest");
    }
    const rpq::CodeArray codes = rpq::load_codes(a.codes);
    if (codes.m != model.m() || codes.k != model.k())
        throw rpq::ConfigError("search: codes shape does not match model");
    const rpq::ProximityGraph g = rpq::load_graph(a.graph);
    if (codes.n != g.n) throw rpq::ConfigError("search: codes do not cover the graph");
    const rpq::VectorDataset queries = load_any(a.queries);
    if (queries.dim != model.dim())
        throw rpq::ConfigError("search: query dimension does not match model");
    const rpq::GroundTruth gt = rpq::load_ground_truth(a.gt);
    if (gt.nq != queries.count)
        throw rpq::ConfigError("search: ground truth does not cover the query set");
    if (gt.k < a.k) throw rpq::ConfigError("search: ground truth depth below --k");

    rpq::BenchSettings s;
    s.h = a.beam;
    s.k = a.k;
    s.rerank_depth = a.rerank == 0 ? a.beam : a.rerank;
    s.repeats = a.repeats;
    s.threads = a.threads;
    s.progressive = a.progressive;

    rpq::HybridStore store;
    rpq::HybridStore* store_ptr = nullptr;
    if (a.mode == "hybrid") {
        s.mode = rpq::SearchMode::hybrid;
        if (a.raw.empty()) throw rpq::ConfigError("search: hybrid mode requires --raw");
        if (a.budget_fraction > 0.0) {
            const rpq::BudgetReport budget = rpq::check_budget(
                g.n, model.dim(), model.m(), model.k(), a.budget_fraction,
                std::filesystem::file_size(a.graph));
            if (!budget.admissible)
                throw rpq::ConfigError("search: in-memory footprint exceeds the budget");
        }
        store = rpq::HybridStore::make(model, codes, a.raw, a.graph, a.io_latency_us);
        store_ptr = &store;
    } else if (a.mode != "memory") {
        throw rpq::ConfigError("unknown --mode: " + a.mode);
    }

    rpq::BenchReport report = rpq::run_search_benchmark(g, model, codes, queries, gt, s,
                                                        store_ptr);
    report.config = {{"mode", a.mode},
                     {"beam", std::to_string(a.beam)},
                     {"k", std::to_string(a.k)},
                     {"rerank", std::to_string(s.rerank_depth)},
                     {"repeats", std::to_string(a.repeats)},
                     {"threads", std::to_string(a.threads)},
                     {"progressive", a.progressive ? "1" : "0"},
                     {"model", a.model},
                     {"graph", a.graph}};

    const std::string line = report.to_json().dump();
    std::printf("%s\n", line.c_str());
    std::printf("search: recall@%zu=%.4f qps=%.1f hops=%.1f vector_fetches=%.1f io_ms=%.3f\n",
                a.k, report.recall_at_k, report.qps, report.mean_hops,
                report.mean_vector_fetches, report.simulated_io_ms);
    if (!a.json_out.empty()) {
        std::ofstream out(a.json_out, std::ios::trunc);
        out << line << "\n";
    }
    if (!a.csv_out.empty()) {
        const bool fresh = !std::filesystem::exists(a.csv_out);
        std::ofstream out(a.csv_out, std::ios::app);
        if (fresh) out << rpq::BenchReport::csv_header() << "\n";
        out << report.csv_row() << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Routing-guided learned product quantization for graph-based ANNS"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    std::string gen_out;
    std::size_t gen_n = 10000, gen_clusters = 32;
    std::uint32_t gen_dim = 32;
    std::uint64_t gen_seed = 1;
    gen->add_option("--out", gen_out, "output .fvecs path")->required();
    gen->add_option("--n", gen_n, "vector count");
    gen->add_option("--dim", gen_dim, "dimensions");
    gen->add_option("--clusters", gen_clusters, "blob count");
    gen->add_option("--seed", gen_seed, "rng seed");

    // gt
    auto* gt = app.add_subcommand("gt", "compute exact ground truth");
    std::string gt_base, gt_queries, gt_out;
    std::uint32_t gt_k = 10;
    unsigned gt_threads = std::thread::hardware_concurrency();
    gt->add_option("--base", gt_base, "base vectors")->required();
    gt->add_option("--queries", gt_queries, "query vectors")->required();
    gt->add_option("--k", gt_k, "neighbors per query");
    gt->add_option("--out", gt_out, "output .ivecs path")->required();
    gt->add_option("--threads", gt_threads, "worker threads");

    // build
    auto* build = app.add_subcommand("build", "build a proximity graph");
    std::string build_data, build_out;
    std::uint32_t build_degree = 32, build_beam = 64;
    double build_alpha = 1.2;
    std::uint64_t build_seed = 1;
    build->add_option("--data", build_data, "base vectors")->required();
    build->add_option("--out", build_out, "output graph path")->required();
    build->add_option("--max-degree", build_degree, "degree bound R_max");
    build->add_option("--build-beam", build_beam, "construction beam width");
    build->add_option("--alpha", build_alpha, "pruning slack (>= 1)");
    build->add_option("--seed", build_seed, "rng seed");

    // train
    auto* train = app.add_subcommand("train", "train the quantizer");
    TrainArgs ta;
    train->add_option("--data", ta.data, "base vectors")->required();
    train->add_option("--graph", ta.graph, "proximity graph");
    train->add_option("--out", ta.out, "output checkpoint")->required();
    train->add_option("--m", ta.cfg.m, "chunks M");
    train->add_option("--k", ta.cfg.k, "codewords per chunk K");
    train->add_option("--epochs", ta.cfg.epochs, "training epochs");
    train->add_option("--sigma", ta.cfg.sigma, "triplet margin");
    train->add_option("--tau", ta.cfg.tau, "softmax temperature");
    train->add_option("--kpos", ta.cfg.k_pos, "positive sampling scope");
    train->add_option("--kneg", ta.cfg.k_neg, "negative sampling scope");
    train->add_option("--nhops", ta.cfg.n_hops, "neighborhood hop count");
    train->add_option("--beam", ta.cfg.beam_h, "trace collection beam width");
    train->add_option("--seed", ta.cfg.seed, "rng seed");
    train->add_option("--baseline", ta.baseline, "pq|rpq (pq skips training)");
    train->add_option("--lr", ta.cfg.lr_max, "one-cycle peak learning rate");
    train->add_option("--batch", ta.cfg.batch_size, "triplets per step");
    train->add_option("--batches-per-epoch", ta.cfg.batches_per_epoch, "steps per epoch");
    train->add_option("--records-per-batch", ta.cfg.records_per_batch,
                      "routing records per step");
    train->add_option("--queries", ta.cfg.queries_per_epoch, "trace queries per epoch");
    train->add_option("--train-mode", ta.mode, "joint|routing|neighborhood");
    train->add_option("--kmeans-iters", ta.cfg.kmeans_iters, "Lloyd iterations");
    train->add_option("--kmeans-sample", ta.cfg.kmeans_sample,
                      "k-means training sample (0 = all)");
    train->add_option("--loss-log", ta.loss_log, "per-epoch loss CSV");
    train->add_flag("--no-noise", [&ta](std::int64_t) { ta.cfg.gumbel_noise = false; },
                    "disable Gumbel noise");

    // encode
    auto* encode = app.add_subcommand("encode", "encode a dataset into compact codes");
    std::string enc_data, enc_model, enc_out, enc_raw;
    encode->add_option("--data", enc_data, "base vectors")->required();
    encode->add_option("--model", enc_model, "model checkpoint")->required();
    encode->add_option("--out", enc_out, "output codes blob")->required();
    encode->add_option("--raw-out", enc_raw, "also write a headerless raw vector store");

    // search
    auto* search = app.add_subcommand("search", "run a search benchmark");
    SearchArgs sa;
    search->add_option("--graph", sa.graph, "proximity graph")->required();
    search->add_option("--model", sa.model, "model checkpoint")->required();
    search->add_option("--codes", sa.codes, "codes blob")->required();
    search->add_option("--queries", sa.queries, "query vectors")->required();
    search->add_option("--gt", sa.gt, "ground truth .ivecs")->required();
    search->add_option("--mode", sa.mode, "memory|hybrid");
    search->add_option("--beam", sa.beam, "beam width h");
    search->add_option("--k", sa.k, "results per query");
    search->add_option("--rerank", sa.rerank, "rerank depth (0 = beam width)");
    search->add_option("--repeats", sa.repeats, "benchmark repeats (medians reported)");
    search->add_option("--threads", sa.threads, "query worker threads");
    search->add_option("--raw", sa.raw, "raw vector store (hybrid mode)");
    search->add_option("--io-latency-us", sa.io_latency_us, "simulated per-read latency");
    search->add_option("--budget-f", sa.budget_fraction,
                       "enforce the memory budget fraction (0 = off)");
    search->add_option("--json-out", sa.json_out, "write the JSON record here");
    search->add_option("--csv-out", sa.csv_out, "append a CSV row here");
    search->add_flag("--progressive", sa.progressive, "rerank progressively during routing");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2; // usage errors exit 2
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_out, gen_n, gen_dim, gen_clusters, gen_seed);
        if (gt->parsed()) return cmd_gt(gt_base, gt_queries, gt_k, gt_out, gt_threads);
        if (build->parsed())
            return cmd_build(build_data, build_out, build_degree, build_beam, build_alpha,
                             build_seed);
        if (train->parsed()) {
            if (ta.baseline == "rpq" && ta.graph.empty())
                throw rpq::ConfigError("train: --graph is required unless --baseline pq");
            return cmd_train(ta);
        }
        if (encode->parsed()) return cmd_encode(enc_data, enc_model, enc_out, enc_raw);
        if (search->parsed()) return cmd_search(sa);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
