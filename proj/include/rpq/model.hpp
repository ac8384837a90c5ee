#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "rpq/codebook.hpp"
#include "rpq/common.hpp"
#include "rpq/dataset.hpp"
#include "rpq/rng.hpp"
#include "rpq/rotation.hpp"

namespace rpq {

/// Everything the quantizer learns: the rotation parameter A, the codebook,
/// and the loss coefficient alpha.
struct QuantizerModel {
    SkewParam skew;
    Codebook codebook;
    double alpha = 1.0;

    std::uint32_t dim() const { return skew.dim; }
    std::uint32_t m() const { return codebook.m; }
    std::uint32_t k() const { return codebook.k; }
    RotationMatrix rotation() const { return matrix_exponential(skew); }

    std::size_t param_count() const {
        return skew.size() + codebook.words.size() + 1;
    }
};

/// Adam moments over the packed parameter vector [A upper | codebook | alpha].
struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;

    void init(std::size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        step = 0;
    }
};

// A = 0 (so R = I, the classic vertical division) and k-means codewords on
// the raw sub-vectors of a training sample. This is also the PQ baseline.
inline QuantizerModel init_model(const VectorDataset& data, std::uint32_t m,
                                 std::uint32_t k, int kmeans_iters,
                                 std::uint64_t seed, std::size_t train_sample = 0) {
    if (m == 0 || data.dim % m != 0)
        throw ConfigError("init_model: M must divide D");
    if (k == 0 || k > 256) throw ConfigError("init_model: require 1 <= K <= 256");
    const std::uint32_t sub = data.dim / m;

    Rng g(rng::derive(seed, 0x1417));
    std::size_t take = train_sample == 0 ? data.count : std::min(train_sample, data.count);
    if (take < k) take = std::min<std::size_t>(data.count, k);
    const std::vector<std::uint32_t> ids = sample_ids(data.count, take, g);

    std::vector<std::vector<double>> chunks(m);
    for (std::uint32_t j = 0; j < m; ++j) chunks[j].resize(ids.size() * sub);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const float* row = data.row(ids[i]);
        for (std::uint32_t j = 0; j < m; ++j)
            for (std::uint32_t t = 0; t < sub; ++t)
                chunks[j][i * sub + t] = static_cast<double>(row[j * sub + t]);
    }

    QuantizerModel model;
    model.skew = SkewParam::zeros(data.dim);
    model.codebook = train_codebook(chunks, sub, k, kmeans_iters, seed);
    model.alpha = 1.0;
    return model;
}

// --- checkpoint: version tag + {D, M, K, adam step} as u32, then all
// parameters and Adam moments as little-endian float32 ---

namespace detail {

constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_f32(std::ofstream& out, const std::vector<double>& v) {
    std::vector<float> tmp(v.begin(), v.end());
    out.write(reinterpret_cast<const char*>(tmp.data()), 4ll * static_cast<long long>(tmp.size()));
}

inline void read_f32(std::ifstream& in, std::vector<double>& v, std::size_t n,
                     const std::string& path) {
    std::vector<float> tmp(n);
    in.read(reinterpret_cast<char*>(tmp.data()), 4ll * static_cast<long long>(n));
    if (static_cast<std::size_t>(in.gcount()) != 4 * n)
        throw FormatError(path + ": truncated checkpoint");
    v.assign(tmp.begin(), tmp.end());
}

} // namespace detail

inline void save_checkpoint(const QuantizerModel& model, const OptimizerState& opt,
                            const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    const std::uint32_t header[5] = {detail::kCheckpointVersion, model.dim(),
                                     model.m(), model.k(),
                                     static_cast<std::uint32_t>(opt.step)};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    detail::write_f32(out, model.skew.upper);
    detail::write_f32(out, model.codebook.words);
    detail::write_f32(out, {model.alpha});
    detail::write_f32(out, opt.m);
    detail::write_f32(out, opt.v);
    if (!out) throw IoError("write failed: " + path);
}

inline void load_checkpoint(const std::string& path, QuantizerModel& model,
                            OptimizerState& opt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::uint32_t header[5];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (in.gcount() != sizeof(header)) throw FormatError(path + ": truncated checkpoint header");
    if (header[0] != detail::kCheckpointVersion)
        throw FormatError(path + ": unsupported checkpoint version");
    const std::uint32_t d = header[1], m = header[2], k = header[3];
    if (m == 0 || d % m != 0) throw FormatError(path + ": inconsistent D, M");

    model.skew.dim = d;
    detail::read_f32(in, model.skew.upper, static_cast<std::size_t>(d) * (d - 1) / 2, path);
    model.codebook.m = m;
    model.codebook.k = k;
    model.codebook.sub_dim = d / m;
    detail::read_f32(in, model.codebook.words,
                     static_cast<std::size_t>(m) * k * (d / m), path);
    std::vector<double> alpha;
    detail::read_f32(in, alpha, 1, path);
    model.alpha = alpha[0];

    const std::size_t p = model.param_count();
    opt.step = header[4];
    detail::read_f32(in, opt.m, p, path);
    detail::read_f32(in, opt.v, p, path);
}

inline QuantizerModel load_model(const std::string& path) {
    QuantizerModel model;
    OptimizerState opt;
    load_checkpoint(path, model, opt);
    return model;
}

} // namespace rpq
