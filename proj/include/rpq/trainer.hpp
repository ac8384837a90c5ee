#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "rpq/common.hpp"
#include "rpq/dataset.hpp"
#include "rpq/fastmath.hpp"
#include "rpq/features.hpp"
#include "rpq/graph.hpp"
#include "rpq/model.hpp"
#include "rpq/quantizer.hpp"
#include "rpq/rng.hpp"
#include "rpq/rotation.hpp"

namespace rpq {

enum class TrainMode { joint, routing_only, neighborhood_only };

struct TrainingConfig {
    std::uint32_t m = 16;
    std::uint32_t k = 256;
    double sigma = 1.0;   // triplet margin
    double tau = 1.0;     // softmax temperature (Eq. assignment and routing)
    double lr_max = 1e-3; // one-cycle peak
    double decay = 0.2;   // echoed in reports; the one-cycle shape is fixed
    int epochs = 50;
    std::uint32_t batch_size = 256; // triplets per step
    std::uint32_t k_pos = 6;
    std::uint32_t k_neg = 20;
    std::uint32_t n_hops = 2;
    std::uint32_t beam_h = 16; // beam width during trace collection
    std::uint32_t queries_per_epoch = 10000;
    std::uint64_t seed = 1;

    TrainMode mode = TrainMode::joint;
    bool gumbel_noise = true;
    bool anneal_tau = false;
    double tau_final = 0.1;
    bool learn_alpha = true;
    double alpha_init = 1.0;
    std::uint32_t batches_per_epoch = 200;
    std::uint32_t records_per_batch = 16;
    double rot_lr_scale = 1.0; // per-group LR multiplier for the skew parameter
    int kmeans_iters = 12;
    std::size_t kmeans_sample = 65536; // 0 = use every vector

    void validate() const {
        if (sigma <= 0.0 || tau <= 0.0 || lr_max <= 0.0)
            throw ConfigError("training config: sigma, tau, lr_max must be > 0");
        if (epochs < 0 || batch_size == 0 || batches_per_epoch == 0)
            throw ConfigError("training config: invalid batch shape");
        if (k_pos < 1 || k_neg < 1 || n_hops < 1 || beam_h < 1 || queries_per_epoch < 1)
            throw ConfigError("training config: invalid sampling parameters");
    }
};

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

inline double one_cycle_lr(std::size_t step, std::size_t total, double lr_max) {
    if (total == 0 || step >= total) throw ArgumentError("one_cycle_lr: require step < total");
    const double warm = 0.3 * static_cast<double>(total);
    const double lo = lr_max / 25.0;
    const double floor_lr = lr_max / 1e4;
    const double s = static_cast<double>(step);
    if (s <= warm) return lo + (lr_max - lo) * (warm > 0.0 ? s / warm : 1.0);
    return lr_max + (floor_lr - lr_max) * (s - warm) / (static_cast<double>(total) - warm);
}

namespace detail {

inline void adam_apply(double* p, const double* g, double* m, double* v, std::size_t n,
                       std::uint64_t t, double lr, double beta1, double beta2, double eps) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
}

} // namespace detail

/// One standard Adam update (bias-corrected) over a flat parameter vector.
inline void adam_step(std::vector<double>& params, const std::vector<double>& grads,
                      OptimizerState& state, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
    if (params.size() != grads.size() || state.m.size() != params.size() ||
        state.v.size() != params.size())
        throw ArgumentError("adam_step: shape mismatch");
    for (double g : grads)
        if (!std::isfinite(g)) throw TrainingError("adam_step: non-finite gradient");
    state.step += 1;
    detail::adam_apply(params.data(), grads.data(), state.m.data(), state.v.data(),
                       params.size(), state.step, lr, beta1, beta2, eps);
}

// ---------------------------------------------------------------------------
// Soft quantization forward/backward (the differentiable path of the model)
// ---------------------------------------------------------------------------

namespace detail {

struct QuantizeCache {
    std::vector<double> rotated; // D
    std::vector<double> dist;    // M*K
    std::vector<double> probs;   // M*K  (assignment probabilities)
    std::vector<double> weights; // M*K  (Gumbel-softmax output)
    std::vector<double> decoded; // D
    std::vector<double> zbuf;    // K noise scratch
};

struct ModelGrads {
    std::vector<double> rot;  // D*D, dL/dR
    std::vector<double> code; // M*K*sub_dim
    double alpha = 0.0;

    void init(std::uint32_t d, const Codebook& cb) {
        rot.assign(static_cast<std::size_t>(d) * d, 0.0);
        code.assign(cb.words.size(), 0.0);
        alpha = 0.0;
    }
    void zero() {
        std::fill(rot.begin(), rot.end(), 0.0);
        std::fill(code.begin(), code.end(), 0.0);
        alpha = 0.0;
    }
    bool finite() const {
        for (double v : rot)
            if (!std::isfinite(v)) return false;
        for (double v : code)
            if (!std::isfinite(v)) return false;
        return std::isfinite(alpha);
    }
};

// Rotate, per chunk compute distances, assignment probabilities, and the
// (optionally noisy) Gumbel-softmax weights, then soft-decode. All
// intermediates are cached for the backward pass.
inline void forward_soft(const float* x, const RotationMatrix& r, const Codebook& cb,
                         double tau, Rng* noise, QuantizeCache& c) {
    const std::uint32_t d = r.dim;
    const std::uint32_t sub = cb.sub_dim;
    c.rotated.resize(d);
    c.dist.resize(static_cast<std::size_t>(cb.m) * cb.k);
    c.probs.resize(c.dist.size());
    c.weights.resize(c.dist.size());
    c.decoded.assign(d, 0.0);
    r.apply(x, c.rotated.data());

    for (std::uint32_t j = 0; j < cb.m; ++j) {
        const double* u = c.rotated.data() + static_cast<std::size_t>(j) * sub;
        double* dist = c.dist.data() + static_cast<std::size_t>(j) * cb.k;
        double* probs = c.probs.data() + static_cast<std::size_t>(j) * cb.k;
        double* w = c.weights.data() + static_cast<std::size_t>(j) * cb.k;

        double dmin = std::numeric_limits<double>::infinity();
        for (std::uint32_t id = 0; id < cb.k; ++id) {
            dist[id] = l2sq(u, cb.word(j, id), sub);
            dmin = std::min(dmin, dist[id]);
        }
        // log p_id = -dist - logsumexp(-dist), evaluated stably; the RNG runs
        // in its own pass so the exp/log loops vectorize
        double sum = 0.0;
        for (std::uint32_t id = 0; id < cb.k; ++id) {
            probs[id] = fast_exp_nonpos(dmin - dist[id]);
            sum += probs[id];
        }
        const double lse = fast_log(sum); // logsumexp(-dist) + dmin shift folded in
        const double inv_sum = 1.0 / sum;
        double* z = nullptr;
        if (noise) {
            c.zbuf.resize(cb.k);
            z = c.zbuf.data();
            for (std::uint32_t id = 0; id < cb.k; ++id) z[id] = rng::uniform_open(*noise);
            for (std::uint32_t id = 0; id < cb.k; ++id)
                z[id] = -fast_log(-fast_log(z[id]));
        }
        double wmax = -std::numeric_limits<double>::infinity();
        for (std::uint32_t id = 0; id < cb.k; ++id) {
            const double logp = (dmin - dist[id]) - lse;
            probs[id] *= inv_sum;
            w[id] = (logp + (z ? z[id] : 0.0)) / tau;
            wmax = std::max(wmax, w[id]);
        }
        // softmax over w, shifted so every exponent is non-positive
        double wsum = 0.0;
        for (std::uint32_t id = 0; id < cb.k; ++id) {
            w[id] = fast_exp_nonpos(w[id] - wmax);
            wsum += w[id];
        }
        const double inv_wsum = 1.0 / wsum;
        for (std::uint32_t id = 0; id < cb.k; ++id) w[id] *= inv_wsum;

        double* out = c.decoded.data() + static_cast<std::size_t>(j) * sub;
        for (std::uint32_t id = 0; id < cb.k; ++id) {
            const double wid = w[id];
            const double* word = cb.word(j, id);
            for (std::uint32_t t = 0; t < sub; ++t) out[t] += wid * word[t];
        }
    }
}

// Reverse of forward_soft: g_decoded -> codeword and rotation gradients.
// x is the raw input vector the forward pass rotated.
inline void backward_soft(const float* x, const Codebook& cb, double tau,
                          const QuantizeCache& c, const double* g_decoded,
                          ModelGrads& grads, std::vector<double>& scratch_k,
                          std::vector<double>& scratch_y) {
    const std::uint32_t sub = cb.sub_dim;
    const std::uint32_t d = cb.dim();
    scratch_k.resize(cb.k);
    scratch_y.assign(d, 0.0);

    for (std::uint32_t j = 0; j < cb.m; ++j) {
        const double* u = c.rotated.data() + static_cast<std::size_t>(j) * sub;
        const double* probs = c.probs.data() + static_cast<std::size_t>(j) * cb.k;
        const double* w = c.weights.data() + static_cast<std::size_t>(j) * cb.k;
        const double* g_out = g_decoded + static_cast<std::size_t>(j) * sub;
        double* g_code = grads.code.data() + static_cast<std::size_t>(j) * cb.k * sub;
        double* g_u = scratch_y.data() + static_cast<std::size_t>(j) * sub;
        double* gw = scratch_k.data();

        // soft decode: decoded_j = sum_id w_id * word_id
        double dot_wg = 0.0;
        for (std::uint32_t id = 0; id < cb.k; ++id) {
            const double* word = cb.word(j, id);
            double acc = 0.0;
            for (std::uint32_t t = 0; t < sub; ++t) {
                acc += g_out[t] * word[t];
                g_code[id * sub + t] += w[id] * g_out[t];
            }
            gw[id] = acc;
            dot_wg += acc * w[id];
        }
        // softmax((logp + z)/tau), then logp = -dist - lse(-dist)
        double sum_glogp = 0.0;
        for (std::uint32_t id = 0; id < cb.k; ++id) {
            const double g_a = w[id] * (gw[id] - dot_wg);
            gw[id] = g_a / tau; // now holds g_logp
            sum_glogp += gw[id];
        }
        for (std::uint32_t id = 0; id < cb.k; ++id) {
            const double g_d = -gw[id] + probs[id] * sum_glogp;
            const double coef = 2.0 * g_d;
            if (coef == 0.0) continue;
            const double* word = cb.word(j, id);
            for (std::uint32_t t = 0; t < sub; ++t) {
                const double diff = u[t] - word[t];
                g_u[t] += coef * diff;
                g_code[id * sub + t] -= coef * diff;
            }
        }
    }

    // y = R x  =>  dL/dR += g_y x^T
    for (std::uint32_t i = 0; i < d; ++i) {
        const double gi = scratch_y[i];
        if (gi == 0.0) continue;
        double* row = grads.rot.data() + static_cast<std::size_t>(i) * d;
        for (std::uint32_t jj = 0; jj < d; ++jj) row[jj] += gi * static_cast<double>(x[jj]);
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Losses (spec-level operations)
// ---------------------------------------------------------------------------

/// Triplet hinge on already-decoded vectors: max(0, sigma + d(a,p) - d(a,n)).
inline double neighborhood_loss(const std::vector<double>& anchor,
                                const std::vector<double>& positive,
                                const std::vector<double>& negative, double sigma) {
    const double dp = l2sq(anchor.data(), positive.data(), anchor.size());
    const double dn = l2sq(anchor.data(), negative.data(), anchor.size());
    return std::max(0.0, sigma + dp - dn);
}

inline double neighborhood_loss(const SoftCode& anchor, const SoftCode& positive,
                                const SoftCode& negative, const Codebook& cb, double sigma) {
    return neighborhood_loss(soft_decode(anchor, cb), soft_decode(positive, cb),
                             soft_decode(negative, cb), sigma);
}

/// Softmax distribution over a record's candidates of -distance/tau, where
/// each candidate is soft-quantized (noiseless) and compared to the rotated
/// query.
inline std::vector<double> next_hop_distribution(const DecisionRecord& record,
                                                 const float* query,
                                                 const VectorDataset& data,
                                                 const RotationMatrix& rot,
                                                 const Codebook& cb, double tau) {
    if (record.candidates.empty()) throw ArgumentError("next_hop: empty record");
    std::vector<double> yq = rotate(rot, query);
    std::vector<double> logits(record.candidates.size());
    detail::QuantizeCache cache;
    for (std::size_t i = 0; i < record.candidates.size(); ++i) {
        detail::forward_soft(data.row(record.candidates[i]), rot, cb, tau, nullptr, cache);
        logits[i] = -l2sq(cache.decoded.data(), yq.data(), yq.size()) / tau;
    }
    detail::softmax_inplace(logits.data(), logits.size());
    return logits;
}

inline double next_hop_probability(const DecisionRecord& record, const float* query,
                                   const VectorDataset& data, const QuantizerModel& model,
                                   double tau) {
    const RotationMatrix rot = model.rotation();
    return next_hop_distribution(record, query, data, rot, model.codebook,
                                 tau)[record.chosen];
}

/// Negative log-likelihood of the teacher choices over all recorded steps.
inline double routing_loss(const std::vector<RoutingTrace>& traces, const VectorDataset& data,
                           const RotationMatrix& rot, const Codebook& cb, double tau) {
    double loss = 0.0;
    for (const auto& trace : traces)
        for (const auto& step : trace.steps) {
            const std::vector<double> p =
                next_hop_distribution(step, trace.query.data(), data, rot, cb, tau);
            loss -= std::log(p[step.chosen]);
        }
    return loss;
}

inline double routing_loss(const std::vector<RoutingTrace>& traces, const VectorDataset& data,
                           const QuantizerModel& model, double tau) {
    return routing_loss(traces, data, model.rotation(), model.codebook, tau);
}

inline double joint_loss(double l_routing, double l_neighborhood, double alpha) {
    return l_routing + alpha * l_neighborhood;
}

// ---------------------------------------------------------------------------
// Batched objective with gradients
// ---------------------------------------------------------------------------

struct RecordRef {
    const RoutingTrace* trace = nullptr;
    std::uint32_t step = 0;
};

struct FeatureBatch {
    std::vector<RecordRef> records;
    std::vector<TripletSample> triplets;
};

struct BatchLosses {
    double routing_mean = 0.0; // mean -log P per record
    double neigh_mean = 0.0;   // mean hinge per triplet
    std::size_t n_records = 0;
    std::size_t n_triplets = 0;
};

namespace detail {

struct EvalScratch {
    std::vector<QuantizeCache> caches;
    std::vector<double> yq;
    std::vector<double> g_vec;
    std::vector<double> g_dec;
    std::vector<double> sk; // per-chunk scratch
    std::vector<double> sy;
};

// Evaluates the joint objective
//   J = mean_records(-log P) + alpha * mean_triplets(hinge)
// over a fixed feature batch, accumulating dJ/dR, dJ/dcodebook and dJ/dalpha
// when `grads` is given. Separate noise streams keep routing-only runs
// bitwise aligned with joint runs whose alpha is frozen at zero.
inline BatchLosses evaluate_objective(const VectorDataset& data, const RotationMatrix& rot,
                                      const Codebook& cb, double alpha, double tau,
                                      double sigma, TrainMode mode, const FeatureBatch& batch,
                                      Rng* record_noise, Rng* triplet_noise,
                                      ModelGrads* grads, EvalScratch& ws) {
    BatchLosses out;
    const std::uint32_t d = rot.dim;

    const bool want_routing = mode != TrainMode::neighborhood_only;
    const bool want_neigh = mode != TrainMode::routing_only;

    if (want_routing && !batch.records.empty()) {
        out.n_records = batch.records.size();
        const double upstream = 1.0 / static_cast<double>(out.n_records);
        for (const RecordRef& ref : batch.records) {
            const DecisionRecord& rec = ref.trace->steps[ref.step];
            const float* q = ref.trace->query.data();
            const std::size_t nc = rec.candidates.size();
            if (ws.caches.size() < nc) ws.caches.resize(nc);

            ws.yq.resize(d);
            rot.apply(q, ws.yq.data());
            std::vector<double> logits(nc);
            for (std::size_t i = 0; i < nc; ++i) {
                forward_soft(data.row(rec.candidates[i]), rot, cb, tau,
                             record_noise, ws.caches[i]);
                logits[i] = -l2sq(ws.caches[i].decoded.data(), ws.yq.data(), d) / tau;
            }
            softmax_inplace(logits.data(), nc); // now the choice distribution
            const double p_chosen = logits[rec.chosen];
            out.routing_mean += -std::log(std::max(p_chosen, 1e-300)) * upstream;

            if (grads) {
                ws.g_vec.assign(d, 0.0); // accumulates g w.r.t. rotated query
                for (std::size_t i = 0; i < nc; ++i) {
                    const double ind = i == rec.chosen ? 1.0 : 0.0;
                    const double g_d = upstream * (ind - logits[i]) / tau;
                    if (g_d == 0.0) continue;
                    const QuantizeCache& c = ws.caches[i];
                    ws.g_dec.resize(d);
                    for (std::uint32_t t = 0; t < d; ++t) {
                        const double diff = c.decoded[t] - ws.yq[t];
                        ws.g_dec[t] = g_d * 2.0 * diff;
                        ws.g_vec[t] -= g_d * 2.0 * diff;
                    }
                    backward_soft(data.row(rec.candidates[i]), cb, tau, c,
                                  ws.g_dec.data(), *grads, ws.sk, ws.sy);
                }
                // query side: yq = R q
                for (std::uint32_t i = 0; i < d; ++i) {
                    const double gi = ws.g_vec[i];
                    if (gi == 0.0) continue;
                    double* row = grads->rot.data() + static_cast<std::size_t>(i) * d;
                    for (std::uint32_t j = 0; j < d; ++j)
                        row[j] += gi * static_cast<double>(q[j]);
                }
            }
        }
    }

    if (want_neigh && !batch.triplets.empty()) {
        out.n_triplets = batch.triplets.size();
        const double upstream_base = 1.0 / static_cast<double>(out.n_triplets);
        // joint mode scales the parameter gradients by alpha; the
        // neighborhood-only ablation trains the raw hinge
        const double chain = mode == TrainMode::joint ? alpha : 1.0;
        if (ws.caches.size() < 3) ws.caches.resize(3);
        for (const TripletSample& t : batch.triplets) {
            QuantizeCache& ca = ws.caches[0];
            QuantizeCache& cp = ws.caches[1];
            QuantizeCache& cn = ws.caches[2];
            forward_soft(data.row(t.anchor), rot, cb, tau, triplet_noise, ca);
            forward_soft(data.row(t.positive), rot, cb, tau, triplet_noise, cp);
            forward_soft(data.row(t.negative), rot, cb, tau, triplet_noise, cn);
            const double dp = l2sq(ca.decoded.data(), cp.decoded.data(), d);
            const double dn = l2sq(ca.decoded.data(), cn.decoded.data(), d);
            const double margin = sigma + dp - dn;
            if (margin <= 0.0) continue; // hinge inactive; subgradient 0 at the kink
            out.neigh_mean += margin * upstream_base;

            if (grads && chain != 0.0) {
                const double u = upstream_base * chain;
                std::vector<double> ga(d), gp(d), gn(d);
                for (std::uint32_t i = 0; i < d; ++i) {
                    ga[i] = 2.0 * u * (cn.decoded[i] - cp.decoded[i]);
                    gp[i] = 2.0 * u * (cp.decoded[i] - ca.decoded[i]);
                    gn[i] = 2.0 * u * (ca.decoded[i] - cn.decoded[i]);
                }
                backward_soft(data.row(t.anchor), cb, tau, ca, ga.data(), *grads, ws.sk, ws.sy);
                backward_soft(data.row(t.positive), cb, tau, cp, gp.data(), *grads, ws.sk, ws.sy);
                backward_soft(data.row(t.negative), cb, tau, cn, gn.data(), *grads, ws.sk, ws.sy);
            }
        }
        if (grads && mode == TrainMode::joint) grads->alpha = out.neigh_mean;
    }
    return out;
}

} // namespace detail

// Objective value for a fixed feature batch with noise off; the quantity the
// finite-difference gradient checks probe.
inline double joint_objective(const VectorDataset& data, const QuantizerModel& model,
                              double tau, double sigma, TrainMode mode,
                              const FeatureBatch& batch) {
    const RotationMatrix rot = model.rotation();
    detail::EvalScratch ws;
    const BatchLosses l = detail::evaluate_objective(
        data, rot, model.codebook, model.alpha, tau, sigma, mode, batch, nullptr,
        nullptr, nullptr, ws);
    switch (mode) {
    case TrainMode::joint: return l.routing_mean + model.alpha * l.neigh_mean;
    case TrainMode::routing_only: return l.routing_mean;
    case TrainMode::neighborhood_only: return l.neigh_mean;
    }
    return 0.0;
}


// Full packed gradient [A upper | codebook | alpha] of joint_objective.
inline std::vector<double> joint_objective_grad(const VectorDataset& data,
                                                const QuantizerModel& model, double tau,
                                                double sigma, TrainMode mode,
                                                const FeatureBatch& batch,
                                                BatchLosses* losses_out = nullptr) {
    ExpCache ecache;
    const RotationMatrix rot = matrix_exponential(model.skew, ecache);
    detail::ModelGrads grads;
    grads.init(model.dim(), model.codebook);
    detail::EvalScratch ws;
    const BatchLosses l = detail::evaluate_objective(
        data, rot, model.codebook, model.alpha, tau, sigma, mode, batch, nullptr,
        nullptr, &grads, ws);
    if (losses_out) *losses_out = l;

    const std::vector<double> g_upper = exp_backward(model.skew, ecache, grads.rot.data());
    std::vector<double> packed;
    packed.reserve(model.param_count());
    packed.insert(packed.end(), g_upper.begin(), g_upper.end());
    packed.insert(packed.end(), grads.code.begin(), grads.code.end());
    packed.push_back(mode == TrainMode::joint ? grads.alpha : 0.0);
    return packed;
}

inline std::vector<double> pack_params(const QuantizerModel& model) {
    std::vector<double> p;
    p.reserve(model.param_count());
    p.insert(p.end(), model.skew.upper.begin(), model.skew.upper.end());
    p.insert(p.end(), model.codebook.words.begin(), model.codebook.words.end());
    p.push_back(model.alpha);
    return p;
}

inline void unpack_params(const std::vector<double>& p, QuantizerModel& model) {
    const std::size_t na = model.skew.size();
    const std::size_t nc = model.codebook.words.size();
    if (p.size() != na + nc + 1) throw ArgumentError("unpack_params: size mismatch");
    std::copy_n(p.begin(), na, model.skew.upper.begin());
    std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(na), nc, model.codebook.words.begin());
    model.alpha = p[na + nc];
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    double l_routing = 0.0;
    double l_neighborhood = 0.0;
    double alpha = 0.0;
    double lr = 0.0;
};

struct FitResult {
    QuantizerModel model;
    OptimizerState opt;
    std::vector<EpochLog> log;
    bool diverged = false;
};

inline void write_loss_log(const std::vector<EpochLog>& log, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "epoch,l_routing,l_neighborhood,alpha,lr\n";
    char buf[160];
    for (const EpochLog& e : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g\n", e.epoch,
                      e.l_routing, e.l_neighborhood, e.alpha, e.lr);
        out << buf;
    }
}

// Multi-feature joint training: every epoch refreshes the routing traces
// (and the triplet pool implicitly — anchors are resampled per batch), then
// runs mini-batch Adam with the one-cycle schedule. Deterministic for a
// fixed seed; a checkpoint is written after every epoch when a path is
// given. On divergence the last completed epoch's state is restored.
inline FitResult fit(const VectorDataset& data, const ProximityGraph& g,
                     const TrainingConfig& cfg, const std::string& checkpoint_path = "") {
    cfg.validate();
    if (g.n != data.count) throw ConfigError("fit: graph and dataset size mismatch");
    if (data.count == 0) throw ArgumentError("fit: empty dataset");

    FitResult res;
    res.model = init_model(data, cfg.m, cfg.k, cfg.kmeans_iters, cfg.seed, cfg.kmeans_sample);
    res.model.alpha = cfg.mode == TrainMode::routing_only ? 0.0 : cfg.alpha_init;
    res.opt.init(res.model.param_count());

    // Independent streams so ablations that skip one feature type leave the
    // other streams untouched.
    Rng anchor_rng(rng::derive(cfg.seed, 1));
    Rng posneg_rng(rng::derive(cfg.seed, 2));
    Rng query_rng(rng::derive(cfg.seed, 3));
    Rng routing_noise(rng::derive(cfg.seed, 4));
    Rng shuffle_rng(rng::derive(cfg.seed, 5));
    Rng triplet_noise(rng::derive(cfg.seed, 6));

    const bool want_routing = cfg.mode != TrainMode::neighborhood_only;
    const bool want_neigh = cfg.mode != TrainMode::routing_only;
    const bool learn_alpha = cfg.learn_alpha && cfg.mode == TrainMode::joint;

    const std::size_t na = res.model.skew.size();
    const std::size_t nc = res.model.codebook.words.size();
    const std::size_t total_steps =
        static_cast<std::size_t>(cfg.epochs) * cfg.batches_per_epoch;

    QuantizerModel last_good = res.model;
    OptimizerState last_good_opt = res.opt;
    if (!checkpoint_path.empty()) save_checkpoint(res.model, res.opt, checkpoint_path);

    detail::ModelGrads grads;
    grads.init(res.model.dim(), res.model.codebook);
    detail::EvalScratch ws;
    detail::HopScratch hop_scratch;
    std::size_t gstep = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // feature refresh against the frozen snapshot
        const RotationMatrix rot_snapshot = res.model.rotation();
        std::vector<RoutingTrace> traces;
        std::vector<RecordRef> all_records;
        if (want_routing) {
            const CodeArray codes = encode_all(data, rot_snapshot, res.model.codebook);
            const std::size_t nq =
                std::min<std::size_t>(cfg.queries_per_epoch, data.count);
            const std::vector<std::uint32_t> qids = sample_ids(data.count, nq, query_rng);
            traces = collect_routing_traces(g, data, rot_snapshot, res.model.codebook,
                                            codes, qids, cfg.beam_h);
            for (const RoutingTrace& t : traces)
                for (std::uint32_t s = 0; s < t.steps.size(); ++s)
                    all_records.push_back({&t, s});
            for (std::size_t i = all_records.size(); i > 1; --i)
                std::swap(all_records[i - 1], all_records[rng::below(shuffle_rng, i)]);
        }

        double epoch_routing = 0.0, epoch_neigh = 0.0;
        std::size_t epoch_batches = 0;
        double last_lr = 0.0;
        std::size_t rec_pos = 0;

        for (std::uint32_t b = 0; b < cfg.batches_per_epoch; ++b) {
            FeatureBatch batch;
            if (want_routing && !all_records.empty()) {
                batch.records.reserve(cfg.records_per_batch);
                for (std::uint32_t i = 0; i < cfg.records_per_batch; ++i) {
                    batch.records.push_back(all_records[rec_pos]);
                    rec_pos = (rec_pos + 1) % all_records.size();
                }
            }
            if (want_neigh) {
                batch.triplets.reserve(cfg.batch_size);
                std::size_t attempts = 0;
                const std::size_t max_attempts = 50ull * cfg.batch_size;
                while (batch.triplets.size() < cfg.batch_size && attempts < max_attempts) {
                    ++attempts;
                    const auto v = static_cast<std::uint32_t>(rng::below(anchor_rng, data.count));
                    try {
                        batch.triplets.push_back(n_propagation_sample(
                            g, data, v, cfg.n_hops, cfg.k_pos, cfg.k_neg, posneg_rng,
                            &hop_scratch));
                    } catch (const SamplingError&) {
                        // neighborhood too small for this anchor; draw another
                    }
                }
            }

            const double lr = one_cycle_lr(gstep, total_steps, cfg.lr_max);
            const double tau =
                cfg.anneal_tau && total_steps > 1
                    ? cfg.tau + (cfg.tau_final - cfg.tau) * static_cast<double>(gstep) /
                                    static_cast<double>(total_steps - 1)
                    : cfg.tau;

            ExpCache ecache;
            const RotationMatrix rot = matrix_exponential(res.model.skew, ecache);
            grads.zero();
            const BatchLosses l = detail::evaluate_objective(
                data, rot, res.model.codebook, res.model.alpha, tau, cfg.sigma, cfg.mode,
                batch, cfg.gumbel_noise ? &routing_noise : nullptr,
                cfg.gumbel_noise ? &triplet_noise : nullptr, &grads, ws);

            const double joint = l.routing_mean + res.model.alpha * l.neigh_mean;
            if (!std::isfinite(joint) || !grads.finite()) {
                res.model = last_good;
                res.opt = last_good_opt;
                res.diverged = true;
                if (!checkpoint_path.empty())
                    save_checkpoint(res.model, res.opt, checkpoint_path);
                return res;
            }

            const std::vector<double> g_upper =
                exp_backward(res.model.skew, ecache, grads.rot.data());
            res.opt.step += 1;
            detail::adam_apply(res.model.skew.upper.data(), g_upper.data(),
                               res.opt.m.data(), res.opt.v.data(), na, res.opt.step,
                               lr * cfg.rot_lr_scale, 0.9, 0.999, 1e-8);
            detail::adam_apply(res.model.codebook.words.data(), grads.code.data(),
                               res.opt.m.data() + na, res.opt.v.data() + na, nc,
                               res.opt.step, lr, 0.9, 0.999, 1e-8);
            const double g_alpha = learn_alpha ? grads.alpha : 0.0;
            detail::adam_apply(&res.model.alpha, &g_alpha, res.opt.m.data() + na + nc,
                               res.opt.v.data() + na + nc, 1, res.opt.step, lr, 0.9,
                               0.999, 1e-8);

            epoch_routing += l.routing_mean;
            epoch_neigh += l.neigh_mean;
            epoch_batches += 1;
            last_lr = lr;
            gstep += 1;
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.l_routing = epoch_batches ? epoch_routing / static_cast<double>(epoch_batches) : 0.0;
        entry.l_neighborhood =
            epoch_batches ? epoch_neigh / static_cast<double>(epoch_batches) : 0.0;
        entry.alpha = res.model.alpha;
        entry.lr = last_lr;
        res.log.push_back(entry);

        last_good = res.model;
        last_good_opt = res.opt;
        if (!checkpoint_path.empty()) save_checkpoint(res.model, res.opt, checkpoint_path);
    }
    return res;
}

} // namespace rpq
