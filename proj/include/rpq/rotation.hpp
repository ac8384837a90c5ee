#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rpq/common.hpp"
#include "rpq/linalg.hpp"

namespace rpq {

/// Strict upper triangle of a skew-symmetric D x D matrix A; the learnable
/// parameterization of the rotation. Entry order is row-major: (0,1), (0,2),
/// ..., (0,D-1), (1,2), ... — checkpoint layout depends on this order.
struct SkewParam {
    std::uint32_t dim = 0;
    std::vector<double> upper;

    static SkewParam zeros(std::uint32_t d) {
        SkewParam a;
        a.dim = d;
        a.upper.assign(static_cast<std::size_t>(d) * (d - 1) / 2, 0.0);
        return a;
    }
    std::size_t size() const { return upper.size(); }
};

/// Dense orthonormal rotation R = exp(A), row-major.
struct RotationMatrix {
    std::uint32_t dim = 0;
    std::vector<double> m;

    static RotationMatrix identity(std::uint32_t d) {
        RotationMatrix r;
        r.dim = d;
        r.m.assign(static_cast<std::size_t>(d) * d, 0.0);
        for (std::uint32_t i = 0; i < d; ++i) r.m[i * static_cast<std::size_t>(d) + i] = 1.0;
        return r;
    }

    double at(std::uint32_t i, std::uint32_t j) const { return m[i * static_cast<std::size_t>(dim) + j]; }

    void apply(const float* x, double* out) const {
        const std::size_t d = dim;
        for (std::size_t i = 0; i < d; ++i) {
            const double* row = m.data() + i * d;
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += row[j] * static_cast<double>(x[j]);
            out[i] = acc;
        }
    }
    void apply(const double* x, double* out) const {
        detail::mat_vec(m.data(), x, out, dim);
    }
};

inline std::vector<double> skew_to_dense(const SkewParam& a) {
    const std::size_t d = a.dim;
    std::vector<double> dense(d * d, 0.0);
    std::size_t idx = 0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j, ++idx) {
            dense[i * d + j] = a.upper[idx];
            dense[j * d + i] = -a.upper[idx];
        }
    return dense;
}

// Intermediates of one matrix_exponential evaluation, retained so the
// backward pass can differentiate the exact computation graph that produced
// the forward value (series terms plus repeated squarings).
struct ExpCache {
    std::uint32_t dim = 0;
    int squarings = 0;
    std::vector<double> a_scaled;             // A / 2^s
    std::vector<std::vector<double>> terms;   // term_i = A_s^i / i!, i = 0..order
    std::vector<std::vector<double>> squared; // inputs to each squaring step
};

namespace detail {

constexpr int kExpTaylorOrder = 12;

} // namespace detail

// Scaling-and-squaring with a fixed-order truncated Taylor series. The
// number of squarings is chosen so the scaled Frobenius norm is <= 0.5,
// where the order-12 remainder is far below 1e-12.
inline RotationMatrix matrix_exponential(const SkewParam& a, ExpCache& cache) {
    const std::uint32_t d = a.dim;
    if (d == 0) throw ArgumentError("matrix_exponential: dim must be >= 1");
    for (double v : a.upper)
        if (!std::isfinite(v)) throw NumericError("matrix_exponential: non-finite parameter");

    std::vector<double> dense = skew_to_dense(a);
    const double norm = detail::frobenius_norm(dense);
    int s = 0;
    if (norm > 0.5) s = static_cast<int>(std::ceil(std::log2(norm / 0.5)));

    cache.dim = d;
    cache.squarings = s;
    cache.a_scaled = std::move(dense);
    const double scale = std::ldexp(1.0, -s);
    for (double& v : cache.a_scaled) v *= scale;

    const std::size_t nn = static_cast<std::size_t>(d) * d;
    cache.terms.assign(detail::kExpTaylorOrder + 1, std::vector<double>(nn, 0.0));
    for (std::uint32_t i = 0; i < d; ++i) cache.terms[0][i * d + i] = 1.0;

    std::vector<double> sum = cache.terms[0];
    for (int i = 1; i <= detail::kExpTaylorOrder; ++i) {
        detail::mat_mul(cache.a_scaled.data(), cache.terms[i - 1].data(),
                        cache.terms[i].data(), d);
        const double inv = 1.0 / static_cast<double>(i);
        for (std::size_t p = 0; p < nn; ++p) {
            cache.terms[i][p] *= inv;
            sum[p] += cache.terms[i][p];
        }
    }

    cache.squared.clear();
    cache.squared.reserve(s);
    std::vector<double> tmp(nn);
    for (int step = 0; step < s; ++step) {
        cache.squared.push_back(sum);
        detail::mat_mul(cache.squared.back().data(), cache.squared.back().data(), tmp.data(), d);
        sum.swap(tmp);
    }

    RotationMatrix r;
    r.dim = d;
    r.m = std::move(sum);
    return r;
}

inline RotationMatrix matrix_exponential(const SkewParam& a) {
    ExpCache cache;
    return matrix_exponential(a, cache);
}

// Reverse-mode gradient of L through R = exp(A) given upstream = dL/dR.
// Walks the cached squarings and series terms backwards, then projects the
// dense gradient onto the strict upper triangle (A = U - U^T).
inline std::vector<double> exp_backward(const SkewParam& a, const ExpCache& cache,
                                        const double* upstream) {
    const std::uint32_t d = a.dim;
    const std::size_t nn = static_cast<std::size_t>(d) * d;
    for (std::size_t p = 0; p < nn; ++p)
        if (!std::isfinite(upstream[p])) throw NumericError("exp_backward: non-finite upstream");

    std::vector<double> g(upstream, upstream + nn);
    std::vector<double> xt(nn), t1(nn), t2(nn);

    // Through the squarings: B = X X  =>  dL/dX = G X^T + X^T G.
    for (int step = cache.squarings - 1; step >= 0; --step) {
        const std::vector<double>& x = cache.squared[static_cast<std::size_t>(step)];
        detail::mat_transpose(x.data(), xt.data(), d);
        detail::mat_mul(g.data(), xt.data(), t1.data(), d);
        detail::mat_mul(xt.data(), g.data(), t2.data(), d);
        for (std::size_t p = 0; p < nn; ++p) g[p] = t1[p] + t2[p];
    }

    // Through the series: term_i = (1/i) A_s term_{i-1}.
    std::vector<double> g_term = g;
    std::vector<double> g_as(nn, 0.0);
    std::vector<double> as_t(nn);
    detail::mat_transpose(cache.a_scaled.data(), as_t.data(), d);
    for (int i = detail::kExpTaylorOrder; i >= 1; --i) {
        const double inv = 1.0 / static_cast<double>(i);
        // g_as += (1/i) g_term * term_{i-1}^T
        detail::mat_transpose(cache.terms[static_cast<std::size_t>(i) - 1].data(), t1.data(), d);
        detail::mat_mul(g_term.data(), t1.data(), t2.data(), d);
        for (std::size_t p = 0; p < nn; ++p) g_as[p] += inv * t2[p];
        // g_term_{i-1} = g + (1/i) A_s^T g_term
        detail::mat_mul(as_t.data(), g_term.data(), t2.data(), d);
        for (std::size_t p = 0; p < nn; ++p) g_term[p] = g[p] + inv * t2[p];
    }

    const double scale = std::ldexp(1.0, -cache.squarings);
    std::vector<double> grad(a.size());
    std::size_t idx = 0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j, ++idx)
            grad[idx] = scale * (g_as[i * d + j] - g_as[j * d + i]);
    return grad;
}

inline std::vector<double> exp_backward(const SkewParam& a, const double* upstream) {
    ExpCache cache;
    matrix_exponential(a, cache);
    return exp_backward(a, cache, upstream);
}

inline std::vector<double> rotate(const RotationMatrix& r, const float* x) {
    std::vector<double> out(r.dim);
    r.apply(x, out.data());
    return out;
}

// Rotate then slice into M contiguous sub-vectors of D/M coordinates each;
// their concatenation is exactly R x.
inline std::vector<std::vector<double>> decompose(const RotationMatrix& r,
                                                  const float* x, std::uint32_t m) {
    if (m == 0 || r.dim % m != 0)
        throw ConfigError("decompose: M must divide D");
    const std::uint32_t sub = r.dim / m;
    std::vector<double> y = rotate(r, x);
    std::vector<std::vector<double>> parts(m);
    for (std::uint32_t j = 0; j < m; ++j)
        parts[j].assign(y.begin() + j * sub, y.begin() + (j + 1) * sub);
    return parts;
}

} // namespace rpq
