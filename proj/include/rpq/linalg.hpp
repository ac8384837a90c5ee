#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace rpq::detail {

// Minimal dense kernels for the D x D matrices used by the rotation and its
// gradients (D <= a few hundred). Row-major throughout.

inline void mat_mul(const double* a, const double* b, double* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = a[i * n + k];
            const double* bk = b + k * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
}

// c += a * b^T
inline void mat_mul_bt_acc(const double* a, const double* b, double* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a + i * n;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * n;
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k) acc += ai[k] * bj[k];
            ci[j] += acc;
        }
    }
}

// c = a^T * b
inline void mat_mul_at(const double* a, const double* b, double* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double aki = a[k * n + i];
            const double* bk = b + k * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
        }
    }
}

inline void mat_transpose(const double* a, double* at, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) at[j * n + i] = a[i * n + j];
}

// y = M x
inline void mat_vec(const double* m, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* mi = m + i * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += mi[j] * x[j];
        y[i] = acc;
    }
}

// c += u v^T  (outer product accumulate)
inline void outer_acc(const double* u, const double* v, double* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double ui = u[i];
        if (ui == 0.0) continue;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += ui * v[j];
    }
}

inline double frobenius_norm(const std::vector<double>& a) {
    double acc = 0.0;
    for (double v : a) acc += v * v;
    return acc > 0.0 ? std::sqrt(acc) : 0.0;
}

} // namespace rpq::detail
