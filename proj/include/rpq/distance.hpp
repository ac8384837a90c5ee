#pragma once

#include <cstddef>

namespace rpq {

// Squared Euclidean distance is the metric everywhere in this library.
// The float overload is the single primitive used for all raw-data-space
// comparisons (ground truth, graph build, reranking), so ties resolve
// identically across call sites.
inline float l2sq(const float* a, const float* b, std::size_t d) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < d; ++i) {
        const float diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

inline double l2sq(const double* a, const double* b, std::size_t d) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

inline double l2sq(const double* a, const float* b, std::size_t d) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = a[i] - static_cast<double>(b[i]);
        acc += diff * diff;
    }
    return acc;
}

} // namespace rpq
