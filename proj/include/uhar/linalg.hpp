#pragma once

#include <cmath>
#include <optional>

#include "uhar/common.hpp"

namespace uhar {

inline void symmetrize(Mat& a) {
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = i + 1; j < a.cols; ++j) {
            const double m = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = m;
            a(j, i) = m;
        }
}

// Lower Cholesky factor; nullopt if the matrix is not positive definite.
inline std::optional<Mat> cholesky(const Mat& a) {
    const std::size_t n = a.rows;
    Mat l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s)) return std::nullopt;
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

// Solve L L^T x = b given the lower factor.
inline Vec cholesky_solve(const Mat& l, const Vec& b) {
    const std::size_t n = l.rows;
    Vec y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    Vec x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = y[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * x[k];
        x[i] = s / l(i, i);
    }
    return x;
}

// Solve L L^T X = B column-wise.
inline Mat cholesky_solve(const Mat& l, const Mat& b) {
    Mat x(b.rows, b.cols);
    Vec col(b.rows);
    for (std::size_t j = 0; j < b.cols; ++j) {
        for (std::size_t i = 0; i < b.rows; ++i) col[i] = b(i, j);
        Vec s = cholesky_solve(l, col);
        for (std::size_t i = 0; i < b.rows; ++i) x(i, j) = s[i];
    }
    return x;
}

// Cholesky with a single jitter retry. Throws NumericError when the matrix
// is not positive definite even after jitter.
inline Mat cholesky_jittered(Mat a, double jitter = 1e-9) {
    if (auto l = cholesky(a)) return *l;
    for (std::size_t i = 0; i < a.rows; ++i) a(i, i) += jitter;
    if (auto l = cholesky(a)) return *l;
    throw NumericError("matrix not positive definite after jitter");
}

}  // namespace uhar
