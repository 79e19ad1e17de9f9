#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace uhar {

// Error categories map onto CLI exit codes: config 2, artifact 3, numeric 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct ArtifactError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

using Vec = std::vector<double>;

// Dense row-major matrix. Everything in this library is small (windows are
// 6xW, covariances dxd with d around 16), so no sparsity or blocking.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Mat(std::size_t r, std::size_t c, Vec d) : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != r * c) throw Error("Mat: data size mismatch");
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return data.size(); }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    bool operator==(const Mat& o) const = default;
};

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const Mat& m) { return all_finite(m.data); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Squared Euclidean distance.
inline double dist_sq(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline Vec matvec(const Mat& m, const Vec& x) {
    Vec y(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        double s = 0.0;
        const double* row = &m.data[i * m.cols];
        for (std::size_t j = 0; j < m.cols; ++j) s += row[j] * x[j];
        y[i] = s;
    }
    return y;
}

// y = M^T x
inline Vec matvec_t(const Mat& m, const Vec& x) {
    Vec y(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double xi = x[i];
        const double* row = &m.data[i * m.cols];
        for (std::size_t j = 0; j < m.cols; ++j) y[j] += row[j] * xi;
    }
    return y;
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

}  // namespace uhar
