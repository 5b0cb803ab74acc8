#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sker {

using Vec = std::vector<double>;

// Dense row-major matrix. Vectors used as parameters are stored as n x 1.
struct Mat {
    std::size_t rows = 0, cols = 0;
    Vec a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    double* row(std::size_t i) { return a.data() + i * cols; }
    const double* row(std::size_t i) const { return a.data() + i * cols; }

    Vec row_vec(std::size_t i) const { return Vec(row(i), row(i) + cols); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    bool operator==(const Mat& o) const { return rows == o.rows && cols == o.cols && a == o.a; }
};

// y = W x, W is (out x in)
inline Vec matvec(const Mat& w, const Vec& x) {
    if (w.cols != x.size())
        throw std::invalid_argument("matvec: dimension mismatch " + std::to_string(w.cols) +
                                    " vs " + std::to_string(x.size()));
    Vec y(w.rows, 0.0);
    for (std::size_t i = 0; i < w.rows; ++i) {
        const double* r = w.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < w.cols; ++j) s += r[j] * x[j];
        y[i] = s;
    }
    return y;
}

// y = W^T x, W is (in x out)
inline Vec matvec_t(const Mat& w, const Vec& x) {
    if (w.rows != x.size())
        throw std::invalid_argument("matvec_t: dimension mismatch " + std::to_string(w.rows) +
                                    " vs " + std::to_string(x.size()));
    Vec y(w.cols, 0.0);
    for (std::size_t i = 0; i < w.rows; ++i) {
        const double xi = x[i];
        const double* r = w.row(i);
        for (std::size_t j = 0; j < w.cols; ++j) y[j] += r[j] * xi;
    }
    return y;
}

// G += dy x^T
inline void outer_acc(Mat& g, const Vec& dy, const Vec& x) {
    for (std::size_t i = 0; i < g.rows; ++i) {
        double* r = g.row(i);
        const double d = dy[i];
        for (std::size_t j = 0; j < g.cols; ++j) r[j] += d * x[j];
    }
}

inline void axpy(Vec& y, double alpha, const Vec& x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

inline double dot(const Vec& u, const Vec& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
}

inline Vec hadamard(const Vec& u, const Vec& v) {
    Vec y(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) y[i] = u[i] * v[i];
    return y;
}

inline Vec add(Vec u, const Vec& v) {
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += v[i];
    return u;
}

inline double norm2(const Vec& v) { return std::sqrt(dot(v, v)); }

// Numerically stable softmax (max subtracted before exponentiation).
inline Vec softmax(const Vec& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    Vec p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

// dlogits from dprob for y = softmax(logits)
inline Vec softmax_backward(const Vec& p, const Vec& dp) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * dp[i];
    Vec dl(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) dl[i] = p[i] * (dp[i] - s);
    return dl;
}

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a) { return splitmix64(a); }
template <class... Rest>
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, Rest... rest) {
    return mix_seed(splitmix64(a) ^ (b + 0x9e3779b97f4a7c15ULL), rest...);
}

// Deterministic RNG with explicitly-coded distributions so that results do
// not depend on the standard library's <random> distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next() { return gen_(); }

    double uniform01() { return (next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    std::size_t below(std::size_t n) {
        // rejection sampling, unbiased
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return static_cast<std::size_t>(x % n);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 gen_;
};

// Xavier-uniform bound for a (fan_in, fan_out) map.
inline double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline void xavier_fill(Mat& m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = xavier_bound(fan_in, fan_out);
    for (double& x : m.a) x = rng.uniform(-a, a);
}

}  // namespace sker
