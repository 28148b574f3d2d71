#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace geosteer {

// Dense row-major array of 64-bit floats. Rank 1 and 2 cover everything in
// this project; shape is kept general anyway.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s)
        : shape(std::move(s)), data(numel_of(shape), 0.0) {}

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t e : s) n *= e;
        return n;
    }

    static Tensor vec(std::size_t n) { return Tensor({n}); }
    static Tensor mat(std::size_t r, std::size_t c) { return Tensor({r, c}); }
    static Tensor scalar(double v) {
        Tensor t({1});
        t.data[0] = v;
        return t;
    }
    static Tensor from(std::vector<double> values) {
        Tensor t;
        t.shape = {values.size()};
        t.data = std::move(values);
        return t;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
    double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline double dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel())
        throw std::invalid_argument("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

// y += c * x
inline void axpy(double c, const Tensor& x, Tensor& y) {
    if (x.numel() != y.numel())
        throw std::invalid_argument("axpy: size mismatch");
    for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] += c * x.data[i];
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("tensor subtraction: shape mismatch");
    Tensor out = a;
    for (std::size_t i = 0; i < b.numel(); ++i) out.data[i] -= b.data[i];
    return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel())
        throw std::invalid_argument("max_abs_diff: size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

// Per-coordinate relative error with an absolute floor on the denominator so
// near-zero coordinates are judged on an absolute scale.
inline double max_rel_err(const Tensor& a, const Tensor& b, double floor = 1e-4) {
    if (a.numel() != b.numel())
        throw std::invalid_argument("max_rel_err: size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        double denom = std::max({std::abs(a.data[i]), std::abs(b.data[i]), floor});
        m = std::max(m, std::abs(a.data[i] - b.data[i]) / denom);
    }
    return m;
}

}  // namespace geosteer
