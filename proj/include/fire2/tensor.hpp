#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace fire2 {

/// Dense row-major double tensor. Rank is dynamic; shapes are small
/// (B,C,H,W at most), so a plain vector<int> shape is enough.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
    }
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape))
            throw std::invalid_argument("Tensor: data size does not match shape");
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 2-D and 4-D accessors; bounds are the caller's contract.
    double& at2(int i, int j) { return data[static_cast<size_t>(i) * dim(1) + j]; }
    double at2(int i, int j) const { return data[static_cast<size_t>(i) * dim(1) + j]; }
    double& at4(int b, int c, int h, int w) {
        return data[((static_cast<size_t>(b) * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }
    double at4(int b, int c, int h, int w) const {
        return data[((static_cast<size_t>(b) * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

/// In-place x /= max(||x||, eps). Returns the pre-normalization norm.
inline double l2_normalize(std::vector<double>& a, double eps = 1e-12) {
    double n = l2_norm(a);
    double d = std::max(n, eps);
    for (double& v : a) v /= d;
    return n;
}

}  // namespace fire2
