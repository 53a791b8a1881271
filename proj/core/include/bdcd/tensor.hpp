#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace bdcd {

/// Dense row-major double tensor. All numerics in this library run in
/// double precision so analytic gradients can be checked against central
/// finite differences directly.
struct Tensor {
    std::vector<long> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<long> s) : shape(std::move(s)), v(numel_of(shape), 0.0) {}
    Tensor(std::vector<long> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
        if (static_cast<long>(v.size()) != numel_of(shape))
            throw std::invalid_argument("Tensor: data size does not match shape");
    }

    static long numel_of(const std::vector<long>& s) {
        long n = 1;
        for (long d : s) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<long> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<long> s, double x) {
        Tensor t(std::move(s));
        std::fill(t.v.begin(), t.v.end(), x);
        return t;
    }
    static Tensor scalar(double x) { return Tensor({1}, {x}); }

    long numel() const { return static_cast<long>(v.size()); }
    long dim(int i) const { return shape.at(i); }
    int ndim() const { return static_cast<int>(shape.size()); }

    double& at(long i) { return v[i]; }
    double at(long i) const { return v[i]; }

    // CHW indexing helpers
    double& at3(long c, long y, long x) { return v[(c * shape[1] + y) * shape[2] + x]; }
    double at3(long c, long y, long x) const { return v[(c * shape[1] + y) * shape[2] + x]; }
    double& at2(long r, long c) { return v[r * shape[1] + c]; }
    double at2(long r, long c) const { return v[r * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }
};

/// Uniform init in [-a, a] with a caller-owned engine; used by layer
/// initializers so a model seed fixes every parameter.
inline void uniform_init(Tensor& t, double a, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-a, a);
    for (double& x : t.v) x = d(rng);
}

}  // namespace bdcd
