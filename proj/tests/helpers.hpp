#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "bdcd/autograd.hpp"
#include "bdcd/mask.hpp"
#include "bdcd/nn.hpp"

namespace bdcd::test {

inline Tensor random_tensor(std::vector<long> shape, double a, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    uniform_init(t, a, rng);
    return t;
}

inline Mask random_mask(long h, long w, int num_classes, std::mt19937_64& rng) {
    Mask m(h, w);
    std::uniform_int_distribution<int> d(0, num_classes - 1);
    for (auto& x : m.v) x = static_cast<uint8_t>(d(rng));
    return m;
}

/// Max relative error between the analytic gradient of `f` w.r.t. every
/// listed parameter and central finite differences with step `h`.
/// The denominator is floored at 1e-2 so near-zero entries compare
/// absolutely at 1e-6, the truncation scale of the central difference.
inline double grad_check(const std::function<ag::Var()>& f, const std::vector<ag::Var>& params,
                         double h = 1e-3) {
    for (const auto& p : params) p.grad().v.assign(p.grad().v.size(), 0.0);
    ag::Var out = f();
    ag::backward(out);
    double worst = 0;
    for (const auto& p : params) {
        Tensor analytic = p.grad();
        ag::Var pm = p;  // non-const handle to the shared node
        for (size_t i = 0; i < pm.val().v.size(); ++i) {
            double orig = pm.val().v[i];
            pm.val().v[i] = orig + h;
            double up = f().val().v[0];
            pm.val().v[i] = orig - h;
            double dn = f().val().v[0];
            pm.val().v[i] = orig;
            double numeric = (up - dn) / (2 * h);
            double denom = std::max({1e-2, std::fabs(numeric), std::fabs(analytic.v[i])});
            worst = std::max(worst, std::fabs(numeric - analytic.v[i]) / denom);
        }
    }
    return worst;
}

}  // namespace bdcd::test
