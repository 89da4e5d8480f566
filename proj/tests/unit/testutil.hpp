#pragma once

#include <cmath>
#include <functional>

#include "salcl/core/rng.hpp"
#include "salcl/core/tensor.hpp"

namespace salcl::testutil {

// Central finite differences of a scalar function of one tensor. This is the
// independent oracle every autodiff result is checked against.
template <typename F>
Tensor<double> finite_diff(const Tensor<double>& x, F&& f, double eps = 1e-5) {
    Tensor<double> g(x.shape());
    Tensor<double> probe = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double hi = f(probe);
        probe[i] = orig - eps;
        const double lo = f(probe);
        probe[i] = orig;
        g[i] = (hi - lo) / (2.0 * eps);
    }
    return g;
}

inline bool rel_close(double a, double b, double rtol, double atol = 1e-9) {
    return std::abs(a - b) <= atol + rtol * std::max(std::abs(a), std::abs(b));
}

template <typename T>
bool all_rel_close(const Tensor<T>& a, const Tensor<T>& b, double rtol, double atol = 1e-9) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (!rel_close(static_cast<double>(a[i]), static_cast<double>(b[i]), rtol, atol))
            return false;
    return true;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.gaussian() * scale);
    return t;
}

} // namespace salcl::testutil
