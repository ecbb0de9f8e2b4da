#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "tensor/tensor.hpp"

namespace dhr {

// Central-difference gradient of a scalar function with respect to the leaf
// x. x is perturbed in place one element at a time and restored afterwards,
// so f must read x's current values on every call.
template <typename T>
Tensor<T> finite_diff_gradient(const std::function<T()>& f, Tensor<T>& x, T eps = T(1e-4)) {
    if (!(eps > T(0))) throw UsageError("finite_diff_gradient: eps must be positive");
    auto values = x.leaf_data();
    std::vector<T> grad(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const T saved = values[i];
        values[i] = saved + eps;
        const T plus = f();
        values[i] = saved - eps;
        const T minus = f();
        values[i] = saved;
        if (!std::isfinite(plus) || !std::isfinite(minus)) {
            throw NumericError("finite_diff_gradient: objective is not finite");
        }
        grad[i] = (plus - minus) / (T(2) * eps);
    }
    return Tensor<T>::from(x.shape(), std::move(grad));
}

// Variant for objectives that take the point of evaluation explicitly.
template <typename T>
Tensor<T> finite_diff_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                               T eps = T(1e-4)) {
    Tensor<T> probe = Tensor<T>::from(x.shape(), std::vector<T>(x.data().begin(), x.data().end()));
    return finite_diff_gradient<T>(std::function<T()>([&] { return f(probe); }), probe, eps);
}

// |a-b| / max(|a|,|b|), falling back to the absolute difference when the
// finite-difference value is below 1e-8.
template <typename T>
T gradient_error(T analytic, T numeric) {
    const T diff = std::abs(analytic - numeric);
    if (std::abs(numeric) < T(1e-8)) return diff;
    return diff / std::max(std::abs(analytic), std::abs(numeric));
}

}  // namespace dhr
