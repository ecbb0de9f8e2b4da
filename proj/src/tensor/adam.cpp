#include "tensor/adam.hpp"

#include <cmath>
#include <string>

namespace dhr {

template <typename T>
void adam_step(std::span<Tensor<T>> params, std::span<const std::span<const T>> grads, AdamState<T>& state) {
    if (grads.size() != params.size()) {
        throw DimensionError("adam_step: " + std::to_string(params.size()) + " params but " +
                             std::to_string(grads.size()) + " grads");
    }
    if (state.step_count == 0 && state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.numel(), T(0));
            state.second_moment.emplace_back(p.numel(), T(0));
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw DimensionError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                             " params, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i].numel() || state.first_moment[i].size() != params[i].numel()) {
            throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(i));
        }
    }

    state.step_count += 1;
    const auto& h = state.hyper;
    const double t = static_cast<double>(state.step_count);
    const T b1 = static_cast<T>(h.beta1);
    const T b2 = static_cast<T>(h.beta2);
    const T correction1 = static_cast<T>(1.0 - std::pow(h.beta1, t));
    const T correction2 = static_cast<T>(1.0 - std::pow(h.beta2, t));
    const T lr = static_cast<T>(h.lr);
    const T eps = static_cast<T>(h.epsilon);

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].leaf_data();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        const auto g = grads[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            const T m_hat = m[j] / correction1;
            const T v_hat = v[j] / correction2;
            values[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
    std::vector<std::vector<T>> zeros;
    std::vector<std::span<const T>> grads;
    zeros.reserve(params.size());
    for (const auto& p : params) {
        if (p.has_grad()) {
            grads.push_back(p.grad());
        } else {
            zeros.emplace_back(p.numel(), T(0));
            grads.push_back(zeros.back());
        }
    }
    adam_step<T>(params, std::span<const std::span<const T>>(grads), state);
}

template void adam_step<float>(std::span<Tensor<float>>, std::span<const std::span<const float>>, AdamState<float>&);
template void adam_step<double>(std::span<Tensor<double>>, std::span<const std::span<const double>>,
                                AdamState<double>&);
template void adam_step<float>(std::span<Tensor<float>>, AdamState<float>&);
template void adam_step<double>(std::span<Tensor<double>>, AdamState<double>&);

}  // namespace dhr
