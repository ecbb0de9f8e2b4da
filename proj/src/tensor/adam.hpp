#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tensor/tensor.hpp"

namespace dhr {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Moment buffers are created on the first step and must keep matching the
// parameter shapes afterwards.
template <typename T>
struct AdamState {
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;
    std::uint64_t step_count = 0;
    AdamHyper hyper;
};

// One bias-corrected Adam update. grads[i] pairs with params[i]; params must
// be leaves. Throws DimensionError on any shape disagreement.
template <typename T>
void adam_step(std::span<Tensor<T>> params, std::span<const std::span<const T>> grads, AdamState<T>& state);

// Convenience overload reading each parameter's accumulated grad. Parameters
// without a grad buffer are treated as having zero gradient.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state);

}  // namespace dhr
