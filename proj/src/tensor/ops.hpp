#pragma once

#include <span>
#include <vector>

#include "tensor/tensor.hpp"

namespace dhr {

// Forward ops with reverse-mode rules. Every op validates shapes up front and
// throws DimensionError on mismatch; outputs are checked for finiteness.

// [m,k]·[k,n] -> [m,n], or batched [b,m,k]·[b,k,n] -> [b,m,n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Softmax over the last axis with per-row max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& t);

struct Conv2dOptions {
    std::size_t padding = 0;
    std::size_t stride = 1;
};

// Cross-correlation. input [n,c_in,h,w], weight [c_out,c_in,kh,kw], bias [c_out].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions options = {});

enum class ElementwiseKind { add, mul, sigmoid, relu };

// Binary kinds accept b with the same shape as a, a single element, a
// per-channel gate ([n,c] or [n,c,1,1] against [n,c,h,w]) or a per-pixel gate
// ([n,1,h,w] against [n,c,h,w]). Anything else is a DimensionError.
template <typename T>
Tensor<T> elementwise(ElementwiseKind kind, const Tensor<T>& a, const Tensor<T>& b = {});

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(ElementwiseKind::add, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(ElementwiseKind::mul, a, b);
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return elementwise(ElementwiseKind::sigmoid, a);
}
template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return elementwise(ElementwiseKind::relu, a);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);

template <typename T>
Tensor<T> mean(const Tensor<T>& a);

enum class PoolKind { avg, max };

// Spatial reduction [n,c,h,w] -> [n,c]. Max ties route to the first flat index.
template <typename T>
Tensor<T> global_pool(PoolKind kind, const Tensor<T>& t);

// Channel reduction [n,c,h,w] -> [n,1,h,w]. Max ties route to the lowest channel.
template <typename T>
Tensor<T> channel_pool(PoolKind kind, const Tensor<T>& t);

// Concatenation along axis 1; all other extents must agree.
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts);

template <typename T>
Tensor<T> concat_channels(std::initializer_list<Tensor<T>> parts) {
    std::vector<Tensor<T>> v(parts);
    return concat_channels<T>(std::span<const Tensor<T>>(v));
}

// Channels [begin, begin+count) along axis 1.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, std::size_t begin, std::size_t count);

template <typename T>
Tensor<T> reshape(const Tensor<T>& t, const Shape& shape);

// Output axis i is input axis axes[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& t, const std::vector<std::size_t>& axes);

// [1,...] -> [n,...] by repetition along axis 0.
template <typename T>
Tensor<T> repeat_batch(const Tensor<T>& t, std::size_t n);

// x [n,in] · weight[out,in]^T + bias[out] -> [n,out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

}  // namespace dhr
