#include "tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tensor/kernels.hpp"

namespace dhr {

namespace {

template <typename T>
using NodeT = detail::Node<T>;

template <typename T>
using NodePtrT = std::shared_ptr<detail::Node<T>>;

[[noreturn]] void dim_error(const std::string& op, const std::string& what) {
    throw DimensionError(op + ": " + what);
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op) {
    if (!t.defined()) throw UsageError(std::string(op) + ": undefined operand");
}

template <typename T>
bool wants_grad(const NodePtrT<T>& p) {
    return p && p->requires_grad;
}

// --- convolution helpers ----------------------------------------------------

struct ConvGeometry {
    std::size_t c_in, h, w, kh, kw, pad, stride, ho, wo;
    std::size_t rows() const { return c_in * kh * kw; }
    std::size_t cols() const { return ho * wo; }
};

// col[(ci*kh+ki)*kw+kj][oy*wo+ox]
template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* col) {
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        const T* plane = in + ci * g.h * g.w;
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                T* row = col + ((ci * g.kh + ki) * g.kw + kj) * g.cols();
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    T* out = row + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(out, out + g.wo, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                                      ? T(0)
                                      : src[static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* in) {
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        T* plane = in + ci * g.h * g.w;
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const T* row = col + ((ci * g.kh + ki) * g.kw + kj) * g.cols();
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    T* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    const T* src = row + oy * g.wo;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        dst[static_cast<std::size_t>(ix)] += src[ox];
                    }
                }
            }
        }
    }
}

// --- broadcasting -------------------------------------------------------------

enum class Broadcast { same, scalar, per_channel, per_pixel };

struct BroadcastPlan {
    Broadcast kind;
    std::size_t channels = 1;  // c of a
    std::size_t pixels = 1;    // h*w of a

    std::size_t b_index(std::size_t i) const {
        switch (kind) {
            case Broadcast::same: return i;
            case Broadcast::scalar: return 0;
            case Broadcast::per_channel: return i / pixels;
            case Broadcast::per_pixel: return (i / (channels * pixels)) * pixels + i % pixels;
        }
        return 0;
    }
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return {Broadcast::same};
    if (shape_numel(b) == 1) return {Broadcast::scalar};
    if (a.size() == 4) {
        const std::size_t pixels = a[2] * a[3];
        const bool per_channel_2d = b.size() == 2 && b[0] == a[0] && b[1] == a[1];
        const bool per_channel_4d =
            b.size() == 4 && b[0] == a[0] && b[1] == a[1] && b[2] == 1 && b[3] == 1;
        if (per_channel_2d || per_channel_4d) return {Broadcast::per_channel, a[1], pixels};
        if (b.size() == 4 && b[0] == a[0] && b[1] == 1 && b[2] == a[2] && b[3] == a[3]) {
            return {Broadcast::per_pixel, a[1], pixels};
        }
    }
    dim_error(op, "unsupported broadcast " + shape_str(b) + " against " + shape_str(a));
}

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace

// --- matmul -------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    std::size_t batch = 1, m, k, n;
    Shape out_shape;
    if (sa.size() == 2 && sb.size() == 2) {
        m = sa[0], k = sa[1], n = sb[1];
        if (sb[0] != k) dim_error("matmul", "inner extents differ: " + shape_str(sa) + " x " + shape_str(sb));
        out_shape = {m, n};
    } else if (sa.size() == 3 && sb.size() == 3) {
        batch = sa[0], m = sa[1], k = sa[2], n = sb[2];
        if (sb[0] != batch || sb[1] != k) {
            dim_error("matmul", "batched extents differ: " + shape_str(sa) + " x " + shape_str(sb));
        }
        out_shape = {batch, m, n};
    } else {
        dim_error("matmul", "expected two 2-D or two 3-D operands, got " + shape_str(sa) + " x " + shape_str(sb));
    }

    std::vector<T> out(batch * m * n, T(0));
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    for (std::size_t s = 0; s < batch; ++s) {
        kernels::gemm_nn(m, n, k, pa + s * m * k, pb + s * k * n, out.data() + s * m * n);
    }

    auto backward_fn = [batch, m, k, n](NodeT<T>& self) {
        auto& pa_node = self.parents[0];
        auto& pb_node = self.parents[1];
        const T* dc = self.grad.data();
        if (wants_grad<T>(pa_node)) {
            // dA = dC · B^T
            auto& ga = pa_node->grad_buffer();
            std::vector<T> bt(n * k);
            for (std::size_t s = 0; s < batch; ++s) {
                kernels::transpose(k, n, pb_node->data.data() + s * k * n, bt.data());
                kernels::gemm_nn(m, k, n, dc + s * m * n, bt.data(), ga.data() + s * m * k);
            }
        }
        if (wants_grad<T>(pb_node)) {
            // dB = A^T · dC
            auto& gb = pb_node->grad_buffer();
            for (std::size_t s = 0; s < batch; ++s) {
                kernels::gemm_tn(k, n, m, pa_node->data.data() + s * m * k, dc + s * m * n,
                                 gb.data() + s * k * n);
            }
        }
    };
    return detail::make_result<T>(std::move(out_shape), std::move(out), {a.node(), b.node()},
                                  backward_fn, "matmul");
}

// --- softmax --------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& t) {
    require_defined(t, "softmax_rows");
    const Shape& s = t.shape();
    const std::size_t n = s.back();
    const std::size_t rows = t.numel() / n;
    const auto in = t.data();
    for (T v : in) {
        if (std::isnan(v)) throw NumericError("softmax_rows: NaN input");
    }
    std::vector<T> out(in.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = in.data() + r * n;
        T* y = out.data() + r * n;
        const T mx = *std::max_element(x, x + n);
        T total = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            total += y[j];
        }
        for (std::size_t j = 0; j < n; ++j) y[j] /= total;
    }

    auto backward_fn = [rows, n](NodeT<T>& self) {
        auto& p = self.parents[0];
        auto& gx = p->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = self.data.data() + r * n;
            const T* dy = self.grad.data() + r * n;
            T dot = T(0);
            for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
            T* dx = gx.data() + r * n;
            for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    };
    return detail::make_result<T>(s, std::move(out), {t.node()}, backward_fn, "softmax_rows");
}

// --- conv2d ---------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions options) {
    require_defined(input, "conv2d");
    require_defined(weight, "conv2d");
    require_defined(bias, "conv2d");
    const Shape& si = input.shape();
    const Shape& sw = weight.shape();
    if (si.size() != 4) dim_error("conv2d", "input must be [n,c,h,w], got " + shape_str(si));
    if (sw.size() != 4) dim_error("conv2d", "weight must be [c_out,c_in,kh,kw], got " + shape_str(sw));
    if (sw[1] != si[1]) {
        dim_error("conv2d", "channel mismatch: input " + shape_str(si) + " weight " + shape_str(sw));
    }
    if (bias.shape() != Shape{sw[0]}) dim_error("conv2d", "bias must be [c_out], got " + shape_str(bias.shape()));
    if (options.stride == 0) dim_error("conv2d", "stride must be positive");
    const std::size_t padded_h = si[2] + 2 * options.padding;
    const std::size_t padded_w = si[3] + 2 * options.padding;
    if (sw[2] > padded_h || sw[3] > padded_w) {
        dim_error("conv2d", "kernel " + shape_str(sw) + " does not fit padded input " + shape_str(si));
    }

    ConvGeometry g{si[1],          si[2], si[3], sw[2], sw[3], options.padding, options.stride,
                   (padded_h - sw[2]) / options.stride + 1, (padded_w - sw[3]) / options.stride + 1};
    const std::size_t batch = si[0];
    const std::size_t c_out = sw[0];
    const bool pointwise = g.kh == 1 && g.kw == 1 && g.pad == 0 && g.stride == 1;

    std::vector<T> out(batch * c_out * g.cols());
    std::vector<T> col(pointwise ? 0 : g.rows() * g.cols());
    const T* pin = input.data().data();
    const T* pw = weight.data().data();
    const T* pbias = bias.data().data();
    for (std::size_t s = 0; s < batch; ++s) {
        T* o = out.data() + s * c_out * g.cols();
        for (std::size_t co = 0; co < c_out; ++co) std::fill(o + co * g.cols(), o + (co + 1) * g.cols(), pbias[co]);
        const T* src = pin + s * g.c_in * g.h * g.w;
        if (!pointwise) {
            im2col(g, src, col.data());
            src = col.data();
        }
        kernels::gemm_nn(c_out, g.cols(), g.rows(), pw, src, o);
    }

    auto backward_fn = [g, batch, c_out, pointwise](NodeT<T>& self) {
        auto& in_node = self.parents[0];
        auto& w_node = self.parents[1];
        auto& b_node = self.parents[2];
        const std::size_t in_stride = g.c_in * g.h * g.w;
        const std::size_t out_stride = c_out * g.cols();
        if (wants_grad<T>(b_node)) {
            auto& gb = b_node->grad_buffer();
            for (std::size_t s = 0; s < batch; ++s) {
                for (std::size_t co = 0; co < c_out; ++co) {
                    const T* d = self.grad.data() + s * out_stride + co * g.cols();
                    T acc = T(0);
                    for (std::size_t p = 0; p < g.cols(); ++p) acc += d[p];
                    gb[co] += acc;
                }
            }
        }
        std::vector<T> col(g.rows() * g.cols());
        std::vector<T> col_t(g.rows() * g.cols());
        if (wants_grad<T>(w_node)) {
            auto& gw = w_node->grad_buffer();
            for (std::size_t s = 0; s < batch; ++s) {
                const T* src = in_node->data.data() + s * in_stride;
                if (!pointwise) {
                    im2col(g, src, col.data());
                    src = col.data();
                }
                kernels::transpose(g.rows(), g.cols(), src, col_t.data());
                kernels::gemm_nn(c_out, g.rows(), g.cols(), self.grad.data() + s * out_stride,
                                 col_t.data(), gw.data());
            }
        }
        if (wants_grad<T>(in_node)) {
            auto& gi = in_node->grad_buffer();
            for (std::size_t s = 0; s < batch; ++s) {
                if (pointwise) {
                    kernels::gemm_tn(g.rows(), g.cols(), c_out, w_node->data.data(),
                                     self.grad.data() + s * out_stride, gi.data() + s * in_stride);
                } else {
                    std::fill(col.begin(), col.end(), T(0));
                    kernels::gemm_tn(g.rows(), g.cols(), c_out, w_node->data.data(),
                                     self.grad.data() + s * out_stride, col.data());
                    col2im_add(g, col.data(), gi.data() + s * in_stride);
                }
            }
        }
    };
    return detail::make_result<T>({batch, c_out, g.ho, g.wo}, std::move(out),
                                  {input.node(), weight.node(), bias.node()}, backward_fn, "conv2d");
}

// --- elementwise ------------------------------------------------------------------

template <typename T>
Tensor<T> elementwise(ElementwiseKind kind, const Tensor<T>& a, const Tensor<T>& b) {
    require_defined(a, "elementwise");
    const auto in = a.data();
    std::vector<T> out(in.size());

    if (kind == ElementwiseKind::sigmoid || kind == ElementwiseKind::relu) {
        if (b.defined()) throw UsageError("elementwise: unary kind given a second operand");
        if (kind == ElementwiseKind::sigmoid) {
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = stable_sigmoid(in[i]);
            auto backward_fn = [](NodeT<T>& self) {
                auto& gx = self.parents[0]->grad_buffer();
                for (std::size_t i = 0; i < gx.size(); ++i) {
                    const T y = self.data[i];
                    gx[i] += self.grad[i] * y * (T(1) - y);
                }
            };
            return detail::make_result<T>(a.shape(), std::move(out), {a.node()}, backward_fn, "sigmoid");
        }
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
        auto backward_fn = [](NodeT<T>& self) {
            auto& p = self.parents[0];
            auto& gx = p->grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                if (p->data[i] > T(0)) gx[i] += self.grad[i];
            }
        };
        return detail::make_result<T>(a.shape(), std::move(out), {a.node()}, backward_fn, "relu");
    }

    if (!b.defined()) throw UsageError("elementwise: binary kind needs a second operand");
    const BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), "elementwise");
    const auto rhs = b.data();
    const bool is_add = kind == ElementwiseKind::add;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const T bv = rhs[plan.b_index(i)];
        out[i] = is_add ? in[i] + bv : in[i] * bv;
    }
    auto backward_fn = [plan, is_add](NodeT<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        const std::size_t count = self.data.size();
        if (wants_grad<T>(pa)) {
            auto& ga = pa->grad_buffer();
            if (is_add) {
                for (std::size_t i = 0; i < count; ++i) ga[i] += self.grad[i];
            } else {
                for (std::size_t i = 0; i < count; ++i) ga[i] += self.grad[i] * pb->data[plan.b_index(i)];
            }
        }
        if (wants_grad<T>(pb)) {
            auto& gb = pb->grad_buffer();
            if (is_add) {
                for (std::size_t i = 0; i < count; ++i) gb[plan.b_index(i)] += self.grad[i];
            } else {
                for (std::size_t i = 0; i < count; ++i) gb[plan.b_index(i)] += self.grad[i] * pa->data[i];
            }
        }
    };
    return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, backward_fn,
                                  is_add ? "add" : "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    require_defined(a, "scale");
    const auto in = a.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
    auto backward_fn = [factor](NodeT<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * factor;
    };
    return detail::make_result<T>(a.shape(), std::move(out), {a.node()}, backward_fn, "scale");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return add(a, scale(b, T(-1)));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    require_defined(a, "sum");
    T total = T(0);
    for (T v : a.data()) total += v;
    auto backward_fn = [](NodeT<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        const T g = self.grad[0];
        for (auto& v : gx) v += g;
    };
    return detail::make_result<T>({1}, {total}, {a.node()}, backward_fn, "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// --- pooling ----------------------------------------------------------------------

template <typename T>
Tensor<T> global_pool(PoolKind kind, const Tensor<T>& t) {
    require_defined(t, "global_pool");
    const Shape& s = t.shape();
    if (s.size() != 4) dim_error("global_pool", "expected [n,c,h,w], got " + shape_str(s));
    const std::size_t planes = s[0] * s[1];
    const std::size_t pixels = s[2] * s[3];
    const auto in = t.data();
    std::vector<T> out(planes);
    std::vector<std::size_t> argmax;
    if (kind == PoolKind::avg) {
        for (std::size_t p = 0; p < planes; ++p) {
            T acc = T(0);
            for (std::size_t i = 0; i < pixels; ++i) acc += in[p * pixels + i];
            out[p] = acc / static_cast<T>(pixels);
        }
        auto backward_fn = [pixels](NodeT<T>& self) {
            auto& gx = self.parents[0]->grad_buffer();
            const T inv = T(1) / static_cast<T>(pixels);
            for (std::size_t p = 0; p < self.data.size(); ++p) {
                const T g = self.grad[p] * inv;
                for (std::size_t i = 0; i < pixels; ++i) gx[p * pixels + i] += g;
            }
        };
        return detail::make_result<T>({s[0], s[1]}, std::move(out), {t.node()}, backward_fn, "global_avg_pool");
    }
    argmax.resize(planes);
    for (std::size_t p = 0; p < planes; ++p) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < pixels; ++i) {
            if (in[p * pixels + i] > in[p * pixels + best]) best = i;
        }
        argmax[p] = best;
        out[p] = in[p * pixels + best];
    }
    auto backward_fn = [pixels, argmax = std::move(argmax)](NodeT<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        for (std::size_t p = 0; p < argmax.size(); ++p) gx[p * pixels + argmax[p]] += self.grad[p];
    };
    return detail::make_result<T>({s[0], s[1]}, std::move(out), {t.node()}, backward_fn, "global_max_pool");
}

template <typename T>
Tensor<T> channel_pool(PoolKind kind, const Tensor<T>& t) {
    require_defined(t, "channel_pool");
    const Shape& s = t.shape();
    if (s.size() != 4) dim_error("channel_pool", "expected [n,c,h,w], got " + shape_str(s));
    const std::size_t batch = s[0], channels = s[1], pixels = s[2] * s[3];
    const auto in = t.data();
    std::vector<T> out(batch * pixels);
    if (kind == PoolKind::avg) {
        for (std::size_t n = 0; n < batch; ++n) {
            T* o = out.data() + n * pixels;
            for (std::size_t c = 0; c < channels; ++c) {
                const T* src = in.data() + (n * channels + c) * pixels;
                for (std::size_t i = 0; i < pixels; ++i) o[i] += src[i];
            }
            for (std::size_t i = 0; i < pixels; ++i) o[i] /= static_cast<T>(channels);
        }
        auto backward_fn = [batch, channels, pixels](NodeT<T>& self) {
            auto& gx = self.parents[0]->grad_buffer();
            const T inv = T(1) / static_cast<T>(channels);
            for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t c = 0; c < channels; ++c) {
                    T* dst = gx.data() + (n * channels + c) * pixels;
                    const T* g = self.grad.data() + n * pixels;
                    for (std::size_t i = 0; i < pixels; ++i) dst[i] += g[i] * inv;
                }
            }
        };
        return detail::make_result<T>({batch, 1, s[2], s[3]}, std::move(out), {t.node()}, backward_fn,
                                      "channel_avg_pool");
    }
    std::vector<std::size_t> argmax(batch * pixels, 0);
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t i = 0; i < pixels; ++i) {
            std::size_t best = 0;
            T best_v = in[(n * channels) * pixels + i];
            for (std::size_t c = 1; c < channels; ++c) {
                const T v = in[(n * channels + c) * pixels + i];
                if (v > best_v) best_v = v, best = c;
            }
            argmax[n * pixels + i] = best;
            out[n * pixels + i] = best_v;
        }
    }
    auto backward_fn = [channels, pixels, argmax = std::move(argmax)](NodeT<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        for (std::size_t k = 0; k < argmax.size(); ++k) {
            const std::size_t n = k / pixels, i = k % pixels;
            gx[(n * channels + argmax[k]) * pixels + i] += self.grad[k];
        }
    };
    return detail::make_result<T>({batch, 1, s[2], s[3]}, std::move(out), {t.node()}, backward_fn,
                                  "channel_max_pool");
}

// --- layout -----------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
    if (parts.empty()) throw UsageError("concat_channels: no parts");
    for (const auto& p : parts) require_defined(p, "concat_channels");
    const Shape& first = parts[0].shape();
    if (first.size() < 2) dim_error("concat_channels", "parts need at least 2 axes");
    const std::size_t outer = first[0];
    std::size_t inner = 1;
    for (std::size_t i = 2; i < first.size(); ++i) inner *= first[i];
    std::size_t total_c = 0;
    std::vector<std::size_t> widths;
    std::vector<NodePtrT<T>> parents;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size() && s[0] == outer;
        for (std::size_t i = 2; ok && i < s.size(); ++i) ok = s[i] == first[i];
        if (!ok) dim_error("concat_channels", "extent mismatch " + shape_str(s) + " vs " + shape_str(first));
        widths.push_back(s[1]);
        total_c += s[1];
        parents.push_back(p.node());
    }
    std::vector<T> out(outer * total_c * inner);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto src = parts[k].data();
        const std::size_t block = widths[k] * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src.data() + o * block, block, out.data() + (o * total_c + offset) * inner);
        }
        offset += widths[k];
    }
    Shape out_shape = first;
    out_shape[1] = total_c;
    auto backward_fn = [outer, inner, total_c, widths](NodeT<T>& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            auto& p = self.parents[k];
            const std::size_t block = widths[k] * inner;
            if (wants_grad<T>(p)) {
                auto& g = p->grad_buffer();
                for (std::size_t o = 0; o < outer; ++o) {
                    const T* src = self.grad.data() + (o * total_c + offset) * inner;
                    T* dst = g.data() + o * block;
                    for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                }
            }
            offset += widths[k];
        }
    };
    return detail::make_result<T>(std::move(out_shape), std::move(out), std::move(parents), backward_fn,
                                  "concat_channels");
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, std::size_t begin, std::size_t count) {
    require_defined(t, "slice_channels");
    const Shape& s = t.shape();
    if (s.size() < 2) dim_error("slice_channels", "need at least 2 axes");
    if (count == 0 || begin + count > s[1]) {
        dim_error("slice_channels", "range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                                        ") outside " + shape_str(s));
    }
    std::size_t inner = 1;
    for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
    const std::size_t outer = s[0], width = s[1];
    const auto in = t.data();
    std::vector<T> out(outer * count * inner);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(in.data() + (o * width + begin) * inner, count * inner, out.data() + o * count * inner);
    }
    Shape out_shape = s;
    out_shape[1] = count;
    auto backward_fn = [outer, inner, width, begin, count](NodeT<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
            const T* src = self.grad.data() + o * count * inner;
            T* dst = g.data() + (o * width + begin) * inner;
            for (std::size_t i = 0; i < count * inner; ++i) dst[i] += src[i];
        }
    };
    return detail::make_result<T>(std::move(out_shape), std::move(out), {t.node()}, backward_fn,
                                  "slice_channels");
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& t, const Shape& shape) {
    require_defined(t, "reshape");
    for (std::size_t e : shape) {
        if (e == 0) dim_error("reshape", "zero extent in " + shape_str(shape));
    }
    if (shape_numel(shape) != t.numel()) {
        dim_error("reshape", "element count mismatch " + shape_str(t.shape()) + " -> " + shape_str(shape));
    }
    const auto in = t.data();
    std::vector<T> out(in.begin(), in.end());
    auto backward_fn = [](NodeT<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
    return detail::make_result<T>(shape, std::move(out), {t.node()}, backward_fn, "reshape");
}

namespace {

// For each output flat index, the input flat index it reads.
std::vector<std::size_t> permute_gather(const Shape& in_shape, const std::vector<std::size_t>& axes,
                                        Shape& out_shape) {
    const std::size_t rank = in_shape.size();
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
    out_shape.resize(rank);
    std::vector<std::size_t> strides(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = in_shape[axes[i]];
        strides[i] = in_strides[axes[i]];
    }
    const std::size_t total = shape_numel(in_shape);
    std::vector<std::size_t> gather(total);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t src = 0;
    for (std::size_t flat = 0; flat < total; ++flat) {
        gather[flat] = src;
        for (std::size_t ax = rank; ax-- > 0;) {
            ++counter[ax];
            src += strides[ax];
            if (counter[ax] < out_shape[ax]) break;
            src -= strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    return gather;
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& t, const std::vector<std::size_t>& axes) {
    require_defined(t, "permute");
    const Shape& s = t.shape();
    std::vector<std::size_t> check(axes);
    std::sort(check.begin(), check.end());
    bool valid = check.size() == s.size();
    for (std::size_t i = 0; valid && i < check.size(); ++i) valid = check[i] == i;
    if (!valid) dim_error("permute", "axes are not a permutation of rank " + std::to_string(s.size()));

    Shape out_shape;
    auto gather = permute_gather(s, axes, out_shape);
    const auto in = t.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[gather[i]];
    auto backward_fn = [gather = std::move(gather)](NodeT<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < gather.size(); ++i) g[gather[i]] += self.grad[i];
    };
    return detail::make_result<T>(std::move(out_shape), std::move(out), {t.node()}, backward_fn, "permute");
}

template <typename T>
Tensor<T> repeat_batch(const Tensor<T>& t, std::size_t n) {
    require_defined(t, "repeat_batch");
    const Shape& s = t.shape();
    if (s.empty() || s[0] != 1) dim_error("repeat_batch", "leading extent must be 1, got " + shape_str(s));
    if (n == 0) dim_error("repeat_batch", "repeat count must be positive");
    const auto in = t.data();
    std::vector<T> out;
    out.reserve(in.size() * n);
    for (std::size_t k = 0; k < n; ++k) out.insert(out.end(), in.begin(), in.end());
    Shape out_shape = s;
    out_shape[0] = n;
    auto backward_fn = [n](NodeT<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const std::size_t block = g.size();
        for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t i = 0; i < block; ++i) g[i] += self.grad[k * block + i];
        }
    };
    return detail::make_result<T>(std::move(out_shape), std::move(out), {t.node()}, backward_fn,
                                  "repeat_batch");
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    require_defined(x, "linear");
    require_defined(weight, "linear");
    require_defined(bias, "linear");
    const Shape& sx = x.shape();
    const Shape& sw = weight.shape();
    if (sx.size() != 2 || sw.size() != 2 || sw[1] != sx[1]) {
        dim_error("linear", "input " + shape_str(sx) + " incompatible with weight " + shape_str(sw));
    }
    if (bias.shape() != Shape{sw[0]}) dim_error("linear", "bias must be [out], got " + shape_str(bias.shape()));
    const std::size_t rows = sx[0], in_w = sx[1], out_w = sw[0];
    std::vector<T> wt(in_w * out_w);
    kernels::transpose(out_w, in_w, weight.data().data(), wt.data());
    std::vector<T> out(rows * out_w);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(bias.data().data(), out_w, out.data() + r * out_w);
    kernels::gemm_nn(rows, out_w, in_w, x.data().data(), wt.data(), out.data());

    auto backward_fn = [rows, in_w, out_w](NodeT<T>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        const T* dy = self.grad.data();
        if (wants_grad<T>(px)) {
            kernels::gemm_nn(rows, in_w, out_w, dy, pw->data.data(), px->grad_buffer().data());
        }
        if (wants_grad<T>(pw)) {
            kernels::gemm_tn(out_w, in_w, rows, dy, px->data.data(), pw->grad_buffer().data());
        }
        if (wants_grad<T>(pb)) {
            auto& gb = pb->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t o = 0; o < out_w; ++o) gb[o] += dy[r * out_w + o];
            }
        }
    };
    return detail::make_result<T>({rows, out_w}, std::move(out), {x.node(), weight.node(), bias.node()},
                                  backward_fn, "linear");
}

#define DHR_INSTANTIATE_OPS(T)                                                                      \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                           \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dOptions); \
    template Tensor<T> elementwise<T>(ElementwiseKind, const Tensor<T>&, const Tensor<T>&);         \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                               \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                    \
    template Tensor<T> mean<T>(const Tensor<T>&);                                                   \
    template Tensor<T> global_pool<T>(PoolKind, const Tensor<T>&);                                  \
    template Tensor<T> channel_pool<T>(PoolKind, const Tensor<T>&);                                 \
    template Tensor<T> concat_channels<T>(std::span<const Tensor<T>>);                              \
    template Tensor<T> slice_channels<T>(const Tensor<T>&, std::size_t, std::size_t);               \
    template Tensor<T> reshape<T>(const Tensor<T>&, const Shape&);                                  \
    template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);               \
    template Tensor<T> repeat_batch<T>(const Tensor<T>&, std::size_t);                              \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

DHR_INSTANTIATE_OPS(float)
DHR_INSTANTIATE_OPS(double)

#undef DHR_INSTANTIATE_OPS

}  // namespace dhr
