#include "pipeline/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dhr::pipeline {

using relnet::init_bias;
using relnet::init_weight;

void ModelDims::validate() const {
    if (c == 0 || d == 0 || joints == 0 || hidden == 0) throw ConfigError("model dims must be positive");
    if (d % 2) throw ConfigError("instance dim d must be even, got " + std::to_string(d));
    if (height == 0 || width == 0 || height % kStride || width % kStride) {
        throw ConfigError("image size " + std::to_string(height) + "x" + std::to_string(width) +
                          " is not divisible by the encoder stride " + std::to_string(kStride));
    }
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ModelParams<T>::named() const {
    std::vector<std::pair<std::string, Tensor<T>>> out{
        {"encoder.conv1.weight", enc1_weight},   {"encoder.conv1.bias", enc1_bias},
        {"encoder.conv2.weight", enc2_weight},   {"encoder.conv2.bias", enc2_bias},
        {"encoder.conv3.weight", enc3_weight},   {"encoder.conv3.bias", enc3_bias},
        {"center.conv1.weight", center1_weight}, {"center.conv1.bias", center1_bias},
        {"center.conv2.weight", center2_weight}, {"center.conv2.bias", center2_bias},
        {"instance.proj.weight", inst_weight},   {"instance.proj.bias", inst_bias},
        {"joint.conv1.feat_weight", joint1_feat_weight},
        {"joint.conv1.inst_weight", joint1_inst_weight},
        {"joint.conv1.bias", joint1_bias},
        {"joint.conv2.weight", joint2_weight},   {"joint.conv2.bias", joint2_bias},
    };
    const auto add_cjm = [&out](const std::string& prefix, const relnet::CjmParams<T>& p) {
        out.emplace_back(prefix + ".q.weight", p.q_weight);
        out.emplace_back(prefix + ".q.bias", p.q_bias);
        out.emplace_back(prefix + ".k.weight", p.k_weight);
        out.emplace_back(prefix + ".k.bias", p.k_bias);
        out.emplace_back(prefix + ".v.weight", p.v_weight);
        out.emplace_back(prefix + ".v.bias", p.v_bias);
    };
    const auto add_adfm = [&out](const std::string& prefix, const relnet::AdfmParams<T>& p) {
        out.emplace_back(prefix + ".fc1.weight", p.fc1_weight);
        out.emplace_back(prefix + ".fc1.bias", p.fc1_bias);
        out.emplace_back(prefix + ".fc2.weight", p.fc2_weight);
        out.emplace_back(prefix + ".fc2.bias", p.fc2_bias);
        out.emplace_back(prefix + ".fuse.weight", p.fuse_weight);
        out.emplace_back(prefix + ".fuse.bias", p.fuse_bias);
    };
    add_adfm("dim.ijr.adfm", relation.ijr_adfm);
    add_cjm("dim.ijr.cjm", relation.ijr_cjm);
    add_cjm("dim.jir.cjm", relation.jir_cjm);
    add_adfm("dim.jir.adfm", relation.jir_adfm);
    const auto& dec = relation.decoder;
    out.emplace_back("decoder.channel.fc1.weight", dec.fc1_weight);
    out.emplace_back("decoder.channel.fc1.bias", dec.fc1_bias);
    out.emplace_back("decoder.channel.fc2.weight", dec.fc2_weight);
    out.emplace_back("decoder.channel.fc2.bias", dec.fc2_bias);
    out.emplace_back("decoder.spatial.weight", dec.spatial_weight);
    out.emplace_back("decoder.spatial.bias", dec.spatial_bias);
    out.emplace_back("decoder.head1.weight", dec.head1_weight);
    out.emplace_back("decoder.head1.bias", dec.head1_bias);
    out.emplace_back("decoder.head2.weight", dec.head2_weight);
    out.emplace_back("decoder.head2.bias", dec.head2_bias);
    return out;
}

template <typename T>
std::vector<Tensor<T>> ModelParams<T>::all() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
}

template <typename T>
ModelParams<T> init_params(const ModelDims& dims, std::uint64_t seed) {
    dims.validate();
    Rng rng(seed);
    const std::size_t c = dims.c, d = dims.d, k = dims.joints, hid = dims.hidden;
    ModelParams<T> p;
    p.enc1_weight = init_weight<T>({c, 3, 3, 3}, 3 * 9, rng);
    p.enc1_bias = init_bias<T>(c);
    p.enc2_weight = init_weight<T>({c, c, 3, 3}, c * 9, rng);
    p.enc2_bias = init_bias<T>(c);
    p.enc3_weight = init_weight<T>({c, c, 3, 3}, c * 9, rng);
    p.enc3_bias = init_bias<T>(c);
    p.center1_weight = init_weight<T>({hid, c, 3, 3}, c * 9, rng);
    p.center1_bias = init_bias<T>(hid);
    p.center2_weight = init_weight<T>({1, hid, 1, 1}, hid, rng);
    p.center2_bias = init_bias<T>(1);
    p.inst_weight = init_weight<T>({d, c, 1, 1}, c, rng);
    p.inst_bias = init_bias<T>(d);
    const std::size_t jk = kJointKernel;
    const std::size_t fan = (c + d) * jk * jk;
    p.joint1_feat_weight = init_weight<T>({hid, c, jk, jk}, fan, rng);
    p.joint1_inst_weight = init_weight<T>({hid, d, jk, jk}, fan, rng);
    p.joint1_bias = init_bias<T>(hid);
    p.joint2_weight = init_weight<T>({k, hid, 1, 1}, hid, rng);
    p.joint2_bias = init_bias<T>(k);
    p.relation = relnet::make_relation_params<T>(d, k, hid, rng);
    return p;
}

template <typename T>
Tensor<T> encode(const Tensor<T>& image, const ModelParams<T>& params) {
    Tensor<T> x = image;
    if (x.ndim() == 3) x = reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
    if (x.ndim() != 4 || x.dim(1) != 3) throw DimensionError("encode: expected a [3,H,W] image, got " + shape_str(image.shape()));
    if (x.dim(2) % kStride || x.dim(3) % kStride) {
        throw ConfigError("encode: image size " + shape_str(image.shape()) + " is not divisible by " +
                          std::to_string(kStride));
    }
    x = relu(conv2d(x, params.enc1_weight, params.enc1_bias, {.padding = 1, .stride = 2}));
    x = relu(conv2d(x, params.enc2_weight, params.enc2_bias, {.padding = 1, .stride = 2}));
    return relu(conv2d(x, params.enc3_weight, params.enc3_bias, {.padding = 1}));
}

template <typename T>
Tensor<T> center_head(const Tensor<T>& features, const ModelParams<T>& params) {
    const Tensor<T> h = relu(conv2d(features, params.center1_weight, params.center1_bias, {.padding = 1}));
    return sigmoid(conv2d(h, params.center2_weight, params.center2_bias));
}

template <typename T>
std::vector<Point> detect_centers(const Tensor<T>& center_map, double threshold, std::size_t max_count) {
    const Shape& s = center_map.shape();
    if (s.size() != 4 || s[0] != 1 || s[1] != 1) throw DimensionError("detect_centers: expected [1,1,h,w]");
    const std::size_t h = s[2], w = s[3];
    const auto v = center_map.data();
    std::vector<std::pair<T, std::size_t>> peaks;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t idx = y * w + x;
            if (v[idx] < threshold) continue;
            bool peak = true;
            for (int dy = -1; dy <= 1 && peak; ++dy) {
                for (int dx = -1; dx <= 1 && peak; ++dx) {
                    if (!dy && !dx) continue;
                    const auto ny = static_cast<std::ptrdiff_t>(y) + dy, nx = static_cast<std::ptrdiff_t>(x) + dx;
                    if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(h) || nx >= static_cast<std::ptrdiff_t>(w)) continue;
                    const std::size_t nidx = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
                    // Plateaus keep only their first row-major pixel.
                    if (v[nidx] > v[idx] || (v[nidx] == v[idx] && nidx < idx)) peak = false;
                }
            }
            if (peak) peaks.emplace_back(v[idx], idx);
        }
    }
    std::sort(peaks.begin(), peaks.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    if (peaks.size() > max_count) peaks.resize(max_count);
    std::vector<Point> out;
    for (const auto& [value, idx] : peaks) out.push_back({double(idx % w), double(idx / w)});
    return out;
}

template <typename T>
Tensor<T> instance_masks(std::span<const Point> centers, std::size_t height, std::size_t width, double sigma) {
    if (centers.empty()) return {};
    const std::size_t plane = height * width;
    std::vector<float> buf(centers.size() * plane, 0.0f);
    for (std::size_t n = 0; n < centers.size(); ++n) {
        synth::splat_gaussian_max(std::span<float>(buf.data() + n * plane, plane), height, width, centers[n], sigma);
    }
    return Tensor<T>::from({centers.size(), 1, height, width}, std::vector<T>(buf.begin(), buf.end()));
}

template <typename T>
InstanceDecoding<T> decode_instances(const Tensor<T>& features, const ModelParams<T>& params,
                                     std::optional<std::span<const Point>> gt_centers, double peak_threshold,
                                     std::size_t max_instances) {
    InstanceDecoding<T> out;
    out.center_map = center_head(features, params);
    if (gt_centers) {
        out.centers.assign(gt_centers->begin(), gt_centers->end());
    } else {
        out.centers = detect_centers(out.center_map, peak_threshold, max_instances);
    }
    if (out.centers.empty()) return out;
    const std::size_t n = out.centers.size();
    out.masks = instance_masks<T>(out.centers, features.dim(2), features.dim(3));
    out.f_inst = conv2d(mul(repeat_batch(features, n), out.masks), params.inst_weight, params.inst_bias);
    return out;
}

template <typename T>
Tensor<T> decode_joints(const Tensor<T>& features, const Tensor<T>& f_inst, const ModelParams<T>& params) {
    if (!f_inst.defined()) return {};
    const Conv2dOptions opts{.padding = params.joint1_feat_weight.dim(3) / 2};
    const Tensor<T> no_bias = Tensor<T>::zeros({params.joint1_inst_weight.dim(0)});
    const Tensor<T> shared = conv2d(features, params.joint1_feat_weight, params.joint1_bias, opts);
    const Tensor<T> h = relu(add(repeat_batch(shared, f_inst.dim(0)), conv2d(f_inst, params.joint1_inst_weight, no_bias, opts)));
    return conv2d(h, params.joint2_weight, params.joint2_bias);
}

template <typename T>
Tensor<T> positional_embedding(std::span<const Point> centers, std::size_t height, std::size_t width,
                               std::size_t dim) {
    if (dim == 0 || dim % 2) throw ConfigError("positional embedding width must be even, got " + std::to_string(dim));
    if (centers.empty()) return {};
    const std::size_t pairs = dim / 2;
    const std::size_t x_pairs = (pairs + 1) / 2;
    std::vector<T> out;
    out.reserve(centers.size() * dim);
    for (const Point& c : centers) {
        const double u = c.x / static_cast<double>(width);
        const double v = c.y / static_cast<double>(height);
        for (std::size_t i = 0; i < pairs; ++i) {
            const bool is_x = i < x_pairs;
            const std::size_t octave = is_x ? i : i - x_pairs;
            const double phase = std::numbers::pi * std::ldexp(1.0, static_cast<int>(octave)) * (is_x ? u : v);
            out.push_back(static_cast<T>(std::sin(phase)));
            out.push_back(static_cast<T>(std::cos(phase)));
        }
    }
    return Tensor<T>::from({centers.size(), dim}, std::move(out));
}

template <typename T>
Tensor<T> positional_embedding(const Tensor<T>& center_maps, std::size_t dim) {
    const Shape& s = center_maps.shape();
    std::size_t h, w;
    if (s.size() == 3) {
        h = s[1], w = s[2];
    } else if (s.size() == 4 && s[1] == 1) {
        h = s[2], w = s[3];
    } else {
        throw DimensionError("positional_embedding: expected [N,h,w] maps, got " + shape_str(s));
    }
    const auto v = center_maps.data();
    std::vector<Point> centers;
    for (std::size_t n = 0; n < s[0]; ++n) {
        const auto begin = v.begin() + static_cast<std::ptrdiff_t>(n * h * w);
        const auto idx = static_cast<std::size_t>(std::max_element(begin, begin + static_cast<std::ptrdiff_t>(h * w)) - begin);
        centers.push_back({double(idx % w), double(idx / w)});
    }
    return positional_embedding<T>(centers, h, w, dim);
}

template <typename T>
Tensor<T> focal_center_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
    if (pred.shape() != gt.shape()) {
        throw DimensionError("focal_center_loss: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
    }
    const auto p = pred.data();
    const auto g = gt.data();
    const T lo = static_cast<T>(kFocalClamp), hi = T(1) - static_cast<T>(kFocalClamp);
    std::size_t positives = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(p[i] >= T(0) && p[i] <= T(1))) throw NumericError("focal_center_loss: prediction outside [0,1]");
        if (g[i] >= hi) ++positives;
    }
    const T norm = T(1) / static_cast<T>(std::max<std::size_t>(positives, 1));
    T acc = T(0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const T q = std::clamp(p[i], lo, hi);
        if (g[i] >= hi) {
            acc += (T(1) - q) * (T(1) - q) * std::log(q);
        } else {
            const T w = std::pow(T(1) - g[i], T(4));
            acc += w * q * q * std::log(T(1) - q);
        }
    }
    auto backward_fn = [norm, lo, hi](detail::Node<T>& self) {
        auto& pp = self.parents[0];
        const auto& gv = self.parents[1]->data;
        auto& grad = pp->grad_buffer();
        const T up = self.grad[0];
        for (std::size_t i = 0; i < grad.size(); ++i) {
            const T raw = pp->data[i];
            if (raw < lo || raw > hi) continue;
            T dterm;
            if (gv[i] >= hi) {
                dterm = T(-2) * (T(1) - raw) * std::log(raw) + (T(1) - raw) * (T(1) - raw) / raw;
            } else {
                const T w = std::pow(T(1) - gv[i], T(4));
                dterm = w * (T(2) * raw * std::log(T(1) - raw) - raw * raw / (T(1) - raw));
            }
            grad[i] += -norm * dterm * up;
        }
    };
    return detail::make_result<T>({1}, {-norm * acc}, {pred.node(), gt.node()}, backward_fn, "focal_center_loss");
}

template <typename T>
Tensor<T> heatmap_mse_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
    if (!pred.defined()) return Tensor<T>::scalar(T(0));
    if (pred.shape() != gt.shape()) {
        throw DimensionError("heatmap_mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
    }
    const Tensor<T> diff = sub(pred, gt);
    return mean(mul(diff, diff));
}

template <typename T>
LossReport<T> total_loss(const Tensor<T>& l_inst, const Tensor<T>& l_joint, double alpha) {
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive, got " + std::to_string(alpha));
    LossReport<T> r;
    r.alpha = alpha;
    r.total_tensor = add(l_inst, scale(l_joint, static_cast<T>(alpha)));
    r.l_inst = static_cast<double>(l_inst.item());
    r.l_joint = static_cast<double>(l_joint.item());
    r.total = static_cast<double>(r.total_tensor.item());
    return r;
}

template <typename T>
TrainingTargets<T> to_training_targets(const synth::Targets& targets) {
    TrainingTargets<T> out;
    out.centers = targets.centers;
    out.center_map = Tensor<T>::from({1, 1, targets.height, targets.width},
                                     std::vector<T>(targets.center_map.begin(), targets.center_map.end()));
    if (targets.instances > 0) {
        out.heatmaps = Tensor<T>::from({targets.instances, targets.joints, targets.height, targets.width},
                                       std::vector<T>(targets.heatmaps.begin(), targets.heatmaps.end()));
    }
    return out;
}

template <typename T>
Tensor<T> image_tensor(const synth::Image& image) {
    return Tensor<T>::from({image.channels, image.height, image.width},
                           std::vector<T>(image.pixels.begin(), image.pixels.end()));
}

template <typename T>
ForwardResult<T> forward_full(const Tensor<T>& image, const TrainingTargets<T>* targets, const ModelParams<T>& params,
                              const relnet::BranchConfig& config, double alpha, const InferenceOptions& inference) {
    config.validate();
    ForwardResult<T> out;
    const Tensor<T> features = encode(image, params);
    std::optional<std::span<const Point>> gt_centers;
    if (targets) gt_centers = std::span<const Point>(targets->centers);
    InstanceDecoding<T> inst =
        decode_instances(features, params, gt_centers, inference.peak_threshold, inference.max_instances);
    out.center_map = inst.center_map;
    out.centers = inst.centers;

    if (!out.centers.empty()) {
        const Tensor<T> f_joint = decode_joints(features, inst.f_inst, params);
        const std::size_t d = inst.f_inst.dim(1);
        const Tensor<T> f_pos = positional_embedding<T>(out.centers, features.dim(2), features.dim(3), d);
        relnet::DimOutput<T> dim = relnet::dim_forward(inst.f_inst, f_joint, f_pos, config, params.relation);
        out.heatmaps = relnet::pose_decode(dim.ij, dim.ji, params.relation.decoder, config.adfm_in_decoder);
        out.attention = std::move(dim.attention);
    }

    if (targets) {
        const Tensor<T> l_inst = focal_center_loss(out.center_map, targets->center_map);
        const Tensor<T> l_joint = heatmap_mse_loss(out.heatmaps, targets->heatmaps);
        out.loss = total_loss(l_inst, l_joint, alpha);
    }
    return out;
}

template <typename T>
std::vector<std::vector<Point>> decode_pose(const Tensor<T>& heatmaps, std::size_t stride) {
    std::vector<std::vector<Point>> out;
    if (!heatmaps.defined()) return out;
    const Shape& s = heatmaps.shape();
    if (s.size() != 4) throw DimensionError("decode_pose: expected [N,K,h,w], got " + shape_str(s));
    const std::size_t plane = s[2] * s[3];
    const auto v = heatmaps.data();
    const double scale = static_cast<double>(stride);
    for (std::size_t n = 0; n < s[0]; ++n) {
        std::vector<Point> joints;
        for (std::size_t k = 0; k < s[1]; ++k) {
            const auto begin = v.begin() + static_cast<std::ptrdiff_t>((n * s[1] + k) * plane);
            const auto idx = static_cast<std::size_t>(std::max_element(begin, begin + static_cast<std::ptrdiff_t>(plane)) - begin);
            joints.push_back({scale * double(idx % s[3]), scale * double(idx / s[3])});
        }
        out.push_back(std::move(joints));
    }
    return out;
}

#define DHR_INSTANTIATE_PIPELINE(T)                                                                              \
    template struct ModelParams<T>;                                                                              \
    template ModelParams<T> init_params<T>(const ModelDims&, std::uint64_t);                                     \
    template Tensor<T> encode<T>(const Tensor<T>&, const ModelParams<T>&);                                       \
    template Tensor<T> center_head<T>(const Tensor<T>&, const ModelParams<T>&);                                  \
    template std::vector<Point> detect_centers<T>(const Tensor<T>&, double, std::size_t);                        \
    template Tensor<T> instance_masks<T>(std::span<const Point>, std::size_t, std::size_t, double);              \
    template InstanceDecoding<T> decode_instances<T>(const Tensor<T>&, const ModelParams<T>&,                    \
                                                     std::optional<std::span<const Point>>, double, std::size_t); \
    template Tensor<T> decode_joints<T>(const Tensor<T>&, const Tensor<T>&, const ModelParams<T>&);              \
    template Tensor<T> positional_embedding<T>(std::span<const Point>, std::size_t, std::size_t, std::size_t);   \
    template Tensor<T> positional_embedding<T>(const Tensor<T>&, std::size_t);                                   \
    template Tensor<T> focal_center_loss<T>(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> heatmap_mse_loss<T>(const Tensor<T>&, const Tensor<T>&);                                  \
    template LossReport<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, double);                            \
    template TrainingTargets<T> to_training_targets<T>(const synth::Targets&);                                   \
    template Tensor<T> image_tensor<T>(const synth::Image&);                                                     \
    template ForwardResult<T> forward_full<T>(const Tensor<T>&, const TrainingTargets<T>*, const ModelParams<T>&, \
                                              const relnet::BranchConfig&, double, const InferenceOptions&);     \
    template std::vector<std::vector<Point>> decode_pose<T>(const Tensor<T>&, std::size_t);

DHR_INSTANTIATE_PIPELINE(float)
DHR_INSTANTIATE_PIPELINE(double)

#undef DHR_INSTANTIATE_PIPELINE

}  // namespace dhr::pipeline
