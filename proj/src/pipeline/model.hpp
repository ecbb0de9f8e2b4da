#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "relnet/relnet.hpp"
#include "synth/synth.hpp"

// Toy end-to-end model around the relation core: a stride-4 conv encoder, a
// center-map head, mask-pooled instance features, a shared joint head, the
// dual-path relation module and the pose decoder.
namespace dhr::pipeline {

using synth::Point;

inline constexpr std::size_t kStride = 4;
inline constexpr double kMaskSigma = 2.0;    // feature pixels
inline constexpr double kTargetSigma = 1.5;  // feature pixels
inline constexpr double kFocalClamp = 1e-6;
inline constexpr std::size_t kJointKernel = 5;

struct ModelDims {
    std::size_t c = 16;      // visual feature channels
    std::size_t d = 8;       // instance feature channels
    std::size_t joints = 5;  // K
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t hidden = 128;  // width of the heads' hidden layers

    std::size_t feature_height() const { return height / kStride; }
    std::size_t feature_width() const { return width / kStride; }
    // Throws ConfigError.
    void validate() const;
    bool operator==(const ModelDims&) const = default;
};

template <typename T>
struct ModelParams {
    Tensor<T> enc1_weight, enc1_bias;  // 3 -> c, stride 2
    Tensor<T> enc2_weight, enc2_bias;  // c -> c, stride 2
    Tensor<T> enc3_weight, enc3_bias;  // c -> c
    Tensor<T> center1_weight, center1_bias;
    Tensor<T> center2_weight, center2_bias;
    Tensor<T> inst_weight, inst_bias;  // 1x1, c -> d
    // First joint conv over concat(F, F_inst), stored as its F and F_inst
    // input slices so the F part runs once per image.
    Tensor<T> joint1_feat_weight, joint1_inst_weight, joint1_bias;
    Tensor<T> joint2_weight, joint2_bias;
    relnet::RelationParams<T> relation;

    // Stable, unique names in registration order. Entries share storage with
    // the fields above.
    std::vector<std::pair<std::string, Tensor<T>>> named() const;
    std::vector<Tensor<T>> all() const;
};

// Seeded initialization; biases start at zero.
template <typename T>
ModelParams<T> init_params(const ModelDims& dims, std::uint64_t seed);

// [3,H,W] (or [1,3,H,W]) -> [1,c,H/4,W/4].
template <typename T>
Tensor<T> encode(const Tensor<T>& image, const ModelParams<T>& params);

// [1,c,h,w] -> [1,1,h,w] in (0,1).
template <typename T>
Tensor<T> center_head(const Tensor<T>& features, const ModelParams<T>& params);

// Local maxima of a [1,1,h,w] center map at or above threshold, strongest
// first (ties by row-major index), at most max_count. Feature coordinates.
template <typename T>
std::vector<Point> detect_centers(const Tensor<T>& center_map, double threshold, std::size_t max_count);

// Unit-peak Gaussian masks [N,1,h,w] around feature-space centers.
template <typename T>
Tensor<T> instance_masks(std::span<const Point> centers, std::size_t height, std::size_t width,
                         double sigma = kMaskSigma);

template <typename T>
struct InstanceDecoding {
    Tensor<T> center_map;  // predicted, [1,1,h,w]
    std::vector<Point> centers;
    Tensor<T> masks;   // [N,1,h,w]; undefined when N = 0
    Tensor<T> f_inst;  // [N,d,h,w]; undefined when N = 0
};

// Training passes ground-truth centers; inference passes std::nullopt and
// uses detected peaks.
template <typename T>
InstanceDecoding<T> decode_instances(const Tensor<T>& features, const ModelParams<T>& params,
                                     std::optional<std::span<const Point>> gt_centers,
                                     double peak_threshold = 0.3, std::size_t max_instances = synth::kMaxPersons);

// [N,K,h,w]; undefined when f_inst is undefined (N = 0).
template <typename T>
Tensor<T> decode_joints(const Tensor<T>& features, const Tensor<T>& f_inst, const ModelParams<T>& params);

// Interleaved sin/cos of the normalized center coordinate at geometric
// frequencies pi * 2^i; the first half of the pairs encodes x, the rest y.
template <typename T>
Tensor<T> positional_embedding(std::span<const Point> centers, std::size_t height, std::size_t width,
                               std::size_t dim);

// Same, taking the argmax (first in row-major order) of each [h,w] map in a
// [N,h,w] or [N,1,h,w] stack.
template <typename T>
Tensor<T> positional_embedding(const Tensor<T>& center_maps, std::size_t dim);

// Penalty-reduced focal loss, exponents 2 and 4, normalized by the number of
// positive (== 1) pixels.
template <typename T>
Tensor<T> focal_center_loss(const Tensor<T>& pred, const Tensor<T>& gt);

// Mean squared error; an undefined prediction (N = 0) yields 0.
template <typename T>
Tensor<T> heatmap_mse_loss(const Tensor<T>& pred, const Tensor<T>& gt);

template <typename T>
struct LossReport {
    double l_inst = 0.0;
    double l_joint = 0.0;
    double total = 0.0;
    double alpha = 1.0;
    Tensor<T> total_tensor;  // differentiable total
};

template <typename T>
LossReport<T> total_loss(const Tensor<T>& l_inst, const Tensor<T>& l_joint, double alpha);

template <typename T>
struct TrainingTargets {
    std::vector<Point> centers;  // feature coordinates
    Tensor<T> center_map;        // [1,1,h,w]
    Tensor<T> heatmaps;          // [N,K,h,w]; undefined when N = 0
};

template <typename T>
TrainingTargets<T> to_training_targets(const synth::Targets& targets);

template <typename T>
Tensor<T> image_tensor(const synth::Image& image);

struct InferenceOptions {
    double peak_threshold = 0.3;
    std::size_t max_instances = synth::kMaxPersons;
};

template <typename T>
struct ForwardResult {
    Tensor<T> heatmaps;    // [N,K,h,w]; undefined when N = 0
    Tensor<T> center_map;  // [1,1,h,w]
    std::vector<Point> centers;
    relnet::AttentionBundle<T> attention;
    std::optional<LossReport<T>> loss;
};

// Training mode when targets is non-null (teacher-forced centers, losses
// computed); inference otherwise.
template <typename T>
ForwardResult<T> forward_full(const Tensor<T>& image, const TrainingTargets<T>* targets, const ModelParams<T>& params,
                              const relnet::BranchConfig& config, double alpha = 1.0,
                              const InferenceOptions& inference = {});

// Argmax per (instance, joint), ties to the first row-major index, scaled by
// the encoder stride to input pixels.
template <typename T>
std::vector<std::vector<Point>> decode_pose(const Tensor<T>& heatmaps, std::size_t stride = kStride);

}  // namespace dhr::pipeline
