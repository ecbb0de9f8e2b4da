#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "pipeline/model.hpp"
#include "tensor/errors.hpp"
#include "tensor/finite_diff.hpp"

using namespace dhr;
using namespace dhr::pipeline;

namespace {

using TD = Tensor<double>;
using TF = Tensor<float>;

// Printed by tests/oracles/scalar_softmax.py: -(1 - 0.5)^2 * ln(0.5).
constexpr double kFocalHalf = 0.1732867951;

ModelDims small_dims() {
    ModelDims d;
    d.c = 4;
    d.d = 4;
    d.joints = 3;
    d.height = 16;
    d.width = 16;
    d.hidden = 4;
    return d;
}

TD map_with(std::size_t h, std::size_t w, std::initializer_list<std::pair<std::size_t, double>> cells) {
    std::vector<double> v(h * w, 0.0);
    for (const auto& [idx, value] : cells) v[idx] = value;
    return TD::from({1, 1, h, w}, std::move(v));
}

}  // namespace

TEST(ModelDims, Validation) {
    ModelDims d;
    EXPECT_NO_THROW(d.validate());
    EXPECT_EQ(d.feature_height(), 16u);
    d.d = 7;
    EXPECT_THROW(d.validate(), ConfigError);
    d = {};
    d.width = 66;
    EXPECT_THROW(d.validate(), ConfigError);
}

TEST(ModelParams, NamesAreUniqueAndDeterministic) {
    const auto a = init_params<float>(ModelDims{}, 5);
    const auto b = init_params<float>(ModelDims{}, 5);
    const auto c = init_params<float>(ModelDims{}, 6);
    const auto na = a.named(), nb = b.named(), nc = c.named();
    std::set<std::string> names;
    for (const auto& [name, t] : na) names.insert(name);
    EXPECT_EQ(names.size(), na.size());
    EXPECT_EQ(na.front().first, "encoder.conv1.weight");
    EXPECT_TRUE(names.count("dim.ijr.cjm.q.weight"));
    EXPECT_TRUE(names.count("decoder.head2.bias"));
    bool differs = false;
    for (std::size_t i = 0; i < na.size(); ++i) {
        ASSERT_EQ(na[i].second.shape(), nb[i].second.shape());
        EXPECT_TRUE(std::equal(na[i].second.data().begin(), na[i].second.data().end(), nb[i].second.data().begin()));
        differs |= !std::equal(na[i].second.data().begin(), na[i].second.data().end(), nc[i].second.data().begin());
        if (na[i].first.ends_with(".bias")) {
            for (float v : na[i].second.data()) EXPECT_EQ(v, 0.0f);
        }
    }
    EXPECT_TRUE(differs);
}

TEST(Encode, ShapeAndZeroImage) {
    const auto p = init_params<double>(ModelDims{}, 1);
    const TD f = encode(TD::zeros({3, 64, 64}), p);
    EXPECT_EQ(f.shape(), (Shape{1, 16, 16, 16}));
    // Zero biases and a zero image give zero features.
    for (double v : f.data()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(encode(TD::zeros({1, 64, 64}), p), DimensionError);
    EXPECT_THROW(encode(TD::zeros({3, 62, 64}), p), ConfigError);
}

TEST(CenterHead, OutputInUnitInterval) {
    const auto p = init_params<double>(ModelDims{}, 2);
    Rng rng(3);
    const TD img = TD::from({3, 64, 64}, rng.uniform_vector<double>(3 * 64 * 64, 0.0, 1.0));
    const TD m = center_head(encode(img, p), p);
    EXPECT_EQ(m.shape(), (Shape{1, 1, 16, 16}));
    for (double v : m.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
}

TEST(DetectCenters, LocalMaximaOrderedByStrength) {
    const TD m = map_with(6, 6, {{7, 0.5}, {8, 0.4}, {27, 0.9}, {33, 0.2}});
    const auto c = detect_centers(m, 0.3, 4);
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c[0], (Point{3, 4}));
    EXPECT_EQ(c[1], (Point{1, 1}));
    EXPECT_EQ(detect_centers(m, 0.3, 1).size(), 1u);
    EXPECT_TRUE(detect_centers(m, 0.95, 4).empty());
}

TEST(DetectCenters, PlateauKeepsFirstPixel) {
    const TD m = map_with(4, 4, {{5, 0.7}, {6, 0.7}});
    const auto c = detect_centers(m, 0.3, 4);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c[0], (Point{1, 1}));
}

TEST(InstanceMasks, UnitPeakGaussians) {
    const std::vector<Point> centers{{2, 3}, {10, 12}};
    const TD m = instance_masks<double>(centers, 16, 16);
    EXPECT_EQ(m.shape(), (Shape{2, 1, 16, 16}));
    const auto v = m.data();
    EXPECT_DOUBLE_EQ(v[3 * 16 + 2], 1.0);
    EXPECT_NEAR(v[3 * 16 + 4], std::exp(-0.5), 1e-6);
    EXPECT_DOUBLE_EQ(v[256 + 12 * 16 + 10], 1.0);
    EXPECT_FALSE(instance_masks<double>({}, 16, 16).defined());
}

TEST(DecodeInstances, TeacherForcedAndDetected) {
    const ModelDims dims = small_dims();
    const auto p = init_params<double>(dims, 4);
    Rng rng(8);
    const TD feats = TD::from({1, 4, 4, 4}, rng.uniform_vector<double>(64, 0.0, 1.0));
    const std::vector<Point> gt{{1, 1}, {2, 3}};
    const auto forced = decode_instances(feats, p, std::span<const Point>(gt));
    EXPECT_EQ(forced.centers, gt);
    EXPECT_EQ(forced.f_inst.shape(), (Shape{2, 4, 4, 4}));
    EXPECT_EQ(forced.masks.shape(), (Shape{2, 1, 4, 4}));

    const auto none = decode_instances(feats, p, std::nullopt, 2.0);
    EXPECT_TRUE(none.centers.empty());
    EXPECT_FALSE(none.f_inst.defined());
    EXPECT_FALSE(decode_joints(feats, none.f_inst, p).defined());
    EXPECT_EQ(decode_joints(feats, forced.f_inst, p).shape(), (Shape{2, 3, 4, 4}));
}

TEST(DecodeJoints, MatchesSingleConvOverConcat) {
    const ModelDims dims = small_dims();
    const auto p = init_params<double>(dims, 6);
    Rng rng(9);
    const TD feats = TD::from({1, 4, 4, 4}, rng.uniform_vector<double>(64, -1.0, 1.0));
    const TD f_inst = TD::from({3, 4, 4, 4}, rng.uniform_vector<double>(192, -1.0, 1.0));

    const std::size_t hid = dims.hidden, kk = p.joint1_feat_weight.dim(2) * p.joint1_feat_weight.dim(3);
    const auto wf = p.joint1_feat_weight.data(), wi = p.joint1_inst_weight.data();
    std::vector<double> joined;
    for (std::size_t o = 0; o < hid; ++o) {
        joined.insert(joined.end(), wf.begin() + o * dims.c * kk, wf.begin() + (o + 1) * dims.c * kk);
        joined.insert(joined.end(), wi.begin() + o * dims.d * kk, wi.begin() + (o + 1) * dims.d * kk);
    }
    const std::size_t k = p.joint1_feat_weight.dim(3);
    const TD w = TD::from({hid, dims.c + dims.d, k, k}, std::move(joined));
    const TD x = concat_channels<double>({repeat_batch(feats, 3), f_inst});
    const TD h = relu(conv2d(x, w, p.joint1_bias, {.padding = k / 2}));
    const TD expected = conv2d(h, p.joint2_weight, p.joint2_bias);

    const TD got = decode_joints(feats, f_inst, p);
    ASSERT_EQ(got.shape(), expected.shape());
    for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got.data()[i], expected.data()[i], 1e-12);
}

TEST(PositionalEmbedding, ClosedFormValues) {
    const std::vector<Point> centers{{4, 8}};
    const TD e = positional_embedding<double>(centers, 16, 16, 8);
    ASSERT_EQ(e.shape(), (Shape{1, 8}));
    const auto v = e.data();
    const double pi = std::numbers::pi;
    // Two pairs for x (u = 0.25), two for y (v = 0.5).
    const double expected[8] = {std::sin(pi * 0.25), std::cos(pi * 0.25), std::sin(pi * 0.5), std::cos(pi * 0.5),
                                std::sin(pi * 0.5),  std::cos(pi * 0.5),  std::sin(pi),       std::cos(pi)};
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(v[i], expected[i], 1e-12) << i;
    EXPECT_THROW(positional_embedding<double>(centers, 16, 16, 7), ConfigError);
}

TEST(PositionalEmbedding, OddPairCountFavoursX) {
    const std::vector<Point> centers{{8, 0}};
    const TD e = positional_embedding<double>(centers, 16, 16, 6);
    const auto v = e.data();
    EXPECT_NEAR(v[0], 1.0, 1e-12);  // sin(pi/2), x octave 0
    EXPECT_NEAR(v[2], 0.0, 1e-12);  // sin(pi), x octave 1
    EXPECT_NEAR(v[4], 0.0, 1e-12);  // sin(0), y octave 0
    EXPECT_NEAR(v[5], 1.0, 1e-12);
}

TEST(PositionalEmbedding, FromMapsUsesArgmax) {
    const TD maps = TD::from({2, 4, 4}, {0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0,
                                         0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
    const std::vector<Point> expected{{2, 1}, {0, 0}};
    const TD a = positional_embedding(maps, 4);
    const TD b = positional_embedding<double>(expected, 4, 4, 4);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(a.data()[i], b.data()[i]);
    EXPECT_THROW(positional_embedding(TD::zeros({2, 2, 4, 4}), 4), DimensionError);
}

TEST(FocalLoss, SinglePositiveOracle) {
    const TD pred = map_with(2, 2, {{0, 0.5}});
    const TD gt = map_with(2, 2, {{0, 1.0}});
    EXPECT_NEAR(focal_center_loss(pred, gt).item(), kFocalHalf, 1e-9);
}

TEST(FocalLoss, MonotoneInPositiveConfidence) {
    const TD gt = map_with(2, 2, {{0, 1.0}, {1, 0.5}});
    double prev = INFINITY;
    for (double p : {0.1, 0.5, 0.9}) {
        const double l = focal_center_loss(map_with(2, 2, {{0, p}, {1, 0.2}}), gt).item();
        EXPECT_GE(l, 0.0);
        EXPECT_LT(l, prev);
        prev = l;
    }
}

TEST(FocalLoss, GradientMatchesFiniteDifferences) {
    const TD gt = map_with(2, 3, {{1, 1.0}, {2, 0.6}, {4, 0.3}});
    TD pred = TD::param({1, 1, 2, 3}, {0.2, 0.7, 0.4, 0.1, 0.5, 0.9});
    backward(focal_center_loss(pred, gt));
    const TD fd = finite_diff_gradient<double>([&](const TD& x) { return focal_center_loss(x, gt).item(); }, pred, 1e-6);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(pred.grad()[i], fd.data()[i], 1e-6) << i;
}

TEST(FocalLoss, Errors) {
    EXPECT_THROW(focal_center_loss(TD::zeros({1, 1, 2, 2}), TD::zeros({1, 1, 2, 3})), DimensionError);
    EXPECT_THROW(focal_center_loss(map_with(2, 2, {{0, 1.5}}), TD::zeros({1, 1, 2, 2})), NumericError);
}

TEST(MseLoss, ClosedForms) {
    const TD a = TD::from({1, 1, 1, 4}, {1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(heatmap_mse_loss(a, a).item(), 0.0);
    EXPECT_DOUBLE_EQ(heatmap_mse_loss(a, TD::zeros({1, 1, 1, 4})).item(), 7.5);
    EXPECT_DOUBLE_EQ(heatmap_mse_loss(TD{}, TD{}).item(), 0.0);
    EXPECT_THROW(heatmap_mse_loss(a, TD::zeros({1, 1, 4, 1})), DimensionError);
}

TEST(TotalLoss, WeightedSum) {
    const auto r = total_loss(TD::scalar(0.5), TD::scalar(0.25), 2.0);
    EXPECT_DOUBLE_EQ(r.total, 1.0);
    EXPECT_DOUBLE_EQ(r.total_tensor.item(), 1.0);
    EXPECT_DOUBLE_EQ(r.l_joint, 0.25);
    EXPECT_THROW(total_loss(TD::scalar(0.5), TD::scalar(0.25), 0.0), ConfigError);
}

TEST(Targets, ConversionKeepsShapes) {
    const synth::Scene s = synth::generate_scene(3, synth::SceneConfig{});
    const auto t = to_training_targets<float>(synth::render_targets(s, kTargetSigma, kStride));
    EXPECT_EQ(t.center_map.shape(), (Shape{1, 1, 16, 16}));
    EXPECT_EQ(t.heatmaps.shape(), (Shape{s.persons.size(), 5, 16, 16}));
    EXPECT_EQ(t.centers.size(), s.persons.size());
    EXPECT_EQ(image_tensor<float>(s.image).shape(), (Shape{3, 64, 64}));
}

TEST(DecodePose, ArgmaxTimesStride) {
    std::vector<double> v(2 * 2 * 4 * 4, 0.0);
    v[1 * 4 + 2] = 1.0;            // n0 k0 -> (2,1)
    v[16 + 3 * 4 + 0] = 0.5;       // n0 k1 -> (0,3)
    v[32 + 0] = v[32 + 5] = 0.7;   // n1 k0 tie -> first
    const auto poses = decode_pose(TD::from({2, 2, 4, 4}, v));
    ASSERT_EQ(poses.size(), 2u);
    EXPECT_EQ(poses[0][0], (Point{8, 4}));
    EXPECT_EQ(poses[0][1], (Point{0, 12}));
    EXPECT_EQ(poses[1][0], (Point{0, 0}));
    EXPECT_EQ(poses[1][1], (Point{0, 0}));
    EXPECT_TRUE(decode_pose(TD{}).empty());
}

TEST(DecodePose, RenderedTargetsRoundTrip) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const synth::Scene s = synth::generate_scene(seed, synth::SceneConfig{});
        const auto t = to_training_targets<float>(synth::render_targets(s, kTargetSigma, kStride));
        const auto poses = decode_pose(t.heatmaps);
        for (std::size_t n = 0; n < s.persons.size(); ++n) EXPECT_EQ(poses[n], s.persons[n].joints) << "seed " << seed;
    }
}

TEST(ForwardFull, TrainingAndInferenceModes) {
    const auto p = init_params<float>(ModelDims{}, 9);
    const synth::Scene s = synth::generate_scene(21, synth::SceneConfig{});
    const TF img = image_tensor<float>(s.image);
    const auto targets = to_training_targets<float>(synth::render_targets(s, kTargetSigma, kStride));
    const auto train = forward_full(img, &targets, p, relnet::BranchConfig::full());
    ASSERT_TRUE(train.loss.has_value());
    EXPECT_EQ(train.heatmaps.shape(), (Shape{s.persons.size(), 5, 16, 16}));
    EXPECT_TRUE(std::isfinite(train.loss->total));
    EXPECT_GT(train.loss->l_joint, 0.0);
    ASSERT_TRUE(train.attention.ijr_instance.has_value());
    ASSERT_TRUE(train.attention.jir_joint.has_value());

    const auto again = forward_full(img, &targets, p, relnet::BranchConfig::full());
    EXPECT_EQ(again.loss->total, train.loss->total);

    InferenceOptions none;
    none.peak_threshold = 2.0;
    const auto inf = forward_full<float>(img, nullptr, p, relnet::BranchConfig::full(), 1.0, none);
    EXPECT_FALSE(inf.loss.has_value());
    EXPECT_TRUE(inf.centers.empty());
    EXPECT_FALSE(inf.heatmaps.defined());
}

TEST(ForwardFull, NoInstancesStillTrainsCenters) {
    const auto p = init_params<float>(ModelDims{}, 9);
    TrainingTargets<float> empty;
    empty.center_map = TF::zeros({1, 1, 16, 16});
    const auto r = forward_full(TF::zeros({3, 64, 64}), &empty, p, relnet::BranchConfig::baseline());
    ASSERT_TRUE(r.loss.has_value());
    EXPECT_EQ(r.loss->l_joint, 0.0);
    EXPECT_GT(r.loss->l_inst, 0.0);
}
