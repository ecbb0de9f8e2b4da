#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "synth/synth.hpp"
#include "tensor/errors.hpp"

using namespace dhr;
using namespace dhr::synth;

namespace {

std::vector<PredictedPose> exact_predictions(const Scene& scene) {
    std::vector<PredictedPose> out;
    for (const Person& p : scene.persons) out.push_back({p.center, p.joints});
    return out;
}

}  // namespace

TEST(Skeleton, StarTemplateIsBoundedAndAcyclic) {
    const SkeletonTemplate t = SkeletonTemplate::star();
    EXPECT_EQ(t.joints(), 5u);
    for (const Point& o : t.offsets) {
        EXPECT_LE(std::abs(o.x), 1.0);
        EXPECT_LE(std::abs(o.y), 1.0);
    }
    for (const auto& [parent, child] : t.limbs) EXPECT_LT(parent, child);
    const SkeletonTemplate ring = SkeletonTemplate::with_joints(3);
    EXPECT_EQ(ring.joints(), 3u);
    for (const Point& o : ring.offsets) EXPECT_NEAR(std::hypot(o.x, o.y), 1.0, 1e-12);
}

TEST(GenerateScene, DeterministicPerSeed) {
    const SceneConfig cfg;
    const Scene a = generate_scene(1234, cfg);
    const Scene b = generate_scene(1234, cfg);
    EXPECT_EQ(a.image.pixels, b.image.pixels);
    ASSERT_EQ(a.persons.size(), b.persons.size());
    for (std::size_t i = 0; i < a.persons.size(); ++i) EXPECT_EQ(a.persons[i].joints, b.persons[i].joints);
    EXPECT_NE(generate_scene(1235, cfg).image.pixels, a.image.pixels);
}

TEST(GenerateScene, JointsInsideImageAndOnGrid) {
    const SceneConfig cfg;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        const Scene s = generate_scene(seed, cfg);
        EXPECT_EQ(s.image.pixels.size(), 3u * 64 * 64);
        ASSERT_GE(s.persons.size(), 1u);
        ASSERT_LE(s.persons.size(), cfg.n_max);
        for (const Person& p : s.persons) {
            ASSERT_EQ(p.joints.size(), 5u);
            for (const Point& j : p.joints) {
                EXPECT_GE(j.x, 0.0);
                EXPECT_LT(j.x, 64.0);
                EXPECT_GE(j.y, 0.0);
                EXPECT_LT(j.y, 64.0);
                EXPECT_EQ(std::fmod(j.x, 4.0), 0.0);
                EXPECT_EQ(std::fmod(j.y, 4.0), 0.0);
            }
        }
    }
}

TEST(GenerateScene, PersonCountCoversRange) {
    SceneConfig cfg;
    cfg.n_max = 6;
    std::set<std::size_t> seen;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) seen.insert(generate_scene(seed, cfg).persons.size());
    EXPECT_EQ(seen, (std::set<std::size_t>{1, 2, 3, 4, 5, 6}));
}

TEST(GenerateScene, OverlapKnobForcesOverlap) {
    SceneConfig cfg;
    cfg.overlap_prob = 1.0;
    int multi = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const Scene s = generate_scene(seed, cfg);
        if (s.persons.size() < 2) continue;
        ++multi;
        EXPECT_GE(bbox_overlap(s.persons[0], s.persons[1]), cfg.min_overlap) << "seed " << seed;
    }
    EXPECT_GT(multi, 100);
}

TEST(GenerateScene, RejectsBadConfig) {
    SceneConfig cfg;
    cfg.n_max = 7;
    EXPECT_THROW(generate_scene(0, cfg), ConfigError);
    cfg.n_max = 2;
    cfg.width = 62;
    EXPECT_THROW(generate_scene(0, cfg), ConfigError);
}

TEST(RenderTargets, PeaksAndFalloff) {
    const Scene s = generate_scene(7, SceneConfig{});
    const Targets t = render_targets(s, 1.5, 4);
    EXPECT_EQ(t.height, 16u);
    EXPECT_EQ(t.instances, s.persons.size());
    EXPECT_EQ(t.heatmaps.size(), t.instances * 5 * 16 * 16);
    for (std::size_t n = 0; n < t.instances; ++n) {
        for (std::size_t k = 0; k < 5; ++k) {
            const Point j = s.persons[n].joints[k];
            const std::size_t x = std::size_t(j.x / 4), y = std::size_t(j.y / 4);
            EXPECT_EQ(t.heatmaps[((n * 5 + k) * 16 + y) * 16 + x], 1.0f);
        }
        const Point c = t.centers[n];
        EXPECT_EQ(t.center_map[std::size_t(c.y) * 16 + std::size_t(c.x)], 1.0f);
    }
}

TEST(RenderTargets, ClosedFormFalloffAndEmptyRegions) {
    std::vector<float> plane(9 * 9, 0.0f);
    splat_gaussian_max(plane, 9, 9, {4.0, 4.0}, 1.5);
    EXPECT_EQ(plane[4 * 9 + 4], 1.0f);
    EXPECT_NEAR(plane[4 * 9 + 6], std::exp(-4.0 / (2 * 1.5 * 1.5)), 1e-6);
    std::vector<float> unit(9 * 9, 0.0f);
    splat_gaussian_max(unit, 9, 9, {4.0, 4.0}, 1.0);
    EXPECT_NEAR(unit[4 * 9 + 5], 0.6065306597, 1e-6);
    // Max, not sum, where peaks overlap.
    splat_gaussian_max(unit, 9, 9, {5.0, 4.0}, 1.0);
    EXPECT_EQ(unit[4 * 9 + 5], 1.0f);
    EXPECT_EQ(unit[4 * 9 + 4], 1.0f);

    Scene empty;
    empty.image = {3, 64, 64, std::vector<float>(3 * 64 * 64, 0.0f)};
    Person p;
    p.center = {8, 8};
    p.scale = 4;
    p.joints = {{4, 4}, {12, 4}, {4, 12}, {12, 12}, {8, 4}};
    empty.persons.push_back(p);
    const Targets t = render_targets(empty, 1.5, 4);
    for (std::size_t y = 10; y < 16; ++y)
        for (std::size_t x = 10; x < 16; ++x) EXPECT_LT(t.center_map[y * 16 + x], 1e-6f);
}

TEST(Pck, PerfectAndTotalMiss) {
    const Scene s = generate_scene(11, SceneConfig{});
    const auto perfect = pck_evaluate(exact_predictions(s), s, 0.1);
    EXPECT_EQ(perfect.pck, 1.0);
    EXPECT_EQ(perfect.total, s.persons.size() * 5);

    std::vector<PredictedPose> corner;
    for (const Person& p : s.persons) corner.push_back({p.center, std::vector<Point>(5, Point{-500.0, -500.0})});
    EXPECT_EQ(pck_evaluate(corner, s, 0.1).pck, 0.0);
    EXPECT_EQ(pck_evaluate({}, s, 0.1).pck, 0.0);
}

TEST(Pck, ConstructedHalfMiss) {
    Scene s;
    for (int i = 0; i < 2; ++i) {
        Person p;
        p.center = {20.0 + 24.0 * i, 32.0};
        p.scale = 10.0;
        p.joints = {{p.center.x, 22.0}, {p.center.x - 8, 28.0}, {p.center.x + 8, 28.0}, {p.center.x - 4, 40.0}, {p.center.x + 4, 40.0}};
        s.persons.push_back(p);
    }
    auto preds = exact_predictions(s);
    // Radius is 0.1 * 20 = 2 px. Displace 5 of the 10 joints by 3 px, and
    // nudge two of the kept ones by exactly the radius (still a hit).
    preds[0].joints[0].x += 3.0;
    preds[0].joints[1].y += 3.0;
    preds[0].joints[2].x -= 3.0;
    preds[1].joints[3].y -= 3.0;
    preds[1].joints[4].x += 3.0;
    preds[1].joints[0].x += 2.0;
    preds[0].joints[3].y -= 2.0;
    const auto r = pck_evaluate(preds, s, 0.1);
    EXPECT_EQ(r.hits, 5u);
    EXPECT_EQ(r.pck, 0.5);
}

TEST(Pck, PermutationInvariant) {
    SceneConfig cfg;
    cfg.n_max = 6;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Scene s = generate_scene(seed, cfg);
        auto preds = exact_predictions(s);
        for (auto& p : preds) {
            p.center.x += 1.0;
            p.joints[1].x += 2.5;
        }
        const auto a = pck_evaluate(preds, s, 0.1);
        std::reverse(preds.begin(), preds.end());
        const auto b = pck_evaluate(preds, s, 0.1);
        EXPECT_EQ(a.hits, b.hits);
        EXPECT_EQ(a.joint_hits, b.joint_hits);
    }
}

TEST(Pck, EmptySceneIsUsageError) {
    Scene s;
    EXPECT_THROW(pck_evaluate({}, s, 0.1), UsageError);
}

TEST(Pck, MergeAccumulates) {
    const Scene a = generate_scene(1, SceneConfig{}), b = generate_scene(2, SceneConfig{});
    MetricReport m;
    m.merge(pck_evaluate(exact_predictions(a), a, 0.1));
    m.merge(pck_evaluate({}, b, 0.1));
    EXPECT_EQ(m.total, (a.persons.size() + b.persons.size()) * 5);
    EXPECT_DOUBLE_EQ(m.pck, double(a.persons.size()) / double(a.persons.size() + b.persons.size()));
}
