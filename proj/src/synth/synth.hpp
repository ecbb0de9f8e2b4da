#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

// Synthetic multi-person scenes: a skeleton template placed at random
// scale/rotation, rendered as anti-aliased limbs plus colour-coded joint blobs,
// together with heatmap targets and a PCK evaluator.
namespace dhr::synth {

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

double distance(Point a, Point b);

// Canonical joint offsets at unit scale. A limb (parent, child) with parent
// -1 starts at the person center.
struct SkeletonTemplate {
    std::vector<Point> offsets;
    std::vector<std::pair<int, int>> limbs;

    std::size_t joints() const { return offsets.size(); }

    // Head, two hands, two feet.
    static SkeletonTemplate star();
    // star() for 5 joints, otherwise joints evenly spaced on the unit circle.
    static SkeletonTemplate with_joints(std::size_t joints);
};

struct Person {
    Point center;
    double scale = 0.0;     // pixels per template unit
    double rotation = 0.0;  // radians
    std::vector<Point> joints;

    // Nominal person size used for PCK radii: the template spans [-1,1], so
    // the person is 2 * scale pixels tall.
    double extent() const { return 2.0 * scale; }
};

struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;  // [channels, height, width]
};

struct Scene {
    Image image;
    std::vector<Person> persons;
    std::uint64_t seed = 0;
};

struct SceneConfig {
    std::size_t n_max = 4;
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t joints = 5;
    double overlap_prob = 0.5;
    // Joints and centers are snapped to multiples of this so heatmap peaks
    // land exactly on feature pixels.
    std::size_t grid = 4;
    double min_scale = 10.0;
    double max_scale = 16.0;
    double max_rotation = 0.5235987755982988;  // 30 degrees
    double min_center_distance = 8.0;
    double min_overlap = 0.3;
    double noise_sigma = 0.05;
};

inline constexpr std::size_t kMaxPersons = 6;
inline constexpr int kPlacementAttempts = 100;
inline constexpr int kSceneRetries = 8;

// Pure function of (seed, config).
Scene generate_scene(std::uint64_t seed, const SceneConfig& config);

// Intersection area over the smaller box area, boxes spanning each person's
// joints and center.
double bbox_overlap(const Person& a, const Person& b);

struct Targets {
    std::size_t height = 0;  // feature resolution
    std::size_t width = 0;
    std::size_t instances = 0;
    std::size_t joints = 0;
    std::vector<float> center_map;  // [height, width]
    std::vector<float> heatmaps;    // [instances, joints, height, width]
    std::vector<Point> centers;     // feature coordinates, one per instance
};

// Peak-1 Gaussians at stride-scaled coordinates; overlapping center peaks are
// combined by max.
Targets render_targets(const Scene& scene, double sigma, std::size_t stride);

// Peak-1 Gaussian of the given sigma centred at `at`, written into a
// [height, width] plane by max.
void splat_gaussian_max(std::span<float> plane, std::size_t height, std::size_t width, Point at, double sigma);

struct PredictedPose {
    Point center;
    std::vector<Point> joints;
};

struct MetricReport {
    double pck = 0.0;
    double radius_frac = 0.0;
    std::size_t hits = 0;
    std::size_t total = 0;
    std::vector<std::size_t> joint_hits;
    std::vector<std::size_t> joint_totals;

    void merge(const MetricReport& other);
};

// Greedy one-to-one matching of predictions to ground truth by center
// distance (ascending; ties by ground-truth then prediction index). A joint
// hits when within radius_frac * person extent. Unmatched ground-truth joints
// count as misses. Throws UsageError when the scene has no persons.
MetricReport pck_evaluate(std::span<const PredictedPose> predictions, const Scene& scene, double radius_frac);

}  // namespace dhr::synth
