#include "synth/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <tuple>

#include "tensor/errors.hpp"
#include "tensor/random.hpp"

namespace dhr::synth {

namespace {

struct Box {
    double x0, y0, x1, y1;
    double area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }
};

Box person_box(const Person& p) {
    Box b{p.center.x, p.center.y, p.center.x, p.center.y};
    for (const Point& j : p.joints) {
        b.x0 = std::min(b.x0, j.x);
        b.y0 = std::min(b.y0, j.y);
        b.x1 = std::max(b.x1, j.x);
        b.y1 = std::max(b.y1, j.y);
    }
    return b;
}

double snap(double v, std::size_t grid) {
    const double g = static_cast<double>(grid);
    return g * std::round(v / g);
}

bool inside(Point p, const SceneConfig& c) {
    return p.x >= 0.0 && p.y >= 0.0 && p.x <= static_cast<double>(c.width - 1) &&
           p.y <= static_cast<double>(c.height - 1);
}

// Distinct colour per joint type, evenly spread around the hue circle.
std::array<float, 3> joint_colour(std::size_t k, std::size_t joints) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(joints);
    return {static_cast<float>(0.5 + 0.5 * std::cos(phase)),
            static_cast<float>(0.5 + 0.5 * std::cos(phase - 2.0 * std::numbers::pi / 3.0)),
            static_cast<float>(0.5 + 0.5 * std::cos(phase + 2.0 * std::numbers::pi / 3.0))};
}

double segment_distance(Point p, Point a, Point b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return distance(p, {a.x + t * dx, a.y + t * dy});
}

void draw_limb(Image& img, Point a, Point b, float intensity) {
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - 2)));
    const int x1 = std::min(static_cast<int>(img.width) - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + 2)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - 2)));
    const int y1 = std::min(static_cast<int>(img.height) - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + 2)));
    const std::size_t plane = img.height * img.width;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            // Coverage falls from 1 at 0.5px to 0 at 1.5px from the axis.
            const double d = segment_distance({double(x), double(y)}, a, b);
            const float cover = static_cast<float>(std::clamp(1.5 - d, 0.0, 1.0));
            if (cover <= 0.0f) continue;
            const std::size_t idx = static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x);
            for (std::size_t c = 0; c < img.channels; ++c) {
                img.pixels[c * plane + idx] = std::max(img.pixels[c * plane + idx], intensity * cover);
            }
        }
    }
}

void draw_blob(Image& img, Point at, const std::array<float, 3>& colour) {
    constexpr double sigma = 1.5;
    const std::size_t plane = img.height * img.width;
    const int r = 4;
    for (int y = static_cast<int>(at.y) - r; y <= static_cast<int>(at.y) + r; ++y) {
        for (int x = static_cast<int>(at.x) - r; x <= static_cast<int>(at.x) + r; ++x) {
            if (x < 0 || y < 0 || x >= static_cast<int>(img.width) || y >= static_cast<int>(img.height)) continue;
            const double d2 = (x - at.x) * (x - at.x) + (y - at.y) * (y - at.y);
            const float v = static_cast<float>(std::exp(-d2 / (2.0 * sigma * sigma)));
            const std::size_t idx = static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x);
            for (std::size_t c = 0; c < 3; ++c) {
                img.pixels[c * plane + idx] = std::max(img.pixels[c * plane + idx], v * colour[c]);
            }
        }
    }
}

Person place_joints(Point center, double scale, double rotation, const SkeletonTemplate& tpl, std::size_t grid) {
    Person p;
    p.center = center;
    p.scale = scale;
    p.rotation = rotation;
    const double c = std::cos(rotation), s = std::sin(rotation);
    for (const Point& o : tpl.offsets) {
        const double x = center.x + scale * (c * o.x - s * o.y);
        const double y = center.y + scale * (s * o.x + c * o.y);
        p.joints.push_back({snap(x, grid), snap(y, grid)});
    }
    return p;
}

bool try_place(Rng& rng, const SceneConfig& cfg, const SkeletonTemplate& tpl, std::vector<Person>& persons,
               bool overlap_with_first) {
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
        const double scale = rng.uniform(cfg.min_scale, cfg.max_scale);
        const double rotation = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
        Point center;
        if (overlap_with_first) {
            const Person& first = persons.front();
            const double reach = 0.7 * (first.scale + scale);
            center = {first.center.x + rng.uniform(-reach, reach), first.center.y + rng.uniform(-reach, reach)};
        } else {
            center = {rng.uniform(0.0, double(cfg.width - 1)), rng.uniform(0.0, double(cfg.height - 1))};
        }
        center = {snap(center.x, cfg.grid), snap(center.y, cfg.grid)};
        if (!inside(center, cfg)) continue;
        Person p = place_joints(center, scale, rotation, tpl, cfg.grid);
        if (!std::all_of(p.joints.begin(), p.joints.end(), [&](Point j) { return inside(j, cfg); })) continue;
        const bool crowded = std::any_of(persons.begin(), persons.end(), [&](const Person& q) {
            return distance(q.center, center) < cfg.min_center_distance;
        });
        if (crowded) continue;
        if (overlap_with_first && bbox_overlap(persons.front(), p) < cfg.min_overlap) continue;
        persons.push_back(std::move(p));
        return true;
    }
    return false;
}

void validate(const SceneConfig& cfg) {
    if (cfg.n_max < 1 || cfg.n_max > kMaxPersons) {
        throw ConfigError("n_max must be in [1, " + std::to_string(kMaxPersons) + "], got " + std::to_string(cfg.n_max));
    }
    if (cfg.joints < 1) throw ConfigError("joint count must be positive");
    if (cfg.grid == 0 || cfg.height % cfg.grid || cfg.width % cfg.grid) {
        throw ConfigError("image size must be divisible by the grid");
    }
    if (cfg.overlap_prob < 0.0 || cfg.overlap_prob > 1.0) throw ConfigError("overlap_prob must be in [0, 1]");
    if (!(cfg.min_scale > 0.0) || cfg.max_scale < cfg.min_scale) throw ConfigError("invalid scale range");
}

}  // namespace

double distance(Point a, Point b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

SkeletonTemplate SkeletonTemplate::star() {
    SkeletonTemplate t;
    t.offsets = {{0.0, -1.0}, {-0.9, -0.35}, {0.9, -0.35}, {-0.5, 1.0}, {0.5, 1.0}};
    for (int k = 0; k < 5; ++k) t.limbs.emplace_back(-1, k);
    return t;
}

SkeletonTemplate SkeletonTemplate::with_joints(std::size_t joints) {
    if (joints == 5) return star();
    SkeletonTemplate t;
    for (std::size_t k = 0; k < joints; ++k) {
        const double a = -std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * double(k) / double(joints);
        t.offsets.push_back({std::cos(a), std::sin(a)});
        t.limbs.emplace_back(-1, static_cast<int>(k));
    }
    return t;
}

double bbox_overlap(const Person& a, const Person& b) {
    const Box ba = person_box(a), bb = person_box(b);
    const Box inter{std::max(ba.x0, bb.x0), std::max(ba.y0, bb.y0), std::min(ba.x1, bb.x1), std::min(ba.y1, bb.y1)};
    const double smaller = std::min(ba.area(), bb.area());
    if (smaller <= 0.0) return 0.0;
    return inter.area() / smaller;
}

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
    validate(cfg);
    const SkeletonTemplate tpl = SkeletonTemplate::with_joints(cfg.joints);
    Rng top(seed);
    const std::size_t count = 1 + static_cast<std::size_t>(top.below(cfg.n_max));
    const bool force_overlap = count >= 2 && top.uniform() < cfg.overlap_prob;

    for (int retry = 0; retry < kSceneRetries; ++retry) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(retry)));
        std::vector<Person> persons;
        bool ok = true;
        for (std::size_t i = 0; i < count && ok; ++i) {
            ok = try_place(rng, cfg, tpl, persons, force_overlap && i == 1);
        }
        if (!ok) continue;

        Scene scene;
        scene.seed = seed;
        scene.image.channels = 3;
        scene.image.height = cfg.height;
        scene.image.width = cfg.width;
        scene.image.pixels.assign(3 * cfg.height * cfg.width, 0.0f);
        for (const Person& p : persons) {
            const float intensity = static_cast<float>(rng.uniform(0.5, 1.0));
            for (const auto& [parent, child] : tpl.limbs) {
                const Point from = parent < 0 ? p.center : p.joints[static_cast<std::size_t>(parent)];
                draw_limb(scene.image, from, p.joints[static_cast<std::size_t>(child)], intensity);
            }
        }
        for (const Person& p : persons) {
            for (std::size_t k = 0; k < p.joints.size(); ++k) draw_blob(scene.image, p.joints[k], joint_colour(k, cfg.joints));
        }
        for (float& v : scene.image.pixels) v += static_cast<float>(cfg.noise_sigma * rng.normal());
        scene.persons = std::move(persons);
        return scene;
    }
    throw ConfigError("scene placement unsatisfiable for seed " + std::to_string(seed));
}

void splat_gaussian_max(std::span<float> plane, std::size_t height, std::size_t width, Point at, double sigma) {
    const double denom = 2.0 * sigma * sigma;
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const double dx = double(x) - at.x, dy = double(y) - at.y;
            const float v = static_cast<float>(std::exp(-(dx * dx + dy * dy) / denom));
            float& dst = plane[y * width + x];
            dst = std::max(dst, v);
        }
    }
}

Targets render_targets(const Scene& scene, double sigma, std::size_t stride) {
    if (stride == 0 || scene.image.height % stride || scene.image.width % stride) {
        throw ConfigError("render_targets: stride must divide the image size");
    }
    Targets t;
    t.height = scene.image.height / stride;
    t.width = scene.image.width / stride;
    t.instances = scene.persons.size();
    t.joints = scene.persons.empty() ? 0 : scene.persons.front().joints.size();
    const std::size_t plane = t.height * t.width;
    t.center_map.assign(plane, 0.0f);
    t.heatmaps.assign(t.instances * t.joints * plane, 0.0f);
    const double s = static_cast<double>(stride);
    for (std::size_t n = 0; n < t.instances; ++n) {
        const Person& p = scene.persons[n];
        const Point c{p.center.x / s, p.center.y / s};
        t.centers.push_back(c);
        splat_gaussian_max(t.center_map, t.height, t.width, c, sigma);
        for (std::size_t k = 0; k < t.joints; ++k) {
            std::span<float> dst(t.heatmaps.data() + (n * t.joints + k) * plane, plane);
            splat_gaussian_max(dst, t.height, t.width, {p.joints[k].x / s, p.joints[k].y / s}, sigma);
        }
    }
    return t;
}

void MetricReport::merge(const MetricReport& other) {
    if (joint_hits.size() < other.joint_hits.size()) {
        joint_hits.resize(other.joint_hits.size(), 0);
        joint_totals.resize(other.joint_totals.size(), 0);
    }
    for (std::size_t k = 0; k < other.joint_hits.size(); ++k) {
        joint_hits[k] += other.joint_hits[k];
        joint_totals[k] += other.joint_totals[k];
    }
    hits += other.hits;
    total += other.total;
    radius_frac = other.radius_frac;
    pck = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

MetricReport pck_evaluate(std::span<const PredictedPose> predictions, const Scene& scene, double radius_frac) {
    if (scene.persons.empty()) throw UsageError("pck_evaluate: metric undefined for a scene without persons");
    const std::size_t joints = scene.persons.front().joints.size();
    MetricReport report;
    report.radius_frac = radius_frac;
    report.joint_hits.assign(joints, 0);
    report.joint_totals.assign(joints, scene.persons.size());
    report.total = scene.persons.size() * joints;

    using Candidate = std::tuple<double, std::size_t, double, double, std::size_t>;
    std::vector<Candidate> pairs;
    for (std::size_t g = 0; g < scene.persons.size(); ++g) {
        for (std::size_t p = 0; p < predictions.size(); ++p) {
            const Point pc = predictions[p].center;
            pairs.emplace_back(distance(scene.persons[g].center, pc), g, pc.x, pc.y, p);
        }
    }
    std::sort(pairs.begin(), pairs.end());
    std::vector<bool> gt_used(scene.persons.size(), false), pred_used(predictions.size(), false);
    for (const auto& [d, g, px, py, p] : pairs) {
        if (gt_used[g] || pred_used[p]) continue;
        gt_used[g] = pred_used[p] = true;
        const Person& person = scene.persons[g];
        const double radius = radius_frac * person.extent();
        const auto& pj = predictions[p].joints;
        for (std::size_t k = 0; k < joints && k < pj.size(); ++k) {
            if (distance(pj[k], person.joints[k]) <= radius) {
                ++report.joint_hits[k];
                ++report.hits;
            }
        }
    }
    report.pck = static_cast<double>(report.hits) / static_cast<double>(report.total);
    return report;
}

}  // namespace dhr::synth
