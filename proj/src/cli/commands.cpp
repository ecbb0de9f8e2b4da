#include "cli/commands.hpp"

#include <chrono>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <memory>
#include <system_error>

#include "tensor/errors.hpp"
#include "tensor/finite_diff.hpp"
#include "tensor/random.hpp"

namespace dhr::cli {

namespace {

using pipeline::ModelParams;
using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kSampleStream = 2;

struct Sample {
    Tensor<float> image;
    pipeline::TrainingTargets<float> targets;
};

Sample make_sample(std::uint64_t scene_seed, const synth::SceneConfig& scene_cfg) {
    const synth::Scene scene = synth::generate_scene(scene_seed, scene_cfg);
    const synth::Targets targets = synth::render_targets(scene, pipeline::kTargetSigma, pipeline::kStride);
    return {pipeline::image_tensor<float>(scene.image), pipeline::to_training_targets<float>(targets)};
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string matrix_csv(std::span<const float> values, std::size_t rows, std::size_t cols) {
    std::string out;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            if (c) out += ',';
            out += format_number(values[r * cols + c]);
        }
        out += '\n';
    }
    return out;
}

std::string matrix_pgm(std::span<const float> values, std::size_t rows, std::size_t cols) {
    std::string out = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
    for (float v : values) {
        const double clamped = std::clamp(static_cast<double>(v), 0.0, 1.0);
        out += static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0)));
    }
    return out;
}

// --- gradient check fixtures ----------------------------------------------------

constexpr std::size_t kGcInstances = 2;
constexpr std::size_t kGcJoints = 2;
constexpr std::size_t kGcDim = 4;
constexpr std::size_t kGcSize = 4;
constexpr std::size_t kGcHidden = 4;

using D = double;

struct Fixture {
    std::vector<std::pair<std::string, Tensor<D>>> leaves;
    std::function<Tensor<D>()> objective;
};

Tensor<D> random_leaf(const Shape& shape, Rng& rng, double scale) {
    std::vector<D> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-scale, scale);
    return Tensor<D>::param(shape, std::move(v));
}

// Random fixed projection of a module output down to a scalar.
std::function<Tensor<D>()> projected(std::function<Tensor<D>()> forward, Rng& rng) {
    auto weights = std::make_shared<Tensor<D>>();
    auto seed = rng.next_u64();
    return [forward = std::move(forward), weights, seed] {
        Tensor<D> out = forward();
        if (!weights->defined()) {
            Rng local(seed);
            std::vector<D> v(out.numel());
            for (auto& x : v) x = local.uniform(-1.0, 1.0);
            *weights = Tensor<D>::from(out.shape(), std::move(v));
        }
        return sum(mul(out, *weights));
    };
}

void add_cjm(Fixture& f, const std::string& prefix, const relnet::CjmParams<D>& p) {
    f.leaves.insert(f.leaves.end(), {{prefix + ".q.weight", p.q_weight}, {prefix + ".q.bias", p.q_bias},
                                     {prefix + ".k.weight", p.k_weight}, {prefix + ".k.bias", p.k_bias},
                                     {prefix + ".v.weight", p.v_weight}, {prefix + ".v.bias", p.v_bias}});
}

void add_adfm(Fixture& f, const std::string& prefix, const relnet::AdfmParams<D>& p) {
    f.leaves.insert(f.leaves.end(), {{prefix + ".fc1.weight", p.fc1_weight}, {prefix + ".fc1.bias", p.fc1_bias},
                                     {prefix + ".fc2.weight", p.fc2_weight}, {prefix + ".fc2.bias", p.fc2_bias},
                                     {prefix + ".fuse.weight", p.fuse_weight}, {prefix + ".fuse.bias", p.fuse_bias}});
}

// Biases start at zero in the real model; random ones exercise more of the
// backward code.
void randomize(Fixture& f, Rng& rng) {
    for (auto& [name, t] : f.leaves) {
        for (auto& v : t.leaf_data()) v = rng.uniform(-0.5, 0.5);
    }
}

Fixture build_fixture(std::string_view selector, Rng& rng) {
    const Shape inst_shape{kGcInstances, kGcDim, kGcSize, kGcSize};
    const Shape joint_shape{kGcInstances, kGcJoints, kGcSize, kGcSize};
    Fixture f;
    if (selector == "cim") {
        Tensor<D> x = random_leaf(inst_shape, rng, 0.5), pos = random_leaf({kGcInstances, kGcDim}, rng, 1.0);
        f.leaves = {{"f_inst", x}, {"f_pos", pos}};
        f.objective = projected([x, pos] { return relnet::cim_forward(x, pos); }, rng);
    } else if (selector == "cjm") {
        Tensor<D> x = random_leaf(joint_shape, rng, 1.0);
        const auto p = relnet::make_cjm_params<D>(kGcJoints, rng);
        f.leaves = {{"f_joint", x}};
        add_cjm(f, "cjm", p);
        randomize(f, rng);
        f.objective = projected([x, p] { return relnet::cjm_forward(x, p).first; }, rng);
    } else if (selector == "adfm") {
        Tensor<D> a = random_leaf(inst_shape, rng, 1.0), b = random_leaf(joint_shape, rng, 1.0);
        const auto p = relnet::make_adfm_params<D>(kGcDim + kGcJoints, kGcJoints, rng);
        f.leaves = {{"a", a}, {"b", b}};
        add_adfm(f, "adfm", p);
        randomize(f, rng);
        f.objective = projected([a, b, p] { return relnet::adfm_fuse(a, b, p, true); }, rng);
    } else if (selector == "ijr" || selector == "jir") {
        Tensor<D> x = random_leaf(inst_shape, rng, 0.5), j = random_leaf(joint_shape, rng, 1.0);
        Tensor<D> pos = random_leaf({kGcInstances, kGcDim}, rng, 1.0);
        const auto p = relnet::make_relation_params<D>(kGcDim, kGcJoints, kGcHidden, rng);
        f.leaves = {{"f_inst", x}, {"f_joint", j}, {"f_pos", pos}};
        const bool ijr = selector == "ijr";
        if (ijr) {
            add_adfm(f, "ijr.adfm", p.ijr_adfm);
            add_cjm(f, "ijr.cjm", p.ijr_cjm);
        } else {
            add_cjm(f, "jir.cjm", p.jir_cjm);
            add_adfm(f, "jir.adfm", p.jir_adfm);
        }
        randomize(f, rng);
        f.objective = projected(
            [x, j, pos, p, ijr] {
                const auto cfg = relnet::BranchConfig::full();
                return ijr ? relnet::ijr_branch(x, j, pos, p, cfg) : relnet::jir_branch(x, j, pos, p, cfg);
            },
            rng);
    } else if (selector == "decoder") {
        Tensor<D> ij = random_leaf(joint_shape, rng, 1.0), ji = random_leaf(inst_shape, rng, 1.0);
        const auto p = relnet::make_decoder_params<D>(kGcJoints + kGcDim, kGcJoints, kGcHidden, rng);
        f.leaves = {{"f_ij", ij},
                    {"f_ji", ji},
                    {"decoder.channel.fc1.weight", p.fc1_weight},
                    {"decoder.channel.fc1.bias", p.fc1_bias},
                    {"decoder.channel.fc2.weight", p.fc2_weight},
                    {"decoder.channel.fc2.bias", p.fc2_bias},
                    {"decoder.spatial.weight", p.spatial_weight},
                    {"decoder.spatial.bias", p.spatial_bias},
                    {"decoder.head1.weight", p.head1_weight},
                    {"decoder.head1.bias", p.head1_bias},
                    {"decoder.head2.weight", p.head2_weight},
                    {"decoder.head2.bias", p.head2_bias}};
        randomize(f, rng);
        f.objective = projected([ij, ji, p] { return relnet::pose_decode(ij, ji, p, true); }, rng);
    } else if (selector == "full") {
        pipeline::ModelDims dims;
        dims.c = kGcDim;
        dims.d = kGcDim;
        dims.joints = kGcJoints;
        dims.hidden = kGcHidden;
        dims.height = kGcSize * pipeline::kStride;
        dims.width = kGcSize * pipeline::kStride;
        const auto params = pipeline::init_params<D>(dims, rng.next_u64());
        Tensor<D> image = random_leaf({3, dims.height, dims.width}, rng, 1.0);
        f.leaves = {{"image", image}};
        for (const auto& entry : params.named()) f.leaves.push_back(entry);
        randomize(f, rng);
        for (auto& v : image.leaf_data()) v = rng.uniform(0.0, 1.0);

        auto targets = std::make_shared<pipeline::TrainingTargets<D>>();
        targets->centers = {{1.0, 1.0}, {2.0, 3.0}};
        std::vector<float> center(kGcSize * kGcSize, 0.0f);
        for (const auto& c : targets->centers) synth::splat_gaussian_max(center, kGcSize, kGcSize, c, pipeline::kTargetSigma);
        targets->center_map = Tensor<D>::from({1, 1, kGcSize, kGcSize}, std::vector<D>(center.begin(), center.end()));
        std::vector<D> heat(kGcInstances * kGcJoints * kGcSize * kGcSize);
        for (auto& v : heat) v = rng.uniform(0.0, 1.0);
        targets->heatmaps = Tensor<D>::from(joint_shape, std::move(heat));
        f.objective = [image, params, targets] {
            auto out = pipeline::forward_full(image, targets.get(), params, relnet::BranchConfig::full());
            return out.loss->total_tensor;
        };
    } else {
        throw UsageError("unknown gradcheck selector '" + std::string(selector) +
                         "' (expected cim, cjm, adfm, ijr, jir, decoder or full)");
    }
    return f;
}

}  // namespace

std::string format_number(float value) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    std::string out(buf, end);
    if (out.find_first_of(".eEn") == std::string::npos) out += ".0";
    return out;
}

std::string format_log_row(const LogRow& row) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%llu,%.9g,%.9g,%.9g,%.9g", static_cast<unsigned long long>(row.step), row.l_inst,
                  row.l_joint, row.total, row.lr);
    return buf;
}

TrainResult train(const RunConfig& config, const std::function<void(const LogRow&)>& on_step) {
    config.validate();
    ModelParams<float> params = pipeline::init_params<float>(config.dims, derive_seed(config.seed, kInitStream));
    std::vector<Tensor<float>> leaves = params.all();
    AdamState<float> adam;
    adam.hyper = config.adam;
    Rng sampler(derive_seed(config.seed, kSampleStream));
    const synth::SceneConfig scene_cfg = config.scene_config();
    const float inv_batch = 1.0f / static_cast<float>(config.batch);

    for (std::uint64_t step = 0; step < config.steps; ++step) {
        for (auto& p : leaves) p.zero_grad();
        LogRow row{step, 0.0, 0.0, 0.0, config.lr_at(step)};
        for (std::size_t b = 0; b < config.batch; ++b) {
            const std::uint64_t scene_seed = config.train_seeds.begin + sampler.below(config.train_seeds.size());
            try {
                const Sample s = make_sample(scene_seed, scene_cfg);
                auto out = pipeline::forward_full(s.image, &s.targets, params, config.branch, config.alpha);
                const auto& loss = *out.loss;
                backward(config.batch == 1 ? loss.total_tensor : scale(loss.total_tensor, inv_batch));
                row.l_inst += loss.l_inst / static_cast<double>(config.batch);
                row.l_joint += loss.l_joint / static_cast<double>(config.batch);
                row.total += loss.total / static_cast<double>(config.batch);
            } catch (const NumericError& e) {
                throw NumericError("non-finite value at step " + std::to_string(step) + " on scene seed " +
                                   std::to_string(scene_seed) + ": " + e.what());
            }
        }
        adam.hyper.lr = row.lr;
        adam_step<float>(leaves, adam);
        if (on_step) on_step(row);
    }
    return {make_checkpoint(params, config, config.steps), std::move(params)};
}

EvalReport evaluate(const ModelParams<float>& params, const RunConfig& config, SeedRange seeds) {
    NoGradGuard no_grad;
    EvalReport report;
    report.metric.radius_frac = config.pck_radius;
    const synth::SceneConfig scene_cfg = config.scene_config();
    pipeline::InferenceOptions inference;
    inference.peak_threshold = config.center_threshold;
    inference.max_instances = synth::kMaxPersons;
    for (std::uint64_t seed = seeds.begin; seed < seeds.end; ++seed) {
        const synth::Scene scene = synth::generate_scene(seed, scene_cfg);
        const auto out = pipeline::forward_full<float>(pipeline::image_tensor<float>(scene.image), nullptr, params,
                                                config.branch, config.alpha, inference);
        const auto joints = pipeline::decode_pose(out.heatmaps);
        std::vector<synth::PredictedPose> preds;
        for (std::size_t n = 0; n < joints.size(); ++n) {
            const double s = static_cast<double>(pipeline::kStride);
            preds.push_back(synth::PredictedPose{synth::Point{out.centers[n].x * s, out.centers[n].y * s}, joints[n]});
        }
        report.metric.merge(synth::pck_evaluate(preds, scene, config.pck_radius));
        ++report.scenes;
        report.gt_instances += scene.persons.size();
        report.detected_instances += preds.size();
    }
    return report;
}

EvalReport evaluate_checkpoint(const Checkpoint& ckpt, const RunConfig& config, SeedRange seeds) {
    const RunConfig stored = checkpoint_config(ckpt);
    if (!(stored.dims == config.dims)) {
        throw ConfigError("checkpoint dims (c=" + std::to_string(stored.dims.c) + ", d=" + std::to_string(stored.dims.d) +
                          ", joints=" + std::to_string(stored.dims.joints) + ", " + std::to_string(stored.dims.height) +
                          "x" + std::to_string(stored.dims.width) + ", hidden=" + std::to_string(stored.dims.hidden) +
                          ") do not match the config");
    }
    return evaluate(params_from_checkpoint(ckpt, config.dims), config, seeds);
}

bool GradcheckReport::passed() const {
    return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::vector<std::string> gradcheck_selectors() { return {"cim", "cjm", "adfm", "ijr", "jir", "decoder", "full"}; }

GradcheckReport gradcheck(std::string_view selector, std::uint64_t seed, bool tamper, double eps) {
    const auto start = Clock::now();
    Rng rng(seed);
    Fixture f = build_fixture(selector, rng);

    for (auto& [name, t] : f.leaves) t.zero_grad();
    backward(f.objective());
    const std::function<D()> value = [&f] {
        NoGradGuard no_grad;
        return f.objective().item();
    };

    GradcheckReport report;
    report.selector = std::string(selector);
    for (std::size_t i = 0; i < f.leaves.size(); ++i) {
        auto& [name, leaf] = f.leaves[i];
        std::vector<D> analytic(leaf.numel(), 0.0);
        if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
        if (tamper && i == 0) {
            for (auto& g : analytic) g = -g;
        }
        const Tensor<D> numeric = finite_diff_gradient<D>(value, leaf, eps);
        GradcheckEntry entry{name, leaf.numel(), 0.0, true};
        for (std::size_t k = 0; k < analytic.size(); ++k) {
            entry.max_rel_err = std::max(entry.max_rel_err, gradient_error(analytic[k], numeric.data()[k]));
        }
        entry.passed = entry.max_rel_err < kGradcheckTolerance;
        report.entries.push_back(std::move(entry));
    }
    report.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return report;
}

DumpResult dump_attention(const Checkpoint& ckpt, std::uint64_t scene_seed, const std::string& out_dir) {
    const RunConfig config = checkpoint_config(ckpt);
    const ModelParams<float> params = params_from_checkpoint(ckpt, config.dims);
    const std::filesystem::path dir(out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());

    NoGradGuard no_grad;
    const Sample s = make_sample(scene_seed, config.scene_config());
    DumpResult result;
    result.instances = s.targets.centers.size();
    if (result.instances > 0) {
        const auto out = pipeline::forward_full(s.image, &s.targets, params, config.branch, config.alpha);
        const auto emit = [&](const std::string& stem, std::span<const float> values, std::size_t rows, std::size_t cols) {
            write_file(dir / (stem + ".csv"), matrix_csv(values, rows, cols));
            write_file(dir / (stem + ".pgm"), matrix_pgm(values, rows, cols));
            result.files.push_back(stem + ".csv");
            result.files.push_back(stem + ".pgm");
        };
        const auto emit_instance = [&](const std::string& branch, const auto& att) {
            if (!att) return;
            const auto& a = att->attention;
            emit("inst_" + branch, a.data(), a.dim(0), a.dim(1));
        };
        const auto emit_joint = [&](const std::string& branch, const auto& att) {
            if (!att) return;
            const auto& a = att->attention;
            const std::size_t k = a.dim(1);
            for (std::size_t n = 0; n < a.dim(0); ++n) {
                emit("joint_" + branch + "_" + std::to_string(n), a.data().subspan(n * k * k, k * k), k, k);
            }
        };
        emit_instance("ijr", out.attention.ijr_instance);
        emit_joint("ijr", out.attention.ijr_joint);
        emit_instance("jir", out.attention.jir_instance);
        emit_joint("jir", out.attention.jir_joint);
    }
    std::string manifest;
    for (const auto& name : result.files) manifest += name + "\n";
    write_file(dir / "manifest.txt", manifest);
    return result;
}

}  // namespace dhr::cli
