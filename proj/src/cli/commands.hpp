#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "cli/checkpoint.hpp"
#include "cli/config.hpp"

namespace dhr::cli {

struct LogRow {
    std::uint64_t step = 0;
    double l_inst = 0.0;
    double l_joint = 0.0;
    double total = 0.0;
    double lr = 0.0;
};

// "step,l_inst,l_joint,total,lr"
std::string format_log_row(const LogRow& row);

struct TrainResult {
    Checkpoint checkpoint;
    pipeline::ModelParams<float> params;
};

// Seeds everything from config.seed. A non-finite loss aborts with a
// NumericError naming the step and scene seed.
TrainResult train(const RunConfig& config, const std::function<void(const LogRow&)>& on_step = {});

struct EvalReport {
    synth::MetricReport metric;
    std::size_t scenes = 0;
    std::size_t gt_instances = 0;
    std::size_t detected_instances = 0;
};

// Inference (detected centers) over every scene in the range.
EvalReport evaluate(const pipeline::ModelParams<float>& params, const RunConfig& config, SeedRange seeds);
// Checks the checkpoint's stored dims against config first (ConfigError).
EvalReport evaluate_checkpoint(const Checkpoint& ckpt, const RunConfig& config, SeedRange seeds);

inline constexpr double kGradcheckEps = 1e-4;
inline constexpr double kGradcheckTolerance = 1e-3;

struct GradcheckEntry {
    std::string name;
    std::size_t size = 0;
    double max_rel_err = 0.0;
    bool passed = false;
};

struct GradcheckReport {
    std::string selector;
    std::vector<GradcheckEntry> entries;
    double seconds = 0.0;

    bool passed() const;
};

std::vector<std::string> gradcheck_selectors();

// Double precision at minimal dims (N=2, K=2, d=4, h=w=4). tamper negates
// the analytic gradient of the first checked tensor. Unknown selector ->
// UsageError.
GradcheckReport gradcheck(std::string_view selector, std::uint64_t seed, bool tamper = false,
                          double eps = kGradcheckEps);

struct DumpResult {
    std::size_t instances = 0;
    std::vector<std::string> files;  // relative to the output directory
};

// Ground-truth centers of the scene feed the instance branch so the dumped
// matrices line up with the scene's persons. Writes manifest.txt listing
// every file written.
DumpResult dump_attention(const Checkpoint& ckpt, std::uint64_t scene_seed, const std::string& out_dir);

// Shortest round-trip decimal, always with a decimal point or exponent.
std::string format_number(float value);

}  // namespace dhr::cli
