#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pipeline/model.hpp"
#include "tensor/adam.hpp"

namespace dhr::cli {

// Half-open range [begin, end) of scene seeds.
struct SeedRange {
    std::uint64_t begin = 0;
    std::uint64_t end = 0;

    std::uint64_t size() const { return end - begin; }
    bool operator==(const SeedRange&) const = default;
};

struct RunConfig {
    pipeline::ModelDims dims;
    relnet::BranchConfig branch;
    double alpha = 1.0;
    AdamHyper adam;
    std::uint64_t steps = 5000;
    std::vector<double> lr_drops{1.0 / 3.0, 2.0 / 3.0};  // fractions of steps
    double lr_drop_factor = 0.1;
    std::size_t batch = 2;  // scenes per optimizer step
    std::size_t n_max = 4;
    double overlap_prob = 0.5;
    SeedRange train_seeds{0, 2000};
    SeedRange eval_seeds{1000000, 1000200};
    std::uint64_t seed = 0;
    double pck_radius = 0.1;
    double center_threshold = 0.3;

    synth::SceneConfig scene_config() const;
    // Learning rate in effect at a zero-based step.
    double lr_at(std::uint64_t step) const;
    // Throws ConfigError.
    void validate() const;
};

// Line-based `key = value`, `#` starts a comment. Absent keys keep their
// defaults. Errors name the source, line and key.
RunConfig parse_config_text(std::string_view text, std::string_view source = "<config>");
RunConfig parse_config(const std::string& path);

// Canonical text that parse_config_text reads back to an equal config.
std::string format_config(const RunConfig& config);

}  // namespace dhr::cli
