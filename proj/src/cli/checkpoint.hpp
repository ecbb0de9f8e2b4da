#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cli/config.hpp"

namespace dhr::cli {

inline constexpr char kCheckpointMagic[4] = {'D', 'H', 'R', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;

    bool operator==(const NamedTensor&) const = default;
};

// Layout (little-endian, no padding):
//   "DHR1" | u32 version | u32 count
//   count x { u16 name_len | name | u8 dtype (0 = f32) | u8 ndim | u32 extents[ndim] | payload }
//   u32 config_len | config text
// The step counter rides in the config text as a `# step = N` line.
struct Checkpoint {
    std::vector<NamedTensor> tensors;
    std::string config_echo;
    std::uint64_t step = 0;

    const NamedTensor* find(const std::string& name) const;
    bool operator==(const Checkpoint&) const = default;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
// Throws FormatError on bad magic, truncation, trailing bytes, unknown
// dtype or duplicate names. Nothing is returned on failure.
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint make_checkpoint(const pipeline::ModelParams<float>& params, const RunConfig& config, std::uint64_t step);

// Rebuilds parameters for the given dims. Throws ConfigError when names or
// shapes disagree with the registry for those dims.
pipeline::ModelParams<float> params_from_checkpoint(const Checkpoint& ckpt, const pipeline::ModelDims& dims);

// The config stored in the checkpoint.
RunConfig checkpoint_config(const Checkpoint& ckpt);

}  // namespace dhr::cli
