#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "tensor/ops.hpp"
#include "tensor/random.hpp"

// Relation core: cross-instance attention (CIM), cross-joint attention (CJM),
// adaptive channel-gated fusion (ADFM), the two complementary branches, the
// dual-path module and the attention-gated pose decoder.
//
// Tensor layouts:
//   instance features  [N, d, h, w]
//   joint features     [N, K, h, w]
//   positional embed.  [N, d]
//   instance attention [N, N]      row i attends over source instances j
//   joint attention    [N, K, K]   per instance, row k attends over joints i
namespace dhr::relnet {

template <typename T>
struct InstanceAttention {
    Tensor<T> attention;  // [N, N], row-stochastic
    Tensor<T> logits;     // [N, N], appearance Gram + positional Gram
};

template <typename T>
struct JointAttention {
    Tensor<T> attention;  // [N, K, K]
    Tensor<T> logits;     // [N, K, K]
};

// Three 1x1 projections K -> K.
template <typename T>
struct CjmParams {
    Tensor<T> q_weight, q_bias;
    Tensor<T> k_weight, k_bias;
    Tensor<T> v_weight, v_bias;
};

// Channel gate (two linear layers, reduction r, relu between) and a 1x1 fuse
// conv from the concatenated width to the downstream module's width.
template <typename T>
struct AdfmParams {
    Tensor<T> fc1_weight, fc1_bias;
    Tensor<T> fc2_weight, fc2_bias;
    Tensor<T> fuse_weight, fuse_bias;
};

// CBAM-style gates followed by a 3x3 + relu and a 1x1 head to K channels.
template <typename T>
struct DecoderParams {
    Tensor<T> fc1_weight, fc1_bias;
    Tensor<T> fc2_weight, fc2_bias;
    Tensor<T> spatial_weight, spatial_bias;  // [1, 2, 7, 7], [1]
    Tensor<T> head1_weight, head1_bias;      // [hidden, c, 3, 3]
    Tensor<T> head2_weight, head2_bias;      // [K, hidden, 1, 1]
};

template <typename T>
struct RelationParams {
    CjmParams<T> ijr_cjm;
    AdfmParams<T> ijr_adfm;  // [d + K] -> K
    CjmParams<T> jir_cjm;
    AdfmParams<T> jir_adfm;  // [K + d] -> d
    DecoderParams<T> decoder;
};

inline constexpr std::size_t kGateReduction = 4;
inline constexpr std::size_t kSpatialKernel = 7;

// Which of the four relation modules run, in the column order
// CIM_IJ, CJM_IJ, CJM_JI, CIM_JI, plus the two fusion toggles. Module order
// inside a branch is fixed (IJR: CIM then CJM; JIR: CJM then CIM).
struct BranchConfig {
    bool cim_ij = true;
    bool cjm_ij = true;
    bool cjm_ji = true;
    bool cim_ji = true;
    bool adfm_in_dim = true;
    bool adfm_in_decoder = true;

    bool enable_ijr() const { return cim_ij || cjm_ij; }
    bool enable_jir() const { return cjm_ji || cim_ji; }

    static BranchConfig full() { return {}; }
    static BranchConfig ijr_only() { return {true, true, false, false}; }
    static BranchConfig jir_only() { return {false, false, true, true}; }
    static BranchConfig cim_both() { return {true, false, false, true}; }
    static BranchConfig cjm_both() { return {false, true, true, false}; }
    static BranchConfig baseline() { return {false, false, false, false}; }

    // "full", "ijr_only", "jir_only", "cim_cim", "cjm_cjm", "baseline".
    static BranchConfig from_name(std::string_view name);
    // Throws ConfigError when the module set is not one of the six variants.
    std::string variant_name() const;
    void validate() const { (void)variant_name(); }

    bool operator==(const BranchConfig&) const = default;
};

template <typename T>
struct AttentionBundle {
    std::optional<InstanceAttention<T>> ijr_instance;
    std::optional<JointAttention<T>> ijr_joint;
    std::optional<JointAttention<T>> jir_joint;
    std::optional<InstanceAttention<T>> jir_instance;
};

template <typename T>
struct DimOutput {
    Tensor<T> ij;  // [N, K, h, w]; raw joint features when IJR is off
    Tensor<T> ji;  // [N, d, h, w]; raw instance features when JIR is off
    AttentionBundle<T> attention;
};

// Intermediate gates of the decoder, exposed for inspection.
template <typename T>
struct DecoderTrace {
    Tensor<T> channel_gate;  // [N, c]
    Tensor<T> spatial_gate;  // [N, 1, h, w]
};

// --- parameter construction ----------------------------------------------------

template <typename T>
CjmParams<T> make_cjm_params(std::size_t joints, Rng& rng);

template <typename T>
AdfmParams<T> make_adfm_params(std::size_t concat_channels, std::size_t out_channels, Rng& rng);

template <typename T>
DecoderParams<T> make_decoder_params(std::size_t in_channels, std::size_t joints, std::size_t hidden, Rng& rng);

template <typename T>
RelationParams<T> make_relation_params(std::size_t inst_dim, std::size_t joints, std::size_t hidden, Rng& rng);

// Centered uniform in +-1/sqrt(fan_in).
template <typename T>
Tensor<T> init_weight(const Shape& shape, std::size_t fan_in, Rng& rng);

template <typename T>
Tensor<T> init_bias(std::size_t n);

// --- modules ----------------------------------------------------------------------

// Parameter-free instance attention. Each instance is flattened to d*h*w.
template <typename T>
InstanceAttention<T> cim_attention(const Tensor<T>& f_inst, const Tensor<T>& f_pos);

// output_i = sum_j Att[i,j] * F_j + F_i, reshaped back to [N,d,h,w].
template <typename T>
Tensor<T> cim_forward(const Tensor<T>& f_inst, const Tensor<T>& f_pos,
                      InstanceAttention<T>* attention_out = nullptr);

template <typename T>
std::pair<Tensor<T>, JointAttention<T>> cjm_forward(const Tensor<T>& f_joint, const CjmParams<T>& params);

// concat -> GAP -> MLP -> sigmoid gate -> per-channel scale -> 1x1 conv.
// With use_gate false the gate is skipped and only the 1x1 conv fuses.
template <typename T>
Tensor<T> adfm_fuse(const Tensor<T>& a, const Tensor<T>& b, const AdfmParams<T>& params, bool use_gate = true);

template <typename T>
Tensor<T> ijr_branch(const Tensor<T>& f_inst, const Tensor<T>& f_joint, const Tensor<T>& f_pos,
                     const RelationParams<T>& params, const BranchConfig& config,
                     AttentionBundle<T>* attention_out = nullptr);

template <typename T>
Tensor<T> jir_branch(const Tensor<T>& f_inst, const Tensor<T>& f_joint, const Tensor<T>& f_pos,
                     const RelationParams<T>& params, const BranchConfig& config,
                     AttentionBundle<T>* attention_out = nullptr);

template <typename T>
DimOutput<T> dim_forward(const Tensor<T>& f_inst, const Tensor<T>& f_joint, const Tensor<T>& f_pos,
                         const BranchConfig& config, const RelationParams<T>& params);

// Heatmaps [N, K, h, w]; linear output.
template <typename T>
Tensor<T> pose_decode(const Tensor<T>& f_ij, const Tensor<T>& f_ji, const DecoderParams<T>& params,
                      bool use_gates, DecoderTrace<T>* trace = nullptr);

}  // namespace dhr::relnet
