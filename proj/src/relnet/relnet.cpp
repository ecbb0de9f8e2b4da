#include "relnet/relnet.hpp"

#include <algorithm>
#include <cmath>

namespace dhr::relnet {

namespace {

template <typename T>
void require_instances(const Tensor<T>& t, const char* what) {
    if (!t.defined()) throw UsageError(std::string(what) + ": empty instance set; skip relation modules when N = 0");
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& t) {
    return permute(t, {1, 0});
}

template <typename T>
Tensor<T> gate_mlp(const Tensor<T>& v, const Tensor<T>& w1, const Tensor<T>& b1, const Tensor<T>& w2,
                   const Tensor<T>& b2) {
    return linear(relu(linear(v, w1, b1)), w2, b2);
}

}  // namespace

BranchConfig BranchConfig::from_name(std::string_view name) {
    if (name == "full") return full();
    if (name == "ijr_only") return ijr_only();
    if (name == "jir_only") return jir_only();
    if (name == "cim_cim") return cim_both();
    if (name == "cjm_cjm") return cjm_both();
    if (name == "baseline") return baseline();
    throw ConfigError("unknown branch variant '" + std::string(name) + "'");
}

std::string BranchConfig::variant_name() const {
    const auto same_modules = [this](const BranchConfig& o) {
        return cim_ij == o.cim_ij && cjm_ij == o.cjm_ij && cjm_ji == o.cjm_ji && cim_ji == o.cim_ji;
    };
    if (same_modules(full())) return "full";
    if (same_modules(ijr_only())) return "ijr_only";
    if (same_modules(jir_only())) return "jir_only";
    if (same_modules(cim_both())) return "cim_cim";
    if (same_modules(cjm_both())) return "cjm_cjm";
    if (same_modules(baseline())) return "baseline";
    throw ConfigError("unsupported relation module combination (CIM_IJ=" + std::to_string(cim_ij) +
                      " CJM_IJ=" + std::to_string(cjm_ij) + " CJM_JI=" + std::to_string(cjm_ji) +
                      " CIM_JI=" + std::to_string(cim_ji) + ")");
}

// --- parameters ---------------------------------------------------------------------

template <typename T>
Tensor<T> init_weight(const Shape& shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    return Tensor<T>::param(shape, rng.uniform_vector<T>(shape_numel(shape), -bound, bound));
}

template <typename T>
Tensor<T> init_bias(std::size_t n) {
    return Tensor<T>::param({n}, std::vector<T>(n, T(0)));
}

template <typename T>
CjmParams<T> make_cjm_params(std::size_t joints, Rng& rng) {
    CjmParams<T> p;
    p.q_weight = init_weight<T>({joints, joints, 1, 1}, joints, rng);
    p.q_bias = init_bias<T>(joints);
    p.k_weight = init_weight<T>({joints, joints, 1, 1}, joints, rng);
    p.k_bias = init_bias<T>(joints);
    p.v_weight = init_weight<T>({joints, joints, 1, 1}, joints, rng);
    p.v_bias = init_bias<T>(joints);
    return p;
}

template <typename T>
AdfmParams<T> make_adfm_params(std::size_t concat_channels, std::size_t out_channels, Rng& rng) {
    const std::size_t hidden = std::max<std::size_t>(1, concat_channels / kGateReduction);
    AdfmParams<T> p;
    p.fc1_weight = init_weight<T>({hidden, concat_channels}, concat_channels, rng);
    p.fc1_bias = init_bias<T>(hidden);
    p.fc2_weight = init_weight<T>({concat_channels, hidden}, hidden, rng);
    p.fc2_bias = init_bias<T>(concat_channels);
    p.fuse_weight = init_weight<T>({out_channels, concat_channels, 1, 1}, concat_channels, rng);
    p.fuse_bias = init_bias<T>(out_channels);
    return p;
}

template <typename T>
DecoderParams<T> make_decoder_params(std::size_t in_channels, std::size_t joints, std::size_t hidden, Rng& rng) {
    const std::size_t mlp_hidden = std::max<std::size_t>(1, in_channels / kGateReduction);
    DecoderParams<T> p;
    p.fc1_weight = init_weight<T>({mlp_hidden, in_channels}, in_channels, rng);
    p.fc1_bias = init_bias<T>(mlp_hidden);
    p.fc2_weight = init_weight<T>({in_channels, mlp_hidden}, mlp_hidden, rng);
    p.fc2_bias = init_bias<T>(in_channels);
    p.spatial_weight = init_weight<T>({1, 2, kSpatialKernel, kSpatialKernel}, 2 * kSpatialKernel * kSpatialKernel, rng);
    p.spatial_bias = init_bias<T>(1);
    p.head1_weight = init_weight<T>({hidden, in_channels, 3, 3}, in_channels * 9, rng);
    p.head1_bias = init_bias<T>(hidden);
    p.head2_weight = init_weight<T>({joints, hidden, 1, 1}, hidden, rng);
    p.head2_bias = init_bias<T>(joints);
    return p;
}

template <typename T>
RelationParams<T> make_relation_params(std::size_t inst_dim, std::size_t joints, std::size_t hidden, Rng& rng) {
    RelationParams<T> p;
    p.ijr_cjm = make_cjm_params<T>(joints, rng);
    p.ijr_adfm = make_adfm_params<T>(inst_dim + joints, joints, rng);
    p.jir_cjm = make_cjm_params<T>(joints, rng);
    p.jir_adfm = make_adfm_params<T>(joints + inst_dim, inst_dim, rng);
    p.decoder = make_decoder_params<T>(joints + inst_dim, joints, hidden, rng);
    return p;
}

// --- CIM ------------------------------------------------------------------------------

template <typename T>
InstanceAttention<T> cim_attention(const Tensor<T>& f_inst, const Tensor<T>& f_pos) {
    require_instances(f_inst, "cim_attention");
    require_instances(f_pos, "cim_attention");
    const Shape& s = f_inst.shape();
    if (s.size() != 4) throw DimensionError("cim_attention: instance features must be [N,d,h,w], got " + shape_str(s));
    if (f_pos.ndim() != 2 || f_pos.dim(0) != s[0]) {
        throw DimensionError("cim_attention: positional embedding " + shape_str(f_pos.shape()) +
                             " does not match " + std::to_string(s[0]) + " instances");
    }
    const Tensor<T> flat = reshape(f_inst, {s[0], s[1] * s[2] * s[3]});
    const Tensor<T> appearance = matmul(flat, transpose2d(flat));
    const Tensor<T> position = matmul(f_pos, transpose2d(f_pos));
    InstanceAttention<T> out;
    out.logits = add(appearance, position);
    out.attention = softmax_rows(out.logits);
    return out;
}

template <typename T>
Tensor<T> cim_forward(const Tensor<T>& f_inst, const Tensor<T>& f_pos, InstanceAttention<T>* attention_out) {
    InstanceAttention<T> att = cim_attention(f_inst, f_pos);
    const Shape& s = f_inst.shape();
    const Tensor<T> flat = reshape(f_inst, {s[0], s[1] * s[2] * s[3]});
    const Tensor<T> mixed = reshape(matmul(att.attention, flat), s);
    if (attention_out) *attention_out = std::move(att);
    return add(mixed, f_inst);
}

// --- CJM ------------------------------------------------------------------------------

template <typename T>
std::pair<Tensor<T>, JointAttention<T>> cjm_forward(const Tensor<T>& f_joint, const CjmParams<T>& params) {
    require_instances(f_joint, "cjm_forward");
    const Shape& s = f_joint.shape();
    if (s.size() != 4) throw DimensionError("cjm_forward: joint features must be [N,K,h,w], got " + shape_str(s));
    const std::size_t n = s[0], k = s[1], hw = s[2] * s[3];
    const Tensor<T> q = reshape(conv2d(f_joint, params.q_weight, params.q_bias), {n, k, hw});
    const Tensor<T> kt = permute(reshape(conv2d(f_joint, params.k_weight, params.k_bias), {n, k, hw}), {0, 2, 1});
    const Tensor<T> v = reshape(conv2d(f_joint, params.v_weight, params.v_bias), {n, k, hw});
    JointAttention<T> att;
    att.logits = matmul(q, kt);
    att.attention = softmax_rows(att.logits);
    Tensor<T> out = add(reshape(matmul(att.attention, v), s), f_joint);
    return {std::move(out), std::move(att)};
}

// --- ADFM -----------------------------------------------------------------------------

template <typename T>
Tensor<T> adfm_fuse(const Tensor<T>& a, const Tensor<T>& b, const AdfmParams<T>& params, bool use_gate) {
    Tensor<T> cat = concat_channels<T>({a, b});
    const std::size_t width = cat.dim(1);
    if (params.fuse_weight.dim(1) != width || params.fc2_weight.dim(0) != width) {
        throw DimensionError("adfm_fuse: concatenated width " + std::to_string(width) +
                             " does not match fusion parameters " + shape_str(params.fuse_weight.shape()));
    }
    if (use_gate) {
        const Tensor<T> gate = sigmoid(gate_mlp(global_pool(PoolKind::avg, cat), params.fc1_weight,
                                                params.fc1_bias, params.fc2_weight, params.fc2_bias));
        cat = mul(cat, gate);
    }
    return conv2d(cat, params.fuse_weight, params.fuse_bias);
}

// --- branches ---------------------------------------------------------------------------

template <typename T>
Tensor<T> ijr_branch(const Tensor<T>& f_inst, const Tensor<T>& f_joint, const Tensor<T>& f_pos,
                     const RelationParams<T>& params, const BranchConfig& config,
                     AttentionBundle<T>* attention_out) {
    if (!config.enable_ijr()) return f_joint;
    if (f_inst.dim(0) != f_joint.dim(0)) throw DimensionError("ijr_branch: instance count mismatch");
    Tensor<T> inst = f_inst;
    if (config.cim_ij) {
        InstanceAttention<T> att;
        inst = cim_forward(f_inst, f_pos, &att);
        if (attention_out) attention_out->ijr_instance = std::move(att);
    }
    Tensor<T> fused = adfm_fuse(inst, f_joint, params.ijr_adfm, config.adfm_in_dim);
    if (config.cjm_ij) {
        auto [out, att] = cjm_forward(fused, params.ijr_cjm);
        if (attention_out) attention_out->ijr_joint = std::move(att);
        fused = std::move(out);
    }
    return fused;
}

template <typename T>
Tensor<T> jir_branch(const Tensor<T>& f_inst, const Tensor<T>& f_joint, const Tensor<T>& f_pos,
                     const RelationParams<T>& params, const BranchConfig& config,
                     AttentionBundle<T>* attention_out) {
    if (!config.enable_jir()) return f_inst;
    if (f_inst.dim(0) != f_joint.dim(0)) throw DimensionError("jir_branch: instance count mismatch");
    Tensor<T> joint = f_joint;
    if (config.cjm_ji) {
        auto [out, att] = cjm_forward(f_joint, params.jir_cjm);
        if (attention_out) attention_out->jir_joint = std::move(att);
        joint = std::move(out);
    }
    Tensor<T> fused = adfm_fuse(joint, f_inst, params.jir_adfm, config.adfm_in_dim);
    if (config.cim_ji) {
        InstanceAttention<T> att;
        fused = cim_forward(fused, f_pos, &att);
        if (attention_out) attention_out->jir_instance = std::move(att);
    }
    return fused;
}

template <typename T>
DimOutput<T> dim_forward(const Tensor<T>& f_inst, const Tensor<T>& f_joint, const Tensor<T>& f_pos,
                         const BranchConfig& config, const RelationParams<T>& params) {
    config.validate();
    DimOutput<T> out;
    out.ij = ijr_branch(f_inst, f_joint, f_pos, params, config, &out.attention);
    out.ji = jir_branch(f_inst, f_joint, f_pos, params, config, &out.attention);
    return out;
}

// --- decoder ------------------------------------------------------------------------------

template <typename T>
Tensor<T> pose_decode(const Tensor<T>& f_ij, const Tensor<T>& f_ji, const DecoderParams<T>& params,
                      bool use_gates, DecoderTrace<T>* trace) {
    Tensor<T> x = concat_channels<T>({f_ij, f_ji});
    if (params.head1_weight.dim(1) != x.dim(1)) {
        throw DimensionError("pose_decode: decoder expects " + std::to_string(params.head1_weight.dim(1)) +
                             " channels, got " + std::to_string(x.dim(1)));
    }
    if (use_gates) {
        const Tensor<T> avg = gate_mlp(global_pool(PoolKind::avg, x), params.fc1_weight, params.fc1_bias,
                                       params.fc2_weight, params.fc2_bias);
        const Tensor<T> mx = gate_mlp(global_pool(PoolKind::max, x), params.fc1_weight, params.fc1_bias,
                                      params.fc2_weight, params.fc2_bias);
        const Tensor<T> channel_gate = sigmoid(add(avg, mx));
        x = mul(x, channel_gate);
        const Tensor<T> pooled = concat_channels<T>({channel_pool(PoolKind::avg, x), channel_pool(PoolKind::max, x)});
        const Tensor<T> spatial_gate = sigmoid(conv2d(pooled, params.spatial_weight, params.spatial_bias,
                                                      {.padding = kSpatialKernel / 2}));
        x = mul(x, spatial_gate);
        if (trace) {
            trace->channel_gate = channel_gate;
            trace->spatial_gate = spatial_gate;
        }
    }
    const Tensor<T> hidden = relu(conv2d(x, params.head1_weight, params.head1_bias, {.padding = 1}));
    return conv2d(hidden, params.head2_weight, params.head2_bias);
}

#define DHR_INSTANTIATE_RELNET(T)                                                                          \
    template Tensor<T> init_weight<T>(const Shape&, std::size_t, Rng&);                                    \
    template Tensor<T> init_bias<T>(std::size_t);                                                          \
    template CjmParams<T> make_cjm_params<T>(std::size_t, Rng&);                                           \
    template AdfmParams<T> make_adfm_params<T>(std::size_t, std::size_t, Rng&);                            \
    template DecoderParams<T> make_decoder_params<T>(std::size_t, std::size_t, std::size_t, Rng&);         \
    template RelationParams<T> make_relation_params<T>(std::size_t, std::size_t, std::size_t, Rng&);       \
    template InstanceAttention<T> cim_attention<T>(const Tensor<T>&, const Tensor<T>&);                    \
    template Tensor<T> cim_forward<T>(const Tensor<T>&, const Tensor<T>&, InstanceAttention<T>*);          \
    template std::pair<Tensor<T>, JointAttention<T>> cjm_forward<T>(const Tensor<T>&, const CjmParams<T>&); \
    template Tensor<T> adfm_fuse<T>(const Tensor<T>&, const Tensor<T>&, const AdfmParams<T>&, bool);       \
    template Tensor<T> ijr_branch<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                                     const RelationParams<T>&, const BranchConfig&, AttentionBundle<T>*);  \
    template Tensor<T> jir_branch<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                                     const RelationParams<T>&, const BranchConfig&, AttentionBundle<T>*);  \
    template DimOutput<T> dim_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                         const BranchConfig&, const RelationParams<T>&);                   \
    template Tensor<T> pose_decode<T>(const Tensor<T>&, const Tensor<T>&, const DecoderParams<T>&, bool,   \
                                      DecoderTrace<T>*);

DHR_INSTANTIATE_RELNET(float)
DHR_INSTANTIATE_RELNET(double)

#undef DHR_INSTANTIATE_RELNET

}  // namespace dhr::relnet
