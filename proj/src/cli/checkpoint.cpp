#include "cli/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "tensor/errors.hpp"

namespace dhr::cli {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr std::string_view kStepPrefix = "# step = ";

template <typename U>
void put(std::string& out, U value) {
    char raw[sizeof(U)];
    std::memcpy(raw, &value, sizeof(U));
    out.append(raw, sizeof(U));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename U>
    U get(const char* what) {
        U value;
        std::memcpy(&value, take(sizeof(U), what), sizeof(U));
        return value;
    }

    const char* take(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
        }
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    bool done() const { return pos_ == bytes_.size(); }
    std::size_t pos() const { return pos_; }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

std::string with_step(const std::string& echo, std::uint64_t step) {
    return std::string(kStepPrefix) + std::to_string(step) + "\n" + echo;
}

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string out(kCheckpointMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("tensor name too long: " + t.name);
        if (t.shape.size() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("too many dimensions: " + t.name);
        if (shape_numel(t.shape) != t.data.size()) throw FormatError("shape does not match payload for " + t.name);
        put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
        out += t.name;
        put<std::uint8_t>(out, 0);
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
        for (std::size_t e : t.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
        out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
    }
    const std::string echo = with_step(ckpt.config_echo, ckpt.step);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(echo.size()));
    out += echo;
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    if (std::memcmp(r.take(4, "magic"), kCheckpointMagic, 4) != 0) throw FormatError("bad checkpoint magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>("tensor count");
    Checkpoint ckpt;
    std::set<std::string> names;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const auto len = r.get<std::uint16_t>("name length");
        t.name.assign(r.take(len, "name"), len);
        if (!names.insert(t.name).second) throw FormatError("duplicate tensor name '" + t.name + "'");
        const auto dtype = r.get<std::uint8_t>("dtype");
        if (dtype != 0) throw FormatError("unsupported dtype " + std::to_string(dtype) + " for '" + t.name + "'");
        const auto ndim = r.get<std::uint8_t>("ndim");
        std::size_t numel = 1;
        for (std::uint8_t k = 0; k < ndim; ++k) {
            t.shape.push_back(r.get<std::uint32_t>("extent"));
            numel *= t.shape.back();
        }
        if (numel > (bytes.size() - r.pos()) / sizeof(float)) throw FormatError("checkpoint truncated in payload of '" + t.name + "'");
        t.data.resize(numel);
        std::memcpy(t.data.data(), r.take(numel * sizeof(float), "payload"), numel * sizeof(float));
        ckpt.tensors.push_back(std::move(t));
    }
    const auto echo_len = r.get<std::uint32_t>("config length");
    std::string echo(r.take(echo_len, "config"), echo_len);
    if (!r.done()) throw FormatError("trailing bytes after checkpoint config");
    if (echo.rfind(kStepPrefix, 0) == 0) {
        const auto nl = echo.find('\n');
        try {
            ckpt.step = std::stoull(echo.substr(kStepPrefix.size(), nl - kStepPrefix.size()));
        } catch (const std::exception&) {
            throw FormatError("malformed step line in checkpoint config");
        }
        echo.erase(0, nl == std::string::npos ? echo.size() : nl + 1);
    }
    ckpt.config_echo = std::move(echo);
    return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const std::string bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_checkpoint(buf.str());
}

Checkpoint make_checkpoint(const pipeline::ModelParams<float>& params, const RunConfig& config, std::uint64_t step) {
    Checkpoint ckpt;
    for (const auto& [name, t] : params.named()) {
        const auto v = t.data();
        ckpt.tensors.push_back({name, t.shape(), std::vector<float>(v.begin(), v.end())});
    }
    ckpt.config_echo = format_config(config);
    ckpt.step = step;
    return ckpt;
}

pipeline::ModelParams<float> params_from_checkpoint(const Checkpoint& ckpt, const pipeline::ModelDims& dims) {
    pipeline::ModelParams<float> params = pipeline::init_params<float>(dims, 0);
    const auto named = params.named();
    if (ckpt.tensors.size() != named.size()) {
        throw ConfigError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                          std::to_string(named.size()));
    }
    for (const auto& [name, t] : named) {
        const NamedTensor* src = ckpt.find(name);
        if (!src) throw ConfigError("checkpoint is missing tensor '" + name + "'");
        if (src->shape != t.shape()) {
            throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(src->shape) + ", model expects " +
                              shape_str(t.shape()));
        }
        auto dst = Tensor<float>(t).leaf_data();
        std::copy(src->data.begin(), src->data.end(), dst.begin());
    }
    return params;
}

RunConfig checkpoint_config(const Checkpoint& ckpt) {
    return parse_config_text(ckpt.config_echo, "<checkpoint config>");
}

}  // namespace dhr::cli
