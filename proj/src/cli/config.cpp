#include "cli/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "tensor/errors.hpp"

namespace dhr::cli {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

struct Site {
    std::string_view source;
    std::size_t line;
    std::string_view key;

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError(std::string(source) + ":" + std::to_string(line) + ": key '" + std::string(key) +
                          "': " + what);
    }
};

std::uint64_t parse_u64(std::string_view v, const Site& site) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) site.fail("expected a non-negative integer, got '" + std::string(v) + "'");
    return out;
}

double parse_double(std::string_view v, const Site& site) {
    // from_chars for floating point is missing on some standard libraries.
    std::string s(v);
    std::istringstream in(s);
    in.imbue(std::locale::classic());
    double out = 0.0;
    in >> out;
    if (s.empty() || in.fail() || !in.eof() || !std::isfinite(out)) site.fail("expected a finite number, got '" + s + "'");
    return out;
}

bool parse_bool(std::string_view v, const Site& site) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    site.fail("expected true or false, got '" + std::string(v) + "'");
}

SeedRange parse_range(std::string_view v, const Site& site) {
    const auto dots = v.find("..");
    if (dots == std::string_view::npos) site.fail("expected a seed range 'a..b', got '" + std::string(v) + "'");
    SeedRange r{parse_u64(trim(v.substr(0, dots)), site), parse_u64(trim(v.substr(dots + 2)), site)};
    if (r.end <= r.begin) site.fail("seed range must be non-empty");
    return r;
}

std::vector<double> parse_list(std::string_view v, const Site& site) {
    std::vector<double> out;
    if (trim(v).empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto comma = v.find(',', start);
        out.push_back(parse_double(trim(v.substr(start, comma - start)), site));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string fmt_double(double v) {
    std::ostringstream out;
    out.imbue(std::locale::classic());
    out.precision(17);
    out << v;
    return out.str();
}

using Setter = std::function<void(RunConfig&, std::string_view, const Site&)>;

const std::map<std::string, Setter, std::less<>>& setters() {
    static const std::map<std::string, Setter, std::less<>> table{
        {"seed", [](RunConfig& c, std::string_view v, const Site& s) { c.seed = parse_u64(v, s); }},
        {"c", [](RunConfig& c, std::string_view v, const Site& s) { c.dims.c = parse_u64(v, s); }},
        {"d", [](RunConfig& c, std::string_view v, const Site& s) { c.dims.d = parse_u64(v, s); }},
        {"joints", [](RunConfig& c, std::string_view v, const Site& s) { c.dims.joints = parse_u64(v, s); }},
        {"height", [](RunConfig& c, std::string_view v, const Site& s) { c.dims.height = parse_u64(v, s); }},
        {"width", [](RunConfig& c, std::string_view v, const Site& s) { c.dims.width = parse_u64(v, s); }},
        {"hidden", [](RunConfig& c, std::string_view v, const Site& s) { c.dims.hidden = parse_u64(v, s); }},
        {"branch",
         [](RunConfig& c, std::string_view v, const Site& s) {
             try {
                 const relnet::BranchConfig b = relnet::BranchConfig::from_name(v);
                 c.branch.cim_ij = b.cim_ij;
                 c.branch.cjm_ij = b.cjm_ij;
                 c.branch.cjm_ji = b.cjm_ji;
                 c.branch.cim_ji = b.cim_ji;
             } catch (const ConfigError& e) {
                 s.fail(e.what());
             }
         }},
        {"adfm_in_dim", [](RunConfig& c, std::string_view v, const Site& s) { c.branch.adfm_in_dim = parse_bool(v, s); }},
        {"adfm_in_decoder",
         [](RunConfig& c, std::string_view v, const Site& s) { c.branch.adfm_in_decoder = parse_bool(v, s); }},
        {"alpha", [](RunConfig& c, std::string_view v, const Site& s) { c.alpha = parse_double(v, s); }},
        {"lr", [](RunConfig& c, std::string_view v, const Site& s) { c.adam.lr = parse_double(v, s); }},
        {"beta1", [](RunConfig& c, std::string_view v, const Site& s) { c.adam.beta1 = parse_double(v, s); }},
        {"beta2", [](RunConfig& c, std::string_view v, const Site& s) { c.adam.beta2 = parse_double(v, s); }},
        {"epsilon", [](RunConfig& c, std::string_view v, const Site& s) { c.adam.epsilon = parse_double(v, s); }},
        {"steps", [](RunConfig& c, std::string_view v, const Site& s) { c.steps = parse_u64(v, s); }},
        {"lr_drops", [](RunConfig& c, std::string_view v, const Site& s) { c.lr_drops = parse_list(v, s); }},
        {"lr_drop_factor", [](RunConfig& c, std::string_view v, const Site& s) { c.lr_drop_factor = parse_double(v, s); }},
        {"batch", [](RunConfig& c, std::string_view v, const Site& s) { c.batch = parse_u64(v, s); }},
        {"n_max", [](RunConfig& c, std::string_view v, const Site& s) { c.n_max = parse_u64(v, s); }},
        {"overlap_prob", [](RunConfig& c, std::string_view v, const Site& s) { c.overlap_prob = parse_double(v, s); }},
        {"train_seeds", [](RunConfig& c, std::string_view v, const Site& s) { c.train_seeds = parse_range(v, s); }},
        {"eval_seeds", [](RunConfig& c, std::string_view v, const Site& s) { c.eval_seeds = parse_range(v, s); }},
        {"pck_radius", [](RunConfig& c, std::string_view v, const Site& s) { c.pck_radius = parse_double(v, s); }},
        {"center_threshold",
         [](RunConfig& c, std::string_view v, const Site& s) { c.center_threshold = parse_double(v, s); }},
    };
    return table;
}

// Constraint checks keyed by the config key they belong to, so errors can
// point at the offending line.
std::string violation(const RunConfig& c, std::string_view key) {
    if (key == "alpha" && !(c.alpha > 0.0)) return "must be positive";
    if (key == "lr" && !(c.adam.lr > 0.0)) return "must be positive";
    if ((key == "beta1" && !(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0)) ||
        (key == "beta2" && !(c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0))) {
        return "must be in [0, 1)";
    }
    if (key == "epsilon" && !(c.adam.epsilon > 0.0)) return "must be positive";
    if (key == "lr_drop_factor" && !(c.lr_drop_factor > 0.0 && c.lr_drop_factor <= 1.0)) return "must be in (0, 1]";
    if (key == "lr_drops") {
        for (double f : c.lr_drops) {
            if (!(f > 0.0 && f < 1.0)) return "fractions must lie in (0, 1)";
        }
    }
    if (key == "batch" && c.batch == 0) return "must be positive";
    if (key == "n_max" && (c.n_max == 0 || c.n_max > synth::kMaxPersons)) {
        return "must be in [1, " + std::to_string(synth::kMaxPersons) + "]";
    }
    if (key == "overlap_prob" && !(c.overlap_prob >= 0.0 && c.overlap_prob <= 1.0)) return "must be in [0, 1]";
    if (key == "pck_radius" && !(c.pck_radius > 0.0)) return "must be positive";
    if (key == "center_threshold" && !(c.center_threshold > 0.0 && c.center_threshold < 1.0)) return "must be in (0, 1)";
    if ((key == "c" && c.dims.c == 0) || (key == "joints" && c.dims.joints == 0) || (key == "hidden" && c.dims.hidden == 0)) {
        return "must be positive";
    }
    if (key == "d" && (c.dims.d == 0 || c.dims.d % 2)) return "must be positive and even";
    if ((key == "height" && (c.dims.height == 0 || c.dims.height % pipeline::kStride)) ||
        (key == "width" && (c.dims.width == 0 || c.dims.width % pipeline::kStride))) {
        return "must be a positive multiple of " + std::to_string(pipeline::kStride);
    }
    return {};
}

}  // namespace

synth::SceneConfig RunConfig::scene_config() const {
    synth::SceneConfig s;
    s.n_max = n_max;
    s.height = dims.height;
    s.width = dims.width;
    s.joints = dims.joints;
    s.overlap_prob = overlap_prob;
    s.grid = pipeline::kStride;
    return s;
}

double RunConfig::lr_at(std::uint64_t step) const {
    double lr = adam.lr;
    for (double f : lr_drops) {
        if (step >= static_cast<std::uint64_t>(std::floor(f * static_cast<double>(steps)))) lr *= lr_drop_factor;
    }
    return lr;
}

void RunConfig::validate() const {
    for (const auto& [key, setter] : setters()) {
        const std::string why = violation(*this, key);
        if (!why.empty()) throw ConfigError("key '" + key + "': " + why);
    }
    branch.validate();
    dims.validate();
}

RunConfig parse_config_text(std::string_view text, std::string_view source) {
    RunConfig config;
    std::map<std::string, std::size_t, std::less<>> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(std::string(source) + ":" + std::to_string(line_no) + ": expected 'key = value', got '" +
                              std::string(line) + "'");
        }
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        const Site site{source, line_no, key};
        const auto it = setters().find(key);
        if (it == setters().end()) site.fail("unknown key");
        if (seen.count(key)) site.fail("duplicate key (first set on line " + std::to_string(seen.find(key)->second) + ")");
        seen.emplace(std::string(key), line_no);
        it->second(config, value, site);
    }
    for (const auto& [key, line] : seen) {
        const std::string why = violation(config, key);
        if (!why.empty()) Site{source, line, key}.fail(why);
    }
    config.validate();
    return config;
}

RunConfig parse_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::string format_config(const RunConfig& c) {
    std::ostringstream out;
    const auto range = [](const SeedRange& r) { return std::to_string(r.begin) + ".." + std::to_string(r.end); };
    std::string drops;
    for (std::size_t i = 0; i < c.lr_drops.size(); ++i) drops += (i ? ", " : "") + fmt_double(c.lr_drops[i]);
    out << "seed = " << c.seed << "\n"
        << "c = " << c.dims.c << "\n"
        << "d = " << c.dims.d << "\n"
        << "joints = " << c.dims.joints << "\n"
        << "height = " << c.dims.height << "\n"
        << "width = " << c.dims.width << "\n"
        << "hidden = " << c.dims.hidden << "\n"
        << "branch = " << c.branch.variant_name() << "\n"
        << "adfm_in_dim = " << (c.branch.adfm_in_dim ? "true" : "false") << "\n"
        << "adfm_in_decoder = " << (c.branch.adfm_in_decoder ? "true" : "false") << "\n"
        << "alpha = " << fmt_double(c.alpha) << "\n"
        << "lr = " << fmt_double(c.adam.lr) << "\n"
        << "beta1 = " << fmt_double(c.adam.beta1) << "\n"
        << "beta2 = " << fmt_double(c.adam.beta2) << "\n"
        << "epsilon = " << fmt_double(c.adam.epsilon) << "\n"
        << "steps = " << c.steps << "\n"
        << "lr_drops = " << drops << "\n"
        << "lr_drop_factor = " << fmt_double(c.lr_drop_factor) << "\n"
        << "batch = " << c.batch << "\n"
        << "n_max = " << c.n_max << "\n"
        << "overlap_prob = " << fmt_double(c.overlap_prob) << "\n"
        << "train_seeds = " << range(c.train_seeds) << "\n"
        << "eval_seeds = " << range(c.eval_seeds) << "\n"
        << "pck_radius = " << fmt_double(c.pck_radius) << "\n"
        << "center_threshold = " << fmt_double(c.center_threshold) << "\n";
    return out.str();
}

}  // namespace dhr::cli
