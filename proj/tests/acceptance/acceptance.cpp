// Acceptance suite. Each criterion prints exactly one PASS/FAIL line; the
// exit status is non-zero when any selected criterion fails.
//
//   dhrnet_acceptance                 run every criterion
//   dhrnet_acceptance convergence     run one
//   dhrnet_acceptance --list

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cli/checkpoint.hpp"
#include "cli/commands.hpp"
#include "relnet/relnet.hpp"
#include "tensor/errors.hpp"

using namespace dhr;
using namespace dhr::relnet;

namespace {

using TD = Tensor<double>;
using Clock = std::chrono::steady_clock;

struct Outcome {
    bool passed = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

TD random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
    return TD::from(shape, rng.uniform_vector<double>(shape_numel(shape), -scale, scale));
}

std::vector<double> values(const TD& t) { return {t.data().begin(), t.data().end()}; }

// Rows of the trailing [.., R, C] block; returns the worst |sum - 1|.
double worst_row_sum_error(const TD& att) {
    const std::size_t cols = att.shape().back();
    double worst = 0.0;
    const auto v = att.data();
    for (std::size_t r = 0; r < v.size() / cols; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += v[r * cols + c];
        worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
}

TD permute_instances(const TD& t, const std::vector<std::size_t>& perm) {
    const std::size_t row = t.numel() / t.dim(0);
    std::vector<double> v(t.numel());
    for (std::size_t i = 0; i < perm.size(); ++i)
        std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(perm[i] * row), row,
                    v.begin() + static_cast<std::ptrdiff_t>(i * row));
    return TD::from(t.shape(), std::move(v));
}

// --- criteria ----------------------------------------------------------------------

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    std::string failed;
    double worst = 0.0;
    for (const std::string& sel : cli::gradcheck_selectors()) {
        const cli::GradcheckReport r = cli::gradcheck(sel, 0);
        for (const auto& e : r.entries) worst = std::max(worst, e.max_rel_err);
        if (!r.passed()) failed += (failed.empty() ? "" : ",") + sel;
    }
    const double secs = seconds_since(t0);
    const bool ok = failed.empty() && secs < 120.0;
    return {ok, fmt("max_rel_err %.3g (< %.0e), %.1f s (< 120 s)%s", worst, cli::kGradcheckTolerance, secs,
                    failed.empty() ? "" : ("; failed: " + failed).c_str())};
}

Outcome attention_invariants() {
    Rng rng(20240601);
    double worst_row = 0.0, worst_perm = 0.0;
    std::size_t locality_breaks = 0, residual_breaks = 0, singleton_breaks = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.below(6), k = 1 + rng.below(8);
        const std::size_t d = 1 + rng.below(4), h = 1 + rng.below(4), w = 1 + rng.below(4);
        const TD f_inst = random_tensor({n, d, h, w}, rng);
        const TD f_pos = random_tensor({n, 2 * (1 + rng.below(3))}, rng);
        const TD f_joint = random_tensor({n, k, h, w}, rng);
        const CjmParams<double> cjm = make_cjm_params<double>(k, rng);

        InstanceAttention<double> ia;
        const TD cim_out = cim_forward(f_inst, f_pos, &ia);
        const auto [cjm_out, ja] = cjm_forward(f_joint, cjm);
        worst_row = std::max({worst_row, worst_row_sum_error(ia.attention), worst_row_sum_error(ja.attention)});

        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        const TD permuted = cim_forward(permute_instances(f_inst, perm), permute_instances(f_pos, perm));
        const auto expect = values(permute_instances(cim_out, perm)), got = values(permuted);
        for (std::size_t i = 0; i < got.size(); ++i) worst_perm = std::max(worst_perm, std::abs(got[i] - expect[i]));

        if (n > 1) {
            std::vector<double> changed = values(f_joint);
            const std::size_t victim = rng.below(n), row = k * h * w;
            for (std::size_t i = victim * row; i < (victim + 1) * row; ++i) changed[i] += rng.uniform(-3.0, 3.0);
            const TD other = cjm_forward(TD::from(f_joint.shape(), changed), cjm).first;
            for (std::size_t i = 0; i < other.numel(); ++i) {
                if (i / row != victim && other.data()[i] != cjm_out.data()[i]) {
                    ++locality_breaks;
                    break;
                }
            }
        }

        CjmParams<double> zero_v = cjm;
        zero_v.v_weight = TD::zeros({k, k, 1, 1});
        zero_v.v_bias = TD::zeros({k});
        if (values(cjm_forward(f_joint, zero_v).first) != values(f_joint)) ++residual_breaks;

        const TD single = random_tensor({1, d, h, w}, rng);
        const auto doubled = values(cim_forward(single, random_tensor({1, 2}, rng)));
        for (std::size_t i = 0; i < doubled.size(); ++i) {
            if (doubled[i] != 2.0 * single.data()[i]) {
                ++singleton_breaks;
                break;
            }
        }
    }
    const bool ok = worst_row <= 1e-6 && worst_perm <= 1e-5 && !locality_breaks && !residual_breaks && !singleton_breaks;
    return {ok, fmt("100 configs: row-sum err %.2g (<= 1e-6), permutation err %.2g (<= 1e-5), "
                    "locality/residual/singleton breaks %zu/%zu/%zu",
                    worst_row, worst_perm, locality_breaks, residual_breaks, singleton_breaks)};
}

Outcome derived_oracles() {
    // Printed by tests/oracles/scalar_softmax.py.
    const double cim_att[4] = {0.9820137900, 0.0179862100, 0.5, 0.5};
    const double cim_logits[4] = {4, 0, 0, 0};
    const double cjm_att[4] = {0.9975273768, 0.0024726232, 0.8807970780, 0.1192029220};
    const double cjm_logits[4] = {9, 3, 3, 1};

    InstanceAttention<double> ia;
    cim_forward(TD::from({2, 1, 1, 1}, {2.0, 0.0}), TD::zeros({2, 2}), &ia);
    const TD eye = TD::from({2, 2, 1, 1}, {1, 0, 0, 1}), zero = TD::zeros({2});
    const auto ja = cjm_forward(TD::from({1, 2, 1, 1}, {3.0, 1.0}), CjmParams<double>{eye, zero, eye, zero, eye, zero}).second;

    double worst = 0.0;
    for (int i = 0; i < 4; ++i) {
        worst = std::max({worst, std::abs(ia.attention.data()[i] - cim_att[i]), std::abs(ia.logits.data()[i] - cim_logits[i]),
                          std::abs(ja.attention.data()[i] - cjm_att[i]), std::abs(ja.logits.data()[i] - cjm_logits[i])});
    }
    return {worst <= 1e-4, fmt("CIM and CJM two-element examples, max deviation %.2g (<= 1e-4)", worst)};
}

Outcome convergence() {
    const cli::RunConfig cfg;
    const auto t0 = Clock::now();
    const cli::TrainResult r = cli::train(cfg);
    const cli::EvalReport e = cli::evaluate(r.params, cfg, cfg.eval_seeds);
    const double secs = seconds_since(t0);
    const bool ok = e.metric.pck >= 0.9 && secs < 900.0;
    return {ok, fmt("held-out PCK@0.1 %.4f (>= 0.9) over %zu scenes after %llu steps, %.0f s (< 900 s)", e.metric.pck,
                    e.scenes, static_cast<unsigned long long>(cfg.steps), secs)};
}

Outcome ablation(std::uint64_t steps, std::size_t seeds) {
    const std::vector<std::string> variants{"full", "ijr_only", "jir_only", "cim_cim", "cjm_cjm", "baseline"};
    std::map<std::string, double> mean;
    for (const std::string& v : variants) {
        double sum = 0.0;
        for (std::size_t s = 0; s < seeds; ++s) {
            cli::RunConfig cfg;
            cfg.overlap_prob = 0.8;
            cfg.branch = BranchConfig::from_name(v);
            cfg.steps = steps;
            cfg.seed = s;
            const cli::TrainResult r = cli::train(cfg);
            sum += cli::evaluate(r.params, cfg, cfg.eval_seeds).metric.pck;
        }
        mean[v] = sum / static_cast<double>(seeds);
        std::printf("  ablation %-9s mean PCK %.4f\n", v.c_str(), mean[v]);
        std::fflush(stdout);
    }
    bool ok = seeds >= 5;
    std::string worst_rival;
    double worst_gap = INFINITY;
    for (const std::string& v : variants) {
        if (v == "full") continue;
        const double gap = mean["full"] - mean[v];
        if (gap < worst_gap) worst_gap = gap, worst_rival = v;
        ok &= gap >= -0.01;
    }
    const bool baseline_best =
        std::all_of(variants.begin(), variants.end(), [&](const std::string& v) { return mean["baseline"] >= mean[v]; });
    ok &= !baseline_best;
    return {ok, fmt("overlap 0.8, %zu seeds x %llu steps: full %.4f, closest rival %s %.4f (margin %+.4f >= -0.01), "
                    "baseline %.4f%s",
                    seeds, static_cast<unsigned long long>(steps), mean["full"], worst_rival.c_str(), mean[worst_rival],
                    worst_gap, mean["baseline"], baseline_best ? " is the best variant" : " is not the best")};
}

Outcome reproducibility() {
    cli::RunConfig cfg;
    cfg.steps = 200;
    const std::string a = cli::serialize_checkpoint(cli::train(cfg).checkpoint);
    const std::string b = cli::serialize_checkpoint(cli::train(cfg).checkpoint);
    const auto path = std::filesystem::temp_directory_path() / "dhrnet_acceptance_repro.ckpt";
    const cli::Checkpoint ck = cli::deserialize_checkpoint(a);
    cli::save_checkpoint(path.string(), ck);
    std::ifstream in(path, std::ios::binary);
    const std::string on_disk{std::istreambuf_iterator<char>(in), {}};
    const bool roundtrip = on_disk == a && cli::load_checkpoint(path.string()) == ck;
    return {a == b && roundtrip, fmt("two %llu-step runs %s (%zu bytes); save/load %s",
                                     static_cast<unsigned long long>(cfg.steps), a == b ? "bit-identical" : "DIFFER",
                                     a.size(), roundtrip ? "bit-exact" : "NOT bit-exact")};
}

Outcome dump_contract() {
    cli::RunConfig cfg;
    cfg.steps = 50;
    const cli::Checkpoint ck = cli::train(cfg).checkpoint;
    const auto dir = std::filesystem::temp_directory_path() / "dhrnet_acceptance_dump";
    std::filesystem::remove_all(dir);
    std::uint64_t scene = 0;
    while (synth::generate_scene(scene, cfg.scene_config()).persons.size() < 3) ++scene;
    const cli::DumpResult d = cli::dump_attention(ck, scene, dir.string());

    double worst = 0.0;
    std::size_t csv = 0, pgm = 0, bad_headers = 0;
    for (const std::string& name : d.files) {
        std::ifstream in(dir / name, std::ios::binary);
        if (name.ends_with(".csv")) {
            ++csv;
            std::string line;
            while (std::getline(in, line)) {
                std::stringstream row(line);
                std::string cell;
                double sum = 0.0;
                while (std::getline(row, cell, ',')) sum += std::stod(cell);
                worst = std::max(worst, std::abs(sum - 1.0));
            }
        } else {
            ++pgm;
            const std::string bytes{std::istreambuf_iterator<char>(in), {}};
            // Square matrices: the side comes from the matching CSV's row count.
            std::ifstream rows_in(dir / (name.substr(0, name.size() - 4) + ".csv"));
            const auto side = static_cast<std::size_t>(
                std::count(std::istreambuf_iterator<char>(rows_in), std::istreambuf_iterator<char>(), '\n'));
            const std::string header = "P5\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
            if (bytes.rfind(header, 0) != 0 || bytes.size() != header.size() + side * side) ++bad_headers;
        }
    }
    const bool ok = csv > 0 && csv == pgm && worst <= 1e-5 && bad_headers == 0 &&
                    std::filesystem::exists(dir / "manifest.txt");
    return {ok, fmt("scene %llu (%zu persons): %zu CSV, %zu PGM; row-sum err %.2g (<= 1e-5); bad PGM headers %zu",
                    static_cast<unsigned long long>(scene), d.instances, csv, pgm, worst, bad_headers)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::vector<std::string> selected;
    bool list = false;
    std::uint64_t ablation_steps = cli::RunConfig{}.steps;
    std::size_t ablation_seeds = 5;
    app.add_option("criteria", selected, "Criteria to run (default: all)");
    app.add_flag("--list", list, "List criteria and exit");
    app.add_option("--ablation-steps", ablation_steps, "Training steps per ablation run");
    app.add_option("--ablation-seeds", ablation_seeds, "Seeds per ablation variant");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradients", gradient_suite},
        {"attention_invariants", attention_invariants},
        {"derived_oracles", derived_oracles},
        {"convergence", convergence},
        {"ablation", [&] { return ablation(ablation_steps, ablation_seeds); }},
        {"reproducibility", reproducibility},
        {"dump_contract", dump_contract},
    };
    if (list) {
        for (const auto& [name, fn] : criteria) std::printf("%s\n", name.c_str());
        return 0;
    }
    for (const std::string& s : selected) {
        if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == s; })) {
            std::fprintf(stderr, "unknown criterion '%s'\n", s.c_str());
            return 2;
        }
    }
    int failures = 0;
    for (const auto& [name, fn] : criteria) {
        if (!selected.empty() && std::find(selected.begin(), selected.end(), name) == selected.end()) continue;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        std::printf("%s %s: %s\n", o.passed ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
        failures += o.passed ? 0 : 1;
    }
    return failures ? 1 : 0;
}
