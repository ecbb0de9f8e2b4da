#include <cstdio>
#include <fstream>
#include <string>

#include "CLI11.hpp"
#include "dhrnet/dhrnet.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitNumeric = 2;

int exit_code(dhr_status status) {
    switch (status) {
        case DHR_OK: return kExitOk;
        case DHR_ERR_NUMERIC: return kExitNumeric;
        default: return kExitInvalid;
    }
}

int report(dhr_status status) {
    if (status != DHR_OK) std::fprintf(stderr, "error (%s): %s\n", dhr_status_name(status), dhr_last_error());
    return exit_code(status);
}

struct ConfigHandle {
    dhr_config* ptr = nullptr;
    ~ConfigHandle() { dhr_config_free(ptr); }
};

dhr_status load_config(const std::string& path, const uint64_t* seed, ConfigHandle& out) {
    dhr_status s = path.empty() ? dhr_config_default(&out.ptr) : dhr_config_load(path.c_str(), &out.ptr);
    if (s == DHR_OK && seed) s = dhr_config_set_seed(out.ptr, *seed);
    return s;
}

struct TrainLog {
    std::ofstream file;
    uint64_t steps = 0;
};

void on_train_step(const char* line, void* user) {
    auto* log = static_cast<TrainLog*>(user);
    log->file << line << '\n';
    ++log->steps;
}

int cmd_train(const std::string& config_path, const std::string& out, const std::string& log_path, const uint64_t* seed) {
    ConfigHandle config;
    if (dhr_status s = load_config(config_path, seed, config)) return report(s);
    TrainLog log;
    const std::string path = log_path.empty() ? out + ".log" : log_path;
    log.file.open(path, std::ios::trunc);
    if (!log.file) {
        std::fprintf(stderr, "error: cannot open log file '%s'\n", path.c_str());
        return kExitInvalid;
    }
    log.file << "step,l_inst,l_joint,total,lr\n";
    const dhr_status s = dhr_train(config.ptr, out.c_str(), on_train_step, &log);
    log.file.flush();
    if (s != DHR_OK) return report(s);
    std::printf("trained %llu steps -> %s (log %s)\n", static_cast<unsigned long long>(log.steps), out.c_str(), path.c_str());
    return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& config_path, const uint64_t* seed) {
    ConfigHandle config;
    if (dhr_status s = load_config(config_path, seed, config)) return report(s);
    dhr_eval_report* r = nullptr;
    if (dhr_status s = dhr_eval(ckpt.c_str(), config.ptr, &r)) return report(s);
    std::printf("pck@%g %.4f (%zu/%zu joints, %zu scenes, %zu persons, %zu detected)\n", dhr_eval_radius_frac(r),
                dhr_eval_pck(r), dhr_eval_hits(r), dhr_eval_total(r), dhr_eval_scenes(r), dhr_eval_gt_instances(r),
                dhr_eval_detected_instances(r));
    for (size_t k = 0; k < dhr_eval_joint_count(r); ++k) {
        const size_t total = dhr_eval_joint_total(r, k);
        std::printf("joint %zu %.4f (%zu/%zu)\n", k, total ? double(dhr_eval_joint_hits(r, k)) / double(total) : 0.0,
                    dhr_eval_joint_hits(r, k), total);
    }
    dhr_eval_free(r);
    return kExitOk;
}

int cmd_gradcheck(const std::string& selector, uint64_t seed, bool tamper) {
    dhr_gradcheck_result* r = nullptr;
    if (dhr_status s = dhr_gradcheck(selector.c_str(), seed, tamper ? 1 : 0, &r)) return report(s);
    std::printf("%-32s %8s %14s  %s\n", "tensor", "size", "max_rel_err", "status");
    for (size_t i = 0; i < dhr_gradcheck_count(r); ++i) {
        std::printf("%-32s %8zu %14.3e  %s\n", dhr_gradcheck_name(r, i), dhr_gradcheck_size(r, i),
                    dhr_gradcheck_max_rel_err(r, i), dhr_gradcheck_entry_passed(r, i) ? "ok" : "FAIL");
    }
    const bool passed = dhr_gradcheck_passed(r) != 0;
    std::printf("gradcheck %s: %s (tolerance %g, %.2f s)\n", selector.c_str(), passed ? "PASS" : "FAIL",
                dhr_gradcheck_tolerance(), dhr_gradcheck_seconds(r));
    dhr_gradcheck_free(r);
    return passed ? kExitOk : kExitNumeric;
}

int cmd_dump(const std::string& ckpt, uint64_t scene_seed, const std::string& out_dir) {
    size_t files = 0, instances = 0;
    if (dhr_status s = dhr_dump_attention(ckpt.c_str(), scene_seed, out_dir.c_str(), &files, &instances)) return report(s);
    std::printf("wrote %zu files for %zu instances to %s\n", files, instances, out_dir.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-path relation network toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_path, log_path, ckpt_path, selector;
    uint64_t seed = 0, scene_seed = 0;
    bool tamper = false;

    auto* train = app.add_subcommand("train", "Train on synthetic scenes and write a checkpoint");
    train->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    train->add_option("--out", out_path, "Checkpoint path")->required();
    train->add_option("--log", log_path, "Loss log path (default <out>.log)");
    auto* train_seed = train->add_option("--seed", seed, "Override the config seed");

    auto* eval = app.add_subcommand("eval", "Evaluate PCK on held-out scenes");
    eval->add_option("--ckpt", ckpt_path, "Checkpoint path")->required()->check(CLI::ExistingFile);
    eval->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    auto* eval_seed = eval->add_option("--seed", seed, "Override the config seed");

    auto* grad = app.add_subcommand("gradcheck", "Compare backward against finite differences");
    grad->add_option("selector", selector, "cim, cjm, adfm, ijr, jir, decoder or full")->required();
    grad->add_option("--seed", seed, "Fixture seed");
    grad->add_flag("--tamper", tamper, "Negate one analytic gradient (the check must then fail)");

    auto* dump = app.add_subcommand("dump-attn", "Dump attention matrices for one scene");
    dump->add_option("--ckpt", ckpt_path, "Checkpoint path")->required()->check(CLI::ExistingFile);
    dump->add_option("--scene-seed", scene_seed, "Scene seed")->required();
    dump->add_option("--out", out_path, "Output directory")->required();
    dump->add_option("--seed", seed, "Accepted for uniformity; dumps are deterministic");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInvalid;
    }

    if (*train) return cmd_train(config_path, out_path, log_path, train_seed->count() ? &seed : nullptr);
    if (*eval) return cmd_eval(ckpt_path, config_path, eval_seed->count() ? &seed : nullptr);
    if (*grad) return cmd_gradcheck(selector, seed, tamper);
    if (*dump) return cmd_dump(ckpt_path, scene_seed, out_path);
    return kExitInvalid;
}
