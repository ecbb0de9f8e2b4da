#include "dhrnet/dhrnet.h"

#include <exception>
#include <new>
#include <string>

#include "cli/commands.hpp"
#include "tensor/errors.hpp"

struct dhr_config {
    dhr::cli::RunConfig config;
    std::string text;
};

struct dhr_eval_report {
    dhr::cli::EvalReport report;
};

struct dhr_gradcheck_result {
    dhr::cli::GradcheckReport report;
};

struct dhr_checkpoint {
    dhr::cli::Checkpoint ckpt;
};

namespace {

thread_local std::string g_last_error;

dhr_status fail(dhr_status status, const char* what) {
    g_last_error = what;
    return status;
}

template <typename F>
dhr_status guarded(F&& body) {
    try {
        body();
        g_last_error.clear();
        return DHR_OK;
    } catch (const dhr::ConfigError& e) {
        return fail(DHR_ERR_CONFIG, e.what());
    } catch (const dhr::FormatError& e) {
        return fail(DHR_ERR_FORMAT, e.what());
    } catch (const dhr::DimensionError& e) {
        return fail(DHR_ERR_DIMENSION, e.what());
    } catch (const dhr::NumericError& e) {
        return fail(DHR_ERR_NUMERIC, e.what());
    } catch (const dhr::UsageError& e) {
        return fail(DHR_ERR_USAGE, e.what());
    } catch (const dhr::IoError& e) {
        return fail(DHR_ERR_IO, e.what());
    } catch (const std::bad_alloc&) {
        return fail(DHR_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(DHR_ERR_INTERNAL, e.what());
    }
}

dhr_status require(bool ok, const char* what) {
    return ok ? DHR_OK : fail(DHR_ERR_USAGE, what);
}

}  // namespace

extern "C" {

const char* dhr_last_error(void) { return g_last_error.c_str(); }

const char* dhr_status_name(dhr_status status) {
    switch (status) {
        case DHR_OK: return "ok";
        case DHR_ERR_CONFIG: return "config error";
        case DHR_ERR_FORMAT: return "format error";
        case DHR_ERR_DIMENSION: return "dimension error";
        case DHR_ERR_NUMERIC: return "numeric error";
        case DHR_ERR_USAGE: return "usage error";
        case DHR_ERR_IO: return "io error";
        case DHR_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

dhr_status dhr_config_default(dhr_config** out) {
    if (auto s = require(out != nullptr, "dhr_config_default: out is NULL")) return s;
    return guarded([&] {
        auto* c = new dhr_config{};
        c->text = dhr::cli::format_config(c->config);
        *out = c;
    });
}

dhr_status dhr_config_load(const char* path, dhr_config** out) {
    if (auto s = require(path && out, "dhr_config_load: NULL argument")) return s;
    return guarded([&] {
        auto* c = new dhr_config{dhr::cli::parse_config(path), {}};
        c->text = dhr::cli::format_config(c->config);
        *out = c;
    });
}

dhr_status dhr_config_parse(const char* text, dhr_config** out) {
    if (auto s = require(text && out, "dhr_config_parse: NULL argument")) return s;
    return guarded([&] {
        auto* c = new dhr_config{dhr::cli::parse_config_text(text), {}};
        c->text = dhr::cli::format_config(c->config);
        *out = c;
    });
}

dhr_status dhr_config_set_seed(dhr_config* config, uint64_t seed) {
    if (auto s = require(config != nullptr, "dhr_config_set_seed: config is NULL")) return s;
    return guarded([&] {
        config->config.seed = seed;
        config->text = dhr::cli::format_config(config->config);
    });
}

const char* dhr_config_text(const dhr_config* config) { return config ? config->text.c_str() : ""; }

void dhr_config_free(dhr_config* config) { delete config; }

dhr_status dhr_train(const dhr_config* config, const char* checkpoint_path, dhr_log_fn log, void* user) {
    if (auto s = require(config && checkpoint_path, "dhr_train: NULL argument")) return s;
    return guarded([&] {
        std::function<void(const dhr::cli::LogRow&)> on_step;
        if (log) {
            on_step = [log, user](const dhr::cli::LogRow& row) { log(dhr::cli::format_log_row(row).c_str(), user); };
        }
        const auto result = dhr::cli::train(config->config, on_step);
        dhr::cli::save_checkpoint(checkpoint_path, result.checkpoint);
    });
}

dhr_status dhr_eval_range(const char* checkpoint_path, const dhr_config* config, uint64_t seed_begin,
                          uint64_t seed_end, dhr_eval_report** out) {
    if (auto s = require(checkpoint_path && config && out, "dhr_eval: NULL argument")) return s;
    if (auto s = require(seed_end > seed_begin, "dhr_eval_range: empty seed range")) return s;
    return guarded([&] {
        const auto ckpt = dhr::cli::load_checkpoint(checkpoint_path);
        *out = new dhr_eval_report{dhr::cli::evaluate_checkpoint(ckpt, config->config, {seed_begin, seed_end})};
    });
}

dhr_status dhr_eval(const char* checkpoint_path, const dhr_config* config, dhr_eval_report** out) {
    if (auto s = require(config != nullptr, "dhr_eval: config is NULL")) return s;
    return dhr_eval_range(checkpoint_path, config, config->config.eval_seeds.begin, config->config.eval_seeds.end, out);
}

double dhr_eval_pck(const dhr_eval_report* r) { return r ? r->report.metric.pck : 0.0; }
double dhr_eval_radius_frac(const dhr_eval_report* r) { return r ? r->report.metric.radius_frac : 0.0; }
size_t dhr_eval_hits(const dhr_eval_report* r) { return r ? r->report.metric.hits : 0; }
size_t dhr_eval_total(const dhr_eval_report* r) { return r ? r->report.metric.total : 0; }
size_t dhr_eval_scenes(const dhr_eval_report* r) { return r ? r->report.scenes : 0; }
size_t dhr_eval_gt_instances(const dhr_eval_report* r) { return r ? r->report.gt_instances : 0; }
size_t dhr_eval_detected_instances(const dhr_eval_report* r) { return r ? r->report.detected_instances : 0; }
size_t dhr_eval_joint_count(const dhr_eval_report* r) { return r ? r->report.metric.joint_hits.size() : 0; }

size_t dhr_eval_joint_hits(const dhr_eval_report* r, size_t joint) {
    return r && joint < r->report.metric.joint_hits.size() ? r->report.metric.joint_hits[joint] : 0;
}

size_t dhr_eval_joint_total(const dhr_eval_report* r, size_t joint) {
    return r && joint < r->report.metric.joint_totals.size() ? r->report.metric.joint_totals[joint] : 0;
}

void dhr_eval_free(dhr_eval_report* report) { delete report; }

dhr_status dhr_gradcheck(const char* selector, uint64_t seed, int tamper, dhr_gradcheck_result** out) {
    if (auto s = require(selector && out, "dhr_gradcheck: NULL argument")) return s;
    return guarded([&] { *out = new dhr_gradcheck_result{dhr::cli::gradcheck(selector, seed, tamper != 0)}; });
}

size_t dhr_gradcheck_count(const dhr_gradcheck_result* r) { return r ? r->report.entries.size() : 0; }

const char* dhr_gradcheck_name(const dhr_gradcheck_result* r, size_t i) {
    return r && i < r->report.entries.size() ? r->report.entries[i].name.c_str() : "";
}

size_t dhr_gradcheck_size(const dhr_gradcheck_result* r, size_t i) {
    return r && i < r->report.entries.size() ? r->report.entries[i].size : 0;
}

double dhr_gradcheck_max_rel_err(const dhr_gradcheck_result* r, size_t i) {
    return r && i < r->report.entries.size() ? r->report.entries[i].max_rel_err : 0.0;
}

int dhr_gradcheck_entry_passed(const dhr_gradcheck_result* r, size_t i) {
    return r && i < r->report.entries.size() && r->report.entries[i].passed;
}

int dhr_gradcheck_passed(const dhr_gradcheck_result* r) { return r && r->report.passed(); }
double dhr_gradcheck_seconds(const dhr_gradcheck_result* r) { return r ? r->report.seconds : 0.0; }
double dhr_gradcheck_tolerance(void) { return dhr::cli::kGradcheckTolerance; }
void dhr_gradcheck_free(dhr_gradcheck_result* result) { delete result; }

dhr_status dhr_dump_attention(const char* checkpoint_path, uint64_t scene_seed, const char* out_dir,
                              size_t* files_written, size_t* instances) {
    if (auto s = require(checkpoint_path && out_dir, "dhr_dump_attention: NULL argument")) return s;
    return guarded([&] {
        const auto result = dhr::cli::dump_attention(dhr::cli::load_checkpoint(checkpoint_path), scene_seed, out_dir);
        if (files_written) *files_written = result.files.size();
        if (instances) *instances = result.instances;
    });
}

dhr_status dhr_checkpoint_load(const char* path, dhr_checkpoint** out) {
    if (auto s = require(path && out, "dhr_checkpoint_load: NULL argument")) return s;
    return guarded([&] { *out = new dhr_checkpoint{dhr::cli::load_checkpoint(path)}; });
}

dhr_status dhr_checkpoint_save(const dhr_checkpoint* ckpt, const char* path) {
    if (auto s = require(ckpt && path, "dhr_checkpoint_save: NULL argument")) return s;
    return guarded([&] { dhr::cli::save_checkpoint(path, ckpt->ckpt); });
}

size_t dhr_checkpoint_tensor_count(const dhr_checkpoint* c) { return c ? c->ckpt.tensors.size() : 0; }

const char* dhr_checkpoint_tensor_name(const dhr_checkpoint* c, size_t i) {
    return c && i < c->ckpt.tensors.size() ? c->ckpt.tensors[i].name.c_str() : "";
}

size_t dhr_checkpoint_tensor_numel(const dhr_checkpoint* c, size_t i) {
    return c && i < c->ckpt.tensors.size() ? c->ckpt.tensors[i].data.size() : 0;
}

const float* dhr_checkpoint_tensor_data(const dhr_checkpoint* c, size_t i) {
    return c && i < c->ckpt.tensors.size() ? c->ckpt.tensors[i].data.data() : nullptr;
}

uint64_t dhr_checkpoint_step(const dhr_checkpoint* c) { return c ? c->ckpt.step : 0; }
const char* dhr_checkpoint_config_text(const dhr_checkpoint* c) { return c ? c->ckpt.config_echo.c_str() : ""; }
void dhr_checkpoint_free(dhr_checkpoint* ckpt) { delete ckpt; }

}  // extern "C"
