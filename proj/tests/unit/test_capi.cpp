#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "dhrnet/dhrnet.h"

namespace {

constexpr const char* kTinyConfig =
    "c = 4\n"
    "d = 4\n"
    "hidden = 4\n"
    "steps = 2\n"
    "train_seeds = 0..4\n"
    "eval_seeds = 50..52\n";

std::string temp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "dhrnet_capi";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

void collect(const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(line); }

}  // namespace

TEST(CApi, StatusNamesAndNullArguments) {
    EXPECT_STREQ(dhr_status_name(DHR_OK), "ok");
    EXPECT_EQ(dhr_config_default(nullptr), DHR_ERR_USAGE);
    EXPECT_NE(std::strlen(dhr_last_error()), 0u);
    EXPECT_EQ(dhr_train(nullptr, "x", nullptr, nullptr), DHR_ERR_USAGE);
}

TEST(CApi, ConfigErrorsCarryMessages) {
    dhr_config* cfg = nullptr;
    EXPECT_EQ(dhr_config_parse("lr = -1\n", &cfg), DHR_ERR_CONFIG);
    EXPECT_EQ(cfg, nullptr);
    EXPECT_NE(std::string(dhr_last_error()).find("lr"), std::string::npos);
    EXPECT_EQ(dhr_config_load("/nonexistent/run.cfg", &cfg), DHR_ERR_IO);

    ASSERT_EQ(dhr_config_default(&cfg), DHR_OK);
    EXPECT_NE(std::string(dhr_config_text(cfg)).find("lr = 0.001"), std::string::npos);
    EXPECT_EQ(dhr_config_set_seed(cfg, 9), DHR_OK);
    EXPECT_NE(std::string(dhr_config_text(cfg)).find("seed = 9"), std::string::npos);
    dhr_config_free(cfg);
}

TEST(CApi, TrainEvalCheckpointRoundTrip) {
    dhr_config* cfg = nullptr;
    ASSERT_EQ(dhr_config_parse(kTinyConfig, &cfg), DHR_OK);
    const std::string path = temp_path("tiny.ckpt");
    std::vector<std::string> lines;
    ASSERT_EQ(dhr_train(cfg, path.c_str(), collect, &lines), DHR_OK) << dhr_last_error();
    ASSERT_EQ(lines.size(), 2u);
    EXPECT_EQ(lines[1].rfind("1,", 0), 0u);

    dhr_eval_report* report = nullptr;
    ASSERT_EQ(dhr_eval(path.c_str(), cfg, &report), DHR_OK) << dhr_last_error();
    EXPECT_EQ(dhr_eval_scenes(report), 2u);
    EXPECT_EQ(dhr_eval_total(report), 5 * dhr_eval_gt_instances(report));
    EXPECT_EQ(dhr_eval_joint_count(report), 5u);
    EXPECT_DOUBLE_EQ(dhr_eval_radius_frac(report), 0.1);
    dhr_eval_free(report);

    dhr_checkpoint* ck = nullptr;
    ASSERT_EQ(dhr_checkpoint_load(path.c_str(), &ck), DHR_OK);
    EXPECT_EQ(dhr_checkpoint_step(ck), 2u);
    EXPECT_STREQ(dhr_checkpoint_tensor_name(ck, 0), "encoder.conv1.weight");
    EXPECT_EQ(dhr_checkpoint_tensor_numel(ck, 0), 4u * 3 * 3 * 3);
    EXPECT_NE(std::string(dhr_checkpoint_config_text(ck)).find("hidden = 4"), std::string::npos);
    const std::string copy = temp_path("copy.ckpt");
    ASSERT_EQ(dhr_checkpoint_save(ck, copy.c_str()), DHR_OK);
    EXPECT_STREQ(dhr_checkpoint_tensor_name(ck, dhr_checkpoint_tensor_count(ck)), "");
    EXPECT_EQ(dhr_checkpoint_tensor_data(ck, dhr_checkpoint_tensor_count(ck)), nullptr);
    dhr_checkpoint_free(ck);

    size_t files = 0, instances = 0;
    EXPECT_EQ(dhr_dump_attention(copy.c_str(), 3, temp_path("dump").c_str(), &files, &instances), DHR_OK)
        << dhr_last_error();
    EXPECT_EQ(files, 2 * (2 + 2 * instances));
    dhr_config_free(cfg);
}

TEST(CApi, CorruptCheckpointIsFormatError) {
    const std::string path = temp_path("bad.ckpt");
    FILE* f = std::fopen(path.c_str(), "wb");
    ASSERT_NE(f, nullptr);
    std::fputs("NOPE", f);
    std::fclose(f);
    dhr_checkpoint* ck = nullptr;
    EXPECT_EQ(dhr_checkpoint_load(path.c_str(), &ck), DHR_ERR_FORMAT);
    EXPECT_EQ(ck, nullptr);
}

TEST(CApi, Gradcheck) {
    dhr_gradcheck_result* r = nullptr;
    ASSERT_EQ(dhr_gradcheck("adfm", 0, 0, &r), DHR_OK);
    EXPECT_TRUE(dhr_gradcheck_passed(r));
    EXPECT_GT(dhr_gradcheck_count(r), 0u);
    EXPECT_LE(dhr_gradcheck_max_rel_err(r, 0), dhr_gradcheck_tolerance());
    dhr_gradcheck_free(r);
    ASSERT_EQ(dhr_gradcheck("adfm", 0, 1, &r), DHR_OK);
    EXPECT_FALSE(dhr_gradcheck_passed(r));
    dhr_gradcheck_free(r);
    EXPECT_EQ(dhr_gradcheck("nope", 0, 0, &r), DHR_ERR_USAGE);
}
