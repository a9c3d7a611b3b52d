#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mcl/config.hpp"

using namespace mcl;
using nlohmann::json;

TEST(Config, EmptyObjectGivesFullScaleDefaults) {
    const auto rc = parse_run_config(json::object());
    EXPECT_EQ(rc.pattern, 5);
    EXPECT_FALSE(rc.seed.has_value());
    EXPECT_EQ(rc.pipeline.spec.feature_dim, 512);
    EXPECT_EQ(rc.pipeline.alpha, 125.0);
    EXPECT_EQ(rc.pipeline.pretrain.max_iterations, 180000);
    EXPECT_EQ(rc.pipeline.pretrain.initial_lr, 0.02);
    EXPECT_EQ(rc.pipeline.weighting.initial_lr, 0.001);
    EXPECT_EQ(rc.pipeline.multicenter.batch_size, 64);
    EXPECT_TRUE(rc.pipeline.augment);
}

TEST(Config, PatternSetsFeatureDim) {
    EXPECT_EQ(parse_run_config(json{{"pattern", 68}}).pipeline.spec.feature_dim, 1024);
    EXPECT_EQ(parse_run_config(json{{"pattern", 29}}).pipeline.spec.n_landmarks, 29);
}

TEST(Config, OverridesAreApplied) {
    const json j = {{"pattern", 5},
                    {"seed", 42},
                    {"network", {{"widths", {8, 8, 16, 16}}, {"feature_dim", 64}}},
                    {"pretrain", {{"max_iterations", 100}, {"batch_size", 16}}},
                    {"augmentation", {{"enabled", false}, {"max_outputs", 4}}},
                    {"data", {{"train", "a"}, {"val", "b"}}}};
    const auto rc = parse_run_config(j);
    EXPECT_EQ(rc.seed.value(), 42u);
    EXPECT_EQ(rc.pipeline.spec.widths[2], 16);
    EXPECT_EQ(rc.pipeline.spec.feature_dim, 64);
    EXPECT_EQ(rc.pipeline.pretrain.max_iterations, 100);
    EXPECT_EQ(rc.pipeline.pretrain.batch_size, 16);
    EXPECT_EQ(rc.pipeline.pretrain.initial_lr, 0.02);
    EXPECT_FALSE(rc.pipeline.augment);
    EXPECT_EQ(rc.pipeline.augment_params.max_outputs, 4u);
    EXPECT_EQ(rc.train_path, "a");
    EXPECT_EQ(rc.val_path, "b");
}

TEST(Config, UnknownKeysAreRejected) {
    EXPECT_THROW(parse_run_config(json{{"patern", 5}}), ConfigError);
    EXPECT_THROW(parse_run_config(json{{"pretrain", {{"lr", 0.1}}}}), ConfigError);
    EXPECT_THROW(parse_run_config(json{{"augmentation", {{"mirror", true}}}}), ConfigError);
}

TEST(Config, InvalidValuesAreRejected) {
    EXPECT_THROW(parse_run_config(json{{"pattern", 13}}), ConfigError);
    EXPECT_THROW(parse_run_config(json{{"alpha", 1.0}}), ConfigError);
    EXPECT_THROW(parse_run_config(json{{"pretrain", {{"batch_size", 0}}}}), ConfigError);
    EXPECT_THROW(parse_run_config(json{{"pattern", "five"}}), ConfigError);
    EXPECT_THROW(parse_run_config(json{{"network", {{"feature_dim", 0}}}}), ConfigError);
    EXPECT_THROW(parse_run_config(json::array()), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
    for (const char* name : {"full.json", "desk.json"}) {
        const auto path = std::filesystem::path(MCL_SOURCE_DIR) / "configs" / name;
        EXPECT_NO_THROW(load_run_config(path)) << name;
    }
    const auto full = load_run_config(std::filesystem::path(MCL_SOURCE_DIR) / "configs" / "full.json");
    EXPECT_EQ(full.pattern, 68);
    EXPECT_EQ(full.pipeline.spec.feature_dim, 1024);
    EXPECT_EQ(full.pipeline.pretrain.max_iterations, 180000);
}

TEST(Config, FileErrors) {
    EXPECT_THROW(load_run_config("/nonexistent/cfg.json"), ConfigError);
    const auto p = std::filesystem::temp_directory_path() / "mcl_test_bad.json";
    {
        std::ofstream out(p);
        out << "{ not json";
    }
    EXPECT_THROW(load_run_config(p), ConfigError);
}
