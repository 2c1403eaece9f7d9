#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dircr/config.hpp"
#include "dircr/errors.hpp"

using namespace dircr;
using nlohmann::json;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
  auto dir = std::filesystem::temp_directory_path() / "dircr_config_tests";
  std::filesystem::create_directories(dir);
  auto p = dir / name;
  std::ofstream(p) << text;
  return p.string();
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  TrainConfig c = TrainConfig::desk();
  c.seed = 1234567890123ULL;
  c.rclm.temperature = 0.35f;
  c.rclm_schedule = "two_phase";
  c.data.train = "a/train.json";
  TrainConfig back = from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.seed, c.seed);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(from_json(json{{"learning_rate", 0.1}}), ConfigError);
  EXPECT_THROW(from_json(json{{"rclm", {{"temp", 0.1}}}}), ConfigError);
  EXPECT_THROW(from_json(json{{"lr", "fast"}}), ConfigError);
}

TEST(Config, PartialJsonKeepsDefaults) {
  TrainConfig c = from_json(json{{"epochs", 7}, {"model", {{"channels", 16}}}});
  EXPECT_EQ(c.epochs, 7);
  EXPECT_EQ(c.model.channels, 16);
  EXPECT_EQ(c.model.image_size, 80);
  EXPECT_FLOAT_EQ(c.lr, 1e-3f);
}

TEST(Config, OverridesParseValues) {
  json j = to_json(TrainConfig{});
  apply_override(j, "rclm.temperature=0.5");
  apply_override(j, "use_rclm=false");
  apply_override(j, "rclm_schedule=two_phase");
  apply_override(j, "data.train=train.json");
  TrainConfig c = from_json(j);
  EXPECT_FLOAT_EQ(c.rclm.temperature, 0.5f);
  EXPECT_FALSE(c.use_rclm);
  EXPECT_EQ(c.rclm_schedule, "two_phase");
  EXPECT_EQ(c.data.train, "train.json");
  EXPECT_THROW(apply_override(j, "rclm.tau=0.2"), ConfigError);
  EXPECT_THROW(apply_override(j, "no_equals_sign"), ConfigError);
  EXPECT_THROW(apply_override(j, "=3"), ConfigError);
}

TEST(Config, PrecedenceDefaultsFileOverrides) {
  const std::string file = write_temp("prec.json", R"({"epochs": 11, "batch_size": 16, "rclm": {"loss_weight": 0.3}})");
  TrainConfig defaults = TrainConfig::desk();
  TrainConfig c = resolve_config(file, {"epochs=4"}, defaults);
  EXPECT_EQ(c.epochs, 4);
  EXPECT_EQ(c.batch_size, 16);
  EXPECT_FLOAT_EQ(c.rclm.loss_weight, 0.3f);
  EXPECT_EQ(c.model.image_size, 32);
}

TEST(Config, ResolveErrors) {
  EXPECT_THROW(resolve_config("/nonexistent/cfg.json", {}), IoError);
  EXPECT_THROW(resolve_config(write_temp("bad.json", "{not json"), {}), ConfigError);
  EXPECT_THROW(resolve_config(write_temp("typo.json", R"({"epoch": 3})"), {}), ConfigError);
  EXPECT_THROW(resolve_config("", {"use_local=false", "use_global=false"}), ConfigError);
  EXPECT_THROW(resolve_config("", {"rclm.confidence_threshold=0.1"}), ConfigError);
}
