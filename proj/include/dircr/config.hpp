#pragma once

// Training configuration and its JSON form. Unknown keys are rejected so a
// typo never silently falls back to a default.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dircr/model.hpp"
#include "dircr/rclm.hpp"

namespace dircr {

struct DataConfig {
  std::string train, val, test;  // dataset manifest paths
};

struct TrainConfig {
  Real lr = Real(1e-3);
  Real weight_decay = Real(1e-5);
  int batch_size = 128;
  int eval_batch_size = 64;
  int epochs = 30;
  std::uint64_t seed = 0;
  int K = 3;
  bool use_local = true;
  bool use_global = true;
  bool use_rclm = true;
  int warmup_epochs = 3;
  std::string rclm_schedule = "joint";  // "joint" or "two_phase"
  std::string lr_schedule = "constant";  // "constant" or "cosine"
  /// Stop once validation accuracy reaches this value; 0 disables.
  Real stop_at_accuracy = 0;
  ProjectionConfig rclm;
  struct Model {
    int image_size = 80;
    int channels = 64;
    int n_blocks = 4;
    int n_heads = 4;
    Real dropout = Real(0.1);
  } model;
  DataConfig data;

  /// Throws ConfigError on an invalid combination.
  void validate() const;
  ModelConfig model_config() const;

  /// Small-image preset: 32x32 panels, 32 channels, batch 32.
  static TrainConfig desk();
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys throw ConfigError.
TrainConfig from_json(const nlohmann::json& j);

/// Applies "a.b=value" to a JSON config. The value is parsed as JSON when
/// possible and taken as a string otherwise; the key must already exist.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// defaults < file (if non-empty) < overrides.
TrainConfig resolve_config(const std::string& file, const std::vector<std::string>& overrides,
                           const TrainConfig& defaults = TrainConfig{});

}  // namespace dircr
