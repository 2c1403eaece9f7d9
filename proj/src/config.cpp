#include "dircr/config.hpp"

#include <fstream>

#include "dircr/errors.hpp"

namespace dircr {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
  if (batch_size < 1 || eval_batch_size < 1) throw ConfigError("batch sizes must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be non-negative");
  if (rclm_schedule != "joint" && rclm_schedule != "two_phase") {
    throw ConfigError("rclm_schedule must be joint or two_phase, got " + rclm_schedule);
  }
  if (lr_schedule != "constant" && lr_schedule != "cosine") {
    throw ConfigError("lr_schedule must be constant or cosine, got " + lr_schedule);
  }
  rclm.validate();
  model_config().validate();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.image_size = model.image_size;
  m.channels = model.channels;
  m.n_blocks = model.n_blocks;
  m.n_heads = model.n_heads;
  m.dropout = model.dropout;
  m.K = K;
  m.use_local = use_local;
  m.use_global = use_global;
  m.projection_dim = rclm.out_dim;
  return m;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.batch_size = 32;
  c.model.image_size = 32;
  c.model.channels = 32;
  return c;
}

json to_json(const TrainConfig& c) {
  return json{
      {"lr", c.lr},
      {"weight_decay", c.weight_decay},
      {"batch_size", c.batch_size},
      {"eval_batch_size", c.eval_batch_size},
      {"epochs", c.epochs},
      {"seed", c.seed},
      {"K", c.K},
      {"use_local", c.use_local},
      {"use_global", c.use_global},
      {"use_rclm", c.use_rclm},
      {"warmup_epochs", c.warmup_epochs},
      {"rclm_schedule", c.rclm_schedule},
      {"lr_schedule", c.lr_schedule},
      {"stop_at_accuracy", c.stop_at_accuracy},
      {"rclm",
       {{"out_dim", c.rclm.out_dim},
        {"temperature", c.rclm.temperature},
        {"confidence_threshold", c.rclm.confidence_threshold},
        {"loss_weight", c.rclm.loss_weight}}},
      {"model",
       {{"image_size", c.model.image_size},
        {"channels", c.model.channels},
        {"n_blocks", c.model.n_blocks},
        {"n_heads", c.model.n_heads},
        {"dropout", c.model.dropout}}},
      {"data", {{"train", c.data.train}, {"val", c.data.val}, {"test", c.data.test}}},
  };
}

namespace {

// Recursively checks that every key of `given` exists in `known`.
void check_keys(const json& given, const json& known, const std::string& prefix) {
  if (!given.is_object()) throw ConfigError("config" + (prefix.empty() ? "" : " key " + prefix) + " must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string name = prefix.empty() ? it.key() : prefix + "." + it.key();
    auto k = known.find(it.key());
    if (k == known.end()) throw ConfigError("unknown config key '" + name + "'");
    if (k->is_object()) check_keys(*it, *k, name);
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& prefix = "") {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + prefix + key + "' has the wrong type: " + it->dump());
  }
}

}  // namespace

TrainConfig from_json(const json& j) {
  TrainConfig c;
  check_keys(j, to_json(c), "");
  read(j, "lr", c.lr);
  read(j, "weight_decay", c.weight_decay);
  read(j, "batch_size", c.batch_size);
  read(j, "eval_batch_size", c.eval_batch_size);
  read(j, "epochs", c.epochs);
  read(j, "seed", c.seed);
  read(j, "K", c.K);
  read(j, "use_local", c.use_local);
  read(j, "use_global", c.use_global);
  read(j, "use_rclm", c.use_rclm);
  read(j, "warmup_epochs", c.warmup_epochs);
  read(j, "rclm_schedule", c.rclm_schedule);
  read(j, "lr_schedule", c.lr_schedule);
  read(j, "stop_at_accuracy", c.stop_at_accuracy);
  if (auto r = j.find("rclm"); r != j.end()) {
    read(*r, "out_dim", c.rclm.out_dim, "rclm.");
    read(*r, "temperature", c.rclm.temperature, "rclm.");
    read(*r, "confidence_threshold", c.rclm.confidence_threshold, "rclm.");
    read(*r, "loss_weight", c.rclm.loss_weight, "rclm.");
  }
  if (auto m = j.find("model"); m != j.end()) {
    read(*m, "image_size", c.model.image_size, "model.");
    read(*m, "channels", c.model.channels, "model.");
    read(*m, "n_blocks", c.model.n_blocks, "model.");
    read(*m, "n_heads", c.model.n_heads, "model.");
    read(*m, "dropout", c.model.dropout, "model.");
  }
  if (auto d = j.find("data"); d != j.end()) {
    read(*d, "train", c.data.train, "data.");
    read(*d, "val", c.data.val, "data.");
    read(*d, "test", c.data.test, "data.");
  }
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) throw ConfigError("unknown config key '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  if (node->is_string() && !value.is_string()) value = text;
  *node = value;
}

TrainConfig resolve_config(const std::string& file, const std::vector<std::string>& overrides,
                           const TrainConfig& defaults) {
  json j = to_json(defaults);
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open config " + file);
    json given = json::parse(in, nullptr, false);
    if (given.is_discarded()) throw ConfigError("config " + file + " is not valid JSON");
    check_keys(given, j, "");
    j.merge_patch(given);
  }
  for (const auto& o : overrides) apply_override(j, o);
  TrainConfig c = from_json(j);
  c.validate();
  return c;
}

}  // namespace dircr
