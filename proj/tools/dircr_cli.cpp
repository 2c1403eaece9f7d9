// dircr_cli: generate datasets, train, evaluate, run ablations and inspect
// puzzles.
//
// Exit codes: 0 ok, 1 other failure, 2 bad flags or values, 3 I/O or file
// format failure, 4 non-finite loss.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "dircr/config.hpp"
#include "dircr/dataset.hpp"
#include "dircr/errors.hpp"
#include "dircr/pgm.hpp"
#include "dircr/trainer.hpp"

namespace fs = std::filesystem;
using namespace dircr;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3, kNonFinite = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<puzzle::Puzzle> load_split(const std::string& path, const char* what) {
  if (path.empty()) return {};
  auto data = puzzle::load_dataset(path);
  std::cout << "loaded " << data.size() << " " << what << " puzzles from " << path << "\n";
  return data;
}

// ---- gen ----

struct GenArgs {
  int count = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> rules;
  int n_rules = 1;
  int size = 32;
  std::string split = "train";
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  if (a.count < 1) throw UsageError("--count must be at least 1");
  if (a.size < 8) throw UsageError("--size must be at least 8");
  auto split = puzzle::parse_split(a.split);
  if (!split) throw UsageError("--split must be train, val or test");
  puzzle::GenerateConfig cfg;
  cfg.image_size = a.size;
  cfg.n_rules = a.n_rules;
  for (const auto& name : a.rules) {
    auto kind = puzzle::parse_rule_kind(name);
    if (!kind) throw UsageError("unknown rule kind '" + name + "'");
    cfg.kinds.push_back(*kind);
  }
  if (cfg.n_rules < 1 || cfg.n_rules > 4) throw UsageError("--n-rules must be 1..4");

  auto puzzles = puzzle::generate_puzzles(a.seed, a.count, cfg);
  fs::create_directories(a.out);
  const fs::path manifest = fs::path(a.out) / (std::string(puzzle::to_string(*split)) + ".json");
  auto m = puzzle::write_dataset(puzzles, manifest, *split, a.seed);
  std::cout << "wrote " << m.count << " puzzles to " << manifest.string() << "\n";
  for (const auto& [kind, n] : m.rule_histogram) std::cout << "  " << std::left << std::setw(18) << kind << n << "\n";
  return kOk;
}

// ---- shared config handling ----

struct ConfigArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string preset = "paper";
  std::string train, val, test;
  std::string out;
};

TrainConfig resolve(const ConfigArgs& a) {
  TrainConfig defaults;
  if (a.preset == "desk") {
    defaults = TrainConfig::desk();
  } else if (a.preset != "paper") {
    throw UsageError("--preset must be paper or desk");
  }
  std::vector<std::string> overrides = a.overrides;
  if (!a.train.empty()) overrides.push_back("data.train=" + a.train);
  if (!a.val.empty()) overrides.push_back("data.val=" + a.val);
  if (!a.test.empty()) overrides.push_back("data.test=" + a.test);
  TrainConfig cfg = resolve_config(a.config, overrides, defaults);
  fs::create_directories(a.out);
  write_json(fs::path(a.out) / "config.json", to_json(cfg));
  return cfg;
}

// ---- train ----

int cmd_train(const ConfigArgs& a, const std::string& resume_from) {
  TrainConfig cfg = resolve(a);
  if (cfg.data.train.empty()) throw UsageError("no training data: set data.train or pass --train");
  const auto train = load_split(cfg.data.train, "training");
  const auto val = load_split(cfg.data.val, "validation");
  const auto test = load_split(cfg.data.test, "test");

  std::unique_ptr<Trainer> trainer;
  if (!resume_from.empty()) {
    trainer = Trainer::resume(resume_from, train, val);
    std::cout << "resumed at epoch " << trainer->epochs_done() << "\n";
  } else {
    trainer = std::make_unique<Trainer>(cfg, train, val);
  }
  const fs::path out(a.out);
  const fs::path ckpt = out / "checkpoint.ckpt";
  auto dump_metrics = [&] {
    write_text(out / "metrics.csv", metrics_csv(trainer->history()));
    json hist = json::array();
    for (const auto& r : trainer->history()) hist.push_back(to_json(r));
    write_json(out / "metrics.json", hist);
  };
  trainer->fit([&](const MetricsRecord& r) {
    std::cout << "epoch " << r.epoch << "  ce " << std::fixed << std::setprecision(4) << r.train_ce_loss << "  rclm "
              << r.train_rclm_loss << "  val " << r.val_accuracy << "  accept " << r.pl_accept_rate << "  "
              << std::setprecision(1) << r.wall_time_s << "s" << std::endl;
    trainer->save_checkpoint(ckpt);
    dump_metrics();
  });
  dump_metrics();
  trainer->save_checkpoint(ckpt);

  json summary{{"epochs", trainer->epochs_done()}, {"checkpoint", ckpt.string()}};
  if (!trainer->history().empty()) summary["final"] = to_json(trainer->history().back());
  if (!test.empty()) {
    const double acc = evaluate(trainer->model(), test, trainer->config().eval_batch_size);
    summary["test_accuracy"] = acc;
    std::cout << "test accuracy " << std::setprecision(4) << acc << "\n";
  }
  write_json(out / "summary.json", summary);
  return kOk;
}

// ---- eval ----

int cmd_eval(const std::string& checkpoint, const std::string& data_path, const std::string& out) {
  const auto data = puzzle::load_dataset(data_path);
  auto trainer = Trainer::resume(checkpoint, data, {});
  const double acc = evaluate(trainer->model(), data, trainer->config().eval_batch_size);
  fs::create_directories(out);
  write_json(fs::path(out) / "summary.json", {{"accuracy", acc},
                                              {"count", data.size()},
                                              {"checkpoint", checkpoint},
                                              {"data", data_path},
                                              {"epochs_trained", trainer->epochs_done()}});
  std::cout << "accuracy " << std::fixed << std::setprecision(4) << acc << " on " << data.size() << " puzzles\n";
  return kOk;
}

// ---- ablate ----

int cmd_ablate(const ConfigArgs& a, const std::string& grid_name, const std::vector<std::uint64_t>& seeds) {
  if (grid_name != "table3") throw UsageError("--grid must be table3");
  if (seeds.empty()) throw UsageError("--seeds must list at least one seed");
  TrainConfig cfg = resolve(a);
  if (cfg.data.train.empty() || cfg.data.test.empty()) {
    throw UsageError("ablation needs data.train and data.test");
  }
  const auto train = load_split(cfg.data.train, "training");
  const auto val = load_split(cfg.data.val, "validation");
  const auto test = load_split(cfg.data.test, "test");
  auto rows = run_ablation(cfg, table3_grid(), seeds, train, val, test,
                           [](const std::string& line) { std::cout << line << std::endl; });
  const std::string csv = ablation_csv(rows);
  write_text(fs::path(a.out) / "ablation.csv", csv);
  std::cout << csv;
  return kOk;
}

// ---- inspect ----

void print_ascii(const puzzle::Image& img, int size) {
  static const char* ramp = " .:-=+*#%@";
  const int step = std::max(1, size / 32);
  for (int y = 0; y < size; y += step) {
    std::string line;
    for (int x = 0; x < size; x += step) {
      const int ink = 255 - img[static_cast<std::size_t>(y) * size + x];
      line += ramp[ink * 9 / 255];
    }
    std::cout << "  |" << line << "|\n";
  }
}

int cmd_inspect(const std::string& data_path, long long index, const std::string& pgm_dir, bool ascii) {
  const auto manifest = puzzle::read_manifest(data_path);
  if (index < 0 || index >= manifest.count) {
    throw UsageError("index " + std::to_string(index) + " is outside 0.." + std::to_string(manifest.count - 1));
  }
  const auto data = puzzle::load_dataset(data_path);
  const auto& p = data[static_cast<std::size_t>(index)];
  const json meta = json::parse(puzzle::record_metadata(p));
  std::cout << "puzzle " << index << " of " << manifest.count << " (seed " << p.seed << ")\n";
  std::cout << "rules " << meta.at("rules").dump() << "\n";
  std::cout << "answer " << p.answer_index << "\n";
  const int n = p.image_size;
  for (int k = 0; k < 16; ++k) {
    const auto& img = k < 8 ? p.context[k] : p.candidates[k - 8];
    const std::string name = k < 8 ? "context" + std::to_string(k) : "candidate" + std::to_string(k - 8);
    if (ascii) {
      std::cout << name << (k == 8 + p.answer_index ? " (answer)" : "") << "\n";
      print_ascii(img, n);
    }
    if (!pgm_dir.empty()) {
      fs::create_directories(pgm_dir);
      pgm::write(fs::path(pgm_dir) / (name + ".pgm"), {n, n, img});
    }
  }
  if (!pgm_dir.empty()) std::cout << "wrote 16 PGM files to " << pgm_dir << "\n";
  return kOk;
}

template <class... T>
bool is_any(const std::exception& e) {
  return ((dynamic_cast<const T*>(&e) != nullptr) || ...);
}

int exit_code_for(const std::exception& e) {
  if (is_any<UsageError, ConfigError, IndexOutOfRange>(e)) return kUsage;
  if (is_any<NonFiniteLoss>(e)) return kNonFinite;
  if (is_any<IoError, FormatError, TruncatedFile, CorruptFile, VersionMismatch, fs::filesystem_error>(e)) return kIo;
  return kFailure;
}

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.config, "JSON config file");
  cmd->add_option("--set", a.overrides, "override key=value (repeatable)");
  cmd->add_option("--preset", a.preset, "defaults to start from: paper or desk")->capture_default_str();
  cmd->add_option("--train", a.train, "training manifest (sets data.train)");
  cmd->add_option("--val", a.val, "validation manifest (sets data.val)");
  cmd->add_option("--test", a.test, "held-out manifest (sets data.test)");
  cmd->add_option("--out", a.out, "output directory")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DIRCR puzzle reasoning: data generation, training and evaluation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a puzzle dataset");
  gen_cmd->add_option("--count", gen.count, "number of puzzles")->required();
  gen_cmd->add_option("--seed", gen.seed, "generator seed")->required();
  gen_cmd->add_option("--rules", gen.rules, "allowed rule kinds (comma separated)")->delimiter(',');
  gen_cmd->add_option("--n-rules", gen.n_rules, "rules per puzzle")->capture_default_str();
  gen_cmd->add_option("--size", gen.size, "panel size in pixels")->capture_default_str();
  gen_cmd->add_option("--split", gen.split, "train, val or test")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "output directory")->required();

  ConfigArgs train;
  std::string resume;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_config_options(train_cmd, train);
  train_cmd->add_option("--resume", resume, "continue from a checkpoint");

  std::string ckpt, eval_data, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "dataset manifest")->required();
  eval_cmd->add_option("--out", eval_out, "output directory")->required();

  ConfigArgs ablate;
  std::string grid = "table3";
  std::vector<std::uint64_t> seeds{0, 1, 2};
  auto* ablate_cmd = app.add_subcommand("ablate", "train the ablation grid");
  add_config_options(ablate_cmd, ablate);
  ablate_cmd->add_option("--grid", grid, "ablation grid")->capture_default_str();
  ablate_cmd->add_option("--seeds", seeds, "seeds (comma separated)")->delimiter(',');

  std::string inspect_data, pgm_dir;
  long long index = 0;
  bool no_ascii = false;
  auto* inspect_cmd = app.add_subcommand("inspect", "print one puzzle");
  inspect_cmd->add_option("--data", inspect_data, "dataset manifest")->required();
  inspect_cmd->add_option("--index", index, "puzzle index")->required();
  inspect_cmd->add_option("--pgm", pgm_dir, "also write the 16 panels as PGM files here");
  inspect_cmd->add_flag("--no-ascii", no_ascii, "skip the ASCII renderings");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen);
    if (*train_cmd) return cmd_train(train, resume);
    if (*eval_cmd) return cmd_eval(ckpt, eval_data, eval_out);
    if (*ablate_cmd) return cmd_ablate(ablate, grid, seeds);
    if (*inspect_cmd) return cmd_inspect(inspect_data, index, pgm_dir, !no_ascii);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kFailure;
}
