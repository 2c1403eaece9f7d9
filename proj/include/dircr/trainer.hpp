#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dircr/config.hpp"
#include "dircr/model.hpp"
#include "dircr/optim.hpp"

namespace dircr {

struct MetricsRecord {
  int epoch = 0;
  double train_ce_loss = 0;
  double train_rclm_loss = 0;
  double val_accuracy = 0;
  double pl_accept_rate = 0;
  double pl_correct_rate = 0;
  double wall_time_s = 0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

inline constexpr const char* kMetricsHeader =
    "epoch,train_ce_loss,train_rclm_loss,val_accuracy,pl_accept_rate,pl_correct_rate,wall_time_s";

std::string metrics_csv(const std::vector<MetricsRecord>& records, bool with_time = true);
nlohmann::json to_json(const MetricsRecord& r);
MetricsRecord metrics_from_json(const nlohmann::json& j);

struct StepResult {
  double ce_loss = 0;
  double rclm_loss = 0;
  int batch = 0;
  int accepted = 0;  // pseudo-labels that passed the confidence gate
  int correct = 0;   // accepted pseudo-labels equal to the answer
  bool rclm_active = false;
};

/// Fraction of puzzles whose top-scoring candidate is the answer, in
/// inference mode. Throws EmptyDataset.
double evaluate(DircrModel& model, std::span<const puzzle::Puzzle> data, int batch_size = 64);

/// Copies parameters and buffers of `src` into `dst` (same architecture).
void copy_state(const nn::Module& src, nn::Module& dst);

class Trainer {
 public:
  /// `train` and `val` must outlive the trainer. `val` may be empty, in
  /// which case val_accuracy is reported as 0.
  Trainer(const TrainConfig& cfg, std::span<const puzzle::Puzzle> train, std::span<const puzzle::Puzzle> val);

  /// One optimizer step on the given training indices.
  StepResult train_step(std::span<const std::int64_t> batch);
  /// Runs the next epoch and appends its record to the history.
  MetricsRecord run_epoch();
  /// Runs epochs until `cfg.epochs` (or the accuracy stop) is reached.
  /// `on_epoch` is called after each epoch.
  void fit(const std::function<void(const MetricsRecord&)>& on_epoch = {});

  /// Training order of `epoch`: a permutation of the training indices.
  std::vector<std::int64_t> epoch_order(int epoch) const;

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores a trainer from a checkpoint; the stored config is used.
  static std::unique_ptr<Trainer> resume(const std::filesystem::path& path, std::span<const puzzle::Puzzle> train,
                                         std::span<const puzzle::Puzzle> val);

  DircrModel& model() { return *model_; }
  Adam& optimizer() { return *optim_; }
  const TrainConfig& config() const { return cfg_; }
  int epochs_done() const { return epoch_; }
  bool rclm_active() const;
  bool finished() const;
  const std::vector<MetricsRecord>& history() const { return history_; }

 private:
  void start_rclm_phase();
  Real lr_for_epoch(int epoch) const;

  TrainConfig cfg_;
  std::span<const puzzle::Puzzle> train_, val_;
  std::unique_ptr<DircrModel> model_;
  std::unique_ptr<DircrModel> teacher_;  // frozen snapshot for the two-phase schedule
  std::unique_ptr<Adam> optim_;
  int epoch_ = 0;
  std::vector<MetricsRecord> history_;
};

struct AblationVariant {
  std::string name;
  bool use_local, use_global, use_rclm;
  int K;
};

/// Rows mirroring the component/depth ablation: five component rows then
/// the full model at K = 1..4.
std::vector<AblationVariant> table3_grid();

struct AblationRow {
  AblationVariant variant;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;  // held-out accuracy per seed
  double mean = 0;
};

/// Trains each variant for every seed on the same data and reports test
/// accuracy. Variants with identical settings are trained once.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<AblationVariant>& grid,
                                      std::span<const std::uint64_t> seeds, std::span<const puzzle::Puzzle> train,
                                      std::span<const puzzle::Puzzle> val, std::span<const puzzle::Puzzle> test,
                                      const std::function<void(const std::string&)>& log = {});

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace dircr
