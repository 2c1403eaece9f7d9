#include "dircr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "dircr/errors.hpp"

namespace dircr {

std::string metrics_csv(const std::vector<MetricsRecord>& records, bool with_time) {
  std::ostringstream out;
  std::string header = kMetricsHeader;
  if (!with_time) header = header.substr(0, header.rfind(','));
  out << header << '\n' << std::setprecision(9);
  for (const auto& r : records) {
    out << r.epoch << ',' << r.train_ce_loss << ',' << r.train_rclm_loss << ',' << r.val_accuracy << ','
        << r.pl_accept_rate << ',' << r.pl_correct_rate;
    if (with_time) out << ',' << std::setprecision(4) << r.wall_time_s << std::setprecision(9);
    out << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const MetricsRecord& r) {
  return {{"epoch", r.epoch},
          {"train_ce_loss", r.train_ce_loss},
          {"train_rclm_loss", r.train_rclm_loss},
          {"val_accuracy", r.val_accuracy},
          {"pl_accept_rate", r.pl_accept_rate},
          {"pl_correct_rate", r.pl_correct_rate},
          {"wall_time_s", r.wall_time_s}};
}

MetricsRecord metrics_from_json(const nlohmann::json& j) {
  MetricsRecord r;
  r.epoch = j.at("epoch");
  r.train_ce_loss = j.at("train_ce_loss");
  r.train_rclm_loss = j.at("train_rclm_loss");
  r.val_accuracy = j.at("val_accuracy");
  r.pl_accept_rate = j.at("pl_accept_rate");
  r.pl_correct_rate = j.at("pl_correct_rate");
  r.wall_time_s = j.at("wall_time_s");
  return r;
}

double evaluate(DircrModel& model, std::span<const puzzle::Puzzle> data, int batch_size) {
  if (data.empty()) throw EmptyDataset("evaluate: no puzzles");
  if (batch_size < 1) throw ConfigError("evaluate: batch size must be positive");
  const bool was_training = model.is_training();
  model.eval();
  NoGradGuard no_grad;
  std::int64_t correct = 0;
  std::vector<std::int64_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    std::vector<int> answers;
    for (auto i : idx) answers.push_back(data[i].answer_index);
    correct += count_correct(model.forward(panel_batch(data, idx)).logits, answers);
  }
  model.train(was_training);
  return double(correct) / double(data.size());
}

void copy_state(const nn::Module& src, nn::Module& dst) {
  auto copy = [](const std::vector<nn::NamedTensor>& from, std::vector<nn::NamedTensor> to) {
    if (from.size() != to.size()) throw ShapeMismatch("copy_state: module structures differ");
    for (std::size_t i = 0; i < from.size(); ++i) {
      if (from[i].name != to[i].name || from[i].tensor.shape() != to[i].tensor.shape()) {
        throw ShapeMismatch("copy_state: " + from[i].name + " vs " + to[i].name);
      }
      auto s = from[i].tensor.data();
      std::copy(s.begin(), s.end(), to[i].tensor.data().begin());
    }
  };
  copy(src.named_parameters(), dst.named_parameters());
  copy(src.named_buffers(), dst.named_buffers());
}

Trainer::Trainer(const TrainConfig& cfg, std::span<const puzzle::Puzzle> train, std::span<const puzzle::Puzzle> val)
    : cfg_(cfg), train_(train), val_(val) {
  cfg_.validate();
  if (train_.empty()) throw EmptyDataset("training set is empty");
  for (const auto& p : train_) {
    if (p.image_size != cfg_.model.image_size) {
      throw ConfigError("training puzzles are " + std::to_string(p.image_size) + "px but model.image_size is " +
                        std::to_string(cfg_.model.image_size));
    }
  }
  model_ = std::make_unique<DircrModel>(cfg_.model_config(), cfg_.seed);
  optim_ = std::make_unique<Adam>(model_->parameters(), cfg_.lr, cfg_.weight_decay);
}

bool Trainer::rclm_active() const { return cfg_.use_rclm && epoch_ >= cfg_.warmup_epochs; }

bool Trainer::finished() const {
  if (epoch_ >= cfg_.epochs) return true;
  return cfg_.stop_at_accuracy > 0 && !history_.empty() && history_.back().val_accuracy >= cfg_.stop_at_accuracy;
}

void Trainer::start_rclm_phase() {
  if (cfg_.rclm_schedule != "two_phase" || teacher_) return;
  teacher_ = std::make_unique<DircrModel>(cfg_.model_config(), cfg_.seed);
  copy_state(*model_, *teacher_);
  teacher_->eval();
}

Real Trainer::lr_for_epoch(int epoch) const {
  if (cfg_.lr_schedule == "cosine" && cfg_.epochs > 0) {
    const double t = double(epoch) / double(cfg_.epochs);
    return static_cast<Real>(0.5 * cfg_.lr * (1.0 + std::cos(M_PI * t)));
  }
  return cfg_.lr;
}

std::vector<std::int64_t> Trainer::epoch_order(int epoch) const {
  std::vector<std::int64_t> order(train_.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(cfg_.seed, 0x10000 + static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

StepResult Trainer::train_step(std::span<const std::int64_t> batch) {
  if (batch.empty()) throw EmptyDataset("train_step: empty batch");
  StepResult r;
  r.batch = static_cast<int>(batch.size());
  std::vector<int> answers;
  for (auto i : batch) answers.push_back(train_[i].answer_index);

  model_->train();
  Tensor panels = panel_batch(train_, batch);
  ModelOutput out = model_->forward(panels);
  Tensor ce = classification_loss(out.logits, answers);
  Tensor total = ce;
  r.ce_loss = ce.item();

  if (rclm_active()) {
    start_rclm_phase();
    r.rclm_active = true;
    std::vector<Real> probs;
    auto append = [&](const Tensor& logits) {
      for (const auto& s : candidate_scores(logits)) probs.insert(probs.end(), s.probs.begin(), s.probs.end());
    };
    if (teacher_) {
      NoGradGuard no_grad;
      append(teacher_->forward(panels).logits);
    } else {
      append(out.logits);
    }
    RclmResult rc = rclm_step(out.rows, probs, model_->projector, cfg_.rclm);
    r.rclm_loss = rc.loss.item();
    r.accepted = rc.accepted;
    for (std::size_t b = 0; b < rc.labels.size(); ++b) {
      if (rc.labels[b] >= 0 && rc.labels[b] == answers[b]) ++r.correct;
    }
    total = ops::add(ce, rc.loss);
  }

  const double loss = total.item();
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "loss became non-finite at epoch " << epoch_ + 1 << ", step " << optim_->steps() + 1
        << " (ce=" << r.ce_loss << ", rclm=" << r.rclm_loss << ", lr=" << optim_->lr() << ")";
    throw NonFiniteLoss(msg.str());
  }
  optim_->zero_grad();
  total.backward();
  optim_->step();
  return r;
}

MetricsRecord Trainer::run_epoch() {
  const auto t0 = std::chrono::steady_clock::now();
  optim_->set_lr(lr_for_epoch(epoch_));
  const auto order = epoch_order(epoch_);
  double ce = 0, rclm = 0;
  std::int64_t seen = 0, gated_seen = 0, accepted = 0, correct = 0;
  const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t len = std::min(bs, order.size() - start);
    StepResult s = train_step(std::span(order).subspan(start, len));
    ce += s.ce_loss * s.batch;
    rclm += s.rclm_loss * s.batch;
    seen += s.batch;
    if (s.rclm_active) {
      gated_seen += s.batch;
      accepted += s.accepted;
      correct += s.correct;
    }
  }
  MetricsRecord rec;
  rec.epoch = epoch_ + 1;
  rec.train_ce_loss = ce / double(seen);
  rec.train_rclm_loss = rclm / double(seen);
  rec.pl_accept_rate = gated_seen ? double(accepted) / double(gated_seen) : 0.0;
  rec.pl_correct_rate = accepted ? double(correct) / double(accepted) : 0.0;
  rec.val_accuracy = val_.empty() ? 0.0 : evaluate(*model_, val_, cfg_.eval_batch_size);
  rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ++epoch_;
  history_.push_back(rec);
  return rec;
}

void Trainer::fit(const std::function<void(const MetricsRecord&)>& on_epoch) {
  while (!finished()) {
    MetricsRecord r = run_epoch();
    if (on_epoch) on_epoch(r);
  }
}

std::vector<AblationVariant> table3_grid() {
  return {
      {"local_only", true, false, false, 3},
      {"global_only", false, true, false, 3},
      {"local_rclm", true, false, true, 3},
      {"local_global", true, true, false, 3},
      {"full", true, true, true, 3},
      {"full_K1", true, true, true, 1},
      {"full_K2", true, true, true, 2},
      {"full_K3", true, true, true, 3},
      {"full_K4", true, true, true, 4},
  };
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<AblationVariant>& grid,
                                      std::span<const std::uint64_t> seeds, std::span<const puzzle::Puzzle> train,
                                      std::span<const puzzle::Puzzle> val, std::span<const puzzle::Puzzle> test,
                                      const std::function<void(const std::string&)>& log) {
  if (test.empty()) throw EmptyDataset("ablation needs a held-out set");
  using Key = std::tuple<bool, bool, bool, int, std::uint64_t>;
  std::map<Key, double> cache;
  std::vector<AblationRow> rows;
  for (const auto& v : grid) {
    TrainConfig cfg = base;
    cfg.use_local = v.use_local;
    cfg.use_global = v.use_global;
    cfg.use_rclm = v.use_rclm;
    cfg.K = v.K;
    cfg.validate();
    AblationRow row{v, {}, {}, 0};
    for (auto seed : seeds) {
      const Key key{v.use_local, v.use_global, v.use_rclm, v.K, seed};
      auto hit = cache.find(key);
      double acc;
      if (hit != cache.end()) {
        acc = hit->second;
      } else {
        cfg.seed = seed;
        Trainer t(cfg, train, val);
        t.fit();
        acc = evaluate(t.model(), test, cfg.eval_batch_size);
        cache.emplace(key, acc);
      }
      if (log) {
        std::ostringstream msg;
        msg << v.name << " seed " << seed << ": " << std::fixed << std::setprecision(4) << acc;
        log(msg.str());
      }
      row.seeds.push_back(seed);
      row.accuracies.push_back(acc);
    }
    row.mean = std::accumulate(row.accuracies.begin(), row.accuracies.end(), 0.0) /
               double(std::max<std::size_t>(1, row.accuracies.size()));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "variant,use_local,use_global,use_rclm,K,n_seeds,mean_accuracy,seed_accuracies\n";
  out << std::setprecision(6);
  for (const auto& r : rows) {
    out << r.variant.name << ',' << r.variant.use_local << ',' << r.variant.use_global << ','
        << r.variant.use_rclm << ',' << r.variant.K << ',' << r.seeds.size() << ',' << r.mean << ',';
    for (std::size_t i = 0; i < r.accuracies.size(); ++i) out << (i ? ";" : "") << r.accuracies[i];
    out << '\n';
  }
  return out.str();
}

}  // namespace dircr
