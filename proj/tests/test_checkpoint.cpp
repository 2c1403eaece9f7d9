#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dircr/errors.hpp"
#include "dircr/trainer.hpp"

using namespace dircr;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(const std::string& schedule = "joint") {
  TrainConfig c;
  c.batch_size = 8;
  c.epochs = 3;
  c.seed = 9;
  c.K = 1;
  c.warmup_epochs = 1;
  c.rclm_schedule = schedule;
  c.rclm.confidence_threshold = 0.13f;
  c.rclm.out_dim = 16;
  c.model.image_size = 32;
  c.model.channels = 8;
  c.model.n_blocks = 3;
  c.model.n_heads = 2;
  return c;
}

const std::vector<puzzle::Puzzle>& data() {
  static const std::vector<puzzle::Puzzle> d = [] {
    puzzle::GenerateConfig g;
    g.image_size = 32;
    return puzzle::generate_puzzles(91, 40, g);
  }();
  return d;
}
std::span<const puzzle::Puzzle> train_split() { return std::span(data()).first(24); }
std::span<const puzzle::Puzzle> val_split() { return std::span(data()).subspan(24); }

fs::path temp_path(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "dircr_checkpoint_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

}  // namespace

TEST(Checkpoint, RoundTripIsExact) {
  Trainer t(tiny_config(), train_split(), val_split());
  t.run_epoch();
  t.run_epoch();
  const fs::path path = temp_path("roundtrip.ckpt");
  t.save_checkpoint(path);
  auto r = Trainer::resume(path, train_split(), val_split());
  EXPECT_EQ(r->epochs_done(), 2);
  EXPECT_EQ(r->history(), t.history());
  auto pa = t.model().named_parameters(), pb = r->model().named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_EQ(pa[i].tensor.to_vector(), pb[i].tensor.to_vector()) << pa[i].name;
  }
  auto ba = t.model().named_buffers(), bb = r->model().named_buffers();
  for (std::size_t i = 0; i < ba.size(); ++i) EXPECT_EQ(ba[i].tensor.to_vector(), bb[i].tensor.to_vector());
  EXPECT_EQ(t.optimizer().steps(), r->optimizer().steps());
  EXPECT_EQ(t.optimizer().first_moments(), r->optimizer().first_moments());
  EXPECT_EQ(t.optimizer().second_moments(), r->optimizer().second_moments());
  EXPECT_EQ(to_json(t.config()), to_json(r->config()));
}

class ResumeTest : public ::testing::TestWithParam<std::string> {};

TEST_P(ResumeTest, ResumedRunMatchesUninterrupted) {
  const TrainConfig cfg = tiny_config(GetParam());
  Trainer straight(cfg, train_split(), val_split());
  straight.fit();

  const fs::path path = temp_path("resume_" + GetParam() + ".ckpt");
  {
    Trainer first(cfg, train_split(), val_split());
    first.run_epoch();
    first.run_epoch();
    first.save_checkpoint(path);
  }
  auto resumed = Trainer::resume(path, train_split(), val_split());
  resumed->fit();
  EXPECT_EQ(metrics_csv(resumed->history(), false), metrics_csv(straight.history(), false));
  auto pa = straight.model().parameters(), pb = resumed->model().parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].to_vector(), pb[i].to_vector());
}

INSTANTIATE_TEST_SUITE_P(Schedules, ResumeTest, ::testing::Values("joint", "two_phase"));

TEST(Checkpoint, TruncatedFileIsCorrupt) {
  Trainer t(tiny_config(), train_split(), val_split());
  const fs::path path = temp_path("full.ckpt");
  t.save_checkpoint(path);
  const std::string bytes = read_bytes(path);
  for (std::size_t keep : {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    const fs::path cut = temp_path("cut.ckpt");
    write_bytes(cut, bytes.substr(0, keep));
    EXPECT_THROW(Trainer::resume(cut, train_split(), val_split()), CorruptFile) << keep;
  }
}

TEST(Checkpoint, FlippedByteFailsChecksum) {
  Trainer t(tiny_config(), train_split(), val_split());
  const fs::path path = temp_path("flip.ckpt");
  t.save_checkpoint(path);
  std::string bytes = read_bytes(path);
  bytes[bytes.size() / 2] ^= 0x40;
  write_bytes(path, bytes);
  EXPECT_THROW(Trainer::resume(path, train_split(), val_split()), CorruptFile);
}

TEST(Checkpoint, OtherVersionIsRejected) {
  Trainer t(tiny_config(), train_split(), val_split());
  const fs::path path = temp_path("version.ckpt");
  t.save_checkpoint(path);
  std::string bytes = read_bytes(path);
  ASSERT_EQ(bytes.substr(0, 9), "DIRCRCKPT");
  bytes[9] = 2;  // u32 little-endian version follows the magic
  write_bytes(path, bytes);
  EXPECT_THROW(Trainer::resume(path, train_split(), val_split()), VersionMismatch);
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(Trainer::resume(temp_path("does_not_exist.ckpt"), train_split(), val_split()), IoError);
}
