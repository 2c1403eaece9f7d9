#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dircr/dataset.hpp"
#include "dircr/errors.hpp"

using namespace dircr;
using namespace dircr::puzzle;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("dircr_dataset_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<Puzzle> sample(int n, int size = 32, int n_rules = 1) {
  GenerateConfig cfg;
  cfg.image_size = size;
  cfg.n_rules = n_rules;
  return generate_puzzles(31, n, cfg);
}

}  // namespace

TEST(Dataset, RoundTripIsExact) {
  auto dir = scratch_dir("roundtrip");
  auto puzzles = sample(100, 32, 2);
  auto m = write_dataset(puzzles, dir / "train.json", Split::Train, 31);
  EXPECT_EQ(m.count, 100);
  EXPECT_EQ(m.version, "dircr-pzl-v1");
  auto loaded = load_dataset(dir / "train.json");
  ASSERT_EQ(loaded.size(), puzzles.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) EXPECT_TRUE(loaded[i] == puzzles[i]) << i;
  auto back = read_manifest(dir / "train.json");
  EXPECT_EQ(back.count, 100);
  EXPECT_EQ(back.image_size, 32);
  EXPECT_EQ(back.seed, 31u);
  EXPECT_EQ(back.split, Split::Train);
  EXPECT_EQ(back.rule_histogram, rule_histogram(puzzles));
}

TEST(Dataset, WritingTwiceGivesIdenticalBytes) {
  auto dir = scratch_dir("bytes");
  auto puzzles = sample(20);
  write_dataset(puzzles, dir / "a.json", Split::Test, 1);
  write_dataset(puzzles, dir / "b.json", Split::Test, 1);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
}

TEST(Dataset, MissingRecordIsTruncation) {
  auto dir = scratch_dir("truncated");
  auto puzzles = sample(100);
  write_dataset(puzzles, dir / "d.json", Split::Val, 2);
  // Rewrite the blob with only 99 records and keep the manifest at 100.
  std::vector<Puzzle> shorter(puzzles.begin(), puzzles.end() - 1);
  write_dataset(shorter, dir / "short.json", Split::Val, 2);
  fs::copy_file(dir / "short.bin", dir / "d.bin", fs::copy_options::overwrite_existing);
  EXPECT_THROW(load_dataset(dir / "d.json"), TruncatedFile);
}

TEST(Dataset, ChoppedBlobIsTruncation) {
  auto dir = scratch_dir("chopped");
  write_dataset(sample(5), dir / "d.json", Split::Val, 2);
  fs::resize_file(dir / "d.bin", fs::file_size(dir / "d.bin") - 10);
  EXPECT_THROW(load_dataset(dir / "d.json"), TruncatedFile);
}

TEST(Dataset, BadMagicAndVersion) {
  auto dir = scratch_dir("magic");
  write_dataset(sample(3), dir / "d.json", Split::Train, 2);
  {
    std::fstream f(dir / "d.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  EXPECT_THROW(load_dataset(dir / "d.json"), FormatError);

  write_dataset(sample(3), dir / "e.json", Split::Train, 2);
  nlohmann::json j;
  {
    std::ifstream in(dir / "e.json");
    in >> j;
  }
  j["version"] = "dircr-pzl-v0";
  {
    std::ofstream out(dir / "e.json");
    out << j.dump();
  }
  EXPECT_THROW(read_manifest(dir / "e.json"), FormatError);
}

TEST(Dataset, RejectsEmptyAndMixedInput) {
  auto dir = scratch_dir("reject");
  EXPECT_THROW(write_dataset({}, dir / "x.json", Split::Train, 0), ConfigError);
  auto mixed = sample(2, 32);
  mixed.push_back(sample(1, 48)[0]);
  EXPECT_THROW(write_dataset(mixed, dir / "x.json", Split::Train, 0), ConfigError);
}

TEST(Dataset, ProtocolSplitSizes) {
  EXPECT_EQ(kPaperProtocolSplits.train, 42000);
  EXPECT_EQ(kPaperProtocolSplits.val, 14000);
  EXPECT_EQ(kPaperProtocolSplits.test, 14000);
}

TEST(Dataset, SplitNames) {
  EXPECT_EQ(parse_split("val"), Split::Val);
  EXPECT_EQ(to_string(Split::Test), "test");
  EXPECT_FALSE(parse_split("dev").has_value());
}
