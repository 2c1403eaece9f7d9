#pragma once

// "dircr-pzl-v1" dataset container: a UTF-8 JSON manifest next to a
// little-endian binary blob of puzzle records.
//
// Blob layout:
//   magic "DIRCRPZL" (8 bytes), u32 format version (1), u32 image size
//   then `count` records of:
//     16 panels x image_size^2 bytes (8 context, then 8 candidates)
//     u8  answer index
//     u16 metadata length, then that many bytes of UTF-8 JSON
//         {"seed", "rules", "context", "candidates"}

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dircr/puzzle.hpp"

namespace dircr::puzzle {

inline constexpr const char* kDatasetVersion = "dircr-pzl-v1";

enum class Split { Train, Val, Test };
std::string_view to_string(Split s);
std::optional<Split> parse_split(std::string_view s);

/// Split sizes of the standard RAVEN evaluation protocol.
struct SplitSizes {
  int train;
  int val;
  int test;
};
inline constexpr SplitSizes kPaperProtocolSplits{42000, 14000, 14000};

struct DatasetManifest {
  std::string version = kDatasetVersion;
  int count = 0;
  int image_size = 0;
  std::map<std::string, int> rule_histogram;
  Split split = Split::Train;
  std::uint64_t seed = 0;
  std::string blob;  // file name of the blob, relative to the manifest
};

std::map<std::string, int> rule_histogram(const std::vector<Puzzle>& puzzles);

/// Writes `manifest_path` and a blob next to it (same stem, ".bin").
/// Throws ConfigError on an empty list or mixed image sizes, IoError on I/O failure.
DatasetManifest write_dataset(const std::vector<Puzzle>& puzzles, const std::filesystem::path& manifest_path,
                              Split split, std::uint64_t seed);

/// Throws FormatError on a bad version or magic, TruncatedFile on a short blob.
DatasetManifest read_manifest(const std::filesystem::path& manifest_path);
std::vector<Puzzle> load_dataset(const std::filesystem::path& manifest_path);

/// Metadata JSON of one record (rules, attributes, seed).
std::string record_metadata(const Puzzle& p);

}  // namespace dircr::puzzle
