#pragma once

// Procedural RAVEN-style puzzles: a 3x3 matrix of rendered panels whose rows
// share attribute rules, with the bottom-right panel replaced by 8 candidates.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dircr/rng.hpp"

namespace dircr::puzzle {

inline constexpr int kContextPanels = 8;
inline constexpr int kCandidates = 8;
inline constexpr int kMinImageSize = 16;

enum class Attribute : std::uint8_t { ShapeType = 0, Size = 1, Shade = 2, Count = 3 };
inline constexpr int kNumAttributes = 4;
inline constexpr std::array<Attribute, kNumAttributes> kAllAttributes{
    Attribute::ShapeType, Attribute::Size, Attribute::Shade, Attribute::Count};

enum class RuleKind : std::uint8_t { Constant = 0, Progression = 1, Arithmetic = 2, DistributeThree = 3 };
inline constexpr std::array<RuleKind, 4> kAllRuleKinds{RuleKind::Constant, RuleKind::Progression,
                                                       RuleKind::Arithmetic, RuleKind::DistributeThree};

enum class ShapeType : std::uint8_t { Triangle = 0, Square, Pentagon, Hexagon, Circle };

struct ValueRange {
  int lo;
  int hi;
  bool contains(int v) const { return v >= lo && v <= hi; }
  int span() const { return hi - lo + 1; }
};

ValueRange attribute_range(Attribute a);
/// Arithmetic is only defined on the ordinal attributes (size, shade, count).
bool supports(Attribute a, RuleKind k);

std::string_view to_string(Attribute a);
std::string_view to_string(RuleKind k);
std::optional<Attribute> parse_attribute(std::string_view s);
std::optional<RuleKind> parse_rule_kind(std::string_view s);

/// Visual attributes of one panel. Rotation (multiples of 45 degrees) is
/// per-panel noise and never carries a rule.
struct PanelAttributes {
  int shape_type = 0;  // ShapeType index 0..4
  int size = 1;        // 1..5
  int shade = 0;       // 0..4, 0 lightest
  int count = 1;       // 1..4 copies on a 2x2 grid
  int rotation = 0;    // 0..7

  int get(Attribute a) const;
  void set(Attribute a, int v);
  bool valid() const;
  friend bool operator==(const PanelAttributes&, const PanelAttributes&) = default;
};

/// A row rule over one attribute. `param` is the Progression step
/// (+-1, +-2) or the Arithmetic sign (+-1); `triple` is the ordered value set
/// of DistributeThree.
struct RuleSpec {
  Attribute attribute = Attribute::ShapeType;
  RuleKind kind = RuleKind::Constant;
  int param = 0;
  std::array<int, 3> triple{};

  friend bool operator==(const RuleSpec&, const RuleSpec&) = default;
};

/// The third value of a row given its first two.
/// Throws InconsistentPrefix if (v1, v2) cannot start a row under `rule`, and
/// RangeViolation if the forced value lies outside the attribute's range.
int apply_rule(const RuleSpec& rule, int v1, int v2);

/// True when (v1, v2, v3) is a valid row under `rule`.
bool row_satisfies(const RuleSpec& rule, int v1, int v2, int v3);

/// Whether some in-range row exists for `rule`.
bool realizable(const RuleSpec& rule);

using Image = std::vector<std::uint8_t>;

struct Puzzle {
  int image_size = 0;
  std::array<Image, kContextPanels> context;
  std::array<Image, kCandidates> candidates;
  int answer_index = 0;
  std::vector<RuleSpec> rules;
  std::uint64_t seed = 0;
  // Ground-truth attributes behind the rendered panels.
  std::array<PanelAttributes, kContextPanels> context_attributes{};
  std::array<PanelAttributes, kCandidates> candidate_attributes{};

  friend bool operator==(const Puzzle&, const Puzzle&) = default;
};

struct GenerateConfig {
  int image_size = 80;
  int n_rules = 1;
  /// Rule kinds the sampler may use; empty means all.
  std::vector<RuleKind> kinds;
};

/// `n_rules` realizable rules over pairwise-distinct attributes.
std::vector<RuleSpec> sample_rule_specs(Rng& rng, int n_rules, std::span<const RuleKind> kinds = {});

/// Grayscale raster of `attrs`, `image_size`^2 bytes, row-major, background 255.
Image render_panel(const PanelAttributes& attrs, int image_size);

/// One puzzle. Attributes without a rule are held constant over the whole
/// matrix; each distractor changes exactly one attribute of the answer to a
/// value drawn uniformly from all rule-violating alternatives.
/// Throws GenerationExhausted after 1000 failed attempts.
Puzzle generate_puzzle(Rng& rng, const GenerateConfig& cfg);

/// Seeds a generator with `seed` and records it in the puzzle.
Puzzle generate_puzzle(std::uint64_t seed, const GenerateConfig& cfg);

/// Puzzle `i` uses sub-seed mix_seed(seed, i), so the output does not depend
/// on the number of worker threads.
std::vector<Puzzle> generate_puzzles(std::uint64_t seed, int count, const GenerateConfig& cfg);

/// Attribute-level oracle: rows 1-2 satisfy every rule, unruled attributes
/// are constant, and exactly one candidate completes row 3 - the one at
/// answer_index.
bool validate_puzzle(const Puzzle& p);

/// Indices of candidates that complete row 3 consistently.
std::vector<int> satisfying_candidates(const Puzzle& p);

/// Every stored image equals the rendering of its recorded attributes.
bool images_match_attributes(const Puzzle& p);

}  // namespace dircr::puzzle
