#include "dircr/puzzle.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <set>

#include "dircr/errors.hpp"

namespace dircr::puzzle {

namespace {

constexpr int kMaxAttempts = 1000;
constexpr std::array<int, 4> kProgressionSteps{-2, -1, 1, 2};

// Fill gray per shade level, 0 lightest.
constexpr std::array<int, 5> kShadeGray{224, 168, 112, 56, 0};
constexpr int kBackground = 255;
constexpr int kSuper = 4;  // supersampling factor per axis

}  // namespace

ValueRange attribute_range(Attribute a) {
  switch (a) {
    case Attribute::ShapeType: return {0, 4};
    case Attribute::Size: return {1, 5};
    case Attribute::Shade: return {0, 4};
    case Attribute::Count: return {1, 4};
  }
  return {0, 0};
}

bool supports(Attribute a, RuleKind k) {
  return !(k == RuleKind::Arithmetic && a == Attribute::ShapeType);
}

std::string_view to_string(Attribute a) {
  switch (a) {
    case Attribute::ShapeType: return "shape_type";
    case Attribute::Size: return "size";
    case Attribute::Shade: return "shade";
    case Attribute::Count: return "count";
  }
  return "?";
}

std::string_view to_string(RuleKind k) {
  switch (k) {
    case RuleKind::Constant: return "constant";
    case RuleKind::Progression: return "progression";
    case RuleKind::Arithmetic: return "arithmetic";
    case RuleKind::DistributeThree: return "distribute_three";
  }
  return "?";
}

std::optional<Attribute> parse_attribute(std::string_view s) {
  for (auto a : kAllAttributes) {
    if (to_string(a) == s) return a;
  }
  return std::nullopt;
}

std::optional<RuleKind> parse_rule_kind(std::string_view s) {
  for (auto k : kAllRuleKinds) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

int PanelAttributes::get(Attribute a) const {
  switch (a) {
    case Attribute::ShapeType: return shape_type;
    case Attribute::Size: return size;
    case Attribute::Shade: return shade;
    case Attribute::Count: return count;
  }
  return 0;
}

void PanelAttributes::set(Attribute a, int v) {
  switch (a) {
    case Attribute::ShapeType: shape_type = v; break;
    case Attribute::Size: size = v; break;
    case Attribute::Shade: shade = v; break;
    case Attribute::Count: count = v; break;
  }
}

bool PanelAttributes::valid() const {
  for (auto a : kAllAttributes) {
    if (!attribute_range(a).contains(get(a))) return false;
  }
  return rotation >= 0 && rotation <= 7;
}

namespace {

enum class Outcome { Ok, Inconsistent, OutOfRange };

// Non-throwing core of apply_rule; `why` names the failure.
Outcome third_value(const RuleSpec& rule, int v1, int v2, int& out, const char*& why) {
  const ValueRange range = attribute_range(rule.attribute);
  if (!range.contains(v1) || !range.contains(v2)) {
    why = "values outside the attribute range";
    return Outcome::Inconsistent;
  }
  switch (rule.kind) {
    case RuleKind::Constant:
      if (v1 != v2) {
        why = "constant rule with differing values";
        return Outcome::Inconsistent;
      }
      out = v1;
      break;
    case RuleKind::Progression:
      if (v2 - v1 != rule.param) {
        why = "step does not match progression";
        return Outcome::Inconsistent;
      }
      out = v2 + rule.param;
      break;
    case RuleKind::Arithmetic:
      if (!supports(rule.attribute, rule.kind)) {
        why = "arithmetic on a nominal attribute";
        return Outcome::Inconsistent;
      }
      out = v1 + rule.param * v2;
      break;
    case RuleKind::DistributeThree: {
      const auto& t = rule.triple;
      const bool in1 = std::find(t.begin(), t.end(), v1) != t.end();
      const bool in2 = std::find(t.begin(), t.end(), v2) != t.end();
      if (!in1 || !in2 || v1 == v2) {
        why = "values not two distinct members of the triple";
        return Outcome::Inconsistent;
      }
      out = t[0] + t[1] + t[2] - v1 - v2;
      break;
    }
  }
  if (!range.contains(out)) {
    why = "third value outside the attribute range";
    return Outcome::OutOfRange;
  }
  return Outcome::Ok;
}

bool has_third(const RuleSpec& rule, int v1, int v2, int& out) {
  const char* why = nullptr;
  return third_value(rule, v1, v2, out, why) == Outcome::Ok;
}

}  // namespace

int apply_rule(const RuleSpec& rule, int v1, int v2) {
  int out = 0;
  const char* why = nullptr;
  switch (third_value(rule, v1, v2, out, why)) {
    case Outcome::Ok: return out;
    case Outcome::Inconsistent:
      throw InconsistentPrefix(std::string(why) + " (" + std::string(to_string(rule.attribute)) + ")");
    case Outcome::OutOfRange:
      throw RangeViolation(std::string(why) + " (" + std::string(to_string(rule.attribute)) + ": " +
                           std::to_string(out) + ")");
  }
  return out;
}

bool row_satisfies(const RuleSpec& rule, int v1, int v2, int v3) {
  int out = 0;
  return has_third(rule, v1, v2, out) && out == v3;
}

bool realizable(const RuleSpec& rule) {
  const ValueRange r = attribute_range(rule.attribute);
  if (!supports(rule.attribute, rule.kind)) return false;
  if (rule.kind == RuleKind::DistributeThree) {
    const auto& t = rule.triple;
    return r.contains(t[0]) && r.contains(t[1]) && r.contains(t[2]) && t[0] != t[1] &&
           t[1] != t[2] && t[0] != t[2];
  }
  if (rule.kind == RuleKind::Progression &&
      std::find(kProgressionSteps.begin(), kProgressionSteps.end(), rule.param) == kProgressionSteps.end()) {
    return false;
  }
  if (rule.kind == RuleKind::Arithmetic && rule.param != 1 && rule.param != -1) return false;
  for (int v1 = r.lo; v1 <= r.hi; ++v1) {
    for (int v2 = r.lo; v2 <= r.hi; ++v2) {
      int out = 0;
      if (has_third(rule, v1, v2, out)) return true;
    }
  }
  return false;
}

std::vector<RuleSpec> sample_rule_specs(Rng& rng, int n_rules, std::span<const RuleKind> kinds) {
  if (n_rules < 1 || n_rules > 3) throw ConfigError("n_rules must be in 1..3");
  std::vector<RuleKind> allowed(kinds.begin(), kinds.end());
  if (allowed.empty()) allowed.assign(kAllRuleKinds.begin(), kAllRuleKinds.end());

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::array<Attribute, kNumAttributes> attrs = kAllAttributes;
    // Partial Fisher-Yates for n distinct attributes.
    for (int i = 0; i < n_rules; ++i) {
      const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(kNumAttributes - i)));
      std::swap(attrs[i], attrs[j]);
    }
    std::vector<RuleSpec> rules;
    for (int i = 0; i < n_rules; ++i) {
      std::vector<RuleKind> options;
      for (auto k : allowed) {
        if (supports(attrs[i], k)) options.push_back(k);
      }
      if (options.empty()) break;
      RuleSpec rule;
      rule.attribute = attrs[i];
      rule.kind = options[rng.below(options.size())];
      const ValueRange range = attribute_range(rule.attribute);
      do {
        switch (rule.kind) {
          case RuleKind::Constant: rule.param = 0; break;
          case RuleKind::Progression: rule.param = kProgressionSteps[rng.below(4)]; break;
          case RuleKind::Arithmetic: rule.param = rng.below(2) ? 1 : -1; break;
          case RuleKind::DistributeThree: {
            std::vector<int> values;
            for (int v = range.lo; v <= range.hi; ++v) values.push_back(v);
            for (int k = 0; k < 3; ++k) {
              const auto j = k + rng.below(values.size() - static_cast<std::size_t>(k));
              std::swap(values[k], values[j]);
              rule.triple[k] = values[k];
            }
            break;
          }
        }
      } while (!realizable(rule));
      rules.push_back(rule);
    }
    if (static_cast<int>(rules.size()) == n_rules) return rules;
  }
  throw GenerationExhausted("no attribute assignment fits the allowed rule kinds");
}

namespace {

// One shape copy centered at the origin. Polygon vertices are snapped to
// 1/1024 px so the raster is stable across libm versions.
struct ShapeOutline {
  bool circle = false;
  double radius = 0;
  std::vector<std::pair<double, double>> vertices;  // counter-clockwise in (x, y)

  ShapeOutline(int shape, int rotation, double r) : circle(shape == static_cast<int>(ShapeType::Circle)), radius(r) {
    if (circle) return;
    const int sides = shape + 3;
    // Base orientation: one vertex straight up; rotation in 45 degree steps.
    const double base = -std::numbers::pi / 2 + rotation * std::numbers::pi / 4;
    auto snap = [](double v) { return std::round(v * 1024.0) / 1024.0; };
    for (int i = 0; i < sides; ++i) {
      const double ang = base + 2.0 * std::numbers::pi * i / sides;
      vertices.emplace_back(snap(r * std::cos(ang)), snap(r * std::sin(ang)));
    }
  }

  bool contains(double dx, double dy) const {
    if (circle) return dx * dx + dy * dy <= radius * radius;
    const std::size_t n = vertices.size();
    for (std::size_t i = 0; i < n; ++i) {
      const auto [ax, ay] = vertices[i];
      const auto [bx, by] = vertices[(i + 1) % n];
      // Inside lies to the left of every edge.
      if ((bx - ax) * (dy - ay) - (by - ay) * (dx - ax) < 0) return false;
    }
    return true;
  }
};

}  // namespace

Image render_panel(const PanelAttributes& attrs, int image_size) {
  if (image_size < kMinImageSize) throw ConfigError("image_size must be at least 16");
  if (!attrs.valid()) throw RangeViolation("panel attributes out of range");
  const int s = image_size;
  Image img(static_cast<std::size_t>(s * s), static_cast<std::uint8_t>(kBackground));
  const double cell = s / 2.0;
  const double radius = (cell / 2.0) * (0.28 + 0.13 * attrs.size);
  const int fill = kShadeGray[attrs.shade];
  // Slot order on the 2x2 grid: TL, TR, BL, BR.
  const std::array<std::pair<double, double>, 4> slots{
      {{cell / 2, cell / 2}, {cell * 1.5, cell / 2}, {cell / 2, cell * 1.5}, {cell * 1.5, cell * 1.5}}};
  const ShapeOutline outline(attrs.shape_type, attrs.rotation, radius);
  for (int c = 0; c < attrs.count; ++c) {
    const auto [cx, cy] = slots[c];
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)) - 1);
    const int x1 = std::min(s - 1, static_cast<int>(std::ceil(cx + radius)) + 1);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)) - 1);
    const int y1 = std::min(s - 1, static_cast<int>(std::ceil(cy + radius)) + 1);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSuper; ++sy) {
          for (int sx = 0; sx < kSuper; ++sx) {
            const double px = x + (sx + 0.5) / kSuper;
            const double py = y + (sy + 0.5) / kSuper;
            hits += outline.contains(px - cx, py - cy) ? 1 : 0;
          }
        }
        if (hits == 0) continue;
        constexpr int total = kSuper * kSuper;
        // Integer blend by coverage; fully covered pixels take the exact fill gray.
        const int value = (kBackground * (total - hits) + fill * hits + total / 2) / total;
        auto& px = img[static_cast<std::size_t>(y * s + x)];
        px = static_cast<std::uint8_t>(std::min<int>(px, value));
      }
    }
  }
  return img;
}

namespace {

// Values for one row of `rule`; `row` selects the DistributeThree rotation.
std::array<int, 3> sample_row(const RuleSpec& rule, int row, Rng& rng) {
  const ValueRange r = attribute_range(rule.attribute);
  switch (rule.kind) {
    case RuleKind::Constant: {
      const int v = rng.uniform_int(r.lo, r.hi);
      return {v, v, v};
    }
    case RuleKind::DistributeThree: {
      const auto& t = rule.triple;
      return {t[row % 3], t[(row + 1) % 3], t[(row + 2) % 3]};
    }
    case RuleKind::Progression:
    case RuleKind::Arithmetic: {
      std::vector<std::array<int, 3>> rows;
      for (int v1 = r.lo; v1 <= r.hi; ++v1) {
        for (int v2 = r.lo; v2 <= r.hi; ++v2) {
          int v3 = 0;
          if (has_third(rule, v1, v2, v3)) rows.push_back({v1, v2, v3});
        }
      }
      return rows[rng.below(rows.size())];
    }
  }
  return {};
}

const RuleSpec* rule_for(const std::vector<RuleSpec>& rules, Attribute a) {
  for (const auto& r : rules) {
    if (r.attribute == a) return &r;
  }
  return nullptr;
}

bool row_consistent(const std::vector<RuleSpec>& rules, const PanelAttributes& a,
                    const PanelAttributes& b, const PanelAttributes& c, const PanelAttributes& reference) {
  for (auto attr : kAllAttributes) {
    if (const RuleSpec* rule = rule_for(rules, attr)) {
      if (!row_satisfies(*rule, a.get(attr), b.get(attr), c.get(attr))) return false;
    } else if (a.get(attr) != reference.get(attr) || b.get(attr) != reference.get(attr) ||
               c.get(attr) != reference.get(attr)) {
      return false;
    }
  }
  return true;
}

}  // namespace

Puzzle generate_puzzle(Rng& rng, const GenerateConfig& cfg) {
  if (cfg.image_size < kMinImageSize) throw ConfigError("image_size must be at least 16");
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Puzzle p;
    p.image_size = cfg.image_size;
    p.rules = sample_rule_specs(rng, cfg.n_rules, cfg.kinds);

    PanelAttributes background;
    for (auto a : kAllAttributes) {
      const ValueRange r = attribute_range(a);
      background.set(a, rng.uniform_int(r.lo, r.hi));
    }
    std::array<PanelAttributes, 9> grid;
    grid.fill(background);
    for (const auto& rule : p.rules) {
      for (int row = 0; row < 3; ++row) {
        const auto values = sample_row(rule, row, rng);
        for (int col = 0; col < 3; ++col) grid[row * 3 + col].set(rule.attribute, values[col]);
      }
    }
    for (auto& panel : grid) panel.rotation = rng.uniform_int(0, 7);

    const PanelAttributes answer = grid[8];
    // Every other value of every attribute breaks some rule (or the constancy
    // of an unruled attribute).
    std::vector<std::pair<Attribute, int>> violations;
    for (auto a : kAllAttributes) {
      const ValueRange r = attribute_range(a);
      for (int v = r.lo; v <= r.hi; ++v) {
        if (v != answer.get(a)) violations.emplace_back(a, v);
      }
    }
    if (violations.size() < kCandidates - 1) continue;
    for (int i = 0; i < kCandidates - 1; ++i) {
      const auto j = static_cast<std::size_t>(i) + rng.below(violations.size() - static_cast<std::size_t>(i));
      std::swap(violations[i], violations[j]);
    }
    p.answer_index = rng.uniform_int(0, kCandidates - 1);
    int next = 0;
    for (int slot = 0; slot < kCandidates; ++slot) {
      PanelAttributes cand = answer;
      if (slot != p.answer_index) {
        const auto [attr, value] = violations[next++];
        cand.set(attr, value);
      }
      cand.rotation = rng.uniform_int(0, 7);
      p.candidate_attributes[slot] = cand;
    }
    for (int i = 0; i < kContextPanels; ++i) p.context_attributes[i] = grid[i];

    for (int i = 0; i < kContextPanels; ++i) p.context[i] = render_panel(grid[i], cfg.image_size);
    for (int j = 0; j < kCandidates; ++j) p.candidates[j] = render_panel(p.candidate_attributes[j], cfg.image_size);

    std::set<Image> distinct(p.candidates.begin(), p.candidates.end());
    if (distinct.size() != kCandidates) continue;
    if (!validate_puzzle(p)) continue;
    return p;
  }
  throw GenerationExhausted("no valid puzzle after 1000 attempts");
}

Puzzle generate_puzzle(std::uint64_t seed, const GenerateConfig& cfg) {
  Rng rng(seed);
  Puzzle p = generate_puzzle(rng, cfg);
  p.seed = seed;
  return p;
}

std::vector<Puzzle> generate_puzzles(std::uint64_t seed, int count, const GenerateConfig& cfg) {
  std::vector<Puzzle> out(static_cast<std::size_t>(std::max(0, count)));
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 16)
  for (int i = 0; i < count; ++i) {
    try {
      out[i] = generate_puzzle(mix_seed(seed, static_cast<std::uint64_t>(i)), cfg);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::vector<int> satisfying_candidates(const Puzzle& p) {
  std::vector<int> out;
  const auto& ctx = p.context_attributes;
  for (int j = 0; j < kCandidates; ++j) {
    if (row_consistent(p.rules, ctx[6], ctx[7], p.candidate_attributes[j], ctx[0])) out.push_back(j);
  }
  return out;
}

bool validate_puzzle(const Puzzle& p) {
  if (p.answer_index < 0 || p.answer_index >= kCandidates) return false;
  std::set<Attribute> seen;
  for (const auto& r : p.rules) {
    if (!seen.insert(r.attribute).second || !realizable(r)) return false;
  }
  for (const auto& a : p.context_attributes) {
    if (!a.valid()) return false;
  }
  for (const auto& a : p.candidate_attributes) {
    if (!a.valid()) return false;
  }
  const auto& ctx = p.context_attributes;
  for (int row = 0; row < 2; ++row) {
    if (!row_consistent(p.rules, ctx[row * 3], ctx[row * 3 + 1], ctx[row * 3 + 2], ctx[0])) return false;
  }
  const auto sat = satisfying_candidates(p);
  return sat.size() == 1 && sat[0] == p.answer_index;
}

bool images_match_attributes(const Puzzle& p) {
  if (p.image_size < kMinImageSize) return false;
  for (int i = 0; i < kContextPanels; ++i) {
    if (p.context[i] != render_panel(p.context_attributes[i], p.image_size)) return false;
  }
  for (int j = 0; j < kCandidates; ++j) {
    if (p.candidates[j] != render_panel(p.candidate_attributes[j], p.image_size)) return false;
  }
  return true;
}

}  // namespace dircr::puzzle
