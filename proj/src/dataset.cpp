#include "dircr/dataset.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "dircr/errors.hpp"

namespace dircr::puzzle {

using nlohmann::json;

namespace {

constexpr char kBlobMagic[8] = {'D', 'I', 'R', 'C', 'R', 'P', 'Z', 'L'};
constexpr std::uint32_t kBlobVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

json attrs_to_json(const PanelAttributes& a) {
  return json::array({a.shape_type, a.size, a.shade, a.count, a.rotation});
}

PanelAttributes attrs_from_json(const json& j) {
  if (!j.is_array() || j.size() != 5) throw FormatError("panel attributes must be a 5-element array");
  PanelAttributes a;
  a.shape_type = j[0].get<int>();
  a.size = j[1].get<int>();
  a.shade = j[2].get<int>();
  a.count = j[3].get<int>();
  a.rotation = j[4].get<int>();
  return a;
}

json rule_to_json(const RuleSpec& r) {
  json j{{"attribute", to_string(r.attribute)}, {"kind", to_string(r.kind)}, {"param", r.param}};
  if (r.kind == RuleKind::DistributeThree) j["values"] = r.triple;
  return j;
}

RuleSpec rule_from_json(const json& j) {
  RuleSpec r;
  auto attr = parse_attribute(j.at("attribute").get<std::string>());
  auto kind = parse_rule_kind(j.at("kind").get<std::string>());
  if (!attr || !kind) throw FormatError("unknown rule attribute or kind");
  r.attribute = *attr;
  r.kind = *kind;
  r.param = j.at("param").get<int>();
  if (r.kind == RuleKind::DistributeThree) r.triple = j.at("values").get<std::array<int, 3>>();
  return r;
}

std::filesystem::path blob_path_for(const std::filesystem::path& manifest_path) {
  auto p = manifest_path;
  p.replace_extension(".bin");
  return p;
}

}  // namespace

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::optional<Split> parse_split(std::string_view s) {
  for (auto v : {Split::Train, Split::Val, Split::Test}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

std::map<std::string, int> rule_histogram(const std::vector<Puzzle>& puzzles) {
  std::map<std::string, int> hist;
  for (const auto& p : puzzles) {
    for (const auto& r : p.rules) ++hist[std::string(to_string(r.kind))];
  }
  return hist;
}

std::string record_metadata(const Puzzle& p) {
  json rules = json::array();
  for (const auto& r : p.rules) rules.push_back(rule_to_json(r));
  json ctx = json::array(), cand = json::array();
  for (const auto& a : p.context_attributes) ctx.push_back(attrs_to_json(a));
  for (const auto& a : p.candidate_attributes) cand.push_back(attrs_to_json(a));
  json meta{{"seed", p.seed}, {"rules", rules}, {"context", ctx}, {"candidates", cand}};
  return meta.dump();
}

DatasetManifest write_dataset(const std::vector<Puzzle>& puzzles, const std::filesystem::path& manifest_path,
                              Split split, std::uint64_t seed) {
  if (puzzles.empty()) throw ConfigError("write_dataset: empty puzzle list");
  const int size = puzzles.front().image_size;
  const auto panel_bytes = static_cast<std::size_t>(size) * static_cast<std::size_t>(size);
  for (const auto& p : puzzles) {
    if (p.image_size != size) throw ConfigError("write_dataset: mixed image sizes");
    for (const auto& img : p.context)
      if (img.size() != panel_bytes) throw ConfigError("write_dataset: panel size mismatch");
    for (const auto& img : p.candidates)
      if (img.size() != panel_bytes) throw ConfigError("write_dataset: panel size mismatch");
  }

  DatasetManifest m;
  m.count = static_cast<int>(puzzles.size());
  m.image_size = size;
  m.rule_histogram = rule_histogram(puzzles);
  m.split = split;
  m.seed = seed;
  m.blob = blob_path_for(manifest_path).filename().string();

  std::string buf(kBlobMagic, sizeof kBlobMagic);
  put_u32(buf, kBlobVersion);
  put_u32(buf, static_cast<std::uint32_t>(size));
  for (const auto& p : puzzles) {
    for (const auto& img : p.context) buf.append(reinterpret_cast<const char*>(img.data()), img.size());
    for (const auto& img : p.candidates) buf.append(reinterpret_cast<const char*>(img.data()), img.size());
    buf.push_back(static_cast<char>(p.answer_index));
    const std::string meta = record_metadata(p);
    if (meta.size() > 0xffff) throw ConfigError("write_dataset: metadata exceeds 65535 bytes");
    put_u16(buf, static_cast<std::uint16_t>(meta.size()));
    buf += meta;
  }

  if (manifest_path.has_parent_path()) std::filesystem::create_directories(manifest_path.parent_path());
  {
    std::ofstream out(blob_path_for(manifest_path), std::ios::binary | std::ios::trunc);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("cannot write " + blob_path_for(manifest_path).string());
  }
  json hist = json::object();
  for (const auto& [k, v] : m.rule_histogram) hist[k] = v;
  json j{{"version", m.version}, {"count", m.count},       {"image_size", m.image_size},
         {"rule_histogram", hist}, {"split", to_string(split)}, {"seed", m.seed},
         {"blob", m.blob}};
  std::ofstream out(manifest_path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + manifest_path.string());
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest is not JSON: ") + e.what());
  }
  DatasetManifest m;
  try {
    m.version = j.at("version").get<std::string>();
    if (m.version != kDatasetVersion) throw FormatError("unsupported dataset version '" + m.version + "'");
    m.count = j.at("count").get<int>();
    m.image_size = j.at("image_size").get<int>();
    for (auto& [k, v] : j.at("rule_histogram").items()) m.rule_histogram[k] = v.get<int>();
    auto split = parse_split(j.at("split").get<std::string>());
    if (!split) throw FormatError("unknown split");
    m.split = *split;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.blob = j.value("blob", blob_path_for(manifest_path).filename().string());
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  if (m.count < 0 || m.image_size < kMinImageSize) throw FormatError("manifest count or image size out of range");
  return m;
}

std::vector<Puzzle> load_dataset(const std::filesystem::path& manifest_path) {
  const DatasetManifest m = read_manifest(manifest_path);
  const auto blob = manifest_path.parent_path() / m.blob;
  std::ifstream in(blob, std::ios::binary);
  if (!in) throw IoError("cannot open " + blob.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* data = reinterpret_cast<const unsigned char*>(buf.data());
  const std::size_t n = buf.size();

  if (n < 16) throw TruncatedFile("blob header is incomplete");
  if (std::memcmp(data, kBlobMagic, sizeof kBlobMagic) != 0) throw FormatError("bad blob magic");
  if (get_u32(data + 8) != kBlobVersion) throw FormatError("unsupported blob version");
  if (get_u32(data + 12) != static_cast<std::uint32_t>(m.image_size)) {
    throw FormatError("blob image size disagrees with manifest");
  }

  const auto panel = static_cast<std::size_t>(m.image_size) * static_cast<std::size_t>(m.image_size);
  std::size_t pos = 16;
  std::vector<Puzzle> out;
  out.reserve(static_cast<std::size_t>(m.count));
  for (int r = 0; r < m.count; ++r) {
    const std::size_t fixed = 16 * panel + 3;
    if (pos + fixed > n) throw TruncatedFile("record " + std::to_string(r) + " of " + std::to_string(m.count));
    Puzzle p;
    p.image_size = m.image_size;
    for (auto& img : p.context) {
      img.assign(data + pos, data + pos + panel);
      pos += panel;
    }
    for (auto& img : p.candidates) {
      img.assign(data + pos, data + pos + panel);
      pos += panel;
    }
    p.answer_index = data[pos++];
    const std::size_t len = static_cast<std::size_t>(data[pos]) | (static_cast<std::size_t>(data[pos + 1]) << 8);
    pos += 2;
    if (pos + len > n) throw TruncatedFile("metadata of record " + std::to_string(r));
    try {
      const json meta = json::parse(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                    buf.begin() + static_cast<std::ptrdiff_t>(pos + len));
      p.seed = meta.at("seed").get<std::uint64_t>();
      for (const auto& rj : meta.at("rules")) p.rules.push_back(rule_from_json(rj));
      const auto& ctx = meta.at("context");
      const auto& cand = meta.at("candidates");
      if (ctx.size() != kContextPanels || cand.size() != kCandidates) throw FormatError("attribute list length");
      for (int i = 0; i < kContextPanels; ++i) p.context_attributes[i] = attrs_from_json(ctx[i]);
      for (int i = 0; i < kCandidates; ++i) p.candidate_attributes[i] = attrs_from_json(cand[i]);
    } catch (const json::exception& e) {
      throw FormatError("record " + std::to_string(r) + " metadata: " + e.what());
    }
    pos += len;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace dircr::puzzle
