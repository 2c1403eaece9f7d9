// Checkpoint container (little-endian):
//   magic "DIRCRCKPT" (9 bytes), u32 version, u64 payload length, payload,
//   u64 FNV-1a hash of the payload.
// Payload: config JSON, epoch, metrics history JSON, dropout RNG state,
// optimizer step count, sizeof(Real), then named tensors.

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "dircr/errors.hpp"
#include "dircr/trainer.hpp"

namespace dircr {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "DIRCRCKPT";
constexpr std::size_t kMagicLen = 9;
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <class T>
  void pod(T v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_ += s;
  }
  void reals(std::span<const Real> v) {
    pod<std::uint64_t>(v.size());
    buf_.append(reinterpret_cast<const char*>(v.data()), v.size_bytes());
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::vector<Real> reals() {
    const auto n = pod<std::uint64_t>();
    need(n * sizeof(Real));
    std::vector<Real> v(n);
    std::memcpy(v.data(), data_.data() + pos_, n * sizeof(Real));
    pos_ += n * sizeof(Real);
    return v;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw CorruptFile("checkpoint payload ends early");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

void write_module(Writer& w, const std::string& prefix, const nn::Module& m) {
  for (const auto& p : m.named_parameters()) {
    w.str(prefix + "param:" + p.name);
    w.reals(p.tensor.data());
  }
  for (const auto& b : m.named_buffers()) {
    w.str(prefix + "buffer:" + b.name);
    w.reals(b.tensor.data());
  }
}

void read_module(std::map<std::string, std::vector<Real>>& store, const std::string& prefix, nn::Module& m) {
  auto load = [&](const std::string& key, Tensor t) {
    auto it = store.find(key);
    if (it == store.end()) throw CorruptFile("checkpoint lacks tensor " + key);
    if (static_cast<std::int64_t>(it->second.size()) != t.numel()) {
      throw CorruptFile("checkpoint tensor " + key + " has the wrong size");
    }
    std::copy(it->second.begin(), it->second.end(), t.data().begin());
  };
  for (auto& p : m.named_parameters()) load(prefix + "param:" + p.name, p.tensor);
  for (auto& b : m.named_buffers()) load(prefix + "buffer:" + b.name, b.tensor);
}

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  Writer w;
  w.str(to_json(cfg_).dump());
  w.pod<std::int32_t>(epoch_);
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : history_) hist.push_back(to_json(r));
  w.str(hist.dump());
  w.str(model_->dropout_rng().state());
  w.pod<std::int64_t>(optim_->steps());
  w.pod<std::uint32_t>(sizeof(Real));
  w.pod<std::uint8_t>(teacher_ ? 1 : 0);

  std::uint32_t n_tensors = 0;
  Writer tensors;
  auto count = [&](const nn::Module& m) {
    return static_cast<std::uint32_t>(m.named_parameters().size() + m.named_buffers().size());
  };
  write_module(tensors, "", *model_);
  n_tensors += count(*model_);
  if (teacher_) {
    write_module(tensors, "teacher.", *teacher_);
    n_tensors += count(*teacher_);
  }
  auto& m = const_cast<Adam&>(*optim_).first_moments();
  auto& v = const_cast<Adam&>(*optim_).second_moments();
  for (std::size_t i = 0; i < m.size(); ++i) {
    tensors.str("adam.m:" + std::to_string(i));
    tensors.reals(m[i]);
    tensors.str("adam.v:" + std::to_string(i));
    tensors.reals(v[i]);
    n_tensors += 2;
  }
  w.pod(n_tensors);
  const std::string payload = w.bytes() + tensors.bytes();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    Writer head;
    head.pod(kCheckpointVersion);
    head.pod<std::uint64_t>(payload.size());
    out.write(kMagic, kMagicLen);
    out.write(head.bytes().data(), static_cast<std::streamsize>(head.bytes().size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    const std::uint64_t h = fnv1a(payload);
    out.write(reinterpret_cast<const char*>(&h), sizeof h);
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

std::unique_ptr<Trainer> Trainer::resume(const std::filesystem::path& path, std::span<const puzzle::Puzzle> train,
                                         std::span<const puzzle::Puzzle> val) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  constexpr std::size_t header = kMagicLen + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (file.size() < header || file.compare(0, kMagicLen, kMagic) != 0) {
    throw CorruptFile(path.string() + " is not a checkpoint");
  }
  Reader head(std::string_view(file).substr(kMagicLen, header - kMagicLen));
  const auto version = head.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionMismatch("checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  const auto len = head.pod<std::uint64_t>();
  if (file.size() - header < sizeof(std::uint64_t) || len != file.size() - header - sizeof(std::uint64_t)) {
    throw CorruptFile("checkpoint " + path.string() + " is truncated or has trailing bytes");
  }
  const std::string_view payload = std::string_view(file).substr(header, len);
  std::uint64_t stored;
  std::memcpy(&stored, file.data() + header + len, sizeof stored);
  if (stored != fnv1a(payload)) throw CorruptFile("checkpoint " + path.string() + " fails its checksum");

  Reader r(payload);
  auto cfg_json = nlohmann::json::parse(r.str(), nullptr, false);
  if (cfg_json.is_discarded()) throw CorruptFile("checkpoint config is not JSON");
  TrainConfig cfg = from_json(cfg_json);
  const int epoch = r.pod<std::int32_t>();
  auto hist = nlohmann::json::parse(r.str(), nullptr, false);
  if (hist.is_discarded()) throw CorruptFile("checkpoint history is not JSON");
  const std::string rng_state = r.str();
  const auto steps = r.pod<std::int64_t>();
  if (r.pod<std::uint32_t>() != sizeof(Real)) {
    throw VersionMismatch("checkpoint was written with a different floating-point precision");
  }
  const bool has_teacher = r.pod<std::uint8_t>() != 0;
  const auto n = r.pod<std::uint32_t>();
  std::map<std::string, std::vector<Real>> store;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    store[name] = r.reals();
  }
  if (!r.done()) throw CorruptFile("checkpoint payload has trailing bytes");

  auto t = std::make_unique<Trainer>(cfg, train, val);
  read_module(store, "", *t->model_);
  if (has_teacher) {
    t->teacher_ = std::make_unique<DircrModel>(cfg.model_config(), cfg.seed);
    read_module(store, "teacher.", *t->teacher_);
    t->teacher_->eval();
  }
  auto& m = t->optim_->first_moments();
  auto& v = t->optim_->second_moments();
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto mi = store.find("adam.m:" + std::to_string(i));
    auto vi = store.find("adam.v:" + std::to_string(i));
    if (mi == store.end() || vi == store.end() || mi->second.size() != m[i].size() ||
        vi->second.size() != v[i].size()) {
      throw CorruptFile("checkpoint optimizer state does not match the model");
    }
    m[i] = mi->second;
    v[i] = vi->second;
  }
  t->optim_->set_steps(steps);
  t->model_->dropout_rng().set_state(rng_state);
  t->epoch_ = epoch;
  for (const auto& h : hist) t->history_.push_back(metrics_from_json(h));
  return t;
}

}  // namespace dircr
