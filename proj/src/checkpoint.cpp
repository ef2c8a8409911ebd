#include "latentmorph/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace lm {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'L', 'M', 'C', 'K'};
constexpr std::uint32_t kMaxRank = 8;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void doubles(const Tensor& t) { bytes(t.data().data(), t.size() * sizeof(double)); }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}
  template <typename T>
  T get() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  void bytes(void* out, std::size_t n) {
    if (n > buf_.size() - pos_) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::string string(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  Tensor doubles(const Shape& shape) {
    Tensor t(shape);
    bytes(t.data().data(), t.size() * sizeof(double));
    return t;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  const nlohmann::json header = {{"model", ckpt.model.to_json()}, {"train", ckpt.train_config}};
  const std::string text = header.dump();
  w.put<std::uint64_t>(text.size());
  w.bytes(text.data(), text.size());

  w.put<std::uint64_t>(ckpt.state.iteration);
  w.put<std::uint64_t>(ckpt.state.seed);
  w.put<double>(ckpt.state.best_val);
  w.put<std::uint64_t>(ckpt.state.best_iteration);
  w.put<std::uint64_t>(ckpt.state.evals_since_best);
  w.put<std::uint8_t>(ckpt.state.stopped_early ? 1 : 0);

  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const Parameter& p : ckpt.params) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) w.put<std::uint64_t>(d);
    if (p.adam_m.shape() != p.value.shape() || p.adam_v.shape() != p.value.shape()) {
      throw CheckpointError("optimizer state of '" + p.name + "' does not match its shape");
    }
    w.doubles(p.value);
    w.doubles(p.adam_m);
    w.doubles(p.adam_v);
    w.put<std::uint64_t>(p.step_count);
  }

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }

  Checkpoint ckpt;
  const auto header_len = r.get<std::uint64_t>();
  try {
    const nlohmann::json header = nlohmann::json::parse(r.string(header_len));
    ckpt.model = ModelConfig::from_json(header.at("model"));
    ckpt.train_config = header.at("train");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }

  ckpt.state.iteration = r.get<std::uint64_t>();
  ckpt.state.seed = r.get<std::uint64_t>();
  ckpt.state.best_val = r.get<double>();
  ckpt.state.best_iteration = r.get<std::uint64_t>();
  ckpt.state.evals_since_best = r.get<std::uint64_t>();
  ckpt.state.stopped_early = r.get<std::uint8_t>() != 0;

  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > kMaxRank) throw CheckpointError("parameter '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    Parameter p(name, r.doubles(shape));
    p.adam_m = r.doubles(shape);
    p.adam_v = r.doubles(shape);
    p.step_count = r.get<std::uint64_t>();
    ckpt.params.push_back(std::move(p));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload in " + path.string());
  return ckpt;
}

Checkpoint make_checkpoint(const VaeModel& model, const TrainState& state, const nlohmann::json& train_config) {
  Checkpoint ckpt;
  ckpt.model = model.config();
  ckpt.train_config = train_config;
  ckpt.state = state;
  ckpt.params = model.parameters();
  for (Parameter& p : ckpt.params) p.grad.reset();
  return ckpt;
}

VaeModel restore_model(const Checkpoint& ckpt) { return VaeModel(ckpt.model, ckpt.params); }

VaeModel restore_model(const Checkpoint& ckpt, const ModelConfig& expected) {
  ModelConfig arch = expected;
  // Loss weights and the preset label do not change the architecture.
  arch.alpha = ckpt.model.alpha;
  arch.beta = ckpt.model.beta;
  arch.dice_smooth = ckpt.model.dice_smooth;
  arch.preset = ckpt.model.preset;
  return VaeModel(arch, ckpt.params);
}

}  // namespace lm
