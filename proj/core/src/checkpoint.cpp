#include "dcnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dcnet {

namespace {

constexpr char kMagic[8] = {'D', 'C', 'N', 'E', 'T', 'C', 'K', 'P'};
constexpr std::uint8_t kDtypeF64 = 1;

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) { out_.append(s); }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw ConfigError("checkpoint is truncated");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParameterStore& store, const std::string& metadata) {
  Writer w;
  w.bytes(std::string(kMagic, sizeof(kMagic)));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(metadata.size()));
  w.bytes(metadata);
  w.u32(static_cast<std::uint32_t>(store.params().size()));
  for (const auto& p : store.params()) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    const Shape& s = p.tensor.shape();
    w.u32(static_cast<std::uint32_t>(s.size()));
    for (auto d : s) w.u64(static_cast<std::uint64_t>(d));
    w.u8(kDtypeF64);
    auto data = p.tensor.data();
    w.u64(data.size());
    for (double v : data) w.f64(v);
  }
  w.u64(fnv1a(w.str().data(), w.str().size()));
  return std::move(w.str());
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw ConfigError("not a dcnet checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.metadata = r.bytes(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.u32());
    Shape shape(r.u32());
    for (auto& d : shape) d = static_cast<std::int64_t>(r.u64());
    if (r.u8() != kDtypeF64) throw ConfigError("checkpoint array '" + name + "' has unknown dtype");
    const std::uint64_t n = r.u64();
    if (static_cast<std::int64_t>(n) != shape_numel(shape)) {
      throw ConfigError("checkpoint array '" + name + "' size does not match its shape");
    }
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    ck.arrays.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  const std::size_t body = r.pos();
  if (r.u64() != fnv1a(bytes.data(), body)) throw ConfigError("checkpoint hash mismatch");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store, const std::string& metadata) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(store, metadata);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

void restore_parameters(ParameterStore& store, const Checkpoint& ckpt) {
  if (ckpt.arrays.size() != store.params().size()) {
    throw ConfigError("checkpoint holds " + std::to_string(ckpt.arrays.size()) + " arrays, model expects " +
                      std::to_string(store.params().size()));
  }
  for (const auto& [name, t] : ckpt.arrays) {
    if (!store.contains(name)) throw ConfigError("checkpoint array '" + name + "' not in model");
    Parameter& p = store.at(name);
    if (p.tensor.shape() != t.shape()) {
      throw ConfigError("checkpoint array '" + name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                        shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    std::copy(t.data().begin(), t.data().end(), dst.begin());
    p.momentum_buffer.clear();
    p.tensor.zero_grad();
  }
}

}  // namespace dcnet
