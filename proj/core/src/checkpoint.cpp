#include "rin/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <span>

#include "rin/config.hpp"
#include "rin/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

namespace rin {

namespace {

constexpr char kMagic[8] = {'R', 'I', 'N', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  explicit Writer(const std::string& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw FormatError("checkpoint: cannot open " + path);
  }
  void bytes(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p),
               static_cast<std::streamsize>(n));
  }
  void u8(uint8_t v) { bytes(&v, 1); }
  void u32(uint32_t v) { bytes(&v, 4); }
  void u64(uint64_t v) { bytes(&v, 8); }
  void tag(const char* t) { bytes(t, 4); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void close() {
    out_.close();
    if (!out_) throw FormatError("checkpoint: short write to " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open " + path);
    buf_.assign(std::istreambuf_iterator<char>(in),
                std::istreambuf_iterator<char>());
  }
  void bytes(void* p, size_t n) {
    if (pos_ + n > buf_.size())
      throw FormatError("checkpoint: " + path_ + " truncated at byte " +
                        std::to_string(pos_));
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  uint8_t u8() { uint8_t v; bytes(&v, 1); return v; }
  uint32_t u32() { uint32_t v; bytes(&v, 4); return v; }
  uint64_t u64() { uint64_t v; bytes(&v, 8); return v; }
  void expect_tag(const char* t) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, t, 4) != 0)
      throw FormatError("checkpoint: " + path_ + " missing section " + t);
  }
  std::string str() {
    const uint32_t n = u32();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }
  size_t pos() const { return pos_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::vector<char> buf_;
  size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const Tensor& t) {
  w.str(name);
  w.u8(t.dtype() == Dtype::f64 ? 1 : 0);
  w.u8(static_cast<uint8_t>(t.rank()));
  for (int64_t d : t.shape()) w.u64(static_cast<uint64_t>(d));
  if (t.dtype() == Dtype::f64) {
    auto s = t.data<double>();
    w.bytes(s.data(), s.size() * sizeof(double));
  } else {
    auto s = t.data<float>();
    w.bytes(s.data(), s.size() * sizeof(float));
  }
}

std::pair<std::string, Tensor> read_tensor(Reader& r) {
  const std::string name = r.str();
  const uint8_t code = r.u8();
  if (code > 1)
    throw FormatError("checkpoint: " + r.path() + " tensor '" + name +
                      "' has dtype code " + std::to_string(code));
  const Dtype dtype = code == 1 ? Dtype::f64 : Dtype::f32;
  const uint8_t rank = r.u8();
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<int64_t>(r.u64());
  const int64_t count = shape_numel(shape);
  if (count < 0 || count > (int64_t{1} << 34))
    throw FormatError("checkpoint: " + r.path() + " tensor '" + name +
                      "' has implausible shape " + shape_str(shape));
  Tensor t = Tensor::zeros(shape, dtype);
  if (dtype == Dtype::f64) {
    auto s = t.mutable_data<double>();
    r.bytes(s.data(), s.size() * sizeof(double));
  } else {
    auto s = t.mutable_data<float>();
    r.bytes(s.data(), s.size() * sizeof(float));
  }
  return {name, t};
}

void write_section(Writer& w, const char* tag,
                   const std::vector<std::pair<std::string, Tensor>>& list) {
  w.tag(tag);
  w.u32(static_cast<uint32_t>(list.size()));
  for (const auto& [name, t] : list) write_tensor(w, name, t);
}

std::vector<std::pair<std::string, Tensor>> read_section(Reader& r,
                                                         const char* tag) {
  r.expect_tag(tag);
  const uint32_t count = r.u32();
  std::vector<std::pair<std::string, Tensor>> list;
  list.reserve(count);
  for (uint32_t i = 0; i < count; ++i) list.push_back(read_tensor(r));
  return list;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state) {
  Writer w(path);
  w.bytes(kMagic, 8);
  w.u64(fnv1a64(state.config_text));
  w.u64(state.step);
  w.tag("CFG0");
  w.str(state.config_text);
  write_section(w, "PRM0", state.params);
  w.tag("LMB0");
  w.u64(static_cast<uint64_t>(state.lamb_steps));
  w.u32(static_cast<uint32_t>(state.lamb_m.size()));
  for (const auto& [name, t] : state.lamb_m) write_tensor(w, "m." + name, t);
  for (const auto& [name, t] : state.lamb_v) write_tensor(w, "v." + name, t);
  write_section(w, "EMA0", state.ema);
  w.tag("RNG0");
  w.u64(state.seed);
  w.close();
}

TrainState load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("checkpoint: " + path + " has wrong magic");
  TrainState st;
  const uint64_t digest = r.u64();
  st.step = r.u64();
  r.expect_tag("CFG0");
  st.config_text = r.str();
  if (fnv1a64(st.config_text) != digest)
    throw FormatError("checkpoint: " + path +
                      " config text does not match its digest");
  st.params = read_section(r, "PRM0");
  r.expect_tag("LMB0");
  st.lamb_steps = static_cast<int64_t>(r.u64());
  const uint32_t moments = r.u32();
  for (uint32_t i = 0; i < moments; ++i) {
    auto [name, t] = read_tensor(r);
    if (name.rfind("m.", 0) != 0)
      throw FormatError("checkpoint: " + path + " expected first moment, got '" +
                        name + "'");
    st.lamb_m.emplace_back(name.substr(2), t);
  }
  for (uint32_t i = 0; i < moments; ++i) {
    auto [name, t] = read_tensor(r);
    if (name.rfind("v.", 0) != 0)
      throw FormatError("checkpoint: " + path +
                        " expected second moment, got '" + name + "'");
    st.lamb_v.emplace_back(name.substr(2), t);
  }
  st.ema = read_section(r, "EMA0");
  r.expect_tag("RNG0");
  st.seed = r.u64();
  if (!r.done())
    throw FormatError("checkpoint: " + path + " has trailing data after byte " +
                      std::to_string(r.pos()));
  return st;
}

void save_named_tensors(
    const std::string& path,
    const std::vector<std::pair<std::string, Tensor>>& tensors) {
  Writer w(path);
  w.bytes("RINTENS1", 8);
  w.u32(static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) write_tensor(w, name, t);
  w.close();
}

std::vector<std::pair<std::string, Tensor>> load_named_tensors(
    const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, "RINTENS1", 8) != 0)
    throw FormatError("tensor dump: " + path + " has wrong magic");
  const uint32_t count = r.u32();
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) out.push_back(read_tensor(r));
  if (!r.done())
    throw FormatError("tensor dump: " + path + " has trailing data");
  return out;
}

uint64_t checkpoint_digest(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("checkpoint: " + path + " has wrong magic");
  return r.u64();
}

}  // namespace rin
