#include "vsocc/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace vsocc {

namespace {

constexpr char kTensorMagic[8] = {'S', 'S', 'O', 'C', 'T', 'E', 'N', '1'};
constexpr char kLabelMagic[8] = {'S', 'S', 'O', 'C', 'L', 'A', 'B', '1'};
constexpr char kCkptMagic[8] = {'S', 'S', 'O', 'C', 'C', 'K', 'P', '1'};

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* p, std::size_t n, std::string what)
      : p_(p), n_(n), what_(std::move(what)) {}

  void need(std::size_t k) const {
    if (at_ + k > n_) throw ValidationError(what_ + ": truncated");
  }
  void magic(const char m[8]) {
    need(8);
    if (std::memcmp(p_ + at_, m, 8) != 0) throw ValidationError(what_ + ": bad magic");
    at_ += 8;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[at_ + i]) << (8 * i);
    at_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[at_ + i]) << (8 * i);
    at_ += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p_ + at_), n);
    at_ += n;
    return s;
  }
  void bytes_into(std::uint8_t* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, p_ + at_, n);
    at_ += n;
  }
  void f64_into(Real* dst, std::size_t count) {
    need(count * 8);
    for (std::size_t i = 0; i < count; ++i) dst[i] = f64();
  }
  void done() const {
    if (at_ != n_) throw ValidationError(what_ + ": trailing bytes");
  }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t at_ = 0;
  std::string what_;
};

// A dimension count read from a file, bounded before any multiplication.
i64 checked_dim(std::uint32_t v, const std::string& what) {
  if (v == 0 || v > (1u << 28)) throw ValidationError(what + ": implausible dimension");
  return static_cast<i64>(v);
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff len = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
  if (len > 0) f.read(reinterpret_cast<char*>(buf.data()), len);
  if (!f) throw ValidationError("read failed for " + path);
  return buf;
}

void write_file_bytes(const std::string& path, const void* data, std::size_t n) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot open " + path + " for writing");
  if (n > 0) f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  f.flush();
  if (!f) throw ValidationError("write failed for " + path);
}

std::string read_file_text(const std::string& path) {
  const std::vector<std::uint8_t> b = read_file_bytes(path);
  return std::string(b.begin(), b.end());
}

void write_file_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, text.data(), text.size());
}

void write_tensor(const std::string& path, const DenseTensor& t) {
  if (t.shape.rank() != 5) {
    throw ValidationError("tensor files hold rank-5 tensors, got " + t.shape.str());
  }
  require_positive(t.shape, "tensor file");
  if (t.numel() != static_cast<i64>(t.data.size())) {
    throw ValidationError("tensor data size does not match its shape");
  }
  ByteWriter w;
  w.raw(kTensorMagic, 8);
  for (int d = 0; d < 5; ++d) w.u32(static_cast<std::uint32_t>(t.shape[d]));
  for (Real v : t.data) w.f64(v);
  write_file_bytes(path, w.bytes().data(), w.bytes().size());
}

DenseTensor read_tensor(const std::string& path) {
  const std::vector<std::uint8_t> buf = read_file_bytes(path);
  ByteReader r(buf.data(), buf.size(), "tensor file " + path);
  r.magic(kTensorMagic);
  Shape shape;
  i64 count = 1;
  for (int d = 0; d < 5; ++d) {
    const i64 v = checked_dim(r.u32(), "tensor file " + path);
    shape.dims.push_back(v);
    count *= v;
    if (count > (i64(1) << 31)) throw ValidationError("tensor file " + path + ": too large");
  }
  DenseTensor t;
  t.shape = shape;
  t.data.resize(static_cast<std::size_t>(count));
  r.f64_into(t.data.data(), t.data.size());
  r.done();
  return t;
}

void write_labels(const std::string& path, const OccupancyGrid& g) {
  ByteWriter w;
  w.raw(kLabelMagic, 8);
  w.u32(static_cast<std::uint32_t>(g.b));
  w.u32(static_cast<std::uint32_t>(g.x));
  w.u32(static_cast<std::uint32_t>(g.y));
  w.u32(static_cast<std::uint32_t>(g.z));
  w.raw(g.labels.data(), g.labels.size());
  write_file_bytes(path, w.bytes().data(), w.bytes().size());
}

OccupancyGrid read_labels(const std::string& path) {
  const std::vector<std::uint8_t> buf = read_file_bytes(path);
  ByteReader r(buf.data(), buf.size(), "label file " + path);
  r.magic(kLabelMagic);
  const i64 b = checked_dim(r.u32(), "label file " + path);
  const i64 x = checked_dim(r.u32(), "label file " + path);
  const i64 y = checked_dim(r.u32(), "label file " + path);
  const i64 z = checked_dim(r.u32(), "label file " + path);
  if (b * x > (i64(1) << 31) || b * x * y > (i64(1) << 31) || b * x * y * z > (i64(1) << 31)) {
    throw ValidationError("label file " + path + ": too large");
  }
  OccupancyGrid g(b, x, y, z);
  r.bytes_into(g.labels.data(), g.labels.size());
  r.done();
  return g;
}

Checkpoint snapshot(const ModuleParams& params, const std::string& config_text) {
  Checkpoint c;
  c.seed = params.seed();
  c.config_text = config_text;
  for (const ParamTensor* p : params.entries()) {
    c.entries.push_back({p->name, p->shape, p->value});
  }
  return c;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw(kCkptMagic, 8);
  w.u32(1);  // format version
  w.u64(ckpt.seed);
  w.u64(ckpt.config_text.size());
  w.raw(ckpt.config_text.data(), ckpt.config_text.size());
  w.u32(static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const CheckpointEntry& e : ckpt.entries) {
    if (e.name.empty() || e.name.size() > 4096) {
      throw ValidationError("checkpoint entry has an unusable name");
    }
    require_positive(e.shape, "checkpoint entry");
    if (e.shape.numel() != static_cast<i64>(e.value.size())) {
      throw ValidationError("checkpoint entry " + e.name + " has mismatched value count");
    }
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.raw(e.name.data(), e.name.size());
    w.u32(static_cast<std::uint32_t>(e.shape.rank()));
    for (int d = 0; d < e.shape.rank(); ++d) w.u32(static_cast<std::uint32_t>(e.shape[d]));
    w.u64(e.value.size());
    for (Real v : e.value) w.f64(v);
  }
  write_file_bytes(path, w.bytes().data(), w.bytes().size());
}

Checkpoint read_checkpoint(const std::string& path) {
  const std::vector<std::uint8_t> buf = read_file_bytes(path);
  const std::string what = "checkpoint " + path;
  ByteReader r(buf.data(), buf.size(), what);
  r.magic(kCkptMagic);
  const std::uint32_t version = r.u32();
  if (version != 1) {
    throw ValidationError(what + ": unsupported format version " + std::to_string(version));
  }
  Checkpoint c;
  c.seed = r.u64();
  const std::uint64_t cfg_len = r.u64();
  if (cfg_len > (1u << 24)) throw ValidationError(what + ": implausible config length");
  c.config_text = r.str(static_cast<std::size_t>(cfg_len));
  const std::uint32_t n_entries = r.u32();
  if (n_entries > (1u << 20)) throw ValidationError(what + ": implausible entry count");
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    CheckpointEntry e;
    const std::uint32_t name_len = r.u32();
    if (name_len == 0 || name_len > 4096) throw ValidationError(what + ": bad entry name length");
    e.name = r.str(name_len);
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw ValidationError(what + ": bad entry rank");
    i64 count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const i64 v = checked_dim(r.u32(), what);
      e.shape.dims.push_back(v);
      count *= v;
      if (count > (i64(1) << 31)) throw ValidationError(what + ": entry too large");
    }
    const std::uint64_t stored = r.u64();
    if (stored != static_cast<std::uint64_t>(count)) {
      throw ValidationError(what + ": entry " + e.name + " count does not match its shape");
    }
    e.value.resize(static_cast<std::size_t>(count));
    r.f64_into(e.value.data(), e.value.size());
    c.entries.push_back(std::move(e));
  }
  r.done();
  return c;
}

void load_into(ModuleParams& params, const Checkpoint& ckpt) {
  if (params.size() != ckpt.entries.size()) {
    throw ValidationError("checkpoint holds " + std::to_string(ckpt.entries.size()) +
                          " parameters, model has " + std::to_string(params.size()));
  }
  for (const CheckpointEntry& e : ckpt.entries) {
    if (!params.contains(e.name)) {
      throw ValidationError("checkpoint parameter " + e.name + " is unknown to this model");
    }
    ParamTensor& p = params.at(e.name);
    if (!(p.shape == e.shape)) {
      throw ValidationError("checkpoint parameter " + e.name + " has shape " + e.shape.str() +
                            ", model expects " + p.shape.str());
    }
    p.value = e.value;
    p.zero_grad();
  }
}

std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
  const std::vector<std::uint8_t> b = read_file_bytes(path);
  return fnv1a64(b.data(), b.size());
}

std::string digest_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace vsocc
