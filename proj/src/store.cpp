#include "glt/store.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "glt/errors.hpp"

namespace glt {

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { le(v); }
  void i32(std::int32_t v) { le(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) { le(v); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void checksum() { u32(crc(out_)); }
  static std::uint32_t crc(std::span<const std::uint8_t> b) {
    uLong c = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in pieces
    std::size_t off = 0;
    while (off < b.size()) {
      const std::size_t n = std::min<std::size_t>(b.size() - off, 1u << 30);
      c = crc32(c, b.data() + off, static_cast<uInt>(n));
      off += n;
    }
    return static_cast<std::uint32_t>(c);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> b, const char* what) : b_(b), what_(what) {}
  void need(std::size_t n) {
    if (b_.size() - pos_ < n) throw IntegrityError(std::string(what_) + ": truncated data");
  }
  template <class T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  std::uint8_t u8() { return le<std::uint8_t>(); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(le<std::uint32_t>()); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  void magic(const char (&m)[4]) {
    need(4);
    if (std::memcmp(b_.data() + pos_, m, 4) != 0) throw IntegrityError(std::string(what_) + ": bad magic");
    pos_ += 4;
  }
  /// Verifies the trailing checksum and hides it from further reads.
  void verify_checksum() {
    if (b_.size() < 4) throw IntegrityError(std::string(what_) + ": truncated data");
    const auto payload = b_.first(b_.size() - 4);
    Reader tail(b_.subspan(b_.size() - 4), what_);
    if (tail.u32() != Writer::crc(payload)) throw IntegrityError(std::string(what_) + ": checksum mismatch");
    b_ = payload;
  }
  void done() const {
    if (pos_ != b_.size()) throw IntegrityError(std::string(what_) + ": trailing bytes");
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
  const char* what_;
};

void write_config(Writer& w, const EncoderConfig& c) {
  w.u32(c.model_dim);
  w.u32(c.retrieval_dim);
  w.u32(c.layers);
  w.u32(c.heads);
  w.u32(c.ffn_dim);
  w.u32(c.vocab_size);
  w.u32(c.patch_feature_dim);
  w.u32(c.max_seq);
  w.u8(c.shared_global ? 1 : 0);
  w.u64(c.seed);
  w.u32(static_cast<std::uint32_t>(c.feature_tokens.size()));
  for (auto t : c.feature_tokens) w.i32(t);
}

EncoderConfig read_config(Reader& r) {
  EncoderConfig c;
  c.model_dim = r.u32();
  c.retrieval_dim = r.u32();
  c.layers = r.u32();
  c.heads = r.u32();
  c.ffn_dim = r.u32();
  c.vocab_size = r.u32();
  c.patch_feature_dim = r.u32();
  c.max_seq = r.u32();
  c.shared_global = r.u8() != 0;
  c.seed = r.u64();
  const std::uint32_t n = r.u32();
  r.need(static_cast<std::size_t>(n) * 4);
  c.feature_tokens.resize(n);
  for (auto& t : c.feature_tokens) t = r.i32();
  return c;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const EncoderParams& params, std::uint64_t step) {
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  write_config(w, params.config);
  w.u64(step);
  std::uint32_t n = 0;
  params.for_each([&](std::string_view, const Matrix&) { ++n; });
  w.u32(n);
  params.for_each([&](std::string_view, const Matrix& m) {
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (double x : m.values()) w.f32(static_cast<float>(x));
  });
  w.checksum();
  return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "checkpoint");
  r.magic(kCheckpointMagic);
  r.verify_checksum();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IntegrityError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  EncoderConfig cfg = read_config(r);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("checkpoint: invalid encoder config (") + e.what() + ")");
  }
  ck.step = r.u64();
  // Allocates the expected shapes, then fills them in declaration order.
  ck.params = zeros_like(init_params(cfg));
  std::uint32_t n_expected = 0;
  ck.params.for_each([&](std::string_view, const Matrix&) { ++n_expected; });
  if (r.u32() != n_expected) throw IntegrityError("checkpoint: tensor count does not match config");
  ck.params.for_each([&](std::string_view name, Matrix& m) {
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (rows != m.rows() || cols != m.cols()) {
      throw IntegrityError("checkpoint: tensor '" + std::string(name) + "' has unexpected shape");
    }
    r.need(m.size() * 4);
    for (double& x : m.values()) x = static_cast<double>(r.f32());
  });
  r.done();
  return ck;
}

EncoderParams round_to_checkpoint_precision(const EncoderParams& params) {
  EncoderParams out = params;
  out.for_each([](std::string_view, Matrix& m) {
    for (double& x : m.values()) x = static_cast<double>(static_cast<float>(x));
  });
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + path.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move '" + tmp.string() + "' into place");
  }
}

void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params,
                     std::uint64_t step) {
  write_file_atomic(path, serialize_checkpoint(params, step));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

namespace {

void check_unit(std::span<const double> v, std::uint32_t page_id) {
  const double n = l2_norm(v);
  if (!(std::abs(n - 1.0) <= kIndexNormTolerance)) {
    throw ArgumentError("index: page " + std::to_string(page_id) + " has a vector of norm " +
                        std::to_string(n));
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_index(std::span<const DocumentEmbedding> docs) {
  const std::size_t d = docs.empty() ? 0 : docs.front().global.size();
  Writer w;
  w.bytes(kIndexMagic, 4);
  w.u32(kIndexVersion);
  w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(docs.size()));
  for (const auto& doc : docs) {
    if (doc.global.size() != d || (doc.patches.rows() > 0 && doc.patches.cols() != d)) {
      throw DimensionError("index: page " + std::to_string(doc.page_id) +
                           " does not match dimension " + std::to_string(d));
    }
    check_unit(doc.global, doc.page_id);
    for (std::size_t r = 0; r < doc.patches.rows(); ++r) check_unit(doc.patches.row(r), doc.page_id);
    w.u32(doc.page_id);
    w.u32(static_cast<std::uint32_t>(doc.patches.rows()));
    for (double x : doc.patches.values()) w.f64(x);
    for (double x : doc.global) w.f64(x);
  }
  w.checksum();
  return w.take();
}

std::vector<DocumentEmbedding> deserialize_index(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "index");
  r.magic(kIndexMagic);
  r.verify_checksum();
  const std::uint32_t version = r.u32();
  if (version != kIndexVersion) {
    throw IntegrityError("index: unsupported version " + std::to_string(version));
  }
  const std::uint32_t d = r.u32();
  const std::uint32_t n = r.u32();
  std::vector<DocumentEmbedding> docs;
  for (std::uint32_t i = 0; i < n; ++i) {
    DocumentEmbedding doc;
    doc.page_id = r.u32();
    const std::uint32_t rows = r.u32();
    r.need((static_cast<std::size_t>(rows) + 1) * d * 8);
    doc.patches = Matrix(rows, d);
    for (double& x : doc.patches.values()) x = r.f64();
    doc.global.resize(d);
    for (double& x : doc.global) x = r.f64();
    docs.push_back(std::move(doc));
  }
  r.done();
  return docs;
}

void save_index(const std::filesystem::path& path, std::span<const DocumentEmbedding> docs) {
  write_file_atomic(path, serialize_index(docs));
}

std::vector<DocumentEmbedding> load_index(const std::filesystem::path& path) {
  return deserialize_index(read_file(path));
}

}  // namespace glt
