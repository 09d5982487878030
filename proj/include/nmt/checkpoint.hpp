#pragma once

// Binary checkpoint container. Layout (little-endian):
//   "NMTCKPT\0" u32 version
//   str model_config  str config_hash  str vocab_hash
//   u64 step  u64 epoch  u64 adam_t
//   u64 tensor_count, then per tensor: str name, u8 trainable, u64 rows,
//       u64 cols, rows*cols f32 values, rows*cols f32 first moments,
//       rows*cols f32 second moments
// Strings are u64 length + bytes. Nothing time-dependent is stored, so equal
// state gives equal bytes.

#include <bit>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "nmt/digest.hpp"
#include "nmt/error.hpp"
#include "nmt/io.hpp"
#include "nmt/optimizer.hpp"
#include "nmt/transformer.hpp"

namespace nmt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

struct Checkpoint {
  ModelConfig config;
  Parameters<float> params;
  AdamState<float> optimizer;
  std::string vocab_hash;
  uint64_t step = 0;
  uint64_t epoch = 0;

  std::string config_hash() const { return sha256_hex(config.canonical()); }
  bool operator==(const Checkpoint &) const = default;

  static Checkpoint fresh(const ModelConfig &config, std::string vocab_hash,
                          uint64_t seed) {
    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.params = init_parameters<float>(config, seed);
    ckpt.optimizer = AdamState<float>::zeros_for(ckpt.params);
    ckpt.vocab_hash = std::move(vocab_hash);
    return ckpt;
  }
};

namespace detail {

class Writer {
 public:
  void u8(uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(uint32_t v) { raw(&v, sizeof v); }
  void u64(uint64_t v) { raw(&v, sizeof v); }
  void str(std::string_view s) {
    u64(s.size());
    out_.append(s);
  }
  void floats(const Matrix<float> &m) { raw(m.data(), m.size() * sizeof(float)); }
  std::string take() { return std::move(out_); }

 private:
  void raw(const void *p, size_t n) { out_.append(static_cast<const char *>(p), n); }
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view data, std::string origin)
      : data_(data), origin_(std::move(origin)) {}
  uint8_t u8() {
    uint8_t v;
    raw(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    uint64_t n = u64();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  void floats(Matrix<float> &m) { raw(m.data(), m.size() * sizeof(float)); }
  bool done() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string &what) const {
    throw InputError(origin_ + ": " + what);
  }

 private:
  void need(uint64_t n) {
    if (n > data_.size() - pos_) fail("truncated checkpoint");
  }
  void raw(void *p, size_t n) {
    need(n);
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::string_view data_;
  std::string origin_;
  size_t pos_ = 0;
};

inline ModelConfig parse_model_config(const std::string &text, const Reader &reader) {
  ModelConfig config;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) reader.fail("malformed model config line: " + line);
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    try {
      if (key == "d_model") config.d_model = std::stoull(value);
      else if (key == "n_heads") config.n_heads = std::stoull(value);
      else if (key == "n_enc_layers") config.n_enc_layers = std::stoull(value);
      else if (key == "n_dec_layers") config.n_dec_layers = std::stoull(value);
      else if (key == "d_ff") config.d_ff = std::stoull(value);
      else if (key == "dropout") config.dropout = std::stod(value);
      else if (key == "max_len") config.max_len = std::stoull(value);
      else if (key == "vocab_size") config.vocab_size = std::stoull(value);
      else if (key == "label_smoothing") config.label_smoothing = std::stod(value);
      else reader.fail("unknown model config key " + key);
    } catch (const std::logic_error &) {
      reader.fail("bad value for " + key);
    }
  }
  return config;
}

}  // namespace detail

inline constexpr std::string_view kCheckpointMagic{"NMTCKPT\0", 8};
inline constexpr uint32_t kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const Checkpoint &ckpt) {
  detail::Writer w;
  for (char c : kCheckpointMagic) w.u8(static_cast<uint8_t>(c));
  w.u32(kCheckpointVersion);
  w.str(ckpt.config.canonical());
  w.str(ckpt.config_hash());
  w.str(ckpt.vocab_hash);
  w.u64(ckpt.step);
  w.u64(ckpt.epoch);
  w.u64(ckpt.optimizer.t);
  w.u64(ckpt.params.size());
  for (size_t e = 0; e < ckpt.params.size(); ++e) {
    const auto &entry = ckpt.params.entries()[e];
    w.str(entry.name);
    w.u8(entry.trainable ? 1 : 0);
    w.u64(entry.value.rows());
    w.u64(entry.value.cols());
    w.floats(entry.value);
    w.floats(ckpt.optimizer.m.entries()[e].value);
    w.floats(ckpt.optimizer.v.entries()[e].value);
  }
  return w.take();
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes,
                                         const std::string &origin = "checkpoint") {
  detail::Reader r(bytes, origin);
  for (char c : kCheckpointMagic) {
    if (r.u8() != static_cast<uint8_t>(c)) r.fail("not a checkpoint file");
  }
  uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  std::string config_text = r.str();
  ckpt.config = detail::parse_model_config(config_text, r);
  std::string config_hash = r.str();
  if (config_hash != ckpt.config_hash()) r.fail("config hash mismatch");
  ckpt.vocab_hash = r.str();
  ckpt.step = r.u64();
  ckpt.epoch = r.u64();
  ckpt.optimizer.t = r.u64();
  uint64_t count = r.u64();
  Parameters<float> expected = zero_parameters<float>(ckpt.config);
  if (count != expected.size()) r.fail("tensor count does not match the model config");
  for (uint64_t e = 0; e < count; ++e) {
    std::string name = r.str();
    bool trainable = r.u8() != 0;
    uint64_t rows = r.u64();
    uint64_t cols = r.u64();
    const auto &want = expected.entries()[e];
    if (name != want.name || rows != want.value.rows() || cols != want.value.cols()) {
      r.fail("unexpected tensor " + name);
    }
    Matrix<float> value(rows, cols), m(rows, cols), v(rows, cols);
    r.floats(value);
    r.floats(m);
    r.floats(v);
    ckpt.params.add(name, std::move(value), trainable);
    ckpt.optimizer.m.add(name, std::move(m), trainable);
    ckpt.optimizer.v.add(name, std::move(v), trainable);
  }
  if (!r.done()) r.fail("trailing bytes after checkpoint");
  return ckpt;
}

// Writes through a temporary file so a crash never leaves a partial checkpoint.
inline void save_checkpoint(const Checkpoint &ckpt, const std::filesystem::path &path) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  io::write_file(tmp, serialize_checkpoint(ckpt));
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path &path) {
  return deserialize_checkpoint(io::read_file(path), path.string());
}

}  // namespace nmt
