#pragma once

// Binary checkpoint format (host byte order):
//
//   "TGCLCKPT" u32 version u32 scalar_bytes
//   u64 d, heads, layers, ff, vocab, proj, classes, use_projection
//   u64 n_features, then per feature: u64 len, bytes      (vocabulary names)
//   u64 len, bytes                                         (free-form run metadata, JSON)
//   u64 n_params,   then per param:   u64 len, name, u64 rows, u64 cols, raw scalars
//   "END!"
//
// The whole file is parsed before a model is built, so a damaged file never
// yields a partially loaded model.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tgcl/data/types.hpp"
#include "tgcl/model/model.hpp"

namespace tgcl::model {

inline constexpr char kCheckpointMagic[8] = {'T', 'G', 'C', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  Model<T> model;
  std::vector<std::string> feature_names;
  std::string meta;
};

namespace detail {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), std::streamsize(n)); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::string buf) : buf_(std::move(buf)) {}
  void bytes(void* p, std::size_t n) {
    if (n > buf_.size() - pos_) throw ParseError("checkpoint truncated at byte " + std::to_string(pos_));
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    auto n = u64();
    if (n > buf_.size() - pos_) throw ParseError("checkpoint truncated at byte " + std::to_string(pos_));
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename T>
void save_checkpoint(const Model<T>& m, const std::vector<std::string>& feature_names, std::ostream& os,
                     const std::string& meta = {}) {
  detail::Writer w(os);
  const auto& c = m.config();
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(sizeof(T));
  for (std::uint64_t v : {c.d, c.heads, c.layers, c.ff, c.vocab, c.proj, c.classes}) w.u64(v);
  w.u64(c.use_projection ? 1 : 0);
  w.u64(feature_names.size());
  for (const auto& n : feature_names) w.str(n);
  w.str(meta);
  const auto& ps = m.params();
  w.u64(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& v = ps.value(i);
    w.str(ps.name(i));
    w.u64(v.rows());
    w.u64(v.cols());
    w.bytes(v.data(), v.size() * sizeof(T));
  }
  w.bytes("END!", 4);
}

template <typename T>
void save_checkpoint(const Model<T>& m, const std::vector<std::string>& feature_names, const std::string& path,
                     const std::string& meta = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  save_checkpoint(m, feature_names, out, meta);
  out.flush();
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

template <typename T>
Checkpoint<T> read_checkpoint(std::string buffer) {
  detail::Reader r(std::move(buffer));
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw ParseError("not a checkpoint file");
  if (auto v = r.u32(); v != kCheckpointVersion)
    throw LoadError("checkpoint format version " + std::to_string(v) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t scalar = r.u32();
  if (scalar != 4 && scalar != 8) throw ParseError("checkpoint scalar width must be 4 or 8 bytes");
  ModelConfig cfg;
  cfg.d = r.u64();
  cfg.heads = r.u64();
  cfg.layers = r.u64();
  cfg.ff = r.u64();
  cfg.vocab = r.u64();
  cfg.proj = r.u64();
  cfg.classes = r.u64();
  cfg.use_projection = r.u64() != 0;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }
  Checkpoint<T> ck;
  const auto n_names = r.u64();
  if (n_names != 0 && n_names != cfg.vocab) throw ParseError("checkpoint feature list does not match its vocabulary size");
  for (std::uint64_t i = 0; i < n_names; ++i) ck.feature_names.push_back(r.str());
  ck.meta = r.str();

  ck.model = Model<T>::zeros(cfg);
  auto& ps = ck.model.params();
  const auto n_params = r.u64();
  if (n_params != ps.size())
    throw LoadError("checkpoint has " + std::to_string(n_params) + " parameter tensors, model layout needs " +
                    std::to_string(ps.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::string name = r.str();
    const auto rows = r.u64();
    const auto cols = r.u64();
    auto& dst = ps.value(i);
    if (name != ps.name(i) || rows != dst.rows() || cols != dst.cols())
      throw LoadError("checkpoint tensor '" + name + "' [" + std::to_string(rows) + "x" + std::to_string(cols) +
                      "] does not match '" + ps.name(i) + "' " + dst.shape_string());
    if (scalar == sizeof(T)) {
      r.bytes(dst.data(), dst.size() * sizeof(T));
    } else if (scalar == 4) {
      std::vector<float> tmp(dst.size());
      r.bytes(tmp.data(), tmp.size() * 4);
      for (std::size_t k = 0; k < tmp.size(); ++k) dst[k] = static_cast<T>(tmp[k]);
    } else {
      std::vector<double> tmp(dst.size());
      r.bytes(tmp.data(), tmp.size() * 8);
      for (std::size_t k = 0; k < tmp.size(); ++k) dst[k] = static_cast<T>(tmp[k]);
    }
    if (!dst.all_finite()) throw LoadError("checkpoint tensor '" + name + "' holds non-finite values");
  }
  char end[4];
  r.bytes(end, 4);
  if (std::memcmp(end, "END!", 4) != 0 || !r.at_end()) throw ParseError("checkpoint trailer is damaged");
  return ck;
}

// With `expected` set, the checkpoint's vocabulary must match it exactly.
template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path, const data::Vocabulary* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  auto ck = read_checkpoint<T>(std::move(buf).str());
  if (expected) {
    const std::size_t V = ck.model.config().vocab;
    if (expected->size() != V)
      throw LoadError("vocabulary size mismatch: checkpoint has " + std::to_string(V) + " features, data has " +
                      std::to_string(expected->size()));
    for (std::size_t i = 0; i < ck.feature_names.size(); ++i)
      if (ck.feature_names[i] != expected->name(i))
        throw LoadError("vocabulary mismatch at index " + std::to_string(i) + ": checkpoint '" +
                        ck.feature_names[i] + "' vs data '" + expected->name(i) + "'");
  }
  return ck;
}

}  // namespace tgcl::model
