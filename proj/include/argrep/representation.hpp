#pragma once

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "argrep/error.hpp"
#include "argrep/event.hpp"
#include "argrep/rng.hpp"
#include "argrep/tensor.hpp"

namespace argrep {

/// Learned lookup table: row `id` is the embedding of token `id`
/// (equivalently one_hot(id) * W).
template <class T>
struct EmbeddingTable : Param<T> {
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t vocab_size, std::size_t dim)
      : Param<T>(static_cast<Eigen::Index>(vocab_size), static_cast<Eigen::Index>(dim)) {
    if (dim < 1) throw ConfigError("embedding dimension must be >= 1");
  }

  [[nodiscard]] std::size_t vocab_size() const noexcept { return static_cast<std::size_t>(this->value.rows()); }
  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(this->value.cols()); }

  [[nodiscard]] Eigen::Matrix<T, 1, Eigen::Dynamic> embed(std::size_t id) const {
    if (id >= vocab_size())
      throw std::out_of_range("embedding id " + std::to_string(id) + " outside table of " +
                              std::to_string(vocab_size()) + " rows");
    return this->value.row(static_cast<Eigen::Index>(id));
  }

  /// i.i.d. uniform in [-bound, bound].
  void randomize(Rng& rng, double bound = 0.05) { this->init_uniform(rng, bound); }
};

/// Parameter-free sin/cos encoding of a scalar:
///   out[2i]   = sin(x / base^(2i/d))
///   out[2i+1] = cos(x / base^(2i/d))
class SinusoidalEncoder {
 public:
  explicit SinusoidalEncoder(std::size_t dim, double base = 10000.0) : dim_(dim), base_(base) {
    if (dim == 0 || dim % 2 != 0) throw ConfigError("encoder dimension must be even and positive");
    if (!(base > 1.0)) throw ConfigError("encoder base must be > 1");
    inv_freq_.resize(dim / 2);
    for (std::size_t i = 0; i < dim / 2; ++i)
      inv_freq_[i] = 1.0 / std::pow(base, static_cast<double>(2 * i) / static_cast<double>(dim));
  }

  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] double base() const noexcept { return base_; }
  /// Angular rate of pair i: 1 / base^(2i/d).
  [[nodiscard]] double rate(std::size_t pair) const { return inv_freq_.at(pair); }

  template <class T>
  void encode_into(double x, std::span<T> out) const {
    for (std::size_t i = 0; i < inv_freq_.size(); ++i) {
      const double a = x * inv_freq_[i];
      out[2 * i] = static_cast<T>(std::sin(a));
      out[2 * i + 1] = static_cast<T>(std::cos(a));
    }
  }

  [[nodiscard]] std::vector<double> encode(double x) const {
    std::vector<double> out(dim_);
    encode_into<double>(x, out);
    return out;
  }

 private:
  std::size_t dim_;
  double base_;
  std::vector<double> inv_freq_;
};

enum class TimestampOrigin { SequenceStart, TraceStart };

/// Which argument groups enter the event vector, and their dimensions.
struct RepresentationConfig {
  bool call = false;     // entry + ret, added to the sysname embedding
  bool process = false;  // procname embedding ++ pid, tid encodings
  bool time = false;     // timestamp encoding
  std::size_t d_sysname = 32;
  std::size_t d_procname = 16;
  std::size_t d_pid = 4;
  std::size_t d_tid = 4;
  std::size_t d_timestamp = 8;
  TimestampOrigin timestamp_origin = TimestampOrigin::SequenceStart;
  double encoding_base = 10000.0;

  [[nodiscard]] std::size_t process_dim() const noexcept {
    return process ? d_procname + d_pid + d_tid : 0;
  }
  [[nodiscard]] std::size_t time_dim() const noexcept { return time ? d_timestamp : 0; }
  [[nodiscard]] std::size_t total_dim() const noexcept {
    return d_sysname + process_dim() + time_dim();
  }

  void validate() const {
    if (d_sysname < 1) throw ConfigError("d_sysname must be positive");
    if (process) {
      if (d_procname < 1 || d_pid < 1 || d_tid < 1) throw ConfigError("process dims must be positive");
      if (d_pid % 2 || d_tid % 2) throw ConfigError("pid/tid encoder dims must be even");
    }
    if (time && (d_timestamp < 1 || d_timestamp % 2))
      throw ConfigError("timestamp encoder dim must be even and positive");
    if (!(encoding_base > 1.0)) throw ConfigError("encoding base must be > 1");
  }

  bool operator==(const RepresentationConfig&) const = default;
};

/// The per-argument tables and encoders for one configuration. Produces the
/// event vector call ++ process ++ time.
template <class T>
class EventRepresentation {
 public:
  EventRepresentation(const RepresentationConfig& cfg, std::size_t sys_vocab_size,
                      std::size_t proc_vocab_size)
      : cfg_(cfg),
        sysname_(sys_vocab_size, cfg.d_sysname),
        pid_enc_(cfg.process ? cfg.d_pid : 2, cfg.encoding_base),
        tid_enc_(cfg.process ? cfg.d_tid : 2, cfg.encoding_base),
        time_enc_(cfg.time ? cfg.d_timestamp : 2, cfg.encoding_base) {
    cfg.validate();
    if (sys_vocab_size <= Vocab::kMask) throw ConfigError("sysname vocabulary lacks reserved ids");
    if (cfg.call) {
      entry_ = EmbeddingTable<T>(2, cfg.d_sysname);
      ret_ = EmbeddingTable<T>(kRetClassCount, cfg.d_sysname);
    }
    if (cfg.process) procname_ = EmbeddingTable<T>(proc_vocab_size, cfg.d_procname);
  }

  [[nodiscard]] const RepresentationConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] std::size_t dim() const noexcept { return cfg_.total_dim(); }

  EmbeddingTable<T>& sysname() noexcept { return sysname_; }
  EmbeddingTable<T>& entry() noexcept { return entry_; }
  EmbeddingTable<T>& ret() noexcept { return ret_; }
  EmbeddingTable<T>& procname() noexcept { return procname_; }
  const EmbeddingTable<T>& sysname() const noexcept { return sysname_; }

  void randomize(Rng& rng, double bound = 0.05) {
    sysname_.randomize(rng, bound);
    if (cfg_.call) {
      entry_.randomize(rng, bound);
      ret_.randomize(rng, bound);
    }
    if (cfg_.process) procname_.randomize(rng, bound);
  }

  void collect(ParamList<T>& out) {
    out.push_back({"repr.sysname", &sysname_});
    if (cfg_.call) {
      out.push_back({"repr.entry", &entry_});
      out.push_back({"repr.ret", &ret_});
    }
    if (cfg_.process) out.push_back({"repr.procname", &procname_});
  }

  /// Writes the event vector of `r` into `out` (length dim()). Timestamps
  /// are encoded relative to `origin_us`. A masked event keeps only the MASK
  /// sysname embedding; every argument channel is zero.
  void represent_into(const EventRecord& r, std::int64_t origin_us, bool masked,
                      std::span<T> out) const {
    check(r);
    const auto ds = static_cast<Eigen::Index>(cfg_.d_sysname);
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> v(out.data(), static_cast<Eigen::Index>(out.size()));
    v.setZero();
    const std::uint32_t sys = masked ? Vocab::kMask : r.sysname_id;
    v.head(ds) = sysname_.value.row(sys);
    if (masked) return;
    if (cfg_.call) {
      v.head(ds) += entry_.value.row(r.entry ? 1 : 0);
      v.head(ds) += ret_.value.row(static_cast<Eigen::Index>(r.ret_class));
    }
    std::size_t at = cfg_.d_sysname;
    if (cfg_.process) {
      v.segment(static_cast<Eigen::Index>(at), static_cast<Eigen::Index>(cfg_.d_procname)) =
          procname_.value.row(r.procname_id);
      at += cfg_.d_procname;
      pid_enc_.encode_into<T>(static_cast<double>(r.pid), out.subspan(at, cfg_.d_pid));
      at += cfg_.d_pid;
      tid_enc_.encode_into<T>(static_cast<double>(r.tid), out.subspan(at, cfg_.d_tid));
      at += cfg_.d_tid;
    }
    if (cfg_.time)
      time_enc_.encode_into<T>(static_cast<double>(r.timestamp_us - origin_us),
                               out.subspan(at, cfg_.d_timestamp));
  }

  [[nodiscard]] Eigen::Matrix<T, 1, Eigen::Dynamic> represent(const EventRecord& r,
                                                              std::int64_t origin_us = 0,
                                                              bool masked = false) const {
    Eigen::Matrix<T, 1, Eigen::Dynamic> v(static_cast<Eigen::Index>(dim()));
    represent_into(r, origin_us, masked, std::span<T>(v.data(), dim()));
    return v;
  }

  /// Accumulates table gradients for one event vector's gradient `d`.
  void backward(const EventRecord& r, bool masked, std::span<const T> d) {
    const auto ds = static_cast<Eigen::Index>(cfg_.d_sysname);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> g(d.data(), static_cast<Eigen::Index>(d.size()));
    const std::uint32_t sys = masked ? Vocab::kMask : r.sysname_id;
    sysname_.grad.row(sys) += g.head(ds);
    if (masked) return;
    if (cfg_.call) {
      entry_.grad.row(r.entry ? 1 : 0) += g.head(ds);
      ret_.grad.row(static_cast<Eigen::Index>(r.ret_class)) += g.head(ds);
    }
    if (cfg_.process)
      procname_.grad.row(r.procname_id) +=
          g.segment(ds, static_cast<Eigen::Index>(cfg_.d_procname));
  }

 private:
  void check(const EventRecord& r) const {
    if (r.sysname_id >= sysname_.vocab_size()) throw std::out_of_range("sysname id outside vocabulary");
    if (cfg_.process && r.procname_id >= procname_.vocab_size())
      throw std::out_of_range("procname id outside vocabulary");
  }

  RepresentationConfig cfg_;
  EmbeddingTable<T> sysname_;
  EmbeddingTable<T> entry_;
  EmbeddingTable<T> ret_;
  EmbeddingTable<T> procname_;
  SinusoidalEncoder pid_enc_;
  SinusoidalEncoder tid_enc_;
  SinusoidalEncoder time_enc_;
};

/// Text dump of a table: a header line, then one row per line.
template <class T>
void write_table(std::ostream& out, const EmbeddingTable<T>& table, std::uint64_t seed) {
  out << "# argrep-embedding rows=" << table.vocab_size() << " dim=" << table.dim()
      << " seed=" << seed << '\n';
  out.precision(std::numeric_limits<T>::max_digits10);
  for (Eigen::Index r = 0; r < table.value.rows(); ++r) {
    for (Eigen::Index c = 0; c < table.value.cols(); ++c) out << (c ? " " : "") << table.value(r, c);
    out << '\n';
  }
}

template <class T>
EmbeddingTable<T> read_table(std::istream& in, std::uint64_t* seed = nullptr) {
  std::string header;
  std::getline(in, header);
  std::size_t rows = 0, dim = 0;
  unsigned long long s = 0;
  if (std::sscanf(header.c_str(), "# argrep-embedding rows=%zu dim=%zu seed=%llu", &rows, &dim, &s) != 3)
    throw ParseError("bad embedding table header", 1, 0, header);
  EmbeddingTable<T> t(rows, dim);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < dim; ++c) {
      double v;
      if (!(in >> v)) throw ParseError("truncated embedding table", r + 2, 0);
      t.value(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = static_cast<T>(v);
    }
  if (seed) *seed = s;
  return t;
}

}  // namespace argrep
