#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "argrep/error.hpp"
#include "argrep/event.hpp"
#include "argrep/rng.hpp"

namespace argrep {

inline constexpr std::size_t kDefaultWindow = 256;

/// Fixed-length slice of a record stream, in source order.
struct Sequence {
  std::vector<EventRecord> records;

  [[nodiscard]] std::size_t size() const noexcept { return records.size(); }
  const EventRecord& operator[](std::size_t i) const { return records[i]; }
  bool operator==(const Sequence&) const = default;
};

/// Cuts a stream into consecutive non-overlapping windows. The trailing
/// remainder (fewer than window_len records) is dropped.
inline std::vector<Sequence> window(std::span<const EventRecord> records,
                                    std::size_t window_len = kDefaultWindow) {
  if (window_len < 2) throw std::invalid_argument("window_len must be >= 2");
  std::vector<Sequence> out;
  out.reserve(records.size() / window_len);
  for (std::size_t start = 0; start + window_len <= records.size(); start += window_len)
    out.push_back(Sequence{{records.begin() + static_cast<std::ptrdiff_t>(start),
                            records.begin() + static_cast<std::ptrdiff_t>(start + window_len)}});
  return out;
}

struct SplitSpec {
  double valid_fraction = 0.25;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<Sequence> eval;
  std::vector<Sequence> valid;
};

/// Randomly assigns round(valid_fraction * n) sequences to validation. Both
/// parts keep the input order.
inline Split split(const std::vector<Sequence>& sequences, const SplitSpec& spec) {
  if (!(spec.valid_fraction > 0.0 && spec.valid_fraction < 1.0))
    throw ConfigError("valid_fraction must lie strictly between 0 and 1");
  if (sequences.size() < 4) throw ConfigError("split needs at least 4 sequences");
  const std::size_t n = sequences.size();
  const auto n_valid = static_cast<std::size_t>(std::llround(spec.valid_fraction * n));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(spec.seed);
  rng.shuffle(order);
  std::vector<char> is_valid(n, 0);
  for (std::size_t i = 0; i < n_valid; ++i) is_valid[order[i]] = 1;

  Split out;
  out.valid.reserve(n_valid);
  out.eval.reserve(n - n_valid);
  for (std::size_t i = 0; i < n; ++i) (is_valid[i] ? out.valid : out.eval).push_back(sequences[i]);
  return out;
}

// Windowed dataset file: a header line carrying the vocabularies, then one
// line per sequence with records as [sysname, entry, ret, procname, pid, tid, ts_us].

struct WindowedDataset {
  Vocab sys_vocab;
  Vocab proc_vocab;
  std::size_t window_len = kDefaultWindow;
  std::vector<Sequence> sequences;
};

inline void write_windows(std::ostream& out, const WindowedDataset& ds) {
  nlohmann::ordered_json header;
  header["format"] = "argrep-windows";
  header["version"] = 1;
  header["window_len"] = ds.window_len;
  header["sys_vocab"] = ds.sys_vocab.tokens();
  header["proc_vocab"] = ds.proc_vocab.tokens();
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    nlohmann::ordered_json line;
    line["index"] = i;
    auto recs = nlohmann::ordered_json::array();
    for (const auto& r : ds.sequences[i].records)
      recs.push_back({r.sysname_id, r.entry ? 1 : 0, static_cast<int>(r.ret_class),
                      r.procname_id, r.pid, r.tid, r.timestamp_us});
    line["records"] = std::move(recs);
    out << line.dump() << '\n';
  }
}

inline bool is_windows_header(const std::string& first_line) {
  try {
    auto j = nlohmann::json::parse(first_line);
    return j.is_object() && j.value("format", "") == "argrep-windows";
  } catch (const nlohmann::json::exception&) {
    return false;
  }
}

inline WindowedDataset read_windows(std::istream& in) {
  WindowedDataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      if (!have_header) {
        if (j.value("format", "") != "argrep-windows" || j.value("version", 0) != 1)
          throw ParseError("not an argrep-windows file", lineno, 0, line);
        ds.window_len = j.at("window_len").get<std::size_t>();
        ds.sys_vocab = Vocab::from_tokens(j.at("sys_vocab").get<std::vector<std::string>>());
        ds.proc_vocab = Vocab::from_tokens(j.at("proc_vocab").get<std::vector<std::string>>());
        have_header = true;
        continue;
      }
      Sequence seq;
      for (const auto& r : j.at("records")) {
        EventRecord rec;
        rec.sysname_id = r.at(0).get<TokenId>();
        rec.entry = r.at(1).get<int>() != 0;
        int rc = r.at(2).get<int>();
        if (rc < 0 || rc > 2) throw InvalidEvent("bad ret class");
        rec.ret_class = static_cast<RetClass>(rc);
        rec.procname_id = r.at(3).get<TokenId>();
        rec.pid = r.at(4).get<std::int64_t>();
        rec.tid = r.at(5).get<std::int64_t>();
        rec.timestamp_us = r.at(6).get<std::int64_t>();
        if (rec.sysname_id >= ds.sys_vocab.size() || rec.procname_id >= ds.proc_vocab.size())
          throw InvalidEvent("record id outside its vocabulary");
        seq.records.push_back(rec);
      }
      if (seq.size() != ds.window_len) throw InvalidEvent("sequence length differs from window_len");
      ds.sequences.push_back(std::move(seq));
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(ex.what(), lineno, 0, line);
    } catch (const InvalidEvent& ex) {
      throw ParseError(ex.what(), lineno, 0, line);
    }
  }
  if (!have_header) throw ParseError("empty windows file", 0, 0);
  return ds;
}

}  // namespace argrep
