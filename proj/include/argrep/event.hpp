#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "argrep/error.hpp"

namespace argrep {

/// One parsed kernel trace line: a system call entry or exit with its
/// stream/event context.
struct Event {
  std::int64_t timestamp_ns = 0;
  std::string hostname;
  std::uint32_t cpu_id = 0;
  std::string procname;
  std::int64_t pid = 0;
  std::int64_t tid = 0;
  std::string sysname;
  bool entry = true;
  std::optional<std::int64_t> ret;
  // Collected but not modeled (fd, filename, futex op, ...). Order is kept.
  std::vector<std::pair<std::string, std::string>> extra_args;

  bool operator==(const Event&) const = default;
};

/// Throws InvalidEvent when an Event breaks its invariants.
inline void validate(const Event& e) {
  if (e.timestamp_ns < 0) throw InvalidEvent("negative timestamp");
  if (e.pid < 0 || e.tid < 0) throw InvalidEvent("negative pid/tid");
  if (e.sysname.empty()) throw InvalidEvent("empty sysname");
  if (std::any_of(e.sysname.begin(), e.sysname.end(),
                  [](unsigned char c) { return std::isspace(c) != 0; }))
    throw InvalidEvent("sysname contains whitespace: '" + e.sysname + "'");
  if (e.entry && e.ret.has_value())
    throw InvalidEvent("entry event carries a return value");
  if (!e.entry && !e.ret.has_value())
    throw InvalidEvent("exit event without a return value");
  for (std::size_t i = 0; i < e.extra_args.size(); ++i)
    for (std::size_t j = i + 1; j < e.extra_args.size(); ++j)
      if (e.extra_args[i].first == e.extra_args[j].first)
        throw InvalidEvent("duplicate argument '" + e.extra_args[i].first + "'");
}

enum class RetClass : std::uint8_t { Success = 0, Failure = 1, Unavailable = 2 };
inline constexpr std::size_t kRetClassCount = 3;

inline constexpr std::string_view to_string(RetClass r) {
  switch (r) {
    case RetClass::Success: return "success";
    case RetClass::Failure: return "failure";
    case RetClass::Unavailable: return "unavailable";
  }
  return "?";
}

inline constexpr RetClass ret_simplify(std::optional<std::int64_t> ret) noexcept {
  if (!ret) return RetClass::Unavailable;
  return *ret >= 0 ? RetClass::Success : RetClass::Failure;
}

using TokenId = std::uint32_t;

/// Bidirectional token <-> id map. Ids 0..2 are reserved for PAD/UNK/MASK.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kMask = 2;
  static constexpr TokenId kReserved = 3;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";
  static constexpr std::string_view kMaskToken = "<mask>";

  Vocab() : Vocab(std::vector<std::string>{}) {}

  /// Builds from corpus tokens (reserved tokens are prepended).
  explicit Vocab(const std::vector<std::string>& corpus_tokens) {
    tokens_ = {std::string(kPadToken), std::string(kUnkToken),
               std::string(kMaskToken)};
    for (const auto& t : corpus_tokens) {
      if (is_reserved(t)) throw InvalidEvent("corpus token collides with reserved token " + t);
      auto id = static_cast<TokenId>(tokens_.size());
      if (!index_.emplace(t, id).second) throw InvalidEvent("duplicate vocab token " + t);
      tokens_.push_back(t);
    }
  }

  /// Restores a vocab from a full token list (reserved prefix included).
  static Vocab from_tokens(const std::vector<std::string>& all_tokens) {
    if (all_tokens.size() < kReserved || all_tokens[kPad] != kPadToken ||
        all_tokens[kUnk] != kUnkToken || all_tokens[kMask] != kMaskToken)
      throw InvalidEvent("vocab token list lacks the reserved prefix");
    return Vocab(std::vector<std::string>(all_tokens.begin() + kReserved,
                                          all_tokens.end()));
  }

  [[nodiscard]] std::size_t size() const noexcept { return tokens_.size(); }
  [[nodiscard]] const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  [[nodiscard]] TokenId lookup(std::string_view token) const {
    if (token == kPadToken) return kPad;
    if (token == kMaskToken) return kMask;
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }

  [[nodiscard]] const std::string& token(TokenId id) const {
    if (id >= tokens_.size()) throw std::out_of_range("vocab id out of range");
    return tokens_[id];
  }

  /// FNV-1a over the token list; used to check checkpoint/data compatibility.
  [[nodiscard]] std::uint64_t hash() const noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& t : tokens_) {
      for (unsigned char c : t) {
        h ^= c;
        h *= 1099511628211ull;
      }
      h ^= 0xffu;
      h *= 1099511628211ull;
    }
    return h;
  }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  static bool is_reserved(std::string_view t) {
    return t == kPadToken || t == kUnkToken || t == kMaskToken;
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Counts tokens and keeps those seen at least `min_count` times, ordered by
/// descending count then lexicographically.
inline Vocab vocab_from_counts(const std::map<std::string, std::size_t>& counts, std::size_t min_count = 1) {
  if (min_count < 1) throw std::invalid_argument("min_count must be >= 1");
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts)
    if (n >= min_count && tok != Vocab::kPadToken && tok != Vocab::kUnkToken &&
        tok != Vocab::kMaskToken)
      kept.emplace_back(tok, n);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return Vocab(tokens);
}

template <class Range>
Vocab build_vocab(const Range& corpus, std::size_t min_count = 1) {
  std::map<std::string, std::size_t> counts;
  for (const auto& tok : corpus) ++counts[std::string(tok)];
  return vocab_from_counts(counts, min_count);
}

/// Integer-coded event ready for the representation layer.
struct EventRecord {
  TokenId sysname_id = Vocab::kPad;
  bool entry = true;
  RetClass ret_class = RetClass::Unavailable;
  TokenId procname_id = Vocab::kPad;
  std::int64_t pid = 0;
  std::int64_t tid = 0;
  std::int64_t timestamp_us = 0;

  bool operator==(const EventRecord&) const = default;
};

inline EventRecord encode_event(const Event& e, const Vocab& sys_vocab,
                                const Vocab& proc_vocab) {
  EventRecord r;
  r.sysname_id = sys_vocab.lookup(e.sysname);
  r.entry = e.entry;
  r.ret_class = ret_simplify(e.ret);
  r.procname_id = proc_vocab.lookup(e.procname);
  r.pid = e.pid;
  r.tid = e.tid;
  r.timestamp_us = e.timestamp_ns / 1000;
  return r;
}

inline std::vector<EventRecord> encode_events(const std::vector<Event>& events,
                                              const Vocab& sys_vocab,
                                              const Vocab& proc_vocab) {
  std::vector<EventRecord> out;
  out.reserve(events.size());
  for (const auto& e : events) out.push_back(encode_event(e, sys_vocab, proc_vocab));
  return out;
}

/// Builds the sysname and procname vocabularies from an event list.
inline std::pair<Vocab, Vocab> build_vocabs(const std::vector<Event>& events,
                                            std::size_t min_count = 1) {
  std::vector<std::string_view> sys, proc;
  sys.reserve(events.size());
  proc.reserve(events.size());
  for (const auto& e : events) {
    sys.push_back(e.sysname);
    proc.push_back(e.procname);
  }
  return {build_vocab(sys, min_count), build_vocab(proc, min_count)};
}

}  // namespace argrep
