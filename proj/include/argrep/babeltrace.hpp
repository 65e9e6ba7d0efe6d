#pragma once

#include <charconv>
#include <cstdio>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "argrep/error.hpp"
#include "argrep/event.hpp"

// Text trace lines in the layout Babeltrace prints for LTTng syscall events:
//
//   [H:M:S.nnnnnnnnn] (+d.ddddddddd) HOST EVENTNAME: { cpu_id = N },
//       { procname = "S", pid = N, tid = N }, { K = V, ... }
//
// EVENTNAME is syscall_entry_<name> or syscall_exit_<name>; exit events carry
// `ret` in the last group.

namespace argrep {

namespace detail {

inline constexpr std::string_view kEntryPrefix = "syscall_entry_";
inline constexpr std::string_view kExitPrefix = "syscall_exit_";
inline constexpr std::int64_t kNsPerSecond = 1'000'000'000;

class LineScanner {
 public:
  explicit LineScanner(std::string_view s) : s_(s) {}

  [[nodiscard]] std::size_t pos() const noexcept { return pos_; }
  [[nodiscard]] bool done() const noexcept { return pos_ >= s_.size(); }
  [[nodiscard]] char peek() const noexcept { return done() ? '\0' : s_[pos_]; }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, 0, pos_); }
  [[noreturn]] void fail_at(std::size_t at, const std::string& what) const {
    throw ParseError(what, 0, at);
  }

  void skip_ws() {
    while (!done() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }

  void expect(char c) {
    skip_ws();
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_past(char c) {
    while (!done() && s_[pos_] != c) ++pos_;
    if (done()) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (peek() != c) return false;
    ++pos_;
    return true;
  }

  std::string_view digits() {
    std::size_t start = pos_;
    while (!done() && s_[pos_] >= '0' && s_[pos_] <= '9') ++pos_;
    if (start == pos_) fail("expected digits");
    return s_.substr(start, pos_ - start);
  }

  std::int64_t integer() {
    skip_ws();
    std::size_t start = pos_;
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s_.data() + pos_, s_.data() + s_.size(), v);
    if (ec != std::errc{}) fail_at(start, "expected integer");
    pos_ = static_cast<std::size_t>(ptr - s_.data());
    return v;
  }

  /// Run of non-whitespace characters.
  std::string_view word() {
    skip_ws();
    std::size_t start = pos_;
    while (!done() && s_[pos_] != ' ' && s_[pos_] != '\t') ++pos_;
    if (start == pos_) fail("expected a word");
    return s_.substr(start, pos_ - start);
  }

  std::string_view identifier() {
    skip_ws();
    std::size_t start = pos_;
    auto ok = [](char c, bool first) {
      return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' ||
             (!first && c >= '0' && c <= '9');
    };
    while (!done() && ok(s_[pos_], pos_ == start)) ++pos_;
    if (start == pos_) fail("expected identifier");
    return s_.substr(start, pos_ - start);
  }

  std::string quoted() {
    skip_ws();
    if (peek() != '"') fail("expected quoted string");
    ++pos_;
    std::string out;
    while (true) {
      if (done()) fail("unterminated string");
      char c = s_[pos_++];
      if (c == '"') break;
      if (c == '\\') {
        if (done()) fail("dangling escape");
        c = s_[pos_++];
      }
      out.push_back(c);
    }
    return out;
  }

  /// Quoted string or bare text up to the next ',' or '}'.
  std::string value() {
    skip_ws();
    if (peek() == '"') return quoted();
    std::size_t start = pos_;
    while (!done() && s_[pos_] != ',' && s_[pos_] != '}') ++pos_;
    std::string_view v = s_.substr(start, pos_ - start);
    while (!v.empty() && (v.back() == ' ' || v.back() == '\t')) v.remove_suffix(1);
    if (v.empty()) fail_at(start, "expected value");
    return std::string(v);
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

struct Field {
  std::string key;
  std::string value;
  std::size_t offset;
  bool quoted;
};

inline std::vector<Field> brace_group(LineScanner& sc) {
  sc.expect('{');
  std::vector<Field> fields;
  if (sc.accept('}')) return fields;
  do {
    sc.skip_ws();
    Field f;
    f.offset = sc.pos();
    f.key = std::string(sc.identifier());
    sc.expect('=');
    sc.skip_ws();
    f.quoted = sc.peek() == '"';
    f.value = sc.value();
    fields.push_back(std::move(f));
  } while (sc.accept(','));
  sc.expect('}');
  return fields;
}

inline std::int64_t field_int(const LineScanner& sc, const Field& f) {
  std::int64_t v = 0;
  const char* end = f.value.data() + f.value.size();
  auto [ptr, ec] = std::from_chars(f.value.data(), end, v);
  if (f.quoted || ec != std::errc{} || ptr != end)
    sc.fail_at(f.offset, "field '" + f.key + "' is not an integer");
  return v;
}

inline bool is_integer_literal(std::string_view v) {
  if (!v.empty() && v.front() == '-') v.remove_prefix(1);
  if (v.empty()) return false;
  for (char c : v)
    if (c < '0' || c > '9') return false;
  return true;
}

inline void write_quoted(std::ostream& out, std::string_view v) {
  out << '"';
  for (char c : v) {
    if (c == '"' || c == '\\') out << '\\';
    out << c;
  }
  out << '"';
}

inline void write_seconds(std::ostream& out, std::int64_t ns) {
  char frac[16];
  std::snprintf(frac, sizeof frac, "%09lld", static_cast<long long>(ns % kNsPerSecond));
  out << ns / kNsPerSecond << '.' << frac;
}

inline std::int64_t wallclock(LineScanner& sc) {
  sc.expect('[');
  std::int64_t h = sc.integer();
  sc.expect(':');
  std::int64_t m = sc.integer();
  sc.expect(':');
  std::int64_t s = std::stoll(std::string(sc.digits()));
  if (h < 0 || m < 0 || m >= 60 || s >= 60) sc.fail("invalid clock value");
  std::int64_t frac_ns = 0;
  if (sc.accept('.')) {
    std::size_t at = sc.pos();
    std::string_view f = sc.digits();
    if (f.size() > 9) sc.fail_at(at, "more than 9 fractional digits");
    frac_ns = std::stoll(std::string(f));
    for (std::size_t i = f.size(); i < 9; ++i) frac_ns *= 10;
  }
  sc.expect(']');
  return ((h * 60 + m) * 60 + s) * kNsPerSecond + frac_ns;
}

}  // namespace detail

/// Wall-clock stamp of a line (ns since midnight), without parsing the rest.
inline std::int64_t parse_wallclock(std::string_view line) {
  detail::LineScanner sc(line);
  return detail::wallclock(sc);
}

/// Parses one trace line. The event timestamp is the wall-clock stamp minus
/// `epoch_ns`. Throws ParseError carrying the byte offset of the problem.
inline Event parse_line(std::string_view line, std::int64_t epoch_ns = 0) {
  using detail::LineScanner;
  LineScanner sc(line);
  Event e;

  std::int64_t wall = detail::wallclock(sc);
  if (wall < epoch_ns) sc.fail_at(0, "timestamp precedes the trace epoch");
  e.timestamp_ns = wall - epoch_ns;

  // Delta to the previous event: informational only.
  sc.expect('(');
  sc.skip_past(')');

  e.hostname = std::string(sc.word());

  sc.skip_ws();
  std::size_t name_at = sc.pos();
  std::string_view name = sc.identifier();
  sc.expect(':');
  if (name.starts_with(detail::kEntryPrefix)) {
    e.entry = true;
    name.remove_prefix(detail::kEntryPrefix.size());
  } else if (name.starts_with(detail::kExitPrefix)) {
    e.entry = false;
    name.remove_prefix(detail::kExitPrefix.size());
  } else {
    sc.fail_at(name_at, "unrecognized event name '" + std::string(name) + "'");
  }
  if (name.empty()) sc.fail_at(name_at, "empty system call name");
  e.sysname = std::string(name);

  auto stream_ctx = detail::brace_group(sc);
  bool have_cpu = false;
  for (const auto& f : stream_ctx) {
    if (f.key == "cpu_id") {
      auto v = detail::field_int(sc, f);
      if (v < 0) sc.fail_at(f.offset, "negative cpu_id");
      e.cpu_id = static_cast<std::uint32_t>(v);
      have_cpu = true;
    }
  }
  if (!have_cpu) sc.fail("missing cpu_id");

  sc.expect(',');
  auto event_ctx = detail::brace_group(sc);
  bool have_proc = false, have_pid = false, have_tid = false;
  for (const auto& f : event_ctx) {
    if (f.key == "procname") {
      e.procname = f.value;
      have_proc = true;
    } else if (f.key == "pid") {
      e.pid = detail::field_int(sc, f);
      have_pid = true;
    } else if (f.key == "tid") {
      e.tid = detail::field_int(sc, f);
      have_tid = true;
    }
  }
  if (!have_proc || !have_pid || !have_tid) sc.fail("event context needs procname, pid and tid");

  sc.expect(',');
  auto payload = detail::brace_group(sc);
  for (const auto& f : payload) {
    if (!e.entry && !e.ret && f.key == "ret") {
      e.ret = detail::field_int(sc, f);
    } else {
      e.extra_args.emplace_back(f.key, f.value);
    }
  }
  if (!e.entry && !e.ret) sc.fail("exit event without ret");
  sc.skip_ws();
  if (!sc.done()) sc.fail("trailing characters");
  try {
    validate(e);
  } catch (const InvalidEvent& ex) {
    sc.fail_at(0, ex.what());
  }
  return e;
}

/// Formats an event in the grammar accepted by parse_line. The delta field is
/// computed from `prev_timestamp_ns` when given.
inline void format_line(std::ostream& out, const Event& e,
                        std::optional<std::int64_t> prev_timestamp_ns = std::nullopt,
                        std::int64_t epoch_ns = 0) {
  validate(e);
  if (!e.entry)
    for (const auto& [k, v] : e.extra_args)
      if (k == "ret") throw InvalidEvent("exit event has an extra argument named 'ret'");
  std::int64_t wall = e.timestamp_ns + epoch_ns;
  std::int64_t secs = wall / detail::kNsPerSecond;
  char clock[64];
  std::snprintf(clock, sizeof clock, "[%02lld:%02lld:%02lld.%09lld] ",
                static_cast<long long>(secs / 3600), static_cast<long long>(secs / 60 % 60),
                static_cast<long long>(secs % 60),
                static_cast<long long>(wall % detail::kNsPerSecond));
  out << clock << "(+";
  if (prev_timestamp_ns && *prev_timestamp_ns <= e.timestamp_ns)
    detail::write_seconds(out, e.timestamp_ns - *prev_timestamp_ns);
  else
    out << "?.?????????";
  out << ") " << e.hostname << ' ' << (e.entry ? detail::kEntryPrefix : detail::kExitPrefix)
      << e.sysname << ": { cpu_id = " << e.cpu_id << " }, { procname = ";
  detail::write_quoted(out, e.procname);
  out << ", pid = " << e.pid << ", tid = " << e.tid << " }, {";
  bool first = true;
  auto field = [&](std::string_view k, std::string_view v) {
    out << (first ? " " : ", ") << k << " = ";
    if (detail::is_integer_literal(v))
      out << v;
    else
      detail::write_quoted(out, v);
    first = false;
  };
  if (e.ret) field("ret", std::to_string(*e.ret));
  for (const auto& [k, v] : e.extra_args) field(k, v);
  out << (first ? "}" : " }");
}

inline std::string format_line(const Event& e,
                               std::optional<std::int64_t> prev_timestamp_ns = std::nullopt,
                               std::int64_t epoch_ns = 0) {
  std::ostringstream os;
  format_line(os, e, prev_timestamp_ns, epoch_ns);
  return os.str();
}

/// Parses a whole trace; the epoch is the first event's wall-clock stamp.
/// Blank lines are skipped. Errors carry the 1-based line number.
inline std::vector<Event> read_babeltrace(std::istream& in) {
  std::vector<Event> events;
  std::optional<std::int64_t> epoch;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      if (!epoch) epoch = parse_wallclock(line);
      events.push_back(parse_line(line, *epoch));
    } catch (const ParseError& ex) {
      throw ParseError(ex.message(), lineno, ex.offset(), line);
    }
  }
  return events;
}

inline void write_babeltrace(std::ostream& out, std::span<const Event> events,
                             std::int64_t epoch_ns = 0) {
  std::optional<std::int64_t> prev;
  for (const auto& e : events) {
    format_line(out, e, prev, epoch_ns);
    out << '\n';
    prev = e.timestamp_ns;
  }
}

}  // namespace argrep
