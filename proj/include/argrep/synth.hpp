#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "argrep/config.hpp"
#include "argrep/error.hpp"
#include "argrep/event.hpp"
#include "argrep/rng.hpp"

namespace argrep {

/// Outgoing probabilities of one sysname, as (next sysname, probability).
using TransitionRow = std::vector<std::pair<std::string, double>>;

struct ProcessSpec {
  std::string procname;
  double weight = 1.0;
  int threads = 1;
  std::int64_t pid = 1000;
  std::string start;
  std::map<std::string, TransitionRow> next;     // after a successful (or entry-less) call
  std::map<std::string, TransitionRow> on_fail;  // after a failed call; falls back to `next`
};

struct WorkloadConfig {
  std::uint64_t seed = 1;
  std::size_t n_events = 100000;
  std::string hostname = "web1";
  std::uint32_t cpus = 2;
  double failure_rate = 0.08;
  double mean_inter_arrival_us = 4.0;
  // Probability that the next event comes from the thread that produced the
  // previous one.
  double stickiness = 0.8;
  std::vector<std::string> slow_calls;
  double slow_factor = 4.0;
  std::vector<ProcessSpec> processes;

  /// Throws ConfigError when an invariant is violated.
  void validate() const {
    auto finite_pos = [](double w) { return std::isfinite(w) && w > 0; };
    if (n_events < 1) throw ConfigError("n_events must be >= 1");
    if (!(failure_rate >= 0.0 && failure_rate <= 1.0))
      throw ConfigError("failure_rate must lie in [0,1]");
    if (!finite_pos(mean_inter_arrival_us)) throw ConfigError("mean_inter_arrival_us must be > 0");
    if (!(stickiness >= 0.0 && stickiness < 1.0)) throw ConfigError("stickiness must lie in [0,1)");
    if (!finite_pos(slow_factor)) throw ConfigError("slow_factor must be > 0");
    if (cpus < 1) throw ConfigError("cpus must be >= 1");
    if (processes.empty()) throw ConfigError("no processes configured");
    std::set<std::string> names;
    for (const auto& p : processes) {
      if (!names.insert(p.procname).second) throw ConfigError("duplicate process " + p.procname);
      if (!finite_pos(p.weight)) throw ConfigError(p.procname + ": weight must be positive and finite");
      if (p.threads < 1) throw ConfigError(p.procname + ": threads must be >= 1");
      if (p.pid < 0) throw ConfigError(p.procname + ": pid must be >= 0");
      if (!p.next.count(p.start)) throw ConfigError(p.procname + ": start call has no row");
      auto check_rows = [&](const std::map<std::string, TransitionRow>& rows, const char* kind) {
        for (const auto& [from, row] : rows) {
          if (row.empty()) throw ConfigError(p.procname + ": empty " + kind + " row for " + from);
          double sum = 0;
          for (const auto& [to, prob] : row) {
            if (!(prob >= 0.0) || !std::isfinite(prob))
              throw ConfigError(p.procname + ": bad probability in row " + from);
            if (!p.next.count(to))
              throw ConfigError(p.procname + ": " + from + " -> " + to + " leads to a call without a row");
            sum += prob;
          }
          if (std::abs(sum - 1.0) > 1e-9)
            throw ConfigError(p.procname + ": " + kind + " row " + from + " sums to " +
                              std::to_string(sum));
        }
      };
      check_rows(p.next, "next");
      check_rows(p.on_fail, "fail");
    }
  }
};

namespace detail {

inline TransitionRow parse_row(const std::string& text, const std::string& where) {
  TransitionRow row;
  for (const auto& item : split_words(text)) {
    auto colon = item.find(':');
    if (colon == std::string::npos || colon == 0)
      throw ConfigError(where + ": expected name:probability, got '" + item + "'");
    row.emplace_back(item.substr(0, colon),
                     KeyValueConfig::convert<double>(item.substr(colon + 1), where, item));
  }
  return row;
}

inline std::string format_row(const TransitionRow& row) {
  std::string s;
  for (const auto& [to, p] : row) {
    if (!s.empty()) s += ' ';
    std::ostringstream os;
    os << to << ':' << p;
    s += os.str();
  }
  return s;
}

}  // namespace detail

/// Reads a workload from sectioned key/value text: one [workload] section and
/// one [process NAME] section per process, with rows written as
/// `next.read = poll:0.7 write:0.3` and `fail.read = poll:1`.
inline WorkloadConfig workload_from_config(const KeyValueConfig& kv) {
  WorkloadConfig cfg;
  cfg.seed = kv.get_or<std::uint64_t>("workload", "seed", cfg.seed);
  cfg.n_events = kv.get_or<std::size_t>("workload", "events", cfg.n_events);
  cfg.hostname = kv.get_or<std::string>("workload", "hostname", cfg.hostname);
  cfg.cpus = kv.get_or<std::uint32_t>("workload", "cpus", cfg.cpus);
  cfg.failure_rate = kv.get_or<double>("workload", "failure_rate", cfg.failure_rate);
  cfg.mean_inter_arrival_us =
      kv.get_or<double>("workload", "mean_inter_arrival_us", cfg.mean_inter_arrival_us);
  cfg.stickiness = kv.get_or<double>("workload", "stickiness", cfg.stickiness);
  cfg.slow_calls = split_words(kv.get_or<std::string>("workload", "slow_calls", ""));
  cfg.slow_factor = kv.get_or<double>("workload", "slow_factor", cfg.slow_factor);

  for (const auto& [name, section] : kv.sections()) {
    if (name == "workload") continue;
    if (!name.starts_with("process ")) throw ConfigError("unknown section [" + name + "]");
    ProcessSpec p;
    p.procname = name.substr(8);
    for (const auto& [key, value] : section) {
      const std::string where = "[" + name + "] " + key;
      if (key == "weight") {
        p.weight = KeyValueConfig::convert<double>(value, name, key);
      } else if (key == "threads") {
        p.threads = KeyValueConfig::convert<int>(value, name, key);
      } else if (key == "pid") {
        p.pid = KeyValueConfig::convert<std::int64_t>(value, name, key);
      } else if (key == "start") {
        p.start = value;
      } else if (key.starts_with("next.")) {
        p.next[key.substr(5)] = detail::parse_row(value, where);
      } else if (key.starts_with("fail.")) {
        p.on_fail[key.substr(5)] = detail::parse_row(value, where);
      } else {
        throw ConfigError("unknown key " + where);
      }
    }
    cfg.processes.push_back(std::move(p));
  }
  cfg.validate();
  return cfg;
}

inline KeyValueConfig workload_to_config(const WorkloadConfig& cfg) {
  KeyValueConfig kv;
  kv.set("workload", "seed", std::to_string(cfg.seed));
  kv.set("workload", "events", std::to_string(cfg.n_events));
  kv.set("workload", "hostname", cfg.hostname);
  kv.set("workload", "cpus", std::to_string(cfg.cpus));
  auto num = [](double d) {
    std::ostringstream os;
    os << d;
    return os.str();
  };
  kv.set("workload", "failure_rate", num(cfg.failure_rate));
  kv.set("workload", "mean_inter_arrival_us", num(cfg.mean_inter_arrival_us));
  kv.set("workload", "stickiness", num(cfg.stickiness));
  std::string slow;
  for (const auto& s : cfg.slow_calls) slow += (slow.empty() ? "" : " ") + s;
  kv.set("workload", "slow_calls", slow);
  kv.set("workload", "slow_factor", num(cfg.slow_factor));
  for (const auto& p : cfg.processes) {
    const std::string sec = "process " + p.procname;
    kv.set(sec, "weight", num(p.weight));
    kv.set(sec, "threads", std::to_string(p.threads));
    kv.set(sec, "pid", std::to_string(p.pid));
    kv.set(sec, "start", p.start);
    for (const auto& [from, row] : p.next) kv.set(sec, "next." + from, detail::format_row(row));
    for (const auto& [from, row] : p.on_fail) kv.set(sec, "fail." + from, detail::format_row(row));
  }
  return kv;
}

/// Web-server-like workload: apache2 workers, mysqld and php-fpm serve
/// requests while firefox, htop and bmon add background noise.
inline constexpr std::string_view kDefaultWorkload = R"([workload]
seed = 1
events = 100000
hostname = web1
cpus = 2
failure_rate = 0.08
mean_inter_arrival_us = 4
stickiness = 0.8
slow_calls = futex poll epoll_wait nanosleep recvmsg
slow_factor = 4

[process apache2]
weight = 0.33
threads = 6
pid = 2100
start = epoll_wait
next.epoll_wait = accept4:0.35 read:0.25 futex:0.25 poll:0.15
fail.epoll_wait = epoll_wait:0.5 futex:0.5
next.accept4 = read:0.5 fcntl:0.2 setsockopt:0.3
fail.accept4 = epoll_wait:0.6 futex:0.4
next.fcntl = read:0.7 poll:0.3
next.setsockopt = read:0.6 poll:0.4
next.read = poll:0.3 write:0.25 stat:0.15 futex:0.2 openat:0.1
fail.read = poll:0.8 futex:0.2
next.poll = read:0.45 writev:0.25 futex:0.3
fail.poll = poll:0.6 futex:0.4
next.stat = openat:0.6 read:0.2 futex:0.2
fail.stat = write:0.6 futex:0.4
next.openat = fstat:0.7 read:0.3
fail.openat = write:0.5 stat:0.5
next.fstat = mmap:0.3 read:0.5 close:0.2
next.mmap = read:0.5 munmap:0.3 close:0.2
next.munmap = close:0.6 futex:0.4
next.close = futex:0.4 epoll_wait:0.4 poll:0.2
next.write = writev:0.2 poll:0.4 futex:0.2 close:0.2
fail.write = poll:0.7 close:0.3
next.writev = poll:0.4 close:0.3 futex:0.3
next.futex = poll:0.35 read:0.2 futex:0.15 epoll_wait:0.3
fail.futex = futex:0.6 poll:0.4

[process mysqld]
weight = 0.22
threads = 4
pid = 1400
start = poll
next.poll = recvfrom:0.5 futex:0.3 read:0.2
fail.poll = poll:0.5 futex:0.5
next.recvfrom = futex:0.3 pread64:0.4 sendto:0.3
fail.recvfrom = poll:0.9 futex:0.1
next.pread64 = pread64:0.2 futex:0.3 sendto:0.5
fail.pread64 = futex:0.6 lseek:0.4
next.lseek = read:1
next.read = futex:0.4 sendto:0.3 poll:0.3
fail.read = poll:1
next.sendto = poll:0.6 futex:0.4
fail.sendto = futex:0.5 shutdown:0.5
next.shutdown = close:1
next.close = poll:0.7 futex:0.3
next.futex = futex:0.25 poll:0.35 pread64:0.2 clock_gettime:0.2
fail.futex = futex:0.7 poll:0.3
next.clock_gettime = futex:0.5 poll:0.5

[process php-fpm]
weight = 0.2
threads = 3
pid = 3300
start = poll
next.poll = read:0.4 recvfrom:0.4 futex:0.2
fail.poll = poll:0.6 futex:0.4
next.read = socket:0.3 brk:0.2 poll:0.3 write:0.2
fail.read = poll:1
next.socket = connect:1
fail.socket = close:1
next.connect = sendto:0.8 poll:0.2
fail.connect = close:0.7 socket:0.3
next.sendto = poll:0.8 futex:0.2
next.recvfrom = write:0.5 recvfrom:0.2 poll:0.3
fail.recvfrom = poll:1
next.write = close:0.4 poll:0.4 futex:0.2
next.close = poll:0.6 futex:0.4
next.brk = mmap:0.5 read:0.5
next.mmap = read:0.6 munmap:0.4
next.munmap = poll:1
next.futex = poll:0.6 futex:0.2 read:0.2
fail.futex = futex:0.5 poll:0.5

[process firefox]
weight = 0.13
threads = 3
pid = 5120
start = poll
next.poll = recvmsg:0.3 read:0.2 futex:0.3 write:0.2
fail.poll = poll:0.5 futex:0.5
next.recvmsg = poll:0.5 futex:0.3 recvmsg:0.2
fail.recvmsg = poll:1
next.read = futex:0.4 poll:0.4 mmap:0.2
fail.read = poll:1
next.write = futex:0.5 poll:0.5
next.futex = futex:0.3 poll:0.4 madvise:0.1 write:0.2
fail.futex = futex:0.6 poll:0.4
next.madvise = futex:1
next.mmap = munmap:0.3 futex:0.7
next.munmap = poll:1

[process htop]
weight = 0.07
threads = 1
pid = 4410
start = openat
next.openat = read:0.9 close:0.1
fail.openat = openat:0.5 close:0.5
next.read = close:0.5 read:0.3 openat:0.2
fail.read = close:1
next.close = openat:0.6 write:0.2 poll:0.2
next.write = poll:1
next.poll = openat:0.7 ioctl:0.3
fail.poll = poll:1
next.ioctl = openat:1

[process bmon]
weight = 0.05
threads = 1
pid = 4502
start = poll
next.poll = recvmsg:0.5 write:0.3 nanosleep:0.2
next.recvmsg = recvmsg:0.3 poll:0.4 write:0.3
fail.recvmsg = poll:1
next.write = nanosleep:0.4 poll:0.6
next.nanosleep = poll:0.7 sendmsg:0.3
next.sendmsg = recvmsg:1
fail.sendmsg = poll:1
)";

inline WorkloadConfig default_workload() {
  return workload_from_config(KeyValueConfig::parse(kDefaultWorkload));
}

namespace detail {

inline bool uses_fd(std::string_view s) {
  static constexpr std::string_view kFdCalls[] = {
      "read", "write", "writev", "close", "fstat", "fcntl", "pread64", "lseek", "sendto",
      "recvfrom", "recvmsg", "sendmsg", "setsockopt", "shutdown", "ioctl", "connect"};
  return std::find(std::begin(kFdCalls), std::end(kFdCalls), s) != std::end(kFdCalls);
}

inline std::int64_t success_ret(std::string_view s, Rng& rng) {
  if (s == "read" || s == "pread64" || s == "recvfrom" || s == "recvmsg")
    return static_cast<std::int64_t>(rng.below(4097));
  if (s == "write" || s == "writev" || s == "sendto" || s == "sendmsg")
    return 1 + static_cast<std::int64_t>(rng.below(4096));
  if (s == "poll" || s == "epoll_wait") return 1 + static_cast<std::int64_t>(rng.below(4));
  if (s == "accept4" || s == "openat" || s == "socket") return 3 + static_cast<std::int64_t>(rng.below(60));
  return 0;
}

inline std::int64_t failure_ret(std::string_view s) {
  if (s == "openat" || s == "stat") return -2;     // ENOENT
  if (s == "futex") return -110;                   // ETIMEDOUT
  if (s == "connect") return -111;                 // ECONNREFUSED
  return -11;                                      // EAGAIN
}

}  // namespace detail

/// Generates a synthetic syscall trace, handing each event to `sink` in
/// timestamp order. Each simulated thread follows its process's first-order
/// chain over sysnames; the row used after a failed call differs from the one
/// used after a success.
template <class Sink>
void generate_to(const WorkloadConfig& cfg, Sink&& sink) {
  cfg.validate();
  Rng rng(cfg.seed);

  struct Thread {
    std::size_t proc;
    std::int64_t tid;
    std::string current;  // last completed (or open) call
    bool open = false;
    bool last_failed = false;
  };
  std::vector<Thread> threads;
  std::vector<std::vector<std::size_t>> threads_of(cfg.processes.size());
  std::vector<double> proc_weights;
  for (std::size_t p = 0; p < cfg.processes.size(); ++p) {
    const auto& ps = cfg.processes[p];
    proc_weights.push_back(ps.weight);
    for (int t = 0; t < ps.threads; ++t) {
      threads_of[p].push_back(threads.size());
      threads.push_back(Thread{p, ps.pid + t, "", false, false});
    }
  }
  std::set<std::string> slow(cfg.slow_calls.begin(), cfg.slow_calls.end());

  auto pick_next = [&](const Thread& th) -> std::string {
    const auto& ps = cfg.processes[th.proc];
    if (th.current.empty()) return ps.start;
    const TransitionRow* row = &ps.next.at(th.current);
    if (th.last_failed) {
      auto it = ps.on_fail.find(th.current);
      if (it != ps.on_fail.end()) row = &it->second;
    }
    std::vector<double> w;
    w.reserve(row->size());
    for (const auto& [to, p] : *row) w.push_back(p);
    return (*row)[rng.categorical(w)].first;
  };

  std::int64_t now_ns = 0;
  std::size_t active = threads_of[rng.categorical(proc_weights)][0];
  for (std::size_t i = 0; i < cfg.n_events; ++i) {
    if (i > 0 && !rng.bernoulli(cfg.stickiness)) {
      const auto& pool = threads_of[rng.categorical(proc_weights)];
      active = pool[rng.below(pool.size())];
    }
    Thread& th = threads[active];
    const auto& ps = cfg.processes[th.proc];

    Event e;
    e.hostname = cfg.hostname;
    e.cpu_id = static_cast<std::uint32_t>(th.tid % cfg.cpus);
    e.procname = ps.procname;
    e.pid = ps.pid;
    e.tid = th.tid;
    if (th.open) {
      e.sysname = th.current;
      e.entry = false;
      th.last_failed = rng.bernoulli(cfg.failure_rate);
      e.ret = th.last_failed ? detail::failure_ret(e.sysname) : detail::success_ret(e.sysname, rng);
      th.open = false;
    } else {
      th.current = pick_next(th);
      e.sysname = th.current;
      e.entry = true;
      if (detail::uses_fd(e.sysname))
        e.extra_args.emplace_back("fd", std::to_string(3 + th.tid % 7));
      th.open = true;
    }

    double gap_us = rng.exponential(cfg.mean_inter_arrival_us);
    if (!e.entry && slow.count(e.sysname)) gap_us *= cfg.slow_factor;
    now_ns += std::max<std::int64_t>(1, std::llround(gap_us * 1000.0));
    e.timestamp_ns = now_ns;
    sink(std::move(e));
  }
}

inline std::vector<Event> generate(const WorkloadConfig& cfg) {
  std::vector<Event> events;
  events.reserve(cfg.n_events);
  generate_to(cfg, [&](Event&& e) { events.push_back(std::move(e)); });
  return events;
}

/// Relative frequencies of process and system call names.
struct DistributionReport {
  std::size_t n_events = 0;
  std::vector<std::pair<std::string, double>> procnames;  // descending
  std::vector<std::pair<std::string, double>> sysnames;   // descending

  [[nodiscard]] double procname_share(std::string_view name) const {
    for (const auto& [n, f] : procnames)
      if (n == name) return f;
    return 0.0;
  }

  [[nodiscard]] nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["n_events"] = n_events;
    auto arr = [](const auto& v) {
      auto a = nlohmann::ordered_json::array();
      for (const auto& [n, f] : v) a.push_back({{"name", n}, {"share", f}});
      return a;
    };
    j["procnames"] = arr(procnames);
    j["sysnames"] = arr(sysnames);
    return j;
  }

  void print(std::ostream& out) const {
    auto table = [&](const char* title, const auto& v) {
      out << title << '\n';
      for (const auto& [n, f] : v) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "  %-16s %6.2f%%\n", n.c_str(), 100.0 * f);
        out << buf;
      }
    };
    out << "events: " << n_events << '\n';
    table("process names:", procnames);
    table("system calls:", sysnames);
  }
};

inline DistributionReport stats(const std::vector<Event>& events) {
  if (events.empty()) throw std::invalid_argument("stats of an empty trace");
  std::map<std::string, std::size_t> proc, sys;
  for (const auto& e : events) {
    ++proc[e.procname];
    ++sys[e.sysname];
  }
  auto sorted = [&](const std::map<std::string, std::size_t>& counts) {
    std::vector<std::pair<std::string, double>> v;
    for (const auto& [n, c] : counts)
      v.emplace_back(n, static_cast<double>(c) / static_cast<double>(events.size()));
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return v;
  };
  DistributionReport r;
  r.n_events = events.size();
  r.procnames = sorted(proc);
  r.sysnames = sorted(sys);
  return r;
}

}  // namespace argrep
