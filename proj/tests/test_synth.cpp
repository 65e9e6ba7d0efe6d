#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <sstream>

#include "argrep/babeltrace.hpp"
#include "argrep/jsonl.hpp"
#include "argrep/synth.hpp"

using namespace argrep;

namespace {

WorkloadConfig small(std::size_t n, std::uint64_t seed = 3) {
  auto cfg = default_workload();
  cfg.n_events = n;
  cfg.seed = seed;
  return cfg;
}

// Plug-in conditional entropy H(next | key(prev)) in nats.
template <class Key>
double conditional_entropy(const std::vector<Event>& ev, Key key) {
  std::map<decltype(key(ev[0])), std::map<std::string, double>> joint;
  for (std::size_t i = 0; i + 1 < ev.size(); ++i) joint[key(ev[i])][ev[i + 1].sysname] += 1;
  const double total = static_cast<double>(ev.size() - 1);
  double h = 0;
  for (const auto& [k, next] : joint) {
    double nk = 0;
    for (const auto& [s, c] : next) nk += c;
    for (const auto& [s, c] : next) h -= c / total * std::log(c / nk);
  }
  return h;
}

}  // namespace

TEST_CASE("generate is deterministic under its seed", "[synth]") {
  auto a = generate(small(1000)), b = generate(small(1000));
  std::ostringstream sa, sb;
  write_jsonl(sa, a);
  write_jsonl(sb, b);
  CHECK(sa.str() == sb.str());
  CHECK(generate(small(1000, 4)) != a);
}

TEST_CASE("generated events are valid, strictly time ordered and paired per thread", "[synth]") {
  auto ev = generate(small(50000));
  REQUIRE(ev.size() == 50000);
  std::map<std::int64_t, std::optional<std::string>> open;
  for (std::size_t i = 0; i < ev.size(); ++i) {
    REQUIRE_NOTHROW(validate(ev[i]));
    if (i) REQUIRE(ev[i].timestamp_ns > ev[i - 1].timestamp_ns);
    auto& cur = open[ev[i].tid];
    if (ev[i].entry) {
      REQUIRE_FALSE(cur.has_value());
      cur = ev[i].sysname;
    } else {
      REQUIRE(cur.has_value());
      REQUIRE(*cur == ev[i].sysname);
      cur.reset();
    }
  }
}

TEST_CASE("default workload: futex and poll lead, firefox share in band", "[synth]") {
  auto ev = generate(small(100000, 1));
  auto r = stats(ev);
  REQUIRE(r.sysnames.size() >= 2);
  std::vector<std::string> top = {r.sysnames[0].first, r.sysnames[1].first};
  std::sort(top.begin(), top.end());
  CHECK(top == std::vector<std::string>{"futex", "poll"});
  CHECK(r.procname_share("firefox") >= 0.05);
  CHECK(r.procname_share("firefox") <= 0.25);
  CHECK(r.sysnames.size() >= 25);
  CHECK(r.sysnames.size() <= 35);
}

TEST_CASE("stats are deterministic and reflect a single process", "[synth]") {
  auto cfg = small(5000);
  cfg.processes.resize(1);
  auto r = stats(generate(cfg));
  REQUIRE(r.procnames.size() == 1);
  CHECK(r.procnames[0].second == 1.0);
  CHECK(stats(generate(small(2000))).to_json() == stats(generate(small(2000))).to_json());
  CHECK_THROWS(stats({}));
}

TEST_CASE("arguments carry information about the next system call", "[synth]") {
  auto ev = generate(small(100000, 2));
  const double h_name = conditional_entropy(ev, [](const Event& e) { return e.sysname; });
  const double h_args = conditional_entropy(ev, [](const Event& e) {
    return e.sysname + "|" + e.procname + "|" + std::string(to_string(ret_simplify(e.ret)));
  });
  CHECK(h_args < h_name - 0.05);
}

TEST_CASE("workload config round trips through key/value text", "[synth]") {
  auto cfg = default_workload();
  auto text = workload_to_config(cfg).dump();
  auto back = workload_from_config(KeyValueConfig::parse(text));
  CHECK(workload_to_config(back).dump() == text);
  auto ea = generate(small(3000)), eb = [&] {
    back.n_events = 3000;
    back.seed = 3;
    return generate(back);
  }();
  CHECK(ea == eb);
}

TEST_CASE("workload validation rejects broken chains", "[synth]") {
  auto cfg = default_workload();
  SECTION("row does not sum to one") {
    cfg.processes[0].next.begin()->second[0].second += 0.2;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SECTION("target without a row") {
    cfg.processes[0].next.begin()->second[0].first = "nowhere";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SECTION("non-positive weight") {
    cfg.processes[0].weight = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SECTION("stickiness out of range") {
    cfg.stickiness = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("generated traces survive both serializations", "[synth]") {
  auto ev = generate(small(3000));
  std::stringstream js, bt;
  write_jsonl(js, ev);
  CHECK(read_jsonl(js) == ev);
  write_babeltrace(bt, ev, 36'000'000'000'000ll);
  auto back = read_babeltrace(bt);
  const auto first = ev.front().timestamp_ns;
  for (auto& e : ev) e.timestamp_ns -= first;
  CHECK(back == ev);
}
