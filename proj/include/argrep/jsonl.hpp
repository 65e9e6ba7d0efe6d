#pragma once

#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "argrep/error.hpp"
#include "argrep/event.hpp"

namespace argrep {

// Canonical event interchange: one JSON object per line with the keys
// ts_ns, host, cpu, procname, pid, tid, sysname, entry, ret, args.

inline nlohmann::ordered_json to_json(const Event& e) {
  nlohmann::ordered_json j;
  j["ts_ns"] = e.timestamp_ns;
  j["host"] = e.hostname;
  j["cpu"] = e.cpu_id;
  j["procname"] = e.procname;
  j["pid"] = e.pid;
  j["tid"] = e.tid;
  j["sysname"] = e.sysname;
  j["entry"] = e.entry;
  j["ret"] = e.ret ? nlohmann::ordered_json(*e.ret) : nlohmann::ordered_json(nullptr);
  auto args = nlohmann::ordered_json::object();
  for (const auto& [k, v] : e.extra_args) args[k] = v;
  j["args"] = std::move(args);
  return j;
}

inline Event event_from_json(const nlohmann::ordered_json& j) {
  static constexpr const char* kKeys[] = {"ts_ns", "pid",   "tid",     "cpu", "host",
                                          "procname", "sysname", "entry", "ret", "args"};
  if (!j.is_object()) throw InvalidEvent("event is not a JSON object");
  for (const char* k : kKeys)
    if (!j.contains(k)) throw InvalidEvent(std::string("missing key '") + k + "'");
  if (j.size() != std::size(kKeys)) throw InvalidEvent("unexpected keys in event object");

  Event e;
  e.timestamp_ns = j.at("ts_ns").get<std::int64_t>();
  e.hostname = j.at("host").get<std::string>();
  e.cpu_id = j.at("cpu").get<std::uint32_t>();
  e.procname = j.at("procname").get<std::string>();
  e.pid = j.at("pid").get<std::int64_t>();
  e.tid = j.at("tid").get<std::int64_t>();
  e.sysname = j.at("sysname").get<std::string>();
  e.entry = j.at("entry").get<bool>();
  if (!j.at("ret").is_null()) e.ret = j.at("ret").get<std::int64_t>();
  const auto& args = j.at("args");
  if (!args.is_object()) throw InvalidEvent("'args' is not an object");
  for (const auto& [k, v] : args.items()) {
    if (!v.is_string()) throw InvalidEvent("argument '" + k + "' is not a string");
    e.extra_args.emplace_back(k, v.get<std::string>());
  }
  validate(e);
  return e;
}

inline void write_jsonl(std::ostream& out, std::span<const Event> events) {
  for (const auto& e : events) out << to_json(e).dump() << '\n';
}

inline std::vector<Event> read_jsonl(std::istream& in) {
  std::vector<Event> events;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      events.push_back(event_from_json(nlohmann::ordered_json::parse(line)));
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(std::string("malformed event: ") + ex.what(), lineno, 0, line);
    } catch (const InvalidEvent& ex) {
      throw ParseError(std::string("invalid event: ") + ex.what(), lineno, 0, line);
    }
  }
  return events;
}

}  // namespace argrep
