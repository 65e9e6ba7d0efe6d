#pragma once

#include <charconv>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "argrep/error.hpp"

namespace argrep {

/// Sectioned key/value text:
///
///   [section]
///   key = value      ; comment
///
/// Sections and keys keep file order. Lookups that fail to convert throw
/// ConfigError naming the section and key.
class KeyValueConfig {
 public:
  using Section = std::vector<std::pair<std::string, std::string>>;

  KeyValueConfig() = default;

  static KeyValueConfig parse(std::istream& in) {
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& ex) {
      throw ConfigError("config line " + std::to_string(ex.line()) + ": " + ex.message());
    }
    KeyValueConfig cfg;
    for (const auto& [name, child] : tree) {
      if (child.empty()) throw ConfigError("key '" + name + "' outside of a section");
      Section s;
      for (const auto& [key, value] : child) s.emplace_back(key, value.data());
      cfg.sections_.emplace_back(name, std::move(s));
    }
    return cfg;
  }

  static KeyValueConfig parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse(in);
  }

  [[nodiscard]] const std::vector<std::pair<std::string, Section>>& sections() const noexcept {
    return sections_;
  }

  [[nodiscard]] const Section* section(std::string_view name) const {
    for (const auto& [n, s] : sections_)
      if (n == name) return &s;
    return nullptr;
  }

  [[nodiscard]] std::optional<std::string> get(std::string_view sec, std::string_view key) const {
    if (const Section* s = section(sec))
      for (const auto& [k, v] : *s)
        if (k == key) return v;
    return std::nullopt;
  }

  template <class T>
  [[nodiscard]] T get_or(std::string_view sec, std::string_view key, T fallback) const {
    auto v = get(sec, key);
    return v ? convert<T>(*v, sec, key) : fallback;
  }

  /// Sets or overrides a value (CLI flags override file values).
  void set(const std::string& sec, const std::string& key, std::string value) {
    for (auto& [n, s] : sections_) {
      if (n != sec) continue;
      for (auto& [k, v] : s)
        if (k == key) {
          v = std::move(value);
          return;
        }
      s.emplace_back(key, std::move(value));
      return;
    }
    sections_.emplace_back(sec, Section{{key, std::move(value)}});
  }

  template <class T>
  static T convert(const std::string& v, std::string_view sec, std::string_view key) {
    auto bad = [&]() {
      return ConfigError("[" + std::string(sec) + "] " + std::string(key) + ": cannot parse '" +
                         v + "'");
    };
    if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
      if (v == "false" || v == "0" || v == "no" || v == "off") return false;
      throw bad();
    } else if constexpr (std::is_floating_point_v<T>) {
      try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw bad();
        return static_cast<T>(d);
      } catch (const std::logic_error&) {
        throw bad();
      }
    } else {
      T out{};
      auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
      if (ec != std::errc{} || ptr != v.data() + v.size()) throw bad();
      return out;
    }
  }

  [[nodiscard]] std::string dump() const {
    std::ostringstream os;
    for (const auto& [name, s] : sections_) {
      os << '[' << name << "]\n";
      for (const auto& [k, v] : s) os << k << " = " << v << '\n';
      os << '\n';
    }
    return os.str();
  }

 private:
  std::vector<std::pair<std::string, Section>> sections_;
};

/// Splits on whitespace.
inline std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

}  // namespace argrep
