#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace argrep {

/// Bad user configuration (CLI exit code 1).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An Event or record that violates its invariants.
class InvalidEvent : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input text. `line` is 1-based (0 when unknown), `offset` is the
/// byte offset within the line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t offset,
             std::string text = {})
      : std::runtime_error(format(what, line, offset)),
        message_(what),
        line_(line),
        offset_(offset),
        text_(std::move(text)) {}

  /// The message without the position prefix.
  [[nodiscard]] const std::string& message() const noexcept { return message_; }
  [[nodiscard]] std::size_t line() const noexcept { return line_; }
  [[nodiscard]] std::size_t offset() const noexcept { return offset_; }
  [[nodiscard]] const std::string& text() const noexcept { return text_; }

 private:
  static std::string format(const std::string& what, std::size_t line, std::size_t offset) {
    std::string s;
    if (line != 0) s += "line " + std::to_string(line) + ", ";
    s += "offset " + std::to_string(offset) + ": " + what;
    return s;
  }

  std::string message_;
  std::size_t line_;
  std::size_t offset_;
  std::string text_;
};

/// Non-finite values during a forward pass or a training run.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A model/objective combination that is not supported (e.g. MLM on an LSTM).
class UnsupportedConfig : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace argrep
