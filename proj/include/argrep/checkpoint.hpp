#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "argrep/error.hpp"
#include "argrep/event.hpp"
#include "argrep/model.hpp"

// Checkpoint: one JSON document with the configs, both vocabularies and their
// hashes, the init seed, and every parameter tensor in the model's order.

namespace argrep {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const RepresentationConfig& c) {
  return {{"call", c.call},
          {"process", c.process},
          {"time", c.time},
          {"d_sysname", c.d_sysname},
          {"d_procname", c.d_procname},
          {"d_pid", c.d_pid},
          {"d_tid", c.d_tid},
          {"d_timestamp", c.d_timestamp},
          {"timestamp_origin", c.timestamp_origin == TimestampOrigin::SequenceStart ? "sequence" : "trace"},
          {"encoding_base", c.encoding_base}};
}

inline RepresentationConfig representation_from_json(const nlohmann::json& j) {
  RepresentationConfig c;
  c.call = j.at("call").get<bool>();
  c.process = j.at("process").get<bool>();
  c.time = j.at("time").get<bool>();
  c.d_sysname = j.at("d_sysname").get<std::size_t>();
  c.d_procname = j.at("d_procname").get<std::size_t>();
  c.d_pid = j.at("d_pid").get<std::size_t>();
  c.d_tid = j.at("d_tid").get<std::size_t>();
  c.d_timestamp = j.at("d_timestamp").get<std::size_t>();
  c.timestamp_origin =
      j.at("timestamp_origin").get<std::string>() == "trace" ? TimestampOrigin::TraceStart : TimestampOrigin::SequenceStart;
  c.encoding_base = j.at("encoding_base").get<double>();
  return c;
}

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"kind", std::string(to_string(c.kind))},
          {"lstm_layers", c.lstm_layers},
          {"lstm_hidden", c.lstm_hidden},
          {"tf_layers", c.tf_layers},
          {"tf_heads", c.tf_heads},
          {"tf_ff", c.tf_ff},
          {"d_position", c.d_position},
          {"dropout", c.dropout},
          {"window_len", c.window_len}};
}

inline ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "lstm") c.kind = ModelKind::Lstm;
  else if (kind == "transformer") c.kind = ModelKind::Transformer;
  else throw ConfigError("unknown model kind '" + kind + "'");
  c.lstm_layers = j.at("lstm_layers").get<std::size_t>();
  c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
  c.tf_layers = j.at("tf_layers").get<std::size_t>();
  c.tf_heads = j.at("tf_heads").get<std::size_t>();
  c.tf_ff = j.at("tf_ff").get<std::size_t>();
  c.d_position = j.at("d_position").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.window_len = j.at("window_len").get<std::size_t>();
  return c;
}

struct Checkpoint {
  ModelConfig model;
  RepresentationConfig representation;
  Vocab sys_vocab;
  Vocab proc_vocab;
  std::uint64_t seed = 0;
};

template <class T>
void save_checkpoint(std::ostream& out, SequenceModel<T>& model, const Vocab& sys_vocab,
                     const Vocab& proc_vocab) {
  if (sys_vocab.size() != model.vocab_size()) throw std::invalid_argument("vocabulary does not match the model");
  nlohmann::ordered_json j;
  j["format"] = "argrep-checkpoint";
  j["version"] = kCheckpointVersion;
  j["seed"] = model.seed();
  j["model"] = to_json(model.model_config());
  j["representation"] = to_json(model.repr_config());
  j["sys_vocab"] = sys_vocab.tokens();
  j["sys_vocab_hash"] = detail::hex64(sys_vocab.hash());
  j["proc_vocab"] = proc_vocab.tokens();
  j["proc_vocab_hash"] = detail::hex64(proc_vocab.hash());
  auto params = nlohmann::ordered_json::array();
  for (auto& p : model.parameters()) {
    const auto& v = p.param->value;
    params.push_back({{"name", p.name},
                      {"rows", v.rows()},
                      {"cols", v.cols()},
                      {"data", std::vector<double>(v.data(), v.data() + v.size())}});
  }
  j["parameters"] = std::move(params);
  out << j.dump() << '\n';
}

/// Reads a checkpoint and rebuilds its model. Throws ParseError on a
/// malformed document and ConfigError when a stored vocabulary does not
/// match its hash.
template <class T>
SequenceModel<T> load_checkpoint(std::istream& in, Checkpoint* info = nullptr) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(ex.what(), 0, 0);
  }
  try {
    if (j.value("format", "") != "argrep-checkpoint") throw ParseError("not an argrep checkpoint", 0, 0);
    if (j.value("version", 0) != kCheckpointVersion)
      throw ParseError("unsupported checkpoint version", 0, 0);
    Checkpoint c;
    c.model = model_from_json(j.at("model"));
    c.representation = representation_from_json(j.at("representation"));
    c.seed = j.at("seed").get<std::uint64_t>();
    c.sys_vocab = Vocab::from_tokens(j.at("sys_vocab").get<std::vector<std::string>>());
    c.proc_vocab = Vocab::from_tokens(j.at("proc_vocab").get<std::vector<std::string>>());
    if (detail::hex64(c.sys_vocab.hash()) != j.at("sys_vocab_hash").get<std::string>() ||
        detail::hex64(c.proc_vocab.hash()) != j.at("proc_vocab_hash").get<std::string>())
      throw ConfigError("checkpoint vocabulary does not match its stored hash");
    SequenceModel<T> model(c.model, c.representation, c.sys_vocab.size(), c.proc_vocab.size(), c.seed);
    const auto& stored = j.at("parameters");
    auto params = model.parameters();
    if (stored.size() != params.size()) throw ParseError("checkpoint parameter count mismatch", 0, 0);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& s = stored.at(i);
      auto& v = params[i].param->value;
      if (s.at("name").get<std::string>() != params[i].name || s.at("rows").get<Eigen::Index>() != v.rows() ||
          s.at("cols").get<Eigen::Index>() != v.cols())
        throw ParseError("checkpoint tensor '" + params[i].name + "' does not match the model", 0, 0);
      const auto data = s.at("data").get<std::vector<double>>();
      if (data.size() != static_cast<std::size_t>(v.size())) throw ParseError("truncated tensor data", 0, 0);
      for (std::size_t k = 0; k < data.size(); ++k) v.data()[k] = static_cast<T>(data[k]);
    }
    if (info) *info = std::move(c);
    return model;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(ex.what(), 0, 0);
  }
}

/// Throws ConfigError unless `vocab` is the vocabulary the checkpoint was trained with.
inline void require_vocab(const Vocab& expected, const Vocab& actual, const std::string& what) {
  if (expected.hash() != actual.hash() || !(expected == actual))
    throw ConfigError(what + " vocabulary hash " + detail::hex64(actual.hash()) + " does not match checkpoint " +
                      detail::hex64(expected.hash()));
}

}  // namespace argrep
