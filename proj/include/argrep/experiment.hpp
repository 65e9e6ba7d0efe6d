#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <map>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "argrep/checkpoint.hpp"
#include "argrep/dataset.hpp"
#include "argrep/error.hpp"
#include "argrep/event.hpp"
#include "argrep/model.hpp"
#include "argrep/objectives.hpp"
#include "argrep/representation.hpp"
#include "argrep/synth.hpp"
#include "argrep/train.hpp"

namespace argrep {

// ---------------------------------------------------------------------------
// Ablations

enum class Ablation { None, NoneCmp, Time, Call, Process, All };

inline constexpr std::array<Ablation, 6> kAblations = {Ablation::None, Ablation::NoneCmp, Ablation::Time,
                                                       Ablation::Call, Ablation::Process, Ablation::All};

inline constexpr std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::NoneCmp: return "none_cmp";
    case Ablation::Time: return "time";
    case Ablation::Call: return "call";
    case Ablation::Process: return "process";
    case Ablation::All: return "all";
  }
  return "?";
}

inline Ablation parse_ablation(std::string_view s) {
  for (auto a : kAblations)
    if (to_string(a) == s) return a;
  throw ConfigError("unknown ablation '" + std::string(s) + "'");
}

/// The representation an ablation stands for. `base` supplies the argument
/// dimensions, timestamp origin and encoding base; only the group flags and
/// d_sysname are set here.
inline RepresentationConfig representation_for(Ablation a, RepresentationConfig base = {}) {
  base.call = a == Ablation::Call || a == Ablation::All;
  base.process = a == Ablation::Process || a == Ablation::All;
  base.time = a == Ablation::Time || a == Ablation::All;
  base.d_sysname = a == Ablation::NoneCmp ? 64 : 32;
  return base;
}

inline std::optional<Ablation> ablation_of(const RepresentationConfig& c) {
  for (auto a : kAblations) {
    auto r = representation_for(a, c);
    if (r.call == c.call && r.process == c.process && r.time == c.time && r.d_sysname == c.d_sysname) return a;
  }
  return std::nullopt;
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "lstm") return ModelKind::Lstm;
  if (s == "transformer") return ModelKind::Transformer;
  throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

inline Objective parse_objective(std::string_view s) {
  if (s == "lm") return Objective::Lm;
  if (s == "mlm") return Objective::Mlm;
  throw ConfigError("unknown objective '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Data

/// Windows of a training trace plus the valid/eval split of a test trace,
/// all coded with vocabularies built from the training trace.
struct ExperimentData {
  Vocab sys_vocab;
  Vocab proc_vocab;
  std::size_t window_len = kDefaultWindow;
  std::vector<Sequence> train;
  std::vector<Sequence> valid;
  std::vector<Sequence> eval;
};

/// `train_source` and `test_source` are callables taking an event sink; the
/// training source is replayed twice (vocabulary pass, then coding pass).
template <class TrainSource, class TestSource>
  requires std::invocable<TrainSource&, void (*)(const Event&)> && std::invocable<TestSource&, void (*)(const Event&)>
ExperimentData prepare_data(TrainSource&& train_source, TestSource&& test_source, std::size_t window_len,
                            const SplitSpec& split_spec, std::size_t min_count = 1) {
  std::map<std::string, std::size_t> sys_counts, proc_counts;
  train_source([&](const Event& e) {
    ++sys_counts[e.sysname];
    ++proc_counts[e.procname];
  });
  ExperimentData d;
  d.window_len = window_len;
  d.sys_vocab = vocab_from_counts(sys_counts, min_count);
  d.proc_vocab = vocab_from_counts(proc_counts, min_count);

  std::vector<EventRecord> records;
  train_source([&](const Event& e) { records.push_back(encode_event(e, d.sys_vocab, d.proc_vocab)); });
  d.train = window(records, window_len);
  records.clear();
  records.shrink_to_fit();
  test_source([&](const Event& e) { records.push_back(encode_event(e, d.sys_vocab, d.proc_vocab)); });
  auto parts = split(window(records, window_len), split_spec);
  d.valid = std::move(parts.valid);
  d.eval = std::move(parts.eval);
  return d;
}

inline ExperimentData prepare_data(const std::vector<Event>& train_events, const std::vector<Event>& test_events,
                                   std::size_t window_len, const SplitSpec& split_spec) {
  auto replay = [](const std::vector<Event>& ev) {
    return [&ev](auto&& sink) {
      for (const auto& e : ev) sink(e);
    };
  };
  return prepare_data(replay(train_events), replay(test_events), window_len, split_spec);
}

/// Synthetic train/test traces drawn from one workload with different seeds.
inline ExperimentData prepare_synthetic(WorkloadConfig workload, std::uint64_t train_seed, std::size_t train_events,
                                        std::uint64_t test_seed, std::size_t test_events, std::size_t window_len,
                                        const SplitSpec& split_spec) {
  WorkloadConfig tr = workload, te = std::move(workload);
  tr.seed = train_seed;
  tr.n_events = train_events;
  te.seed = test_seed;
  te.n_events = test_events;
  return prepare_data([&](auto&& sink) { generate_to(tr, [&](Event&& e) { sink(e); }); },
                      [&](auto&& sink) { generate_to(te, [&](Event&& e) { sink(e); }); }, window_len, split_spec);
}

inline nlohmann::ordered_json describe(const ExperimentData& d) {
  return {{"window_len", d.window_len},
          {"sys_vocab_size", d.sys_vocab.size()},
          {"sys_vocab_hash", detail::hex64(d.sys_vocab.hash())},
          {"proc_vocab_size", d.proc_vocab.size()},
          {"proc_vocab_hash", detail::hex64(d.proc_vocab.hash())},
          {"train_sequences", d.train.size()},
          {"valid_sequences", d.valid.size()},
          {"eval_sequences", d.eval.size()}};
}

/// Same events with the sysname ids permuted across positions.
inline Sequence shuffle_sysnames(const Sequence& seq, Rng& rng) {
  std::vector<TokenId> ids;
  for (const auto& r : seq.records) ids.push_back(r.sysname_id);
  rng.shuffle(ids);
  Sequence out = seq;
  for (std::size_t i = 0; i < ids.size(); ++i) out.records[i].sysname_id = ids[i];
  return out;
}

// ---------------------------------------------------------------------------
// Runs

using Progress = std::function<void(const std::string&)>;

struct ExperimentSpec {
  std::vector<std::pair<Objective, ModelKind>> rows = {{Objective::Lm, ModelKind::Transformer}};
  std::vector<Ablation> ablations = {kAblations.begin(), kAblations.end()};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  RepresentationConfig representation;  // argument dims, origin, base
  ModelConfig model;
  TrainConfig train;
  std::size_t eval_limit = 0;  // eval sequences scored, 0 = all

  void validate() const {
    if (seeds.empty()) throw ConfigError("seed list is empty");
    if (rows.empty()) throw ConfigError("no (objective, model) rows requested");
    if (ablations.empty()) throw ConfigError("no ablations requested");
    for (auto [obj, kind] : rows)
      if (obj == Objective::Mlm && kind != ModelKind::Transformer)
        throw UnsupportedConfig("masked language modeling requires the Transformer");
    model.validate();
    train.validate();
  }
};

inline nlohmann::ordered_json to_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},       {"max_epochs", t.max_epochs},
          {"patience", t.patience},           {"lr", t.lr},
          {"beta1", t.beta1},                 {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},           {"warmup_steps", t.warmup_steps},
          {"grad_clip", t.grad_clip},         {"seed", t.seed},
          {"max_batches_per_epoch", t.max_batches_per_epoch},
          {"eval_limit", t.eval_limit},
          {"mask", {{"p_select", t.mask.p_select}, {"frac_mask", t.mask.frac_mask},
                    {"frac_random", t.mask.frac_random}, {"frac_keep", t.mask.frac_keep}}}};
}

inline nlohmann::ordered_json to_json(const ExperimentSpec& s) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (auto [o, k] : s.rows) rows.push_back({{"objective", to_string(o)}, {"model", to_string(k)}});
  nlohmann::ordered_json abl = nlohmann::ordered_json::array();
  for (auto a : s.ablations) abl.push_back(to_string(a));
  return {{"rows", rows},
          {"ablations", abl},
          {"seeds", s.seeds},
          {"representation", to_json(s.representation)},
          {"model", to_json(s.model)},
          {"train", to_json(s.train)},
          {"eval_limit", s.eval_limit},
          {"lm_metrics", "positions 1..L-1 of each window (position 0 has no left context)"},
          {"cross_entropy", "mean negative natural-log probability per prediction"}};
}

struct RunResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double cross_entropy = 0;
  double accuracy = 0;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  std::vector<double> epoch_seconds;
};

inline nlohmann::ordered_json to_json(const RunResult& r) {
  nlohmann::ordered_json j = {{"seed", r.seed}, {"ok", r.ok}};
  if (!r.ok) j["error"] = r.error;
  else {
    j["cross_entropy"] = r.cross_entropy;
    j["accuracy"] = r.accuracy;
    j["epochs"] = r.epochs;
    j["best_epoch"] = r.best_epoch;
  }
  j["epoch_seconds"] = r.epoch_seconds;
  return j;
}

/// Trains one model and scores it on the eval split with `eval_objective`.
/// Numeric failures are captured in the result; configuration errors propagate.
inline RunResult run_one(const ExperimentData& data, const RepresentationConfig& rep, ModelConfig mcfg,
                         TrainConfig tcfg, Objective train_objective, Objective eval_objective,
                         std::uint64_t seed, std::size_t eval_limit, const Progress& progress = {},
                         std::optional<SequenceModel<float>>* keep = nullptr) {
  RunResult r;
  r.seed = seed;
  mcfg.window_len = data.window_len;
  tcfg.seed = seed;
  tcfg.mask.seed = seed;
  try {
    SequenceModel<float> model(mcfg, rep, data.sys_vocab.size(), data.proc_vocab.size(), seed);
    auto res = train(model, data.train, data.valid, train_objective, tcfg, [&](const EpochRecord& e) {
      r.epoch_seconds.push_back(e.seconds);
      if (progress) {
        std::ostringstream os;
        os << "  epoch " << e.epoch << " train " << std::fixed << std::setprecision(4) << e.train_loss
           << " valid " << e.valid_loss << " acc " << std::setprecision(2) << e.valid_accuracy << "% ("
           << std::setprecision(1) << e.seconds << " s)";
        progress(os.str());
      }
    });
    r.epochs = res.history.size();
    r.best_epoch = res.best_epoch;
    LossStats s = evaluate(model, data.eval, eval_objective, tcfg.mask, eval_limit);
    r.cross_entropy = s.cross_entropy();
    r.accuracy = s.accuracy_pct();
    r.ok = true;
    if (keep) keep->emplace(std::move(model));
  } catch (const NumericError& ex) {
    r.error = ex.what();
  }
  return r;
}

struct Cell {
  std::string label;
  std::vector<RunResult> runs;

  [[nodiscard]] bool failed() const {
    return runs.empty() || std::any_of(runs.begin(), runs.end(), [](const RunResult& r) { return !r.ok; });
  }
  [[nodiscard]] double mean_cross_entropy() const { return mean(&RunResult::cross_entropy); }
  [[nodiscard]] double mean_accuracy() const { return mean(&RunResult::accuracy); }

 private:
  double mean(double RunResult::*field) const {
    double s = 0;
    for (const auto& r : runs) s += r.*field;
    return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
  }
};

namespace detail {

inline std::string cell_text(const Cell& c, bool highlight = false) {
  if (c.failed()) return "FAILED";
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << c.mean_cross_entropy() << " / " << std::setprecision(1)
     << c.mean_accuracy() << "%" << (highlight ? " *" : "");
  return os.str();
}

inline void print_table(std::ostream& out, const std::vector<std::string>& header,
                        const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    w[c] = header[c].size();
    for (const auto& r : rows) w[c] = std::max(w[c], r[c].size());
  }
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < r.size(); ++c) out << (c ? "  " : "") << std::left << std::setw(static_cast<int>(w[c])) << r[c];
    out << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (auto x : w) total += x;
  out << std::string(total + 2 * (w.size() - 1), '-') << '\n';
  for (const auto& r : rows) line(r);
}

inline nlohmann::ordered_json cell_json(const Cell& c) {
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  for (const auto& r : c.runs) runs.push_back(to_json(r));
  nlohmann::ordered_json j = {{"failed", c.failed()}};
  if (!c.failed()) {
    j["cross_entropy"] = c.mean_cross_entropy();
    j["accuracy"] = c.mean_accuracy();
  }
  j["runs"] = std::move(runs);
  return j;
}

}  // namespace detail

/// Header shared by every report: what ran, on which data, with which seeds.
inline nlohmann::ordered_json report_header(std::string_view kind, const ExperimentSpec& spec,
                                            const ExperimentData& data) {
  nlohmann::ordered_json j = {{"report", kind}, {"config", to_json(spec)}, {"data", describe(data)}};
  j["config"]["model"]["window_len"] = data.window_len;  // runs use the data's window length
  return j;
}

struct AblationReport {
  nlohmann::ordered_json header;
  std::vector<Ablation> ablations;
  std::vector<std::pair<Objective, ModelKind>> rows;
  std::vector<std::vector<Cell>> cells;  // [row][ablation]

  [[nodiscard]] bool any_failed() const {
    for (const auto& r : cells)
      for (const auto& c : r)
        if (c.failed()) return true;
    return false;
  }

  [[nodiscard]] const Cell& at(Objective o, ModelKind k, Ablation a) const {
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (rows[i] == std::pair{o, k})
        for (std::size_t j = 0; j < ablations.size(); ++j)
          if (ablations[j] == a) return cells[i][j];
    throw std::out_of_range("no such ablation cell");
  }

  void print(std::ostream& out) const {
    out << "# cross-entropy (nats) / top-1 accuracy, mean over seeds " << header["config"]["seeds"].dump()
        << "\n";
    std::vector<std::string> head = {"objective", "model"};
    for (auto a : ablations) head.emplace_back(to_string(a));
    std::vector<std::vector<std::string>> body;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::vector<std::string> r = {std::string(to_string(rows[i].first)), std::string(to_string(rows[i].second))};
      for (const auto& c : cells[i]) r.push_back(detail::cell_text(c));
      body.push_back(std::move(r));
    }
    detail::print_table(out, head, body);
  }

  void write_jsonl(std::ostream& out) const {
    out << header.dump() << '\n';
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < ablations.size(); ++j) {
        nlohmann::ordered_json line = {{"objective", to_string(rows[i].first)},
                                       {"model", to_string(rows[i].second)},
                                       {"ablation", to_string(ablations[j])}};
        line.update(detail::cell_json(cells[i][j]));
        out << line.dump() << '\n';
      }
  }
};

inline AblationReport run_ablation(const ExperimentData& data, const ExperimentSpec& spec,
                                   const Progress& progress = {}) {
  spec.validate();
  AblationReport rep;
  rep.header = report_header("ablation", spec, data);
  rep.ablations = spec.ablations;
  rep.rows = spec.rows;
  for (auto [obj, kind] : spec.rows) {
    std::vector<Cell> row;
    for (auto a : spec.ablations) {
      Cell cell{std::string(to_string(a)), {}};
      ModelConfig m = spec.model;
      m.kind = kind;
      for (auto seed : spec.seeds) {
        if (progress)
          progress(std::string(to_string(obj)) + "/" + std::string(to_string(kind)) + " " +
                   std::string(to_string(a)) + " seed " + std::to_string(seed));
        cell.runs.push_back(run_one(data, representation_for(a, spec.representation), m, spec.train, obj, obj,
                                    seed, spec.eval_limit, progress));
      }
      row.push_back(std::move(cell));
    }
    rep.cells.push_back(std::move(row));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Position / timestamp study

struct PositionPoint {
  std::size_t d_timestamp = 0;
  std::size_t d_position = 0;
  bool operator==(const PositionPoint&) const = default;
};

inline std::vector<PositionPoint> default_position_grid() { return {{0, 0}, {8, 0}, {0, 8}, {8, 8}, {0, 16}}; }

struct PositionReport {
  nlohmann::ordered_json header;
  std::vector<PositionPoint> grid;
  std::vector<Cell> cells;

  [[nodiscard]] bool any_failed() const {
    return std::any_of(cells.begin(), cells.end(), [](const Cell& c) { return c.failed(); });
  }

  [[nodiscard]] const Cell& at(PositionPoint p) const {
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (grid[i] == p) return cells[i];
    throw std::out_of_range("no such grid point");
  }

  void print(std::ostream& out) const {
    out << "# Transformer LM without arguments; cross-entropy (nats) / top-1 accuracy\n";
    std::vector<std::vector<std::string>> body;
    for (std::size_t i = 0; i < grid.size(); ++i)
      body.push_back({std::to_string(grid[i].d_timestamp), std::to_string(grid[i].d_position),
                      detail::cell_text(cells[i])});
    detail::print_table(out, {"d_timestamp", "d_position", "result"}, body);
  }

  void write_jsonl(std::ostream& out) const {
    out << header.dump() << '\n';
    for (std::size_t i = 0; i < grid.size(); ++i) {
      nlohmann::ordered_json line = {{"d_timestamp", grid[i].d_timestamp}, {"d_position", grid[i].d_position}};
      line.update(detail::cell_json(cells[i]));
      out << line.dump() << '\n';
    }
  }
};

/// Transformer LM without call/process arguments over (d_timestamp,
/// d_position) pairs. A zero dimension omits that channel. Duplicate points
/// run once.
inline PositionReport run_position_study(const ExperimentData& data, const ExperimentSpec& spec,
                                         std::vector<PositionPoint> grid = default_position_grid(),
                                         const Progress& progress = {}) {
  spec.validate();
  if (spec.model.kind != ModelKind::Transformer)
    throw UnsupportedConfig("the position study needs the Transformer");
  std::vector<PositionPoint> unique;
  for (auto p : grid)
    if (std::find(unique.begin(), unique.end(), p) == unique.end()) unique.push_back(p);
  if (unique.empty()) throw ConfigError("empty position grid");

  PositionReport rep;
  rep.header = report_header("position", spec, data);
  for (auto p : unique) {
    RepresentationConfig r = representation_for(Ablation::None, spec.representation);
    r.time = p.d_timestamp > 0;
    if (r.time) r.d_timestamp = p.d_timestamp;
    ModelConfig m = spec.model;
    m.d_position = p.d_position;
    Cell cell{std::to_string(p.d_timestamp) + "," + std::to_string(p.d_position), {}};
    for (auto seed : spec.seeds) {
      if (progress)
        progress("d_timestamp " + std::to_string(p.d_timestamp) + " d_position " + std::to_string(p.d_position) +
                 " seed " + std::to_string(seed));
      cell.runs.push_back(run_one(data, r, m, spec.train, Objective::Lm, Objective::Lm, seed, spec.eval_limit,
                                  progress));
    }
    rep.grid.push_back(p);
    rep.cells.push_back(std::move(cell));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Mask-rate study

inline std::vector<double> default_mask_rates() { return {0.05, 0.10, 0.15, 0.20, 0.25, 0.30}; }

struct MaskStudyReport {
  nlohmann::ordered_json header;
  std::vector<double> rates;
  std::vector<Cell> cells;  // zero-shot LM metrics on the eval split

  [[nodiscard]] bool any_failed() const {
    return std::any_of(cells.begin(), cells.end(), [](const Cell& c) { return c.failed(); });
  }

  void print(std::ostream& out) const {
    out << "# MLM pretraining (Transformer, all arguments), zero-shot LM cross-entropy / top-1 accuracy\n"
        << "# * marks the default selection rate\n";
    std::vector<std::vector<std::string>> body;
    for (std::size_t i = 0; i < rates.size(); ++i) {
      std::ostringstream p;
      p << std::fixed << std::setprecision(0) << rates[i] * 100 << "%";
      body.push_back({p.str(), detail::cell_text(cells[i], std::abs(rates[i] - 0.25) < 1e-9)});
    }
    detail::print_table(out, {"selected", "lm (zero-shot)"}, body);
  }

  void write_jsonl(std::ostream& out) const {
    out << header.dump() << '\n';
    for (std::size_t i = 0; i < rates.size(); ++i) {
      nlohmann::ordered_json line = {{"p_select", rates[i]}, {"default", std::abs(rates[i] - 0.25) < 1e-9}};
      line.update(detail::cell_json(cells[i]));
      out << line.dump() << '\n';
    }
  }
};

/// For each selection rate: pretrain a Transformer with all arguments under
/// MLM, then score it as a left-to-right LM (causal attention) on the eval
/// split without further training.
inline MaskStudyReport run_mask_study(const ExperimentData& data, const ExperimentSpec& spec,
                                      std::vector<double> rates = default_mask_rates(),
                                      const Progress& progress = {}) {
  spec.validate();
  if (spec.model.kind != ModelKind::Transformer) throw UnsupportedConfig("the mask study needs the Transformer");
  if (rates.empty()) throw ConfigError("empty mask-rate list");
  MaskStudyReport rep;
  rep.header = report_header("mask", spec, data);
  rep.rates = rates;
  for (double p : rates) {
    TrainConfig t = spec.train;
    t.mask.p_select = p;
    t.validate();
    Cell cell{std::to_string(p), {}};
    for (auto seed : spec.seeds) {
      if (progress) progress("p_select " + std::to_string(p) + " seed " + std::to_string(seed));
      cell.runs.push_back(run_one(data, representation_for(Ablation::All, spec.representation), spec.model, t,
                                  Objective::Mlm, Objective::Lm, seed, spec.eval_limit, progress));
    }
    rep.cells.push_back(std::move(cell));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Epoch timing

struct TimingStats {
  std::vector<double> seconds;
  double mean = 0;
  double std = 0;  // sample standard deviation
};

/// Mean and standard deviation of the epoch times, excluding the first
/// (warm-up) epoch.
inline TimingStats timing_stats(std::vector<double> seconds) {
  if (seconds.size() < 5) throw ConfigError("epoch timing needs at least 5 epochs");
  TimingStats t;
  t.seconds = std::move(seconds);
  const auto n = static_cast<double>(t.seconds.size() - 1);
  for (std::size_t i = 1; i < t.seconds.size(); ++i) t.mean += t.seconds[i];
  t.mean /= n;
  double ss = 0;
  for (std::size_t i = 1; i < t.seconds.size(); ++i) ss += (t.seconds[i] - t.mean) * (t.seconds[i] - t.mean);
  t.std = std::sqrt(ss / (n - 1));
  return t;
}

struct OverheadReport {
  nlohmann::ordered_json header;
  TimingStats none;
  TimingStats all;

  [[nodiscard]] double ratio() const { return all.mean / none.mean; }

  void print(std::ostream& out) const {
    out << "# mean epoch time (± std) over epochs 2.." << none.seconds.size() << "\n";
    auto fmt = [](const TimingStats& t) {
      std::ostringstream os;
      os << std::fixed << std::setprecision(1) << t.mean * 1000 << " ± " << t.std * 1000 << " ms";
      return os.str();
    };
    std::ostringstream r;
    r << std::fixed << std::setprecision(3) << ratio() << "x";
    detail::print_table(out, {"none", "all", "all/none"}, {{fmt(none), fmt(all), r.str()}});
  }

  void write_jsonl(std::ostream& out) const {
    out << header.dump() << '\n';
    for (auto [name, t] : {std::pair{"none", &none}, std::pair{"all", &all}})
      out << nlohmann::ordered_json{{"ablation", name}, {"mean_s", t->mean}, {"std_s", t->std},
                                    {"epoch_seconds", t->seconds}}
                 .dump()
          << '\n';
    out << nlohmann::ordered_json{{"ratio_all_over_none", ratio()}}.dump() << '\n';
  }
};

/// Trains `none` and `all` for exactly `epochs` epochs each with the same
/// data, model, batch size and seed, and compares training-pass epoch times.
inline OverheadReport time_overhead(const ExperimentData& data, const ExperimentSpec& spec, std::size_t epochs,
                                    const Progress& progress = {}) {
  spec.validate();
  if (epochs < 5) throw ConfigError("time-overhead needs at least 5 epochs");
  OverheadReport rep;
  rep.header = report_header("time-overhead", spec, data);
  rep.header["epochs"] = epochs;
  TrainConfig t = spec.train;
  t.max_epochs = epochs;
  t.patience = epochs;
  t.eval_limit = 1;
  const auto seed = spec.seeds.front();
  const auto [obj, kind] = spec.rows.front();
  ModelConfig m = spec.model;
  m.kind = kind;
  for (auto a : {Ablation::None, Ablation::All}) {
    if (progress) progress(std::string("timing ") + std::string(to_string(a)));
    RunResult r = run_one(data, representation_for(a, spec.representation), m, t, obj, obj, seed, 1, progress);
    if (!r.ok) throw NumericError(r.error);
    (a == Ablation::None ? rep.none : rep.all) = timing_stats(r.epoch_seconds);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Anomaly scores

/// Linear-interpolation quantile of sorted data, q in [0,1].
inline double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty data");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return quantile(v, 0.5);
}

struct ScoreReport {
  std::vector<std::pair<std::size_t, double>> scores;  // (sequence index, log-likelihood)

  /// Tab-separated "index score" lines in index order, then a summary line
  /// with min/q25/median/q75/max. Nothing at all for an empty trace.
  void write(std::ostream& out) const {
    if (scores.empty()) return;
    auto sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    out << std::setprecision(10);
    for (const auto& [i, s] : sorted) out << i << '\t' << s << '\n';
    std::vector<double> v;
    for (const auto& [i, s] : scores) v.push_back(s);
    std::sort(v.begin(), v.end());
    out << "# n=" << v.size() << " min=" << v.front() << " q25=" << quantile(v, 0.25)
        << " median=" << quantile(v, 0.5) << " q75=" << quantile(v, 0.75) << " max=" << v.back() << '\n';
  }
};

template <class T>
ScoreReport score_sequences(SequenceModel<T>& model, const std::vector<Sequence>& seqs) {
  ScoreReport r;
  for (std::size_t i = 0; i < seqs.size(); ++i) r.scores.emplace_back(i, score(model, seqs[i]));
  return r;
}

}  // namespace argrep
