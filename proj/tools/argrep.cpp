// argrep: trace tooling, training and experiment driver.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.
// ARGREP_VERBOSITY (0 quiet, 1 progress [default], 2 debug) controls stderr.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "argrep/babeltrace.hpp"
#include "argrep/checkpoint.hpp"
#include "argrep/config.hpp"
#include "argrep/dataset.hpp"
#include "argrep/experiment.hpp"
#include "argrep/jsonl.hpp"
#include "argrep/synth.hpp"

namespace fs = std::filesystem;
using namespace argrep;

namespace {

int g_verbosity = 1;

void log(int level, const std::string& msg) {
  if (level <= g_verbosity) std::cerr << msg << '\n';
}

Progress progress_log() {
  return [](const std::string& m) { log(1, m); };
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  return out;
}

std::vector<std::string> split_list(std::string s) {
  for (char& c : s)
    if (c == ',') c = ' ';
  return split_words(s);
}

// ---------------------------------------------------------------------------
// Configuration: file values, then --set overrides, then subcommand flags.

struct Settings {
  std::string config_path;
  std::vector<std::string> overrides;
  KeyValueConfig kv;

  void load() {
    if (!config_path.empty()) {
      auto in = open_in(config_path);
      kv = KeyValueConfig::parse(in);
    }
    for (const auto& o : overrides) {
      const auto eq = o.find('='), dot = o.find('.');
      if (eq == std::string::npos || dot == std::string::npos || dot > eq)
        throw ConfigError("--set expects section.key=value, got '" + o + "'");
      kv.set(o.substr(0, dot), o.substr(dot + 1, eq - dot - 1), o.substr(eq + 1));
    }
    log(2, "resolved config:\n" + kv.dump());
  }

  template <class T>
  void flag(const std::string& sec, const std::string& key, const std::optional<T>& v) {
    if (!v) return;
    std::ostringstream os;
    os << *v;
    kv.set(sec, key, os.str());
  }
};

nlohmann::ordered_json section_json(const KeyValueConfig& kv, std::string_view name) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  if (const auto* s = kv.section(name))
    for (const auto& [k, v] : *s) j[k] = v;
  return j;
}

WorkloadConfig workload_of(const KeyValueConfig& kv) {
  bool has_process = false;
  for (const auto& [name, s] : kv.sections())
    if (name.starts_with("process ")) has_process = true;
  KeyValueConfig w = has_process ? KeyValueConfig{} : workload_to_config(default_workload());
  for (const auto& [name, s] : kv.sections())
    if (name == "workload" || name.starts_with("process "))
      for (const auto& [k, v] : s) w.set(name, k, v);
  return workload_from_config(w);
}

ExperimentSpec spec_of(const KeyValueConfig& kv) {
  ExperimentSpec s;
  auto& r = s.representation;
  r.d_procname = kv.get_or("representation", "d_procname", r.d_procname);
  r.d_pid = kv.get_or("representation", "d_pid", r.d_pid);
  r.d_tid = kv.get_or("representation", "d_tid", r.d_tid);
  r.d_timestamp = kv.get_or("representation", "d_timestamp", r.d_timestamp);
  r.encoding_base = kv.get_or("representation", "encoding_base", r.encoding_base);
  const auto origin = kv.get_or<std::string>("representation", "timestamp_origin", "sequence");
  if (origin == "sequence")
    r.timestamp_origin = TimestampOrigin::SequenceStart;
  else if (origin == "trace")
    r.timestamp_origin = TimestampOrigin::TraceStart;
  else
    throw ConfigError("[representation] timestamp_origin must be 'sequence' or 'trace'");

  auto& m = s.model;
  m.kind = parse_model_kind(kv.get_or<std::string>("model", "kind", "transformer"));
  m.lstm_layers = kv.get_or("model", "lstm_layers", m.lstm_layers);
  m.lstm_hidden = kv.get_or("model", "lstm_hidden", m.lstm_hidden);
  m.tf_layers = kv.get_or("model", "tf_layers", m.tf_layers);
  m.tf_heads = kv.get_or("model", "tf_heads", m.tf_heads);
  m.tf_ff = kv.get_or("model", "tf_ff", m.tf_ff);
  m.d_position = kv.get_or("model", "d_position", m.d_position);
  m.dropout = kv.get_or("model", "dropout", m.dropout);

  auto& t = s.train;
  t.batch_size = kv.get_or("train", "batch_size", t.batch_size);
  t.max_epochs = kv.get_or("train", "max_epochs", t.max_epochs);
  t.patience = kv.get_or("train", "patience", t.patience);
  t.lr = kv.get_or("train", "lr", t.lr);
  t.beta1 = kv.get_or("train", "beta1", t.beta1);
  t.beta2 = kv.get_or("train", "beta2", t.beta2);
  t.adam_eps = kv.get_or("train", "adam_eps", t.adam_eps);
  t.warmup_steps = kv.get_or("train", "warmup_steps", t.warmup_steps);
  t.grad_clip = kv.get_or("train", "grad_clip", t.grad_clip);
  t.max_batches_per_epoch = kv.get_or("train", "max_batches_per_epoch", t.max_batches_per_epoch);
  t.eval_limit = kv.get_or("train", "eval_limit", t.eval_limit);
  t.mask.p_select = kv.get_or("train", "p_select", t.mask.p_select);
  t.mask.frac_mask = kv.get_or("train", "frac_mask", t.mask.frac_mask);
  t.mask.frac_random = kv.get_or("train", "frac_random", t.mask.frac_random);
  t.mask.frac_keep = kv.get_or("train", "frac_keep", t.mask.frac_keep);

  if (auto v = kv.get("experiment", "seeds")) {
    s.seeds.clear();
    for (const auto& w : split_list(*v)) s.seeds.push_back(KeyValueConfig::convert<std::uint64_t>(w, "experiment", "seeds"));
  }
  if (auto v = kv.get("experiment", "ablations")) {
    s.ablations.clear();
    for (const auto& w : split_list(*v)) s.ablations.push_back(parse_ablation(w));
  }
  if (auto v = kv.get("experiment", "rows")) {
    s.rows.clear();
    for (const auto& w : split_list(*v)) {
      const auto colon = w.find(':');
      if (colon == std::string::npos) throw ConfigError("[experiment] rows entries look like lm:transformer");
      s.rows.emplace_back(parse_objective(w.substr(0, colon)), parse_model_kind(w.substr(colon + 1)));
    }
  }
  s.eval_limit = kv.get_or("experiment", "eval_limit", s.eval_limit);
  r.validate();
  s.validate();
  return s;
}

SplitSpec split_of(const KeyValueConfig& kv) {
  return {kv.get_or("data", "valid_fraction", 0.25), kv.get_or<std::uint64_t>("data", "split_seed", 1)};
}

WindowedDataset load_windows(const std::string& path) {
  auto in = open_in(path);
  return read_windows(in);
}

/// [data] source = files (train/test windows files) or synthetic.
ExperimentData load_data(const KeyValueConfig& kv) {
  const auto source = kv.get_or<std::string>("data", "source", "files");
  const auto sp = split_of(kv);
  if (source == "synthetic") {
    const auto len = kv.get_or<std::size_t>("data", "window_len", kDefaultWindow);
    log(1, "generating synthetic train/test traces");
    return prepare_synthetic(workload_of(kv), kv.get_or<std::uint64_t>("data", "train_seed", 11),
                             kv.get_or<std::size_t>("data", "train_events", 14000 * len),
                             kv.get_or<std::uint64_t>("data", "test_seed", 12),
                             kv.get_or<std::size_t>("data", "test_events", 6000 * len), len, sp);
  }
  if (source != "files") throw ConfigError("[data] source must be 'files' or 'synthetic'");
  const auto train_path = kv.get("data", "train"), test_path = kv.get("data", "test");
  if (!train_path || !test_path) throw ConfigError("[data] train and test windows files are required");
  auto tr = load_windows(*train_path);
  auto te = load_windows(*test_path);
  require_vocab(tr.sys_vocab, te.sys_vocab, "sysname");
  require_vocab(tr.proc_vocab, te.proc_vocab, "procname");
  if (tr.window_len != te.window_len) throw ConfigError("train and test windows differ in length");
  ExperimentData d;
  d.sys_vocab = std::move(tr.sys_vocab);
  d.proc_vocab = std::move(tr.proc_vocab);
  d.window_len = tr.window_len;
  d.train = std::move(tr.sequences);
  auto parts = split(te.sequences, sp);
  d.valid = std::move(parts.valid);
  d.eval = std::move(parts.eval);
  return d;
}

/// Babeltrace text or event JSONL, detected from the first non-empty line
/// unless `format` names one.
std::vector<Event> read_events(const std::string& path, const std::string& format) {
  auto in = open_in(path);
  std::string fmt = format;
  if (fmt == "auto") {
    std::string line;
    while (std::getline(in, line) && line.find_first_not_of(" \t\r") == std::string::npos) {
    }
    fmt = line.starts_with("{") ? "jsonl" : "babeltrace";
    in.clear();
    in.seekg(0);
  }
  if (fmt == "jsonl") return read_jsonl(in);
  if (fmt == "babeltrace") return read_babeltrace(in);
  throw ConfigError("unknown trace format '" + format + "'");
}

void emit_report(const auto& report, const std::string& out_dir, const std::string& name,
                 const KeyValueConfig& kv) {
  report.print(std::cout);
  if (out_dir.empty()) return;
  fs::create_directories(out_dir);
  auto txt = open_out((fs::path(out_dir) / (name + ".txt")).string());
  report.print(txt);
  auto jl = open_out((fs::path(out_dir) / (name + ".jsonl")).string());
  report.write_jsonl(jl);
  auto cfg = open_out((fs::path(out_dir) / (name + ".ini")).string());
  cfg << kv.dump();
  log(1, "wrote " + (fs::path(out_dir) / name).string() + ".{txt,jsonl,ini}");
}

void add_data_header(auto& report, const KeyValueConfig& kv) { report.header["data_source"] = section_json(kv, "data"); }

}  // namespace

int main(int argc, char** argv) {
  if (const char* v = std::getenv("ARGREP_VERBOSITY")) g_verbosity = std::atoi(v);

  CLI::App app{"System call event representations: trace tooling, sequence models and experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Settings settings;
  app.add_option("-c,--config", settings.config_path, "sectioned key/value config file");
  app.add_option("--set", settings.overrides, "override a config value: section.key=value (repeatable)")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic syscall trace");
  std::optional<std::uint64_t> gen_seed;
  std::optional<std::size_t> gen_events;
  std::string gen_out, gen_text;
  bool gen_stats = false;
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--events", gen_events, "number of events");
  gen->add_option("--out", gen_out, "JSONL output");
  gen->add_option("--text", gen_text, "Babeltrace text output");
  gen->add_flag("--stats", gen_stats, "print sysname/procname distributions");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "parse a trace into event JSONL");
  std::string ingest_in, ingest_out, ingest_format = "auto";
  ingest->add_option("--in", ingest_in, "input trace")->required();
  ingest->add_option("--format", ingest_format, "babeltrace|jsonl|auto")
      ->check(CLI::IsMember({"auto", "babeltrace", "jsonl"}));
  ingest->add_option("--out", ingest_out, "event JSONL output")->required();

  // window
  auto* win = app.add_subcommand("window", "cut an event trace into fixed-length coded windows");
  std::string win_in, win_out, win_vocab, win_format = "auto";
  std::optional<std::size_t> win_len, win_min_count;
  win->add_option("--in", win_in, "event trace (JSONL or Babeltrace text)")->required();
  win->add_option("--format", win_format, "babeltrace|jsonl|auto")
      ->check(CLI::IsMember({"auto", "babeltrace", "jsonl"}));
  win->add_option("--out", win_out, "windows file")->required();
  win->add_option("--len", win_len, "window length (default 256)");
  win->add_option("--vocab-from", win_vocab, "reuse the vocabularies of an existing windows file");
  win->add_option("--min-count", win_min_count, "minimum token count for the vocabulary");

  // shared experiment flags
  std::optional<std::string> train_path, test_path, seeds, ablations, rows;
  std::string out_dir;
  auto data_flags = [&](CLI::App* sc) {
    sc->add_option("--train", train_path, "training windows file ([data] train)");
    sc->add_option("--test", test_path, "test windows file ([data] test), split into valid/eval");
  };
  auto experiment_flags = [&](CLI::App* sc) {
    data_flags(sc);
    sc->add_option("--seeds", seeds, "comma-separated seeds ([experiment] seeds)");
    sc->add_option("--out-dir", out_dir, "directory for .txt/.jsonl reports");
  };

  // train
  auto* trn = app.add_subcommand("train", "train one model and save a checkpoint");
  data_flags(trn);
  std::string trn_out, trn_objective = "lm", trn_ablation = "all";
  std::optional<std::string> trn_model;
  std::uint64_t trn_seed = 1;
  trn->add_option("--out", trn_out, "checkpoint output")->required();
  trn->add_option("--objective", trn_objective, "lm|mlm");
  trn->add_option("--model", trn_model, "lstm|transformer ([model] kind)");
  trn->add_option("--ablation", trn_ablation, "none|none_cmp|time|call|process|all");
  trn->add_option("--seed", trn_seed, "initialization/shuffle seed");

  // eval
  auto* ev = app.add_subcommand("eval", "cross-entropy and top-1 accuracy of a checkpoint");
  std::string ev_ckpt, ev_data, ev_objective = "lm";
  bool ev_all = false;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "windows file")->required();
  ev->add_option("--objective", ev_objective, "lm|mlm");
  ev->add_flag("--all", ev_all, "score every window instead of the eval part of the valid/eval split");

  // score
  auto* sc = app.add_subcommand("score", "per-sequence chain-rule log-likelihood");
  std::string sc_ckpt, sc_in, sc_out, sc_format = "auto";
  sc->add_option("--checkpoint", sc_ckpt, "checkpoint file")->required();
  sc->add_option("--in", sc_in, "windows file, event JSONL or Babeltrace text")->required();
  sc->add_option("--format", sc_format, "auto|windows|jsonl|babeltrace")
      ->check(CLI::IsMember({"auto", "windows", "jsonl", "babeltrace"}));
  sc->add_option("--out", sc_out, "output file (default stdout)");

  // experiments
  auto* abl = app.add_subcommand("ablate", "argument-group ablation grid");
  experiment_flags(abl);
  abl->add_option("--ablations", ablations, "comma-separated ablations ([experiment] ablations)");
  abl->add_option("--rows", rows, "comma-separated objective:model rows ([experiment] rows)");

  auto* pos = app.add_subcommand("study-position", "timestamp / position encoding dimension study");
  experiment_flags(pos);
  std::string pos_grid;
  pos->add_option("--grid", pos_grid, "comma-separated d_timestamp:d_position pairs");

  auto* msk = app.add_subcommand("study-mask", "MLM selection-rate study with zero-shot LM evaluation");
  experiment_flags(msk);
  std::string msk_rates;
  msk->add_option("--rates", msk_rates, "comma-separated selection rates");

  auto* ovh = app.add_subcommand("time-overhead", "epoch time of 'all' against 'none'");
  experiment_flags(ovh);
  std::size_t ovh_epochs = 5;
  ovh->add_option("--epochs", ovh_epochs, "epochs per model (>= 5)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    settings.load();
    auto& kv = settings.kv;
    if (train_path) kv.set("data", "train", *train_path);
    if (test_path) kv.set("data", "test", *test_path);
    if (seeds) kv.set("experiment", "seeds", *seeds);
    if (ablations) kv.set("experiment", "ablations", *ablations);
    if (rows) kv.set("experiment", "rows", *rows);

    if (*gen) {
      settings.flag<std::uint64_t>("workload", "seed", gen_seed);
      settings.flag<std::size_t>("workload", "events", gen_events);
      const auto w = workload_of(kv);
      if (gen_out.empty() && gen_text.empty() && !gen_stats)
        throw ConfigError("gen needs --out, --text or --stats");
      auto events = generate(w);
      if (!gen_out.empty()) {
        auto out = open_out(gen_out);
        write_jsonl(out, events);
      }
      if (!gen_text.empty()) {
        auto out = open_out(gen_text);
        write_babeltrace(out, events);
      }
      if (gen_stats) stats(events).print(std::cout);
      log(1, "generated " + std::to_string(events.size()) + " events (seed " + std::to_string(w.seed) + ")");
      return 0;
    }

    if (*ingest) {
      auto events = read_events(ingest_in, ingest_format);
      auto out = open_out(ingest_out);
      write_jsonl(out, events);
      log(1, "ingested " + std::to_string(events.size()) + " events");
      return 0;
    }

    if (*win) {
      settings.flag<std::size_t>("data", "window_len", win_len);
      settings.flag<std::size_t>("data", "min_count", win_min_count);
      const auto events = read_events(win_in, win_format);
      WindowedDataset ds;
      ds.window_len = kv.get_or<std::size_t>("data", "window_len", kDefaultWindow);
      if (!win_vocab.empty()) {
        auto ref = load_windows(win_vocab);
        ds.sys_vocab = std::move(ref.sys_vocab);
        ds.proc_vocab = std::move(ref.proc_vocab);
      } else {
        std::tie(ds.sys_vocab, ds.proc_vocab) =
            build_vocabs(events, kv.get_or<std::size_t>("data", "min_count", 1));
      }
      ds.sequences = window(encode_events(events, ds.sys_vocab, ds.proc_vocab), ds.window_len);
      auto out = open_out(win_out);
      write_windows(out, ds);
      log(1, std::to_string(ds.sequences.size()) + " windows of " + std::to_string(ds.window_len) + " events, " +
                 std::to_string(events.size() - ds.sequences.size() * ds.window_len) + " trailing events dropped");
      return 0;
    }

    if (*trn) {
      if (trn_model) kv.set("model", "kind", *trn_model);
      const auto spec = spec_of(kv);
      const auto objective = parse_objective(trn_objective);
      const auto data = load_data(kv);
      log(1, describe(data).dump());
      std::optional<SequenceModel<float>> model;
      const auto rep = representation_for(parse_ablation(trn_ablation), spec.representation);
      RunResult r = run_one(data, rep, spec.model, spec.train, objective, objective, trn_seed, spec.eval_limit,
                            progress_log(), &model);
      if (!r.ok) {
        std::cerr << "error: " << r.error << '\n';
        return 2;
      }
      auto out = open_out(trn_out);
      save_checkpoint(out, *model, data.sys_vocab, data.proc_vocab);
      nlohmann::ordered_json j = to_json(r);
      j["objective"] = to_string(objective);
      j["ablation"] = trn_ablation;
      std::cout << j.dump() << '\n';
      return 0;
    }

    if (*ev) {
      auto in = open_in(ev_ckpt);
      Checkpoint info;
      auto model = load_checkpoint<float>(in, &info);
      auto ds = load_windows(ev_data);
      require_vocab(info.sys_vocab, ds.sys_vocab, "sysname");
      require_vocab(info.proc_vocab, ds.proc_vocab, "procname");
      std::vector<Sequence> seqs = ev_all ? std::move(ds.sequences) : split(ds.sequences, split_of(kv)).eval;
      const auto objective = parse_objective(ev_objective);
      MaskPlan plan = spec_of(kv).train.mask;
      plan.seed = info.seed;
      LossStats s = evaluate(model, seqs, objective, plan);
      std::cout << nlohmann::ordered_json{{"objective", to_string(objective)},
                                          {"sequences", seqs.size()},
                                          {"predictions", s.count},
                                          {"cross_entropy", s.cross_entropy()},
                                          {"accuracy", s.accuracy_pct()}}
                       .dump()
                << '\n';
      return 0;
    }

    if (*sc) {
      auto in = open_in(sc_ckpt);
      Checkpoint info;
      auto model = load_checkpoint<float>(in, &info);
      std::vector<Sequence> seqs;
      std::string fmt = sc_format;
      if (fmt == "auto") {
        auto probe = open_in(sc_in);
        std::string line;
        while (std::getline(probe, line) && line.empty()) {
        }
        fmt = is_windows_header(line) ? "windows" : "auto";
      }
      if (fmt == "windows") {
        auto ds = load_windows(sc_in);
        require_vocab(info.sys_vocab, ds.sys_vocab, "sysname");
        require_vocab(info.proc_vocab, ds.proc_vocab, "procname");
        if (ds.window_len != info.model.window_len) throw ConfigError("window length differs from the checkpoint");
        seqs = std::move(ds.sequences);
      } else {
        auto events = read_events(sc_in, fmt);
        seqs = window(encode_events(events, info.sys_vocab, info.proc_vocab), info.model.window_len);
      }
      ScoreReport report = score_sequences(model, seqs);
      if (sc_out.empty()) {
        report.write(std::cout);
      } else {
        auto out = open_out(sc_out);
        report.write(out);
      }
      return 0;
    }

    if (*abl) {
      const auto spec = spec_of(kv);
      const auto data = load_data(kv);
      auto report = run_ablation(data, spec, progress_log());
      add_data_header(report, kv);
      emit_report(report, out_dir, "ablation", kv);
      return report.any_failed() ? 2 : 0;
    }

    if (*pos) {
      const auto spec = spec_of(kv);
      std::vector<PositionPoint> grid = default_position_grid();
      if (!pos_grid.empty()) {
        grid.clear();
        for (const auto& w : split_list(pos_grid)) {
          const auto colon = w.find(':');
          if (colon == std::string::npos) throw ConfigError("--grid entries look like 8:0");
          grid.push_back({KeyValueConfig::convert<std::size_t>(w.substr(0, colon), "grid", "d_timestamp"),
                          KeyValueConfig::convert<std::size_t>(w.substr(colon + 1), "grid", "d_position")});
        }
      }
      const auto data = load_data(kv);
      auto report = run_position_study(data, spec, grid, progress_log());
      add_data_header(report, kv);
      emit_report(report, out_dir, "position", kv);
      return report.any_failed() ? 2 : 0;
    }

    if (*msk) {
      const auto spec = spec_of(kv);
      std::vector<double> rates = default_mask_rates();
      if (!msk_rates.empty()) {
        rates.clear();
        for (const auto& w : split_list(msk_rates)) rates.push_back(KeyValueConfig::convert<double>(w, "rates", "p"));
      }
      const auto data = load_data(kv);
      auto report = run_mask_study(data, spec, rates, progress_log());
      add_data_header(report, kv);
      emit_report(report, out_dir, "mask", kv);
      return report.any_failed() ? 2 : 0;
    }

    if (*ovh) {
      const auto spec = spec_of(kv);
      const auto data = load_data(kv);
      auto report = time_overhead(data, spec, ovh_epochs, progress_log());
      add_data_header(report, kv);
      emit_report(report, out_dir, "overhead", kv);
      return 0;
    }
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << '\n';
    return 1;
  } catch (const argrep::ParseError& ex) {
    std::cerr << "parse error: " << ex.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 2;
  }
  return 0;
}
