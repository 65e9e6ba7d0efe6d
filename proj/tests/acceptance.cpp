// Acceptance suite. Usage: acceptance [N ...]   (no arguments runs 1..10)
// Prints one "criterion N: PASS|FAIL <detail>" line per criterion and exits
// nonzero if any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "argrep/babeltrace.hpp"
#include "argrep/experiment.hpp"
#include "argrep/gradcheck.hpp"
#include "argrep/jsonl.hpp"
#include "random_events.hpp"

using namespace argrep;

namespace {

// Pinned tolerances and thresholds.
constexpr double kEncodingTol = 1e-9;
constexpr double kGradTol = 1e-4;
constexpr double kCausalTol = 1e-9;
constexpr double kAccuracyGapPts = 3.0;
constexpr double kOverheadBound = 1.25;
constexpr std::size_t kRoundTripEvents = 10000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

void log(const std::string& msg) { std::cerr << "  " << msg << '\n'; }

// Direct evaluation of the sin/cos definition.
double pe(double x, std::size_t j, std::size_t d) {
  const double angle = x / std::pow(10000.0, static_cast<double>(2 * (j / 2)) / static_cast<double>(d));
  return j % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

Outcome criterion1() {
  bool ok = true;
  for (std::size_t d : {2u, 4u, 8u, 16u, 32u}) {
    auto v = SinusoidalEncoder(d).encode(0.0);
    for (std::size_t j = 0; j < d; ++j) ok = ok && v[j] == (j % 2 ? 1.0 : 0.0);
  }
  const bool zero_ok = ok;
  double err80 = 0;
  auto v = SinusoidalEncoder(4).encode(80.0);
  for (std::size_t j = 0; j < 4; ++j) err80 = std::max(err80, std::abs(v[j] - pe(80.0, j, 4)));

  Rng rng(2024);
  SinusoidalEncoder enc(16);
  double rot = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double x = rng.uniform(0, 1e4), k = rng.uniform(0, 1e3);
    auto a = enc.encode(x), b = enc.encode(x + k);
    for (std::size_t i = 0; i < 8; ++i) {
      const double th = k * enc.rate(i), s = a[2 * i], c = a[2 * i + 1];
      rot = std::max(rot, std::abs(b[2 * i] - (s * std::cos(th) + c * std::sin(th))));
      rot = std::max(rot, std::abs(b[2 * i + 1] - (c * std::cos(th) - s * std::sin(th))));
    }
  }
  return {zero_ok && err80 <= kEncodingTol && rot <= kEncodingTol,
          "encode(0) alternating=" + std::string(zero_ok ? "yes" : "no") + " encode(80,4) max err=" + fmt(err80) +
              " rotation max err=" + fmt(rot) + " (tol " + fmt(kEncodingTol) + ")"};
}

Outcome criterion2() {
  EmbeddingTable<double> w(4, 5);
  w.value << 5, 6, 2, 1, 4, 0, 1, 7, 3, 1, 4, 8, 1, 6, 9, 3, 1, 2, 8, 2;
  Eigen::RowVectorXd one_hot(4);
  one_hot << 0, 0, 1, 0;
  const Eigen::RowVectorXd expect = (Eigen::RowVectorXd(5) << 4, 8, 1, 6, 9).finished();
  const bool ok = w.embed(2) == expect && one_hot * w.value == expect;
  std::ostringstream os;
  os << "lookup(2) = [" << w.embed(2) << "]";
  return {ok, os.str()};
}

Sequence random_sequence(Rng& rng, std::size_t len, std::size_t sys_v, std::size_t proc_v) {
  Sequence s;
  std::int64_t ts = 0;
  for (std::size_t i = 0; i < len; ++i) {
    EventRecord r;
    r.sysname_id = static_cast<TokenId>(Vocab::kReserved + rng.below(sys_v - Vocab::kReserved));
    r.procname_id = static_cast<TokenId>(Vocab::kReserved + rng.below(proc_v - Vocab::kReserved));
    r.entry = rng.bernoulli(0.5);
    r.ret_class = r.entry ? RetClass::Unavailable : (rng.bernoulli(0.8) ? RetClass::Success : RetClass::Failure);
    r.pid = 100 + static_cast<std::int64_t>(rng.below(5));
    r.tid = r.pid + static_cast<std::int64_t>(rng.below(3));
    ts += 1 + static_cast<std::int64_t>(rng.below(30));
    r.timestamp_us = ts;
    s.records.push_back(r);
  }
  return s;
}

RepresentationConfig tiny_representation() {
  RepresentationConfig c = representation_for(Ablation::All);
  c.d_sysname = 6;
  c.d_procname = 3;
  c.d_pid = 2;
  c.d_tid = 2;
  c.d_timestamp = 4;
  return c;
}

Outcome criterion3() {
  Rng rng(7);
  const std::size_t len = 6;
  auto seq = random_sequence(rng, len, 10, 6);
  ModelConfig lstm;
  lstm.kind = ModelKind::Lstm;
  lstm.lstm_layers = 2;
  lstm.lstm_hidden = 4;
  lstm.window_len = len;
  ModelConfig tf;
  tf.tf_layers = 2;
  tf.tf_heads = 2;
  tf.tf_ff = 8;
  tf.d_position = 4;
  tf.window_len = len;

  SequenceModel<double> m1(lstm, tiny_representation(), 10, 6, 3);
  auto r1 = grad_check(m1, seq, Objective::Lm);
  SequenceModel<double> m2(tf, tiny_representation(), 10, 6, 3);
  MaskPlan plan;
  plan.p_select = 0.5;
  auto r2 = grad_check(m2, seq, Objective::Mlm, plan, 5);
  const bool covered = r1.tensors == m1.parameters().size() && r2.tensors == m2.parameters().size();
  return {covered && r1.max_rel_error < kGradTol && r2.max_rel_error < kGradTol,
          "lstm-lm " + fmt(r1.max_rel_error) + " (" + std::to_string(r1.tensors) + " tensors, worst " +
              r1.worst_tensor + "), transformer-mlm " + fmt(r2.max_rel_error) + " (" + std::to_string(r2.tensors) +
              " tensors, worst " + r2.worst_tensor + "), tol " + fmt(kGradTol)};
}

Outcome criterion4() {
  Rng rng(11);
  double worst = 0;
  for (auto kind : {ModelKind::Lstm, ModelKind::Transformer}) {
    ModelConfig mc;
    mc.kind = kind;
    mc.tf_layers = 2;
    mc.window_len = 256;
    SequenceModel<double> m(mc, representation_for(Ablation::All), 30, 8, 5);
    auto x = m.input(random_sequence(rng, 256, 30, 8));
    Matrix<double> base = m.forward(x, true);
    for (Eigen::Index t : {0, 63, 128, 254}) {
      Matrix<double> y = x;
      for (Eigen::Index r = t + 1; r < y.rows(); ++r)
        for (Eigen::Index c = 0; c < y.cols(); ++c) y(r, c) += rng.uniform(-3, 3);
      Matrix<double> out = m.forward(y, true);
      worst = std::max(worst, (base.topRows(t + 1) - out.topRows(t + 1)).cwiseAbs().maxCoeff());
    }
  }
  auto seq = random_sequence(rng, 256, 30, 8);
  MaskPlan plan;
  plan.seed = 99;
  auto a = mlm_mask(seq, plan, 30), b = mlm_mask(seq, plan, 30);
  const bool counts = a.positions.size() == 64 && a.n_masked == 51 && a.n_random == 6 && a.n_kept == 7;
  const bool same = a.positions == b.positions && a.sequence == b.sequence && a.masked == b.masked;
  return {worst <= kCausalTol && counts && same,
          "max future-perturbation change " + fmt(worst) + " (tol " + fmt(kCausalTol) + "), mask counts " +
              std::to_string(a.positions.size()) + "=" + std::to_string(a.n_masked) + "/" +
              std::to_string(a.n_random) + "/" + std::to_string(a.n_kept) +
              (same ? ", seed-deterministic" : ", NOT deterministic")};
}

// Frozen synthetic dataset shared by criteria 5 and 6: ~20k windows of 256.
ExperimentData frozen_dataset() {
  const auto t0 = std::chrono::steady_clock::now();
  auto d = prepare_synthetic(default_workload(), 11, 14000 * 256, 12, 6000 * 256, 256, {0.25, 5});
  log("dataset: " + describe(d).dump() + " (" +
      fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 3) + " s)");
  return d;
}

// Reduced scale: 2 layers, 40 batches of 32 per epoch, 5 epochs.
ExperimentSpec reduced_spec() {
  ExperimentSpec s;
  s.seeds = {1, 2, 3};
  s.model.tf_layers = 2;
  s.train.max_batches_per_epoch = 40;
  s.train.max_epochs = 5;
  s.train.patience = 5;
  s.train.eval_limit = 100;
  s.eval_limit = 500;
  return s;
}

Progress progress() {
  return [](const std::string& m) { log(m); };
}

Outcome criterion5() {
  const auto data = frozen_dataset();
  auto spec = reduced_spec();
  spec.ablations = {Ablation::None, Ablation::NoneCmp, Ablation::All};
  auto rep = run_ablation(data, spec, progress());
  rep.print(std::cerr);
  if (rep.any_failed()) return {false, "a training run failed"};
  const double none = rep.at(Objective::Lm, ModelKind::Transformer, Ablation::None).mean_accuracy();
  const double cmp = rep.at(Objective::Lm, ModelKind::Transformer, Ablation::NoneCmp).mean_accuracy();
  const double all = rep.at(Objective::Lm, ModelKind::Transformer, Ablation::All).mean_accuracy();
  return {all - none >= kAccuracyGapPts && all > cmp,
          "top-1 accuracy over 3 seeds: none " + fmt(none) + "%, none_cmp " + fmt(cmp) + "%, all " + fmt(all) +
              "% (gap " + fmt(all - none, 3) + " pts, need >= " + fmt(kAccuracyGapPts) + ")"};
}

Outcome criterion6() {
  const auto data = frozen_dataset();
  // Attending by position takes longer to learn than the 5-epoch budget allows.
  auto spec = reduced_spec();
  spec.train.max_epochs = 15;
  spec.train.patience = 15;
  spec.train.lr = 3e-3;
  auto rep = run_position_study(data, spec, {{0, 0}, {0, 8}}, progress());
  rep.print(std::cerr);
  if (rep.any_failed()) return {false, "a training run failed"};
  const auto& without = rep.at({0, 0});
  const auto& with = rep.at({0, 8});
  std::size_t wins = 0;
  for (std::size_t i = 0; i < without.runs.size(); ++i)
    if (with.runs[i].cross_entropy < without.runs[i].cross_entropy) ++wins;
  const double a = without.mean_cross_entropy(), b = with.mean_cross_entropy();
  return {b < a && wins == without.runs.size(),
          "cross-entropy d_position 0: " + fmt(a) + ", d_position 8: " + fmt(b) + " (lower in " +
              std::to_string(wins) + "/" + std::to_string(without.runs.size()) + " seeds)"};
}

Outcome criterion7() {
  // Full-depth Transformer (6 layers, 8 heads), batch 32, 10 batches per epoch.
  auto data = prepare_synthetic(default_workload(), 21, 1000 * 256, 22, 100 * 256, 256, {0.25, 5});
  ExperimentSpec spec;
  spec.seeds = {1};
  spec.train.max_batches_per_epoch = 10;
  auto rep = time_overhead(data, spec, 5, progress());
  rep.print(std::cerr);
  return {rep.ratio() <= kOverheadBound, "epoch time none " + fmt(rep.none.mean * 1000) + " ms, all " +
                                             fmt(rep.all.mean * 1000) + " ms, ratio " + fmt(rep.ratio()) +
                                             " (bound " + fmt(kOverheadBound) + ")"};
}

Outcome criterion8() {
  auto data = prepare_synthetic(default_workload(), 31, 3000 * 256, 32, 600 * 256, 256, {0.25, 5});
  auto spec = reduced_spec();
  std::optional<SequenceModel<float>> model;
  auto r = run_one(data, representation_for(Ablation::All), spec.model, spec.train, Objective::Lm, Objective::Lm, 1,
                   100, progress(), &model);
  if (!r.ok) return {false, "training failed: " + r.error};
  std::vector<double> original, shuffled;
  Rng rng(8);
  for (std::size_t i = 0; i < 100; ++i) {
    original.push_back(score(*model, data.eval[i]));
    shuffled.push_back(score(*model, shuffle_sysnames(data.eval[i], rng)));
  }
  const double a = median(original), b = median(shuffled);
  return {a > b, "median log-likelihood held-out " + fmt(a, 6) + " vs shuffled " + fmt(b, 6)};
}

Outcome criterion9() {
  Rng rng(9);
  auto events = test::random_events(rng, kRoundTripEvents);
  std::size_t line_ok = 0;
  std::optional<std::int64_t> prev;
  for (const auto& e : events) {
    if (parse_line(format_line(e, prev)) == e) ++line_ok;
    prev = e.timestamp_ns;
  }
  std::stringstream js;
  write_jsonl(js, events);
  const bool jsonl_ok = read_jsonl(js) == events;

  auto shifted = events;
  const auto first = shifted.front().timestamp_ns;
  for (auto& e : shifted) e.timestamp_ns -= first;
  std::stringstream bt;
  write_babeltrace(bt, shifted, first);
  const bool trace_ok = read_babeltrace(bt) == shifted;

  std::size_t prefix_ok = 0;
  const std::size_t trials = 300;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = rng.below(5000), len = 2 + rng.below(400);
    std::vector<EventRecord> stream(n);
    for (std::size_t i = 0; i < n; ++i) {
      stream[i].sysname_id = static_cast<TokenId>(rng.below(40));
      stream[i].timestamp_us = static_cast<std::int64_t>(i);
    }
    auto w = window(stream, len);
    std::vector<EventRecord> flat;
    for (const auto& s : w) flat.insert(flat.end(), s.records.begin(), s.records.end());
    if (w.size() == n / len && std::equal(flat.begin(), flat.end(), stream.begin())) ++prefix_ok;
  }
  const bool ok = line_ok == events.size() && jsonl_ok && trace_ok && prefix_ok == trials;
  return {ok, "babeltrace lines " + std::to_string(line_ok) + "/" + std::to_string(events.size()) +
                  ", whole trace " + (trace_ok ? "identical" : "DIFFERS") + ", jsonl " +
                  (jsonl_ok ? "identical" : "DIFFERS") + ", windowing prefix " + std::to_string(prefix_ok) + "/" +
                  std::to_string(trials)};
}

Outcome criterion10() {
  auto data = prepare_synthetic(default_workload(), 41, 200 * 64, 42, 60 * 64, 64, {0.25, 5});
  ExperimentSpec spec;
  spec.seeds = {1, 2};
  spec.model.tf_layers = 1;
  spec.train.max_epochs = 2;
  spec.train.max_batches_per_epoch = 3;
  spec.train.batch_size = 8;
  spec.train.eval_limit = 10;
  spec.eval_limit = 20;
  auto a = run_mask_study(data, spec);
  auto b = run_mask_study(data, spec);
  std::ostringstream text;
  a.print(text);
  std::cerr << text.str();
  bool same = a.rates == b.rates && a.cells.size() == b.cells.size();
  for (std::size_t i = 0; same && i < a.cells.size(); ++i)
    for (std::size_t s = 0; s < a.cells[i].runs.size(); ++s)
      same = same && a.cells[i].runs[s].cross_entropy == b.cells[i].runs[s].cross_entropy &&
             a.cells[i].runs[s].accuracy == b.cells[i].runs[s].accuracy;
  const auto expected = default_mask_rates();
  const bool shape = a.rates == expected && a.cells.size() == 6 && !a.any_failed();
  std::size_t starred = 0;
  std::istringstream lines(text.str());
  for (std::string line; std::getline(lines, line);)
    if (!line.starts_with("#") && line.ends_with(" *") && line.starts_with("25%")) ++starred;
  return {same && shape && starred == 1, std::to_string(a.cells.size()) + " rows, p=0.25 highlighted " +
                                             std::to_string(starred) + "x, rerun " +
                                             (same ? "identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria = {criterion1, criterion2, criterion3, criterion4,
                                                         criterion5, criterion6, criterion7, criterion8,
                                                         criterion9, criterion10};
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty()) {
    selected.resize(criteria.size());
    std::iota(selected.begin(), selected.end(), 1);
  }
  int failures = 0;
  for (int n : selected) {
    if (n < 1 || n > static_cast<int>(criteria.size())) {
      std::cerr << "unknown criterion " << n << '\n';
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(n - 1)]();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << " ["
              << fmt(secs, 3) << " s]" << std::endl;
    if (!o.pass) ++failures;
  }
  return failures ? 1 : 0;
}
