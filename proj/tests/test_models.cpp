#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "argrep/checkpoint.hpp"
#include "argrep/experiment.hpp"
#include "argrep/gradcheck.hpp"
#include "argrep/objectives.hpp"
#include "argrep/train.hpp"

using namespace argrep;

namespace {

Sequence random_sequence(Rng& rng, std::size_t len, std::size_t sys_v, std::size_t proc_v) {
  Sequence s;
  std::int64_t ts = static_cast<std::int64_t>(rng.below(1000));
  for (std::size_t i = 0; i < len; ++i) {
    EventRecord r;
    r.sysname_id = static_cast<TokenId>(Vocab::kReserved + rng.below(sys_v - Vocab::kReserved));
    r.procname_id = static_cast<TokenId>(Vocab::kReserved + rng.below(proc_v - Vocab::kReserved));
    r.entry = rng.bernoulli(0.5);
    r.ret_class = r.entry ? RetClass::Unavailable : (rng.bernoulli(0.8) ? RetClass::Success : RetClass::Failure);
    r.pid = 1000 + static_cast<std::int64_t>(rng.below(4));
    r.tid = r.pid + static_cast<std::int64_t>(rng.below(3));
    ts += 1 + static_cast<std::int64_t>(rng.below(20));
    r.timestamp_us = ts;
    s.records.push_back(r);
  }
  return s;
}

RepresentationConfig tiny_representation() {
  RepresentationConfig c;
  c.call = c.process = c.time = true;
  c.d_sysname = 4;
  c.d_procname = 2;
  c.d_pid = 2;
  c.d_tid = 2;
  c.d_timestamp = 2;
  c.encoding_base = 100.0;
  return c;
}

ModelConfig tiny_model(ModelKind kind, std::size_t len) {
  ModelConfig m;
  m.kind = kind;
  m.lstm_layers = 2;
  m.lstm_hidden = 3;
  m.tf_layers = 2;
  m.tf_heads = 2;
  m.tf_ff = 6;
  m.d_position = 2;
  m.window_len = len;
  return m;
}

// Causal row-wise comparison after perturbing every input row > t.
double max_change_before(SequenceModel<double>& model, const Matrix<double>& x, Eigen::Index t, Rng& rng) {
  Matrix<double> base = model.forward(x, true);
  Matrix<double> y = x;
  for (Eigen::Index r = t + 1; r < y.rows(); ++r)
    for (Eigen::Index c = 0; c < y.cols(); ++c) y(r, c) += rng.uniform(-2, 2);
  Matrix<double> pert = model.forward(y, true);
  return (base.topRows(t + 1) - pert.topRows(t + 1)).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("model input widths", "[models]") {
  ModelConfig tf;
  ModelConfig lstm;
  lstm.kind = ModelKind::Lstm;
  CHECK(tf.input_dim(representation_for(Ablation::All)) == 72);
  CHECK(tf.input_dim(representation_for(Ablation::None)) == 40);
  CHECK(tf.input_dim(representation_for(Ablation::NoneCmp)) == 72);
  CHECK(lstm.input_dim(representation_for(Ablation::None)) == 32);
  CHECK(tf.tf_width(representation_for(Ablation::All)) == 72);

  Rng rng(1);
  SequenceModel<double> m(tf, representation_for(Ablation::All), 20, 8, 1);
  auto seq = random_sequence(rng, 256, 20, 8);
  auto x = m.input(seq);
  CHECK(x.rows() == 256);
  CHECK(x.cols() == 72);
  const double expect[] = {0, 1, 0, 1, 0, 1, 0, 1};
  for (int j = 0; j < 8; ++j) CHECK(x(0, 64 + j) == expect[j]);

  Sequence short_seq = seq;
  short_seq.records.pop_back();
  CHECK_THROWS_AS(m.input(short_seq), std::invalid_argument);
}

TEST_CASE("a zeroed output layer predicts uniformly", "[models]") {
  Rng rng(2);
  for (auto kind : {ModelKind::Lstm, ModelKind::Transformer}) {
    ModelConfig mc = tiny_model(kind, 32);
    SequenceModel<double> m(mc, representation_for(Ablation::All), 50, 6, 3);
    m.head_weight().value.setZero();
    m.head_bias().value.setZero();
    auto seq = random_sequence(rng, 32, 50, 6);
    auto p = lm_forward(m, seq);
    CHECK((p.array() - 1.0 / 50).abs().maxCoeff() < 1e-15);
    CHECK(std::abs(lm_loss(m, seq).cross_entropy() - std::log(50.0)) < 1e-12);
  }
}

TEST_CASE("uniform predictor over 256 events scores -255 ln 50", "[models]") {
  Rng rng(3);
  ModelConfig mc;
  mc.tf_layers = 1;
  SequenceModel<double> m(mc, representation_for(Ablation::None), 50, 6, 3);
  m.head_weight().value.setZero();
  m.head_bias().value.setZero();
  const double s = score(m, random_sequence(rng, 256, 50, 6));
  CHECK(std::abs(s - (-255.0 * std::log(50.0))) < 1e-9);
  CHECK(std::abs(s - (-997.6)) < 0.05);
}

TEST_CASE("score equals the log of the product of step probabilities", "[models]") {
  Rng rng(4);
  for (auto kind : {ModelKind::Lstm, ModelKind::Transformer}) {
    SequenceModel<double> m(tiny_model(kind, 12), tiny_representation(), 9, 5, 7);
    auto seq = random_sequence(rng, 12, 9, 5);
    auto p = lm_forward(m, seq);
    double product = 1.0;
    for (std::size_t t = 1; t < seq.size(); ++t) product *= p(static_cast<Eigen::Index>(t - 1), seq[t].sysname_id);
    CHECK(std::abs(std::exp(score(m, seq)) / product - 1.0) < 1e-6);
  }
}

TEST_CASE("LM output rows are distributions", "[models]") {
  Rng rng(5);
  for (auto kind : {ModelKind::Lstm, ModelKind::Transformer}) {
    ModelConfig mc = tiny_model(kind, 64);
    mc.lstm_hidden = 16;
    mc.tf_heads = 4;
    SequenceModel<float> m(mc, representation_for(Ablation::All), 30, 8, 9);
    auto p = lm_forward(m, random_sequence(rng, 64, 30, 8));
    for (Eigen::Index r = 0; r < p.rows(); ++r) CHECK(std::abs(p.row(r).cast<double>().sum() - 1.0) < 1e-6);
  }
}

TEST_CASE("LM outputs ignore future inputs", "[models]") {
  Rng rng(6);
  SECTION("LSTM, bitwise") {
    SequenceModel<double> m(tiny_model(ModelKind::Lstm, 40), tiny_representation(), 12, 6, 1);
    auto x = m.input(random_sequence(rng, 40, 12, 6));
    for (Eigen::Index t : {0, 5, 17, 38}) CHECK(max_change_before(m, x, t, rng) == 0.0);
  }
  SECTION("Transformer") {
    ModelConfig mc;
    mc.tf_layers = 2;
    mc.window_len = 64;
    SequenceModel<double> m(mc, representation_for(Ablation::All), 30, 8, 1);
    auto x = m.input(random_sequence(rng, 64, 30, 8));
    for (Eigen::Index t : {0, 5, 31, 62}) CHECK(max_change_before(m, x, t, rng) <= 1e-9);
    // A bidirectional pass does see the future.
    Matrix<double> y = x;
    for (Eigen::Index c = 0; c < y.cols(); ++c) y(40, c) += rng.uniform(-2, 2);
    CHECK((m.forward(x, false).row(3) - m.forward(y, false).row(3)).cwiseAbs().maxCoeff() > 1e-6);
  }
}

TEST_CASE("mask counts follow the rounding rule", "[models]") {
  Rng rng(7);
  auto seq = random_sequence(rng, 256, 30, 5);
  MaskPlan plan;
  plan.seed = 11;
  auto ms = mlm_mask(seq, plan, 30);
  CHECK(ms.positions.size() == 64);
  CHECK(ms.n_masked == 51);
  CHECK(ms.n_random == 6);
  CHECK(ms.n_kept == 7);

  auto again = mlm_mask(seq, plan, 30);
  CHECK(again.positions == ms.positions);
  CHECK(again.sequence == ms.sequence);

  const std::pair<double, std::size_t> table[] = {{0.05, 13}, {0.10, 26}, {0.15, 39},
                                                  {0.20, 52}, {0.25, 64}, {0.30, 77}};
  for (auto [p, k] : table) {
    plan.p_select = p;
    CHECK(plan.selected(256) == k);
    CHECK(mlm_mask(seq, plan, 30).positions.size() == k);
  }
}

TEST_CASE("masking rewrites only the selected events", "[models]") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto seq = random_sequence(rng, 256, 30, 5);
    MaskPlan plan;
    plan.p_select = 0.05 + 0.5 * rng.uniform();
    auto ms = mlm_mask(seq, plan, 30, rng);
    std::size_t masked = 0, changed_or_kept = 0;
    std::vector<char> selected(256, 0);
    for (std::size_t i = 0; i < ms.positions.size(); ++i) {
      const auto p = static_cast<std::size_t>(ms.positions[i]);
      selected[p] = 1;
      CHECK(ms.targets[i] == seq[p].sysname_id);
      if (i) CHECK(ms.positions[i] > ms.positions[i - 1]);
    }
    for (std::size_t t = 0; t < 256; ++t) {
      const auto& a = seq[t];
      const auto& b = ms.sequence[t];
      CHECK(a.pid == b.pid);
      CHECK(a.entry == b.entry);
      CHECK(a.ret_class == b.ret_class);
      if (!selected[t]) {
        CHECK(a == b);
        CHECK(ms.masked[t] == 0);
      } else if (ms.masked[t]) {
        CHECK(b.sysname_id == Vocab::kMask);
        ++masked;
      } else {
        CHECK(b.sysname_id >= Vocab::kReserved);
        ++changed_or_kept;
      }
    }
    CHECK(masked == ms.n_masked);
    CHECK(changed_or_kept == ms.n_random + ms.n_kept);
  }
}

TEST_CASE("mask plan validation", "[models]") {
  MaskPlan p;
  p.p_select = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.p_select = 1.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.frac_keep = 0.2;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("MLM needs the Transformer and at least one target", "[models]") {
  Rng rng(9);
  auto seq = random_sequence(rng, 16, 12, 5);
  SequenceModel<double> lstm(tiny_model(ModelKind::Lstm, 16), tiny_representation(), 12, 5, 1);
  auto ms = mlm_mask(seq, MaskPlan{}, 12);
  CHECK_THROWS_AS(mlm_forward(lstm, ms), UnsupportedConfig);
  TrainConfig tc;
  CHECK_THROWS_AS(train(lstm, {seq}, {seq}, Objective::Mlm, tc), UnsupportedConfig);

  SequenceModel<double> tf(tiny_model(ModelKind::Transformer, 16), tiny_representation(), 12, 5, 1);
  MaskedSequence none;
  none.sequence = seq;
  none.masked.assign(16, 0);
  CHECK_THROWS(mlm_forward(tf, none));

  tf.head_weight().value.setZero();
  tf.head_bias().value.setZero();
  double loss = 0;
  auto probs = mlm_forward(tf, ms, &loss);
  CHECK(probs.rows() == static_cast<Eigen::Index>(ms.positions.size()));
  CHECK(std::abs(loss - std::log(12.0)) < 1e-12);
}

TEST_CASE("MLM loss reads labels at selected positions only", "[models]") {
  Rng rng(10);
  auto seq = random_sequence(rng, 32, 12, 5);
  SequenceModel<double> tf(tiny_model(ModelKind::Transformer, 32), tiny_representation(), 12, 5, 1);
  auto ms = mlm_mask(seq, MaskPlan{}, 12);
  Matrix<double> logits = tf.forward(tf.input(ms.sequence, ms.masked), false);

  std::vector<std::uint32_t> labels(32);
  for (std::size_t t = 0; t < 32; ++t) labels[t] = seq[t].sysname_id;
  auto loss_with = [&](const std::vector<std::uint32_t>& lab) {
    std::vector<std::uint32_t> targets;
    for (auto p : ms.positions) targets.push_back(lab[static_cast<std::size_t>(p)]);
    Matrix<double> probs;
    return ops::cross_entropy<double>(logits, ms.positions, targets, probs);
  };
  const double base = loss_with(labels);
  CHECK(base == mlm_loss(tf, ms).nll);
  for (std::size_t t = 0; t < 32; ++t) {
    if (std::find(ms.positions.begin(), ms.positions.end(), static_cast<Eigen::Index>(t)) != ms.positions.end())
      continue;
    auto changed = labels;
    changed[t] = (changed[t] + 1 - 3) % 9 + 3;
    CHECK(loss_with(changed) == base);
  }
  // The gradient reaching the logits is zero away from the targets.
  Matrix<double> probs;
  ops::cross_entropy<double>(logits, ms.positions, ms.targets, probs);
  Matrix<double> d = ops::cross_entropy_backward<double>(32, probs, ms.positions, ms.targets, 1.0);
  for (Eigen::Index r = 0; r < 32; ++r)
    if (std::find(ms.positions.begin(), ms.positions.end(), r) == ms.positions.end()) CHECK(d.row(r).isZero(0.0));
}

TEST_CASE("gradients of the full models match finite differences", "[models]") {
  Rng rng(11);
  const std::size_t len = 5;
  auto seq = random_sequence(rng, len, 9, 5);
  MaskPlan plan;
  plan.p_select = 0.5;
  plan.frac_mask = 0.5;
  plan.frac_random = 0.5;
  plan.frac_keep = 0.0;

  SECTION("LSTM LM") {
    SequenceModel<double> m(tiny_model(ModelKind::Lstm, len), tiny_representation(), 9, 5, 2);
    auto r = grad_check(m, seq, Objective::Lm);
    INFO(r.worst_tensor);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.tensors == m.parameters().size());
  }
  SECTION("Transformer MLM") {
    SequenceModel<double> m(tiny_model(ModelKind::Transformer, len), tiny_representation(), 9, 5, 2);
    auto r = grad_check(m, seq, Objective::Mlm, plan, 4);
    INFO(r.worst_tensor);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.tensors == m.parameters().size());
  }
  SECTION("Transformer LM with an input projection") {
    ModelConfig mc = tiny_model(ModelKind::Transformer, len);
    mc.tf_heads = 4;  // input width 14 -> model width 16
    SequenceModel<double> m(mc, tiny_representation(), 9, 5, 2);
    REQUIRE(m.parameters()[4].name == "input.w");
    auto r = grad_check(m, seq, Objective::Lm);
    INFO(r.worst_tensor);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("compensated baseline doubles the sysname table", "[models]") {
  ModelConfig mc;
  mc.tf_layers = 1;
  SequenceModel<float> none(mc, representation_for(Ablation::None), 33, 8, 1);
  SequenceModel<float> cmp(mc, representation_for(Ablation::NoneCmp), 33, 8, 1);
  auto table_size = [](SequenceModel<float>& m) {
    for (auto& p : m.parameters())
      if (p.name == "repr.sysname") return p.param->size();
    return std::size_t{0};
  };
  CHECK(table_size(none) == 33u * 32u);
  CHECK(table_size(cmp) == 33u * 64u);
  CHECK(table_size(cmp) == 2 * table_size(none));
}

TEST_CASE("non-finite activations name the layer", "[models]") {
  Rng rng(12);
  SequenceModel<double> m(tiny_model(ModelKind::Transformer, 8), tiny_representation(), 9, 5, 2);
  m.parameters()[5].param->value(0, 0) = std::nan("");
  try {
    lm_forward(m, random_sequence(rng, 8, 9, 5));
    FAIL("expected a numeric error");
  } catch (const NumericError& ex) {
    CHECK(std::string(ex.what()).find("block 0") != std::string::npos);
  }
}

namespace {

std::vector<Sequence> patterned(std::size_t n, std::size_t len, TokenId a, TokenId b, Rng& rng) {
  std::vector<Sequence> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sequence s = random_sequence(rng, len, 12, 5);
    for (std::size_t t = 0; t < len; ++t) s.records[t].sysname_id = t % 2 ? a : b;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("training lowers the loss and is deterministic", "[models]") {
  Rng rng(13);
  auto data = patterned(10, 16, 4, 5, rng);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_epochs = 2;
  tc.patience = 5;
  tc.lr = 1e-2;
  tc.seed = 3;
  auto run = [&] {
    SequenceModel<double> m(tiny_model(ModelKind::Transformer, 16), tiny_representation(), 12, 5, 2);
    auto res = train(m, data, data, Objective::Lm, tc);
    std::vector<Matrix<double>> values;
    for (auto& p : m.parameters()) values.push_back(p.param->value);
    return std::pair{res, values};
  };
  auto [r1, v1] = run();
  auto [r2, v2] = run();
  REQUIRE(r1.history.size() <= 2);
  REQUIRE(r1.history.size() == 2);
  CHECK(r1.history[1].train_loss <= r1.history[0].train_loss);
  CHECK(v1 == v2);
  CHECK(r1.history[1].valid_loss == r2.history[1].valid_loss);
}

TEST_CASE("early stopping halts on a worsening validation loss", "[models]") {
  EarlyStopping es(1);
  CHECK_FALSE(es.update(1.0));
  CHECK(es.update(2.0));
  EarlyStopping patient(2);
  CHECK_FALSE(patient.update(3.0));
  CHECK_FALSE(patient.update(3.5));
  CHECK_FALSE(patient.update(2.0));
  CHECK_FALSE(patient.update(2.5));
  CHECK(patient.update(2.5));

  // Overfitting a few random sequences at a high rate: whatever the loss
  // curve, the best epoch is restored and the patience rule holds.
  Rng rng(14);
  std::vector<Sequence> train_set, valid_set;
  for (int i = 0; i < 4; ++i) train_set.push_back(random_sequence(rng, 16, 12, 5));
  for (int i = 0; i < 4; ++i) valid_set.push_back(random_sequence(rng, 16, 12, 5));
  TrainConfig tc;
  tc.batch_size = 2;
  tc.max_epochs = 30;
  tc.patience = 1;
  tc.lr = 5e-2;
  SequenceModel<double> m(tiny_model(ModelKind::Lstm, 16), tiny_representation(), 12, 5, 2);
  auto res = train(m, train_set, valid_set, Objective::Lm, tc);
  REQUIRE(res.history.size() < tc.max_epochs);
  std::size_t argmin = 0;
  for (std::size_t i = 0; i < res.history.size(); ++i)
    if (res.history[i].valid_loss < res.history[argmin].valid_loss) argmin = i;
  CHECK(res.best_epoch == argmin + 1);
  CHECK(res.best_valid_loss == res.history[argmin].valid_loss);
  // Stopped exactly `patience` epochs after the best one.
  CHECK(res.history.size() == res.best_epoch + tc.patience);
  CHECK(res.history.back().valid_loss >= res.best_valid_loss);
  CHECK(evaluate(m, valid_set, Objective::Lm).cross_entropy() == Catch::Approx(res.best_valid_loss).epsilon(1e-12));
}

TEST_CASE("divergence reports the epoch", "[models]") {
  Rng rng(15);
  auto data = patterned(4, 8, 4, 5, rng);
  SequenceModel<double> m(tiny_model(ModelKind::Lstm, 8), tiny_representation(), 12, 5, 2);
  m.head_bias().value(0, 0) = std::numeric_limits<double>::infinity();
  TrainConfig tc;
  tc.batch_size = 2;
  try {
    train(m, data, data, Objective::Lm, tc);
    FAIL("expected divergence");
  } catch (const NumericError& ex) {
    CHECK(std::string(ex.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("train config validation", "[models]") {
  TrainConfig tc;
  tc.patience = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = {};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = {};
  tc.lr = -1;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  Rng rng(1);
  SequenceModel<double> m(tiny_model(ModelKind::Lstm, 8), tiny_representation(), 12, 5, 2);
  CHECK_THROWS_AS(train(m, {}, patterned(1, 8, 4, 5, rng), Objective::Lm, TrainConfig{}), ConfigError);
}

TEST_CASE("checkpoints restore the model and guard the vocabulary", "[models]") {
  Rng rng(16);
  Vocab sys({"read", "write", "poll", "futex", "close", "open", "stat", "mmap", "brk"});
  Vocab proc({"apache2", "mysqld"});
  ModelConfig mc = tiny_model(ModelKind::Transformer, 10);
  SequenceModel<float> m(mc, tiny_representation(), sys.size(), proc.size(), 21);
  auto seq = random_sequence(rng, 10, sys.size(), proc.size());
  std::stringstream ss;
  save_checkpoint(ss, m, sys, proc);
  const std::string text = ss.str();

  Checkpoint info;
  auto back = load_checkpoint<float>(ss, &info);
  CHECK(info.sys_vocab == sys);
  CHECK(info.proc_vocab == proc);
  CHECK(info.model == mc);
  CHECK(info.representation == tiny_representation());
  CHECK(lm_forward(back, seq) == lm_forward(m, seq));
  CHECK_NOTHROW(require_vocab(info.sys_vocab, sys, "sysname"));
  CHECK_THROWS_AS(require_vocab(info.sys_vocab, Vocab({"read"}), "sysname"), ConfigError);

  std::string tampered = text;
  tampered.replace(tampered.find("\"read\""), 6, "\"reap\"");
  std::istringstream bad(tampered);
  CHECK_THROWS_AS(load_checkpoint<float>(bad), ConfigError);
  std::istringstream junk("{\"format\":\"other\"}");
  CHECK_THROWS_AS(load_checkpoint<float>(junk), ParseError);
}
