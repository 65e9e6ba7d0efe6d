#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "argrep/dataset.hpp"
#include "argrep/error.hpp"
#include "argrep/model.hpp"
#include "argrep/rng.hpp"

namespace argrep {

enum class Objective { Lm, Mlm };

inline constexpr std::string_view to_string(Objective o) { return o == Objective::Lm ? "lm" : "mlm"; }

/// Masked-LM selection: p_select of the events are chosen; of those,
/// floor(frac_mask*k) are masked, floor(frac_random*k) get a random sysname,
/// and the remainder stay unchanged.
struct MaskPlan {
  double p_select = 0.25;
  double frac_mask = 0.8;
  double frac_random = 0.1;
  double frac_keep = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(p_select > 0.0 && p_select < 1.0)) throw ConfigError("p_select must lie in (0,1)");
    if (frac_mask < 0 || frac_random < 0 || frac_keep < 0 ||
        std::abs(frac_mask + frac_random + frac_keep - 1.0) > 1e-9)
      throw ConfigError("mask fractions must be non-negative and sum to 1");
  }

  [[nodiscard]] std::size_t selected(std::size_t len) const {
    return static_cast<std::size_t>(std::ceil(p_select * static_cast<double>(len) - 1e-9));
  }
};

struct MaskedSequence {
  Sequence sequence;                   // sysnames replaced per the plan
  std::vector<std::uint8_t> masked;    // 1 where the whole event is masked
  std::vector<Eigen::Index> positions; // selected positions, ascending
  std::vector<std::uint32_t> targets;  // original sysname ids at `positions`
  std::size_t n_masked = 0;
  std::size_t n_random = 0;
  std::size_t n_kept = 0;
};

inline MaskedSequence mlm_mask(const Sequence& seq, const MaskPlan& plan, std::size_t sys_vocab_size,
                               Rng& rng) {
  plan.validate();
  if (sys_vocab_size <= Vocab::kReserved) throw ConfigError("sysname vocabulary has no corpus tokens");
  const std::size_t n = seq.size();
  const std::size_t k = std::min(plan.selected(n), n);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(order[i], order[i + rng.below(n - i)]);

  MaskedSequence out;
  out.sequence = seq;
  out.masked.assign(n, 0);
  out.n_masked = static_cast<std::size_t>(std::floor(plan.frac_mask * static_cast<double>(k) + 1e-9));
  out.n_random = static_cast<std::size_t>(std::floor(plan.frac_random * static_cast<double>(k) + 1e-9));
  out.n_masked = std::min(out.n_masked, k);
  out.n_random = std::min(out.n_random, k - out.n_masked);
  out.n_kept = k - out.n_masked - out.n_random;
  const auto corpus = static_cast<std::uint64_t>(sys_vocab_size - Vocab::kReserved);
  for (std::size_t i = 0; i < k; ++i) {
    auto& rec = out.sequence.records[order[i]];
    if (i < out.n_masked) {
      rec.sysname_id = Vocab::kMask;
      out.masked[order[i]] = 1;
    } else if (i < out.n_masked + out.n_random) {
      rec.sysname_id = static_cast<std::uint32_t>(Vocab::kReserved + rng.below(corpus));
    }
  }
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(chosen.begin(), chosen.end());
  for (auto p : chosen) {
    out.positions.push_back(static_cast<Eigen::Index>(p));
    out.targets.push_back(seq[p].sysname_id);
  }
  return out;
}

inline MaskedSequence mlm_mask(const Sequence& seq, const MaskPlan& plan, std::size_t sys_vocab_size) {
  Rng rng(plan.seed);
  return mlm_mask(seq, plan, sys_vocab_size, rng);
}

/// Summed loss and top-1 hits over the predictions of one or more sequences.
struct LossStats {
  double nll = 0;
  std::size_t count = 0;
  std::size_t correct = 0;

  LossStats& operator+=(const LossStats& o) {
    nll += o.nll;
    count += o.count;
    correct += o.correct;
    return *this;
  }
  [[nodiscard]] double cross_entropy() const { return count ? nll / static_cast<double>(count) : 0.0; }
  [[nodiscard]] double accuracy_pct() const {
    return count ? 100.0 * static_cast<double>(correct) / static_cast<double>(count) : 0.0;
  }
};

namespace detail {

template <class T>
LossStats score_rows(const Matrix<T>& logits, std::span<const Eigen::Index> rows,
                     std::span<const std::uint32_t> targets, Matrix<T>& probs) {
  LossStats s;
  s.nll = ops::cross_entropy(logits, rows, targets, probs);
  s.count = rows.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Eigen::Index best;
    logits.row(rows[i]).maxCoeff(&best);
    if (static_cast<std::uint32_t>(best) == targets[i]) ++s.correct;
  }
  return s;
}

/// LM rows 0..n-2 predict the sysnames of rows 1..n-1.
inline void lm_targets(const Sequence& seq, std::vector<Eigen::Index>& rows, std::vector<std::uint32_t>& targets) {
  rows.resize(seq.size() - 1);
  targets.resize(seq.size() - 1);
  for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
    rows[t] = static_cast<Eigen::Index>(t);
    targets[t] = seq[t + 1].sysname_id;
  }
}

}  // namespace detail

/// Per-position next-sysname distributions: row t is p(sysname_{t+1} | events_0..t).
template <class T>
Matrix<T> lm_forward(SequenceModel<T>& model, const Sequence& seq) {
  return ops::softmax_rows(model.forward(model.input(seq), true));
}

/// Chain-rule log-likelihood sum_{t>=1} log p(sysname_t | events_<t).
template <class T>
double score(SequenceModel<T>& model, const Sequence& seq) {
  std::vector<Eigen::Index> rows;
  std::vector<std::uint32_t> targets;
  detail::lm_targets(seq, rows, targets);
  Matrix<T> probs;
  return -ops::cross_entropy(model.forward(model.input(seq), true), rows, targets, probs);
}

template <class T>
LossStats lm_loss(SequenceModel<T>& model, const Sequence& seq) {
  std::vector<Eigen::Index> rows;
  std::vector<std::uint32_t> targets;
  detail::lm_targets(seq, rows, targets);
  Matrix<T> probs;
  return detail::score_rows(model.forward(model.input(seq), true), rows, targets, probs);
}

/// Distributions at the masked sequence's target positions (bidirectional).
template <class T>
Matrix<T> mlm_forward(SequenceModel<T>& model, const MaskedSequence& ms, double* loss = nullptr) {
  if (model.model_config().kind != ModelKind::Transformer)
    throw UnsupportedConfig("masked language modeling requires the Transformer");
  if (ms.positions.empty()) throw std::invalid_argument("no target positions selected");
  Matrix<T> logits = model.forward(model.input(ms.sequence, ms.masked), false);
  Matrix<T> probs;
  double nll = ops::cross_entropy(logits, std::span<const Eigen::Index>(ms.positions),
                                  std::span<const std::uint32_t>(ms.targets), probs);
  if (loss) *loss = nll / static_cast<double>(ms.positions.size());
  return probs;
}

template <class T>
LossStats mlm_loss(SequenceModel<T>& model, const MaskedSequence& ms) {
  if (model.model_config().kind != ModelKind::Transformer)
    throw UnsupportedConfig("masked language modeling requires the Transformer");
  if (ms.positions.empty()) throw std::invalid_argument("no target positions selected");
  Matrix<T> probs;
  return detail::score_rows(model.forward(model.input(ms.sequence, ms.masked), false),
                            std::span<const Eigen::Index>(ms.positions),
                            std::span<const std::uint32_t>(ms.targets), probs);
}

/// Forward + backward of one sequence. Gradients of `scale * summed NLL`
/// accumulate into the model's parameters. Returns the loss statistics.
template <class T>
LossStats accumulate_gradients(SequenceModel<T>& model, const Sequence& seq, Objective objective,
                               const MaskPlan& plan, Rng& rng, T scale, bool dropout = true) {
  std::vector<Eigen::Index> rows;
  std::vector<std::uint32_t> targets;
  const Sequence* input_seq = &seq;
  std::span<const std::uint8_t> masked;
  MaskedSequence ms;
  bool causal = true;
  if (objective == Objective::Lm) {
    detail::lm_targets(seq, rows, targets);
  } else {
    if (model.model_config().kind != ModelKind::Transformer)
      throw UnsupportedConfig("masked language modeling requires the Transformer");
    ms = mlm_mask(seq, plan, model.vocab_size(), rng);
    rows = ms.positions;
    targets = ms.targets;
    input_seq = &ms.sequence;
    masked = ms.masked;
    causal = false;
  }
  Matrix<T> logits = model.forward(model.input(*input_seq, masked), causal, dropout ? &rng : nullptr);
  Matrix<T> probs;
  LossStats stats = detail::score_rows(logits, rows, targets, probs);
  Matrix<T> dlogits = ops::cross_entropy_backward<T>(logits.rows(), probs, rows, targets, scale);
  Matrix<T> dx = model.backward(dlogits);
  model.backward_input(*input_seq, dx, masked);
  return stats;
}

/// Mean cross-entropy (nats) and top-1 accuracy over a dataset. LM scores
/// positions 1..n-1; MLM masks each sequence with a seed derived from
/// `plan.seed` and the sequence index.
template <class T>
LossStats evaluate(SequenceModel<T>& model, const std::vector<Sequence>& data, Objective objective,
                   const MaskPlan& plan = {}, std::size_t limit = 0) {
  LossStats total;
  const std::size_t n = limit ? std::min(limit, data.size()) : data.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (objective == Objective::Lm) {
      total += lm_loss(model, data[i]);
    } else {
      Rng rng(plan.seed * 1000003ull + i);
      total += mlm_loss(model, mlm_mask(data[i], plan, model.vocab_size(), rng));
    }
  }
  return total;
}

}  // namespace argrep
