#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "argrep/model.hpp"
#include "argrep/objectives.hpp"
#include "argrep/tensor.hpp"

namespace argrep {

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst_tensor;
  std::size_t tensors = 0;
  std::size_t entries = 0;
};

/// Compares the gradients already stored in `params` against central
/// differences of `loss`. The step for entry θ is rel_step * max(1, |θ|).
/// Error per tensor: |g_a - g_n| / max(|g_a| + |g_n|, 1e-12) over the
/// tensor's norm; the worst tensor is reported.
inline GradCheckResult grad_check(const ParamList<double>& params, const std::function<double()>& loss,
                                  double rel_step = 1e-3) {
  GradCheckResult out;
  for (const auto& np : params) {
    auto& p = *np.param;
    Matrix<double> numeric(p.value.rows(), p.value.cols());
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& theta = p.value.data()[i];
      const double orig = theta, h = rel_step * std::max(1.0, std::abs(orig));
      theta = orig + h;
      const double up = loss();
      theta = orig - h;
      const double down = loss();
      theta = orig;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    const double diff = (p.grad - numeric).norm();
    const double denom = std::max(p.grad.norm() + numeric.norm(), 1e-12);
    const double err = diff / denom;
    ++out.tensors;
    out.entries += p.size();
    if (err >= out.max_rel_error) {
      out.max_rel_error = err;
      out.worst_tensor = np.name;
    }
  }
  return out;
}

/// Checks every parameter of `model` on one sequence under the mean
/// cross-entropy of `objective`. Dropout is disabled; the MLM mask is drawn
/// once from `mask_seed` and reused for every evaluation.
inline GradCheckResult grad_check(SequenceModel<double>& model, const Sequence& seq, Objective objective,
                                  const MaskPlan& plan = {}, std::uint64_t mask_seed = 0,
                                  double rel_step = 1e-3) {
  MaskedSequence ms;
  double n_targets;
  if (objective == Objective::Mlm) {
    Rng rng(mask_seed);
    ms = mlm_mask(seq, plan, model.vocab_size(), rng);
    n_targets = static_cast<double>(ms.positions.size());
  } else {
    n_targets = static_cast<double>(seq.size() - 1);
  }
  auto loss = [&] {
    LossStats s = objective == Objective::Lm ? lm_loss(model, seq) : mlm_loss(model, ms);
    return s.nll / n_targets;
  };
  model.zero_grad();
  Rng rng(mask_seed);
  accumulate_gradients(model, seq, objective, plan, rng, 1.0 / n_targets, false);
  return grad_check(model.parameters(), loss, rel_step);
}

}  // namespace argrep
