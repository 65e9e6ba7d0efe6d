#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "argrep/error.hpp"
#include "argrep/model.hpp"
#include "argrep/objectives.hpp"
#include "argrep/rng.hpp"

namespace argrep {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 20;
  std::size_t patience = 3;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t warmup_steps = 0;  // linear ramp from lr/warmup to lr
  double grad_clip = 0.0;        // global-norm clip, 0 disables
  std::uint64_t seed = 0;
  std::size_t max_batches_per_epoch = 0;  // 0 = full pass
  std::size_t eval_limit = 0;             // validation sequences per epoch, 0 = all
  MaskPlan mask;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("Adam betas must lie in [0,1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
    mask.validate();
  }
};

/// Adam over a fixed parameter list.
template <class T>
class Adam {
 public:
  Adam(ParamList<T> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto& p : params_) {
      m_.push_back(Matrix<T>::Zero(p.param->value.rows(), p.param->value.cols()));
      v_.push_back(Matrix<T>::Zero(p.param->value.rows(), p.param->value.cols()));
    }
  }

  [[nodiscard]] std::size_t steps() const noexcept { return t_; }

  double learning_rate() const {
    if (cfg_.warmup_steps == 0 || t_ >= cfg_.warmup_steps) return cfg_.lr;
    return cfg_.lr * static_cast<double>(t_ + 1) / static_cast<double>(cfg_.warmup_steps);
  }

  void step() {
    double scale = 1.0;
    if (cfg_.grad_clip > 0.0) {
      double sq = 0;
      for (auto& p : params_) sq += static_cast<double>(p.param->grad.squaredNorm());
      const double norm = std::sqrt(sq);
      if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
    }
    const double lr = learning_rate();
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step = static_cast<T>(lr / bc1), eps = static_cast<T>(cfg_.adam_eps);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i].param;
      Matrix<T> g = p.grad * static_cast<T>(scale);
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseAbs2();
      p.value.array() -= step * m_[i].array() / ((v_[i].array() * inv_bc2).sqrt() + eps);
    }
  }

 private:
  ParamList<T> params_;
  TrainConfig cfg_;
  std::vector<Matrix<T>> m_, v_;
  std::size_t t_ = 0;
};

/// Tracks the best validation loss; `update` returns true when training
/// should stop (no improvement for `patience` consecutive epochs).
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  bool update(double loss) {
    if (loss < best_) {
      best_ = loss;
      bad_ = 0;
      improved_ = true;
    } else {
      ++bad_;
      improved_ = false;
    }
    return bad_ >= patience_;
  }

  [[nodiscard]] bool improved() const noexcept { return improved_; }
  [[nodiscard]] double best() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::size_t bad_ = 0;
  bool improved_ = false;
  double best_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double valid_loss = 0;
  double valid_accuracy = 0;
  double seconds = 0;     // training pass only, validation excluded
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_valid_loss = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training with early stopping. On return the model holds the
/// parameters of the best validation epoch.
template <class T>
TrainResult train(SequenceModel<T>& model, const std::vector<Sequence>& train_set,
                  const std::vector<Sequence>& valid_set, Objective objective, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty() || valid_set.empty()) throw ConfigError("train and validation sets must be non-empty");
  if (objective == Objective::Mlm && model.model_config().kind != ModelKind::Transformer)
    throw UnsupportedConfig("masked language modeling requires the Transformer");

  ParamList<T> params = model.parameters();
  Adam<T> opt(params, cfg);
  EarlyStopping stopper(cfg.patience);
  Rng rng(cfg.seed);
  std::vector<Matrix<T>> best;
  TrainResult result;

  const std::size_t len = train_set.front().size();
  const std::size_t per_seq = objective == Objective::Lm ? len - 1 : cfg.mask.selected(len);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t n_batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
  if (cfg.max_batches_per_epoch) n_batches = std::min(n_batches, cfg.max_batches_per_epoch);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rng.shuffle(order);
    LossStats train_stats;
    try {
      const auto t0 = std::chrono::steady_clock::now();
      for (std::size_t b = 0; b < n_batches; ++b) {
        const std::size_t lo = b * cfg.batch_size, hi = std::min(order.size(), lo + cfg.batch_size);
        const T scale = T(1) / static_cast<T>((hi - lo) * per_seq);
        model.zero_grad();
        for (std::size_t i = lo; i < hi; ++i)
          train_stats += accumulate_gradients(model, train_set[order[i]], objective, cfg.mask, rng, scale);
        opt.step();
      }
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rec.train_loss = train_stats.cross_entropy();
      if (!std::isfinite(rec.train_loss)) throw NumericError("non-finite training loss");
      LossStats v = evaluate(model, valid_set, objective, cfg.mask, cfg.eval_limit);
      rec.valid_loss = v.cross_entropy();
      rec.valid_accuracy = v.accuracy_pct();
      if (!std::isfinite(rec.valid_loss)) throw NumericError("non-finite validation loss");
    } catch (const NumericError& ex) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + ex.what());
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    const bool stop = stopper.update(rec.valid_loss);
    if (stopper.improved()) {
      best.clear();
      for (auto& p : params) best.push_back(p.param->value);
      result.best_epoch = epoch;
      result.best_valid_loss = rec.valid_loss;
    }
    if (stop) break;
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].param->value = best[i];
  return result;
}

}  // namespace argrep
