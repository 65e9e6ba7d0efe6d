#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "argrep/dataset.hpp"
#include "argrep/error.hpp"
#include "argrep/representation.hpp"
#include "argrep/rng.hpp"
#include "argrep/tensor.hpp"

namespace argrep {

enum class ModelKind { Lstm, Transformer };

inline constexpr std::string_view to_string(ModelKind k) {
  return k == ModelKind::Lstm ? "lstm" : "transformer";
}

struct ModelConfig {
  ModelKind kind = ModelKind::Transformer;
  std::size_t lstm_layers = 2;
  std::size_t lstm_hidden = 96;
  std::size_t tf_layers = 6;
  std::size_t tf_heads = 8;
  std::size_t tf_ff = 128;
  // Positional encoding width, concatenated to the event vector. Transformer
  // only; 0 omits the channel.
  std::size_t d_position = 8;
  double dropout = 0.0;
  std::size_t window_len = kDefaultWindow;

  [[nodiscard]] std::size_t input_dim(const RepresentationConfig& rep) const noexcept {
    return rep.total_dim() + (kind == ModelKind::Transformer ? d_position : 0);
  }

  /// Transformer width: the input width, rounded up to a multiple of the
  /// head count (a learned projection bridges the two when they differ).
  [[nodiscard]] std::size_t tf_width(const RepresentationConfig& rep) const noexcept {
    const std::size_t d = input_dim(rep);
    return (d + tf_heads - 1) / tf_heads * tf_heads;
  }

  void validate() const {
    if (window_len < 2) throw ConfigError("window_len must be >= 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
    if (kind == ModelKind::Lstm) {
      if (lstm_layers < 1 || lstm_hidden < 1) throw ConfigError("LSTM dims must be positive");
    } else {
      if (tf_layers < 1 || tf_heads < 1 || tf_ff < 1) throw ConfigError("Transformer dims must be positive");
      if (d_position % 2) throw ConfigError("d_position must be even");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

namespace detail {

template <class T>
void init_linear(Param<T>& w, Param<T>* b, Rng& rng) {
  w.init_uniform(rng, 1.0 / std::sqrt(static_cast<double>(w.value.rows())));
  if (b) b->value.setZero();
}

template <class T>
void check_finite(const Matrix<T>& m, const std::string& where) {
  if (!m.allFinite()) throw NumericError("non-finite activation in " + where);
}

}  // namespace detail

/// One unidirectional LSTM layer over a single sequence (rows = time steps).
/// Gate layout in the 4H columns: input, forget, cell, output.
template <class T>
class LstmLayer {
 public:
  LstmLayer(std::size_t in, std::size_t hidden)
      : h_(static_cast<Eigen::Index>(hidden)),
        wx_(static_cast<Eigen::Index>(in), 4 * h_),
        wh_(h_, 4 * h_),
        b_(1, 4 * h_) {}

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(h_));
    wx_.init_uniform(rng, bound);
    wh_.init_uniform(rng, bound);
    b_.value.setZero();
    b_.value.middleCols(h_, h_).setOnes();  // forget gate
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".w_input", &wx_});
    out.push_back({prefix + ".w_hidden", &wh_});
    out.push_back({prefix + ".bias", &b_});
  }

  Matrix<T> forward(const Matrix<T>& x) {
    const Eigen::Index steps = x.rows(), h = h_;
    x_ = x;
    gates_ = ops::linear(x, wx_, &b_);
    c_.resize(steps, h);
    tanh_c_.resize(steps, h);
    hs_.resize(steps, h);
    Eigen::Matrix<T, 1, Eigen::Dynamic> hprev = Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(h);
    Eigen::Matrix<T, 1, Eigen::Dynamic> cprev = hprev;
    for (Eigen::Index t = 0; t < steps; ++t) {
      auto z = gates_.row(t);
      z.noalias() += hprev * wh_.value;
      auto sig = [](T v) { return T(1) / (T(1) + std::exp(-v)); };
      z.segment(0, h) = z.segment(0, h).unaryExpr(sig);
      z.segment(h, h) = z.segment(h, h).unaryExpr(sig);
      z.segment(2 * h, h) = z.segment(2 * h, h).array().tanh().matrix();
      z.segment(3 * h, h) = z.segment(3 * h, h).unaryExpr(sig);
      c_.row(t) = z.segment(h, h).cwiseProduct(cprev) + z.segment(0, h).cwiseProduct(z.segment(2 * h, h));
      tanh_c_.row(t) = c_.row(t).array().tanh().matrix();
      hs_.row(t) = z.segment(3 * h, h).cwiseProduct(tanh_c_.row(t));
      hprev = hs_.row(t);
      cprev = c_.row(t);
    }
    return hs_;
  }

  Matrix<T> backward(const Matrix<T>& dh_out) {
    const Eigen::Index steps = dh_out.rows(), h = h_;
    Matrix<T> dz(steps, 4 * h);
    Eigen::Matrix<T, 1, Eigen::Dynamic> dh_next = Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(h);
    Eigen::Matrix<T, 1, Eigen::Dynamic> dc_next = dh_next;
    for (Eigen::Index t = steps - 1; t >= 0; --t) {
      auto g = gates_.row(t);
      auto i = g.segment(0, h), f = g.segment(h, h), cc = g.segment(2 * h, h), o = g.segment(3 * h, h);
      Eigen::Matrix<T, 1, Eigen::Dynamic> dh = dh_out.row(t) + dh_next;
      Eigen::Matrix<T, 1, Eigen::Dynamic> dc =
          dc_next + (dh.array() * o.array() * (T(1) - tanh_c_.row(t).array().square())).matrix();
      Eigen::Matrix<T, 1, Eigen::Dynamic> cprev =
          t > 0 ? Eigen::Matrix<T, 1, Eigen::Dynamic>(c_.row(t - 1))
                : Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(h);
      auto d = dz.row(t);
      d.segment(0, h) = (dc.array() * cc.array() * i.array() * (T(1) - i.array())).matrix();
      d.segment(h, h) = (dc.array() * cprev.array() * f.array() * (T(1) - f.array())).matrix();
      d.segment(2 * h, h) = (dc.array() * i.array() * (T(1) - cc.array().square())).matrix();
      d.segment(3 * h, h) = (dh.array() * tanh_c_.row(t).array() * o.array() * (T(1) - o.array())).matrix();
      dc_next = dc.cwiseProduct(f);
      dh_next.noalias() = d * wh_.value.transpose();
    }
    if (steps > 1) wh_.grad.noalias() += hs_.topRows(steps - 1).transpose() * dz.bottomRows(steps - 1);
    return ops::linear_backward(x_, dz, wx_, &b_);
  }

 private:
  Eigen::Index h_;
  Param<T> wx_, wh_, b_;
  Matrix<T> x_, gates_, c_, tanh_c_, hs_;
};

/// Pre-norm Transformer encoder block: x + MHA(LN(x)), then + FFN(LN(.)).
template <class T>
class TransformerBlock {
 public:
  TransformerBlock(std::size_t width, std::size_t heads, std::size_t ff)
      : w_(static_cast<Eigen::Index>(width)),
        heads_(static_cast<Eigen::Index>(heads)),
        ln1_g_(1, w_), ln1_b_(1, w_),
        wqkv_(w_, 3 * w_), bqkv_(1, 3 * w_),
        wo_(w_, w_), bo_(1, w_),
        ln2_g_(1, w_), ln2_b_(1, w_),
        w1_(w_, static_cast<Eigen::Index>(ff)), b1_(1, static_cast<Eigen::Index>(ff)),
        w2_(static_cast<Eigen::Index>(ff), w_), b2_(1, w_) {
    if (width % heads) throw ConfigError("Transformer width must be divisible by the head count");
  }

  void init(Rng& rng) {
    ln1_g_.value.setOnes();
    ln2_g_.value.setOnes();
    ln1_b_.value.setZero();
    ln2_b_.value.setZero();
    detail::init_linear(wqkv_, &bqkv_, rng);
    detail::init_linear(wo_, &bo_, rng);
    detail::init_linear(w1_, &b1_, rng);
    detail::init_linear(w2_, &b2_, rng);
  }

  void collect(ParamList<T>& out, const std::string& p) {
    out.push_back({p + ".ln1.gamma", &ln1_g_});
    out.push_back({p + ".ln1.beta", &ln1_b_});
    out.push_back({p + ".attn.w_qkv", &wqkv_});
    out.push_back({p + ".attn.b_qkv", &bqkv_});
    out.push_back({p + ".attn.w_out", &wo_});
    out.push_back({p + ".attn.b_out", &bo_});
    out.push_back({p + ".ln2.gamma", &ln2_g_});
    out.push_back({p + ".ln2.beta", &ln2_b_});
    out.push_back({p + ".ff.w1", &w1_});
    out.push_back({p + ".ff.b1", &b1_});
    out.push_back({p + ".ff.w2", &w2_});
    out.push_back({p + ".ff.b2", &b2_});
  }

  Matrix<T> forward(const Matrix<T>& x, bool causal, double dropout, Rng* rng) {
    const Eigen::Index n = x.rows(), hd = w_ / heads_;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    a_ = ops::layer_norm(x, ln1_g_, ln1_b_, ln1_);
    qkv_ = ops::linear(a_, wqkv_, &bqkv_);
    probs_.resize(static_cast<std::size_t>(heads_));
    attn_.resize(n, w_);
    for (Eigen::Index h = 0; h < heads_; ++h) {
      auto q = qkv_.middleCols(h * hd, hd);
      auto k = qkv_.middleCols(w_ + h * hd, hd);
      auto v = qkv_.middleCols(2 * w_ + h * hd, hd);
      Matrix<T>& p = probs_[static_cast<std::size_t>(h)];
      p.noalias() = (q * k.transpose()) * scale;
      for (Eigen::Index r = 0; r < n; ++r) {
        const Eigen::Index len = causal ? r + 1 : n;
        auto row = p.row(r).head(len);
        T m = row.maxCoeff();
        row = (row.array() - m).exp().matrix();
        row /= row.sum();
        if (len < n) p.row(r).tail(n - len).setZero();
      }
      attn_.middleCols(h * hd, hd).noalias() = p * v;
    }
    Matrix<T> y = ops::linear(attn_, wo_, &bo_);
    use_drop_ = dropout > 0.0 && rng != nullptr;
    if (use_drop_) {
      drop1_ = ops::dropout_mask<T>(n, w_, dropout, *rng);
      y = y.cwiseProduct(drop1_);
    }
    y += x;
    b_in_ = ops::layer_norm(y, ln2_g_, ln2_b_, ln2_);
    u_ = ops::linear(b_in_, w1_, &b1_);
    g_ = ops::gelu(u_);
    Matrix<T> f = ops::linear(g_, w2_, &b2_);
    if (use_drop_) {
      drop2_ = ops::dropout_mask<T>(n, w_, dropout, *rng);
      f = f.cwiseProduct(drop2_);
    }
    return y + f;
  }

  Matrix<T> backward(const Matrix<T>& dz) {
    const Eigen::Index n = dz.rows(), hd = w_ / heads_;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    Matrix<T> df = use_drop_ ? Matrix<T>(dz.cwiseProduct(drop2_)) : dz;
    Matrix<T> dg = ops::linear_backward(g_, df, w2_, &b2_);
    Matrix<T> du = ops::gelu_backward(u_, dg);
    Matrix<T> db = ops::linear_backward(b_in_, du, w1_, &b1_);
    Matrix<T> dy = dz + ops::layer_norm_backward(db, ln2_, ln2_g_, ln2_b_);

    Matrix<T> dattn_out = use_drop_ ? Matrix<T>(dy.cwiseProduct(drop1_)) : dy;
    Matrix<T> dattn = ops::linear_backward(attn_, dattn_out, wo_, &bo_);
    Matrix<T> dqkv(n, 3 * w_);
    for (Eigen::Index h = 0; h < heads_; ++h) {
      auto q = qkv_.middleCols(h * hd, hd);
      auto k = qkv_.middleCols(w_ + h * hd, hd);
      auto v = qkv_.middleCols(2 * w_ + h * hd, hd);
      const Matrix<T>& p = probs_[static_cast<std::size_t>(h)];
      auto dout = dattn.middleCols(h * hd, hd);
      Matrix<T> dp = dout * v.transpose();
      dqkv.middleCols(2 * w_ + h * hd, hd).noalias() = p.transpose() * dout;
      Matrix<T> ds = ops::softmax_rows_backward(p, dp) * scale;
      dqkv.middleCols(h * hd, hd).noalias() = ds * k;
      dqkv.middleCols(w_ + h * hd, hd).noalias() = ds.transpose() * q;
    }
    Matrix<T> da = ops::linear_backward(a_, dqkv, wqkv_, &bqkv_);
    return dy + ops::layer_norm_backward(da, ln1_, ln1_g_, ln1_b_);
  }

 private:
  Eigen::Index w_, heads_;
  Param<T> ln1_g_, ln1_b_, wqkv_, bqkv_, wo_, bo_, ln2_g_, ln2_b_, w1_, b1_, w2_, b2_;
  ops::LayerNormCache<T> ln1_, ln2_;
  Matrix<T> a_, qkv_, attn_, b_in_, u_, g_, drop1_, drop2_;
  std::vector<Matrix<T>> probs_;
  bool use_drop_ = false;
};

/// Event representation + backbone + softmax head over the sysname vocabulary.
/// Holds the activations of the last forward pass, so one sequence is in
/// flight at a time.
template <class T>
class SequenceModel {
 public:
  SequenceModel(const ModelConfig& mcfg, const RepresentationConfig& rcfg, std::size_t sys_vocab_size,
                std::size_t proc_vocab_size, std::uint64_t seed)
      : mcfg_(mcfg),
        repr_(rcfg, sys_vocab_size, proc_vocab_size),
        seed_(seed),
        vocab_size_(sys_vocab_size) {
    mcfg.validate();
    Rng rng(seed);
    repr_.randomize(rng);
    const auto in = static_cast<Eigen::Index>(mcfg.input_dim(rcfg));
    Eigen::Index width;
    if (mcfg.kind == ModelKind::Lstm) {
      std::size_t prev = static_cast<std::size_t>(in);
      for (std::size_t l = 0; l < mcfg.lstm_layers; ++l) {
        lstm_.emplace_back(prev, mcfg.lstm_hidden);
        lstm_.back().init(rng);
        prev = mcfg.lstm_hidden;
      }
      width = static_cast<Eigen::Index>(mcfg.lstm_hidden);
    } else {
      width = static_cast<Eigen::Index>(mcfg.tf_width(rcfg));
      if (width != in) {
        proj_w_ = Param<T>(in, width);
        proj_b_ = Param<T>(1, width);
        detail::init_linear(proj_w_, &proj_b_, rng);
        has_proj_ = true;
      }
      for (std::size_t l = 0; l < mcfg.tf_layers; ++l) {
        blocks_.emplace_back(static_cast<std::size_t>(width), mcfg.tf_heads, mcfg.tf_ff);
        blocks_.back().init(rng);
      }
      lnf_g_ = Param<T>(1, width);
      lnf_b_ = Param<T>(1, width);
      lnf_g_.value.setOnes();
      if (mcfg.d_position > 0) {
        SinusoidalEncoder pos(mcfg.d_position, rcfg.encoding_base);
        positions_.resize(static_cast<Eigen::Index>(mcfg.window_len), static_cast<Eigen::Index>(mcfg.d_position));
        for (std::size_t t = 0; t < mcfg.window_len; ++t)
          pos.encode_into<T>(static_cast<double>(t),
                             std::span<T>(positions_.row(static_cast<Eigen::Index>(t)).data(), mcfg.d_position));
      }
    }
    head_w_ = Param<T>(width, static_cast<Eigen::Index>(sys_vocab_size));
    head_b_ = Param<T>(1, static_cast<Eigen::Index>(sys_vocab_size));
    detail::init_linear(head_w_, &head_b_, rng);
  }

  SequenceModel(const SequenceModel&) = delete;
  SequenceModel& operator=(const SequenceModel&) = delete;
  SequenceModel(SequenceModel&&) = default;

  [[nodiscard]] const ModelConfig& model_config() const noexcept { return mcfg_; }
  [[nodiscard]] const RepresentationConfig& repr_config() const noexcept { return repr_.config(); }
  [[nodiscard]] std::size_t vocab_size() const noexcept { return vocab_size_; }
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] std::size_t input_dim() const noexcept { return mcfg_.input_dim(repr_.config()); }
  EventRepresentation<T>& representation() noexcept { return repr_; }
  Param<T>& head_weight() noexcept { return head_w_; }
  Param<T>& head_bias() noexcept { return head_b_; }

  ParamList<T> parameters() {
    ParamList<T> out;
    repr_.collect(out);
    if (has_proj_) {
      out.push_back({"input.w", &proj_w_});
      out.push_back({"input.b", &proj_b_});
    }
    for (std::size_t l = 0; l < lstm_.size(); ++l) lstm_[l].collect(out, "lstm" + std::to_string(l));
    for (std::size_t l = 0; l < blocks_.size(); ++l) blocks_[l].collect(out, "block" + std::to_string(l));
    if (!blocks_.empty()) {
      out.push_back({"final_ln.gamma", &lnf_g_});
      out.push_back({"final_ln.beta", &lnf_b_});
    }
    out.push_back({"head.w", &head_w_});
    out.push_back({"head.b", &head_b_});
    return out;
  }

  [[nodiscard]] std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& p : parameters()) n += p.param->size();
    return n;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.param->zero_grad();
  }

  /// Model input rows: event vector, followed by the positional encoding for
  /// the Transformer. `masked` (optional, one flag per row) zeroes argument
  /// channels and swaps the sysname for MASK.
  [[nodiscard]] Matrix<T> input(const Sequence& seq, std::span<const std::uint8_t> masked = {}) const {
    if (seq.size() != mcfg_.window_len)
      throw std::invalid_argument("sequence length " + std::to_string(seq.size()) +
                                  " differs from window_len " + std::to_string(mcfg_.window_len));
    const std::size_t d = input_dim(), dr = repr_.dim();
    const std::int64_t origin = repr_.config().timestamp_origin == TimestampOrigin::SequenceStart
                                    ? seq.records.front().timestamp_us
                                    : 0;
    Matrix<T> x(static_cast<Eigen::Index>(seq.size()), static_cast<Eigen::Index>(d));
    for (std::size_t t = 0; t < seq.size(); ++t) {
      auto row = x.row(static_cast<Eigen::Index>(t));
      repr_.represent_into(seq[t], origin, !masked.empty() && masked[t] != 0, std::span<T>(row.data(), dr));
      if (d > dr) row.tail(static_cast<Eigen::Index>(d - dr)) = positions_.row(static_cast<Eigen::Index>(t));
    }
    return x;
  }

  /// Logits (rows x vocab). `causal` restricts attention to earlier rows; the
  /// LSTM is causal by construction. Dropout applies when `rng` is given.
  Matrix<T> forward(const Matrix<T>& x, bool causal, Rng* rng = nullptr) {
    Matrix<T> h;
    const double drop = rng ? mcfg_.dropout : 0.0;
    if (mcfg_.kind == ModelKind::Lstm) {
      if (!causal) throw UnsupportedConfig("the LSTM is unidirectional");
      h = x;
      drop_masks_.clear();
      for (std::size_t l = 0; l < lstm_.size(); ++l) {
        h = lstm_[l].forward(h);
        detail::check_finite(h, "lstm layer " + std::to_string(l));
        if (drop > 0.0 && l + 1 < lstm_.size()) {
          drop_masks_.push_back(ops::dropout_mask<T>(h.rows(), h.cols(), drop, *rng));
          h = h.cwiseProduct(drop_masks_.back());
        }
      }
      features_ = h;
    } else {
      if (has_proj_) {
        proj_in_ = x;
        h = ops::linear(x, proj_w_, &proj_b_);
      } else {
        h = x;
      }
      for (std::size_t l = 0; l < blocks_.size(); ++l) {
        h = blocks_[l].forward(h, causal, drop, rng);
        detail::check_finite(h, "transformer block " + std::to_string(l));
      }
      features_ = ops::layer_norm(h, lnf_g_, lnf_b_, lnf_);
    }
    Matrix<T> logits = ops::linear(features_, head_w_, &head_b_);
    detail::check_finite(logits, "output head");
    return logits;
  }

  /// Backpropagates d(loss)/d(logits) of the last forward; returns d/d(input).
  Matrix<T> backward(const Matrix<T>& dlogits) {
    Matrix<T> dh = ops::linear_backward(features_, dlogits, head_w_, &head_b_);
    if (mcfg_.kind == ModelKind::Lstm) {
      for (std::size_t l = lstm_.size(); l-- > 0;) {
        if (l + 1 < lstm_.size() && l < drop_masks_.size()) dh = dh.cwiseProduct(drop_masks_[l]);
        dh = lstm_[l].backward(dh);
      }
      return dh;
    }
    dh = ops::layer_norm_backward(dh, lnf_, lnf_g_, lnf_b_);
    for (std::size_t l = blocks_.size(); l-- > 0;) dh = blocks_[l].backward(dh);
    if (has_proj_) dh = ops::linear_backward(proj_in_, dh, proj_w_, &proj_b_);
    return dh;
  }

  /// Routes d/d(input) into the representation tables.
  void backward_input(const Sequence& seq, const Matrix<T>& dx, std::span<const std::uint8_t> masked = {}) {
    const std::size_t dr = repr_.dim();
    for (std::size_t t = 0; t < seq.size(); ++t)
      repr_.backward(seq[t], !masked.empty() && masked[t] != 0,
                     std::span<const T>(dx.row(static_cast<Eigen::Index>(t)).data(), dr));
  }


 private:
  ModelConfig mcfg_;
  EventRepresentation<T> repr_;
  std::uint64_t seed_;
  std::size_t vocab_size_;
  std::vector<LstmLayer<T>> lstm_;
  std::vector<TransformerBlock<T>> blocks_;
  bool has_proj_ = false;
  Param<T> proj_w_, proj_b_, lnf_g_, lnf_b_, head_w_, head_b_;
  ops::LayerNormCache<T> lnf_;
  Matrix<T> positions_, features_, proj_in_;
  std::vector<Matrix<T>> drop_masks_;
};

}  // namespace argrep
