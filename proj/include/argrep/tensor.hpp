#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "argrep/rng.hpp"

// Differentiable primitives used by the sequence models. Every forward has a
// matching backward; tests check each backward against central differences.

namespace argrep {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A trainable tensor and its accumulated gradient.
template <class T>
struct Param {
  Matrix<T> value;
  Matrix<T> grad;

  Param() = default;
  Param(Eigen::Index rows, Eigen::Index cols)
      : value(Matrix<T>::Zero(rows, cols)), grad(Matrix<T>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(value.size()); }

  void init_uniform(Rng& rng, double bound) {
    for (Eigen::Index i = 0; i < value.size(); ++i)
      value.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
  }
};

/// Named view of a parameter, in the model's stable order.
template <class T>
struct NamedParam {
  std::string name;
  Param<T>* param;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

namespace ops {

// y = x W + b
template <class T>
Matrix<T> linear(const Matrix<T>& x, const Param<T>& w, const Param<T>* b) {
  Matrix<T> y = x * w.value;
  if (b) y.rowwise() += b->value.row(0);
  return y;
}

/// Accumulates dW, db and returns dx.
template <class T>
Matrix<T> linear_backward(const Matrix<T>& x, const Matrix<T>& dy, Param<T>& w, Param<T>* b) {
  w.grad.noalias() += x.transpose() * dy;
  if (b) b->grad.row(0) += dy.colwise().sum();
  return dy * w.value.transpose();
}

template <class T>
Matrix<T> sigmoid(const Matrix<T>& x) {
  return x.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
}

template <class T>
Matrix<T> sigmoid_backward(const Matrix<T>& y, const Matrix<T>& dy) {
  return dy.cwiseProduct(y.cwiseProduct((T(1) - y.array()).matrix()));
}

template <class T>
Matrix<T> tanh(const Matrix<T>& x) {
  return x.array().tanh().matrix();
}

template <class T>
Matrix<T> tanh_backward(const Matrix<T>& y, const Matrix<T>& dy) {
  return (dy.array() * (T(1) - y.array().square())).matrix();
}

/// Row-wise softmax. Entries equal to -inf get probability exactly 0.
template <class T>
Matrix<T> softmax_rows(const Matrix<T>& x) {
  Matrix<T> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    T m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

template <class T>
Matrix<T> softmax_rows_backward(const Matrix<T>& y, const Matrix<T>& dy) {
  Matrix<T> dx(y.rows(), y.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    T dot = y.row(r).dot(dy.row(r));
    dx.row(r) = (y.row(r).array() * (dy.row(r).array() - dot)).matrix();
  }
  return dx;
}

template <class T>
struct LayerNormCache {
  Matrix<T> xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes each row, then scales by gamma and shifts by beta (both 1 x n).
template <class T>
Matrix<T> layer_norm(const Matrix<T>& x, const Param<T>& gamma, const Param<T>& beta,
                     LayerNormCache<T>& cache) {
  const auto n = static_cast<T>(x.cols());
  cache.xhat.resize(x.rows(), x.cols());
  cache.rstd.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    T mean = x.row(r).sum() / n;
    auto centered = (x.row(r).array() - mean);
    T var = centered.square().sum() / n;
    T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    cache.rstd(r) = rstd;
    cache.xhat.row(r) = (centered * rstd).matrix();
  }
  Matrix<T> y = cache.xhat.array().rowwise() * gamma.value.row(0).array();
  y.rowwise() += beta.value.row(0);
  return y;
}

template <class T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const LayerNormCache<T>& cache, Param<T>& gamma,
                              Param<T>& beta) {
  const auto n = static_cast<T>(dy.cols());
  gamma.grad.row(0) += dy.cwiseProduct(cache.xhat).colwise().sum();
  beta.grad.row(0) += dy.colwise().sum();
  Matrix<T> dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  Matrix<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    T mean_d = dxhat.row(r).sum() / n;
    T mean_dx = dxhat.row(r).dot(cache.xhat.row(r)) / n;
    dx.row(r) = ((dxhat.row(r).array() - mean_d - cache.xhat.row(r).array() * mean_dx) *
                 cache.rstd(r))
                    .matrix();
  }
  return dx;
}

// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <class T>
Matrix<T> gelu(const Matrix<T>& x) {
  const T k = static_cast<T>(0.7978845608028654);
  return x.unaryExpr([k](T v) {
    return T(0.5) * v * (T(1) + std::tanh(k * (v + T(0.044715) * v * v * v)));
  });
}

template <class T>
Matrix<T> gelu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
  const T k = static_cast<T>(0.7978845608028654);
  Matrix<T> dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    T v = x.data()[i];
    T t = std::tanh(k * (v + T(0.044715) * v * v * v));
    T dt = (T(1) - t * t) * k * (T(1) + T(3 * 0.044715) * v * v);
    dx.data()[i] = dy.data()[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
  }
  return dx;
}

/// Inverted-dropout mask: each entry is 0 with probability p, else 1/(1-p).
template <class T>
Matrix<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Matrix<T> m(rows, cols);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < p ? T(0) : keep;
  return m;
}

/// Column-wise concatenation.
template <class T>
Matrix<T> concat_cols(std::span<const Matrix<T>* const> parts) {
  Eigen::Index rows = parts.empty() ? 0 : parts.front()->rows(), cols = 0;
  for (const auto* p : parts) cols += p->cols();
  Matrix<T> out(rows, cols);
  Eigen::Index at = 0;
  for (const auto* p : parts) {
    out.middleCols(at, p->cols()) = *p;
    at += p->cols();
  }
  return out;
}

/// Gradient of concat_cols: slices dy back into parts of the given widths.
template <class T>
std::vector<Matrix<T>> concat_cols_backward(const Matrix<T>& dy, std::span<const Eigen::Index> widths) {
  std::vector<Matrix<T>> out;
  Eigen::Index at = 0;
  for (auto w : widths) {
    out.emplace_back(dy.middleCols(at, w));
    at += w;
  }
  return out;
}

/// Rows of `table` selected by `ids` (embedding lookup).
template <class T>
Matrix<T> gather_rows(const Matrix<T>& table, std::span<const std::uint32_t> ids) {
  Matrix<T> out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
  return out;
}

/// Gradient of gather_rows: adds dy's rows into the selected table rows.
template <class T>
void scatter_add_rows(Matrix<T>& table_grad, std::span<const std::uint32_t> ids, const Matrix<T>& dy) {
  for (std::size_t i = 0; i < ids.size(); ++i) table_grad.row(ids[i]) += dy.row(static_cast<Eigen::Index>(i));
}

/// Softmax cross-entropy for selected rows of `logits`. Returns the summed
/// negative log-likelihood over the rows listed in `rows`, and fills `probs`
/// (one row per listed row).
template <class T>
double cross_entropy(const Matrix<T>& logits, std::span<const Eigen::Index> rows,
                     std::span<const std::uint32_t> targets, Matrix<T>& probs) {
  probs.resize(static_cast<Eigen::Index>(rows.size()), logits.cols());
  double nll = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto r = static_cast<Eigen::Index>(i);
    auto row = logits.row(rows[i]);
    T m = row.maxCoeff();
    probs.row(r) = (row.array() - m).exp().matrix();
    T z = probs.row(r).sum();
    probs.row(r) /= z;
    nll -= static_cast<double>(row(targets[i]) - m - std::log(z));
  }
  return nll;
}

/// d(scale * nll)/d logits, written into a full-size gradient.
template <class T>
Matrix<T> cross_entropy_backward(Eigen::Index n_rows, const Matrix<T>& probs,
                                 std::span<const Eigen::Index> rows,
                                 std::span<const std::uint32_t> targets, T scale) {
  Matrix<T> d = Matrix<T>::Zero(n_rows, probs.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto r = static_cast<Eigen::Index>(i);
    d.row(rows[i]) = probs.row(r) * scale;
    d(rows[i], targets[i]) -= scale;
  }
  return d;
}

}  // namespace ops
}  // namespace argrep
