#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace docwin {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Matrix = MatrixX<double>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Thrown when a softmax row has no admissible entry.
class EmptyAttentionRow : public std::domain_error {
 public:
  EmptyAttentionRow() : std::domain_error("empty attention row") {}
};

/// Attention mask stored as an explicit per-entry "allowed" flag.
///
/// The additive view is the familiar {0, -inf} matrix: allowed entries map
/// to 0 and excluded entries to -inf. Softmax treats excluded entries as
/// exp(-inf) = 0 without ever evaluating an infinity.
class Mask {
 public:
  Mask() = default;
  Mask(Index rows, Index cols, bool allowed = true) : allowed_(rows, cols) { allowed_.setConstant(allowed); }

  static Mask from_additive(const Matrix& additive);
  static Mask causal(Index rows, Index cols);

  [[nodiscard]] Matrix to_additive() const;

  [[nodiscard]] Index rows() const { return allowed_.rows(); }
  [[nodiscard]] Index cols() const { return allowed_.cols(); }
  [[nodiscard]] bool allowed(Index i, Index j) const { return allowed_(i, j); }
  void set(Index i, Index j, bool allowed) { allowed_(i, j) = allowed; }
  [[nodiscard]] Index count_allowed() const { return allowed_.count(); }

  /// Entry-wise intersection of the admissible sets.
  [[nodiscard]] Mask operator&(const Mask& other) const;
  bool operator==(const Mask& other) const {
    return rows() == other.rows() && cols() == other.cols() && (allowed_ == other.allowed_).all();
  }

 private:
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> allowed_;
};

/// Row-wise softmax over the allowed entries of `mask`; excluded entries are exactly 0.
template <typename Derived>
MatrixX<typename Derived::Scalar> masked_softmax(const Eigen::MatrixBase<Derived>& scores, const Mask& mask) {
  using Scalar = typename Derived::Scalar;
  if (scores.rows() != mask.rows() || scores.cols() != mask.cols()) {
    throw std::invalid_argument("masked_softmax: mask shape does not match scores");
  }
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(scores.rows(), scores.cols());
  for (Index i = 0; i < scores.rows(); ++i) {
    Scalar row_max = -std::numeric_limits<Scalar>::infinity();
    bool any = false;
    for (Index j = 0; j < scores.cols(); ++j) {
      if (!mask.allowed(i, j)) continue;
      if (!std::isfinite(scores(i, j))) throw std::domain_error("masked_softmax: non-finite score");
      row_max = any ? std::max(row_max, scores(i, j)) : scores(i, j);
      any = true;
    }
    if (!any) throw EmptyAttentionRow();
    Scalar total = 0;
    for (Index j = 0; j < scores.cols(); ++j) {
      if (!mask.allowed(i, j)) continue;
      out(i, j) = std::exp(scores(i, j) - row_max);
      total += out(i, j);
    }
    out.row(i) /= total;
  }
  return out;
}

/// Unmasked row softmax.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& scores) {
  return masked_softmax(scores, Mask(scores.rows(), scores.cols()));
}

/// Gradient of a row softmax: dS = P .* (dP - rowsum(P .* dP)).
template <typename DerivedP, typename DerivedG>
MatrixX<typename DerivedP::Scalar> softmax_rows_backward(const Eigen::MatrixBase<DerivedP>& probs,
                                                         const Eigen::MatrixBase<DerivedG>& grad_probs) {
  using Scalar = typename DerivedP::Scalar;
  MatrixX<Scalar> out(probs.rows(), probs.cols());
  for (Index i = 0; i < probs.rows(); ++i) {
    const Scalar dot = probs.row(i).dot(grad_probs.row(i));
    out.row(i) = probs.row(i).cwiseProduct(grad_probs.row(i) - RowVector::Constant(probs.cols(), dot));
  }
  return out;
}

/// Numerically stable row-wise log-softmax.
template <typename Derived>
MatrixX<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const Scalar m = logits.row(i).maxCoeff();
    const Scalar lse = m + std::log((logits.row(i).array() - m).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

/// Per-row statistics retained by the layer-norm forward pass.
struct LayerNormCache {
  Matrix normalized;
  Vector inv_std;
};

inline constexpr double kLayerNormEpsilon = 1e-5;

/// y = (x - mean) / sqrt(var + eps) * gain + bias, row-wise.
Matrix layer_norm(const Matrix& x, const RowVector& gain, const RowVector& bias, LayerNormCache* cache = nullptr);

/// Returns (dx, dgain, dbias).
std::tuple<Matrix, RowVector, RowVector> layer_norm_backward(const LayerNormCache& cache, const RowVector& gain,
                                                              const Matrix& grad_out);

/// Label-smoothed negative log-likelihood summed over rows.
///
/// Each row contributes (1 - eps) * -log p[target] + eps * mean_v(-log p[v]).
double smoothed_nll(const Matrix& log_probs, const std::vector<int>& targets, double smoothing);

/// d(smoothed_nll)/d(log_probs) for the row-wise log-softmax output.
Matrix smoothed_nll_backward(const Matrix& log_probs, const std::vector<int>& targets, double smoothing);

/// A scalar objective together with its analytic gradient.
using ValueAndGradient = std::function<std::pair<double, Matrix>(const Matrix&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  Index worst_index = -1;
  Matrix analytic;
  Matrix numeric;
};

/// Compares the analytic gradient against central differences.
///
/// The error for each component is |analytic - numeric| / (|analytic| + 1e-8).
GradCheckResult grad_check(const ValueAndGradient& f, const Matrix& x, double eps = 1e-5);

}  // namespace docwin
