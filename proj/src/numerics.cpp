#include "docwin/numerics.hpp"

namespace docwin {

Mask Mask::from_additive(const Matrix& additive) {
  Mask mask(additive.rows(), additive.cols());
  for (Index i = 0; i < additive.rows(); ++i) {
    for (Index j = 0; j < additive.cols(); ++j) {
      const double v = additive(i, j);
      if (v == 0.0) continue;
      if (std::isinf(v) && v < 0) {
        mask.set(i, j, false);
        continue;
      }
      throw std::invalid_argument("Mask::from_additive: entries must be 0 or -inf");
    }
  }
  return mask;
}

Mask Mask::causal(Index rows, Index cols) {
  Mask mask(rows, cols, false);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j <= std::min(i, cols - 1); ++j) mask.set(i, j, true);
  }
  return mask;
}

Matrix Mask::to_additive() const {
  Matrix out(rows(), cols());
  for (Index i = 0; i < rows(); ++i) {
    for (Index j = 0; j < cols(); ++j) {
      out(i, j) = allowed_(i, j) ? 0.0 : -std::numeric_limits<double>::infinity();
    }
  }
  return out;
}

Mask Mask::operator&(const Mask& other) const {
  if (rows() != other.rows() || cols() != other.cols()) {
    throw std::invalid_argument("Mask intersection: shape mismatch");
  }
  Mask out;
  out.allowed_ = allowed_ && other.allowed_;
  return out;
}

Matrix layer_norm(const Matrix& x, const RowVector& gain, const RowVector& bias, LayerNormCache* cache) {
  const Index n = x.cols();
  Matrix normalized(x.rows(), n);
  Vector inv_std(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const RowVector centered = x.row(i).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(n);
    inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    normalized.row(i) = centered * inv_std(i);
  }
  Matrix out = normalized.array().rowwise() * gain.array();
  out.rowwise() += bias;
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

std::tuple<Matrix, RowVector, RowVector> layer_norm_backward(const LayerNormCache& cache, const RowVector& gain,
                                                              const Matrix& grad_out) {
  const Matrix& xhat = cache.normalized;
  const auto n = static_cast<double>(xhat.cols());
  RowVector dgain = (grad_out.array() * xhat.array()).colwise().sum();
  RowVector dbias = grad_out.colwise().sum();
  Matrix dxhat = grad_out.array().rowwise() * gain.array();
  Matrix dx(xhat.rows(), xhat.cols());
  for (Index i = 0; i < xhat.rows(); ++i) {
    const double sum_d = dxhat.row(i).sum();
    const double sum_dx = dxhat.row(i).dot(xhat.row(i));
    dx.row(i) = (cache.inv_std(i) / n) *
                (n * dxhat.row(i).array() - sum_d - xhat.row(i).array() * sum_dx).matrix();
  }
  return {std::move(dx), std::move(dgain), std::move(dbias)};
}

double smoothed_nll(const Matrix& log_probs, const std::vector<int>& targets, double smoothing) {
  if (static_cast<Index>(targets.size()) != log_probs.rows()) {
    throw std::invalid_argument("smoothed_nll: one target per row required");
  }
  double total = 0.0;
  for (Index i = 0; i < log_probs.rows(); ++i) {
    const int t = targets[static_cast<size_t>(i)];
    if (t < 0 || t >= log_probs.cols()) throw std::out_of_range("smoothed_nll: target id outside vocabulary");
    total -= (1.0 - smoothing) * log_probs(i, t);
    if (smoothing > 0.0) total -= smoothing * log_probs.row(i).mean();
  }
  return total;
}

Matrix smoothed_nll_backward(const Matrix& log_probs, const std::vector<int>& targets, double smoothing) {
  Matrix grad = Matrix::Constant(log_probs.rows(), log_probs.cols(),
                                 -smoothing / static_cast<double>(log_probs.cols()));
  for (Index i = 0; i < log_probs.rows(); ++i) grad(i, targets[static_cast<size_t>(i)]) -= 1.0 - smoothing;
  return grad;
}

GradCheckResult grad_check(const ValueAndGradient& f, const Matrix& x, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-4]");
  auto [value, analytic] = f(x);
  if (!std::isfinite(value)) throw std::domain_error("grad_check: f(x) is not finite");
  if (analytic.rows() != x.rows() || analytic.cols() != x.cols()) {
    throw std::invalid_argument("grad_check: gradient shape does not match x");
  }
  GradCheckResult result;
  result.numeric = Matrix::Zero(x.rows(), x.cols());
  Matrix probe = x;
  for (Index k = 0; k < x.size(); ++k) {
    const double saved = probe(k);
    probe(k) = saved + eps;
    const double plus = f(probe).first;
    probe(k) = saved - eps;
    const double minus = f(probe).first;
    probe(k) = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) throw std::domain_error("grad_check: f is not finite near x");
    result.numeric(k) = (plus - minus) / (2.0 * eps);
    const double err = std::abs(analytic(k) - result.numeric(k)) / (std::abs(analytic(k)) + 1e-8);
    if (err > result.max_relative_error || result.worst_index < 0) {
      result.max_relative_error = err;
      result.worst_index = k;
    }
  }
  result.analytic = std::move(analytic);
  return result;
}

}  // namespace docwin
