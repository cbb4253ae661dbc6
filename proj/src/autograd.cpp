#include "docwin/autograd.hpp"

#include <stdexcept>

namespace docwin::ag {

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var{static_cast<Index>(nodes_.size()) - 1};
}

Var Tape::leaf(Matrix value, Matrix* grad_sink) {
  nodes_.push_back(Node{std::move(value), {}, {}, grad_sink, record_ && grad_sink != nullptr});
  return Var{static_cast<Index>(nodes_.size()) - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> parents, Backward backward) {
  if (!value.allFinite()) throw std::domain_error("non-finite value produced in forward pass");
  bool needs = false;
  if (record_) {
    for (Var p : parents) needs = needs || nodes_[static_cast<size_t>(p.id)].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs});
  return Var{static_cast<Index>(nodes_.size()) - 1};
}

void Tape::accumulate(Var v, const Matrix& grad) {
  Node& node = nodes_[static_cast<size_t>(v.id)];
  if (!node.needs_grad) return;
  if (node.grad.size() == 0) {
    node.grad = grad;
  } else {
    node.grad += grad;
  }
}

void Tape::backward(Var loss) {
  if (!record_) throw std::logic_error("backward on a non-recording tape");
  if (value(loss).size() != 1) throw std::invalid_argument("backward expects a scalar loss");
  accumulate(loss, Matrix::Ones(1, 1));
  for (Index id = loss.id; id >= 0; --id) {
    Node& node = nodes_[static_cast<size_t>(id)];
    if (!node.needs_grad || node.grad.size() == 0) continue;
    if (node.backward) {
      const Matrix g = std::move(node.grad);
      node.grad = Matrix();
      node.backward(*this, g);
    } else if (node.sink != nullptr) {
      if (node.sink->size() == 0) *node.sink = Matrix::Zero(node.value.rows(), node.value.cols());
      *node.sink += node.grad;
      node.grad = Matrix();
    }
  }
}

Var matmul(Tape& t, Var a, Var b) {
  return t.record(t.value(a) * t.value(b), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  return t.record(t.value(a) * t.value(b).transpose(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b));
    if (t.requires_grad(b)) t.accumulate(b, g.transpose() * t.value(a));
  });
}

Var add(Tape& t, Var a, Var b) {
  return t.record(t.value(a) + t.value(b), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var add_row(Tape& t, Var a, Var row) {
  if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(a).cols()) {
    throw std::invalid_argument("add_row: row shape mismatch");
  }
  Matrix out = t.value(a);
  out.rowwise() += t.value(row).row(0);
  return t.record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(row, g.colwise().sum());
  });
}

Var add_constant(Tape& t, Var a, const Matrix& c) {
  return t.record(t.value(a) + c, {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var scale(Tape& t, Var a, double s) {
  return t.record(t.value(a) * s, {a}, [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var relu(Tape& t, Var a) {
  return t.record(t.value(a).cwiseMax(0.0), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (t.value(a).array() > 0.0).select(g, 0.0));
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias) {
  auto cache = std::make_shared<LayerNormCache>();
  Matrix out = docwin::layer_norm(t.value(x), t.value(gain).row(0), t.value(bias).row(0), cache.get());
  return t.record(std::move(out), {x, gain, bias}, [x, gain, bias, cache](Tape& t, const Matrix& g) {
    auto [dx, dgain, dbias] = layer_norm_backward(*cache, t.value(gain).row(0), g);
    t.accumulate(x, dx);
    t.accumulate(gain, dgain);
    t.accumulate(bias, dbias);
  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: nothing to concatenate");
  const Index rows = t.value(parts[0]).rows();
  Index cols = 0;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += t.value(p).cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, t.value(p).cols()) = t.value(p);
    at += t.value(p).cols();
  }
  std::vector<Var> copy(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [copy](Tape& t, const Matrix& g) {
    Index at = 0;
    for (Var p : copy) {
      const Index c = t.value(p).cols();
      if (t.requires_grad(p)) t.accumulate(p, g.middleCols(at, c));
      at += c;
    }
  });
}

Var slice_cols(Tape& t, Var a, Index start, Index count) {
  return t.record(t.value(a).middleCols(start, count), {a}, [a, start, count](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(t.value(a).rows(), t.value(a).cols());
    full.middleCols(start, count) = g;
    t.accumulate(a, full);
  });
}

Var gather_rows(Tape& t, Var table, std::span<const int> ids) {
  const Matrix& tab = t.value(table);
  Matrix out(static_cast<Index>(ids.size()), tab.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tab.rows()) throw std::out_of_range("gather_rows: id outside table");
    out.row(static_cast<Index>(i)) = tab.row(ids[i]);
  }
  std::vector<int> copy(ids.begin(), ids.end());
  return t.record(std::move(out), {table}, [table, copy](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(t.value(table).rows(), t.value(table).cols());
    for (size_t i = 0; i < copy.size(); ++i) full.row(copy[i]) += g.row(static_cast<Index>(i));
    t.accumulate(table, full);
  });
}

Var dropout(Tape& t, Var a, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(t.value(a).rows(), t.value(a).cols());
  for (Index i = 0; i < mask.size(); ++i) mask(i) = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  Matrix out = t.value(a).cwiseProduct(mask);
  return t.record(std::move(out), {a}, [a, mask](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(mask)); });
}

Var masked_softmax(Tape& t, Var scores, const Mask& mask) {
  Matrix probs = docwin::masked_softmax(t.value(scores), mask);
  auto keep = std::make_shared<Matrix>(probs);
  return t.record(std::move(probs), {scores}, [scores, keep](Tape& t, const Matrix& g) {
    t.accumulate(scores, softmax_rows_backward(*keep, g));
  });
}

Var log_softmax(Tape& t, Var logits) {
  Matrix out = log_softmax_rows(t.value(logits));
  auto keep = std::make_shared<Matrix>(out);
  return t.record(std::move(out), {logits}, [logits, keep](Tape& t, const Matrix& g) {
    const Matrix probs = keep->array().exp();
    Matrix dx = g - (probs.array().colwise() * g.rowwise().sum().array()).matrix();
    t.accumulate(logits, dx);
  });
}

Var smoothed_nll(Tape& t, Var log_probs, std::vector<int> targets, double smoothing) {
  Matrix out(1, 1);
  out(0, 0) = docwin::smoothed_nll(t.value(log_probs), targets, smoothing);
  return t.record(std::move(out), {log_probs},
                  [log_probs, targets = std::move(targets), smoothing](Tape& t, const Matrix& g) {
                    t.accumulate(log_probs, g(0, 0) * smoothed_nll_backward(t.value(log_probs), targets, smoothing));
                  });
}

Var sum(Tape& t, Var a) {
  Matrix out(1, 1);
  out(0, 0) = t.value(a).sum();
  return t.record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(t.value(a).rows(), t.value(a).cols(), g(0, 0)));
  });
}

Var weighted_sum(Tape& t, Var a, const Matrix& w) {
  Matrix out(1, 1);
  out(0, 0) = t.value(a).cwiseProduct(w).sum();
  return t.record(std::move(out), {a}, [a, w](Tape& t, const Matrix& g) { t.accumulate(a, g(0, 0) * w); });
}

Var range_attention(Tape& t, Var q, Var k, Var v, KeyRanges ranges, Index heads, const BiasInput* bias,
                    std::shared_ptr<RangeAttentionState>* probs_out) {
  auto state = std::make_shared<RangeAttentionState>();
  std::shared_ptr<ScoreBias> score_bias;
  if (bias != nullptr) {
    score_bias = std::make_shared<ScoreBias>(ScoreBias{&t.value(bias->table), bias->radius, bias->origins});
  }
  Matrix out = range_attention_forward(t.value(q), t.value(k), t.value(v), ranges, heads, score_bias.get(), state.get());
  if (probs_out != nullptr) *probs_out = state;
  std::vector<Var> parents{q, k, v};
  Var table = bias != nullptr ? bias->table : Var{};
  if (bias != nullptr) parents.push_back(table);
  return t.record(std::move(out), parents, [q, k, v, table, state, score_bias](Tape& t, const Matrix& g) {
    if (score_bias) score_bias->table = &t.value(table);
    RangeAttentionGrads grads = range_attention_backward(t.value(q), t.value(k), t.value(v), *state, score_bias.get(), g);
    t.accumulate(q, grads.dq);
    t.accumulate(k, grads.dk);
    t.accumulate(v, grads.dv);
    if (score_bias) t.accumulate(table, grads.dbias);
  });
}

namespace {

// Dense I x J bias B[i,j] = table(head, clip(origin_i - j)) with a scatter-add backward.
Var dense_bias(Tape& t, const BiasInput& bias, Index head, Index keys) {
  const Matrix& table = t.value(bias.table);
  const auto rows = static_cast<Index>(bias.origins.size());
  Matrix out(rows, keys);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < keys; ++j) {
      const Index off = std::clamp(bias.origins[static_cast<size_t>(i)] - j, -bias.radius, bias.radius);
      out(i, j) = table(head, off + bias.radius);
    }
  }
  Var tab = bias.table;
  return t.record(std::move(out), {tab}, [tab, head, origins = bias.origins, radius = bias.radius](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(t.value(tab).rows(), t.value(tab).cols());
    for (Index i = 0; i < g.rows(); ++i) {
      for (Index j = 0; j < g.cols(); ++j) {
        const Index off = std::clamp(origins[static_cast<size_t>(i)] - j, -radius, radius);
        d(head, off + radius) += g(i, j);
      }
    }
    t.accumulate(tab, d);
  });
}

}  // namespace

Var dense_attention(Tape& t, Var q, Var k, Var v, const Mask& mask, Index heads, const BiasInput* bias,
                    std::vector<Matrix>* probs_out) {
  const Index width = t.value(q).cols();
  if (heads < 1 || width % heads != 0) throw std::invalid_argument("dense_attention: width not divisible by heads");
  const Index dk = width / heads;
  const Index dv = t.value(v).cols() / heads;
  std::vector<Var> contexts;
  for (Index h = 0; h < heads; ++h) {
    Var qh = slice_cols(t, q, h * dk, dk);
    Var kh = slice_cols(t, k, h * dk, dk);
    Var vh = slice_cols(t, v, h * dv, dv);
    Var scores = scale(t, matmul_nt(t, qh, kh), 1.0 / std::sqrt(static_cast<double>(dk)));
    if (bias != nullptr) scores = add(t, scores, dense_bias(t, *bias, h, t.value(k).rows()));
    Var probs = masked_softmax(t, scores, mask);
    if (probs_out != nullptr) probs_out->push_back(t.value(probs));
    contexts.push_back(matmul(t, probs, vh));
  }
  return heads == 1 ? contexts.front() : concat_cols(t, contexts);
}

}  // namespace docwin::ag
