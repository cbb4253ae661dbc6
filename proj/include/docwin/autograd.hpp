#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "docwin/attention.hpp"
#include "docwin/numerics.hpp"

namespace docwin::ag {

/// Handle to a node on a Tape.
struct Var {
  Index id = -1;
  [[nodiscard]] bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over dense matrices.
///
/// Nodes are appended in evaluation order, so walking them backwards is a
/// valid topological order. A tape built with `record = false` keeps values
/// only and rejects `backward`.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  explicit Tape(bool record = true) : record_(record) {}

  Var constant(Matrix value);
  /// Leaf whose gradient is added into `*grad_sink` by backward(); null sink means no gradient.
  Var leaf(Matrix value, Matrix* grad_sink);

  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var record(Matrix value, std::span<const Var> parents, Backward backward);

  [[nodiscard]] const Matrix& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].needs_grad; }
  [[nodiscard]] bool recording() const { return record_; }
  [[nodiscard]] Index size() const { return static_cast<Index>(nodes_.size()); }

  void accumulate(Var v, const Matrix& grad);

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 node and propagates to every leaf sink.
  void backward(Var loss);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Matrix* sink = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  bool record_;
};

Var matmul(Tape& t, Var a, Var b);
/// a * b^T
Var matmul_nt(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
/// Adds a 1 x n row to every row of a.
Var add_row(Tape& t, Var a, Var row);
Var add_constant(Tape& t, Var a, const Matrix& c);
Var scale(Tape& t, Var a, double s);
Var relu(Tape& t, Var a);
Var layer_norm(Tape& t, Var x, Var gain, Var bias);
Var concat_cols(Tape& t, std::span<const Var> parts);
Var slice_cols(Tape& t, Var a, Index start, Index count);
/// Rows of `table` selected by `ids`.
Var gather_rows(Tape& t, Var table, std::span<const int> ids);
/// Inverted dropout; identity when rate == 0.
Var dropout(Tape& t, Var a, double rate, std::mt19937_64& rng);
Var masked_softmax(Tape& t, Var scores, const Mask& mask);
Var log_softmax(Tape& t, Var logits);
/// Summed label-smoothed NLL of row-wise log-probabilities; 1 x 1.
Var smoothed_nll(Tape& t, Var log_probs, std::vector<int> targets, double smoothing);
Var sum(Tape& t, Var a);
/// sum(a .* w) for a constant w; 1 x 1.
Var weighted_sum(Tape& t, Var a, const Matrix& w);

/// Optional learnable relative bias for an attention call.
struct BiasInput {
  Var table;  // heads x (2 * radius + 1)
  Index radius = 0;
  std::vector<Index> origins;  // 0-based per query
};

/// Gathered multi-head attention; see range_attention_forward.
///
/// When `probs_out` is non-null the per-head probabilities are copied out for
/// diagnostics.
Var range_attention(Tape& t, Var q, Var k, Var v, KeyRanges ranges, Index heads, const BiasInput* bias = nullptr,
                    std::shared_ptr<RangeAttentionState>* probs_out = nullptr);

/// Dense reference path: per head masked_softmax(Q K^T / sqrt(dk) + B + M) V.
Var dense_attention(Tape& t, Var q, Var k, Var v, const Mask& mask, Index heads, const BiasInput* bias = nullptr,
                    std::vector<Matrix>* probs_out = nullptr);

}  // namespace docwin::ag
