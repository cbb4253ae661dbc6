#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "docwin/numerics.hpp"

namespace docwin {

enum class AttentionVariant { Full, Lst, Window };

std::string_view to_string(AttentionVariant variant);
AttentionVariant parse_attention_variant(std::string_view name);

/// Sentence index s(i) per position, 1-based and non-decreasing.
struct SentenceMap {
  std::vector<Index> index;

  [[nodiscard]] Index size() const { return static_cast<Index>(index.size()); }
  [[nodiscard]] Index sentence_count() const { return index.empty() ? 0 : index.back(); }
};

/// M[i,j] allows (i,j) iff both positions belong to the same sentence.
Mask sentence_mask(const SentenceMap& queries, const SentenceMap& keys);

/// Per-query key anchors b_i (1-based) and a window radius w.
struct WindowSpec {
  Index radius = 1;
  std::vector<Index> anchors;

  static WindowSpec identity(Index length, Index radius);
};

/// Learnable scalar r_delta per head for offsets delta in [-w, w].
///
/// Offsets are measured from the query anchor: delta = b_i - j. For
/// self-attention the anchor is the query position, so delta = i - j.
/// Offsets beyond the radius are clipped to the table edge.
struct RelativeBias {
  Index radius = 0;
  Matrix table;  // heads x (2 * radius + 1)

  RelativeBias() = default;
  RelativeBias(Index heads, Index radius) : radius(radius), table(Matrix::Zero(heads, 2 * radius + 1)) {}

  [[nodiscard]] Index column(Index offset) const { return std::clamp(offset, -radius, radius) + radius; }
  [[nodiscard]] double operator()(Index head, Index offset) const { return table(head, column(offset)); }
};

struct CostReport {
  std::string variant;
  Index queries = 0;
  Index keys = 0;
  Index pairs = 0;
  Index activation_elements = 0;
};

/// Half-open, 0-based key interval attended by one query.
struct KeyRange {
  Index begin = 0;
  Index end = 0;

  [[nodiscard]] Index size() const { return end - begin; }
  bool operator==(const KeyRange&) const = default;
};
using KeyRanges = std::vector<KeyRange>;

// `causal_limit` is optional; when non-empty, query i may only see keys j <= causal_limit[i] (1-based).

KeyRanges full_ranges(Index queries, Index keys, std::span<const Index> causal_limit = {});
/// Clamped window [b_i - w, b_i + w] intersected with [1, J]; throws EmptyAttentionRow if a row is empty.
KeyRanges window_ranges(const WindowSpec& spec, Index keys, std::span<const Index> causal_limit = {});
/// Keys of the query's own sentence; sentences must be contiguous.
KeyRanges sentence_ranges(const SentenceMap& queries, const SentenceMap& keys, std::span<const Index> causal_limit = {});

Mask ranges_to_mask(const KeyRanges& ranges, Index keys);

/// Dense mask allowing b_i - w <= j <= b_i + w, built entry by entry as a reference for the gathered path.
Mask window_mask(const WindowSpec& spec, Index keys, std::span<const Index> causal_limit = {});

/// Causal limits for decoder self-attention: query i sees keys 1..i.
std::vector<Index> causal_limits(Index length);

/// Dense additive score bias B[i,j] = r[head](b_i - j), the reference form of the gathered bias.
Matrix relative_bias_matrix(const RelativeBias& bias, Index head, std::span<const Index> anchors, Index keys);

/// Scalar bias per head plus the 0-based origin each query measures offsets from.
struct ScoreBias {
  const Matrix* table = nullptr;
  Index radius = 0;
  std::vector<Index> origins;
};

/// Probabilities kept by the gathered forward pass for the backward pass.
struct RangeAttentionState {
  KeyRanges ranges;
  Index heads = 1;
  std::vector<Index> offsets;  // start of query i's probabilities inside one head block
  Index per_head = 0;
  std::vector<double> probs;   // heads blocks of per_head entries

  [[nodiscard]] std::span<const double> row(Index head, Index query) const {
    return {probs.data() + head * per_head + offsets[static_cast<size_t>(query)],
            static_cast<size_t>(ranges[static_cast<size_t>(query)].size())};
  }
  [[nodiscard]] Index pairs() const { return per_head; }
};

/// Multi-head attention that only touches the keys listed in `ranges`.
///
/// Q is I x D, K and V are J x D with D divisible by `heads`; scores are
/// scaled by 1/sqrt(D / heads). Memory is proportional to the number of
/// listed pairs, never I x J.
Matrix range_attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, const KeyRanges& ranges,
                               Index heads, const ScoreBias* bias = nullptr, RangeAttentionState* state = nullptr);

struct RangeAttentionGrads {
  Matrix dq;
  Matrix dk;
  Matrix dv;
  Matrix dbias;  // same shape as the bias table, empty without bias
};

RangeAttentionGrads range_attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                                             const RangeAttentionState& state, const ScoreBias* bias,
                                             const Matrix& grad_out);

/// softmax(Q K^T / sqrt(d) + score_bias + M) V using a materialised I x J score matrix.
Matrix full_attention(const Matrix& q, const Matrix& k, const Matrix& v, const Mask* extra_mask = nullptr,
                      const Matrix* score_bias = nullptr);

/// Sentence-restricted and unrestricted contexts, concatenated and projected by `combine` (2d x d).
Matrix lst_attention(const Matrix& q, const Matrix& k, const Matrix& v, const SentenceMap& sentences,
                     const Matrix& combine);

struct WindowAttentionOptions {
  const RelativeBias* bias = nullptr;
  Index bias_head = 0;
  std::span<const Index> causal_limit;
  CostReport* cost = nullptr;
};

/// Single-head window attention over gathered key subsets.
Matrix window_attention(const Matrix& q, const Matrix& k, const Matrix& v, const WindowSpec& spec,
                        const WindowAttentionOptions& options = {});

/// Pair counts for one attention call; window variants use identity anchors.
CostReport attention_cost(Index queries, Index keys, AttentionVariant variant, std::optional<Index> radius = {},
                          Index heads = 1);

/// Tokens reachable through stacked windowed layers: 2 w L_enc + w L_dec.
Index effective_context(Index radius, Index enc_layers, Index dec_layers);

}  // namespace docwin
