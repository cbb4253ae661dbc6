#include "docwin/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace docwin {

std::string_view to_string(AttentionVariant variant) {
  switch (variant) {
    case AttentionVariant::Full: return "full";
    case AttentionVariant::Lst: return "lst";
    case AttentionVariant::Window: return "window";
  }
  return "full";
}

AttentionVariant parse_attention_variant(std::string_view name) {
  if (name == "full") return AttentionVariant::Full;
  if (name == "lst") return AttentionVariant::Lst;
  if (name == "window") return AttentionVariant::Window;
  throw std::invalid_argument("unknown attention variant: " + std::string(name));
}

Mask sentence_mask(const SentenceMap& queries, const SentenceMap& keys) {
  if (queries.index.empty() || keys.index.empty()) throw std::invalid_argument("sentence_mask: empty sequence");
  Mask mask(queries.size(), keys.size(), false);
  for (Index i = 0; i < queries.size(); ++i) {
    for (Index j = 0; j < keys.size(); ++j) {
      if (queries.index[static_cast<size_t>(i)] == keys.index[static_cast<size_t>(j)]) mask.set(i, j, true);
    }
  }
  return mask;
}

WindowSpec WindowSpec::identity(Index length, Index radius) {
  WindowSpec spec;
  spec.radius = radius;
  spec.anchors.resize(static_cast<size_t>(length));
  for (Index i = 0; i < length; ++i) spec.anchors[static_cast<size_t>(i)] = i + 1;
  return spec;
}

namespace {

Index limit_for(std::span<const Index> causal_limit, Index query, Index keys) {
  if (causal_limit.empty()) return keys;
  return std::min(causal_limit[static_cast<size_t>(query)], keys);
}

void check_causal(std::span<const Index> causal_limit, Index queries) {
  if (!causal_limit.empty() && static_cast<Index>(causal_limit.size()) != queries) {
    throw std::invalid_argument("causal limit must have one entry per query");
  }
}

}  // namespace

KeyRanges full_ranges(Index queries, Index keys, std::span<const Index> causal_limit) {
  check_causal(causal_limit, queries);
  KeyRanges ranges(static_cast<size_t>(queries));
  for (Index i = 0; i < queries; ++i) {
    ranges[static_cast<size_t>(i)] = {0, limit_for(causal_limit, i, keys)};
    if (ranges[static_cast<size_t>(i)].size() <= 0) throw EmptyAttentionRow();
  }
  return ranges;
}

KeyRanges window_ranges(const WindowSpec& spec, Index keys, std::span<const Index> causal_limit) {
  if (spec.radius < 0) throw std::invalid_argument("window radius must be non-negative");
  if (keys < 1) throw std::invalid_argument("window attention needs at least one key");
  const auto queries = static_cast<Index>(spec.anchors.size());
  check_causal(causal_limit, queries);
  KeyRanges ranges(static_cast<size_t>(queries));
  for (Index i = 0; i < queries; ++i) {
    const Index anchor = std::clamp<Index>(spec.anchors[static_cast<size_t>(i)], 1, keys);
    const Index first = std::max<Index>(anchor - spec.radius, 1);
    const Index last = std::min(anchor + spec.radius, limit_for(causal_limit, i, keys));
    if (last < first) throw EmptyAttentionRow();
    ranges[static_cast<size_t>(i)] = {first - 1, last};
  }
  return ranges;
}

KeyRanges sentence_ranges(const SentenceMap& queries, const SentenceMap& keys, std::span<const Index> causal_limit) {
  if (queries.index.empty() || keys.index.empty()) throw std::invalid_argument("sentence_ranges: empty sequence");
  check_causal(causal_limit, queries.size());
  KeyRanges ranges(static_cast<size_t>(queries.size()));
  for (Index i = 0; i < queries.size(); ++i) {
    const Index s = queries.index[static_cast<size_t>(i)];
    const auto lo = std::lower_bound(keys.index.begin(), keys.index.end(), s);
    const auto hi = std::upper_bound(keys.index.begin(), keys.index.end(), s);
    const Index begin = lo - keys.index.begin();
    const Index end = std::min<Index>(hi - keys.index.begin(), limit_for(causal_limit, i, keys.size()));
    if (end <= begin) throw EmptyAttentionRow();
    ranges[static_cast<size_t>(i)] = {begin, end};
  }
  return ranges;
}

Mask ranges_to_mask(const KeyRanges& ranges, Index keys) {
  Mask mask(static_cast<Index>(ranges.size()), keys, false);
  for (Index i = 0; i < mask.rows(); ++i) {
    for (Index j = ranges[static_cast<size_t>(i)].begin; j < ranges[static_cast<size_t>(i)].end; ++j) mask.set(i, j, true);
  }
  return mask;
}

Mask window_mask(const WindowSpec& spec, Index keys, std::span<const Index> causal_limit) {
  const auto queries = static_cast<Index>(spec.anchors.size());
  check_causal(causal_limit, queries);
  Mask mask(queries, keys, false);
  for (Index i = 0; i < queries; ++i) {
    const Index b = std::clamp<Index>(spec.anchors[static_cast<size_t>(i)], 1, keys);
    for (Index j = 1; j <= keys; ++j) {
      const bool in_window = b - spec.radius <= j && j <= b + spec.radius;
      const bool causal_ok = causal_limit.empty() || j <= causal_limit[static_cast<size_t>(i)];
      if (in_window && causal_ok) mask.set(i, j - 1, true);
    }
  }
  return mask;
}

std::vector<Index> causal_limits(Index length) {
  std::vector<Index> limits(static_cast<size_t>(length));
  for (Index i = 0; i < length; ++i) limits[static_cast<size_t>(i)] = i + 1;
  return limits;
}

Matrix relative_bias_matrix(const RelativeBias& bias, Index head, std::span<const Index> anchors, Index keys) {
  Matrix out(static_cast<Index>(anchors.size()), keys);
  for (Index i = 0; i < out.rows(); ++i) {
    for (Index j = 0; j < keys; ++j) out(i, j) = bias(head, anchors[static_cast<size_t>(i)] - (j + 1));
  }
  return out;
}

namespace {

void check_qkv(const Matrix& q, const Matrix& k, const Matrix& v, Index heads) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) throw std::invalid_argument("attention: inner dimensions disagree");
  if (heads < 1 || q.cols() % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
  if (v.cols() % heads != 0) throw std::invalid_argument("attention: value width not divisible by heads");
}

double bias_for(const ScoreBias* bias, Index head, Index query, Index key) {
  if (bias == nullptr || bias->table == nullptr) return 0.0;
  const Index offset = std::clamp(bias->origins[static_cast<size_t>(query)] - key, -bias->radius, bias->radius);
  return (*bias->table)(head, offset + bias->radius);
}

}  // namespace

Matrix range_attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, const KeyRanges& ranges,
                               Index heads, const ScoreBias* bias, RangeAttentionState* state) {
  check_qkv(q, k, v, heads);
  if (static_cast<Index>(ranges.size()) != q.rows()) throw std::invalid_argument("attention: one key range per query");
  if (bias != nullptr && bias->table != nullptr) {
    if (bias->table->rows() != heads || bias->table->cols() != 2 * bias->radius + 1) {
      throw std::invalid_argument("attention: bias table must be heads x (2w+1)");
    }
    if (static_cast<Index>(bias->origins.size()) != q.rows()) throw std::invalid_argument("attention: bias origins");
  }
  const Index dk = q.cols() / heads;
  const Index dv = v.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<Index> offsets(ranges.size());
  Index per_head = 0;
  for (size_t i = 0; i < ranges.size(); ++i) {
    if (ranges[i].begin < 0 || ranges[i].end > k.rows() || ranges[i].size() <= 0) throw EmptyAttentionRow();
    offsets[i] = per_head;
    per_head += ranges[i].size();
  }
  std::vector<double> probs(static_cast<size_t>(per_head * heads));

  Matrix out = Matrix::Zero(q.rows(), v.cols());
  for (Index h = 0; h < heads; ++h) {
    for (Index i = 0; i < q.rows(); ++i) {
      const KeyRange r = ranges[static_cast<size_t>(i)];
      double* p = probs.data() + h * per_head + offsets[static_cast<size_t>(i)];
      Vector scores = k.block(r.begin, h * dk, r.size(), dk) * q.row(i).segment(h * dk, dk).transpose();
      scores *= scale;
      for (Index j = 0; j < r.size(); ++j) scores(j) += bias_for(bias, h, i, r.begin + j);
      const double m = scores.maxCoeff();
      double total = 0.0;
      for (Index j = 0; j < r.size(); ++j) {
        p[j] = std::exp(scores(j) - m);
        total += p[j];
      }
      for (Index j = 0; j < r.size(); ++j) p[j] /= total;
      const Eigen::Map<const Vector> pv(p, r.size());
      out.row(i).segment(h * dv, dv) = pv.transpose() * v.block(r.begin, h * dv, r.size(), dv);
    }
  }
  if (state != nullptr) {
    state->ranges = ranges;
    state->heads = heads;
    state->offsets = std::move(offsets);
    state->per_head = per_head;
    state->probs = std::move(probs);
  }
  return out;
}

RangeAttentionGrads range_attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                                             const RangeAttentionState& state, const ScoreBias* bias,
                                             const Matrix& grad_out) {
  const Index heads = state.heads;
  const Index dk = q.cols() / heads;
  const Index dv = v.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  RangeAttentionGrads g;
  g.dq = Matrix::Zero(q.rows(), q.cols());
  g.dk = Matrix::Zero(k.rows(), k.cols());
  g.dv = Matrix::Zero(v.rows(), v.cols());
  const bool has_bias = bias != nullptr && bias->table != nullptr;
  if (has_bias) g.dbias = Matrix::Zero(bias->table->rows(), bias->table->cols());

  for (Index h = 0; h < heads; ++h) {
    for (Index i = 0; i < q.rows(); ++i) {
      const KeyRange r = state.ranges[static_cast<size_t>(i)];
      const std::span<const double> p = state.row(h, i);
      const Eigen::Map<const Vector> pv(p.data(), r.size());
      const auto go = grad_out.row(i).segment(h * dv, dv);
      const auto vb = v.block(r.begin, h * dv, r.size(), dv);
      g.dv.block(r.begin, h * dv, r.size(), dv).noalias() += pv * go;
      const Vector dp = vb * go.transpose();
      const double dot = pv.dot(dp);
      const Vector ds = pv.cwiseProduct((dp.array() - dot).matrix());
      g.dq.row(i).segment(h * dk, dk).noalias() += scale * (ds.transpose() * k.block(r.begin, h * dk, r.size(), dk));
      g.dk.block(r.begin, h * dk, r.size(), dk).noalias() += scale * ds * q.row(i).segment(h * dk, dk);
      if (has_bias) {
        for (Index j = 0; j < r.size(); ++j) {
          const Index offset =
              std::clamp(bias->origins[static_cast<size_t>(i)] - (r.begin + j), -bias->radius, bias->radius);
          g.dbias(h, offset + bias->radius) += ds(j);
        }
      }
    }
  }
  return g;
}

Matrix full_attention(const Matrix& q, const Matrix& k, const Matrix& v, const Mask* extra_mask,
                      const Matrix* score_bias) {
  check_qkv(q, k, v, 1);
  Matrix scores = (q * k.transpose()) / std::sqrt(static_cast<double>(q.cols()));
  if (score_bias != nullptr) scores += *score_bias;
  const Mask mask = extra_mask != nullptr ? *extra_mask : Mask(q.rows(), k.rows());
  return masked_softmax(scores, mask) * v;
}

Matrix lst_attention(const Matrix& q, const Matrix& k, const Matrix& v, const SentenceMap& sentences,
                     const Matrix& combine) {
  const Index d = v.cols();
  if (combine.rows() != 2 * d || combine.cols() != d) throw std::invalid_argument("lst_attention: combine must be 2d x d");
  const Mask restricted = sentence_mask(sentences, sentences);
  Matrix both(q.rows(), 2 * d);
  both.leftCols(d) = full_attention(q, k, v, &restricted);
  both.rightCols(d) = full_attention(q, k, v);
  return both * combine;
}

Matrix window_attention(const Matrix& q, const Matrix& k, const Matrix& v, const WindowSpec& spec,
                        const WindowAttentionOptions& options) {
  if (static_cast<Index>(spec.anchors.size()) != q.rows()) throw std::invalid_argument("window_attention: one anchor per query");
  const KeyRanges ranges = window_ranges(spec, k.rows(), options.causal_limit);
  Matrix single_head_table;
  ScoreBias bias;
  if (options.bias != nullptr) {
    single_head_table = options.bias->table.row(options.bias_head);
    bias.table = &single_head_table;
    bias.radius = options.bias->radius;
    bias.origins.reserve(spec.anchors.size());
    for (Index b : spec.anchors) bias.origins.push_back(b - 1);
  }
  RangeAttentionState state;
  Matrix out = range_attention_forward(q, k, v, ranges, 1, options.bias != nullptr ? &bias : nullptr, &state);
  if (options.cost != nullptr) {
    *options.cost = CostReport{"window", q.rows(), k.rows(), state.pairs(), state.pairs()};
  }
  return out;
}

CostReport attention_cost(Index queries, Index keys, AttentionVariant variant, std::optional<Index> radius,
                          Index heads) {
  if (queries < 1 || keys < 1) throw std::invalid_argument("attention_cost: sizes must be positive");
  CostReport report{std::string(to_string(variant)), queries, keys, 0, 0};
  if (variant == AttentionVariant::Window) {
    if (!radius || *radius < 0) throw std::invalid_argument("attention_cost: window variant needs w");
    for (Index i = 1; i <= queries; ++i) {
      const Index b = std::min(i, keys);
      report.pairs += std::min(b + *radius, keys) - std::max<Index>(b - *radius, 1) + 1;
    }
  } else {
    report.pairs = queries * keys;
  }
  report.activation_elements = report.pairs * heads;
  return report;
}

Index effective_context(Index radius, Index enc_layers, Index dec_layers) {
  if (radius < 1 || enc_layers < 1 || dec_layers < 1) throw std::invalid_argument("effective_context: arguments must be >= 1");
  return 2 * radius * enc_layers + radius * dec_layers;
}

}  // namespace docwin
