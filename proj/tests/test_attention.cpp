#include <gtest/gtest.h>

#include <random>

#include "docwin/attention.hpp"

using namespace docwin;

namespace {

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m(i) = d(rng);
  return m;
}

// Nested-loop attention with an explicit allowed predicate.
template <typename Allowed>
Matrix loop_attention(const Matrix& q, const Matrix& k, const Matrix& v, Allowed allowed) {
  Matrix out = Matrix::Zero(q.rows(), v.cols());
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  for (Index i = 0; i < q.rows(); ++i) {
    std::vector<double> w(static_cast<size_t>(k.rows()), 0.0);
    double z = 0.0;
    for (Index j = 0; j < k.rows(); ++j) {
      if (!allowed(i, j)) continue;
      double s = 0.0;
      for (Index c = 0; c < q.cols(); ++c) s += q(i, c) * k(j, c);
      w[static_cast<size_t>(j)] = std::exp(s * scale);
      z += w[static_cast<size_t>(j)];
    }
    for (Index j = 0; j < k.rows(); ++j) {
      for (Index c = 0; c < v.cols(); ++c) out(i, c) += w[static_cast<size_t>(j)] / z * v(j, c);
    }
  }
  return out;
}

double max_abs(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST(SentenceMask, SingleSentenceIsFull) {
  const SentenceMap s{{1, 1, 1}};
  EXPECT_EQ(sentence_mask(s, s).count_allowed(), 9);
}

TEST(SentenceMask, MixedSentences) {
  const Mask m = sentence_mask(SentenceMap{{1, 1, 2}}, SentenceMap{{1, 2, 2}});
  const double inf = std::numeric_limits<double>::infinity();
  Matrix expected(3, 3);
  expected << 0, -inf, -inf, 0, -inf, -inf, -inf, 0, 0;
  EXPECT_EQ(m.to_additive(), expected);
}

TEST(SentenceMask, OneTokenSentencesGiveIdentityPattern) {
  const SentenceMap s{{1, 2, 3}};
  const Mask m = sentence_mask(s, s);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) EXPECT_EQ(m.allowed(i, j), i == j);
  }
  EXPECT_THROW(sentence_mask(SentenceMap{}, s), std::invalid_argument);
}

TEST(FullAttention, SingleKeyReturnsItsValue) {
  std::mt19937_64 rng(1);
  const Matrix q = random_matrix(3, 2, rng);
  const Matrix k = random_matrix(1, 2, rng);
  const Matrix v = random_matrix(1, 2, rng);
  const Matrix out = full_attention(q, k, v);
  for (Index i = 0; i < 3; ++i) EXPECT_LE((out.row(i) - v.row(0)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(FullAttention, ZeroScoresAverageValues) {
  std::mt19937_64 rng(2);
  const Matrix q = Matrix::Zero(2, 3);
  const Matrix k = random_matrix(4, 3, rng);
  const Matrix v = random_matrix(4, 2, rng);
  const Matrix out = full_attention(q, k, v);
  for (Index i = 0; i < 2; ++i) EXPECT_LE((out.row(i) - v.colwise().mean()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(FullAttention, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(3);
  const Matrix q = random_matrix(3, 4, rng);
  const Matrix k = random_matrix(4, 4, rng);
  const Matrix v = random_matrix(4, 2, rng);
  EXPECT_LE(max_abs(full_attention(q, k, v), loop_attention(q, k, v, [](Index, Index) { return true; })), 1e-12);
}

TEST(LstAttention, OneSentenceWithIdentityTopReducesToFull) {
  std::mt19937_64 rng(4);
  const Matrix x = random_matrix(4, 3, rng);
  Matrix combine = Matrix::Zero(6, 3);
  combine.topRows(3) = Matrix::Identity(3, 3);
  const Matrix out = lst_attention(x, x, x, SentenceMap{{1, 1, 1, 1}}, combine);
  EXPECT_EQ(out, full_attention(x, x, x));
  EXPECT_EQ(lst_attention(x, x, x, SentenceMap{{1, 1, 2, 2}}, Matrix::Zero(6, 3)), Matrix::Zero(4, 3));
  EXPECT_THROW(lst_attention(x, x, x, SentenceMap{{1, 1, 1, 1}}, Matrix::Zero(3, 3)), std::invalid_argument);
}

TEST(LstAttention, MatchesTwoAttentionsThenProjection) {
  std::mt19937_64 rng(5);
  const Matrix q = random_matrix(5, 3, rng);
  const Matrix k = random_matrix(5, 3, rng);
  const Matrix v = random_matrix(5, 3, rng);
  const Matrix combine = random_matrix(6, 3, rng);
  const SentenceMap s{{1, 1, 1, 2, 2}};
  const Matrix restricted =
      loop_attention(q, k, v, [&](Index i, Index j) { return s.index[static_cast<size_t>(i)] == s.index[static_cast<size_t>(j)]; });
  const Matrix full = loop_attention(q, k, v, [](Index, Index) { return true; });
  const Matrix expected = restricted * combine.topRows(3) + full * combine.bottomRows(3);
  EXPECT_LE(max_abs(lst_attention(q, k, v, s, combine), expected), 1e-12);
}

TEST(WindowAttention, WideWindowEqualsFull) {
  std::mt19937_64 rng(6);
  const Matrix q = random_matrix(5, 4, rng);
  const Matrix k = random_matrix(5, 4, rng);
  const Matrix v = random_matrix(5, 3, rng);
  EXPECT_LE(max_abs(window_attention(q, k, v, WindowSpec::identity(5, 5)), full_attention(q, k, v)), 1e-12);
}

TEST(WindowAttention, ThreeByThreeRadiusOne) {
  const KeyRanges r = window_ranges(WindowSpec::identity(3, 1), 3);
  EXPECT_EQ(r[0], (KeyRange{0, 2}));
  EXPECT_EQ(r[1], (KeyRange{0, 3}));
  EXPECT_EQ(r[2], (KeyRange{1, 3}));
  std::mt19937_64 rng(7);
  const Matrix x = random_matrix(3, 2, rng);
  CostReport cost;
  WindowAttentionOptions o;
  o.cost = &cost;
  (void)window_attention(x, x, x, WindowSpec::identity(3, 1), o);
  EXPECT_EQ(cost.pairs, 7);
}

TEST(WindowAttention, ZeroBiasChangesNothing) {
  std::mt19937_64 rng(8);
  const Matrix x = random_matrix(6, 4, rng);
  const RelativeBias bias(1, 2);
  WindowAttentionOptions o;
  o.bias = &bias;
  const WindowSpec spec = WindowSpec::identity(6, 2);
  EXPECT_EQ(window_attention(x, x, x, spec, o), window_attention(x, x, x, spec));
}

TEST(WindowAttention, EquivalentToMaskedFullOnRandomInstances) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Index I = std::uniform_int_distribution<Index>(1, 12)(rng);
    const Index J = std::uniform_int_distribution<Index>(1, 12)(rng);
    const Index w = std::uniform_int_distribution<Index>(1, 4)(rng);
    WindowSpec spec{w, {}};
    for (Index i = 0; i < I; ++i) spec.anchors.push_back(std::uniform_int_distribution<Index>(-2, J + 2)(rng));
    const Matrix q = random_matrix(I, 3, rng);
    const Matrix k = random_matrix(J, 3, rng);
    const Matrix v = random_matrix(J, 2, rng);
    RelativeBias bias(1, w);
    bias.table = random_matrix(1, 2 * w + 1, rng);
    WindowAttentionOptions o;
    o.bias = &bias;
    const Mask mask = window_mask(spec, J);
    const Matrix dense_bias = relative_bias_matrix(bias, 0, spec.anchors, J);
    EXPECT_LE(max_abs(window_attention(q, k, v, spec, o), full_attention(q, k, v, &mask, &dense_bias)), 1e-12);
  }
}

TEST(WindowAttention, LocalityAndCausality) {
  std::mt19937_64 rng(10);
  const Index L = 10;
  const Matrix q = random_matrix(L, 4, rng);
  const Matrix k = random_matrix(L, 4, rng);
  const Matrix v = random_matrix(L, 4, rng);
  const WindowSpec spec = WindowSpec::identity(L, 2);
  const Matrix base = window_attention(q, k, v, spec);
  Matrix k2 = k;
  Matrix v2 = v;
  k2.row(9) *= -3.0;
  v2.row(9).array() += 5.0;
  const Matrix moved = window_attention(q, k2, v2, spec);
  for (Index i = 0; i < 7; ++i) EXPECT_EQ(moved.row(i), base.row(i));

  const std::vector<Index> limits = causal_limits(L);
  WindowAttentionOptions o;
  o.causal_limit = limits;
  const Matrix causal = window_attention(q, k, v, spec, o);
  for (Index j = 1; j < L; ++j) {
    Matrix kj = k;
    Matrix vj = v;
    kj.row(j).array() += 1.0;
    vj.row(j).array() -= 2.0;
    const Matrix perturbed = window_attention(q, kj, vj, spec, o);
    for (Index i = 0; i < j; ++i) EXPECT_EQ(perturbed.row(i), causal.row(i));
  }
}

TEST(WindowAttention, EmptyRowIsReported) {
  WindowSpec spec{1, {5}};
  const std::vector<Index> limit{1};
  EXPECT_THROW(window_ranges(spec, 6, limit), EmptyAttentionRow);
}

TEST(AttentionCost, FullAndWindowCounts) {
  EXPECT_EQ(attention_cost(100, 100, AttentionVariant::Full).pairs, 10000);
  EXPECT_EQ(attention_cost(100, 100, AttentionVariant::Lst).pairs, 10000);
  Index enumerated = 0;
  for (Index i = 1; i <= 100; ++i) {
    for (Index j = 1; j <= 100; ++j) enumerated += std::abs(i - j) <= 10 ? 1 : 0;
  }
  EXPECT_EQ(attention_cost(100, 100, AttentionVariant::Window, 10).pairs, enumerated);
  EXPECT_EQ(enumerated, 1990);
  EXPECT_THROW(attention_cost(10, 10, AttentionVariant::Window), std::invalid_argument);
}

TEST(AttentionCost, BoundedAndMonotoneInRadius) {
  Index previous = 0;
  for (Index w = 1; w <= 40; ++w) {
    const Index pairs = attention_cost(64, 64, AttentionVariant::Window, w).pairs;
    EXPECT_LE(pairs, 64 * (2 * w + 1));
    EXPECT_GE(pairs, previous);
    previous = pairs;
  }
}

TEST(AttentionCost, GrowthShapeAcrossLengths) {
  const Index lengths[] = {736, 1472, 2208};
  const Index full0 = attention_cost(736, 736, AttentionVariant::Full).pairs;
  EXPECT_EQ(attention_cost(1472, 1472, AttentionVariant::Full).pairs, 4 * full0);
  EXPECT_EQ(attention_cost(2208, 2208, AttentionVariant::Full).pairs, 9 * full0);
  for (Index w : {10, 20}) {
    const double base = static_cast<double>(attention_cost(lengths[0], lengths[0], AttentionVariant::Window, w).pairs);
    const double r2 = attention_cost(lengths[1], lengths[1], AttentionVariant::Window, w).pairs / base;
    const double r3 = attention_cost(lengths[2], lengths[2], AttentionVariant::Window, w).pairs / base;
    EXPECT_NEAR(r2, 2.0, 0.03);
    EXPECT_NEAR(r3, 3.0, 0.05);
  }
}

TEST(EffectiveContext, Formula) {
  EXPECT_EQ(effective_context(20, 6, 6), 360);
  EXPECT_EQ(effective_context(1, 1, 1), 3);
  EXPECT_EQ(effective_context(10, 6, 6), 180);
  EXPECT_THROW(effective_context(0, 1, 1), std::invalid_argument);
}
