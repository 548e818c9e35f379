#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "saccade/attention.hpp"
#include "saccade/gradcheck.hpp"

using namespace saccade;
using saccade::testing::random_tensor;

namespace {

// Per-position loop over the footprint with a masked softmax.
Tensor aggregate_oracle(const Tensor& q, const Tensor& k, const Tensor& v, int R) {
  const int C = q.dim(0), H = q.dim(1), W = q.dim(2), p = R / 2;
  Tensor z(q.shape());
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double m = -1e300;
        for (int dy = -p; dy <= p; ++dy)
          for (int dx = -p; dx <= p; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= H || xx >= W) continue;
            m = std::max(m, q.at(c, y, x) * k.at(c, yy, xx));
          }
        double den = 0, num = 0;
        for (int dy = -p; dy <= p; ++dy)
          for (int dx = -p; dx <= p; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= H || xx >= W) continue;
            const double e = std::exp(q.at(c, y, x) * k.at(c, yy, xx) - m);
            den += e;
            num += e * v.at(c, yy, xx);
          }
        z.at(c, y, x) = num / den;
      }
  return z;
}

}  // namespace

TEST(PairwiseAttention, ExtentOneReturnsValues) {
  Rng rng(1);
  AttentionProjections proj("a", 3);
  proj.init(rng);
  Tape tape;
  Var x = tape.constant(random_tensor({3, 4, 4}, rng));
  PairwiseOutput out = pairwise_attention(tape, x, proj, 1);
  Tensor v = proj.value.forward(tape, x).value();
  for (size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(out.z.value()[i], v[i], 1e-15);
  for (const LocalAttention& l : out.locals) {
    for (double a : l.weights.data()) EXPECT_EQ(a, 1.0);
  }
}

TEST(PairwiseAttention, ConstantInputGivesUniformInteriorWeights) {
  AttentionProjections proj("a", 2);
  for (Conv2d* c : {&proj.query, &proj.key, &proj.value}) {
    c->weight.value.fill(0.3);
    c->bias.value.fill(0.1);
  }
  Tape tape;
  PairwiseOutput out =
      pairwise_attention(tape, tape.constant(Tensor({2, 5, 5}, 0.7)), proj, 3);
  ASSERT_EQ(out.locals.size(), 25u);
  for (const LocalAttention& l : out.locals) {
    const bool interior = l.top >= 0 && l.left >= 0 && l.top + 3 <= 5 && l.left + 3 <= 5;
    if (!interior) continue;
    for (double a : l.weights.data()) EXPECT_NEAR(a, 1.0 / 9.0, 1e-15);
  }
}

TEST(PairwiseAttention, MatchesPerPositionOracle) {
  Rng rng(2);
  Tensor q = random_tensor({4, 6, 6}, rng, -2, 2);
  Tensor k = random_tensor({4, 6, 6}, rng, -2, 2);
  Tensor v = random_tensor({4, 6, 6}, rng, -2, 2);
  Tape tape;
  std::vector<LocalAttention> locals;
  Var z = pairwise_aggregate(tape.constant(q), tape.constant(k), tape.constant(v), 3, &locals);
  Tensor want = aggregate_oracle(q, k, v, 3);
  for (size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(z.value()[i], want[i], 1e-10);
  for (const LocalAttention& l : locals) {
    for (size_t c = 0; c < 4; ++c) {
      double s = 0;
      for (size_t j = 0; j < 9; ++j) {
        const double a = l.weights[c * 9 + j];
        EXPECT_GE(a, 0.0);
        s += a;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(PairwiseAttention, LogitShiftInvariance) {
  // With a query constant per channel, shifting every key by d adds q*d to
  // each logit in a footprint.
  Rng rng(3);
  Tensor q({2, 5, 5});
  for (size_t c = 0; c < 2; ++c)
    for (size_t i = 0; i < 25; ++i) q[c * 25 + i] = 0.5 + c;
  Tensor k = random_tensor({2, 5, 5}, rng), v = random_tensor({2, 5, 5}, rng);
  Tensor k2 = k;
  for (double& x : k2.data()) x += 3.0;
  Tape tape;
  std::vector<LocalAttention> la, lb;
  Var za = pairwise_aggregate(tape.constant(q), tape.constant(k), tape.constant(v), 3, &la);
  Var zb = pairwise_aggregate(tape.constant(q), tape.constant(k2), tape.constant(v), 3, &lb);
  for (size_t i = 0; i < za.size(); ++i) EXPECT_NEAR(za.value()[i], zb.value()[i], 1e-9);
  for (size_t i = 0; i < la.size(); ++i)
    for (size_t j = 0; j < la[i].weights.size(); ++j)
      EXPECT_NEAR(la[i].weights[j], lb[i].weights[j], 1e-9);
}

TEST(PairwiseAttention, RejectsEvenExtentAndMismatch) {
  Tape tape;
  Var a = tape.constant(Tensor({1, 3, 3}));
  EXPECT_THROW(pairwise_aggregate(a, a, a, 2, nullptr), std::invalid_argument);
  Var b = tape.constant(Tensor({2, 3, 3}));
  EXPECT_THROW(pairwise_aggregate(a, b, a, 3, nullptr), std::invalid_argument);
}

TEST(PairwiseAttention, Gradcheck) {
  Rng rng(4);
  AttentionProjections proj("a", 3);
  proj.init(rng);
  Tensor x = random_tensor({3, 5, 5}, rng);
  Tensor w = random_tensor({3, 5, 5}, rng);
  auto loss = [&](Tape& t) {
    PairwiseOutput o = pairwise_attention(t, t.constant(x), proj, 3);
    return ops::sum(ops::mul(o.z, t.constant(w)));
  };
  EXPECT_LE(check_gradients(proj.parameters(), loss, rng).max_rel_err, 1e-4);
}

TEST(AccumulateGlobal, WholePlaneFootprint) {
  Rng rng(5);
  LocalAttention l{0, 0, random_tensor({2, 3, 3}, rng, 0, 1)};
  AttentionMap a = accumulate_global(std::span(&l, 1), 2, 3, 3);
  EXPECT_EQ(a.values, l.weights);
  EXPECT_EQ(a.kind, AttentionKind::kRawCumulative);
}

TEST(AccumulateGlobal, OneDimensionalAnalog) {
  std::vector<LocalAttention> locals{{0, 0, Tensor({1, 1, 2}, 1.0)},
                                     {0, 1, Tensor({1, 1, 2}, 1.0)}};
  AttentionMap a = accumulate_global(locals, 1, 1, 3);
  EXPECT_EQ(a.values, Tensor({1, 1, 3}, std::vector<double>{1, 2, 1}));
}

TEST(AccumulateGlobal, MatchesScatterOracleAndConservesMass) {
  Rng rng(6);
  std::uniform_int_distribution<int> pos(-1, 5);
  std::vector<LocalAttention> locals;
  for (int i = 0; i < 50; ++i) {
    locals.push_back({pos(rng), pos(rng), random_tensor({2, 3, 3}, rng, 0, 1)});
  }
  AttentionMap a = accumulate_global(locals, 2, 7, 7);
  const Tensor want = saccade::testing::scatter_oracle(locals, 2, 7, 7);
  for (size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(a.values[i], want[i], 1e-12);
  // Everything that lands inside the plane is kept.
  EXPECT_NEAR(a.values.sum(), want.sum(), 1e-12);
}

TEST(AccumulateGlobal, PairwiseLocalsConserveMass) {
  Rng rng(7);
  AttentionProjections proj("a", 4);
  proj.init(rng);
  Tape tape;
  PairwiseOutput o = pairwise_attention(tape, tape.constant(random_tensor({4, 6, 6}, rng)), proj, 3);
  AttentionMap a = accumulate_global(o.locals, 4, 6, 6);
  // Masked softmax: every centre contributes exactly 1 per channel.
  EXPECT_NEAR(a.values.sum(), 4.0 * 36.0, 1e-9);
  for (double v : a.values.data()) EXPECT_GE(v, 0.0);
}

TEST(AccumulateGlobal, RejectsOutOfPlaneAndChannelMismatch) {
  std::vector<LocalAttention> far{{10, 10, Tensor({1, 3, 3}, 1.0)}};
  EXPECT_THROW(accumulate_global(far, 1, 7, 7), std::invalid_argument);
  std::vector<LocalAttention> wrong{{0, 0, Tensor({2, 3, 3}, 1.0)}};
  EXPECT_THROW(accumulate_global(wrong, 1, 7, 7), std::invalid_argument);
}

TEST(CountMask, SmallCases) {
  CountMask one = count_mask(1, 1, 1, 1);
  EXPECT_EQ(one.counts, std::vector<std::uint32_t>{1});
  std::vector<Window> w{{0, 0, 1, 2}, {0, 1, 1, 2}};
  EXPECT_EQ(count_mask(w, 1, 3).counts, (std::vector<std::uint32_t>{1, 2, 1}));
  EXPECT_THROW(count_mask(5, 5, 2, 1), std::invalid_argument);
  EXPECT_THROW(count_mask(5, 5, 3, 0), std::invalid_argument);
}

TEST(CountMask, MatchesCountingOracle) {
  CountMask m = count_mask(7, 7, 3, 1);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 7; ++x) {
      unsigned n = 0;
      for (int cy = 0; cy < 7; ++cy)
        for (int cx = 0; cx < 7; ++cx)
          if (std::abs(cy - y) <= 1 && std::abs(cx - x) <= 1) ++n;
      EXPECT_EQ(m.at(y, x), n) << y << "," << x;
    }
  EXPECT_EQ(m.at(3, 3), 9u);
  EXPECT_EQ(m.at(0, 0), 4u);
  CountMask s = count_mask(7, 7, 3, 2);
  EXPECT_EQ(s.at(0, 0), 1u);
  EXPECT_EQ(s.at(1, 1), 4u);
}

TEST(NormalizeAttention, Cases) {
  Rng rng(8);
  AttentionMap a{random_tensor({2, 4, 4}, rng, 0, 1)};
  CountMask ones{4, 4, std::vector<std::uint32_t>(16, 1)};
  AttentionMap same = normalize_attention(a, ones);
  EXPECT_EQ(same.values, a.values);
  EXPECT_EQ(same.kind, AttentionKind::kNormalized);

  CountMask m{4, 4, {}};
  std::uniform_int_distribution<int> cnt(1, 9);
  for (int i = 0; i < 16; ++i) m.counts.push_back(cnt(rng));
  AttentionMap d = normalize_attention(a, m);
  AttentionMap p = normalize_attention(a, m, OverlapCorrection::kMultiply);
  for (size_t c = 0; c < 2; ++c)
    for (size_t y = 0; y < 4; ++y)
      for (size_t x = 0; x < 4; ++x) {
        EXPECT_EQ(d.values.at(c, y, x), a.values.at(c, y, x) / m.at(y, x));
        EXPECT_EQ(p.values.at(c, y, x), a.values.at(c, y, x) * m.at(y, x));
      }
  m.counts[5] = 0;
  EXPECT_THROW(normalize_attention(a, m), std::invalid_argument);
  CountMask small = count_mask(3, 3, 1, 1);
  EXPECT_THROW(normalize_attention(a, small), std::invalid_argument);
}

TEST(NormalizeAttention, UniformDenseTilingIsConstant) {
  // Uniform 1/9 locals over a 7x7 plane, masked to the plane like the
  // pairwise op does at the border.
  std::vector<LocalAttention> locals;
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 7; ++x) {
      LocalAttention l{y - 1, x - 1, Tensor({1, 3, 3}, 1.0 / 9.0)};
      locals.push_back(l);
    }
  AttentionMap a = accumulate_global(locals, 1, 7, 7);
  AttentionMap n = normalize_attention(a, count_mask(7, 7, 3, 1));
  for (double v : n.values.data()) EXPECT_NEAR(v, 1.0 / 9.0, 1e-15);
}

TEST(ChannelMean, Averages) {
  Tensor t({2, 1, 2}, std::vector<double>{1, 2, 3, 6});
  Tensor m = channel_mean(AttentionMap{t});
  EXPECT_EQ(m, Tensor({1, 2}, std::vector<double>{2, 4}));
}
