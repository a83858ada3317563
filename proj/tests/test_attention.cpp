#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "attention_oracle.hpp"
#include "csn/gradcheck.hpp"
#include "csn/ops.hpp"
#include "test_util.hpp"

using namespace csn;
using csn::testing::expect_all_near;
using csn::testing::uniform;

namespace {

const Variant kAllVariants[] = {Variant::SelfAttention, Variant::PatchAttention, Variant::CrossSharedKey,
                                Variant::CrossDualKey};

void expect_rows_normalized(const Tensor& weights, double tol = 1e-6) {
  const std::size_t width = weights.shape().back();
  for (std::size_t r = 0; r < weights.numel() / width; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < width; ++c) {
      const double v = weights.data()[r * width + c];
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, tol);
  }
}

}  // namespace

TEST(VariantNames, RoundTrip) {
  for (auto v : kAllVariants) EXPECT_EQ(parse_variant(variant_name(v)), v);
  EXPECT_THROW(parse_variant("multi_head"), std::invalid_argument);
}

TEST(PatchAttention, SinglePatchHasUnitWeight) {
  std::mt19937_64 rng(1);
  auto w = AttentionWeights::random(2, true, rng);
  auto out = patch_attention(uniform({1, 4, 2}, rng), uniform({1, 4, 2}, rng), w, 4);
  expect_all_near(out.weights, {1.0});
}

TEST(PatchAttention, ConstantKeysGiveUniformRows) {
  std::mt19937_64 rng(2);
  auto out = patch_attention(uniform({1, 8, 1}, rng), Tensor::full({1, 8, 1}, 0.7), AttentionWeights::identity(1), 2);
  expect_all_near(out.weights, std::vector<double>(16, 0.25), 1e-12);
}

TEST(PatchAttention, RejectsLengthMismatch) {
  std::mt19937_64 rng(3);
  EXPECT_THROW(patch_attention(uniform({1, 8, 1}, rng), uniform({1, 6, 1}, rng), AttentionWeights::identity(1), 2),
               DimensionError);
}

TEST(LocalAttention, UnitPatchIsValueProjection) {
  std::mt19937_64 rng(4);
  auto w = AttentionWeights::random(2, true, rng);
  auto x = uniform({1, 3, 2}, rng);
  auto out = local_attention(x, uniform({1, 3, 2}, rng), w, 1);
  expect_all_near(out.weights, {1, 1, 1});
  expect_all_near(reshape(out.context, {1, 3, 2}), matmul(x, *w.w_lv).data(), 1e-12);
}

TEST(LocalAttention, ConstantKeyPatchGivesUniformRows) {
  std::mt19937_64 rng(5);
  auto out = local_attention(uniform({1, 6, 1}, rng), Tensor::full({1, 6, 1}, -1.2), AttentionWeights::identity(1), 3);
  expect_all_near(out.weights, std::vector<double>(18, 1.0 / 3.0), 1e-12);
}

TEST(LocalAttention, MatchesHandComputedTwoByTwo) {
  // One patch of two steps, identity projections, D = 1.
  auto x = Tensor({1, 2, 1}, {1.0, 2.0});
  auto k = Tensor({1, 2, 1}, {0.5, -1.0});
  auto out = local_attention(x, k, AttentionWeights::identity(1), 2);
  auto row = [](double q) {
    const double a = std::exp(q * 0.5), b = std::exp(q * -1.0);
    return std::pair{a / (a + b), b / (a + b)};
  };
  auto [a0, b0] = row(1.0);
  auto [a1, b1] = row(2.0);
  expect_all_near(out.weights, {a0, b0, a1, b1}, 1e-15);
  expect_all_near(out.context, {a0 * 1 + b0 * 2, a1 * 1 + b1 * 2}, 1e-15);
}

TEST(CrossPatchAttention, MatchesBruteForceOracle) {
  std::mt19937_64 rng(6);
  for (std::size_t D : {1, 2}) {
    for (auto variant : kAllVariants) {
      for (int trial = 0; trial < 5; ++trial) {
        const std::size_t T = 4, P = 2;
        auto x = uniform({1, T, D}, rng);
        auto k1 = uniform({1, T, D}, rng);
        auto k2 = uniform({1, T, D}, rng);
        auto w = AttentionWeights::random(D, variant != Variant::SelfAttention, rng);
        auto [ctx, rec] = cross_patch_attention(x, k1, k2, {P, variant, D}, w);
        auto ref = csn::testing::oracle_cross_patch(csn::testing::to_mat(x, T, D), csn::testing::to_mat(k1, T, D),
                                                    csn::testing::to_mat(k2, T, D), P, variant, w);
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t d = 0; d < D; ++d) EXPECT_NEAR(ctx.data()[t * D + d], ref.context[t][d], 1e-10);
        const std::size_t N = ref.patch_weights.size();
        ASSERT_EQ(rec.patch_weights.numel(), N * N);
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t j = 0; j < N; ++j) EXPECT_NEAR(rec.patch_weights.data()[i * N + j], ref.patch_weights[i][j], 1e-10);
        for (std::size_t n = 0; n < ref.local_weights.size(); ++n)
          for (std::size_t p = 0; p < P; ++p)
            for (std::size_t q = 0; q < P; ++q)
              EXPECT_NEAR(rec.local_weights.data()[(n * P + p) * P + q], ref.local_weights[n][p][q], 1e-10);
      }
    }
  }
}

TEST(CrossPatchAttention, OracleHandlesRaggedTail) {
  std::mt19937_64 rng(7);
  auto x = uniform({1, 5, 2}, rng), k1 = uniform({1, 5, 2}, rng), k2 = uniform({1, 5, 2}, rng);
  auto w = AttentionWeights::random(2, true, rng);
  auto [ctx, rec] = cross_patch_attention(x, k1, k2, {2, Variant::CrossDualKey, 2}, w);
  auto ref = csn::testing::oracle_cross_patch(csn::testing::to_mat(x, 5, 2), csn::testing::to_mat(k1, 5, 2),
                                              csn::testing::to_mat(k2, 5, 2), 2, Variant::CrossDualKey, w);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t d = 0; d < 2; ++d) EXPECT_NEAR(ctx.data()[t * 2 + d], ref.context[t][d], 1e-10);
}

TEST(CrossPatchAttention, DualKeyCollapsesToSharedKeyWhenKeysMatch) {
  std::mt19937_64 rng(8);
  auto x = uniform({2, 8, 3}, rng), k = uniform({2, 8, 3}, rng);
  auto w = AttentionWeights::random(3, true, rng);
  auto [dual, rd] = cross_patch_attention(x, k, k, {4, Variant::CrossDualKey, 3}, w);
  auto [shared, rs] = cross_patch_attention(x, k, k, {4, Variant::CrossSharedKey, 3}, w);
  expect_all_near(dual, shared.data(), 0.0);
}

TEST(CrossPatchAttention, DistinctKeysChangeOnlyLocalWeights) {
  std::mt19937_64 rng(9);
  auto x = uniform({1, 8, 2}, rng), k1 = uniform({1, 8, 2}, rng), k2 = uniform({1, 8, 2}, rng);
  auto w = AttentionWeights::random(2, true, rng);
  auto [c1, dual] = cross_patch_attention(x, k1, k2, {4, Variant::CrossDualKey, 2}, w);
  auto [c2, shared] = cross_patch_attention(x, k1, k2, {4, Variant::CrossSharedKey, 2}, w);
  expect_all_near(dual.patch_weights, shared.patch_weights.data(), 0.0);
  double diff = 0.0;
  for (std::size_t i = 0; i < dual.local_weights.numel(); ++i)
    diff = std::max(diff, std::fabs(dual.local_weights.data()[i] - shared.local_weights.data()[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(CrossPatchAttention, PatchVariantWithOnePatchIsLocalAttention) {
  std::mt19937_64 rng(10);
  auto x = uniform({1, 4, 2}, rng), k = uniform({1, 4, 2}, rng);
  auto w = AttentionWeights::random(2, true, rng);
  auto [ctx, rec] = cross_patch_attention(x, k, k, {4, Variant::PatchAttention, 2}, w);
  expect_all_near(rec.patch_weights, {1.0});
  auto local = local_attention(x, x, w, 4);
  auto pooled = mean_axis(x, 1, true);
  auto expected = add(reshape(local.context, {1, 4, 2}), expand_axis(matmul(pooled, w.w_v), 1, 4));
  expect_all_near(ctx, expected.data(), 1e-12);
}

TEST(CrossPatchAttention, SelfAttentionRecordUsesUnitPatches) {
  std::mt19937_64 rng(11);
  auto w = AttentionWeights::random(2, false, rng);
  auto x = uniform({3, 6, 2}, rng);
  auto [ctx, rec] = cross_patch_attention(x, x, x, {2, Variant::SelfAttention, 2}, w);
  EXPECT_EQ(rec.patch_len, 1u);
  EXPECT_EQ(rec.patch_weights.shape(), (Shape{3, 6, 6}));
  EXPECT_EQ(rec.local_weights.shape(), (Shape{3, 6, 1, 1}));
  expect_all_near(rec.local_weights, std::vector<double>(18, 1.0));
}

TEST(CrossPatchAttention, RowsNormalizedForEveryVariant) {
  std::mt19937_64 rng(12);
  for (auto variant : kAllVariants) {
    for (int trial = 0; trial < 10; ++trial) {
      auto w = AttentionWeights::random(3, variant != Variant::SelfAttention, rng);
      auto x = uniform({2, 12, 3}, rng, -3, 3);
      auto k1 = scale(uniform({2, 12, 3}, rng, -3, 3), 50.0);
      auto [ctx, rec] = cross_patch_attention(x, k1, uniform({2, 12, 3}, rng), {4, variant, 3}, w);
      expect_rows_normalized(rec.patch_weights);
      expect_rows_normalized(rec.local_weights);
    }
  }
}

TEST(CrossPatchAttention, BatchPermutationCommutes) {
  std::mt19937_64 rng(13);
  auto w = AttentionWeights::random(2, true, rng);
  auto x = uniform({2, 8, 2}, rng), k1 = uniform({2, 8, 2}, rng), k2 = uniform({2, 8, 2}, rng);
  auto swap = [](const Tensor& t) { return concat({narrow(t, 0, 1, 1), narrow(t, 0, 0, 1)}, 0); };
  auto [c, r] = cross_patch_attention(x, k1, k2, {4, Variant::CrossDualKey, 2}, w);
  auto [cs, rs] = cross_patch_attention(swap(x), swap(k1), swap(k2), {4, Variant::CrossDualKey, 2}, w);
  expect_all_near(cs, swap(c).data(), 1e-14);
}

TEST(CrossPatchAttention, RejectsShapeMismatch) {
  std::mt19937_64 rng(14);
  auto w = AttentionWeights::random(2, true, rng);
  EXPECT_THROW(cross_patch_attention(uniform({1, 8, 2}, rng), uniform({1, 8, 2}, rng), uniform({1, 6, 2}, rng),
                                     {4, Variant::CrossDualKey, 2}, w),
               DimensionError);
}

TEST(CrossPatchAttention, GradientsPassFiniteDifferences) {
  std::mt19937_64 rng(15);
  for (auto variant : kAllVariants) {
    auto w = AttentionWeights::random(2, variant != Variant::SelfAttention, rng);
    auto x = uniform({1, 4, 2}, rng), k1 = uniform({1, 4, 2}, rng), k2 = uniform({1, 4, 2}, rng);
    const AttentionConfig cfg{2, variant, 2};
    auto loss_x = [&](const Tensor& v) { return sum(square(cross_patch_attention(v, k1, k2, cfg, w).first)); };
    auto rx = grad_check(loss_x, x);
    EXPECT_TRUE(rx.passed) << variant_name(variant) << " input: " << rx.summary();
    if (variant != Variant::SelfAttention && variant != Variant::PatchAttention) {
      auto loss_k = [&](const Tensor& v) { return sum(square(cross_patch_attention(x, v, k2, cfg, w).first)); };
      auto rk = grad_check(loss_k, k1);
      EXPECT_TRUE(rk.passed) << variant_name(variant) << " key: " << rk.summary();
    }
    std::vector<Tensor*> params{&w.w_q, &w.w_k, &w.w_v};
    if (w.w_lq) params.insert(params.end(), {&*w.w_lq, &*w.w_lk, &*w.w_lv});
    for (auto* p : params) {
      p->set_requires_grad(true);
      auto rp = grad_check_inplace([&] { return sum(square(cross_patch_attention(x, k1, k2, cfg, w).first)); }, *p);
      EXPECT_TRUE(rp.passed) << variant_name(variant) << " weight: " << rp.summary();
    }
  }
}
