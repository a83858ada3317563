#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "csn/explain.hpp"
#include "csn/ops.hpp"
#include "test_util.hpp"

using namespace csn;
using csn::testing::expect_all_near;
using csn::testing::uniform;

namespace {

AttentionRecord make_record(std::vector<double> ap, std::vector<double> al, std::size_t N, std::size_t P) {
  AttentionRecord r;
  r.patch_weights = Tensor({1, N, N}, std::move(ap));
  r.local_weights = Tensor({1, N, P, P}, std::move(al));
  r.scale_index = 2;
  r.patch_len = P;
  r.seq_len = N * P;
  return r;
}

CsvTable syn_table(const std::string& name, std::size_t samples) {
  auto spec = builtin_spec(name);
  spec.n_samples = samples;
  auto d = generate_dataset(spec);
  CsvTable t;
  for (std::size_t j = 0; j < 6; ++j) t.columns.push_back("feat_" + std::to_string(j));
  t.columns.push_back("target");
  t.rows = d.target.numel();
  for (std::size_t r = 0; r < t.rows; ++r) {
    for (std::size_t j = 0; j < 6; ++j) t.values.push_back(d.features.data()[r * 6 + j]);
    t.values.push_back(d.target.data()[r]);
  }
  return t;
}

// A small model trained briefly on SYN1 with a 32-step lookback, shared by the
// perturbation tests.
class TrainedSyn1 : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new WindowDataset(make_windows(syn_table("SYN1", 2500), 32, 4, {6}));
    ModelConfig c;
    c.lookback = 32;
    c.horizon = 4;
    c.n_features = 7;
    c.n_scales = 2;
    c.patch_len = 8;
    c.decomp_kernel = 5;
    c.hidden_dim = 16;
    model_ = new Forecaster{c, ForecasterParams::init(c, 42), {6}};
    TrainConfig t;
    t.epochs = 6;
    train(*model_, *data_, t);
  }
  static void TearDownTestSuite() {
    delete model_;
    delete data_;
  }
  static WindowDataset* data_;
  static Forecaster* model_;
};
WindowDataset* TrainedSyn1::data_ = nullptr;
Forecaster* TrainedSyn1::model_ = nullptr;

}  // namespace

TEST(AggregateSaliency, UniformAttentionGivesAllOnes) {
  auto r = make_record(std::vector<double>(4, 0.5), std::vector<double>(8, 0.5), 2, 2);
  auto s = aggregate_saliency({r}, 8);
  expect_all_near(Tensor::vector(s.values), std::vector<double>(8, 1.0), 1e-12);
}

TEST(AggregateSaliency, ConcentratedPatchPeaksOnItsSpan) {
  // All patch mass on key patch 1 of 3, uniform local attention, T = 6.
  auto r = make_record({0, 1, 0, 0, 1, 0, 0, 1, 0}, std::vector<double>(12, 0.5), 3, 2);
  auto s = aggregate_saliency({r}, 6);
  expect_all_near(Tensor::vector(s.values), {0, 0, 1, 1, 0, 0}, 1e-12);
}

TEST(AggregateSaliency, HandComputedChain) {
  auto r = make_record({0.7, 0.3, 0.5, 0.5}, {0.9, 0.1, 0.6, 0.4, 0.2, 0.8, 0.4, 0.6}, 2, 2);
  // Column means: patch [0.6, 0.4]; local [0.75, 0.25] and [0.3, 0.7].
  // Scale saliency [0.45, 0.15, 0.12, 0.28], stretched from 4 to 8 steps.
  const double s0 = 0.45, s1 = 0.15, s2 = 0.12, s3 = 0.28;
  std::vector<double> expected = {s0,
                                  s0 + (3.0 / 7) * (s1 - s0),
                                  s0 + (6.0 / 7) * (s1 - s0),
                                  s1 + (2.0 / 7) * (s2 - s1),
                                  s1 + (5.0 / 7) * (s2 - s1),
                                  s2 + (1.0 / 7) * (s3 - s2),
                                  s2 + (4.0 / 7) * (s3 - s2),
                                  s3};
  for (auto& v : expected) v /= s0;
  expect_all_near(Tensor::vector(aggregate_saliency({r}, 8).values), expected, 1e-12);
}

TEST(AggregateSaliency, BatchOrderInvariantAndEmptyIsError) {
  std::mt19937_64 rng(1);
  auto a = softmax_lastdim(uniform({3, 4, 4}, rng));
  auto b = softmax_lastdim(uniform({3, 4, 2, 2}, rng));
  AttentionRecord r{a, b, 2, 2, 8};
  auto perm = [](const Tensor& t) { return concat({narrow(t, 0, 2, 1), narrow(t, 0, 0, 2)}, 0); };
  AttentionRecord rp{perm(a), perm(b), 2, 2, 8};
  expect_all_near(Tensor::vector(aggregate_saliency({r}, 16).values), aggregate_saliency({rp}, 16).values, 1e-14);
  EXPECT_THROW(aggregate_saliency({}, 16), std::invalid_argument);
}

TEST(Agreement, ExtremesAndTies) {
  std::vector<int> truth = {0, 0, 1, 1, 0, 1};
  std::vector<double> same(truth.begin(), truth.end());
  auto a = saliency_agreement(same, truth);
  EXPECT_EQ(a.k, 3u);
  EXPECT_DOUBLE_EQ(a.precision_at_k, 1.0);
  EXPECT_DOUBLE_EQ(a.rank_auc, 1.0);
  std::vector<double> inverse;
  for (int v : truth) inverse.push_back(1.0 - v);
  auto b = saliency_agreement(inverse, truth);
  EXPECT_DOUBLE_EQ(b.precision_at_k, 0.0);
  EXPECT_DOUBLE_EQ(b.rank_auc, 0.0);
  EXPECT_DOUBLE_EQ(saliency_agreement(std::vector<double>(6, 0.3), truth).rank_auc, 0.5);
  EXPECT_THROW(saliency_agreement(std::vector<double>(6, 1.0), std::vector<int>(6, 0)), std::invalid_argument);
  EXPECT_THROW(saliency_agreement(std::vector<double>(5, 1.0), truth), DimensionError);
}

TEST(TopPositions, TiesPreferLowerIndex) {
  EXPECT_EQ(top_positions({0.5, 0.9, 0.5, 0.9}, 3), (std::vector<std::size_t>{1, 3, 0}));
}

TEST(Perturb, IdentitiesAndDuality) {
  std::mt19937_64 rng(2);
  auto x = uniform({6, 3}, rng);
  expect_all_near(perturb(x, std::vector<int>(6, 1), PerturbMode::Keep), x.data(), 0.0);
  expect_all_near(perturb(x, std::vector<int>(6, 0), PerturbMode::Remove), x.data(), 0.0);
  std::vector<int> mask = {1, 0, 0, 1, 1, 0}, complement = {0, 1, 1, 0, 0, 1};
  expect_all_near(perturb(x, mask, PerturbMode::Keep), perturb(x, complement, PerturbMode::Remove).data(), 0.0);

  std::vector<int> cell(18, 0);
  cell[1] = 1;  // t = 0, feature 1
  auto y = perturb(x, cell, PerturbMode::Remove);
  double mean1 = 0.0;
  for (std::size_t t = 0; t < 6; ++t) mean1 += x.data()[t * 3 + 1] / 6.0;
  EXPECT_NEAR(y.data()[1], mean1, 1e-15);
  EXPECT_EQ(y.data()[0], x.data()[0]);
  EXPECT_THROW(perturb(x, std::vector<int>(5, 1), PerturbMode::Keep), DimensionError);
}

TEST(Perturb, BatchUsesEachWindowsOwnMean) {
  auto x = Tensor({2, 2, 1}, {1, 3, 10, 30});
  expect_all_near(perturb(x, {0, 0}, PerturbMode::Keep), {2, 2, 20, 20});
}

TEST_F(TrainedSyn1, EndpointsAtFullRatio) {
  Faithfulness f(*model_, *data_);
  ASSERT_FALSE(f.degenerate());
  std::mt19937_64 rng(3);
  SaliencyVector s;
  for (int i = 0; i < 32; ++i) s.values.push_back(std::uniform_real_distribution<double>(0, 1)(rng));
  EXPECT_EQ(f.sufficiency(s, 1.0), 0.0);
  EXPECT_EQ(f.comprehensiveness(s, 1.0), 1.0);
  EXPECT_EQ(f.comprehensiveness_at(s, 0), 0.0);
  EXPECT_THROW(f.sufficiency(s, 0.0), std::invalid_argument);
  EXPECT_THROW(f.comprehensiveness(s, 1.5), std::invalid_argument);
}

TEST_F(TrainedSyn1, RandomSaliencyAtSmallRatioIsNearBlankCeiling) {
  Faithfulness f(*model_, *data_);
  std::mt19937_64 rng(4);
  SaliencyVector s;
  for (int i = 0; i < 32; ++i) s.values.push_back(std::uniform_real_distribution<double>(0, 1)(rng));
  EXPECT_GT(f.sufficiency(s, 0.1), 0.5);
}

TEST_F(TrainedSyn1, MonotoneInRatio) {
  Faithfulness f(*model_, *data_);
  auto s = model_saliency(*model_, *data_, Split::Test);
  double prev_suff = 2.0, prev_comp = -1.0;
  for (double r : {0.1, 0.2, 0.5}) {
    const double suff = f.sufficiency(s, r), comp = f.comprehensiveness(s, r);
    EXPECT_LE(suff, prev_suff + 0.05);
    EXPECT_GE(comp, prev_comp - 0.05);
    prev_suff = suff;
    prev_comp = comp;
  }
}

TEST_F(TrainedSyn1, SaliencyIsMaxNormalized) {
  auto s = model_saliency(*model_, *data_, Split::Test);
  ASSERT_EQ(s.values.size(), 32u);
  EXPECT_DOUBLE_EQ(*std::max_element(s.values.begin(), s.values.end()), 1.0);
  EXPECT_GE(*std::min_element(s.values.begin(), s.values.end()), 0.0);
}

TEST_F(TrainedSyn1, AblationIsDeterministic) {
  auto a = feature_ablation(*model_, *data_);
  auto b = feature_ablation(*model_, *data_);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 7u);
}

TEST(FeatureAblation, UnreadFeatureScoresZero) {
  auto table = syn_table("SYN1", 1500);
  auto data = make_windows(table, 32, 4, {6});
  ModelConfig c;
  c.lookback = 32;
  c.horizon = 4;
  c.n_features = 7;
  c.n_scales = 1;
  c.patch_len = 8;
  c.decomp_kernel = 5;
  c.hidden_dim = 8;
  auto p = ForecasterParams::init(c, 5);
  // Cut every path from channel 3 into the target channel.
  for (auto* enc : {&p.scales[0].seasonal, &p.scales[0].trend}) {
    auto& w = enc->channel_w.impl()->data;
    w[3 * 7 + 6] = 0.0;
  }
  Forecaster m{c, p, {6}};
  auto scores = feature_ablation(m, data);
  EXPECT_EQ(scores[3], 0.0);
  EXPECT_GT(std::fabs(scores[0]), 0.0);
}

TEST(IntegratedGradients, BaselineInputGivesZero) {
  std::mt19937_64 rng(6);
  auto w = uniform({5, 2}, rng);
  auto f = [&](const Tensor& x) { return sum(square(mul(x, w))); };
  auto x = Tensor({5, 2}, {1, 1, 1, 1, 1, 1, 1, 1, 1, 1});
  auto ig = integrated_gradients(f, x, 16);
  expect_all_near(ig.attribution, std::vector<double>(10, 0.0), 0.0);
  EXPECT_THROW(integrated_gradients(f, x, 0), std::invalid_argument);
}

TEST(IntegratedGradients, ExactForLinearModel) {
  std::mt19937_64 rng(7);
  auto w = uniform({6, 3}, rng);
  auto x = uniform({6, 3}, rng);
  auto f = [&](const Tensor& batch) { return mul(batch, w); };
  for (std::size_t steps : {1, 3, 64}) {
    auto ig = integrated_gradients(f, x, steps);
    auto base = perturb(x, std::vector<int>(6, 0), PerturbMode::Keep);
    auto expected = mul(w, sub(x, base));
    expect_all_near(ig.attribution, expected.data(), 1e-12);
    EXPECT_LT(ig.completeness_gap(), 1e-10);
  }
}

TEST(IntegratedGradients, CompletenessOnNonlinearToy) {
  std::mt19937_64 rng(8);
  auto w = uniform({8, 2}, rng);
  auto f = [&](const Tensor& batch) { return sigmoid(mul(batch, w)); };
  auto ig = integrated_gradients(f, uniform({8, 2}, rng), 64);
  EXPECT_LT(ig.completeness_gap(), 0.02);
}

TEST_F(TrainedSyn1, CompletenessOnTrainedModel) {
  auto summary = attribution_summary(*model_, *data_, Split::Test, 4, 64);
  EXPECT_LT(summary.max_completeness_gap, 0.02);
  EXPECT_EQ(summary.feature_importance.size(), 7u);
  EXPECT_EQ(summary.temporal.size(), 32u);
}

TEST_F(TrainedSyn1, ReportHasAgreementOnlyWithTruth) {
  ExplainOptions o;
  o.ig_windows = 2;
  o.ig_steps = 8;
  auto plain = explain(*model_, *data_, o);
  EXPECT_FALSE(plain.to_json().contains("agreement"));
  EXPECT_EQ(plain.sufficiency.size(), 3u);
  auto truth = ground_truth_mask(builtin_spec("SYN1"), 32);
  auto with = explain(*model_, *data_, o, truth);
  EXPECT_TRUE(with.to_json().contains("agreement"));
  EXPECT_THROW(explain(*model_, *data_, o, ground_truth_mask(builtin_spec("SYN1"), 40)), std::invalid_argument);
}
