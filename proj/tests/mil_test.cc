// Copyright 2026 The pfmaudit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "pfmaudit/error.h"
#include "pfmaudit/metrics.h"
#include "pfmaudit/mil.h"
#include "pfmaudit/rng.h"
#include "pfmaudit/split.h"
#include "pfmaudit/synth.h"
#include "testing.h"

namespace pfmaudit {
namespace {

HeadArchitecture SmallArch(HeadKind kind, int outputs) {
  return {kind, 5, 4, outputs};
}

using testing::RandomBags;

std::vector<double> RandomWeights(const HeadArchitecture& arch, uint64_t seed) {
  return testing::RandomWeights(arch.ParameterCount(), seed);
}

TEST(AbmilAggregate, AttentionIsOnTheSimplex) {
  const auto arch = SmallArch(HeadKind::kAbmilClassifier, 2);
  const auto bags = RandomBags(20, 5, 1);
  const auto w = RandomWeights(arch, 2);
  for (const auto& bag : bags) {
    const auto pool = AbmilAggregate(bag.instances, arch, w);
    EXPECT_NEAR(pool.attention.sum(), 1.0, 1e-12);
    EXPECT_GE(pool.attention.minCoeff(), 0.0);
    const Eigen::VectorXd want = bag.instances.transpose() * pool.attention;
    EXPECT_LE((pool.embedding - want).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(AbmilAggregate, SingleInstanceAndIdenticalInstances) {
  const auto arch = SmallArch(HeadKind::kAbmilClassifier, 2);
  const auto w = RandomWeights(arch, 3);
  Eigen::MatrixXd one(1, 5);
  one << 1, 2, 3, 4, 5;
  const auto p1 = AbmilAggregate(one, arch, w);
  EXPECT_EQ(p1.attention(0), 1.0);
  EXPECT_LE((p1.embedding - one.row(0).transpose()).norm(), 1e-15);
  Eigen::MatrixXd same = one.replicate(4, 1);
  const auto p4 = AbmilAggregate(same, arch, w);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(p4.attention(i), 0.25, 1e-15);
}

TEST(AbmilAggregate, PermutingInstancesPermutesAttention) {
  const auto arch = SmallArch(HeadKind::kAbmilClassifier, 2);
  const auto w = RandomWeights(arch, 4);
  const auto bag = RandomBags(1, 5, 5).front();
  const auto m = bag.instances.rows();
  Eigen::MatrixXd rev = bag.instances.colwise().reverse();
  const auto a = AbmilAggregate(bag.instances, arch, w);
  const auto b = AbmilAggregate(rev, arch, w);
  for (Eigen::Index i = 0; i < m; ++i) EXPECT_NEAR(b.attention(i), a.attention(m - 1 - i), 1e-14);
  EXPECT_LE((a.embedding - b.embedding).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MilGradient, ClassifierMatchesCentralDifferences) {
  const auto arch = SmallArch(HeadKind::kAbmilClassifier, 3);
  const auto bags = RandomBags(6, 5, 6);
  const std::vector<int> labels = {0, 1, 2, 1, 0, 2};
  for (uint64_t point = 0; point < 6; ++point) {
    const auto w = RandomWeights(arch, 10 + point);
    const auto lg = MilClassifierLossAndGradient(arch, w, bags, labels);
    const double err = testing::MaxGradientError(
        [&](const std::vector<double>& v) {
          return MilClassifierLossAndGradient(arch, v, bags, labels).loss;
        },
        w, lg.gradient);
    EXPECT_LE(err, 1e-3) << "point " << point;
  }
}

TEST(MilGradient, SurvivalHeadMatchesCentralDifferences) {
  const auto arch = SmallArch(HeadKind::kAbmilSurvival, 4);
  const auto bags = RandomBags(8, 5, 7);
  const std::vector<int> bins = {0, 1, 2, 3, 3, 1, 0, 2};
  const std::vector<bool> censored = {false, true, false, true, false, false, true, true};
  for (uint64_t point = 0; point < 6; ++point) {
    const auto w = RandomWeights(arch, 20 + point);
    const auto lg = SurvivalLossAndGradient(arch, w, bags, bins, censored, 1e-3, 1e-2);
    const double err = testing::MaxGradientError(
        [&](const std::vector<double>& v) {
          return SurvivalLossAndGradient(arch, v, bags, bins, censored, 1e-3, 1e-2).loss;
        },
        w, lg.gradient);
    EXPECT_LE(err, 1e-3) << "point " << point;
  }
}

TEST(MilGradient, RegularizationAddsL1AndSquaredL2) {
  const auto arch = SmallArch(HeadKind::kAbmilSurvival, 3);
  const auto bags = RandomBags(4, 5, 8);
  const std::vector<int> bins = {0, 1, 2, 1};
  const std::vector<bool> censored = {false, true, false, false};
  const auto w = RandomWeights(arch, 9);
  const double plain = SurvivalLossAndGradient(arch, w, bags, bins, censored, 0, 0).loss;
  double l1 = 0, l2 = 0;
  for (double v : w) {
    l1 += std::abs(v);
    l2 += v * v;
  }
  EXPECT_NEAR(SurvivalLossAndGradient(arch, w, bags, bins, censored, 0.1, 0.01).loss,
              plain + 0.1 * l1 + 0.01 * l2, 1e-12);
}

TEST(MilGradient, AccumulatedPerBagGradientsEqualTheBatchMean) {
  const auto arch = SmallArch(HeadKind::kAbmilSurvival, 3);
  const auto bags = RandomBags(5, 5, 11);
  const std::vector<int> bins = {0, 2, 1, 1, 2};
  const std::vector<bool> censored = {false, false, true, false, true};
  const auto w = RandomWeights(arch, 12);
  const auto batch = SurvivalLossAndGradient(arch, w, bags, bins, censored, 0, 0);
  GradientAccumulator acc(w.size(), 5);
  for (size_t b = 0; b < bags.size(); ++b) {
    EXPECT_FALSE(acc.Ready());
    const std::vector<bool> c = {censored[b]};
    acc.Add(SurvivalLossAndGradient(arch, w, std::span(&bags[b], 1),
                                    std::span(&bins[b], 1), c, 0, 0)
                .gradient);
  }
  ASSERT_TRUE(acc.Ready());
  const auto mean = acc.Take();
  EXPECT_TRUE(acc.Empty());
  for (size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(mean[i], batch.gradient[i], 1e-12);
}

TEST(MilGradient, PartialWindowFlushesItsOwnMean) {
  GradientAccumulator acc(2, 4);
  acc.Add(std::vector<double>{1, 2});
  acc.Add(std::vector<double>{3, 6});
  EXPECT_FALSE(acc.Ready());
  EXPECT_EQ(acc.Take(), (std::vector<double>{2, 4}));
}

TEST(SurvivalBins, QuantilesOfUncensoredTimes) {
  const std::vector<double> t = {1, 2, 3, 4, 5, 100};
  const std::vector<bool> c = {false, false, false, false, false, true};
  const auto edges = SurvivalBinEdges(t, c, 4);
  ASSERT_EQ(edges.size(), 3u);
  EXPECT_DOUBLE_EQ(edges[0], 2.0);
  EXPECT_DOUBLE_EQ(edges[1], 3.0);
  EXPECT_DOUBLE_EQ(edges[2], 4.0);
  EXPECT_EQ(TimeBin(0.5, edges), 0);
  EXPECT_EQ(TimeBin(2.0, edges), 1);
  EXPECT_EQ(TimeBin(3.5, edges), 2);
  EXPECT_EQ(TimeBin(1e6, edges), 3);
  EXPECT_THROW(SurvivalBinEdges(t, std::vector<bool>(6, true), 4), Error);
}

TEST(SurvivalPrediction, SurvivalIsNonIncreasingAndRiskIsItsNegatedSum) {
  TrainedHead head;
  head.arch = SmallArch(HeadKind::kAbmilSurvival, 4);
  head.weights = RandomWeights(head.arch, 13);
  head.bin_edges = {1, 2, 3};
  const auto bags = RandomBags(10, 5, 14);
  const auto pred = PredictSurvival(head, bags);
  for (size_t b = 0; b < bags.size(); ++b) {
    double sum = 0.0;
    for (int j = 0; j < 4; ++j) {
      const double h = pred.hazards(b, j);
      EXPECT_GT(h, 0.0);
      EXPECT_LT(h, 1.0);
      const double prev = j == 0 ? 1.0 : pred.survival(b, j - 1);
      EXPECT_LE(pred.survival(b, j), prev);
      EXPECT_NEAR(pred.survival(b, j), prev * (1.0 - h), 1e-12);
      sum += pred.survival(b, j);
    }
    EXPECT_NEAR(pred.risk[b], -sum, 1e-12);
  }
}

TEST(BuildBags, GroupsRowsBySlideInFirstAppearanceOrder) {
  SynthSpec s;
  s.dim = 8;
  s.n_institutions = 2;
  s.samples_per_cell = 3;
  s.slide_size = 4;
  s.mu_class = 1;
  const auto c = GenerateCohort(s);
  std::vector<size_t> rows(c.manifest.size());
  std::iota(rows.begin(), rows.end(), size_t{0});
  const auto bags = BuildBags(c.matrix, c.manifest, rows);
  ASSERT_EQ(bags.size(), 12u);
  for (const auto& bag : bags) {
    ASSERT_EQ(bag.instances.rows(), 4);
    for (size_t i = 0; i < bag.rows.size(); ++i) {
      EXPECT_EQ(c.manifest.records()[bag.rows[i]].slide_id, bag.slide_id);
      EXPECT_EQ(bag.instances(i, 0), static_cast<double>(c.matrix.row(bag.rows[i])[0]));
    }
  }
}

TEST(MilConfig, RejectsBadValues) {
  MilConfig m;
  m.input_dim = 0;
  EXPECT_THROW(m.Validate(), Error);
  SurvivalConfig s;
  s.input_dim = 4;
  s.bins = 1;
  EXPECT_THROW(s.Validate(), Error);
}

TEST(InitAbmil, OutputLayerStartsAtZero) {
  const HeadArchitecture arch{HeadKind::kAbmilClassifier, 6, 5, 3};
  const auto w = InitAbmilWeights(arch, 1);
  const size_t out = 5 * 6 + 5 + 5;
  for (size_t i = out; i < w.size(); ++i) EXPECT_EQ(w[i], 0.0);
  double attn = 0.0;
  for (size_t i = 0; i < out; ++i) attn += std::abs(w[i]);
  EXPECT_GT(attn, 0.0);
}

// Held-out fold C-index of a survival head trained on a cohort whose log
// hazard has the given slope along the risk direction.
double HeldOutCIndex(double risk_strength) {
  SynthSpec s;
  s.dim = 16;
  s.n_institutions = 3;
  s.samples_per_cell = 50;
  s.slide_size = 8;
  s.seed = 5;
  SurvivalSpec sv;
  sv.risk_strength = risk_strength;
  s.survival = sv;
  const auto c = GenerateCohort(s);
  const auto plan = MakeSurvivalFolds(c.manifest, 5, GroupKey::kPatient, 3);
  auto rows_of = [&](const std::vector<std::string>& ids) {
    std::vector<size_t> r;
    for (const auto& id : ids) r.push_back(c.manifest.RowOf(id));
    std::sort(r.begin(), r.end());
    return r;
  };
  const auto train = BuildBags(c.matrix, c.manifest, rows_of(plan.FoldTrainIds(0)));
  const auto test = BuildBags(c.matrix, c.manifest, rows_of(plan.FoldIds(0)));
  auto outcomes = [&](const std::vector<Bag>& bags, std::vector<double>& t,
                      std::vector<bool>& e) {
    for (const auto& b : bags) {
      t.push_back(*c.manifest.records()[b.rows[0]].survival_days);
      e.push_back(*c.manifest.records()[b.rows[0]].censored);
    }
  };
  std::vector<double> t_train, t_test;
  std::vector<bool> c_train, c_test;
  outcomes(train, t_train, c_train);
  outcomes(test, t_test, c_test);
  SurvivalConfig cfg;
  cfg.input_dim = 16;
  cfg.seed = 2;
  const auto head = TrainMilSurvival(train, t_train, c_train, cfg);
  return ConcordanceIndex(PredictSurvival(head, test).risk, t_test, c_test);
}

TEST(MilSurvival, HeldOutConcordanceGrowsWithRiskSignal) {
  const double weak = HeldOutCIndex(1.0);
  const double strong = HeldOutCIndex(6.0);
  EXPECT_GT(weak, 0.55);
  EXPECT_GT(strong, weak);
  EXPECT_GE(strong, 0.9);
}

}  // namespace
}  // namespace pfmaudit
