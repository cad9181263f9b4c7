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

#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "pfmaudit/error.h"
#include "pfmaudit/head.h"
#include "pfmaudit/metrics.h"
#include "pfmaudit/probe.h"
#include "pfmaudit/rng.h"
#include "testing.h"

namespace pfmaudit {
namespace {

struct Blobs {
  Eigen::MatrixXd x;
  std::vector<int> y;
};

// Gaussian blobs: class c centered at `sep * e_c`, unit noise.
Blobs MakeBlobs(int n, int dim, int k, double sep, uint64_t seed) {
  Rng rng(seed);
  Blobs b{Eigen::MatrixXd(n, dim), std::vector<int>(n)};
  for (int i = 0; i < n; ++i) {
    b.y[i] = i % k;
    for (int j = 0; j < dim; ++j) b.x(i, j) = rng.Normal() + (j == b.y[i] ? sep : 0.0);
  }
  return b;
}

ProbeConfig SmallConfig(int dim, int k) {
  ProbeConfig c;
  c.input_dim = dim;
  c.num_classes = k;
  c.hidden_dim = 32;
  c.epochs = 40;
  c.batch_size = 32;
  c.learning_rate = 5e-3;
  return c;
}

TEST(ProbeGradient, MatchesCentralDifferencesAtRandomPoints) {
  const auto blobs = MakeBlobs(12, 5, 3, 1.0, 1);
  ProbeConfig cfg = SmallConfig(5, 3);
  cfg.hidden_dim = 7;
  const auto arch = cfg.Architecture();
  for (uint64_t point = 0; point < 6; ++point) {
    const auto w = InitProbeWeights(arch, 100 + point);
    const auto lg = ProbeLossAndGradient(arch, w, blobs.x, blobs.y);
    const double err = testing::MaxGradientError(
        [&](const std::vector<double>& v) {
          return ProbeLossAndGradient(arch, v, blobs.x, blobs.y).loss;
        },
        w, lg.gradient, 1e-6);
    EXPECT_LE(err, 1e-3) << "point " << point;
  }
}

TEST(ProbeGradient, ParameterCountMatchesLayout) {
  ProbeConfig cfg = SmallConfig(6, 4);
  cfg.hidden_dim = 10;
  const auto arch = cfg.Architecture();
  EXPECT_EQ(arch.ParameterCount(), 10u * 6 + 10 + 4 * 10 + 4);
  EXPECT_EQ(InitProbeWeights(arch, 0).size(), arch.ParameterCount());
}

TEST(Probe, SeparableBlobsAreLearned) {
  const auto train = MakeBlobs(300, 8, 3, 4.0, 2);
  const auto test = MakeBlobs(150, 8, 3, 4.0, 3);
  const auto head = TrainProbe(train.x, train.y, SmallConfig(8, 3));
  const auto pred = Predict(head, test.x);
  EXPECT_GE(Accuracy(pred.labels, test.y).value, 0.95);
  for (Eigen::Index i = 0; i < pred.probabilities.rows(); ++i) {
    EXPECT_NEAR(pred.probabilities.row(i).sum(), 1.0, 1e-12);
  }
  EXPECT_EQ(head.epochs_run, 40);
  EXPECT_LT(head.epoch_losses.back(), head.epoch_losses.front());
}

TEST(Probe, NoSignalStaysNearChance) {
  auto train = MakeBlobs(400, 8, 2, 0.0, 4);
  const auto test = MakeBlobs(2000, 8, 2, 0.0, 5);
  const auto head = TrainProbe(train.x, train.y, SmallConfig(8, 2));
  EXPECT_NEAR(Accuracy(Predict(head, test.x).labels, test.y).value, 0.5, 0.05);
}

TEST(Probe, TrainingIsDeterministicPerSeed) {
  const auto b = MakeBlobs(100, 4, 2, 2.0, 6);
  const auto a1 = TrainProbe(b.x, b.y, SmallConfig(4, 2));
  const auto a2 = TrainProbe(b.x, b.y, SmallConfig(4, 2));
  EXPECT_EQ(a1.weights, a2.weights);
  auto other = SmallConfig(4, 2);
  other.seed = 1;
  EXPECT_NE(TrainProbe(b.x, b.y, other).weights, a1.weights);
}

TEST(Probe, PredictionsAreEquivariantUnderRowPermutation) {
  const auto train = MakeBlobs(120, 6, 3, 2.0, 7);
  const auto head = TrainProbe(train.x, train.y, SmallConfig(6, 3));
  const auto test = MakeBlobs(50, 6, 3, 2.0, 8);
  std::vector<int> perm(50);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(9);
  rng.Shuffle(std::span(perm));
  Eigen::MatrixXd shuffled(50, 6);
  for (int i = 0; i < 50; ++i) shuffled.row(i) = test.x.row(perm[i]);
  const auto a = Predict(head, test.x);
  const auto b = Predict(head, shuffled);
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(b.labels[i], a.labels[perm[i]]);
    EXPECT_EQ(b.probabilities.row(i), a.probabilities.row(perm[i]));
  }
}

TEST(Probe, LossIsInvariantToBatchRowOrder) {
  const auto b = MakeBlobs(20, 4, 2, 1.0, 10);
  const auto arch = SmallConfig(4, 2).Architecture();
  const auto w = InitProbeWeights(arch, 3);
  Eigen::MatrixXd rev = b.x.colwise().reverse();
  std::vector<int> rev_y(b.y.rbegin(), b.y.rend());
  EXPECT_NEAR(ProbeLossAndGradient(arch, w, b.x, b.y).loss,
              ProbeLossAndGradient(arch, w, rev, rev_y).loss, 1e-12);
}

TEST(Probe, RejectsInvalidConfigAndShapes) {
  auto cfg = SmallConfig(4, 2);
  cfg.num_classes = 1;
  EXPECT_THROW(cfg.Validate(), Error);
  const auto b = MakeBlobs(10, 4, 2, 1.0, 0);
  EXPECT_THROW(TrainProbe(b.x, b.y, SmallConfig(5, 2)), Error);
}

TEST(RunCv, ReportsOneHeadPerFoldOnTheFixedTestSide) {
  const auto b = MakeBlobs(100, 4, 2, 3.0, 11);
  std::vector<std::string> ids;
  SplitPlan plan;
  for (int i = 0; i < 100; ++i) {
    ids.push_back("s" + std::to_string(100 + i));
    (i < 80 ? plan.train_ids : plan.test_ids).push_back(ids.back());
    if (i < 80) plan.folds[ids.back()] = i % 5;
  }
  const auto result = RunCv(b.x, b.y, ids, plan, SmallConfig(4, 2));
  ASSERT_EQ(result.folds.size(), 5u);
  std::vector<double> accs;
  for (const auto& f : result.folds) {
    EXPECT_EQ(f.train_support, 64u);
    EXPECT_EQ(f.test_support, 20u);
    accs.push_back(f.accuracy);
  }
  const auto ms = ComputeMeanStd(accs);
  EXPECT_DOUBLE_EQ(result.accuracy.mean, ms.mean);
  EXPECT_DOUBLE_EQ(result.accuracy.stddev, ms.stddev);
  EXPECT_GE(result.accuracy.mean, 0.9);
  EXPECT_EQ(result.heads[2].seed, DeriveSeed(0, 2));
}

TEST(Adam, FirstStepMovesEachWeightByTheLearningRate) {
  Adam adam(3);
  std::vector<double> w = {1.0, -2.0, 0.5};
  const std::vector<double> g = {0.3, -4.0, 0.0};
  adam.Step(w, g, 0.1);
  EXPECT_NEAR(w[0], 0.9, 1e-7);
  EXPECT_NEAR(w[1], -1.9, 1e-7);
  EXPECT_EQ(w[2], 0.5);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(CosineRestart, HalvesAtMidPeriodAndRestarts) {
  EXPECT_DOUBLE_EQ(CosineRestartLr(1.0, 0, 10), 1.0);
  EXPECT_NEAR(CosineRestartLr(1.0, 5, 10), 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(CosineRestartLr(1.0, 10, 10), 1.0);
  EXPECT_NEAR(CosineRestartLr(2.0, 3, 10),
              (1.0 + std::cos(std::numbers::pi * 0.3)), 1e-15);
}

TEST(HeadBlob, RoundTripsThroughBytesAndFiles) {
  const auto b = MakeBlobs(40, 3, 2, 2.0, 12);
  auto cfg = SmallConfig(3, 2);
  cfg.epochs = 3;
  const auto head = TrainProbe(b.x, b.y, cfg, {"neg", "pos"});
  const auto bytes = EncodeHead(head);
  ASSERT_GE(bytes.size(), 5u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "QHED");
  const auto back = DecodeHead(bytes);
  EXPECT_EQ(back.weights, head.weights);
  EXPECT_EQ(back.classes, head.classes);
  EXPECT_EQ(back.epoch_losses, head.epoch_losses);
  EXPECT_EQ(EncodeHead(back), bytes);
  const auto path = std::filesystem::temp_directory_path() / "pfmaudit_head.bin";
  WriteHead(head, path);
  EXPECT_EQ(ReadHead(path).weights, head.weights);
  std::filesystem::remove(path);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(DecodeHead(truncated), Error);
}

}  // namespace
}  // namespace pfmaudit
