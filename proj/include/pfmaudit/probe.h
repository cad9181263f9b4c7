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

// Two-layer MLP probes on frozen embeddings: Linear -> ReLU -> Linear,
// softmax cross-entropy, mini-batch Adam with cosine warm restarts.

#ifndef PFMAUDIT_PROBE_H_
#define PFMAUDIT_PROBE_H_

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pfmaudit/cohort.h"
#include "pfmaudit/head.h"
#include "pfmaudit/metrics.h"
#include "pfmaudit/split.h"

namespace pfmaudit {

struct ProbeConfig {
  int input_dim = 0;
  int hidden_dim = 512;
  int num_classes = 2;
  int epochs = 50;
  int batch_size = 256;
  double learning_rate = 5e-4;
  int restart_period = 10;  // epochs
  uint64_t seed = 0;

  void Validate() const;
  HeadArchitecture Architecture() const;
};

// Gathers the given rows of an embedding matrix as float64.
Eigen::MatrixXd GatherRows(const EmbeddingMatrix& matrix,
                           std::span<const size_t> rows);

std::vector<double> InitProbeWeights(const HeadArchitecture& arch, uint64_t seed);

// Mean softmax cross-entropy over the rows of x and its gradient with respect
// to the flat weight vector [W1 (h x d), b1, W2 (k x h), b2].
LossAndGradient ProbeLossAndGradient(const HeadArchitecture& arch,
                                     std::span<const double> weights,
                                     const Eigen::MatrixXd& x,
                                     std::span<const int> y);

TrainedHead TrainProbe(const Eigen::MatrixXd& x, std::span<const int> y,
                       const ProbeConfig& config,
                       std::vector<std::string> classes = {});

struct Prediction {
  std::vector<int> labels;
  Eigen::MatrixXd probabilities;  // rows sum to 1
};

Prediction Predict(const TrainedHead& head, const Eigen::MatrixXd& x);

struct FoldMetrics {
  int fold = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  size_t train_support = 0;
  size_t test_support = 0;
  double final_loss = 0.0;
};

struct FoldedResult {
  std::vector<FoldMetrics> folds;
  MeanStd accuracy;
  MeanStd macro_f1;
  std::vector<TrainedHead> heads;
  // Test-side predictions of every fold head, aligned with plan.test_ids.
  std::vector<std::vector<int>> test_predictions;
};

// For each fold f: trains on the plan's train ids outside fold f and
// evaluates on the fixed test side. `ids[i]` names row i of x; `y` holds
// class indices (>= 0) for every row that appears in the plan. The head of
// fold f uses seed DeriveSeed(config.seed, f).
FoldedResult RunCv(const Eigen::MatrixXd& x, std::span<const int> y,
                   std::span<const std::string> ids, const SplitPlan& plan,
                   const ProbeConfig& config);

}  // namespace pfmaudit

#endif  // PFMAUDIT_PROBE_H_
