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

// Slide-level heads over bags of patch embeddings.
//
// Attention pooling (ungated):
//   a_k = softmax_k( w . tanh(V h_k + c) ),   z = sum_k a_k h_k
//
// The classifier maps z through Linear(d -> classes) and softmax
// cross-entropy. The survival head maps z through Linear(d -> bins) and a
// per-bin sigmoid giving conditional hazards h_j; with
// S(j) = prod_{l <= j} (1 - h_l), an event in bin j costs
// -log(h_j * S(j - 1)) and a censoring in bin j costs -log S(j). Risk is
// -sum_j S(j).
//
// Flat weight layout: [V (a x d), c (a), w (a), W_out (k x d), b_out (k)].

#ifndef PFMAUDIT_MIL_H_
#define PFMAUDIT_MIL_H_

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pfmaudit/cohort.h"
#include "pfmaudit/head.h"

namespace pfmaudit {

struct Bag {
  std::string slide_id;
  Eigen::MatrixXd instances;  // m x d, m >= 1
  std::vector<size_t> rows;   // cohort rows, in instance order
};

// Groups the given cohort rows into bags by slide_id, bags in order of first
// appearance and instances in row order.
std::vector<Bag> BuildBags(const EmbeddingMatrix& matrix,
                           const CohortManifest& cohort,
                           std::span<const size_t> rows);

struct MilConfig {
  int input_dim = 0;
  int attention_hidden = 256;
  int num_classes = 2;
  int epochs = 50;
  int batch_size = 8;  // bags
  double learning_rate = 2e-4;
  int restart_period = 10;
  uint64_t seed = 0;

  void Validate() const;
  HeadArchitecture Architecture() const;
};

struct SurvivalConfig {
  int input_dim = 0;
  int attention_hidden = 256;
  int bins = 4;
  double l1_lambda = 1e-4;
  double l2_lambda = 1e-5;
  int grad_accumulation = 32;
  double learning_rate = 2e-4;
  int epochs = 50;
  int restart_period = 10;
  uint64_t seed = 0;

  void Validate() const;
  HeadArchitecture Architecture() const;
};

struct AttentionPooling {
  Eigen::VectorXd embedding;  // d
  Eigen::VectorXd attention;  // m, on the simplex
};

AttentionPooling AbmilAggregate(const Eigen::MatrixXd& instances,
                                 const HeadArchitecture& arch,
                                 std::span<const double> weights);

std::vector<double> InitAbmilWeights(const HeadArchitecture& arch,
                                     uint64_t seed);

// Mean cross-entropy over bags.
LossAndGradient MilClassifierLossAndGradient(const HeadArchitecture& arch,
                                             std::span<const double> weights,
                                             std::span<const Bag> bags,
                                             std::span<const int> labels);

// Mean discrete-time NLL over bags plus l1 * |w|_1 + l2 * |w|_2^2 over all
// weights.
LossAndGradient SurvivalLossAndGradient(const HeadArchitecture& arch,
                                        std::span<const double> weights,
                                        std::span<const Bag> bags,
                                        std::span<const int> time_bins,
                                        const std::vector<bool>& censored,
                                        double l1_lambda, double l2_lambda);

// Interior bin edges at the j/bins quantiles (j = 1..bins-1) of the
// uncensored times.
std::vector<double> SurvivalBinEdges(std::span<const double> times,
                                     const std::vector<bool>& censored, int bins);
int TimeBin(double time, const std::vector<double>& edges);

// Sums per-bag gradients and releases their mean once `window` bags have
// been added (or on Flush for a partial window).
class GradientAccumulator {
 public:
  GradientAccumulator(size_t num_params, int window);
  void Add(std::span<const double> gradient);
  bool Ready() const { return count_ == window_; }
  bool Empty() const { return count_ == 0; }
  std::vector<double> Take();

 private:
  std::vector<double> sum_;
  int window_;
  int count_ = 0;
};

TrainedHead TrainMilClassifier(std::span<const Bag> bags,
                               std::span<const int> labels,
                               const MilConfig& config,
                               std::vector<std::string> classes = {});

TrainedHead TrainMilSurvival(std::span<const Bag> bags,
                             std::span<const double> times,
                             const std::vector<bool>& censored,
                             const SurvivalConfig& config);

struct MilPrediction {
  std::vector<int> labels;
  Eigen::MatrixXd probabilities;
  std::vector<Eigen::VectorXd> attention;
};

MilPrediction PredictMil(const TrainedHead& head, std::span<const Bag> bags);

struct SurvivalPrediction {
  std::vector<double> risk;
  Eigen::MatrixXd hazards;   // bags x bins
  Eigen::MatrixXd survival;  // bags x bins, non-increasing along each row
};

SurvivalPrediction PredictSurvival(const TrainedHead& head,
                                   std::span<const Bag> bags);

}  // namespace pfmaudit

#endif  // PFMAUDIT_MIL_H_
