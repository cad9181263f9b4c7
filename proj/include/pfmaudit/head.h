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

// Trained heads and the first-order machinery shared by every trainer.

#ifndef PFMAUDIT_HEAD_H_
#define PFMAUDIT_HEAD_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pfmaudit/rng.h"

namespace pfmaudit {

enum class HeadKind : uint8_t {
  kProbeMlp = 1,         // Linear -> ReLU -> Linear
  kAbmilClassifier = 2,  // attention pooling -> Linear -> softmax
  kAbmilSurvival = 3,    // attention pooling -> Linear -> per-bin sigmoid
};

std::string_view HeadKindName(HeadKind kind);

struct HeadArchitecture {
  HeadKind kind = HeadKind::kProbeMlp;
  int input_dim = 0;
  // MLP hidden width, or attention hidden width for the ABMIL heads.
  int hidden_dim = 0;
  // Classes, or time bins for survival.
  int num_outputs = 0;

  size_t ParameterCount() const;
  void Validate() const;
};

struct TrainedHead {
  HeadArchitecture arch;
  std::vector<double> weights;
  std::vector<std::string> classes;
  std::vector<double> bin_edges;  // survival heads only
  double final_loss = 0.0;
  int epochs_run = 0;
  uint64_t seed = 0;
  std::vector<double> epoch_losses;

  // Weight count must match the architecture and every weight be finite.
  void Validate() const;
};

// Versioned binary blob: "QHED", version 0x01, then the architecture,
// vocabulary, bin edges, training metadata and weights, all little-endian
// (weights as float64).
std::vector<uint8_t> EncodeHead(const TrainedHead& head);
TrainedHead DecodeHead(std::span<const uint8_t> bytes);
void WriteHead(const TrainedHead& head, const std::filesystem::path& path);
TrainedHead ReadHead(const std::filesystem::path& path);

class Adam {
 public:
  explicit Adam(size_t num_params, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8);

  void Step(std::span<double> params, std::span<const double> grad, double lr);

  int64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, epsilon_;
  std::vector<double> m_, v_;
  int64_t t_ = 0;
};

// Cosine annealing with warm restarts, stepped once per epoch:
// lr(e) = base * (1 + cos(pi * (e mod period) / period)) / 2.
double CosineRestartLr(double base_lr, int epoch, int period);

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void InitUniformFanIn(std::span<double> weights, int fan_in, Rng& rng);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

}  // namespace pfmaudit

#endif  // PFMAUDIT_HEAD_H_
