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

// Synthetic cohorts with planted signal directions.
//
// A categorical attribute with K values and strength mu places value v at
//
//   c_v = mu * sqrt(K / (K - 1)) * (u_v - mean_k u_k)
//
// where u_1..u_K are orthonormal. Every centroid has norm mu and, for K = 2,
// the two centroids sit 2 * mu apart. Gender and race use +/- mu along a
// single direction, which gives the same 2 * mu separation. Each row is the
// sum of its centroids plus isotropic Gaussian noise (sigma = 1, or the
// institution's noise scale).
//
// The cohort is laid out as n_institutions x n_classes cells of
// samples_per_cell slides, each slide holding slide_size patch rows from one
// patient. Institution i's dominant class is i mod n_classes. With
// probability spurious_rho, a slide outside the dominant class is relabeled
// to the dominant class, except for the first protected_per_cell slides of
// every cell, which keep their class at every spurious_rho.

#ifndef PFMAUDIT_SYNTH_H_
#define PFMAUDIT_SYNTH_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pfmaudit/cohort.h"

namespace pfmaudit {

struct SurvivalSpec {
  double base_hazard = 1e-3;    // events per day at zero risk
  double risk_strength = 1.0;   // log-hazard slope along the risk direction
  double censor_hazard = 5e-4;  // independent exponential censoring; 0 = none
};

struct SynthSpec {
  int dim = 32;
  int n_institutions = 4;
  int n_classes = 2;
  int samples_per_cell = 50;  // slides per (institution, class) cell
  double mu_class = 0.0;
  double mu_inst = 0.0;
  double mu_gender = 0.0;
  double mu_race = 0.0;
  double spurious_rho = 0.0;
  int slide_size = 1;
  // Below 1, only this fraction of the patches of a class > 0 slide (at
  // least one) carry mu_class along their class direction; every other patch
  // carries no class signal.
  double witness_rate = 1.0;
  // Defaults to ceil(samples_per_cell / 20).
  std::optional<int> protected_per_cell;
  // Per-institution noise sigma; empty means 1 everywhere.
  std::vector<double> institution_noise;
  std::optional<SurvivalSpec> survival;
  uint64_t seed = 0;

  int RequiredDim() const;
  int ProtectedPerCell() const;
  // Throws kArgument when an invariant fails.
  void Validate() const;
};

nlohmann::json SpecToJson(const SynthSpec& spec);
SynthSpec SpecFromJson(const nlohmann::json& doc);

struct GroundTruth {
  SynthSpec spec;
  std::vector<std::vector<double>> class_directions;
  std::vector<std::vector<double>> institution_directions;
  std::vector<double> gender_direction;
  std::vector<double> race_direction;
  std::vector<double> risk_direction;  // empty without survival
  std::vector<int> dominant_class;     // per institution
  // Per row.
  std::vector<int> institution;
  std::vector<int> class_index;
  std::vector<bool> witness;
  std::vector<double> latent_risk;  // empty without survival
};

nlohmann::json GroundTruthToJson(const GroundTruth& truth);
GroundTruth GroundTruthFromJson(const nlohmann::json& doc);

struct SynthCohort {
  EmbeddingMatrix matrix;
  CohortManifest manifest;
  GroundTruth truth;
};

SynthCohort GenerateCohort(const SynthSpec& spec);

// 1 / cardinality of class, institution, gender, race or age_group under the
// balanced design.
double ExpectedChance(const SynthSpec& spec, std::string_view attribute);

inline constexpr char kSynthEmbeddingsFile[] = "embeddings.qemb";
inline constexpr char kSynthManifestFile[] = "manifest.csv";
inline constexpr char kSynthTruthFile[] = "ground_truth.json";

// Writes the three cohort files into `dir`, creating it if needed.
void WriteSynthCohort(const SynthCohort& cohort,
                      const std::filesystem::path& dir);

}  // namespace pfmaudit

#endif  // PFMAUDIT_SYNTH_H_
