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

// Audit orchestration: privacy, reliability, fairness, retrieval and
// survival sections over one cohort, assembled into a report whose bytes are
// a pure function of (config, cohort files).
//
// Config document (every field except "cohort" and "audits" is optional):
//
//   {
//     "cohort": {"embeddings": "embeddings.qemb", "manifest": "manifest.csv"},
//     "audits": ["privacy", "reliability", "fairness", "retrieval", "survival"],
//     "attributes": ["institution", "gender", "race", "age_group"],
//     "ood_settings": ["OOD1", "OOD2", "OOD3"],
//     "reliability_tasks": ["patch", "wsi"],
//     "retrieval_settings": ["OOD1", "OOD3"],
//     "fairness_settings": ["ID_BASELINE", "OOD1"],
//     "seed": 0,
//     "group_key": "patient",
//     "test_fraction": 0.2,
//     "num_folds": 5,
//     "min_support": 10,
//     "min_institution_samples": 0,
//     "drop_infeasible": true,
//     "retrieval_k": [1, 3, 5],
//     "probe": {"hidden_dim": 512, "epochs": 50, ...},
//     "mil": {"attention_hidden": 256, ...},
//     "survival": {"bins": 4, ...},
//     "output_dir": "report"
//   }
//
// Relative cohort paths resolve against the directory holding the config.

#ifndef PFMAUDIT_AUDIT_H_
#define PFMAUDIT_AUDIT_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pfmaudit/cohort.h"
#include "pfmaudit/mil.h"
#include "pfmaudit/probe.h"
#include "pfmaudit/split.h"

namespace pfmaudit {

inline constexpr std::string_view kAuditPrivacy = "privacy";
inline constexpr std::string_view kAuditReliability = "reliability";
inline constexpr std::string_view kAuditFairness = "fairness";
inline constexpr std::string_view kAuditRetrieval = "retrieval";
inline constexpr std::string_view kAuditSurvival = "survival";

// Sections always run and render in this order.
inline constexpr std::string_view kAuditOrder[] = {
    kAuditPrivacy, kAuditReliability, kAuditFairness, kAuditRetrieval,
    kAuditSurvival};

struct AuditConfig {
  // As written in the config; see Resolve.
  std::filesystem::path embeddings;
  std::filesystem::path manifest;
  std::filesystem::path base_dir;
  std::vector<std::string> audits;
  std::vector<std::string> attributes = {"institution", "gender", "race",
                                         "age_group"};
  std::vector<Setting> ood_settings = {Setting::kOod1, Setting::kOod2,
                                       Setting::kOod3};
  std::vector<std::string> reliability_tasks = {"patch"};
  std::vector<Setting> retrieval_settings = {Setting::kOod1, Setting::kOod3};
  std::vector<Setting> fairness_settings = {Setting::kIdBaseline};
  uint64_t seed = 0;
  GroupKey group_key = GroupKey::kPatient;
  double test_fraction = 0.2;
  int num_folds = kDefaultFolds;
  size_t min_support = 10;
  size_t min_institution_samples = 0;
  bool drop_infeasible = true;
  std::vector<int> retrieval_k = {1, 3, 5};
  // input_dim and num_classes are filled from the cohort.
  ProbeConfig probe;
  MilConfig mil;
  SurvivalConfig survival;
  std::filesystem::path output_dir;

  std::filesystem::path Resolve(const std::filesystem::path& p) const;
  bool Selected(std::string_view audit) const;
  // Throws kArgument on any invalid field.
  void Validate() const;
  // Throws kIo when a resolved cohort file is missing.
  void CheckCohortFiles() const;
};

// `base_dir` resolves relative cohort and output paths.
AuditConfig ConfigFromJson(const nlohmann::json& doc,
                           const std::filesystem::path& base_dir = {});
AuditConfig LoadAuditConfig(const std::filesystem::path& path);
// Canonical echo: cohort paths as given, every other field explicit;
// base_dir and output_dir are left out.
nlohmann::json ConfigToJson(const AuditConfig& config);

// FNV-1a 64 over the canonical (sorted-key, compact) JSON dump, as 16 hex
// digits.
std::string ConfigHash(const nlohmann::json& canonical_config);

struct MetricRow {
  std::string task;
  std::string setting;
  std::string metric;
  double value = 0.0;
  std::optional<double> stddev;  // across folds
  size_t support = 0;
  std::string slice;  // "" = whole evaluation set, else "attribute=value"
  std::string plan;   // key into AuditReport::plans
  uint64_t seed = 0;
};

struct AuditSection {
  std::string audit;
  std::vector<MetricRow> rows;
};

struct AuditReport {
  std::string version;
  nlohmann::json config;
  std::string config_hash;
  nlohmann::json cohort;  // shape plus per-group sample counts
  std::map<std::string, nlohmann::json> plans;
  std::vector<AuditSection> sections;
  std::vector<std::string> warnings;

  // Rows of one section matching the given fields ("" matches anything).
  std::vector<MetricRow> Find(std::string_view audit, std::string_view task,
                              std::string_view setting,
                              std::string_view metric,
                              std::string_view slice = {}) const;
};

nlohmann::json ReportToJson(const AuditReport& report);
AuditReport ReportFromJson(const nlohmann::json& doc);
// Pretty-printed JSON with a trailing newline.
std::string FormatReportJson(const AuditReport& report);

// Per audit: one table per task with setting rows x metric columns for
// whole-test-set rows, and one table per (task, setting) with slice rows for
// sliced rows. Cells print the shortest round-trip decimal form, with
// " ± σ" for fold means.
std::string RenderMarkdown(const AuditReport& report);

AuditReport RunAudit(const AuditConfig& config, const EmbeddingMatrix& matrix,
                     const CohortManifest& cohort);
// Loads and validates the cohort named in the config, then runs it.
AuditReport RunAudit(const AuditConfig& config);

}  // namespace pfmaudit

#endif  // PFMAUDIT_AUDIT_H_
