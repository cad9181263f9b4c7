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

// Train/test plan construction: in-distribution splits, the three
// out-of-distribution settings, matched baselines and survival folds.
//
// All stratification happens at group granularity (patient or slide); a
// group never straddles train and test. Every plan is a pure function of
// (cohort, arguments, seed).

#ifndef PFMAUDIT_SPLIT_H_
#define PFMAUDIT_SPLIT_H_

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pfmaudit/cohort.h"

namespace pfmaudit {

enum class Setting { kIdBaseline, kOod1, kOod2, kOod3, kBaseline12, kBaseline3 };
enum class GroupKey { kPatient, kSlide };

std::string_view SettingName(Setting setting);
Setting ParseSetting(std::string_view name);
std::string_view GroupKeyName(GroupKey key);
GroupKey ParseGroupKey(std::string_view name);

// institution -> class label.
using InstitutionClassAssignment = std::map<std::string, std::string>;

inline constexpr int kDefaultFolds = 5;

struct SplitPlan {
  Setting setting = Setting::kIdBaseline;
  // Sorted, disjoint.
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  // sample_id -> fold. Covers train_ids (or every id for survival folds,
  // where test_ids is empty).
  std::map<std::string, int> folds;
  int num_folds = kDefaultFolds;
  std::optional<InstitutionClassAssignment> train_assignment;
  std::optional<InstitutionClassAssignment> test_assignment;
  std::vector<std::string> train_institutions;
  std::vector<std::string> test_institutions;
  uint64_t seed = 0;
  GroupKey group_key = GroupKey::kSlide;
  // Manifest attribute the plan was stratified on.
  std::string label_attribute = std::string(kClassLabel);
  std::vector<std::string> warnings;

  // Train ids with fold != f.
  std::vector<std::string> FoldTrainIds(int fold) const;
  // Ids assigned to fold f.
  std::vector<std::string> FoldIds(int fold) const;
};

nlohmann::json PlanToJson(const SplitPlan& plan);
SplitPlan PlanFromJson(const nlohmann::json& doc);

struct SplitOptions {
  int num_folds = kDefaultFolds;
  // Institutions with fewer labeled samples are dropped (with a warning)
  // before any OOD construction.
  size_t min_institution_samples = 0;
  // When set, institutions that cannot satisfy an OOD2/OOD3 constraint are
  // dropped with a warning instead of failing the plan.
  bool drop_infeasible = false;
};

SplitPlan MakeIdSplit(const CohortManifest& cohort, double test_fraction,
                      GroupKey group_key, uint64_t seed,
                      std::string_view attribute = kClassLabel,
                      const SplitOptions& options = {});

// Omitted sets are filled in: one omitted side becomes the complement of the
// other; both omitted triggers the seeded auto partition targeting a 50/50
// sample split with every class on both sides.
SplitPlan MakeOod1(const CohortManifest& cohort,
                   std::optional<std::set<std::string>> train_institutions,
                   std::optional<std::set<std::string>> test_institutions,
                   GroupKey group_key, uint64_t seed,
                   const SplitOptions& options = {},
                   std::string_view attribute = kClassLabel);

SplitPlan MakeOod2(const CohortManifest& cohort,
                   std::optional<InstitutionClassAssignment> assignment,
                   std::optional<std::set<std::string>> test_institutions,
                   GroupKey group_key, uint64_t seed,
                   const SplitOptions& options = {});

SplitPlan MakeOod3(const CohortManifest& cohort,
                   std::optional<InstitutionClassAssignment> train_assignment,
                   GroupKey group_key, uint64_t seed,
                   const SplitOptions& options = {});

SplitPlan MakeMatchedBaseline(const SplitPlan& plan,
                              const CohortManifest& cohort, uint64_t seed);

SplitPlan MakeSurvivalFolds(const CohortManifest& cohort, int k,
                            GroupKey group_key, uint64_t seed);

// Assignment maximizing the number of retained samples subject to every
// class being assigned to at least one institution. With
// `require_deranged_support`, an institution may only take class c if it
// also holds samples of the class it would be deranged to. Institutions with
// no admissible class are left out of the mapping. Throws kCoverage when no
// covering assignment exists.
InstitutionClassAssignment AutoAssignment(
    const CohortManifest& cohort, const std::vector<std::string>& institutions,
    bool require_deranged_support);

// Cyclic shift by one position in the class vocabulary order; for two
// classes this is the swap.
InstitutionClassAssignment Derange(const InstitutionClassAssignment& assignment,
                                   const std::vector<std::string>& classes);

// Number of samples an assignment retains (sum over institutions of their
// samples of the assigned class).
size_t RetainedSamples(const CohortManifest& cohort,
                       const InstitutionClassAssignment& assignment);

}  // namespace pfmaudit

#endif  // PFMAUDIT_SPLIT_H_
