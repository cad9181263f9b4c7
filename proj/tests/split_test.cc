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
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "pfmaudit/error.h"
#include "pfmaudit/split.h"
#include "testing.h"

namespace pfmaudit {
namespace {

using testing::CheckPlan;
using testing::RandomCohort;
using testing::RandomCohortOptions;

ErrorKind KindOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no pfmaudit::Error thrown";
  return ErrorKind::kPlan;
}

SampleRecord Slide(const std::string& id, const std::string& inst,
                   const std::string& cls) {
  SampleRecord r;
  r.sample_id = id;
  r.patient_id = "p_" + id;
  r.slide_id = "w_" + id;
  r.institution = inst;
  r.class_label = cls;
  r.level = Level::kSlide;
  return r;
}

// `per_cell[i][c]` slides of class c at institution "I<i>".
CohortManifest Grid(const std::vector<std::vector<int>>& per_cell) {
  std::vector<SampleRecord> records;
  int n = 0;
  for (size_t i = 0; i < per_cell.size(); ++i) {
    for (size_t c = 0; c < per_cell[i].size(); ++c) {
      for (int s = 0; s < per_cell[i][c]; ++s) {
        records.push_back(Slide("x" + std::to_string(1000 + n++),
                                "I" + std::string(1, static_cast<char>('A' + i)),
                                "c" + std::to_string(c)));
      }
    }
  }
  return CohortManifest(std::move(records));
}

void ExpectSound(const SplitPlan& plan, const CohortManifest& cohort,
                 const SplitPlan* ood = nullptr) {
  const auto bad = CheckPlan(plan, cohort, ood);
  for (const auto& m : bad) ADD_FAILURE() << SettingName(plan.setting) << ": " << m;
}

TEST(IdSplit, HundredBalancedSlidesGiveTwentyTestAndSixteenPerFold) {
  const auto cohort = Grid({{50, 50}});
  const auto plan = MakeIdSplit(cohort, 0.2, GroupKey::kSlide, 3);
  ExpectSound(plan, cohort);
  ASSERT_EQ(plan.test_ids.size(), 20u);
  std::map<std::string, int> per_class;
  for (const auto& id : plan.test_ids) {
    ++per_class[*cohort.records()[cohort.RowOf(id)].class_label];
  }
  EXPECT_EQ(per_class["c0"], 10);
  EXPECT_EQ(per_class["c1"], 10);
  for (int f = 0; f < 5; ++f) EXPECT_EQ(plan.FoldIds(f).size(), 16u);
}

TEST(IdSplit, DeterministicForFixedSeed) {
  const auto cohort = RandomCohort(5, {});
  const auto a = MakeIdSplit(cohort, 0.2, GroupKey::kPatient, 9);
  const auto b = MakeIdSplit(cohort, 0.2, GroupKey::kPatient, 9);
  EXPECT_EQ(PlanToJson(a).dump(), PlanToJson(b).dump());
  const auto c = MakeIdSplit(cohort, 0.2, GroupKey::kPatient, 10);
  EXPECT_NE(PlanToJson(a).dump(), PlanToJson(c).dump());
}

TEST(IdSplit, PatchesOfOneSlideStayTogether) {
  std::vector<SampleRecord> records;
  for (int s = 0; s < 12; ++s) {
    for (int p = 0; p < 10; ++p) {
      SampleRecord r;
      r.sample_id = "w" + std::to_string(s) + "_" + std::to_string(p);
      r.patient_id = "pt" + std::to_string(s);
      r.slide_id = "w" + std::to_string(s);
      r.institution = "I";
      r.class_label = s % 2 ? "b" : "a";
      records.push_back(r);
    }
  }
  const CohortManifest cohort(std::move(records));
  const auto plan = MakeIdSplit(cohort, 0.2, GroupKey::kSlide, 1);
  ExpectSound(plan, cohort);
  std::map<std::string, std::set<bool>> side;
  for (const auto& id : plan.train_ids) side[id.substr(0, id.find('_'))].insert(true);
  for (const auto& id : plan.test_ids) side[id.substr(0, id.find('_'))].insert(false);
  for (const auto& [slide, sides] : side) EXPECT_EQ(sides.size(), 1u) << slide;
}

TEST(IdSplit, RejectsTooFewGroupsAndBadFraction) {
  const auto cohort = Grid({{5, 8}});
  EXPECT_EQ(KindOf([&] { MakeIdSplit(cohort, 0.2, GroupKey::kSlide, 0); }),
            ErrorKind::kInfeasible);
  const auto ok = Grid({{10, 10}});
  EXPECT_EQ(KindOf([&] { MakeIdSplit(ok, 0.0, GroupKey::kSlide, 0); }),
            ErrorKind::kArgument);
  EXPECT_EQ(KindOf([&] { MakeIdSplit(ok, 1.0, GroupKey::kSlide, 0); }),
            ErrorKind::kArgument);
}

TEST(Ood1, ExplicitInstitutionSetsAreRespected) {
  const auto cohort = Grid({{10, 10}, {10, 10}, {10, 10}, {10, 10}});
  const auto plan = MakeOod1(cohort, std::set<std::string>{"IA", "IB"},
                             std::set<std::string>{"IC", "ID"}, GroupKey::kSlide, 4);
  ExpectSound(plan, cohort);
  for (const auto& id : plan.test_ids) {
    const auto& inst = cohort.records()[cohort.RowOf(id)].institution;
    EXPECT_TRUE(inst == "IC" || inst == "ID");
  }
  EXPECT_EQ(plan.train_ids.size() + plan.test_ids.size(), cohort.size());
}

TEST(Ood1, AutoPartitionIsDeterministicAndRoughlyHalf) {
  const auto cohort = Grid({{10, 10}, {12, 8}, {9, 11}, {10, 10}, {7, 13}, {10, 10}});
  const auto a = MakeOod1(cohort, std::nullopt, std::nullopt, GroupKey::kSlide, 8);
  const auto b = MakeOod1(cohort, std::nullopt, std::nullopt, GroupKey::kSlide, 8);
  ExpectSound(a, cohort);
  EXPECT_EQ(PlanToJson(a).dump(), PlanToJson(b).dump());
  const double frac = static_cast<double>(a.test_ids.size()) / cohort.size();
  EXPECT_GE(frac, 1.0 / 3.0);
  EXPECT_LE(frac, 2.0 / 3.0);
}

TEST(Ood1, RejectsOverlapAndMissingClass) {
  const auto cohort = Grid({{10, 10}, {10, 0}, {10, 10}});
  EXPECT_EQ(KindOf([&] {
              MakeOod1(cohort, std::set<std::string>{"IA"},
                       std::set<std::string>{"IA", "IB"}, GroupKey::kSlide, 0);
            }),
            ErrorKind::kArgument);
  EXPECT_EQ(KindOf([&] {
              MakeOod1(cohort, std::set<std::string>{"IA", "IC"},
                       std::set<std::string>{"IB"}, GroupKey::kSlide, 0);
            }),
            ErrorKind::kCoverage);
}

TEST(Ood2, AssignedTrainAndBalancedTest) {
  const auto cohort = Grid({{20, 5}, {5, 20}, {10, 14}, {8, 10}});
  const InstitutionClassAssignment assign = {{"IA", "c0"}, {"IB", "c1"}};
  const auto plan = MakeOod2(cohort, assign, std::set<std::string>{"IC", "ID"},
                             GroupKey::kSlide, 2);
  ExpectSound(plan, cohort);
  EXPECT_EQ(plan.train_ids.size(), 40u);
  EXPECT_EQ(plan.test_ids.size(), 36u);  // 18 per class
}

TEST(Ood2, AssignmentMissingAClassIsACoverageError) {
  const auto cohort = Grid({{10, 10, 10}, {10, 10, 10}, {10, 10, 10}});
  const InstitutionClassAssignment assign = {{"IA", "c0"}, {"IB", "c1"}};
  EXPECT_EQ(KindOf([&] {
              MakeOod2(cohort, assign, std::set<std::string>{"IC"}, GroupKey::kSlide, 0);
            }),
            ErrorKind::kCoverage);
}

TEST(Ood3, TwoClassAssignmentIsSwapped) {
  const auto cohort = Grid({{20, 6}, {6, 20}});
  const auto plan = MakeOod3(cohort, InstitutionClassAssignment{{"IA", "c0"}, {"IB", "c1"}},
                             GroupKey::kSlide, 1);
  ExpectSound(plan, cohort);
  EXPECT_EQ(*plan.test_assignment,
            (InstitutionClassAssignment{{"IA", "c1"}, {"IB", "c0"}}));
  EXPECT_EQ(plan.test_ids.size(), 12u);
}

TEST(Ood3, ThreeClassAssignmentIsACyclicShift) {
  const auto d = Derange({{"A", "0"}, {"B", "1"}, {"C", "2"}}, {"0", "1", "2"});
  EXPECT_EQ(d, (InstitutionClassAssignment{{"A", "1"}, {"B", "2"}, {"C", "0"}}));
  for (const auto& [inst, cls] : d) {
    EXPECT_NE(cls, (InstitutionClassAssignment{{"A", "0"}, {"B", "1"}, {"C", "2"}}).at(inst));
  }
}

TEST(Ood3, TrainSideMatchesOod2UnderTheSameAssignment) {
  const auto cohort = Grid({{20, 6}, {6, 20}, {10, 10}});
  const InstitutionClassAssignment assign = {{"IA", "c0"}, {"IB", "c1"}};
  const auto o2 = MakeOod2(cohort, assign, std::set<std::string>{"IC"}, GroupKey::kSlide, 6);
  const auto o3 = MakeOod3(cohort, assign, GroupKey::kSlide, 6);
  EXPECT_EQ(o2.train_ids, o3.train_ids);
  EXPECT_EQ(o2.folds, o3.folds);
}

TEST(Ood3, MissingInvertedClassFailsOrDropsByPolicy) {
  const auto cohort = Grid({{20, 6}, {6, 20}, {10, 0}, {0, 10}});
  const InstitutionClassAssignment assign = {
      {"IA", "c0"}, {"IB", "c1"}, {"IC", "c0"}, {"ID", "c1"}};
  EXPECT_EQ(KindOf([&] { MakeOod3(cohort, assign, GroupKey::kSlide, 0); }),
            ErrorKind::kInfeasible);
  SplitOptions drop;
  drop.drop_infeasible = true;
  const auto plan = MakeOod3(cohort, assign, GroupKey::kSlide, 0, drop);
  ExpectSound(plan, cohort);
  EXPECT_EQ(plan.train_assignment->size(), 2u);
  EXPECT_EQ(plan.warnings.size(), 2u);
}

// Brute force over every total assignment of institutions to admissible
// classes that covers all classes.
int64_t BruteForceBest(const std::vector<std::vector<size_t>>& counts, int k,
                       bool deranged) {
  const size_t n = counts.size();
  int64_t best = -1;
  std::vector<int> choice(n, -1);
  std::function<void(size_t)> go = [&](size_t i) {
    if (i == n) {
      std::set<int> covered;
      int64_t total = 0;
      for (size_t j = 0; j < n; ++j) {
        if (choice[j] < 0) continue;
        covered.insert(choice[j]);
        total += static_cast<int64_t>(counts[j][choice[j]]);
      }
      if (static_cast<int>(covered.size()) == k) best = std::max(best, total);
      return;
    }
    bool any = false;
    for (int c = 0; c < k; ++c) {
      if (counts[i][c] == 0 || (deranged && counts[i][(c + 1) % k] == 0)) continue;
      any = true;
      choice[i] = c;
      go(i + 1);
    }
    if (!any) {
      choice[i] = -1;
      go(i + 1);
    }
  };
  go(0);
  return best;
}

TEST(AutoAssignment, MatchesBruteForceOnRandomFourInstitutionFixtures) {
  Rng rng(2026);
  int compared = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 2 + static_cast<int>(rng.UniformInt(3));
    std::vector<std::vector<int>> cells(4, std::vector<int>(k));
    std::vector<std::vector<size_t>> counts(4, std::vector<size_t>(k));
    for (int i = 0; i < 4; ++i) {
      for (int c = 0; c < k; ++c) {
        cells[i][c] = rng.Uniform() < 0.3 ? 0 : static_cast<int>(rng.UniformInt(12));
      }
    }
    // Every class needs at least one sample for the vocabulary.
    for (int c = 0; c < k; ++c) cells[c % 4][c] = std::max(cells[c % 4][c], 1);
    const auto cohort = Grid(cells);
    const auto& classes = cohort.vocab(kClassLabel);
    const auto& insts = cohort.vocab(kInstitution);
    for (size_t i = 0; i < insts.size(); ++i) {
      const int row = insts[i][1] - 'A';
      for (int c = 0; c < k; ++c) {
        const auto pos = std::find(classes.begin(), classes.end(),
                                   "c" + std::to_string(c)) - classes.begin();
        counts[i][pos] = cells[row][c];
      }
    }
    for (bool deranged : {false, true}) {
      const int64_t want = BruteForceBest(counts, k, deranged);
      if (want < 0) {
        EXPECT_EQ(KindOf([&] { AutoAssignment(cohort, insts, deranged); }),
                  ErrorKind::kCoverage);
        continue;
      }
      const auto got = AutoAssignment(cohort, insts, deranged);
      EXPECT_EQ(static_cast<int64_t>(RetainedSamples(cohort, got)), want)
          << "trial " << trial;
      std::set<std::string> covered;
      for (const auto& [inst, cls] : got) covered.insert(cls);
      EXPECT_EQ(covered.size(), static_cast<size_t>(k));
      ++compared;
    }
  }
  EXPECT_GT(compared, 300);
}

TEST(MatchedBaseline, CoversExactlyTheOodSampleSet) {
  // With three classes each OOD3 institution contributes two of them and the
  // OOD3 sample set is a strict subset of the OOD1 one.
  const auto cohort = RandomCohort(17, {.n_classes = 3, .n_institutions = 6});
  const auto o1 = MakeOod1(cohort, std::nullopt, std::nullopt, GroupKey::kPatient, 1);
  SplitOptions drop;
  drop.drop_infeasible = true;
  const auto o3 = MakeOod3(cohort, std::nullopt, GroupKey::kPatient, 1, drop);
  const auto b1 = MakeMatchedBaseline(o1, cohort, 2);
  const auto b3 = MakeMatchedBaseline(o3, cohort, 2);
  ExpectSound(b1, cohort, &o1);
  ExpectSound(b3, cohort, &o3);
  EXPECT_EQ(b1.setting, Setting::kBaseline12);
  EXPECT_EQ(b3.setting, Setting::kBaseline3);
  EXPECT_LT(b3.train_ids.size() + b3.test_ids.size(),
            b1.train_ids.size() + b1.test_ids.size());
}

TEST(MatchedBaseline, PerClassTrainFractionTracksThePlan) {
  const auto cohort = Grid({{30, 10}, {10, 30}, {20, 20}});
  const auto o1 = MakeOod1(cohort, std::set<std::string>{"IA", "IB"},
                           std::set<std::string>{"IC"}, GroupKey::kSlide, 3);
  const auto base = MakeMatchedBaseline(o1, cohort, 4);
  ExpectSound(base, cohort, &o1);
  const double frac = static_cast<double>(o1.train_ids.size()) /
                      (o1.train_ids.size() + o1.test_ids.size());
  std::map<std::string, int> train, total;
  for (const auto& id : base.train_ids) {
    ++train[*cohort.records()[cohort.RowOf(id)].class_label];
  }
  for (const auto& r : cohort.records()) ++total[*r.class_label];
  for (const auto& [cls, n] : total) {
    EXPECT_LE(std::abs(train[cls] - frac * n), 1.0 + 1e-9) << cls;
  }
}

TEST(MatchedBaseline, RejectsNonOodInput) {
  const auto cohort = Grid({{10, 10}});
  const auto id = MakeIdSplit(cohort, 0.2, GroupKey::kSlide, 0);
  EXPECT_EQ(KindOf([&] { MakeMatchedBaseline(id, cohort, 0); }), ErrorKind::kArgument);
}

TEST(SurvivalFolds, FiftyPatientsKeepCensoringNearTheGlobalRate) {
  std::vector<SampleRecord> records;
  for (int p = 0; p < 50; ++p) {
    SampleRecord r = Slide("s" + std::to_string(p), "I" + std::to_string(p % 3), "c0");
    r.survival_days = 10.0 * (p + 1);
    r.censored = p % 5 < 2;
    records.push_back(r);
  }
  const CohortManifest cohort(std::move(records));
  const auto plan = MakeSurvivalFolds(cohort, 5, GroupKey::kPatient, 7);
  EXPECT_TRUE(plan.test_ids.empty());
  EXPECT_EQ(plan.folds.size(), 50u);
  for (int f = 0; f < 5; ++f) {
    const auto ids = plan.FoldIds(f);
    ASSERT_FALSE(ids.empty());
    int censored = 0;
    for (const auto& id : ids) censored += *cohort.records()[cohort.RowOf(id)].censored;
    const double rate = static_cast<double>(censored) / ids.size();
    EXPECT_GE(rate, 0.30);
    EXPECT_LE(rate, 0.50);
  }
  EXPECT_EQ(PlanToJson(plan).dump(),
            PlanToJson(MakeSurvivalFolds(cohort, 5, GroupKey::kPatient, 7)).dump());
}

TEST(SurvivalFolds, FewerPatientsThanFoldsIsInfeasible) {
  std::vector<SampleRecord> records;
  for (int p = 0; p < 4; ++p) {
    SampleRecord r = Slide("s" + std::to_string(p), "I", "c0");
    r.survival_days = 5.0;
    r.censored = false;
    records.push_back(r);
  }
  const CohortManifest cohort(std::move(records));
  EXPECT_EQ(KindOf([&] { MakeSurvivalFolds(cohort, 5, GroupKey::kPatient, 0); }),
            ErrorKind::kInfeasible);
}

TEST(PlanJson, RoundTripsEveryField) {
  const auto cohort = RandomCohort(3, {.n_classes = 3, .n_institutions = 6});
  SplitOptions drop;
  drop.drop_infeasible = true;
  const auto plan = MakeOod3(cohort, std::nullopt, GroupKey::kPatient, 12, drop);
  const auto doc = PlanToJson(plan);
  EXPECT_EQ(PlanToJson(PlanFromJson(doc)).dump(), doc.dump());
}

TEST(RandomCohorts, EveryGeneratedPlanIsSound) {
  int plans = 0;
  for (uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    RandomCohortOptions o;
    o.n_classes = 2 + static_cast<int>(rng.UniformInt(3));
    o.n_institutions = 4 + static_cast<int>(rng.UniformInt(9));
    o.min_patients = 12;
    o.max_patients = 30;
    const auto cohort = RandomCohort(seed * 7919 + 1, o);
    SplitOptions opts;
    opts.drop_infeasible = true;
    auto attempt = [&](const std::function<SplitPlan()>& make) -> std::optional<SplitPlan> {
      try {
        auto plan = make();
        ExpectSound(plan, cohort);
        ++plans;
        return plan;
      } catch (const Error& e) {
        EXPECT_TRUE(e.kind() == ErrorKind::kInfeasible || e.kind() == ErrorKind::kCoverage)
            << e.what();
        return std::nullopt;
      }
    };
    attempt([&] { return MakeIdSplit(cohort, 0.2, GroupKey::kPatient, seed); });
    for (auto make : std::vector<std::function<SplitPlan()>>{
             [&] { return MakeOod1(cohort, std::nullopt, std::nullopt, GroupKey::kPatient, seed, opts); },
             [&] { return MakeOod2(cohort, std::nullopt, std::nullopt, GroupKey::kPatient, seed, opts); },
             [&] { return MakeOod3(cohort, std::nullopt, GroupKey::kPatient, seed, opts); }}) {
      if (auto ood = attempt(make)) {
        try {
          const auto base = MakeMatchedBaseline(*ood, cohort, seed + 1);
          ExpectSound(base, cohort, &*ood);
          ++plans;
        } catch (const Error& e) {
          EXPECT_EQ(e.kind(), ErrorKind::kInfeasible) << e.what();
        }
      }
    }
  }
  EXPECT_GT(plans, 200);
}

}  // namespace
}  // namespace pfmaudit
