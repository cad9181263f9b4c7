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

#include "pfmaudit/split.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "pfmaudit/error.h"
#include "pfmaudit/rng.h"

namespace pfmaudit {

std::string_view SettingName(Setting setting) {
  switch (setting) {
    case Setting::kIdBaseline: return "ID_BASELINE";
    case Setting::kOod1: return "OOD1";
    case Setting::kOod2: return "OOD2";
    case Setting::kOod3: return "OOD3";
    case Setting::kBaseline12: return "BASELINE_12";
    case Setting::kBaseline3: return "BASELINE_3";
  }
  return "?";
}

Setting ParseSetting(std::string_view name) {
  for (Setting s : {Setting::kIdBaseline, Setting::kOod1, Setting::kOod2,
                    Setting::kOod3, Setting::kBaseline12, Setting::kBaseline3}) {
    if (SettingName(s) == name) return s;
  }
  throw Error(ErrorKind::kArgument, "unknown setting \"" + std::string(name) + "\"");
}

std::string_view GroupKeyName(GroupKey key) {
  return key == GroupKey::kPatient ? "patient" : "slide";
}

GroupKey ParseGroupKey(std::string_view name) {
  if (name == "patient") return GroupKey::kPatient;
  if (name == "slide") return GroupKey::kSlide;
  throw Error(ErrorKind::kArgument,
              "group_key must be patient or slide, got \"" + std::string(name) + "\"");
}

std::vector<std::string> SplitPlan::FoldTrainIds(int fold) const {
  std::vector<std::string> ids;
  for (const auto& id : train_ids) {
    auto it = folds.find(id);
    if (it != folds.end() && it->second != fold) ids.push_back(id);
  }
  return ids;
}

std::vector<std::string> SplitPlan::FoldIds(int fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, f] : folds) {
    if (f == fold) ids.push_back(id);
  }
  return ids;
}

nlohmann::json PlanToJson(const SplitPlan& plan) {
  nlohmann::json doc;
  doc["setting"] = SettingName(plan.setting);
  doc["seed"] = plan.seed;
  doc["group_key"] = GroupKeyName(plan.group_key);
  doc["label_attribute"] = plan.label_attribute;
  doc["num_folds"] = plan.num_folds;
  doc["train_ids"] = plan.train_ids;
  doc["test_ids"] = plan.test_ids;
  doc["folds"] = plan.folds;
  doc["train_assignment"] = plan.train_assignment
                                ? nlohmann::json(*plan.train_assignment)
                                : nlohmann::json(nullptr);
  doc["test_assignment"] = plan.test_assignment
                               ? nlohmann::json(*plan.test_assignment)
                               : nlohmann::json(nullptr);
  doc["train_institutions"] = plan.train_institutions;
  doc["test_institutions"] = plan.test_institutions;
  doc["warnings"] = plan.warnings;
  return doc;
}

SplitPlan PlanFromJson(const nlohmann::json& doc) {
  try {
    SplitPlan plan;
    plan.setting = ParseSetting(doc.at("setting").get<std::string>());
    plan.seed = doc.at("seed").get<uint64_t>();
    plan.group_key = ParseGroupKey(doc.at("group_key").get<std::string>());
    plan.label_attribute = doc.at("label_attribute").get<std::string>();
    plan.num_folds = doc.at("num_folds").get<int>();
    plan.train_ids = doc.at("train_ids").get<std::vector<std::string>>();
    plan.test_ids = doc.at("test_ids").get<std::vector<std::string>>();
    plan.folds = doc.at("folds").get<std::map<std::string, int>>();
    if (!doc.at("train_assignment").is_null()) {
      plan.train_assignment =
          doc["train_assignment"].get<InstitutionClassAssignment>();
    }
    if (!doc.at("test_assignment").is_null()) {
      plan.test_assignment =
          doc["test_assignment"].get<InstitutionClassAssignment>();
    }
    plan.train_institutions =
        doc.value("train_institutions", std::vector<std::string>{});
    plan.test_institutions =
        doc.value("test_institutions", std::vector<std::string>{});
    plan.warnings = doc.value("warnings", std::vector<std::string>{});
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("split plan: ") + e.what());
  }
}

namespace {

struct Group {
  std::string key;
  std::vector<size_t> rows;
  int label = -1;
};

const std::string& GroupField(const SampleRecord& r, GroupKey key) {
  return key == GroupKey::kPatient ? r.patient_id : r.slide_id;
}

// Groups in order of first appearance among `rows`; a group's label is the
// majority label of its rows (ties go to the lower index).
std::vector<Group> BuildGroups(const CohortManifest& cohort,
                               const std::vector<size_t>& rows, GroupKey key,
                               const std::vector<int>& labels, int num_classes) {
  std::vector<Group> groups;
  std::unordered_map<std::string, size_t> index;
  for (size_t r : rows) {
    const auto& k = GroupField(cohort.records()[r], key);
    auto [it, inserted] = index.emplace(k, groups.size());
    if (inserted) groups.push_back(Group{k, {}, -1});
    groups[it->second].rows.push_back(r);
  }
  for (auto& g : groups) {
    std::vector<size_t> votes(num_classes, 0);
    for (size_t r : g.rows) {
      if (labels[r] >= 0) ++votes[labels[r]];
    }
    g.label = static_cast<int>(std::max_element(votes.begin(), votes.end()) -
                               votes.begin());
  }
  return groups;
}

std::vector<std::vector<size_t>> GroupsByClass(const std::vector<Group>& groups,
                                               const std::vector<size_t>& subset,
                                               int num_classes) {
  std::vector<std::vector<size_t>> by_class(num_classes);
  for (size_t g : subset) by_class[groups[g].label].push_back(g);
  return by_class;
}

std::vector<size_t> Iota(size_t n) {
  std::vector<size_t> v(n);
  std::iota(v.begin(), v.end(), size_t{0});
  return v;
}

// Assigns train groups to folds, stratified by class. Round-robin continues
// across classes; fold sizes stay within one group of each other.
std::map<std::string, int> AssignFolds(const CohortManifest& cohort,
                                       const std::vector<Group>& groups,
                                       const std::vector<size_t>& train_groups,
                                       int num_classes, int num_folds,
                                       Rng& rng) {
  if (train_groups.size() < static_cast<size_t>(num_folds)) {
    throw Error(ErrorKind::kInfeasible,
                "train side has " + std::to_string(train_groups.size()) +
                    " groups, need at least " + std::to_string(num_folds) +
                    " to fill every fold");
  }
  std::map<std::string, int> folds;
  size_t offset = 0;
  for (auto& members : GroupsByClass(groups, train_groups, num_classes)) {
    rng.Shuffle(std::span(members));
    for (size_t g : members) {
      const int fold = static_cast<int>(offset++ % num_folds);
      for (size_t r : groups[g].rows) {
        folds[cohort.records()[r].sample_id] = fold;
      }
    }
  }
  return folds;
}

std::vector<std::string> IdsOf(const CohortManifest& cohort,
                               const std::vector<size_t>& rows) {
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  for (size_t r : rows) ids.push_back(cohort.records()[r].sample_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<size_t> RowsOfGroups(const std::vector<Group>& groups,
                                 const std::vector<size_t>& members) {
  std::vector<size_t> rows;
  for (size_t g : members) {
    rows.insert(rows.end(), groups[g].rows.begin(), groups[g].rows.end());
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

int ClassIndex(const std::vector<std::string>& classes,
               const std::string& label) {
  auto it = std::find(classes.begin(), classes.end(), label);
  if (it == classes.end()) {
    throw Error(ErrorKind::kArgument, "unknown class label \"" + label + "\"");
  }
  return static_cast<int>(it - classes.begin());
}

// Context shared by the OOD constructors: class labels, per-institution
// sample counts, and institutions surviving the minimum-size filter.
struct Context {
  const CohortManifest& cohort;
  std::vector<int> labels;
  std::vector<std::string> classes;
  int num_classes = 0;
  std::vector<std::string> institutions;  // eligible, vocab order
  std::vector<std::string> warnings;

  Context(const CohortManifest& c, std::string_view attribute,
          size_t min_institution_samples)
      : cohort(c), labels(c.Labels(attribute)), classes(c.vocab(attribute)) {
    num_classes = static_cast<int>(classes.size());
    if (num_classes < 2) {
      throw Error(ErrorKind::kArgument,
                  "attribute \"" + std::string(attribute) +
                      "\" needs at least 2 observed categories");
    }
    std::map<std::string, size_t> counts;
    for (size_t i = 0; i < c.size(); ++i) {
      if (labels[i] >= 0) ++counts[c.records()[i].institution];
    }
    for (const auto& inst : c.vocab(kInstitution)) {
      const size_t n = counts[inst];
      if (n == 0) continue;
      if (n < min_institution_samples) {
        warnings.push_back("dropped institution " + inst + " (" +
                           std::to_string(n) + " samples < " +
                           std::to_string(min_institution_samples) + ")");
        continue;
      }
      institutions.push_back(inst);
    }
  }

  bool Eligible(const std::string& inst) const {
    return std::find(institutions.begin(), institutions.end(), inst) !=
           institutions.end();
  }

  std::vector<size_t> RowsOf(const std::set<std::string>& insts) const {
    std::vector<size_t> rows;
    for (size_t i = 0; i < cohort.size(); ++i) {
      if (labels[i] >= 0 && insts.contains(cohort.records()[i].institution)) {
        rows.push_back(i);
      }
    }
    return rows;
  }

  std::vector<size_t> RowsOfClass(const std::string& inst, int label) const {
    std::vector<size_t> rows;
    for (size_t i = 0; i < cohort.size(); ++i) {
      if (labels[i] == label && cohort.records()[i].institution == inst) {
        rows.push_back(i);
      }
    }
    return rows;
  }

  std::vector<size_t> ClassCounts(const std::string& inst) const {
    std::vector<size_t> counts(num_classes, 0);
    for (size_t i = 0; i < cohort.size(); ++i) {
      if (labels[i] >= 0 && cohort.records()[i].institution == inst) {
        ++counts[labels[i]];
      }
    }
    return counts;
  }
};

void CheckGroupDisjoint(const CohortManifest& cohort,
                        const std::vector<size_t>& train_rows,
                        const std::vector<size_t>& test_rows, GroupKey key) {
  std::set<std::string> train_groups;
  for (size_t r : train_rows) train_groups.insert(GroupField(cohort.records()[r], key));
  for (size_t r : test_rows) {
    const auto& g = GroupField(cohort.records()[r], key);
    if (train_groups.contains(g)) {
      throw Error(ErrorKind::kIntegrity,
                  std::string(GroupKeyName(key)) + " " + g +
                      " spans train and test institutions");
    }
  }
}

bool CoversAllClasses(const Context& ctx, const std::vector<size_t>& rows) {
  std::vector<bool> seen(ctx.num_classes, false);
  for (size_t r : rows) seen[ctx.labels[r]] = true;
  return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

std::pair<std::set<std::string>, std::set<std::string>> AutoPartition(
    const Context& ctx, Rng& rng) {
  const auto& insts = ctx.institutions;
  if (insts.size() < 2) {
    throw Error(ErrorKind::kInfeasible,
                "need at least 2 institutions for an institution split");
  }
  std::map<std::string, std::vector<size_t>> counts;
  size_t total = 0;
  for (const auto& inst : insts) {
    counts[inst] = ctx.ClassCounts(inst);
    for (size_t c : counts[inst]) total += c;
  }
  constexpr int kAttempts = 64;
  std::vector<std::string> order = insts;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    rng.Shuffle(std::span(order));
    std::vector<size_t> prefix_classes(ctx.num_classes, 0);
    std::vector<size_t> total_classes(ctx.num_classes, 0);
    for (const auto& inst : order) {
      for (int c = 0; c < ctx.num_classes; ++c) total_classes[c] += counts[inst][c];
    }
    size_t prefix = 0;
    size_t best_k = 0;
    double best_gap = std::numeric_limits<double>::infinity();
    for (size_t k = 1; k < order.size(); ++k) {
      for (int c = 0; c < ctx.num_classes; ++c) {
        prefix_classes[c] += counts[order[k - 1]][c];
        prefix += counts[order[k - 1]][c];
      }
      bool covered = true;
      for (int c = 0; c < ctx.num_classes; ++c) {
        covered = covered && prefix_classes[c] > 0 &&
                  total_classes[c] > prefix_classes[c];
      }
      const double gap = std::abs(static_cast<double>(prefix) - total / 2.0);
      if (covered && gap < best_gap) {
        best_gap = gap;
        best_k = k;
      }
    }
    if (best_k > 0) {
      return {std::set<std::string>(order.begin(), order.begin() + best_k),
              std::set<std::string>(order.begin() + best_k, order.end())};
    }
  }
  throw Error(ErrorKind::kCoverage,
              "no institution partition puts every class on both sides");
}

// Shared train side of OOD2 and OOD3: each assigned institution contributes
// only its samples of the assigned class. Consumes `rng` for the folds.
struct AssignedTrain {
  std::vector<size_t> rows;
  std::vector<Group> groups;
  std::map<std::string, int> folds;
};

AssignedTrain BuildAssignedTrain(const Context& ctx,
                                 const InstitutionClassAssignment& assignment,
                                 GroupKey key, int num_folds, Rng& rng) {
  AssignedTrain out;
  for (const auto& [inst, label] : assignment) {
    const auto rows = ctx.RowsOfClass(inst, ClassIndex(ctx.classes, label));
    out.rows.insert(out.rows.end(), rows.begin(), rows.end());
  }
  std::sort(out.rows.begin(), out.rows.end());
  out.groups = BuildGroups(ctx.cohort, out.rows, key, ctx.labels, ctx.num_classes);
  out.folds = AssignFolds(ctx.cohort, out.groups, Iota(out.groups.size()),
                          ctx.num_classes, num_folds, rng);
  return out;
}

void CheckAssignmentCoverage(const Context& ctx,
                             const InstitutionClassAssignment& assignment) {
  std::vector<bool> covered(ctx.num_classes, false);
  for (const auto& [inst, label] : assignment) {
    covered[ClassIndex(ctx.classes, label)] = true;
  }
  for (int c = 0; c < ctx.num_classes; ++c) {
    if (!covered[c]) {
      throw Error(ErrorKind::kCoverage,
                  "class \"" + ctx.classes[c] +
                      "\" is not assigned to any training institution");
    }
  }
}

std::vector<std::string> Keys(const InstitutionClassAssignment& a) {
  std::vector<std::string> keys;
  for (const auto& [k, v] : a) keys.push_back(k);
  return keys;
}

}  // namespace

SplitPlan MakeIdSplit(const CohortManifest& cohort, double test_fraction,
                      GroupKey group_key, uint64_t seed,
                      std::string_view attribute, const SplitOptions& options) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorKind::kArgument, "test_fraction must lie in (0, 1)");
  }
  const auto labels = cohort.Labels(attribute);
  const auto& classes = cohort.vocab(attribute);
  const int num_classes = static_cast<int>(classes.size());
  if (num_classes < 1) {
    throw Error(ErrorKind::kArgument,
                "attribute \"" + std::string(attribute) + "\" is never observed");
  }
  std::vector<size_t> rows;
  for (size_t i = 0; i < cohort.size(); ++i) {
    if (labels[i] >= 0) rows.push_back(i);
  }
  Rng rng(seed);
  const auto groups = BuildGroups(cohort, rows, group_key, labels, num_classes);
  auto by_class = GroupsByClass(groups, Iota(groups.size()), num_classes);
  const size_t min_groups = static_cast<size_t>(options.num_folds) + 1;
  std::vector<size_t> train_groups, test_groups;
  for (int c = 0; c < num_classes; ++c) {
    auto& members = by_class[c];
    if (members.size() < min_groups) {
      throw Error(ErrorKind::kInfeasible,
                  "class \"" + classes[c] + "\" has " +
                      std::to_string(members.size()) + " " +
                      std::string(GroupKeyName(group_key)) + " groups; need " +
                      std::to_string(min_groups));
    }
    rng.Shuffle(std::span(members));
    const auto target = static_cast<size_t>(
        std::llround(static_cast<double>(members.size()) * test_fraction));
    const size_t n_test =
        std::clamp<size_t>(target, 1, members.size() - options.num_folds);
    test_groups.insert(test_groups.end(), members.begin(),
                       members.begin() + n_test);
    train_groups.insert(train_groups.end(), members.begin() + n_test,
                        members.end());
  }
  std::sort(train_groups.begin(), train_groups.end());
  SplitPlan plan;
  plan.setting = Setting::kIdBaseline;
  plan.seed = seed;
  plan.group_key = group_key;
  plan.label_attribute = std::string(attribute);
  plan.num_folds = options.num_folds;
  plan.folds = AssignFolds(cohort, groups, train_groups, num_classes,
                           options.num_folds, rng);
  plan.train_ids = IdsOf(cohort, RowsOfGroups(groups, train_groups));
  plan.test_ids = IdsOf(cohort, RowsOfGroups(groups, test_groups));
  if (rows.size() < cohort.size()) {
    plan.warnings.push_back(std::to_string(cohort.size() - rows.size()) +
                            " records lack " + std::string(attribute) +
                            " and were excluded");
  }
  return plan;
}

SplitPlan MakeOod1(const CohortManifest& cohort,
                   std::optional<std::set<std::string>> train_institutions,
                   std::optional<std::set<std::string>> test_institutions,
                   GroupKey group_key, uint64_t seed,
                   const SplitOptions& options, std::string_view attribute) {
  Context ctx(cohort, attribute, options.min_institution_samples);
  Rng rng(seed);
  std::set<std::string> train, test;
  auto complement = [&ctx](const std::set<std::string>& side) {
    std::set<std::string> rest;
    for (const auto& inst : ctx.institutions) {
      if (!side.contains(inst)) rest.insert(inst);
    }
    return rest;
  };
  if (train_institutions && test_institutions) {
    train = *train_institutions;
    test = *test_institutions;
  } else if (train_institutions) {
    train = *train_institutions;
    test = complement(train);
  } else if (test_institutions) {
    test = *test_institutions;
    train = complement(test);
  } else {
    std::tie(train, test) = AutoPartition(ctx, rng);
  }
  for (const auto& inst : train) {
    if (test.contains(inst)) {
      throw Error(ErrorKind::kArgument,
                  "institution " + inst + " is on both train and test sides");
    }
  }
  for (const auto* side : {&train, &test}) {
    for (const auto& inst : *side) {
      if (!ctx.Eligible(inst)) {
        throw Error(ErrorKind::kArgument,
                    "institution " + inst + " has no eligible samples");
      }
    }
  }
  const auto train_rows = ctx.RowsOf(train);
  const auto test_rows = ctx.RowsOf(test);
  if (!CoversAllClasses(ctx, train_rows) || !CoversAllClasses(ctx, test_rows)) {
    throw Error(ErrorKind::kCoverage,
                "train and test institutions must each cover every class");
  }
  CheckGroupDisjoint(cohort, train_rows, test_rows, group_key);
  const auto groups =
      BuildGroups(cohort, train_rows, group_key, ctx.labels, ctx.num_classes);
  SplitPlan plan;
  plan.setting = Setting::kOod1;
  plan.label_attribute = std::string(attribute);
  plan.seed = seed;
  plan.group_key = group_key;
  plan.num_folds = options.num_folds;
  plan.folds = AssignFolds(cohort, groups, Iota(groups.size()), ctx.num_classes,
                           options.num_folds, rng);
  plan.train_ids = IdsOf(cohort, train_rows);
  plan.test_ids = IdsOf(cohort, test_rows);
  plan.train_institutions.assign(train.begin(), train.end());
  plan.test_institutions.assign(test.begin(), test.end());
  plan.warnings = ctx.warnings;
  return plan;
}

InstitutionClassAssignment AutoAssignment(
    const CohortManifest& cohort, const std::vector<std::string>& institutions,
    bool require_deranged_support) {
  Context ctx(cohort, kClassLabel, 0);
  const int k = ctx.num_classes;
  if (k > 20) {
    throw Error(ErrorKind::kArgument,
                "automatic assignment supports at most 20 classes");
  }
  const size_t n = institutions.size();
  const uint32_t full = (1u << k) - 1;
  std::vector<std::vector<size_t>> counts(n);
  for (size_t i = 0; i < n; ++i) counts[i] = ctx.ClassCounts(institutions[i]);
  auto admissible = [&](size_t i, int c) {
    if (counts[i][c] == 0) return false;
    return !require_deranged_support || counts[i][(c + 1) % k] > 0;
  };
  // best[i][mask]: most samples retainable from institutions i..n-1 when the
  // classes in `mask` are already covered; -1 marks infeasible.
  constexpr int64_t kNone = -1;
  std::vector<std::vector<int64_t>> best(n + 1,
                                         std::vector<int64_t>(full + 1, kNone));
  best[n][full] = 0;
  for (size_t i = n; i-- > 0;) {
    const bool any = [&] {
      for (int c = 0; c < k; ++c) {
        if (admissible(i, c)) return true;
      }
      return false;
    }();
    for (uint32_t mask = 0; mask <= full; ++mask) {
      int64_t value = any ? kNone : best[i + 1][mask];
      for (int c = 0; c < k; ++c) {
        if (!admissible(i, c)) continue;
        const int64_t rest = best[i + 1][mask | (1u << c)];
        if (rest == kNone) continue;
        value = std::max<int64_t>(value, rest + counts[i][c]);
      }
      best[i][mask] = value;
    }
  }
  if (best[0][0] == kNone) {
    throw Error(ErrorKind::kCoverage,
                "no assignment of institutions to classes covers every class");
  }
  InstitutionClassAssignment assignment;
  uint32_t mask = 0;
  for (size_t i = 0; i < n; ++i) {
    for (int c = 0; c < k; ++c) {
      if (!admissible(i, c)) continue;
      const int64_t rest = best[i + 1][mask | (1u << c)];
      if (rest != kNone && rest + static_cast<int64_t>(counts[i][c]) ==
                               best[i][mask]) {
        assignment[institutions[i]] = ctx.classes[c];
        mask |= 1u << c;
        break;
      }
    }
  }
  return assignment;
}

InstitutionClassAssignment Derange(const InstitutionClassAssignment& assignment,
                                   const std::vector<std::string>& classes) {
  if (classes.size() < 2) {
    throw Error(ErrorKind::kArgument, "derangement needs at least 2 classes");
  }
  InstitutionClassAssignment out;
  for (const auto& [inst, label] : assignment) {
    const int c = ClassIndex(classes, label);
    out[inst] = classes[(c + 1) % classes.size()];
  }
  return out;
}

size_t RetainedSamples(const CohortManifest& cohort,
                       const InstitutionClassAssignment& assignment) {
  size_t n = 0;
  for (const auto& r : cohort.records()) {
    auto it = assignment.find(r.institution);
    if (it != assignment.end() && r.class_label && *r.class_label == it->second) {
      ++n;
    }
  }
  return n;
}

SplitPlan MakeOod2(const CohortManifest& cohort,
                   std::optional<InstitutionClassAssignment> assignment,
                   std::optional<std::set<std::string>> test_institutions,
                   GroupKey group_key, uint64_t seed,
                   const SplitOptions& options) {
  Context ctx(cohort, kClassLabel, options.min_institution_samples);
  Rng rng(seed);
  std::set<std::string> test;
  if (test_institutions) {
    test = *test_institutions;
  } else if (assignment) {
    for (const auto& inst : ctx.institutions) {
      if (!assignment->contains(inst)) test.insert(inst);
    }
  } else {
    test = AutoPartition(ctx, rng).second;
  }
  for (const auto& inst : test) {
    if (!ctx.Eligible(inst)) {
      throw Error(ErrorKind::kArgument,
                  "institution " + inst + " has no eligible samples");
    }
  }
  auto warnings = ctx.warnings;
  if (!assignment) {
    std::vector<std::string> train_insts;
    for (const auto& inst : ctx.institutions) {
      if (!test.contains(inst)) train_insts.push_back(inst);
    }
    assignment = AutoAssignment(cohort, train_insts, false);
  }
  for (const auto& [inst, label] : *assignment) {
    if (test.contains(inst)) {
      throw Error(ErrorKind::kArgument,
                  "institution " + inst + " is assigned for training and " +
                      "listed as a test institution");
    }
    if (!ctx.Eligible(inst)) {
      throw Error(ErrorKind::kArgument,
                  "institution " + inst + " has no eligible samples");
    }
  }
  CheckAssignmentCoverage(ctx, *assignment);
  for (auto it = assignment->begin(); it != assignment->end();) {
    if (ctx.RowsOfClass(it->first, ClassIndex(ctx.classes, it->second)).empty()) {
      if (!options.drop_infeasible) {
        throw Error(ErrorKind::kInfeasible,
                    "institution " + it->first + " has no samples of class " +
                        it->second);
      }
      warnings.push_back("dropped institution " + it->first +
                         " (no samples of assigned class " + it->second + ")");
      it = assignment->erase(it);
    } else {
      ++it;
    }
  }
  CheckAssignmentCoverage(ctx, *assignment);

  const auto train = BuildAssignedTrain(ctx, *assignment, group_key,
                                        options.num_folds, rng);
  // Test side: class-balanced by seeded downsampling to the minority count.
  std::vector<std::vector<size_t>> by_class(ctx.num_classes);
  for (size_t r : ctx.RowsOf(test)) by_class[ctx.labels[r]].push_back(r);
  size_t minority = std::numeric_limits<size_t>::max();
  for (const auto& rows : by_class) minority = std::min(minority, rows.size());
  if (minority == 0) {
    throw Error(ErrorKind::kCoverage,
                "test institutions do not cover every class");
  }
  std::vector<size_t> test_rows;
  for (auto& rows : by_class) {
    rng.Shuffle(std::span(rows));
    test_rows.insert(test_rows.end(), rows.begin(), rows.begin() + minority);
  }
  std::sort(test_rows.begin(), test_rows.end());
  CheckGroupDisjoint(cohort, train.rows, test_rows, group_key);

  SplitPlan plan;
  plan.setting = Setting::kOod2;
  plan.seed = seed;
  plan.group_key = group_key;
  plan.num_folds = options.num_folds;
  plan.folds = train.folds;
  plan.train_ids = IdsOf(cohort, train.rows);
  plan.test_ids = IdsOf(cohort, test_rows);
  plan.train_assignment = *assignment;
  plan.train_institutions = Keys(*assignment);
  plan.test_institutions.assign(test.begin(), test.end());
  plan.warnings = std::move(warnings);
  return plan;
}

SplitPlan MakeOod3(const CohortManifest& cohort,
                   std::optional<InstitutionClassAssignment> train_assignment,
                   GroupKey group_key, uint64_t seed,
                   const SplitOptions& options) {
  Context ctx(cohort, kClassLabel, options.min_institution_samples);
  Rng rng(seed);
  auto warnings = ctx.warnings;
  InstitutionClassAssignment assignment =
      train_assignment ? *train_assignment
                       : AutoAssignment(cohort, ctx.institutions, true);
  for (const auto& [inst, label] : assignment) {
    if (!ctx.Eligible(inst)) {
      throw Error(ErrorKind::kArgument,
                  "institution " + inst + " has no eligible samples");
    }
  }
  CheckAssignmentCoverage(ctx, assignment);
  // Institutions that cannot serve either side are resolved before the
  // train side is drawn. The train side then matches OOD2 on the same
  // effective assignment.
  for (auto it = assignment.begin(); it != assignment.end();) {
    const int train_class = ClassIndex(ctx.classes, it->second);
    const int test_class = (train_class + 1) % ctx.num_classes;
    const bool has_train = !ctx.RowsOfClass(it->first, train_class).empty();
    const bool has_test = !ctx.RowsOfClass(it->first, test_class).empty();
    if (has_train && has_test) {
      ++it;
      continue;
    }
    if (!options.drop_infeasible) {
      throw Error(ErrorKind::kInfeasible,
                  "institution " + it->first + " has no samples of class " +
                      ctx.classes[has_train ? test_class : train_class]);
    }
    warnings.push_back("dropped institution " + it->first +
                       " (cannot supply both its train and inverted test class)");
    it = assignment.erase(it);
  }
  CheckAssignmentCoverage(ctx, assignment);
  const auto test_assignment = Derange(assignment, ctx.classes);

  const auto train = BuildAssignedTrain(ctx, assignment, group_key,
                                        options.num_folds, rng);
  std::set<std::string> train_groups;
  for (size_t r : train.rows) {
    train_groups.insert(GroupField(cohort.records()[r], group_key));
  }
  std::vector<size_t> test_rows;
  size_t excluded = 0;
  for (const auto& [inst, label] : test_assignment) {
    for (size_t r : ctx.RowsOfClass(inst, ClassIndex(ctx.classes, label))) {
      if (train_groups.contains(GroupField(cohort.records()[r], group_key))) {
        ++excluded;
      } else {
        test_rows.push_back(r);
      }
    }
  }
  if (excluded > 0) {
    warnings.push_back(std::to_string(excluded) +
                       " test samples excluded because their group is on the "
                       "train side");
  }
  if (test_rows.empty()) {
    throw Error(ErrorKind::kInfeasible, "inverted test side is empty");
  }
  std::sort(test_rows.begin(), test_rows.end());

  SplitPlan plan;
  plan.setting = Setting::kOod3;
  plan.seed = seed;
  plan.group_key = group_key;
  plan.num_folds = options.num_folds;
  plan.folds = train.folds;
  plan.train_ids = IdsOf(cohort, train.rows);
  plan.test_ids = IdsOf(cohort, test_rows);
  plan.train_assignment = assignment;
  plan.test_assignment = test_assignment;
  plan.train_institutions = Keys(assignment);
  plan.test_institutions = Keys(test_assignment);
  plan.warnings = std::move(warnings);
  return plan;
}

SplitPlan MakeMatchedBaseline(const SplitPlan& plan,
                              const CohortManifest& cohort, uint64_t seed) {
  if (plan.setting != Setting::kOod1 && plan.setting != Setting::kOod2 &&
      plan.setting != Setting::kOod3) {
    throw Error(ErrorKind::kArgument,
                "matched baselines are defined for OOD plans only");
  }
  const auto labels = cohort.Labels(plan.label_attribute);
  const int num_classes =
      static_cast<int>(cohort.vocab(plan.label_attribute).size());
  std::vector<size_t> rows;
  for (const auto* ids : {&plan.train_ids, &plan.test_ids}) {
    for (const auto& id : *ids) rows.push_back(cohort.RowOf(id));
  }
  std::sort(rows.begin(), rows.end());
  const auto groups = BuildGroups(cohort, rows, plan.group_key, labels, num_classes);
  std::set<std::string> test_id_set(plan.test_ids.begin(), plan.test_ids.end());
  size_t test_group_count = 0;
  for (const auto& g : groups) {
    test_group_count +=
        test_id_set.contains(cohort.records()[g.rows.front()].sample_id);
  }
  const double test_fraction =
      static_cast<double>(test_group_count) / static_cast<double>(groups.size());

  Rng rng(seed);
  std::vector<size_t> train_groups, test_groups;
  for (auto& members : GroupsByClass(groups, Iota(groups.size()), num_classes)) {
    rng.Shuffle(std::span(members));
    const auto n_test = std::min<size_t>(
        members.size(), static_cast<size_t>(std::llround(
                            static_cast<double>(members.size()) * test_fraction)));
    test_groups.insert(test_groups.end(), members.begin(), members.begin() + n_test);
    train_groups.insert(train_groups.end(), members.begin() + n_test,
                        members.end());
  }
  std::sort(train_groups.begin(), train_groups.end());

  SplitPlan baseline;
  baseline.setting =
      plan.setting == Setting::kOod3 ? Setting::kBaseline3 : Setting::kBaseline12;
  baseline.seed = seed;
  baseline.group_key = plan.group_key;
  baseline.label_attribute = plan.label_attribute;
  baseline.num_folds = plan.num_folds;
  baseline.folds = AssignFolds(cohort, groups, train_groups, num_classes,
                               plan.num_folds, rng);
  baseline.train_ids = IdsOf(cohort, RowsOfGroups(groups, train_groups));
  baseline.test_ids = IdsOf(cohort, RowsOfGroups(groups, test_groups));
  std::set<std::string> insts;
  for (size_t r : rows) insts.insert(cohort.records()[r].institution);
  baseline.train_institutions.assign(insts.begin(), insts.end());
  baseline.test_institutions = baseline.train_institutions;
  return baseline;
}

SplitPlan MakeSurvivalFolds(const CohortManifest& cohort, int k,
                            GroupKey group_key, uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::kArgument, "need at least 2 folds");
  std::vector<size_t> rows;
  for (size_t i = 0; i < cohort.size(); ++i) {
    if (cohort.records()[i].survival_days) rows.push_back(i);
  }
  // Stratum 1 = censored, judged by each group's first record.
  std::vector<int> censored(cohort.size(), -1);
  for (size_t r : rows) censored[r] = *cohort.records()[r].censored ? 1 : 0;
  const auto groups = BuildGroups(cohort, rows, group_key, censored, 2);
  if (groups.size() < static_cast<size_t>(k)) {
    throw Error(ErrorKind::kInfeasible,
                std::to_string(groups.size()) + " " +
                    std::string(GroupKeyName(group_key)) +
                    " groups with survival data; need at least " +
                    std::to_string(k));
  }
  std::vector<std::vector<size_t>> strata(2);
  for (size_t g = 0; g < groups.size(); ++g) {
    strata[censored[groups[g].rows.front()]].push_back(g);
  }
  Rng rng(seed);
  SplitPlan plan;
  plan.setting = Setting::kIdBaseline;
  plan.seed = seed;
  plan.group_key = group_key;
  plan.label_attribute = "censored";
  plan.num_folds = k;
  size_t offset = 0;
  for (auto& members : strata) {
    rng.Shuffle(std::span(members));
    for (size_t g : members) {
      const int fold = static_cast<int>(offset++ % k);
      for (size_t r : groups[g].rows) {
        plan.folds[cohort.records()[r].sample_id] = fold;
      }
    }
  }
  plan.train_ids = IdsOf(cohort, rows);
  if (rows.size() < cohort.size()) {
    plan.warnings.push_back(std::to_string(cohort.size() - rows.size()) +
                            " records lack survival data and were excluded");
  }
  return plan;
}

}  // namespace pfmaudit
