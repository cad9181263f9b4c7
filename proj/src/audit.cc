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

#include "pfmaudit/audit.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "pfmaudit/error.h"
#include "pfmaudit/metrics.h"
#include "pfmaudit/rng.h"
#include "pfmaudit/text.h"

namespace pfmaudit {
namespace {

using nlohmann::json;

uint64_t Fnv1a64(std::string_view text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

[[noreturn]] void BadConfig(const std::string& message) {
  throw Error(ErrorKind::kArgument, "config: " + message);
}

template <typename T>
T Field(const json& doc, const char* key, T fallback) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    BadConfig(std::string("field \"") + key + "\" has the wrong type");
  }
}

void CheckKeys(const json& doc, const std::set<std::string>& known,
               const std::string& where) {
  if (!doc.is_object()) BadConfig(where + " must be an object");
  for (const auto& [key, value] : doc.items()) {
    if (!known.contains(key)) {
      BadConfig("unknown field \"" + key + "\" in " + where);
    }
  }
}

std::vector<Setting> ParseSettings(const json& doc, const char* key,
                                   std::vector<Setting> fallback) {
  if (!doc.contains(key)) return fallback;
  std::vector<Setting> out;
  for (const auto& name : Field<std::vector<std::string>>(doc, key, {})) {
    out.push_back(ParseSetting(name));
  }
  return out;
}

std::vector<std::string> SettingNames(const std::vector<Setting>& settings) {
  std::vector<std::string> out;
  for (Setting s : settings) out.emplace_back(SettingName(s));
  return out;
}

json ProbeToJson(const ProbeConfig& c) {
  return {{"hidden_dim", c.hidden_dim},       {"epochs", c.epochs},
          {"batch_size", c.batch_size},       {"learning_rate", c.learning_rate},
          {"restart_period", c.restart_period}};
}

ProbeConfig ProbeFromJson(const json& doc) {
  CheckKeys(doc, {"hidden_dim", "epochs", "batch_size", "learning_rate",
                  "restart_period"},
            "probe");
  ProbeConfig c;
  c.hidden_dim = Field(doc, "hidden_dim", c.hidden_dim);
  c.epochs = Field(doc, "epochs", c.epochs);
  c.batch_size = Field(doc, "batch_size", c.batch_size);
  c.learning_rate = Field(doc, "learning_rate", c.learning_rate);
  c.restart_period = Field(doc, "restart_period", c.restart_period);
  return c;
}

json MilToJson(const MilConfig& c) {
  return {{"attention_hidden", c.attention_hidden}, {"epochs", c.epochs},
          {"batch_size", c.batch_size},             {"learning_rate", c.learning_rate},
          {"restart_period", c.restart_period}};
}

MilConfig MilFromJson(const json& doc) {
  CheckKeys(doc, {"attention_hidden", "epochs", "batch_size", "learning_rate",
                  "restart_period"},
            "mil");
  MilConfig c;
  c.attention_hidden = Field(doc, "attention_hidden", c.attention_hidden);
  c.epochs = Field(doc, "epochs", c.epochs);
  c.batch_size = Field(doc, "batch_size", c.batch_size);
  c.learning_rate = Field(doc, "learning_rate", c.learning_rate);
  c.restart_period = Field(doc, "restart_period", c.restart_period);
  return c;
}

json SurvivalConfigToJson(const SurvivalConfig& c) {
  return {{"attention_hidden", c.attention_hidden},
          {"bins", c.bins},
          {"l1_lambda", c.l1_lambda},
          {"l2_lambda", c.l2_lambda},
          {"grad_accumulation", c.grad_accumulation},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"restart_period", c.restart_period}};
}

SurvivalConfig SurvivalConfigFromJson(const json& doc) {
  CheckKeys(doc, {"attention_hidden", "bins", "l1_lambda", "l2_lambda",
                  "grad_accumulation", "learning_rate", "epochs",
                  "restart_period"},
            "survival");
  SurvivalConfig c;
  c.attention_hidden = Field(doc, "attention_hidden", c.attention_hidden);
  c.bins = Field(doc, "bins", c.bins);
  c.l1_lambda = Field(doc, "l1_lambda", c.l1_lambda);
  c.l2_lambda = Field(doc, "l2_lambda", c.l2_lambda);
  c.grad_accumulation = Field(doc, "grad_accumulation", c.grad_accumulation);
  c.learning_rate = Field(doc, "learning_rate", c.learning_rate);
  c.epochs = Field(doc, "epochs", c.epochs);
  c.restart_period = Field(doc, "restart_period", c.restart_period);
  return c;
}

json RowToJson(const MetricRow& row) {
  json doc = {{"task", row.task},       {"setting", row.setting},
              {"metric", row.metric},   {"value", row.value},
              {"support", row.support}, {"slice", row.slice},
              {"plan", row.plan},       {"seed", row.seed}};
  if (row.stddev) doc["std"] = *row.stddev;
  return doc;
}

MetricRow RowFromJson(const json& doc) {
  MetricRow row;
  row.task = doc.at("task").get<std::string>();
  row.setting = doc.at("setting").get<std::string>();
  row.metric = doc.at("metric").get<std::string>();
  row.value = doc.at("value").get<double>();
  if (doc.contains("std")) row.stddev = doc.at("std").get<double>();
  row.support = doc.at("support").get<size_t>();
  row.slice = doc.at("slice").get<std::string>();
  row.plan = doc.at("plan").get<std::string>();
  row.seed = doc.at("seed").get<uint64_t>();
  return row;
}

// Folded scores of one head family on one plan.
struct Scores {
  MeanStd accuracy;
  MeanStd macro_f1;
  size_t support = 0;
};

// Per-run state shared by the section runners.
class Auditor {
 public:
  Auditor(const AuditConfig& config, const EmbeddingMatrix& matrix,
          const CohortManifest& cohort, AuditReport& report)
      : config_(config), matrix_(matrix), cohort_(cohort), report_(report) {
    std::vector<size_t> all(cohort.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    x_ = GatherRows(matrix, all);
    for (const auto& r : cohort.records()) ids_.push_back(r.sample_id);
    options_.num_folds = config.num_folds;
    options_.min_institution_samples = config.min_institution_samples;
    options_.drop_infeasible = config.drop_infeasible;
  }

  void Privacy(AuditSection& section);
  void Reliability(AuditSection& section);
  void Fairness(AuditSection& section);
  void Retrieval(AuditSection& section);
  void Survival(AuditSection& section);

  size_t skipped() const { return skipped_; }

 private:
  uint64_t Seed(std::string_view key) const {
    return DeriveSeed(config_.seed, Fnv1a64(key));
  }

  // Runs one unit of work; a toolkit error turns into a warning.
  void Guard(const std::string& unit, const std::function<void()>& body) {
    try {
      body();
    } catch (const Error& e) {
      ++skipped_;
      report_.warnings.push_back(unit + " skipped (" +
                                 std::string(ErrorKindName(e.kind())) +
                                 "): " + e.what());
    }
  }

  const SplitPlan& Plan(const std::string& key,
                        const std::function<SplitPlan(uint64_t)>& build) {
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    SplitPlan plan = build(Seed("plan/" + key));
    CheckDisjoint(plan);
    for (const auto& w : plan.warnings) {
      report_.warnings.push_back("plan " + key + ": " + w);
    }
    report_.plans[key] = PlanToJson(plan);
    return plans_.emplace(key, std::move(plan)).first->second;
  }

  const SplitPlan& ClassPlan(Setting setting) {
    const std::string key = "class/" + std::string(SettingName(setting));
    return Plan(key, [&](uint64_t seed) {
      switch (setting) {
        case Setting::kIdBaseline:
          return MakeIdSplit(cohort_, config_.test_fraction, config_.group_key,
                             seed, kClassLabel, options_);
        case Setting::kOod1:
          return MakeOod1(cohort_, std::nullopt, std::nullopt,
                          config_.group_key, seed, options_);
        case Setting::kOod2:
          return MakeOod2(cohort_, std::nullopt, std::nullopt,
                          config_.group_key, seed, options_);
        case Setting::kOod3:
          return MakeOod3(cohort_, std::nullopt, config_.group_key, seed,
                          options_);
        default:
          throw Error(ErrorKind::kArgument, "not a plannable setting");
      }
    });
  }

  std::string BaselineKey(Setting setting) const {
    return "class/" + std::string(SettingName(setting)) + "/baseline";
  }

  const SplitPlan& ClassBaseline(Setting setting) {
    const SplitPlan& ood = ClassPlan(setting);
    return Plan(BaselineKey(setting), [&](uint64_t seed) {
      return MakeMatchedBaseline(ood, cohort_, seed);
    });
  }

  static std::string BaselineLabel(const SplitPlan& baseline, Setting ood) {
    return std::string(SettingName(baseline.setting)) + " (" +
           std::string(SettingName(ood)) + ")";
  }

  static void CheckDisjoint(const SplitPlan& plan) {
    std::vector<std::string> both;
    std::set_intersection(plan.train_ids.begin(), plan.train_ids.end(),
                          plan.test_ids.begin(), plan.test_ids.end(),
                          std::back_inserter(both));
    if (!both.empty()) {
      throw Error(ErrorKind::kPlan,
                  "sample " + both.front() + " is on both sides of a plan");
    }
  }

  static void CheckHeadData(const std::vector<std::string>& trained_on,
                            const std::vector<std::string>& evaluated_on) {
    const std::set<std::string> train(trained_on.begin(), trained_on.end());
    for (const auto& id : evaluated_on) {
      if (train.contains(id)) {
        throw Error(ErrorKind::kPlan,
                    "sample " + id + " is in both a head's training data and "
                    "its evaluation slice");
      }
    }
  }

  std::vector<size_t> RowsOf(const std::vector<std::string>& ids) const {
    std::vector<size_t> rows;
    rows.reserve(ids.size());
    for (const auto& id : ids) rows.push_back(cohort_.RowOf(id));
    std::sort(rows.begin(), rows.end());
    return rows;
  }

  int NumClasses(std::string_view attribute) const {
    return static_cast<int>(cohort_.vocab(attribute).size());
  }

  Scores ProbeScores(const SplitPlan& plan, std::string_view attribute,
                     uint64_t seed) {
    for (int f = 0; f < plan.num_folds; ++f) {
      CheckHeadData(plan.FoldTrainIds(f), plan.test_ids);
    }
    ProbeConfig pc = config_.probe;
    pc.input_dim = static_cast<int>(matrix_.dim);
    pc.num_classes = NumClasses(attribute);
    pc.seed = seed;
    const auto labels = cohort_.Labels(attribute);
    const auto result = RunCv(x_, labels, ids_, plan, pc);
    return {result.accuracy, result.macro_f1, plan.test_ids.size()};
  }

  std::vector<int> BagLabels(const std::vector<Bag>& bags) const {
    std::vector<int> y;
    for (const auto& b : bags) {
      y.push_back(cohort_.CategoryIndex(b.rows.front(), kClassLabel));
    }
    return y;
  }

  Scores MilScores(const SplitPlan& plan, uint64_t seed) {
    const auto test_bags = BuildBags(matrix_, cohort_, RowsOf(plan.test_ids));
    const auto test_y = BagLabels(test_bags);
    const int k = NumClasses(kClassLabel);
    std::vector<double> accs, f1s;
    for (int f = 0; f < plan.num_folds; ++f) {
      const auto train_ids = plan.FoldTrainIds(f);
      CheckHeadData(train_ids, plan.test_ids);
      const auto bags = BuildBags(matrix_, cohort_, RowsOf(train_ids));
      MilConfig mc = config_.mil;
      mc.input_dim = static_cast<int>(matrix_.dim);
      mc.num_classes = k;
      mc.seed = DeriveSeed(seed, static_cast<uint64_t>(f));
      const auto head = TrainMilClassifier(bags, BagLabels(bags), mc);
      const auto pred = PredictMil(head, test_bags);
      accs.push_back(Accuracy(pred.labels, test_y).value);
      f1s.push_back(MacroF1(pred.labels, test_y, k).value);
    }
    return {ComputeMeanStd(accs), ComputeMeanStd(f1s), test_bags.size()};
  }

  void AddScoreRows(AuditSection& section, const std::string& task,
                    const std::string& setting, const Scores& s,
                    const std::string& plan, uint64_t seed) {
    section.rows.push_back({task, setting, "accuracy", s.accuracy.mean,
                            s.accuracy.stddev, s.support, "", plan, seed});
    section.rows.push_back({task, setting, "macro_f1", s.macro_f1.mean,
                            s.macro_f1.stddev, s.support, "", plan, seed});
  }

  void AddDegradationRows(AuditSection& section, const std::string& task,
                          const std::string& setting, const std::string& metric,
                          double baseline, double ood, size_t support,
                          const std::string& plan, uint64_t seed) {
    const auto d = ComputeDegradation({metric, baseline, support, {}},
                                      {metric, ood, support, {}});
    section.rows.push_back({task, setting, metric + "_degradation", d.absolute,
                            std::nullopt, support, "", plan, seed});
    section.rows.push_back({task, setting, metric + "_relative_degradation",
                            d.relative, std::nullopt, support, "", plan, seed});
  }

  struct BagSurvival {
    std::vector<double> times;
    std::vector<bool> censored;
  };

  BagSurvival SurvivalOf(const std::vector<Bag>& bags) const {
    BagSurvival out;
    for (const auto& b : bags) {
      const auto& r = cohort_.records()[b.rows.front()];
      if (!r.survival_days) {
        throw Error(ErrorKind::kPlan,
                    "slide " + b.slide_id + " has no survival record");
      }
      out.times.push_back(*r.survival_days);
      out.censored.push_back(*r.censored);
    }
    return out;
  }

  double SurvivalCIndex(const std::vector<std::string>& train_ids,
                        const std::vector<std::string>& eval_ids,
                        uint64_t seed) {
    CheckHeadData(train_ids, eval_ids);
    const auto train = BuildBags(matrix_, cohort_, RowsOf(train_ids));
    const auto eval = BuildBags(matrix_, cohort_, RowsOf(eval_ids));
    const auto ts = SurvivalOf(train);
    const auto es = SurvivalOf(eval);
    SurvivalConfig sc = config_.survival;
    sc.input_dim = static_cast<int>(matrix_.dim);
    sc.seed = seed;
    const auto head = TrainMilSurvival(train, ts.times, ts.censored, sc);
    const auto pred = PredictSurvival(head, eval);
    return ConcordanceIndex(pred.risk, es.times, es.censored);
  }

  const AuditConfig& config_;
  const EmbeddingMatrix& matrix_;
  const CohortManifest& cohort_;
  AuditReport& report_;
  Eigen::MatrixXd x_;
  std::vector<std::string> ids_;
  SplitOptions options_;
  std::map<std::string, SplitPlan> plans_;
  size_t skipped_ = 0;
};

void Auditor::Privacy(AuditSection& section) {
  for (const auto& attr : config_.attributes) {
    const std::string unit = "privacy/" + attr;
    const int k = NumClasses(attr);
    if (k == 0) {
      ++skipped_;
      report_.warnings.push_back(unit + " skipped: attribute entirely missing");
      continue;
    }
    Guard(unit, [&] {
      if (k < 2) {
        throw Error(ErrorKind::kDegenerateData,
                    "attribute has a single observed category");
      }
      const auto labels = cohort_.Labels(attr);
      const size_t missing =
          std::count(labels.begin(), labels.end(), -1);
      if (missing > 0) {
        report_.warnings.push_back(unit + ": " + std::to_string(missing) +
                                   " samples lack the attribute and are excluded");
      }
      const std::string key = "privacy/" + attr;
      const auto& plan = Plan(key, [&](uint64_t seed) {
        return MakeIdSplit(cohort_, config_.test_fraction, config_.group_key,
                           seed, attr, options_);
      });
      const uint64_t seed = Seed("head/" + key);
      const auto s = ProbeScores(plan, attr, seed);
      const std::string setting(SettingName(plan.setting));
      AddScoreRows(section, attr, setting, s, key, seed);

      std::vector<int> truth;
      for (size_t r : RowsOf(plan.test_ids)) truth.push_back(labels[r]);
      const double chance = 1.0 / k;
      const double majority = MajorityBaseline(truth, k);
      const MetricValue acc{"accuracy", s.accuracy.mean, s.support, {}};
      auto add = [&](const char* metric, double value) {
        section.rows.push_back({attr, setting, metric, value, std::nullopt,
                                s.support, "", key, seed});
      };
      add("chance", chance);
      add("leakage", LeakageScore(acc, k));
      add("majority_baseline", majority);
      add("leakage_vs_majority", s.accuracy.mean - majority);
      add("missing_fraction",
          static_cast<double>(missing) / static_cast<double>(cohort_.size()));
    });
  }
}

void Auditor::Reliability(AuditSection& section) {
  for (const auto& task : config_.reliability_tasks) {
    for (Setting setting : config_.ood_settings) {
      const std::string name(SettingName(setting));
      Guard("reliability/" + task + "/" + name, [&] {
        const auto& ood = ClassPlan(setting);
        const auto& base = ClassBaseline(setting);
        const uint64_t seed = Seed("head/reliability/" + task + "/" + name);
        const uint64_t base_seed =
            Seed("head/reliability/" + task + "/" + name + "/baseline");
        Scores o, b;
        if (task == "patch") {
          o = ProbeScores(ood, kClassLabel, seed);
          b = ProbeScores(base, kClassLabel, base_seed);
        } else {
          o = MilScores(ood, seed);
          b = MilScores(base, base_seed);
        }
        const std::string ood_key = "class/" + name;
        const std::string base_key = BaselineKey(setting);
        AddScoreRows(section, task, BaselineLabel(base, setting), b, base_key,
                     base_seed);
        AddScoreRows(section, task, name, o, ood_key, seed);
        AddDegradationRows(section, task, name, "accuracy", b.accuracy.mean,
                           o.accuracy.mean, o.support, ood_key, seed);
        AddDegradationRows(section, task, name, "macro_f1", b.macro_f1.mean,
                           o.macro_f1.mean, o.support, ood_key, seed);
      });
    }
  }
}

void Auditor::Fairness(AuditSection& section) {
  const auto labels = cohort_.Labels(kClassLabel);
  const int k = NumClasses(kClassLabel);
  for (Setting setting : config_.fairness_settings) {
    const std::string name(SettingName(setting));
    const std::string unit = "fairness/" + name;
    Guard(unit, [&] {
      const auto& plan = ClassPlan(setting);
      const std::string key = "class/" + name;
      const uint64_t seed = Seed("head/fairness/" + name);
      CheckHeadData(plan.train_ids, plan.test_ids);
      const auto train_rows = RowsOf(plan.train_ids);
      const auto test_rows = RowsOf(plan.test_ids);
      std::vector<int> train_y, test_y;
      for (size_t r : train_rows) train_y.push_back(labels[r]);
      for (size_t r : test_rows) test_y.push_back(labels[r]);
      ProbeConfig pc = config_.probe;
      pc.input_dim = static_cast<int>(matrix_.dim);
      pc.num_classes = k;
      pc.seed = seed;
      const auto head = TrainProbe(GatherRows(matrix_, train_rows), train_y, pc);
      const auto pred = Predict(head, GatherRows(matrix_, test_rows));
      const std::string task = "diagnosis";
      auto add = [&](const std::string& metric, double value, size_t support,
                     const std::string& slice) {
        section.rows.push_back(
            {task, name, metric, value, std::nullopt, support, slice, key, seed});
      };
      add("accuracy", Accuracy(pred.labels, test_y).value, test_y.size(), "");

      // Per-group accuracy over the test side.
      auto slice_accuracy = [&](std::string_view attr) {
        std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> by;
        for (size_t i = 0; i < test_rows.size(); ++i) {
          const auto v = cohort_.Value(test_rows[i], attr);
          if (!v) continue;
          auto& [p, t] = by[std::string(*v)];
          p.push_back(pred.labels[i]);
          t.push_back(test_y[i]);
        }
        std::map<std::string, MetricValue> out;
        for (const auto& [group, pt] : by) {
          out.emplace(group, Accuracy(pt.first, pt.second));
        }
        return out;
      };

      for (std::string_view attr : {kGender, kRace}) {
        const auto groups = slice_accuracy(attr);
        if (groups.empty()) continue;
        std::map<std::string, MetricValue> eligible;
        for (const auto& [group, m] : groups) {
          const std::string slice = std::string(attr) + "=" + group;
          add("accuracy", m.value, m.support, slice);
          if (m.support >= config_.min_support) {
            eligible.emplace(group, m);
          } else {
            report_.warnings.push_back(
                unit + ": subgroup " + slice + " excluded (support " +
                std::to_string(m.support) + " < " +
                std::to_string(config_.min_support) + ")");
          }
        }
        if (eligible.size() == 2) {
          size_t support = 0;
          for (const auto& [g, m] : eligible) support += m.support;
          add("subgroup_gap", SubgroupGap(eligible), support, std::string(attr));
        } else {
          report_.warnings.push_back(
              unit + ": no " + std::string(attr) + " gap (" +
              std::to_string(eligible.size()) + " eligible subgroups, need 2)");
        }
      }

      const auto by_inst = slice_accuracy(kInstitution);
      for (const auto& [inst, m] : by_inst) {
        add("accuracy", m.value, m.support, "institution=" + inst);
      }
      Guard(unit + "/institution_cv", [&] {
        const auto cv = ComputeInstitutionCv(by_inst, config_.min_support);
        for (const auto& inst : cv.excluded) {
          report_.warnings.push_back(unit + ": institution " + inst +
                                     " excluded from CV (support < " +
                                     std::to_string(config_.min_support) + ")");
        }
        size_t support = 0;
        for (const auto& inst : cv.included) support += by_inst.at(inst).support;
        add("institution_cv", cv.cv, support, "institution");
        add("institution_mean_accuracy", cv.mean, support, "institution");
        add("institution_accuracy_std", cv.stddev, support, "institution");
      });
    });
  }
}

void Auditor::Retrieval(AuditSection& section) {
  const auto labels = cohort_.Labels(kClassLabel);
  auto score = [&](const SplitPlan& plan) {
    const auto db_rows = RowsOf(plan.train_ids);
    const auto q_rows = RowsOf(plan.test_ids);
    std::vector<int> db_y, q_y;
    for (size_t r : db_rows) db_y.push_back(labels[r]);
    for (size_t r : q_rows) q_y.push_back(labels[r]);
    return RetrieveAndScore(GatherRows(matrix_, db_rows), db_y,
                            GatherRows(matrix_, q_rows), q_y,
                            config_.retrieval_k);
  };
  for (Setting setting : config_.retrieval_settings) {
    const std::string name(SettingName(setting));
    Guard("retrieval/" + name, [&] {
      const auto& ood = ClassPlan(setting);
      const auto& base = ClassBaseline(setting);
      const auto o = score(ood);
      const auto b = score(base);
      const std::string task = "retrieval";
      const std::string ood_key = "class/" + name;
      const std::string base_key = BaselineKey(setting);
      // Retrieval rows cite the plan seed.
      auto add_all = [&](const std::string& label, const RetrievalResult& r,
                         const std::string& key, uint64_t seed) {
        for (const auto& [k, v] : r.acc_at) {
          section.rows.push_back({task, label, "acc@" + std::to_string(k), v,
                                  std::nullopt, r.num_queries, "", key, seed});
        }
        section.rows.push_back({task, label, "mv_acc@5", r.mv_acc_at_5,
                                std::nullopt, r.num_queries, "", key, seed});
      };
      add_all(BaselineLabel(base, setting), b, base_key, base.seed);
      add_all(name, o, ood_key, ood.seed);
      for (const auto& [k, v] : o.acc_at) {
        AddDegradationRows(section, task, name, "acc@" + std::to_string(k),
                           b.acc_at.at(k), v, o.num_queries, ood_key, ood.seed);
      }
      AddDegradationRows(section, task, name, "mv_acc@5", b.mv_acc_at_5,
                         o.mv_acc_at_5, o.num_queries, ood_key, ood.seed);
    });
  }
}

void Auditor::Survival(AuditSection& section) {
  size_t with_survival = 0;
  for (const auto& r : cohort_.records()) with_survival += r.survival_days.has_value();
  if (with_survival == 0) {
    ++skipped_;
    report_.warnings.push_back("survival skipped: no survival records");
    return;
  }
  const std::string task = "wsi_survival";
  Guard("survival/cv", [&] {
    const std::string key = "survival/folds";
    const auto& plan = Plan(key, [&](uint64_t seed) {
      return MakeSurvivalFolds(cohort_, config_.num_folds, config_.group_key,
                               seed);
    });
    const uint64_t seed = Seed("head/" + key);
    std::vector<double> scores;
    size_t support = 0;
    for (int f = 0; f < plan.num_folds; ++f) {
      const auto eval = plan.FoldIds(f);
      support += BuildBags(matrix_, cohort_, RowsOf(eval)).size();
      scores.push_back(SurvivalCIndex(plan.FoldTrainIds(f), eval,
                                      DeriveSeed(seed, static_cast<uint64_t>(f))));
    }
    const auto ms = ComputeMeanStd(scores);
    section.rows.push_back({task, "CV", "c_index", ms.mean, ms.stddev, support,
                            "", key, seed});
  });
  Guard("survival/OOD1", [&] {
    const std::string key = "survival/OOD1";
    const auto& ood = Plan(key, [&](uint64_t seed) {
      return MakeOod1(cohort_, std::nullopt, std::nullopt, config_.group_key,
                      seed, options_, kCensored);
    });
    const auto& base = Plan(key + "/baseline", [&](uint64_t seed) {
      return MakeMatchedBaseline(ood, cohort_, seed);
    });
    const uint64_t seed = Seed("head/" + key);
    const uint64_t base_seed = Seed("head/" + key + "/baseline");
    const double o = SurvivalCIndex(ood.train_ids, ood.test_ids, seed);
    const double b = SurvivalCIndex(base.train_ids, base.test_ids, base_seed);
    const size_t o_n = BuildBags(matrix_, cohort_, RowsOf(ood.test_ids)).size();
    const size_t b_n = BuildBags(matrix_, cohort_, RowsOf(base.test_ids)).size();
    section.rows.push_back({task, BaselineLabel(base, Setting::kOod1), "c_index",
                            b, std::nullopt, b_n, "", key + "/baseline",
                            base_seed});
    section.rows.push_back(
        {task, "OOD1", "c_index", o, std::nullopt, o_n, "", key, seed});
    AddDegradationRows(section, task, "OOD1", "c_index", b, o, o_n, key, seed);
  });
}

std::string Cell(const MetricRow& row) {
  std::string s = FormatDouble(row.value);
  if (row.stddev) s += " ± " + FormatDouble(*row.stddev);
  return s;
}

}  // namespace

std::filesystem::path AuditConfig::Resolve(const std::filesystem::path& p) const {
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

bool AuditConfig::Selected(std::string_view audit) const {
  return std::find(audits.begin(), audits.end(), audit) != audits.end();
}

void AuditConfig::Validate() const {
  if (audits.empty()) BadConfig("no audit selected");
  for (const auto& a : audits) {
    if (std::find(std::begin(kAuditOrder), std::end(kAuditOrder), a) ==
        std::end(kAuditOrder)) {
      BadConfig("unknown audit \"" + a + "\"");
    }
  }
  static const std::set<std::string> kAttributes = {
      std::string(kClassLabel), std::string(kInstitution), std::string(kGender),
      std::string(kRace), std::string(kAgeGroup)};
  for (const auto& attr : attributes) {
    if (!kAttributes.contains(attr)) BadConfig("unknown attribute \"" + attr + "\"");
  }
  for (const auto& t : reliability_tasks) {
    if (t != "patch" && t != "wsi") BadConfig("unknown reliability task \"" + t + "\"");
  }
  auto ood_only = [](const std::vector<Setting>& settings, const char* what) {
    for (Setting s : settings) {
      if (s != Setting::kOod1 && s != Setting::kOod2 && s != Setting::kOod3) {
        BadConfig(std::string(what) + " accepts OOD1, OOD2 and OOD3 only");
      }
    }
  };
  ood_only(ood_settings, "ood_settings");
  ood_only(retrieval_settings, "retrieval_settings");
  for (Setting s : fairness_settings) {
    if (s == Setting::kBaseline12 || s == Setting::kBaseline3) {
      BadConfig("fairness_settings accepts ID_BASELINE, OOD1, OOD2, OOD3");
    }
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    BadConfig("test_fraction must lie in (0, 1)");
  }
  if (num_folds < 2) BadConfig("num_folds must be >= 2");
  for (int k : retrieval_k) {
    if (k < 1) BadConfig("retrieval_k entries must be >= 1");
  }
  ProbeConfig p = probe;
  p.input_dim = 1;
  p.Validate();
  MilConfig m = mil;
  m.input_dim = 1;
  m.Validate();
  SurvivalConfig s = survival;
  s.input_dim = 1;
  s.Validate();
}

void AuditConfig::CheckCohortFiles() const {
  for (const auto& path : {Resolve(embeddings), Resolve(manifest)}) {
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorKind::kIo, "cohort file " + path.string() + " not found");
    }
  }
}

AuditConfig ConfigFromJson(const json& doc,
                           const std::filesystem::path& base_dir) {
  CheckKeys(doc,
            {"cohort", "audits", "attributes", "ood_settings",
             "reliability_tasks", "retrieval_settings", "fairness_settings",
             "seed", "group_key", "test_fraction", "num_folds", "min_support",
             "min_institution_samples", "drop_infeasible", "retrieval_k",
             "probe", "mil", "survival", "output_dir"},
            "config");
  AuditConfig c;
  c.base_dir = base_dir;
  if (!doc.contains("cohort")) BadConfig("missing \"cohort\"");
  const auto& cohort = doc.at("cohort");
  CheckKeys(cohort, {"embeddings", "manifest"}, "cohort");
  if (!cohort.contains("embeddings") || !cohort.contains("manifest")) {
    BadConfig("cohort needs \"embeddings\" and \"manifest\"");
  }
  c.embeddings = Field<std::string>(cohort, "embeddings", "");
  c.manifest = Field<std::string>(cohort, "manifest", "");
  if (!doc.contains("audits")) BadConfig("missing \"audits\"");
  c.audits = Field<std::vector<std::string>>(doc, "audits", {});
  c.attributes = Field(doc, "attributes", c.attributes);
  c.ood_settings = ParseSettings(doc, "ood_settings", c.ood_settings);
  c.reliability_tasks = Field(doc, "reliability_tasks", c.reliability_tasks);
  c.retrieval_settings =
      ParseSettings(doc, "retrieval_settings", c.retrieval_settings);
  c.fairness_settings = ParseSettings(doc, "fairness_settings", c.fairness_settings);
  c.seed = Field(doc, "seed", c.seed);
  if (doc.contains("group_key")) {
    c.group_key = ParseGroupKey(Field<std::string>(doc, "group_key", ""));
  }
  c.test_fraction = Field(doc, "test_fraction", c.test_fraction);
  c.num_folds = Field(doc, "num_folds", c.num_folds);
  c.min_support = Field(doc, "min_support", c.min_support);
  c.min_institution_samples =
      Field(doc, "min_institution_samples", c.min_institution_samples);
  c.drop_infeasible = Field(doc, "drop_infeasible", c.drop_infeasible);
  c.retrieval_k = Field(doc, "retrieval_k", c.retrieval_k);
  if (doc.contains("probe")) c.probe = ProbeFromJson(doc.at("probe"));
  if (doc.contains("mil")) c.mil = MilFromJson(doc.at("mil"));
  if (doc.contains("survival")) {
    c.survival = SurvivalConfigFromJson(doc.at("survival"));
  }
  if (doc.contains("output_dir")) {
    c.output_dir = c.Resolve(Field<std::string>(doc, "output_dir", ""));
  }
  return c;
}

AuditConfig LoadAuditConfig(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat,
                "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return ConfigFromJson(doc, path.parent_path());
}

json ConfigToJson(const AuditConfig& c) {
  return {{"cohort",
           {{"embeddings", c.embeddings.generic_string()},
            {"manifest", c.manifest.generic_string()}}},
          {"audits", c.audits},
          {"attributes", c.attributes},
          {"ood_settings", SettingNames(c.ood_settings)},
          {"reliability_tasks", c.reliability_tasks},
          {"retrieval_settings", SettingNames(c.retrieval_settings)},
          {"fairness_settings", SettingNames(c.fairness_settings)},
          {"seed", c.seed},
          {"group_key", std::string(GroupKeyName(c.group_key))},
          {"test_fraction", c.test_fraction},
          {"num_folds", c.num_folds},
          {"min_support", c.min_support},
          {"min_institution_samples", c.min_institution_samples},
          {"drop_infeasible", c.drop_infeasible},
          {"retrieval_k", c.retrieval_k},
          {"probe", ProbeToJson(c.probe)},
          {"mil", MilToJson(c.mil)},
          {"survival", SurvivalConfigToJson(c.survival)}};
}

std::string ConfigHash(const json& canonical_config) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(Fnv1a64(canonical_config.dump())));
  return buf;
}

std::vector<MetricRow> AuditReport::Find(std::string_view audit,
                                         std::string_view task,
                                         std::string_view setting,
                                         std::string_view metric,
                                         std::string_view slice) const {
  std::vector<MetricRow> out;
  for (const auto& section : sections) {
    if (!audit.empty() && section.audit != audit) continue;
    for (const auto& row : section.rows) {
      if ((task.empty() || row.task == task) &&
          (setting.empty() || row.setting == setting) &&
          (metric.empty() || row.metric == metric) &&
          (slice.empty() || row.slice == slice)) {
        out.push_back(row);
      }
    }
  }
  return out;
}

json ReportToJson(const AuditReport& report) {
  json sections = json::array();
  for (const auto& s : report.sections) {
    json rows = json::array();
    for (const auto& r : s.rows) rows.push_back(RowToJson(r));
    sections.push_back({{"audit", s.audit}, {"rows", rows}});
  }
  json plans = json::object();
  for (const auto& [key, plan] : report.plans) plans[key] = plan;
  return {{"toolkit", "pfmaudit"},
          {"version", report.version},
          {"config", report.config},
          {"config_hash", report.config_hash},
          {"cohort", report.cohort},
          {"plans", plans},
          {"sections", sections},
          {"warnings", report.warnings}};
}

AuditReport ReportFromJson(const json& doc) {
  AuditReport report;
  try {
    if (doc.at("toolkit").get<std::string>() != "pfmaudit") {
      throw Error(ErrorKind::kFormat, "not a pfmaudit report");
    }
    report.version = doc.at("version").get<std::string>();
    report.config = doc.at("config");
    report.config_hash = doc.at("config_hash").get<std::string>();
    report.cohort = doc.at("cohort");
    for (const auto& [key, plan] : doc.at("plans").items()) {
      report.plans[key] = plan;
    }
    for (const auto& s : doc.at("sections")) {
      AuditSection section;
      section.audit = s.at("audit").get<std::string>();
      for (const auto& r : s.at("rows")) section.rows.push_back(RowFromJson(r));
      report.sections.push_back(std::move(section));
    }
    report.warnings = doc.at("warnings").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("malformed report: ") + e.what());
  }
  return report;
}

std::string FormatReportJson(const AuditReport& report) {
  return ReportToJson(report).dump(2) + "\n";
}

std::string RenderMarkdown(const AuditReport& report) {
  std::ostringstream md;
  md << "# pfmaudit report\n\n";
  md << "- toolkit version: " << report.version << "\n";
  md << "- config hash: " << report.config_hash << "\n";
  if (report.cohort.contains("count")) {
    md << "- samples: " << report.cohort.at("count").dump()
       << ", embedding width: " << report.cohort.at("dim").dump() << "\n";
  }
  for (const auto& section : report.sections) {
    md << "\n## " << section.audit << "\n";
    // Unsliced rows form one table per task with a row per setting; sliced
    // rows form one table per (task, setting) with a row per slice.
    auto group_of = [](const MetricRow& row) {
      return std::pair<std::string, std::string>{
          row.task, row.slice.empty() ? "" : row.setting};
    };
    auto label_of = [](const MetricRow& row) {
      return row.slice.empty() ? row.setting : row.slice;
    };
    std::vector<std::pair<std::string, std::string>> groups;
    for (const auto& row : section.rows) {
      if (std::find(groups.begin(), groups.end(), group_of(row)) == groups.end()) {
        groups.push_back(group_of(row));
      }
    }
    if (groups.empty()) md << "\nNo results.\n";
    for (const auto& group : groups) {
      std::vector<std::string> labels, metrics;
      std::map<std::pair<std::string, std::string>, const MetricRow*> cells;
      for (const auto& row : section.rows) {
        if (group_of(row) != group) continue;
        const std::string label = label_of(row);
        if (std::find(labels.begin(), labels.end(), label) == labels.end()) {
          labels.push_back(label);
        }
        if (std::find(metrics.begin(), metrics.end(), row.metric) == metrics.end()) {
          metrics.push_back(row.metric);
        }
        cells[{label, row.metric}] = &row;
      }
      md << "\n### " << group.first;
      if (!group.second.empty()) md << " by slice, " << group.second;
      md << "\n\n| " << (group.second.empty() ? "setting" : "slice") << " | n |";
      for (const auto& m : metrics) md << " " << m << " |";
      md << "\n|---|---|";
      for (size_t i = 0; i < metrics.size(); ++i) md << "---|";
      md << "\n";
      for (const auto& label : labels) {
        size_t support = 0;
        for (const auto& m : metrics) {
          auto it = cells.find({label, m});
          if (it != cells.end()) {
            support = it->second->support;
            break;
          }
        }
        md << "| " << label << " | " << support << " |";
        for (const auto& m : metrics) {
          auto it = cells.find({label, m});
          md << " " << (it == cells.end() ? "-" : Cell(*it->second)) << " |";
        }
        md << "\n";
      }
    }
  }
  md << "\n## warnings\n\n";
  if (report.warnings.empty()) md << "None.\n";
  for (const auto& w : report.warnings) md << "- " << w << "\n";
  return md.str();
}

AuditReport RunAudit(const AuditConfig& config, const EmbeddingMatrix& matrix,
                     const CohortManifest& cohort) {
  config.Validate();
  if (matrix.count != cohort.size()) {
    throw Error(ErrorKind::kValidation,
                "embedding rows (" + std::to_string(matrix.count) +
                    ") do not match manifest records (" +
                    std::to_string(cohort.size()) + ")");
  }
  matrix.Validate();

  AuditReport report;
  report.version = PFMAUDIT_VERSION;
  report.config = ConfigToJson(config);
  report.config_hash = ConfigHash(report.config);
  const auto validation = ValidateCohort(matrix, cohort);
  report.cohort = {{"count", cohort.size()},
                   {"dim", matrix.dim},
                   {"institutions", validation.institution_counts},
                   {"classes", validation.class_counts},
                   {"missingness", validation.missingness}};

  Auditor auditor(config, matrix, cohort, report);
  for (std::string_view audit : kAuditOrder) {
    if (!config.Selected(audit)) continue;
    AuditSection section;
    section.audit = std::string(audit);
    if (audit == kAuditPrivacy) auditor.Privacy(section);
    if (audit == kAuditReliability) auditor.Reliability(section);
    if (audit == kAuditFairness) auditor.Fairness(section);
    if (audit == kAuditRetrieval) auditor.Retrieval(section);
    if (audit == kAuditSurvival) auditor.Survival(section);
    report.sections.push_back(std::move(section));
  }
  const bool any_rows = std::any_of(
      report.sections.begin(), report.sections.end(),
      [](const AuditSection& s) { return !s.rows.empty(); });
  if (!any_rows) {
    std::string detail = report.warnings.empty() ? "" : ": " + report.warnings.front();
    throw Error(ErrorKind::kInfeasible,
                "no requested audit could run" + detail);
  }
  return report;
}

AuditReport RunAudit(const AuditConfig& config) {
  config.Validate();
  config.CheckCohortFiles();
  const auto matrix = ReadQemb(config.Resolve(config.embeddings));
  const auto cohort = LoadManifest(config.Resolve(config.manifest));
  return RunAudit(config, matrix, cohort);
}

}  // namespace pfmaudit
