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

// Scalar audit metrics and the exhaustive embedding-retrieval evaluator. All
// functions are pure.

#ifndef PFMAUDIT_METRICS_H_
#define PFMAUDIT_METRICS_H_

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pfmaudit {

struct MetricValue {
  std::string name;
  double value = 0.0;
  size_t support = 0;
  std::optional<std::string> slice;
};

MetricValue Accuracy(std::span<const int> pred, std::span<const int> truth);

// Unweighted mean over classes of per-class F1; a class with P + R = 0
// contributes 0.
MetricValue MacroF1(std::span<const int> pred, std::span<const int> truth,
                    int num_classes);

// Accuracy in excess of uniform chance, acc - 1/K.
double LeakageScore(const MetricValue& accuracy, int num_classes);

// Accuracy of always predicting the most frequent class.
double MajorityBaseline(std::span<const int> truth, int num_classes);

struct Degradation {
  double absolute = 0.0;  // baseline - ood
  double relative = 0.0;  // absolute / baseline, 0 when baseline == 0
};

Degradation ComputeDegradation(const MetricValue& baseline,
                               const MetricValue& ood);

// |v(g1) - v(g2)| over exactly two groups.
double SubgroupGap(const std::map<std::string, MetricValue>& by_group);

struct InstitutionCv {
  double cv = 0.0;
  double mean = 0.0;
  double stddev = 0.0;  // sample (n - 1) standard deviation
  std::vector<std::string> included;
  std::vector<std::string> excluded;  // support below min_support
};

InstitutionCv ComputeInstitutionCv(
    const std::map<std::string, MetricValue>& by_institution,
    size_t min_support = 10);

// Harrell's concordance over pairs with time_i < time_j and i uncensored;
// tied risks earn half credit. O(n log n).
double ConcordanceIndex(std::span<const double> risk,
                        std::span<const double> time,
                        const std::vector<bool>& censored);

struct RetrievalResult {
  std::map<int, double> acc_at;
  double mv_acc_at_5 = 0.0;
  size_t num_queries = 0;
};

// Cosine similarity, exhaustive search, ties broken toward the lower
// database row. Acc@k counts a hit when any of the top k shares the query
// label; MVAcc@5 takes the majority label of the top 5, resolving ties
// toward the class of the nearest tied neighbor.
RetrievalResult RetrieveAndScore(const Eigen::MatrixXd& database,
                                 std::span<const int> database_labels,
                                 const Eigen::MatrixXd& queries,
                                 std::span<const int> query_labels,
                                 const std::vector<int>& k_set = {1, 3, 5});

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for n < 2
};

MeanStd ComputeMeanStd(std::span<const double> values);

}  // namespace pfmaudit

#endif  // PFMAUDIT_METRICS_H_
