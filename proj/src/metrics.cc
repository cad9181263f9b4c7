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

#include "pfmaudit/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pfmaudit/error.h"

namespace pfmaudit {
namespace {

void CheckPaired(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) {
    throw Error(ErrorKind::kArgument, "prediction and truth lengths differ");
  }
  if (pred.empty()) throw Error(ErrorKind::kArgument, "empty input");
}

// Fenwick tree over compressed risk ranks.
class CountTree {
 public:
  explicit CountTree(size_t n) : tree_(n + 1, 0) {}
  void Add(size_t i) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Number of inserted ranks < i.
  int64_t Below(size_t i) const {
    int64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<int64_t> tree_;
};

}  // namespace

MetricValue Accuracy(std::span<const int> pred, std::span<const int> truth) {
  CheckPaired(pred, truth);
  size_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return {"accuracy", static_cast<double>(hits) / pred.size(), pred.size(), {}};
}

MetricValue MacroF1(std::span<const int> pred, std::span<const int> truth,
                    int num_classes) {
  CheckPaired(pred, truth);
  if (num_classes < 1) throw Error(ErrorKind::kArgument, "num_classes < 1");
  std::vector<size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= num_classes || truth[i] < 0 ||
        truth[i] >= num_classes) {
      throw Error(ErrorKind::kArgument, "label out of range");
    }
    if (pred[i] == truth[i]) {
      ++tp[pred[i]];
    } else {
      ++fp[pred[i]];
      ++fn[truth[i]];
    }
  }
  double sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    // 2PR/(P+R) == 2TP / (2TP + FP + FN), and 0 when TP == 0.
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    sum += tp[c] == 0 ? 0.0 : 2.0 * tp[c] / denom;
  }
  return {"macro_f1", sum / num_classes, pred.size(), {}};
}

double LeakageScore(const MetricValue& accuracy, int num_classes) {
  if (num_classes < 2) throw Error(ErrorKind::kArgument, "num_classes < 2");
  return accuracy.value - 1.0 / num_classes;
}

double MajorityBaseline(std::span<const int> truth, int num_classes) {
  if (truth.empty()) throw Error(ErrorKind::kArgument, "empty input");
  std::vector<size_t> counts(num_classes, 0);
  for (int t : truth) ++counts.at(t);
  return static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
         truth.size();
}

Degradation ComputeDegradation(const MetricValue& baseline,
                               const MetricValue& ood) {
  if (baseline.name != ood.name) {
    throw Error(ErrorKind::kArgument, "cannot compare metric \"" +
                                          baseline.name + "\" with \"" +
                                          ood.name + "\"");
  }
  Degradation d;
  d.absolute = baseline.value - ood.value;
  d.relative = baseline.value == 0.0 ? 0.0 : d.absolute / baseline.value;
  return d;
}

double SubgroupGap(const std::map<std::string, MetricValue>& by_group) {
  if (by_group.size() != 2) {
    throw Error(ErrorKind::kArgument,
                "subgroup gap needs exactly 2 groups, got " +
                    std::to_string(by_group.size()));
  }
  return std::abs(by_group.begin()->second.value -
                  std::next(by_group.begin())->second.value);
}

InstitutionCv ComputeInstitutionCv(
    const std::map<std::string, MetricValue>& by_institution,
    size_t min_support) {
  InstitutionCv out;
  std::vector<double> values;
  for (const auto& [inst, metric] : by_institution) {
    if (metric.support < min_support) {
      out.excluded.push_back(inst);
    } else {
      out.included.push_back(inst);
      values.push_back(metric.value);
    }
  }
  if (values.size() < 2) {
    throw Error(ErrorKind::kArgument,
                "institution CV needs at least 2 institutions with support >= " +
                    std::to_string(min_support));
  }
  const auto ms = ComputeMeanStd(values);
  if (ms.mean == 0.0) {
    throw Error(ErrorKind::kUndefined, "mean accuracy is 0, CV undefined");
  }
  out.mean = ms.mean;
  out.stddev = ms.stddev;
  out.cv = ms.stddev / ms.mean;
  return out;
}

double ConcordanceIndex(std::span<const double> risk,
                        std::span<const double> time,
                        const std::vector<bool>& censored) {
  const size_t n = risk.size();
  if (time.size() != n || censored.size() != n) {
    throw Error(ErrorKind::kArgument, "risk/time/censored lengths differ");
  }
  std::vector<double> ranks(risk.begin(), risk.end());
  std::sort(ranks.begin(), ranks.end());
  ranks.erase(std::unique(ranks.begin(), ranks.end()), ranks.end());
  auto rank_of = [&ranks](double r) {
    return static_cast<size_t>(std::lower_bound(ranks.begin(), ranks.end(), r) -
                               ranks.begin());
  };
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&time](size_t a, size_t b) { return time[a] > time[b]; });
  // Walk from the longest time down; everything already inserted has a
  // strictly larger time than the current block of tied times.
  CountTree tree(ranks.size());
  int64_t inserted = 0, concordant = 0, tied = 0, comparable = 0;
  for (size_t start = 0; start < n;) {
    size_t end = start;
    while (end < n && time[order[end]] == time[order[start]]) ++end;
    for (size_t p = start; p < end; ++p) {
      const size_t i = order[p];
      if (censored[i]) continue;
      const size_t r = rank_of(risk[i]);
      const int64_t below = tree.Below(r);
      const int64_t equal = tree.Below(r + 1) - below;
      concordant += below;
      tied += equal;
      comparable += inserted;
    }
    for (size_t p = start; p < end; ++p) {
      tree.Add(rank_of(risk[order[p]]));
      ++inserted;
    }
    start = end;
  }
  if (comparable == 0) {
    throw Error(ErrorKind::kDegenerateData, "no comparable pairs");
  }
  return (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) /
         static_cast<double>(comparable);
}

RetrievalResult RetrieveAndScore(const Eigen::MatrixXd& database,
                                 std::span<const int> database_labels,
                                 const Eigen::MatrixXd& queries,
                                 std::span<const int> query_labels,
                                 const std::vector<int>& k_set) {
  if (database.rows() == 0) throw Error(ErrorKind::kArgument, "empty database");
  if (database.cols() != queries.cols()) {
    throw Error(ErrorKind::kArgument, "database and query widths differ");
  }
  if (static_cast<size_t>(database.rows()) != database_labels.size() ||
      static_cast<size_t>(queries.rows()) != query_labels.size()) {
    throw Error(ErrorKind::kArgument, "label count does not match rows");
  }
  auto normalized = [](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out = m;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double norm = m.row(i).norm();
      if (norm == 0.0) {
        throw Error(ErrorKind::kNormalization,
                    "row " + std::to_string(i) + " has zero norm");
      }
      out.row(i) /= norm;
    }
    return out;
  };
  const Eigen::MatrixXd db = normalized(database);
  const Eigen::MatrixXd q = normalized(queries);
  const Eigen::MatrixXd sim = q * db.transpose();

  int max_k = 5;
  for (int k : k_set) max_k = std::max(max_k, k);
  const size_t n_db = static_cast<size_t>(db.rows());
  const size_t depth = std::min<size_t>(max_k, n_db);

  RetrievalResult result;
  result.num_queries = static_cast<size_t>(q.rows());
  std::map<int, size_t> hits;
  size_t mv_hits = 0;
  std::vector<size_t> idx(n_db);
  for (Eigen::Index qi = 0; qi < q.rows(); ++qi) {
    std::iota(idx.begin(), idx.end(), size_t{0});
    auto closer = [&](size_t a, size_t b) {
      const double sa = sim(qi, a), sb = sim(qi, b);
      return sa != sb ? sa > sb : a < b;
    };
    std::partial_sort(idx.begin(), idx.begin() + depth, idx.end(), closer);
    const int label = query_labels[qi];
    for (int k : k_set) {
      const size_t top = std::min<size_t>(k, n_db);
      for (size_t p = 0; p < top; ++p) {
        if (database_labels[idx[p]] == label) {
          ++hits[k];
          break;
        }
      }
    }
    // Majority of the top 5; on ties the first-seen (nearest) class wins.
    const size_t top5 = std::min<size_t>(5, n_db);
    std::map<int, size_t> votes;
    for (size_t p = 0; p < top5; ++p) ++votes[database_labels[idx[p]]];
    size_t best_votes = 0;
    for (const auto& [c, v] : votes) best_votes = std::max(best_votes, v);
    int winner = -1;
    for (size_t p = 0; p < top5; ++p) {
      if (votes[database_labels[idx[p]]] == best_votes) {
        winner = database_labels[idx[p]];
        break;
      }
    }
    mv_hits += winner == label;
  }
  const double nq = static_cast<double>(std::max<Eigen::Index>(q.rows(), 1));
  for (int k : k_set) result.acc_at[k] = hits[k] / nq;
  result.mv_acc_at_5 = mv_hits / nq;
  return result;
}

MeanStd ComputeMeanStd(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  // Constant inputs give exactly zero deviation.
  if (std::all_of(values.begin(), values.end(),
                  [&](double v) { return v == values.front(); })) {
    out.mean = values.front();
    return out;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / values.size();
  if (values.size() < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(ss / (values.size() - 1));
  return out;
}

}  // namespace pfmaudit
