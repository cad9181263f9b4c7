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

#include "pfmaudit/probe.h"

#include <cmath>
#include <numeric>
#include <unordered_map>

#include "pfmaudit/error.h"
#include "pfmaudit/rng.h"

namespace pfmaudit {
namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MlpWeights {
  Eigen::Map<const RowMatrix> w1;
  Eigen::Map<const Eigen::VectorXd> b1;
  Eigen::Map<const RowMatrix> w2;
  Eigen::Map<const Eigen::VectorXd> b2;

  MlpWeights(const HeadArchitecture& a, const double* p)
      : w1(p, a.hidden_dim, a.input_dim),
        b1(p + a.hidden_dim * a.input_dim, a.hidden_dim),
        w2(p + a.hidden_dim * a.input_dim + a.hidden_dim, a.num_outputs,
           a.hidden_dim),
        b2(p + a.hidden_dim * a.input_dim + a.hidden_dim +
               a.num_outputs * a.hidden_dim,
           a.num_outputs) {}
};

// Row-wise softmax in place; returns per-row log-sum-exp.
Eigen::VectorXd SoftmaxRows(Eigen::MatrixXd& logits) {
  Eigen::VectorXd lse(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - m).exp();
    const double s = logits.row(i).sum();
    logits.row(i) /= s;
    lse(i) = m + std::log(s);
  }
  return lse;
}

void CheckLabels(std::span<const int> y, int num_classes) {
  for (int label : y) {
    if (label < 0 || label >= num_classes) {
      throw Error(ErrorKind::kArgument,
                  "label " + std::to_string(label) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
}

}  // namespace

void ProbeConfig::Validate() const {
  if (input_dim <= 0 || hidden_dim <= 0 || epochs <= 0 || batch_size <= 0 ||
      restart_period <= 0) {
    throw Error(ErrorKind::kArgument, "probe dimensions must be positive");
  }
  if (num_classes < 2) throw Error(ErrorKind::kArgument, "num_classes < 2");
  if (!(learning_rate > 0.0)) {
    throw Error(ErrorKind::kArgument, "learning_rate must be positive");
  }
}

HeadArchitecture ProbeConfig::Architecture() const {
  return {HeadKind::kProbeMlp, input_dim, hidden_dim, num_classes};
}

Eigen::MatrixXd GatherRows(const EmbeddingMatrix& matrix,
                           std::span<const size_t> rows) {
  Eigen::MatrixXd x(rows.size(), matrix.dim);
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto r = matrix.row(rows[i]);
    for (uint32_t j = 0; j < matrix.dim; ++j) x(i, j) = r[j];
  }
  return x;
}

std::vector<double> InitProbeWeights(const HeadArchitecture& arch,
                                     uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(arch.ParameterCount());
  const size_t d = arch.input_dim, h = arch.hidden_dim, k = arch.num_outputs;
  std::span<double> all(w);
  InitUniformFanIn(all.subspan(0, h * d + h), arch.input_dim, rng);
  InitUniformFanIn(all.subspan(h * d + h, k * h + k), arch.hidden_dim, rng);
  return w;
}

LossAndGradient ProbeLossAndGradient(const HeadArchitecture& arch,
                                     std::span<const double> weights,
                                     const Eigen::MatrixXd& x,
                                     std::span<const int> y) {
  const MlpWeights p(arch, weights.data());
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd pre = x * p.w1.transpose();
  pre.rowwise() += p.b1.transpose();
  const Eigen::MatrixXd act = pre.cwiseMax(0.0);
  Eigen::MatrixXd probs = act * p.w2.transpose();
  probs.rowwise() += p.b2.transpose();
  Eigen::MatrixXd logits = probs;
  const Eigen::VectorXd lse = SoftmaxRows(probs);

  LossAndGradient out;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) loss += lse(i) - logits(i, y[i]);
  out.loss = loss / n;

  Eigen::MatrixXd g = probs;
  for (Eigen::Index i = 0; i < n; ++i) g(i, y[i]) -= 1.0;
  g /= static_cast<double>(n);

  const size_t d = arch.input_dim, h = arch.hidden_dim, k = arch.num_outputs;
  out.gradient.resize(arch.ParameterCount());
  double* base = out.gradient.data();
  Eigen::Map<RowMatrix> dw1(base, h, d);
  Eigen::Map<Eigen::VectorXd> db1(base + h * d, h);
  Eigen::Map<RowMatrix> dw2(base + h * d + h, k, h);
  Eigen::Map<Eigen::VectorXd> db2(base + h * d + h + k * h, k);

  dw2.noalias() = g.transpose() * act;
  db2 = g.colwise().sum().transpose();
  Eigen::MatrixXd dpre = g * p.w2;
  dpre.array() *= (pre.array() > 0.0).cast<double>();
  dw1.noalias() = dpre.transpose() * x;
  db1 = dpre.colwise().sum().transpose();
  return out;
}

TrainedHead TrainProbe(const Eigen::MatrixXd& x, std::span<const int> y,
                       const ProbeConfig& config,
                       std::vector<std::string> classes) {
  config.Validate();
  if (x.cols() != config.input_dim) {
    throw Error(ErrorKind::kArgument, "input width does not match input_dim");
  }
  if (static_cast<size_t>(x.rows()) != y.size()) {
    throw Error(ErrorKind::kArgument, "row and label counts differ");
  }
  if (y.size() < static_cast<size_t>(config.num_classes)) {
    throw Error(ErrorKind::kArgument, "fewer samples than classes");
  }
  CheckLabels(y, config.num_classes);

  TrainedHead head;
  head.arch = config.Architecture();
  head.classes = std::move(classes);
  head.seed = config.seed;
  head.weights = InitProbeWeights(head.arch, DeriveSeed(config.seed, 0));
  Rng shuffle_rng(DeriveSeed(config.seed, 1));
  Adam adam(head.weights.size());

  const size_t n = y.size();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::vector<int> batch_y;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr =
        CosineRestartLr(config.learning_rate, epoch, config.restart_period);
    shuffle_rng.Shuffle(std::span(order));
    double epoch_loss = 0.0;
    for (size_t start = 0; start < n; start += config.batch_size) {
      const size_t end = std::min(n, start + config.batch_size);
      const std::vector<Eigen::Index> idx(order.begin() + start,
                                          order.begin() + end);
      const Eigen::MatrixXd xb = x(idx, Eigen::all);
      batch_y.clear();
      for (auto i : idx) batch_y.push_back(y[i]);
      const auto lg = ProbeLossAndGradient(head.arch, head.weights, xb, batch_y);
      if (!std::isfinite(lg.loss)) {
        throw Error(ErrorKind::kDivergence,
                    "non-finite loss in epoch " + std::to_string(epoch));
      }
      adam.Step(head.weights, lg.gradient, lr);
      epoch_loss += lg.loss * static_cast<double>(end - start);
    }
    head.epoch_losses.push_back(epoch_loss / n);
  }
  head.epochs_run = config.epochs;
  head.final_loss = head.epoch_losses.back();
  head.Validate();
  return head;
}

Prediction Predict(const TrainedHead& head, const Eigen::MatrixXd& x) {
  if (head.arch.kind != HeadKind::kProbeMlp) {
    throw Error(ErrorKind::kArgument, "not a probe head");
  }
  if (x.cols() != head.arch.input_dim) {
    throw Error(ErrorKind::kArgument,
                "input width " + std::to_string(x.cols()) + " != head input_dim " +
                    std::to_string(head.arch.input_dim));
  }
  const MlpWeights p(head.arch, head.weights.data());
  Eigen::MatrixXd pre = x * p.w1.transpose();
  pre.rowwise() += p.b1.transpose();
  Prediction out;
  out.probabilities = pre.cwiseMax(0.0) * p.w2.transpose();
  out.probabilities.rowwise() += p.b2.transpose();
  SoftmaxRows(out.probabilities);
  out.labels.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index arg;
    out.probabilities.row(i).maxCoeff(&arg);
    out.labels[i] = static_cast<int>(arg);
  }
  return out;
}

FoldedResult RunCv(const Eigen::MatrixXd& x, std::span<const int> y,
                   std::span<const std::string> ids, const SplitPlan& plan,
                   const ProbeConfig& config) {
  std::unordered_map<std::string, Eigen::Index> row_of;
  for (size_t i = 0; i < ids.size(); ++i) row_of[ids[i]] = static_cast<Eigen::Index>(i);
  auto rows_for = [&row_of](const std::vector<std::string>& which) {
    std::vector<Eigen::Index> rows;
    rows.reserve(which.size());
    for (const auto& id : which) {
      auto it = row_of.find(id);
      if (it == row_of.end()) {
        throw Error(ErrorKind::kPlan, "plan id " + id + " has no embedding row");
      }
      rows.push_back(it->second);
    }
    return rows;
  };
  auto labels_for = [&y](const std::vector<Eigen::Index>& rows) {
    std::vector<int> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(y[r]);
    return out;
  };
  if (plan.test_ids.empty()) throw Error(ErrorKind::kPlan, "plan has no test side");
  const auto test_rows = rows_for(plan.test_ids);
  const auto test_y = labels_for(test_rows);
  const Eigen::MatrixXd x_test = x(test_rows, Eigen::all);

  FoldedResult result;
  std::vector<double> accs, f1s;
  for (int f = 0; f < plan.num_folds; ++f) {
    if (plan.FoldIds(f).empty()) {
      throw Error(ErrorKind::kPlan, "fold " + std::to_string(f) + " is empty");
    }
    const auto train_rows = rows_for(plan.FoldTrainIds(f));
    ProbeConfig fold_config = config;
    fold_config.seed = DeriveSeed(config.seed, static_cast<uint64_t>(f));
    auto head = TrainProbe(x(train_rows, Eigen::all), labels_for(train_rows),
                           fold_config);
    const auto pred = Predict(head, x_test);
    FoldMetrics m;
    m.fold = f;
    m.accuracy = Accuracy(pred.labels, test_y).value;
    m.macro_f1 = MacroF1(pred.labels, test_y, config.num_classes).value;
    m.train_support = train_rows.size();
    m.test_support = test_rows.size();
    m.final_loss = head.final_loss;
    accs.push_back(m.accuracy);
    f1s.push_back(m.macro_f1);
    result.folds.push_back(m);
    result.heads.push_back(std::move(head));
    result.test_predictions.push_back(pred.labels);
  }
  result.accuracy = ComputeMeanStd(accs);
  result.macro_f1 = ComputeMeanStd(f1s);
  return result;
}

}  // namespace pfmaudit
