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

#include "pfmaudit/mil.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "pfmaudit/error.h"
#include "pfmaudit/rng.h"

namespace pfmaudit {
namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Offsets {
  size_t v, c, w, out_w, out_b;
  explicit Offsets(const HeadArchitecture& a) {
    const size_t d = a.input_dim, h = a.hidden_dim, k = a.num_outputs;
    v = 0;
    c = h * d;
    w = c + h;
    out_w = w + h;
    out_b = out_w + k * d;
  }
};

struct AbmilWeights {
  Eigen::Map<const RowMatrix> v;
  Eigen::Map<const Eigen::VectorXd> c;
  Eigen::Map<const Eigen::VectorXd> w;
  Eigen::Map<const RowMatrix> out_w;
  Eigen::Map<const Eigen::VectorXd> out_b;

  AbmilWeights(const HeadArchitecture& a, const double* p, const Offsets& o)
      : v(p + o.v, a.hidden_dim, a.input_dim),
        c(p + o.c, a.hidden_dim),
        w(p + o.w, a.hidden_dim),
        out_w(p + o.out_w, a.num_outputs, a.input_dim),
        out_b(p + o.out_b, a.num_outputs) {}
};

struct BagPass {
  Eigen::MatrixXd hidden;  // tanh(H V^T + c), m x a
  Eigen::VectorXd attention;
  Eigen::VectorXd pooled;
  Eigen::VectorXd logits;
};

BagPass Forward(const AbmilWeights& p, const Eigen::MatrixXd& h) {
  if (h.rows() == 0) throw Error(ErrorKind::kArgument, "empty bag");
  if (h.cols() != p.v.cols()) {
    throw Error(ErrorKind::kArgument, "bag width does not match head input_dim");
  }
  BagPass f;
  f.hidden = h * p.v.transpose();
  f.hidden.rowwise() += p.c.transpose();
  f.hidden = f.hidden.array().tanh().matrix();
  const Eigen::VectorXd scores = f.hidden * p.w;
  const double m = scores.maxCoeff();
  f.attention = (scores.array() - m).exp().matrix();
  f.attention /= f.attention.sum();
  f.pooled = h.transpose() * f.attention;
  f.logits = p.out_w * f.pooled + p.out_b;
  return f;
}

// Accumulates d(loss)/d(weights) into grad given d(loss)/d(logits).
void Backward(const AbmilWeights& p, const Offsets& o, const Eigen::MatrixXd& h,
              const BagPass& f, const Eigen::VectorXd& dlogits, double* grad) {
  const Eigen::Index d = h.cols(), a = p.v.rows(), k = p.out_w.rows();
  Eigen::Map<RowMatrix>(grad + o.out_w, k, d).noalias() +=
      dlogits * f.pooled.transpose();
  Eigen::Map<Eigen::VectorXd>(grad + o.out_b, k) += dlogits;
  const Eigen::VectorXd dpooled = p.out_w.transpose() * dlogits;
  const Eigen::VectorXd dattn = h * dpooled;
  const double mean = f.attention.dot(dattn);
  const Eigen::VectorXd dscore =
      (f.attention.array() * (dattn.array() - mean)).matrix();
  Eigen::Map<Eigen::VectorXd>(grad + o.w, a).noalias() +=
      f.hidden.transpose() * dscore;
  Eigen::MatrixXd dpre = dscore * p.w.transpose();
  dpre.array() *= 1.0 - f.hidden.array().square();
  Eigen::Map<RowMatrix>(grad + o.v, a, d).noalias() += dpre.transpose() * h;
  Eigen::Map<Eigen::VectorXd>(grad + o.c, a) += dpre.colwise().sum().transpose();
}

double Softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double Sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Cross-entropy of one bag; adds scale * gradient into grad.
double ClassifierTerm(const AbmilWeights& p, const Offsets& o,
                      const Eigen::MatrixXd& h, int label, double scale,
                      double* grad) {
  const auto f = Forward(p, h);
  const double m = f.logits.maxCoeff();
  Eigen::VectorXd probs = (f.logits.array() - m).exp().matrix();
  const double s = probs.sum();
  probs /= s;
  const double loss = m + std::log(s) - f.logits(label);
  if (grad) {
    Eigen::VectorXd dlogits = probs;
    dlogits(label) -= 1.0;
    Backward(p, o, h, f, dlogits * scale, grad);
  }
  return loss;
}

// Discrete-time NLL of one bag; adds scale * gradient into grad.
double SurvivalTerm(const AbmilWeights& p, const Offsets& o,
                    const Eigen::MatrixXd& h, int bin, bool censored,
                    double scale, double* grad) {
  const auto f = Forward(p, h);
  const Eigen::Index bins = f.logits.size();
  double loss = 0.0;
  Eigen::VectorXd dlogits = Eigen::VectorXd::Zero(bins);
  // -log(1 - h_l) = softplus(x_l), derivative h_l.
  const Eigen::Index survived = censored ? bin + 1 : bin;
  for (Eigen::Index l = 0; l < survived; ++l) {
    loss += Softplus(f.logits(l));
    dlogits(l) = Sigmoid(f.logits(l));
  }
  if (!censored) {
    // -log h_y = softplus(-x_y), derivative h_y - 1.
    loss += Softplus(-f.logits(bin));
    dlogits(bin) = Sigmoid(f.logits(bin)) - 1.0;
  }
  if (grad) Backward(p, o, h, f, dlogits * scale, grad);
  return loss;
}

double AddRegularization(std::span<const double> w, double l1, double l2,
                         std::span<double> grad) {
  double penalty = 0.0;
  for (size_t i = 0; i < w.size(); ++i) {
    penalty += l1 * std::abs(w[i]) + l2 * w[i] * w[i];
    const double sign = w[i] > 0 ? 1.0 : (w[i] < 0 ? -1.0 : 0.0);
    grad[i] += l1 * sign + 2.0 * l2 * w[i];
  }
  return penalty;
}

void CheckBagArgs(std::span<const Bag> bags, size_t n_labels) {
  if (bags.empty()) throw Error(ErrorKind::kArgument, "no bags");
  if (bags.size() != n_labels) {
    throw Error(ErrorKind::kArgument, "bag and label counts differ");
  }
}

}  // namespace

std::vector<Bag> BuildBags(const EmbeddingMatrix& matrix,
                           const CohortManifest& cohort,
                           std::span<const size_t> rows) {
  std::vector<Bag> bags;
  std::unordered_map<std::string, size_t> index;
  for (size_t r : rows) {
    const auto& slide = cohort.records().at(r).slide_id;
    auto [it, inserted] = index.emplace(slide, bags.size());
    if (inserted) bags.push_back(Bag{slide, {}, {}});
    bags[it->second].rows.push_back(r);
  }
  for (auto& bag : bags) {
    bag.instances.resize(bag.rows.size(), matrix.dim);
    for (size_t i = 0; i < bag.rows.size(); ++i) {
      const auto src = matrix.row(bag.rows[i]);
      for (uint32_t j = 0; j < matrix.dim; ++j) bag.instances(i, j) = src[j];
    }
  }
  return bags;
}

void MilConfig::Validate() const {
  if (input_dim <= 0 || attention_hidden <= 0 || epochs <= 0 ||
      batch_size <= 0 || restart_period <= 0) {
    throw Error(ErrorKind::kArgument, "MIL dimensions must be positive");
  }
  if (num_classes < 2) throw Error(ErrorKind::kArgument, "num_classes < 2");
  if (!(learning_rate > 0.0)) {
    throw Error(ErrorKind::kArgument, "learning_rate must be positive");
  }
}

HeadArchitecture MilConfig::Architecture() const {
  return {HeadKind::kAbmilClassifier, input_dim, attention_hidden, num_classes};
}

void SurvivalConfig::Validate() const {
  if (input_dim <= 0 || attention_hidden <= 0 || epochs <= 0 ||
      grad_accumulation <= 0 || restart_period <= 0) {
    throw Error(ErrorKind::kArgument, "survival dimensions must be positive");
  }
  if (bins < 2) throw Error(ErrorKind::kArgument, "bins must be >= 2");
  if (l1_lambda < 0 || l2_lambda < 0) {
    throw Error(ErrorKind::kArgument, "regularization weights must be >= 0");
  }
  if (!(learning_rate > 0.0)) {
    throw Error(ErrorKind::kArgument, "learning_rate must be positive");
  }
}

HeadArchitecture SurvivalConfig::Architecture() const {
  return {HeadKind::kAbmilSurvival, input_dim, attention_hidden, bins};
}

AttentionPooling AbmilAggregate(const Eigen::MatrixXd& instances,
                                 const HeadArchitecture& arch,
                                 std::span<const double> weights) {
  const Offsets o(arch);
  const AbmilWeights p(arch, weights.data(), o);
  auto f = Forward(p, instances);
  return {std::move(f.pooled), std::move(f.attention)};
}

std::vector<double> InitAbmilWeights(const HeadArchitecture& arch,
                                     uint64_t seed) {
  Rng rng(seed);
  const Offsets o(arch);
  std::vector<double> w(arch.ParameterCount());
  std::span<double> all(w);
  InitUniformFanIn(all.subspan(o.v, o.w - o.v), arch.input_dim, rng);
  InitUniformFanIn(all.subspan(o.w, o.out_w - o.w), arch.hidden_dim, rng);
  // W_out and b_out stay at zero.
  return w;
}

LossAndGradient MilClassifierLossAndGradient(const HeadArchitecture& arch,
                                             std::span<const double> weights,
                                             std::span<const Bag> bags,
                                             std::span<const int> labels) {
  CheckBagArgs(bags, labels.size());
  const Offsets o(arch);
  const AbmilWeights p(arch, weights.data(), o);
  LossAndGradient out;
  out.gradient.assign(arch.ParameterCount(), 0.0);
  const double scale = 1.0 / static_cast<double>(bags.size());
  for (size_t b = 0; b < bags.size(); ++b) {
    out.loss += scale * ClassifierTerm(p, o, bags[b].instances, labels[b], scale,
                                       out.gradient.data());
  }
  return out;
}

LossAndGradient SurvivalLossAndGradient(const HeadArchitecture& arch,
                                        std::span<const double> weights,
                                        std::span<const Bag> bags,
                                        std::span<const int> time_bins,
                                        const std::vector<bool>& censored,
                                        double l1_lambda, double l2_lambda) {
  CheckBagArgs(bags, time_bins.size());
  if (censored.size() != bags.size()) {
    throw Error(ErrorKind::kArgument, "bag and censoring counts differ");
  }
  const Offsets o(arch);
  const AbmilWeights p(arch, weights.data(), o);
  LossAndGradient out;
  out.gradient.assign(arch.ParameterCount(), 0.0);
  const double scale = 1.0 / static_cast<double>(bags.size());
  for (size_t b = 0; b < bags.size(); ++b) {
    out.loss += scale * SurvivalTerm(p, o, bags[b].instances, time_bins[b],
                                     censored[b], scale, out.gradient.data());
  }
  out.loss += AddRegularization(weights, l1_lambda, l2_lambda, out.gradient);
  return out;
}

std::vector<double> SurvivalBinEdges(std::span<const double> times,
                                     const std::vector<bool>& censored, int bins) {
  std::vector<double> events;
  for (size_t i = 0; i < times.size(); ++i) {
    if (!censored[i]) events.push_back(times[i]);
  }
  if (events.empty()) {
    throw Error(ErrorKind::kDegenerateData, "every sample is censored");
  }
  std::sort(events.begin(), events.end());
  std::vector<double> edges;
  const double last = static_cast<double>(events.size() - 1);
  for (int j = 1; j < bins; ++j) {
    const double pos = last * j / bins;
    const auto lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = std::min(lo + 1, events.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    edges.push_back(events[lo] + frac * (events[hi] - events[lo]));
  }
  return edges;
}

int TimeBin(double time, const std::vector<double>& edges) {
  return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), time) -
                          edges.begin());
}

GradientAccumulator::GradientAccumulator(size_t num_params, int window)
    : sum_(num_params, 0.0), window_(window) {}

void GradientAccumulator::Add(std::span<const double> gradient) {
  for (size_t i = 0; i < sum_.size(); ++i) sum_[i] += gradient[i];
  ++count_;
}

std::vector<double> GradientAccumulator::Take() {
  std::vector<double> mean(sum_.size());
  for (size_t i = 0; i < sum_.size(); ++i) {
    mean[i] = sum_[i] / count_;
    sum_[i] = 0.0;
  }
  count_ = 0;
  return mean;
}

TrainedHead TrainMilClassifier(std::span<const Bag> bags,
                               std::span<const int> labels,
                               const MilConfig& config,
                               std::vector<std::string> classes) {
  config.Validate();
  CheckBagArgs(bags, labels.size());
  std::vector<size_t> per_class(config.num_classes, 0);
  for (int l : labels) {
    if (l < 0 || l >= config.num_classes) {
      throw Error(ErrorKind::kArgument, "label out of range");
    }
    ++per_class[l];
  }
  for (int c = 0; c < config.num_classes; ++c) {
    if (per_class[c] == 0) {
      throw Error(ErrorKind::kArgument,
                  "class " + std::to_string(c) + " has no bags");
    }
  }
  TrainedHead head;
  head.arch = config.Architecture();
  head.classes = std::move(classes);
  head.seed = config.seed;
  head.weights = InitAbmilWeights(head.arch, DeriveSeed(config.seed, 0));
  Rng shuffle_rng(DeriveSeed(config.seed, 1));
  Adam adam(head.weights.size());
  const Offsets o(head.arch);

  std::vector<size_t> order(bags.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<double> grad(head.weights.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr =
        CosineRestartLr(config.learning_rate, epoch, config.restart_period);
    shuffle_rng.Shuffle(std::span(order));
    double epoch_loss = 0.0;
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      const size_t end = std::min(order.size(), start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      const AbmilWeights p(head.arch, head.weights.data(), o);
      double loss = 0.0;
      for (size_t i = start; i < end; ++i) {
        loss += ClassifierTerm(p, o, bags[order[i]].instances,
                               labels[order[i]], scale, grad.data());
      }
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::kDivergence,
                    "non-finite loss in epoch " + std::to_string(epoch));
      }
      adam.Step(head.weights, grad, lr);
      epoch_loss += loss;
    }
    head.epoch_losses.push_back(epoch_loss / order.size());
  }
  head.epochs_run = config.epochs;
  head.final_loss = head.epoch_losses.back();
  head.Validate();
  return head;
}

TrainedHead TrainMilSurvival(std::span<const Bag> bags,
                             std::span<const double> times,
                             const std::vector<bool>& censored,
                             const SurvivalConfig& config) {
  config.Validate();
  CheckBagArgs(bags, times.size());
  if (censored.size() != bags.size()) {
    throw Error(ErrorKind::kArgument, "bag and censoring counts differ");
  }
  for (double t : times) {
    if (!(t >= 0.0)) throw Error(ErrorKind::kArgument, "negative survival time");
  }
  TrainedHead head;
  head.arch = config.Architecture();
  head.seed = config.seed;
  head.bin_edges = SurvivalBinEdges(times, censored, config.bins);
  std::vector<int> bin(bags.size());
  for (size_t b = 0; b < bags.size(); ++b) bin[b] = TimeBin(times[b], head.bin_edges);

  head.weights = InitAbmilWeights(head.arch, DeriveSeed(config.seed, 0));
  Rng shuffle_rng(DeriveSeed(config.seed, 1));
  Adam adam(head.weights.size());
  GradientAccumulator window(head.weights.size(), config.grad_accumulation);
  const Offsets o(head.arch);

  std::vector<size_t> order(bags.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<double> grad(head.weights.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr =
        CosineRestartLr(config.learning_rate, epoch, config.restart_period);
    shuffle_rng.Shuffle(std::span(order));
    double epoch_loss = 0.0;
    for (size_t b : order) {
      std::fill(grad.begin(), grad.end(), 0.0);
      const AbmilWeights p(head.arch, head.weights.data(), o);
      double loss = SurvivalTerm(p, o, bags[b].instances, bin[b], censored[b],
                                 1.0, grad.data());
      loss += AddRegularization(head.weights, config.l1_lambda,
                                config.l2_lambda, grad);
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::kDivergence,
                    "non-finite loss in epoch " + std::to_string(epoch));
      }
      epoch_loss += loss;
      window.Add(grad);
      if (window.Ready()) adam.Step(head.weights, window.Take(), lr);
    }
    if (!window.Empty()) adam.Step(head.weights, window.Take(), lr);
    head.epoch_losses.push_back(epoch_loss / order.size());
  }
  head.epochs_run = config.epochs;
  head.final_loss = head.epoch_losses.back();
  head.Validate();
  return head;
}

MilPrediction PredictMil(const TrainedHead& head, std::span<const Bag> bags) {
  if (head.arch.kind != HeadKind::kAbmilClassifier) {
    throw Error(ErrorKind::kArgument, "not an ABMIL classifier head");
  }
  const Offsets o(head.arch);
  const AbmilWeights p(head.arch, head.weights.data(), o);
  MilPrediction out;
  out.probabilities.resize(bags.size(), head.arch.num_outputs);
  for (size_t b = 0; b < bags.size(); ++b) {
    auto f = Forward(p, bags[b].instances);
    const double m = f.logits.maxCoeff();
    Eigen::VectorXd probs = (f.logits.array() - m).exp().matrix();
    probs /= probs.sum();
    out.probabilities.row(b) = probs.transpose();
    Eigen::Index arg;
    probs.maxCoeff(&arg);
    out.labels.push_back(static_cast<int>(arg));
    out.attention.push_back(std::move(f.attention));
  }
  return out;
}

SurvivalPrediction PredictSurvival(const TrainedHead& head,
                                   std::span<const Bag> bags) {
  if (head.arch.kind != HeadKind::kAbmilSurvival) {
    throw Error(ErrorKind::kArgument, "not a survival head");
  }
  const Offsets o(head.arch);
  const AbmilWeights p(head.arch, head.weights.data(), o);
  const int bins = head.arch.num_outputs;
  SurvivalPrediction out;
  out.hazards.resize(bags.size(), bins);
  out.survival.resize(bags.size(), bins);
  for (size_t b = 0; b < bags.size(); ++b) {
    const auto f = Forward(p, bags[b].instances);
    double s = 1.0, risk = 0.0;
    for (int j = 0; j < bins; ++j) {
      const double h = Sigmoid(f.logits(j));
      s *= 1.0 - h;
      out.hazards(b, j) = h;
      out.survival(b, j) = s;
      risk -= s;
    }
    out.risk.push_back(risk);
  }
  return out;
}

}  // namespace pfmaudit
