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

#include "pfmaudit/head.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include "pfmaudit/error.h"

namespace pfmaudit {

std::string_view HeadKindName(HeadKind kind) {
  switch (kind) {
    case HeadKind::kProbeMlp: return "probe_mlp";
    case HeadKind::kAbmilClassifier: return "abmil_classifier";
    case HeadKind::kAbmilSurvival: return "abmil_survival";
  }
  return "?";
}

size_t HeadArchitecture::ParameterCount() const {
  const size_t d = input_dim, h = hidden_dim, k = num_outputs;
  switch (kind) {
    case HeadKind::kProbeMlp:
      return h * d + h + k * h + k;
    case HeadKind::kAbmilClassifier:
    case HeadKind::kAbmilSurvival:
      return h * d + h + h + k * d + k;
  }
  return 0;
}

void HeadArchitecture::Validate() const {
  if (input_dim <= 0 || hidden_dim <= 0 || num_outputs <= 0) {
    throw Error(ErrorKind::kArgument, "head dimensions must be positive");
  }
  if (kind != HeadKind::kAbmilSurvival && num_outputs < 2) {
    throw Error(ErrorKind::kArgument, "classifier heads need at least 2 classes");
  }
}

void TrainedHead::Validate() const {
  arch.Validate();
  if (weights.size() != arch.ParameterCount()) {
    throw Error(ErrorKind::kValidation,
                "head has " + std::to_string(weights.size()) +
                    " weights, architecture needs " +
                    std::to_string(arch.ParameterCount()));
  }
  if (!std::all_of(weights.begin(), weights.end(),
                   [](double w) { return std::isfinite(w); })) {
    throw Error(ErrorKind::kValidation, "head has non-finite weights");
  }
}

namespace {

constexpr char kHeadMagic[4] = {'Q', 'H', 'E', 'D'};
constexpr uint8_t kHeadVersion = 1;

class Writer {
 public:
  template <typename T>
  void Put(T value) {
    uint8_t b[sizeof(T)];
    std::memcpy(b, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(std::begin(b), std::end(b));
    }
    out.insert(out.end(), std::begin(b), std::end(b));
  }
  void PutString(const std::string& s) {
    Put<uint32_t>(static_cast<uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  std::vector<uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> bytes) : bytes_(bytes) {}
  template <typename T>
  T Get() {
    Need(sizeof(T));
    uint8_t b[sizeof(T)];
    std::memcpy(b, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(std::begin(b), std::end(b));
    }
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, b, sizeof(T));
    return value;
  }
  std::string GetString() {
    const auto n = Get<uint32_t>();
    Need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool AtEnd() const { return pos_ == bytes_.size(); }

 private:
  void Need(size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorKind::kTruncation, "head blob is truncated");
    }
  }
  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<uint8_t> EncodeHead(const TrainedHead& head) {
  head.Validate();
  Writer w;
  w.out.insert(w.out.end(), std::begin(kHeadMagic), std::end(kHeadMagic));
  w.Put<uint8_t>(kHeadVersion);
  w.Put<uint8_t>(static_cast<uint8_t>(head.arch.kind));
  w.Put<uint32_t>(head.arch.input_dim);
  w.Put<uint32_t>(head.arch.hidden_dim);
  w.Put<uint32_t>(head.arch.num_outputs);
  w.Put<uint32_t>(static_cast<uint32_t>(head.classes.size()));
  for (const auto& c : head.classes) w.PutString(c);
  w.Put<uint32_t>(static_cast<uint32_t>(head.bin_edges.size()));
  for (double e : head.bin_edges) w.Put<double>(e);
  w.Put<double>(head.final_loss);
  w.Put<uint32_t>(head.epochs_run);
  w.Put<uint64_t>(head.seed);
  w.Put<uint32_t>(static_cast<uint32_t>(head.epoch_losses.size()));
  for (double l : head.epoch_losses) w.Put<double>(l);
  w.Put<uint64_t>(head.weights.size());
  for (double x : head.weights) w.Put<double>(x);
  return std::move(w.out);
}

TrainedHead DecodeHead(std::span<const uint8_t> bytes) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kHeadMagic, 4) != 0) {
    throw Error(ErrorKind::kFormat, "not a head blob (bad magic)");
  }
  if (bytes[4] != kHeadVersion) {
    throw Error(ErrorKind::kFormat,
                "unsupported head version " + std::to_string(bytes[4]));
  }
  Reader r(bytes.subspan(5));
  TrainedHead head;
  const auto kind = r.Get<uint8_t>();
  if (kind < 1 || kind > 3) throw Error(ErrorKind::kFormat, "unknown head kind");
  head.arch.kind = static_cast<HeadKind>(kind);
  head.arch.input_dim = static_cast<int>(r.Get<uint32_t>());
  head.arch.hidden_dim = static_cast<int>(r.Get<uint32_t>());
  head.arch.num_outputs = static_cast<int>(r.Get<uint32_t>());
  head.classes.resize(r.Get<uint32_t>());
  for (auto& c : head.classes) c = r.GetString();
  head.bin_edges.resize(r.Get<uint32_t>());
  for (auto& e : head.bin_edges) e = r.Get<double>();
  head.final_loss = r.Get<double>();
  head.epochs_run = static_cast<int>(r.Get<uint32_t>());
  head.seed = r.Get<uint64_t>();
  head.epoch_losses.resize(r.Get<uint32_t>());
  for (auto& l : head.epoch_losses) l = r.Get<double>();
  const auto n = r.Get<uint64_t>();
  if (n != head.arch.ParameterCount()) {
    throw Error(ErrorKind::kFormat, "weight count does not match architecture");
  }
  head.weights.resize(n);
  for (auto& x : head.weights) x = r.Get<double>();
  if (!r.AtEnd()) throw Error(ErrorKind::kFormat, "trailing bytes in head blob");
  head.Validate();
  return head;
}

void WriteHead(const TrainedHead& head, const std::filesystem::path& path) {
  const auto bytes = EncodeHead(head);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

TrainedHead ReadHead(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return DecodeHead(bytes);
}

Adam::Adam(size_t num_params, double beta1, double beta2, double epsilon)
    : beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon),
      m_(num_params, 0.0),
      v_(num_params, 0.0) {}

void Adam::Step(std::span<double> params, std::span<const double> grad,
                double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + epsilon_);
  }
}

double CosineRestartLr(double base_lr, int epoch, int period) {
  const double phase = static_cast<double>(epoch % period) / period;
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
}

void InitUniformFanIn(std::span<double> weights, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& w : weights) w = (2.0 * rng.Uniform() - 1.0) * bound;
}

}  // namespace pfmaudit
