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

#ifndef PFMAUDIT_RNG_H_
#define PFMAUDIT_RNG_H_

#include <array>
#include <cstdint>
#include <span>
#include <utility>

namespace pfmaudit {

// xoshiro256** 1.0, seeded through splitmix64. Every sampling routine here
// is defined in terms of NextU64 only; streams are identical across
// compilers and standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t NextU64();

  // Uniform in [0, 1) with 53 random bits.
  double Uniform();

  // Uniform integer in [0, bound). bound must be > 0.
  uint64_t UniformInt(uint64_t bound);

  // Standard normal via Box-Muller (one draw per call).
  double Normal();

  double Exponential(double rate);

  template <typename T>
  void Shuffle(std::span<T> items) {
    for (size_t i = items.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(UniformInt(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::array<uint64_t, 4> state_;
};

// Derives an independent child seed; every consumer draws from its own
// derived stream.
uint64_t DeriveSeed(uint64_t seed, uint64_t stream);

}  // namespace pfmaudit

#endif  // PFMAUDIT_RNG_H_
