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

// On-disk cohort containers: the QEMB embedding matrix and the manifest CSV
// that describes each embedding row.
//
// QEMB v1 layout (all integers and floats little-endian):
//
//   offset 0   "QEMB"         4 bytes magic
//   offset 4   0x01           version
//   offset 5   dim            uint32
//   offset 9   count          uint64
//   offset 17  data           count * dim float32, row-major
//
// The file is exactly 17 + 4 * count * dim bytes long.

#ifndef PFMAUDIT_COHORT_H_
#define PFMAUDIT_COHORT_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pfmaudit {

inline constexpr char kQembMagic[4] = {'Q', 'E', 'M', 'B'};
inline constexpr uint8_t kQembVersion = 1;
inline constexpr size_t kQembHeaderBytes = 17;

struct EmbeddingMatrix {
  uint32_t dim = 0;
  uint64_t count = 0;
  std::vector<float> data;  // count * dim, row-major

  std::span<const float> row(size_t i) const {
    return {data.data() + i * dim, dim};
  }

  // Rows containing a NaN or Inf, in ascending order.
  std::vector<size_t> NonFiniteRows() const;

  // Throws kValidation when the shape is inconsistent or any value is
  // non-finite.
  void Validate() const;
};

void WriteQemb(const EmbeddingMatrix& matrix,
               const std::filesystem::path& path);
EmbeddingMatrix ReadQemb(const std::filesystem::path& path);

// In-memory forms of the same encoding.
std::vector<uint8_t> EncodeQemb(const EmbeddingMatrix& matrix);
EmbeddingMatrix DecodeQemb(std::span<const uint8_t> bytes);

enum class Level { kPatch, kSlide };

std::string_view LevelName(Level level);

struct SampleRecord {
  std::string sample_id;
  std::string patient_id;
  std::string slide_id;
  std::string institution;
  std::optional<std::string> class_label;
  std::optional<std::string> gender;
  std::optional<std::string> race;
  std::optional<std::string> age_group;
  std::optional<double> survival_days;
  std::optional<bool> censored;
  Level level = Level::kPatch;
};

// Attribute names accepted wherever an attribute is selected by name.
inline constexpr std::string_view kClassLabel = "class_label";
inline constexpr std::string_view kInstitution = "institution";
inline constexpr std::string_view kGender = "gender";
inline constexpr std::string_view kRace = "race";
inline constexpr std::string_view kAgeGroup = "age_group";
// Survival censoring status viewed as a categorical attribute ("1"/"0").
inline constexpr std::string_view kCensored = "censored";

inline constexpr size_t kAgeGroupCardinality = 4;

class CohortManifest {
 public:
  CohortManifest() = default;

  // Builds vocabularies in first-appearance order and checks every record
  // invariant. Throws kIntegrity / kVocabulary.
  explicit CohortManifest(std::vector<SampleRecord> records);

  const std::vector<SampleRecord>& records() const { return records_; }
  size_t size() const { return records_.size(); }

  // Ordered categories for one of the categorical attributes; empty when the
  // attribute is never observed.
  const std::vector<std::string>& vocab(std::string_view attribute) const;
  const std::map<std::string, std::vector<std::string>, std::less<>>& vocab()
      const {
    return vocab_;
  }

  // Category value of `attribute` for record i, if present.
  std::optional<std::string_view> Value(size_t i,
                                        std::string_view attribute) const;

  // Index of record i's value within vocab(attribute), or -1 when absent.
  int CategoryIndex(size_t i, std::string_view attribute) const;

  // Per-row category indices (-1 for absent).
  std::vector<int> Labels(std::string_view attribute) const;

  // Row index for a sample id. Throws kArgument for unknown ids.
  size_t RowOf(std::string_view sample_id) const;

 private:
  std::vector<SampleRecord> records_;
  std::map<std::string, std::vector<std::string>, std::less<>> vocab_;
  std::map<std::string, size_t, std::less<>> row_of_;
};

// Parses the manifest CSV (RFC 4180 quoting; empty cell = absent).
CohortManifest LoadManifest(const std::filesystem::path& path);
CohortManifest ParseManifest(std::string_view csv_text);

std::string FormatManifest(const CohortManifest& manifest);
void WriteManifest(const CohortManifest& manifest,
                   const std::filesystem::path& path);

struct ValidationReport {
  bool passed = true;
  std::optional<std::pair<uint64_t, size_t>> count_mismatch;  // rows, records
  std::vector<size_t> non_finite_rows;
  // Fraction of records lacking each optional attribute.
  std::map<std::string, double> missingness;
  std::map<std::string, size_t> institution_counts;
  std::map<std::string, size_t> class_counts;

  std::vector<std::string> Findings() const;
};

ValidationReport ValidateCohort(const EmbeddingMatrix& matrix,
                                const CohortManifest& manifest);

}  // namespace pfmaudit

#endif  // PFMAUDIT_COHORT_H_
