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

#include "pfmaudit/cohort.h"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "pfmaudit/error.h"
#include "pfmaudit/text.h"

namespace pfmaudit {
namespace {

template <typename T>
void PutLe(std::vector<uint8_t>& out, T value) {
  uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(std::begin(bytes), std::end(bytes));
  }
  out.insert(out.end(), std::begin(bytes), std::end(bytes));
}

template <typename T>
T GetLe(const uint8_t* p) {
  uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(std::begin(bytes), std::end(bytes));
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

const std::vector<std::string>& EmptyVocab() {
  static const std::vector<std::string> kEmpty;
  return kEmpty;
}

const std::set<std::string_view> kGenderValues = {"male", "female"};
const std::set<std::string_view> kRaceValues = {"white",
                                                "black_or_african_american"};

}  // namespace

std::vector<size_t> EmbeddingMatrix::NonFiniteRows() const {
  std::vector<size_t> rows;
  const size_t n = std::min<size_t>(count, dim ? data.size() / dim : 0);
  for (size_t i = 0; i < n; ++i) {
    const auto r = row(i);
    if (!std::all_of(r.begin(), r.end(),
                     [](float v) { return std::isfinite(v); })) {
      rows.push_back(i);
    }
  }
  return rows;
}

void EmbeddingMatrix::Validate() const {
  if (dim == 0) throw Error(ErrorKind::kValidation, "dim must be positive");
  if (data.size() != count * static_cast<uint64_t>(dim)) {
    throw Error(ErrorKind::kValidation,
                "data holds " + std::to_string(data.size()) +
                    " values, expected count*dim = " +
                    std::to_string(count * dim));
  }
  const auto bad = NonFiniteRows();
  if (!bad.empty()) {
    throw Error(ErrorKind::kValidation,
                "non-finite value in row " + std::to_string(bad.front()));
  }
}

std::vector<uint8_t> EncodeQemb(const EmbeddingMatrix& matrix) {
  matrix.Validate();
  std::vector<uint8_t> out;
  out.reserve(kQembHeaderBytes + 4 * matrix.data.size());
  out.insert(out.end(), std::begin(kQembMagic), std::end(kQembMagic));
  out.push_back(kQembVersion);
  PutLe<uint32_t>(out, matrix.dim);
  PutLe<uint64_t>(out, matrix.count);
  for (float v : matrix.data) PutLe<float>(out, v);
  return out;
}

EmbeddingMatrix DecodeQemb(std::span<const uint8_t> bytes) {
  if (bytes.size() < kQembHeaderBytes) {
    throw Error(ErrorKind::kTruncation, "file shorter than the QEMB header");
  }
  if (std::memcmp(bytes.data(), kQembMagic, 4) != 0) {
    throw Error(ErrorKind::kFormat, "bad magic, expected \"QEMB\"");
  }
  if (bytes[4] != kQembVersion) {
    throw Error(ErrorKind::kFormat,
                "unsupported QEMB version " + std::to_string(bytes[4]));
  }
  EmbeddingMatrix m;
  m.dim = GetLe<uint32_t>(bytes.data() + 5);
  m.count = GetLe<uint64_t>(bytes.data() + 9);
  if (m.dim == 0) throw Error(ErrorKind::kFormat, "dim must be positive");
  const uint64_t payload = bytes.size() - kQembHeaderBytes;
  if (m.count > payload / 4 / m.dim || payload != 4 * m.count * m.dim) {
    throw Error(ErrorKind::kTruncation,
                "payload is " + std::to_string(payload) + " bytes, header " +
                    "declares " + std::to_string(m.count) + " rows of dim " +
                    std::to_string(m.dim));
  }
  m.data.resize(m.count * m.dim);
  const uint8_t* p = bytes.data() + kQembHeaderBytes;
  for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = GetLe<float>(p + 4 * i);
  m.Validate();
  return m;
}

void WriteQemb(const EmbeddingMatrix& matrix,
               const std::filesystem::path& path) {
  const auto bytes = EncodeQemb(matrix);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

EmbeddingMatrix ReadQemb(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return DecodeQemb(bytes);
}

std::string_view LevelName(Level level) {
  return level == Level::kPatch ? "patch" : "slide";
}

CohortManifest::CohortManifest(std::vector<SampleRecord> records)
    : records_(std::move(records)) {
  auto observe = [this](std::string_view attr, const std::string& value) {
    auto& v = vocab_[std::string(attr)];
    if (std::find(v.begin(), v.end(), value) == v.end()) v.push_back(value);
  };
  for (size_t i = 0; i < records_.size(); ++i) {
    auto& r = records_[i];
    const std::string where = "record " + std::to_string(i) + " (" +
                              r.sample_id + ")";
    if (r.sample_id.empty()) {
      throw Error(ErrorKind::kIntegrity, where + " has an empty sample_id");
    }
    if (!row_of_.emplace(r.sample_id, i).second) {
      throw Error(ErrorKind::kIntegrity,
                  "duplicate sample_id \"" + r.sample_id + "\"");
    }
    if (r.patient_id.empty()) {
      throw Error(ErrorKind::kIntegrity, where + " lacks a patient_id");
    }
    if (r.slide_id.empty()) {
      if (r.level == Level::kPatch) {
        throw Error(ErrorKind::kIntegrity,
                    where + " is patch-level but lacks a slide_id");
      }
      r.slide_id = r.sample_id;
    }
    if (r.institution.empty()) {
      throw Error(ErrorKind::kIntegrity, where + " lacks an institution");
    }
    if (r.survival_days.has_value() != r.censored.has_value()) {
      throw Error(ErrorKind::kIntegrity,
                  where + ": survival_days and censored must be given together");
    }
    if (r.survival_days &&
        (!std::isfinite(*r.survival_days) || *r.survival_days < 0)) {
      throw Error(ErrorKind::kIntegrity,
                  where + ": survival_days must be a non-negative number");
    }
    if (r.gender && !kGenderValues.contains(*r.gender)) {
      throw Error(ErrorKind::kVocabulary,
                  where + ": gender \"" + *r.gender + "\" not in {male, female}");
    }
    if (r.race && !kRaceValues.contains(*r.race)) {
      throw Error(ErrorKind::kVocabulary,
                  where + ": race \"" + *r.race +
                      "\" not in {white, black_or_african_american}");
    }
    observe(kInstitution, r.institution);
    if (r.class_label) observe(kClassLabel, *r.class_label);
    if (r.gender) observe(kGender, *r.gender);
    if (r.race) observe(kRace, *r.race);
    if (r.age_group) observe(kAgeGroup, *r.age_group);
    if (r.censored) observe(kCensored, *r.censored ? "1" : "0");
  }
  if (vocab(kAgeGroup).size() > kAgeGroupCardinality) {
    throw Error(ErrorKind::kVocabulary,
                "age_group has " + std::to_string(vocab(kAgeGroup).size()) +
                    " distinct values, at most 4 allowed");
  }
}

const std::vector<std::string>& CohortManifest::vocab(
    std::string_view attribute) const {
  auto it = vocab_.find(attribute);
  return it == vocab_.end() ? EmptyVocab() : it->second;
}

std::optional<std::string_view> CohortManifest::Value(
    size_t i, std::string_view attribute) const {
  const auto& r = records_.at(i);
  auto opt = [](const std::optional<std::string>& v)
      -> std::optional<std::string_view> {
    if (!v) return std::nullopt;
    return std::string_view(*v);
  };
  if (attribute == kInstitution) return std::string_view(r.institution);
  if (attribute == kClassLabel) return opt(r.class_label);
  if (attribute == kGender) return opt(r.gender);
  if (attribute == kRace) return opt(r.race);
  if (attribute == kAgeGroup) return opt(r.age_group);
  if (attribute == kCensored) {
    if (!r.censored) return std::nullopt;
    return std::string_view(*r.censored ? "1" : "0");
  }
  throw Error(ErrorKind::kArgument,
              "unknown attribute \"" + std::string(attribute) + "\"");
}

int CohortManifest::CategoryIndex(size_t i, std::string_view attribute) const {
  const auto value = Value(i, attribute);
  if (!value) return -1;
  const auto& v = vocab(attribute);
  return static_cast<int>(std::find(v.begin(), v.end(), *value) - v.begin());
}

std::vector<int> CohortManifest::Labels(std::string_view attribute) const {
  std::vector<int> labels(records_.size());
  for (size_t i = 0; i < records_.size(); ++i) {
    labels[i] = CategoryIndex(i, attribute);
  }
  return labels;
}

size_t CohortManifest::RowOf(std::string_view sample_id) const {
  auto it = row_of_.find(sample_id);
  if (it == row_of_.end()) {
    throw Error(ErrorKind::kArgument,
                "unknown sample_id \"" + std::string(sample_id) + "\"");
  }
  return it->second;
}

namespace {

const std::vector<std::string> kRequiredColumns = {
    "sample_id", "patient_id", "slide_id", "institution", "level"};
const std::vector<std::string> kAllColumns = {
    "sample_id", "patient_id", "slide_id",  "institution",   "level",
    "class_label", "gender",   "race",      "age_group",     "survival_days",
    "censored"};

bool ParseBool(std::string_view s, bool& out) {
  if (s == "1" || s == "true" || s == "True" || s == "TRUE") {
    out = true;
    return true;
  }
  if (s == "0" || s == "false" || s == "False" || s == "FALSE") {
    out = false;
    return true;
  }
  return false;
}

}  // namespace

CohortManifest ParseManifest(std::string_view csv_text) {
  const auto rows = ParseCsv(csv_text);
  if (rows.empty()) throw Error(ErrorKind::kSchema, "manifest has no header");
  const auto& header = rows.front();
  std::map<std::string, size_t> col;
  for (size_t j = 0; j < header.size(); ++j) col[header[j]] = j;
  for (const auto& name : kRequiredColumns) {
    if (!col.contains(name)) {
      throw Error(ErrorKind::kSchema, "missing required column \"" + name + "\"");
    }
  }
  std::vector<SampleRecord> records;
  records.reserve(rows.size() - 1);
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() == 1 && row[0].empty()) continue;  // blank line
    if (row.size() != header.size()) {
      throw Error(ErrorKind::kSchema,
                  "line " + std::to_string(i + 1) + " has " +
                      std::to_string(row.size()) + " cells, header has " +
                      std::to_string(header.size()));
    }
    auto cell = [&](const std::string& name) -> std::optional<std::string> {
      auto it = col.find(name);
      if (it == col.end() || row[it->second].empty()) return std::nullopt;
      return row[it->second];
    };
    SampleRecord r;
    r.sample_id = cell("sample_id").value_or("");
    r.patient_id = cell("patient_id").value_or("");
    r.slide_id = cell("slide_id").value_or("");
    r.institution = cell("institution").value_or("");
    const auto level = cell("level").value_or("");
    if (level == "patch") {
      r.level = Level::kPatch;
    } else if (level == "slide") {
      r.level = Level::kSlide;
    } else {
      throw Error(ErrorKind::kSchema, "line " + std::to_string(i + 1) +
                                          ": level must be patch or slide");
    }
    r.class_label = cell("class_label");
    r.gender = cell("gender");
    r.race = cell("race");
    r.age_group = cell("age_group");
    if (auto s = cell("survival_days")) {
      double v = 0;
      if (!ParseDouble(*s, v)) {
        throw Error(ErrorKind::kSchema, "line " + std::to_string(i + 1) +
                                            ": survival_days is not a number");
      }
      r.survival_days = v;
    }
    if (auto s = cell("censored")) {
      bool b = false;
      if (!ParseBool(*s, b)) {
        throw Error(ErrorKind::kSchema, "line " + std::to_string(i + 1) +
                                            ": censored must be 0/1");
      }
      r.censored = b;
    }
    records.push_back(std::move(r));
  }
  return CohortManifest(std::move(records));
}

CohortManifest LoadManifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseManifest(ss.str());
}

std::string FormatManifest(const CohortManifest& manifest) {
  std::string out;
  std::vector<std::string> cells;
  auto emit = [&out](const std::vector<std::string>& row) {
    for (size_t j = 0; j < row.size(); ++j) {
      if (j) out += ',';
      out += CsvEscape(row[j]);
    }
    out += '\n';
  };
  emit(kAllColumns);
  for (const auto& r : manifest.records()) {
    emit({r.sample_id, r.patient_id, r.slide_id, r.institution,
          std::string(LevelName(r.level)), r.class_label.value_or(""),
          r.gender.value_or(""), r.race.value_or(""), r.age_group.value_or(""),
          r.survival_days ? FormatDouble(*r.survival_days) : "",
          r.censored ? (*r.censored ? "1" : "0") : ""});
  }
  return out;
}

void WriteManifest(const CohortManifest& manifest,
                   const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  out << FormatManifest(manifest);
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

std::vector<std::string> ValidationReport::Findings() const {
  std::vector<std::string> findings;
  if (count_mismatch) {
    findings.push_back("count mismatch: embeddings have " +
                       std::to_string(count_mismatch->first) +
                       " rows, manifest has " +
                       std::to_string(count_mismatch->second) + " records");
  }
  for (size_t r : non_finite_rows) {
    findings.push_back("non-finite values in row " + std::to_string(r));
  }
  return findings;
}

ValidationReport ValidateCohort(const EmbeddingMatrix& matrix,
                                const CohortManifest& manifest) {
  ValidationReport report;
  if (matrix.count != manifest.size()) {
    report.count_mismatch = {matrix.count, manifest.size()};
  }
  report.non_finite_rows = matrix.NonFiniteRows();
  const size_t n = manifest.size();
  size_t missing_class = 0, missing_gender = 0, missing_race = 0,
         missing_age = 0, missing_survival = 0;
  for (const auto& r : manifest.records()) {
    missing_class += !r.class_label;
    missing_gender += !r.gender;
    missing_race += !r.race;
    missing_age += !r.age_group;
    missing_survival += !r.survival_days;
    ++report.institution_counts[r.institution];
    if (r.class_label) ++report.class_counts[*r.class_label];
  }
  auto frac = [n](size_t k) { return n ? static_cast<double>(k) / n : 0.0; };
  report.missingness["class_label"] = frac(missing_class);
  report.missingness["gender"] = frac(missing_gender);
  report.missingness["race"] = frac(missing_race);
  report.missingness["age_group"] = frac(missing_age);
  report.missingness["survival"] = frac(missing_survival);
  report.passed = !report.count_mismatch && report.non_finite_rows.empty();
  return report;
}

}  // namespace pfmaudit
