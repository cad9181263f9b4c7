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

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "pfmaudit/cohort.h"
#include "pfmaudit/error.h"
#include "pfmaudit/rng.h"

namespace pfmaudit {
namespace {

namespace fs = std::filesystem;

const fs::path kData = PFMAUDIT_TEST_DATA;

std::vector<uint8_t> ReadBytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ErrorKind KindOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no pfmaudit::Error thrown";
  return ErrorKind::kPlan;
}

EmbeddingMatrix GoldenMatrix() {
  EmbeddingMatrix m;
  m.dim = 4;
  m.count = 3;
  m.data = {0.0f, 1.0f,     -2.5f,    3.25f, 1e-3f, -0.0f,
            65504.0f, -1.5f, 0.1f,   0.2f,  0.3f,  0.4f};
  return m;
}

TEST(Qemb, GoldenFileIs65BytesAndMatchesEncoder) {
  const auto golden = ReadBytes(kData / "golden_3x4.qemb");
  ASSERT_EQ(golden.size(), 65u);
  EXPECT_EQ(EncodeQemb(GoldenMatrix()), golden);
}

TEST(Qemb, GoldenFileDecodesBitExactly) {
  const auto m = ReadQemb(kData / "golden_3x4.qemb");
  const auto want = GoldenMatrix();
  ASSERT_EQ(m.dim, 4u);
  ASSERT_EQ(m.count, 3u);
  ASSERT_EQ(m.data.size(), want.data.size());
  EXPECT_EQ(std::memcmp(m.data.data(), want.data.data(), 48), 0);
  EXPECT_TRUE(std::signbit(m.data[5]));
}

TEST(Qemb, RoundTripsThousandRowMatrixBitExactly) {
  Rng rng(7);
  EmbeddingMatrix m;
  m.dim = 37;
  m.count = 1000;
  m.data.resize(m.dim * m.count);
  for (auto& v : m.data) v = static_cast<float>(rng.Normal() * 1e3);
  const fs::path path = fs::temp_directory_path() / "pfmaudit_roundtrip.qemb";
  WriteQemb(m, path);
  EXPECT_EQ(fs::file_size(path), kQembHeaderBytes + 4 * m.dim * m.count);
  const auto back = ReadQemb(path);
  EXPECT_EQ(back.dim, m.dim);
  EXPECT_EQ(back.count, m.count);
  EXPECT_EQ(std::memcmp(back.data.data(), m.data.data(), m.data.size() * 4), 0);
  fs::remove(path);
}

TEST(Qemb, HeaderOnlyFileHoldsZeroRows) {
  EmbeddingMatrix m;
  m.dim = 8;
  const auto bytes = EncodeQemb(m);
  EXPECT_EQ(bytes.size(), kQembHeaderBytes);
  EXPECT_EQ(DecodeQemb(bytes).count, 0u);
}

TEST(Qemb, RejectsMalformedBytes) {
  const auto good = EncodeQemb(GoldenMatrix());
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(KindOf([&] { DecodeQemb(bad_magic); }), ErrorKind::kFormat);
  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_EQ(KindOf([&] { DecodeQemb(bad_version); }), ErrorKind::kFormat);
  const std::vector<uint8_t> truncated(good.begin(), good.end() - 1);
  EXPECT_EQ(KindOf([&] { DecodeQemb(truncated); }), ErrorKind::kTruncation);
  const std::vector<uint8_t> short_header(good.begin(), good.begin() + 10);
  EXPECT_EQ(KindOf([&] { DecodeQemb(short_header); }), ErrorKind::kTruncation);
  EXPECT_EQ(KindOf([] { ReadQemb("/nonexistent/x.qemb"); }), ErrorKind::kIo);
}

TEST(Qemb, NonFiniteRowsAreReported) {
  auto m = GoldenMatrix();
  m.data[6] = std::numeric_limits<float>::quiet_NaN();
  m.data[9] = std::numeric_limits<float>::infinity();
  EXPECT_EQ(m.NonFiniteRows(), (std::vector<size_t>{1, 2}));
  EXPECT_EQ(KindOf([&] { m.Validate(); }), ErrorKind::kValidation);
}

TEST(Manifest, GoldenManifestLoadsWithFirstAppearanceVocab) {
  const auto cohort = LoadManifest(kData / "golden_manifest.csv");
  ASSERT_EQ(cohort.size(), 3u);
  EXPECT_EQ(cohort.vocab(kClassLabel), (std::vector<std::string>{"tumor", "normal"}));
  EXPECT_EQ(cohort.vocab(kInstitution), (std::vector<std::string>{"instA", "instB"}));
  EXPECT_EQ(cohort.vocab(kCensored), (std::vector<std::string>{"0", "1"}));
  EXPECT_EQ(cohort.Labels(kGender), (std::vector<int>{0, 1, -1}));
  EXPECT_EQ(cohort.RowOf("g2"), 2u);
  EXPECT_FALSE(cohort.records()[2].survival_days.has_value());
  EXPECT_DOUBLE_EQ(*cohort.records()[0].survival_days, 120.5);
}

TEST(Manifest, FormatParsesBackIdentically) {
  const auto cohort = LoadManifest(kData / "golden_manifest.csv");
  const auto text = FormatManifest(cohort);
  EXPECT_EQ(FormatManifest(ParseManifest(text)), text);
}

TEST(Manifest, ValidatePassesOnGoldenFixture) {
  const auto report = ValidateCohort(ReadQemb(kData / "golden_3x4.qemb"),
                                     LoadManifest(kData / "golden_manifest.csv"));
  EXPECT_TRUE(report.passed);
  EXPECT_TRUE(report.Findings().empty());
  EXPECT_NEAR(report.missingness.at("gender"), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(report.institution_counts.at("instA"), 2u);
}

TEST(Manifest, ValidateFlagsCountMismatchAndNonFiniteRows) {
  auto m = GoldenMatrix();
  m.data[0] = std::numeric_limits<float>::quiet_NaN();
  const auto cohort = ParseManifest(
      "sample_id,patient_id,slide_id,institution,level\n"
      "a,p,w,i,slide\nb,p,w2,i,slide\n");
  const auto report = ValidateCohort(m, cohort);
  EXPECT_FALSE(report.passed);
  ASSERT_TRUE(report.count_mismatch.has_value());
  EXPECT_EQ(report.count_mismatch->first, 3u);
  EXPECT_EQ(report.count_mismatch->second, 2u);
  EXPECT_EQ(report.non_finite_rows, (std::vector<size_t>{0}));
  EXPECT_EQ(report.Findings().size(), 2u);
}

TEST(Manifest, RejectsSchemaAndIntegrityViolations) {
  const std::string head = "sample_id,patient_id,slide_id,institution,level";
  EXPECT_EQ(KindOf([] { ParseManifest("sample_id,patient_id\na,b\n"); }),
            ErrorKind::kSchema);
  EXPECT_EQ(KindOf([&] { ParseManifest(head + "\na,p,w,i\n"); }), ErrorKind::kSchema);
  EXPECT_EQ(KindOf([&] { ParseManifest(head + "\na,p,w,i,slide\na,p,w,i,slide\n"); }),
            ErrorKind::kIntegrity);
  EXPECT_EQ(KindOf([&] { ParseManifest(head + "\na,p,,i,patch\n"); }),
            ErrorKind::kIntegrity);
  EXPECT_EQ(KindOf([&] { ParseManifest(head + ",gender\na,p,w,i,slide,other\n"); }),
            ErrorKind::kVocabulary);
  EXPECT_EQ(KindOf([&] { ParseManifest(head + ",survival_days\na,p,w,i,slide,10\n"); }),
            ErrorKind::kIntegrity);
  EXPECT_EQ(KindOf([&] {
              ParseManifest(head + ",age_group\na,p,w,i,slide,1\nb,p,w,i,slide,2\n"
                                   "c,p,w,i,slide,3\nd,p,w,i,slide,4\ne,p,w,i,slide,5\n");
            }),
            ErrorKind::kVocabulary);
  EXPECT_EQ(KindOf([] { LoadManifest("/nonexistent/m.csv"); }), ErrorKind::kIo);
}

TEST(Manifest, SlideLevelRowDefaultsSlideIdToSampleId) {
  const auto cohort = ParseManifest(
      "sample_id,patient_id,slide_id,institution,level\nabc,p,,i,slide\n");
  EXPECT_EQ(cohort.records()[0].slide_id, "abc");
}

TEST(Errors, ExitCodesFollowTheDocumentedMapping) {
  EXPECT_EQ(ExitCodeFor(ErrorKind::kInfeasible), 3);
  EXPECT_EQ(ExitCodeFor(ErrorKind::kSchema), 2);
  EXPECT_EQ(ExitCodeFor(ErrorKind::kArgument), 2);
}

}  // namespace
}  // namespace pfmaudit
