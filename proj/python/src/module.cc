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

// Extension module `_pfmaudit`. JSON documents cross the boundary as text;
// the `pfmaudit` package decodes them.

#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "json.hpp"
#include "pfmaudit/audit.h"
#include "pfmaudit/cohort.h"
#include "pfmaudit/error.h"
#include "pfmaudit/metrics.h"
#include "pfmaudit/split.h"
#include "pfmaudit/synth.h"

namespace py = pybind11;

namespace pfmaudit {
namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

EmbeddingMatrix ToMatrix(const FloatArray& array) {
  if (array.ndim() != 2) {
    throw Error(ErrorKind::kArgument, "embeddings must be a 2-D array");
  }
  EmbeddingMatrix m;
  m.count = static_cast<uint64_t>(array.shape(0));
  m.dim = static_cast<uint32_t>(array.shape(1));
  m.data.assign(array.data(), array.data() + array.size());
  return m;
}

FloatArray ToArray(const EmbeddingMatrix& m) {
  FloatArray out({static_cast<py::ssize_t>(m.count), static_cast<py::ssize_t>(m.dim)});
  if (!m.data.empty()) {
    std::memcpy(out.mutable_data(), m.data.data(), m.data.size() * sizeof(float));
  }
  return out;
}

std::string ValidationJson(const EmbeddingMatrix& matrix, const CohortManifest& cohort) {
  const auto report = ValidateCohort(matrix, cohort);
  nlohmann::json doc = {{"passed", report.passed},
                        {"rows", matrix.count},
                        {"dim", matrix.dim},
                        {"records", cohort.size()},
                        {"missingness", report.missingness},
                        {"institution_counts", report.institution_counts},
                        {"class_counts", report.class_counts},
                        {"findings", report.Findings()}};
  return doc.dump();
}

std::string MakeSplit(const std::string& manifest_csv, const std::string& setting,
                      uint64_t seed, const std::string& group_key, double test_fraction,
                      int num_folds, bool drop_infeasible) {
  const auto cohort = ParseManifest(manifest_csv);
  const GroupKey key = ParseGroupKey(group_key);
  SplitOptions options;
  options.num_folds = num_folds;
  options.drop_infeasible = drop_infeasible;
  SplitPlan plan;
  switch (ParseSetting(setting)) {
    case Setting::kIdBaseline:
      plan = MakeIdSplit(cohort, test_fraction, key, seed, kClassLabel, options);
      break;
    case Setting::kOod1:
      plan = MakeOod1(cohort, std::nullopt, std::nullopt, key, seed, options);
      break;
    case Setting::kOod2:
      plan = MakeOod2(cohort, std::nullopt, std::nullopt, key, seed, options);
      break;
    case Setting::kOod3:
      plan = MakeOod3(cohort, std::nullopt, key, seed, options);
      break;
    default:
      throw Error(ErrorKind::kArgument,
                  "baselines come from matched_baseline, not make_split");
  }
  return PlanToJson(plan).dump();
}

py::dict RetrievalDict(const RetrievalResult& r) {
  py::dict acc;
  for (const auto& [k, v] : r.acc_at) acc[py::int_(k)] = v;
  py::dict out;
  out["acc_at"] = acc;
  out["mv_acc_at_5"] = r.mv_acc_at_5;
  out["num_queries"] = r.num_queries;
  return out;
}

std::map<std::string, MetricValue> Groups(const std::map<std::string, std::pair<double, size_t>>& in) {
  std::map<std::string, MetricValue> out;
  for (const auto& [name, vs] : in) {
    out[name] = MetricValue{"accuracy", vs.first, vs.second, std::nullopt};
  }
  return out;
}

}  // namespace
}  // namespace pfmaudit

PYBIND11_MODULE(_pfmaudit, m) {
  using namespace pfmaudit;
  m.doc() = "Audits of frozen pathology embeddings";
  m.attr("__version__") = PFMAUDIT_VERSION;

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error;
  error.call_once_and_store_result([&]() -> py::object {
    return py::exception<Error>(m, "PfmauditError", PyExc_RuntimeError);
  });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const py::object& type = error.get_stored();
      py::object exc = type(py::str(e.what()));
      exc.attr("kind") = std::string(ErrorKindName(e.kind()));
      exc.attr("exit_code") = ExitCodeFor(e.kind());
      PyErr_SetObject(type.ptr(), exc.ptr());
    }
  });

  m.def("encode_qemb", [](const FloatArray& a) {
    const auto bytes = EncodeQemb(ToMatrix(a));
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }, py::arg("embeddings"));
  m.def("decode_qemb", [](const py::bytes& b) {
    const std::string s = b;
    return ToArray(DecodeQemb(std::span(reinterpret_cast<const uint8_t*>(s.data()), s.size())));
  }, py::arg("data"));
  m.def("read_qemb", [](const std::filesystem::path& p) { return ToArray(ReadQemb(p)); },
        py::arg("path"));
  m.def("write_qemb",
        [](const std::filesystem::path& p, const FloatArray& a) { WriteQemb(ToMatrix(a), p); },
        py::arg("path"), py::arg("embeddings"));
  m.def("normalize_manifest",
        [](const std::string& csv) { return FormatManifest(ParseManifest(csv)); },
        py::arg("csv_text"));
  m.def("validate_json",
        [](const std::filesystem::path& embeddings, const std::filesystem::path& manifest) {
          return ValidationJson(ReadQemb(embeddings), LoadManifest(manifest));
        },
        py::arg("embeddings"), py::arg("manifest"));

  m.def("generate_cohort",
        [](const std::string& spec_json) {
          const auto c = GenerateCohort(SpecFromJson(nlohmann::json::parse(spec_json)));
          return py::make_tuple(ToArray(c.matrix), FormatManifest(c.manifest),
                                GroundTruthToJson(c.truth).dump());
        },
        py::arg("spec_json"));
  m.def("write_synth_cohort",
        [](const std::string& spec_json, const std::filesystem::path& out) {
          WriteSynthCohort(GenerateCohort(SpecFromJson(nlohmann::json::parse(spec_json))), out);
        },
        py::arg("spec_json"), py::arg("out_dir"));

  m.def("make_split", &MakeSplit, py::arg("manifest_csv"), py::arg("setting"),
        py::arg("seed") = 0, py::arg("group_key") = "patient", py::arg("test_fraction") = 0.2,
        py::arg("num_folds") = kDefaultFolds, py::arg("drop_infeasible") = false);
  m.def("matched_baseline",
        [](const std::string& manifest_csv, const std::string& plan_json, uint64_t seed) {
          return PlanToJson(MakeMatchedBaseline(PlanFromJson(nlohmann::json::parse(plan_json)),
                                                ParseManifest(manifest_csv), seed))
              .dump();
        },
        py::arg("manifest_csv"), py::arg("plan_json"), py::arg("seed") = 0);

  m.def("accuracy",
        [](const std::vector<int>& pred, const std::vector<int>& truth) {
          return Accuracy(pred, truth).value;
        },
        py::arg("pred"), py::arg("truth"));
  m.def("macro_f1",
        [](const std::vector<int>& pred, const std::vector<int>& truth, int k) {
          return MacroF1(pred, truth, k).value;
        },
        py::arg("pred"), py::arg("truth"), py::arg("num_classes"));
  m.def("leakage_score",
        [](double acc, int k) { return LeakageScore({"accuracy", acc, 1, std::nullopt}, k); },
        py::arg("accuracy"), py::arg("num_classes"));
  m.def("degradation",
        [](double baseline, double ood) {
          const auto d = ComputeDegradation({"m", baseline, 1, std::nullopt},
                                            {"m", ood, 1, std::nullopt});
          return py::make_tuple(d.absolute, d.relative);
        },
        py::arg("baseline"), py::arg("ood"));
  m.def("subgroup_gap",
        [](const std::map<std::string, std::pair<double, size_t>>& groups) {
          return SubgroupGap(Groups(groups));
        },
        py::arg("groups"));
  m.def("institution_cv",
        [](const std::map<std::string, std::pair<double, size_t>>& groups, size_t min_support) {
          const auto cv = ComputeInstitutionCv(Groups(groups), min_support);
          py::dict out;
          out["cv"] = cv.cv;
          out["mean"] = cv.mean;
          out["stddev"] = cv.stddev;
          out["included"] = cv.included;
          out["excluded"] = cv.excluded;
          return out;
        },
        py::arg("groups"), py::arg("min_support") = 10);
  m.def("concordance_index",
        [](const std::vector<double>& risk, const std::vector<double>& time,
           const std::vector<bool>& censored) { return ConcordanceIndex(risk, time, censored); },
        py::arg("risk"), py::arg("time"), py::arg("censored"));
  m.def("retrieve_and_score",
        [](const Eigen::MatrixXd& db, const std::vector<int>& db_labels,
           const Eigen::MatrixXd& queries, const std::vector<int>& query_labels,
           const std::vector<int>& k_set) {
          return RetrievalDict(RetrieveAndScore(db, db_labels, queries, query_labels, k_set));
        },
        py::arg("database"), py::arg("database_labels"), py::arg("queries"),
        py::arg("query_labels"), py::arg("k_set") = std::vector<int>{1, 3, 5});

  m.def("run_audit_json",
        [](const std::filesystem::path& config, std::optional<uint64_t> seed) {
          auto c = LoadAuditConfig(config);
          if (seed) c.seed = *seed;
          AuditReport report;
          {
            py::gil_scoped_release release;
            report = RunAudit(c);
          }
          return FormatReportJson(report);
        },
        py::arg("config"), py::arg("seed") = std::nullopt);
  m.def("render_markdown",
        [](const std::string& report_json) {
          return RenderMarkdown(ReportFromJson(nlohmann::json::parse(report_json)));
        },
        py::arg("report_json"));
}
