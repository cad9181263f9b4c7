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

// pfmaudit command-line tool.
//
//   pfmaudit synth    --config spec.json --out DIR [--seed N]
//   pfmaudit audit    --config audit.json [--out DIR] [--seed N]
//                     [--format json|markdown]
//   pfmaudit report   REPORT.json [--format json|markdown] [--out FILE]
//   pfmaudit validate (--config audit.json | EMBEDDINGS MANIFEST)
//
// Exit codes: 0 success, 1 audit finished with warnings, 2 invalid input,
// 3 infeasible request.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "pfmaudit/audit.h"
#include "pfmaudit/cohort.h"
#include "pfmaudit/error.h"
#include "pfmaudit/synth.h"

namespace {

namespace fs = std::filesystem;
using pfmaudit::Error;
using pfmaudit::ErrorKind;

constexpr int kOk = 0;
constexpr int kWarnings = 1;
constexpr int kInvalid = 2;

struct Options {
  std::string config;
  std::string out;
  std::optional<uint64_t> seed;
  std::string format = "json";
  bool verbose = false;
  std::string report;
  std::string embeddings;
  std::string manifest;
};

void Log(const Options& opts, const std::string& message) {
  if (opts.verbose) std::cerr << "pfmaudit: " << message << "\n";
}

std::string ReadText(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void WriteText(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
}

nlohmann::json ParseJson(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, what + " is not valid JSON: " + e.what());
  }
}

std::string Render(const pfmaudit::AuditReport& report, const std::string& format) {
  return format == "markdown" ? pfmaudit::RenderMarkdown(report)
                              : pfmaudit::FormatReportJson(report);
}

int RunSynth(const Options& opts) {
  auto spec = pfmaudit::SpecFromJson(ParseJson(ReadText(opts.config), opts.config));
  if (opts.seed) spec.seed = *opts.seed;
  Log(opts, "generating cohort with seed " + std::to_string(spec.seed));
  const auto cohort = pfmaudit::GenerateCohort(spec);
  pfmaudit::WriteSynthCohort(cohort, opts.out);
  std::cout << "wrote " << cohort.manifest.size() << " rows of width "
            << cohort.matrix.dim << " to " << opts.out << "\n";
  return kOk;
}

int RunAuditCommand(const Options& opts) {
  auto config = pfmaudit::LoadAuditConfig(opts.config);
  if (opts.seed) config.seed = *opts.seed;
  const fs::path out = !opts.out.empty()          ? fs::path(opts.out)
                       : !config.output_dir.empty() ? config.output_dir
                                                    : fs::path(".");
  Log(opts, "running audits from " + opts.config);
  const auto report = pfmaudit::RunAudit(config);
  WriteText(out / "report.json", pfmaudit::FormatReportJson(report));
  if (opts.format == "markdown") {
    WriteText(out / "report.md", pfmaudit::RenderMarkdown(report));
  }
  size_t rows = 0;
  for (const auto& s : report.sections) rows += s.rows.size();
  std::cout << "wrote " << rows << " metric rows to " << (out / "report.json").string()
            << " (" << report.warnings.size() << " warnings)\n";
  for (const auto& w : report.warnings) Log(opts, "warning: " + w);
  return report.warnings.empty() ? kOk : kWarnings;
}

int RunReport(const Options& opts) {
  const auto report = pfmaudit::ReportFromJson(
      ParseJson(ReadText(opts.report), opts.report));
  const std::string text = Render(report, opts.format);
  if (opts.out.empty()) {
    std::cout << text;
  } else {
    WriteText(opts.out, text);
  }
  return kOk;
}

int RunValidate(const Options& opts) {
  fs::path embeddings = opts.embeddings, manifest = opts.manifest;
  if (!opts.config.empty()) {
    const auto config = pfmaudit::LoadAuditConfig(opts.config);
    embeddings = config.Resolve(config.embeddings);
    manifest = config.Resolve(config.manifest);
  }
  if (embeddings.empty() || manifest.empty()) {
    throw Error(ErrorKind::kArgument,
                "validate needs --config or EMBEDDINGS and MANIFEST paths");
  }
  const auto matrix = pfmaudit::ReadQemb(embeddings);
  const auto cohort = pfmaudit::LoadManifest(manifest);
  const auto report = pfmaudit::ValidateCohort(matrix, cohort);
  nlohmann::json doc = {{"passed", report.passed},
                        {"rows", matrix.count},
                        {"dim", matrix.dim},
                        {"records", cohort.size()},
                        {"missingness", report.missingness},
                        {"institution_counts", report.institution_counts},
                        {"class_counts", report.class_counts},
                        {"findings", report.Findings()}};
  std::cout << doc.dump(2) << "\n";
  return report.passed ? kOk : kInvalid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pfmaudit: privacy, reliability and fairness audits of frozen "
               "pathology embeddings"};
  app.set_version_flag("--version", PFMAUDIT_VERSION);
  app.require_subcommand(1);
  Options opts;
  app.add_flag("-v,--verbose", opts.verbose, "Log progress to stderr");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
  synth->add_option("--config", opts.config, "Synthetic cohort spec (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  synth->add_option("--out", opts.out, "Output directory")->required();
  synth->add_option("--seed", opts.seed, "Override the spec seed");

  auto* audit = app.add_subcommand("audit", "Run the configured audits");
  audit->add_option("--config", opts.config, "Audit config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  audit->add_option("--out", opts.out, "Report directory");
  audit->add_option("--seed", opts.seed, "Override the config seed");
  audit->add_option("--format", opts.format,
                    "Also write report.md when set to markdown")
      ->check(CLI::IsMember({"json", "markdown"}));

  auto* report = app.add_subcommand("report", "Render a report");
  report->add_option("report", opts.report, "report.json from `audit`")
      ->required()
      ->check(CLI::ExistingFile);
  report->add_option("--format", opts.format, "json or markdown")
      ->check(CLI::IsMember({"json", "markdown"}));
  report->add_option("--out", opts.out, "Output file (default: stdout)");

  auto* validate = app.add_subcommand("validate", "Validate a cohort");
  validate->add_option("--config", opts.config, "Audit config naming the cohort")
      ->check(CLI::ExistingFile);
  validate->add_option("embeddings", opts.embeddings, "QEMB file");
  validate->add_option("manifest", opts.manifest, "Manifest CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*synth) return RunSynth(opts);
    if (*audit) return RunAuditCommand(opts);
    if (*report) return RunReport(opts);
    if (*validate) return RunValidate(opts);
  } catch (const Error& e) {
    std::cerr << "pfmaudit: " << e.what() << "\n";
    return pfmaudit::ExitCodeFor(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "pfmaudit: " << e.what() << "\n";
    return kInvalid;
  }
  return kInvalid;
}
