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

#include "pfmaudit/synth.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <string>

#include "pfmaudit/error.h"
#include "pfmaudit/rng.h"

namespace pfmaudit {
namespace {

using Vector = std::vector<double>;

constexpr std::string_view kGenders[2] = {"male", "female"};
constexpr std::string_view kRaces[2] = {"white", "black_or_african_american"};

// Seed streams of the generator.
enum Stream : uint64_t { kDirections = 1, kDesign = 2, kNoise = 3 };

void Require(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorKind::kArgument, message);
}

bool FiniteNonNegative(double v) { return std::isfinite(v) && v >= 0.0; }

// Modified Gram-Schmidt over Gaussian draws, with one re-orthogonalization
// pass.
std::vector<Vector> OrthonormalDirections(int count, int dim, Rng& rng) {
  std::vector<Vector> dirs;
  while (static_cast<int>(dirs.size()) < count) {
    Vector v(dim);
    for (double& x : v) x = rng.Normal();
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& u : dirs) {
        const double dot = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
        for (int j = 0; j < dim; ++j) v[j] -= dot * u[j];
      }
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    dirs.push_back(std::move(v));
  }
  return dirs;
}

// Centered-simplex centroids of norm mu.
std::vector<Vector> Centroids(const std::vector<Vector>& dirs, double mu) {
  const size_t k = dirs.size();
  const size_t dim = dirs.front().size();
  std::vector<Vector> out(k, Vector(dim, 0.0));
  if (k < 2) return out;
  Vector mean(dim, 0.0);
  for (const auto& u : dirs) {
    for (size_t j = 0; j < dim; ++j) mean[j] += u[j] / k;
  }
  const double scale = mu * std::sqrt(static_cast<double>(k) / (k - 1));
  for (size_t v = 0; v < k; ++v) {
    for (size_t j = 0; j < dim; ++j) out[v][j] = scale * (dirs[v][j] - mean[j]);
  }
  return out;
}

void Axpy(double a, const Vector& x, Vector& y) {
  for (size_t j = 0; j < y.size(); ++j) y[j] += a * x[j];
}

nlohmann::json SurvivalToJson(const SurvivalSpec& s) {
  return {{"base_hazard", s.base_hazard},
          {"risk_strength", s.risk_strength},
          {"censor_hazard", s.censor_hazard}};
}

}  // namespace

int SynthSpec::RequiredDim() const {
  return n_classes + n_institutions + 2 + (survival ? 1 : 0);
}

int SynthSpec::ProtectedPerCell() const {
  return protected_per_cell.value_or((samples_per_cell + 19) / 20);
}

void SynthSpec::Validate() const {
  Require(n_classes >= 1, "n_classes must be >= 1");
  Require(n_institutions >= 1, "n_institutions must be >= 1");
  Require(samples_per_cell >= 1, "samples_per_cell must be >= 1");
  Require(slide_size >= 1, "slide_size must be >= 1");
  Require(dim >= RequiredDim(),
          "dim " + std::to_string(dim) + " is below the " +
              std::to_string(RequiredDim()) +
              " orthonormal directions the spec needs");
  Require(FiniteNonNegative(mu_class) && FiniteNonNegative(mu_inst) &&
              FiniteNonNegative(mu_gender) && FiniteNonNegative(mu_race),
          "signal strengths must be finite and >= 0");
  Require(spurious_rho >= 0.0 && spurious_rho <= 1.0,
          "spurious_rho must lie in [0, 1]");
  Require(witness_rate > 0.0 && witness_rate <= 1.0,
          "witness_rate must lie in (0, 1]");
  Require(ProtectedPerCell() >= 0 && ProtectedPerCell() <= samples_per_cell,
          "protected_per_cell must lie in [0, samples_per_cell]");
  if (!institution_noise.empty()) {
    Require(institution_noise.size() == static_cast<size_t>(n_institutions),
            "institution_noise needs one entry per institution");
    for (double s : institution_noise) {
      Require(std::isfinite(s) && s > 0.0, "noise scales must be finite and > 0");
    }
  }
  if (survival) {
    Require(std::isfinite(survival->base_hazard) && survival->base_hazard > 0.0,
            "base_hazard must be finite and > 0");
    Require(std::isfinite(survival->risk_strength),
            "risk_strength must be finite");
    Require(FiniteNonNegative(survival->censor_hazard),
            "censor_hazard must be finite and >= 0");
  }
}

nlohmann::json SpecToJson(const SynthSpec& spec) {
  nlohmann::json doc = {{"dim", spec.dim},
                        {"n_institutions", spec.n_institutions},
                        {"n_classes", spec.n_classes},
                        {"samples_per_cell", spec.samples_per_cell},
                        {"mu_class", spec.mu_class},
                        {"mu_inst", spec.mu_inst},
                        {"mu_gender", spec.mu_gender},
                        {"mu_race", spec.mu_race},
                        {"spurious_rho", spec.spurious_rho},
                        {"slide_size", spec.slide_size},
                        {"witness_rate", spec.witness_rate},
                        {"protected_per_cell", spec.ProtectedPerCell()},
                        {"institution_noise", spec.institution_noise},
                        {"seed", spec.seed}};
  if (spec.survival) doc["survival"] = SurvivalToJson(*spec.survival);
  return doc;
}

SynthSpec SpecFromJson(const nlohmann::json& doc) {
  if (!doc.is_object()) throw Error(ErrorKind::kArgument, "spec must be an object");
  static const std::set<std::string> kKnown = {
      "dim", "n_institutions", "n_classes", "samples_per_cell", "mu_class",
      "mu_inst", "mu_gender", "mu_race", "spurious_rho", "slide_size",
      "witness_rate", "protected_per_cell", "institution_noise", "survival",
      "seed"};
  for (const auto& [key, value] : doc.items()) {
    if (!kKnown.contains(key)) {
      throw Error(ErrorKind::kArgument, "unknown spec field \"" + key + "\"");
    }
  }
  SynthSpec spec;
  try {
    spec.dim = doc.value("dim", spec.dim);
    spec.n_institutions = doc.value("n_institutions", spec.n_institutions);
    spec.n_classes = doc.value("n_classes", spec.n_classes);
    spec.samples_per_cell = doc.value("samples_per_cell", spec.samples_per_cell);
    spec.mu_class = doc.value("mu_class", spec.mu_class);
    spec.mu_inst = doc.value("mu_inst", spec.mu_inst);
    spec.mu_gender = doc.value("mu_gender", spec.mu_gender);
    spec.mu_race = doc.value("mu_race", spec.mu_race);
    spec.spurious_rho = doc.value("spurious_rho", spec.spurious_rho);
    spec.slide_size = doc.value("slide_size", spec.slide_size);
    spec.witness_rate = doc.value("witness_rate", spec.witness_rate);
    if (doc.contains("protected_per_cell")) {
      spec.protected_per_cell = doc.at("protected_per_cell").get<int>();
    }
    spec.institution_noise =
        doc.value("institution_noise", spec.institution_noise);
    if (doc.contains("survival") && !doc.at("survival").is_null()) {
      const auto& s = doc.at("survival");
      SurvivalSpec sv;
      sv.base_hazard = s.value("base_hazard", sv.base_hazard);
      sv.risk_strength = s.value("risk_strength", sv.risk_strength);
      sv.censor_hazard = s.value("censor_hazard", sv.censor_hazard);
      spec.survival = sv;
    }
    spec.seed = doc.value("seed", spec.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kArgument, std::string("bad spec field: ") + e.what());
  }
  return spec;
}

nlohmann::json GroundTruthToJson(const GroundTruth& truth) {
  nlohmann::json doc = {{"spec", SpecToJson(truth.spec)},
                        {"class_directions", truth.class_directions},
                        {"institution_directions", truth.institution_directions},
                        {"gender_direction", truth.gender_direction},
                        {"race_direction", truth.race_direction},
                        {"risk_direction", truth.risk_direction},
                        {"dominant_class", truth.dominant_class},
                        {"institution", truth.institution},
                        {"class_index", truth.class_index},
                        {"witness", truth.witness},
                        {"latent_risk", truth.latent_risk}};
  return doc;
}

GroundTruth GroundTruthFromJson(const nlohmann::json& doc) {
  GroundTruth t;
  try {
    t.spec = SpecFromJson(doc.at("spec"));
    doc.at("class_directions").get_to(t.class_directions);
    doc.at("institution_directions").get_to(t.institution_directions);
    doc.at("gender_direction").get_to(t.gender_direction);
    doc.at("race_direction").get_to(t.race_direction);
    doc.at("risk_direction").get_to(t.risk_direction);
    doc.at("dominant_class").get_to(t.dominant_class);
    doc.at("institution").get_to(t.institution);
    doc.at("class_index").get_to(t.class_index);
    doc.at("witness").get_to(t.witness);
    doc.at("latent_risk").get_to(t.latent_risk);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("bad ground truth: ") + e.what());
  }
  return t;
}

SynthCohort GenerateCohort(const SynthSpec& spec) {
  spec.Validate();
  const int k = spec.n_classes, n_inst = spec.n_institutions, dim = spec.dim;

  Rng dir_rng(DeriveSeed(spec.seed, kDirections));
  auto dirs = OrthonormalDirections(spec.RequiredDim(), dim, dir_rng);
  GroundTruth truth;
  truth.spec = spec;
  truth.class_directions.assign(dirs.begin(), dirs.begin() + k);
  truth.institution_directions.assign(dirs.begin() + k, dirs.begin() + k + n_inst);
  truth.gender_direction = dirs[k + n_inst];
  truth.race_direction = dirs[k + n_inst + 1];
  if (spec.survival) truth.risk_direction = dirs[k + n_inst + 2];
  const auto class_centroids = Centroids(truth.class_directions, spec.mu_class);
  const auto inst_centroids = Centroids(truth.institution_directions, spec.mu_inst);
  for (int i = 0; i < n_inst; ++i) truth.dominant_class.push_back(i % k);

  Rng design(DeriveSeed(spec.seed, kDesign));
  Rng noise(DeriveSeed(spec.seed, kNoise));
  const int protect = spec.ProtectedPerCell();
  const int witnesses = std::max(
      1, static_cast<int>(std::lround(spec.witness_rate * spec.slide_size)));

  SynthCohort out;
  out.matrix.dim = static_cast<uint32_t>(dim);
  std::vector<SampleRecord> records;
  size_t slide_no = 0;
  Vector row(dim);
  std::vector<int> positions(spec.slide_size);
  for (int inst = 0; inst < n_inst; ++inst) {
    const double sigma =
        spec.institution_noise.empty() ? 1.0 : spec.institution_noise[inst];
    const int dominant = truth.dominant_class[inst];
    for (int cell_class = 0; cell_class < k; ++cell_class) {
      for (int j = 0; j < spec.samples_per_cell; ++j, ++slide_no) {
        const double relabel_draw = design.Uniform();
        int label = cell_class;
        if (cell_class != dominant && j >= protect &&
            relabel_draw < spec.spurious_rho) {
          label = dominant;
        }
        const int gender = static_cast<int>(design.UniformInt(2));
        const int race = static_cast<int>(design.UniformInt(2));
        const int age = static_cast<int>(design.UniformInt(kAgeGroupCardinality));
        double latent = 0.0, days = 0.0;
        bool censored = false;
        if (spec.survival) {
          const auto& sv = *spec.survival;
          latent = design.Normal();
          const double event =
              design.Exponential(sv.base_hazard * std::exp(sv.risk_strength * latent));
          const double censor = sv.censor_hazard > 0.0
                                    ? design.Exponential(sv.censor_hazard)
                                    : std::numeric_limits<double>::infinity();
          censored = censor < event;
          days = censored ? censor : event;
        }
        std::iota(positions.begin(), positions.end(), 0);
        design.Shuffle(std::span(positions));
        std::vector<bool> is_witness(spec.slide_size, label > 0);
        if (label > 0 && spec.witness_rate < 1.0) {
          std::fill(is_witness.begin(), is_witness.end(), false);
          for (int w = 0; w < std::min(witnesses, spec.slide_size); ++w) {
            is_witness[positions[w]] = true;
          }
        }

        const std::string slide_id = "w" + std::to_string(slide_no);
        for (int m = 0; m < spec.slide_size; ++m) {
          bool carries = true;
          if (spec.witness_rate < 1.0) {
            carries = label > 0 && is_witness[m];
            std::fill(row.begin(), row.end(), 0.0);
            if (carries) Axpy(spec.mu_class, truth.class_directions[label], row);
          } else {
            row = class_centroids[label];
          }
          Axpy(1.0, inst_centroids[inst], row);
          Axpy(gender == 0 ? spec.mu_gender : -spec.mu_gender,
               truth.gender_direction, row);
          Axpy(race == 0 ? spec.mu_race : -spec.mu_race, truth.race_direction,
               row);
          if (spec.survival) {
            Axpy(spec.survival->risk_strength * latent, truth.risk_direction, row);
          }
          for (int c = 0; c < dim; ++c) {
            out.matrix.data.push_back(
                static_cast<float>(row[c] + sigma * noise.Normal()));
          }

          SampleRecord rec;
          rec.sample_id = spec.slide_size == 1
                              ? "s" + std::to_string(slide_no)
                              : "s" + std::to_string(slide_no) + "_" + std::to_string(m);
          rec.patient_id = "p" + std::to_string(slide_no);
          rec.slide_id = slide_id;
          rec.institution = "inst" + std::to_string(inst);
          rec.class_label = "c" + std::to_string(label);
          rec.gender = std::string(kGenders[gender]);
          rec.race = std::string(kRaces[race]);
          rec.age_group = "age" + std::to_string(age);
          if (spec.survival) {
            rec.survival_days = days;
            rec.censored = censored;
          }
          rec.level = spec.slide_size == 1 ? Level::kSlide : Level::kPatch;
          records.push_back(std::move(rec));

          truth.institution.push_back(inst);
          truth.class_index.push_back(label);
          truth.witness.push_back(label > 0 && carries);
          if (spec.survival) truth.latent_risk.push_back(latent);
        }
      }
    }
  }
  out.matrix.count = records.size();
  out.manifest = CohortManifest(std::move(records));
  out.truth = std::move(truth);
  return out;
}

double ExpectedChance(const SynthSpec& spec, std::string_view attribute) {
  if (attribute == kClassLabel || attribute == "class") return 1.0 / spec.n_classes;
  if (attribute == kInstitution) return 1.0 / spec.n_institutions;
  if (attribute == kGender || attribute == kRace) return 0.5;
  if (attribute == kAgeGroup) return 1.0 / kAgeGroupCardinality;
  throw Error(ErrorKind::kArgument,
              "unknown attribute \"" + std::string(attribute) + "\"");
}

void WriteSynthCohort(const SynthCohort& cohort,
                      const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  }
  WriteQemb(cohort.matrix, dir / kSynthEmbeddingsFile);
  WriteManifest(cohort.manifest, dir / kSynthManifestFile);
  std::ofstream out(dir / kSynthTruthFile, std::ios::binary);
  out << GroundTruthToJson(cohort.truth).dump(1) << '\n';
  if (!out) {
    throw Error(ErrorKind::kIo, "cannot write " + (dir / kSynthTruthFile).string());
  }
}

}  // namespace pfmaudit
