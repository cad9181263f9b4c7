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

#include "pfmaudit/error.h"

namespace pfmaudit {

std::string_view ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kTruncation: return "truncation error";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kSchema: return "schema error";
    case ErrorKind::kIntegrity: return "integrity error";
    case ErrorKind::kVocabulary: return "vocabulary error";
    case ErrorKind::kArgument: return "argument error";
    case ErrorKind::kCoverage: return "coverage error";
    case ErrorKind::kInfeasible: return "infeasibility error";
    case ErrorKind::kDivergence: return "divergence error";
    case ErrorKind::kDegenerateData: return "degenerate-data error";
    case ErrorKind::kUndefined: return "undefined-value error";
    case ErrorKind::kNormalization: return "normalization error";
    case ErrorKind::kPlan: return "plan error";
  }
  return "error";
}

int ExitCodeFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kCoverage:
    case ErrorKind::kInfeasible:
    case ErrorKind::kDegenerateData:
      return 3;
    default:
      return 2;
  }
}

}  // namespace pfmaudit
