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

#ifndef PFMAUDIT_ERROR_H_
#define PFMAUDIT_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace pfmaudit {

// Failure categories shared by every module. The CLI maps them onto exit
// codes (see ExitCodeFor).
enum class ErrorKind {
  kIo,
  kFormat,
  kTruncation,
  kValidation,
  kSchema,
  kIntegrity,
  kVocabulary,
  kArgument,
  kCoverage,
  kInfeasible,
  kDivergence,
  kDegenerateData,
  kUndefined,
  kNormalization,
  kPlan,
};

std::string_view ErrorKindName(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(ErrorKindName(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// 2 = invalid input, 3 = infeasible request.
int ExitCodeFor(ErrorKind kind);

}  // namespace pfmaudit

#endif  // PFMAUDIT_ERROR_H_
