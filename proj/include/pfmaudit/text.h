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

// Small text helpers shared by the manifest reader and the report writers.

#ifndef PFMAUDIT_TEXT_H_
#define PFMAUDIT_TEXT_H_

#include <string>
#include <string_view>
#include <vector>

namespace pfmaudit {

// RFC 4180 CSV: quoted fields may contain commas, quotes ("") and newlines.
// Accepts LF or CRLF line endings.
std::vector<std::vector<std::string>> ParseCsv(std::string_view text);

std::string CsvEscape(std::string_view field);

// Shortest representation that parses back to the same double.
std::string FormatDouble(double value);

bool ParseDouble(std::string_view text, double& out);

}  // namespace pfmaudit

#endif  // PFMAUDIT_TEXT_H_
