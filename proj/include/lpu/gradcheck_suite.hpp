// Copyright 2026 The LPU-SFOD Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lpu/losses.hpp"

namespace lpu {

struct GradCheckCase {
  int batch = 0;
  std::string term;  // high | pst | lscl | lscl-student | lscl-normalized | lscl-keyden | total | total-default
  GradCheckReport report;
};

struct GradCheckSuiteOptions {
  int batches = 10;
  std::size_t coords = 200;
  double step = 1e-4;
  double tolerance = 1e-4;
  double tau = 0.07;
  std::uint64_t seed = 0;
};

/// Finite-difference checks of every objective term composed through the ROI
/// head, on synthetic scenes with random parameters.
std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckSuiteOptions& options);

/// One line per case plus the worst coordinates of failing cases.
void write_gradcheck_report(std::ostream& os, const std::vector<GradCheckCase>& cases);

}  // namespace lpu
