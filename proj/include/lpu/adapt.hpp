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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lpu/detector.hpp"
#include "lpu/losses.hpp"
#include "lpu/metrics.hpp"
#include "lpu/synthworld.hpp"

namespace lpu {

struct PretrainConfig {
  int hidden_dim = 32;
  int epochs = 20;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double fg_iou_threshold = 0.5;
  ProposalParams proposals;
  std::uint64_t seed = 0;
};

/// Supervised training of a fresh head on labeled source scenes, with labels
/// from IoU assignment against ground truth. Throws DivergenceError on a
/// non-finite loss.
ModelParams pretrain_source(const DomainConfig& cfg, const std::vector<Scene>& source,
                            const PretrainConfig& config);

struct AdaptConfig {
  double sigma_high = 0.8;
  double sigma_low = 0.1;
  double lambda_pst = 1.0;
  double lambda_lscl = 0.1;
  double tau = 0.07;
  double alpha = 0.996;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int epochs = 30;
  int batch_size = 1;  // scenes per optimization step
  bool enable_pst = true;
  bool enable_lscl = true;
  MixupStrategy mixup = MixupStrategy::kIou;
  bool normalize_contrastive = true;
  bool lscl_key_in_denominator = true;
  bool exclude_low_from_high = true;  // drop LPU-matched proposals from L_h
  double fg_iou_threshold = 0.5;
  double match_iou_threshold = 0.5;
  double nms_threshold = 0.5;
  ProposalParams proposals;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  std::optional<EvalResult> eval;  // teacher on the held-out split, when an evaluator is given
  double l_high = 0.0;             // means over the epoch's steps
  double l_pst = 0.0;
  double l_lscl = 0.0;
  double num_matched = 0.0;
  double high_count = 0.0;
  double low_count = 0.0;
};

struct AdaptResult {
  ModelParams student;
  ModelParams teacher;
  std::vector<EpochLog> log;
  bool diverged = false;  // student/teacher then hold the last finite state
  std::string diagnostic;
};

using Evaluator = std::function<EvalResult(const ModelParams&)>;
/// Called after every optimization step with (step index, student, teacher).
using StepObserver = std::function<void(long, const ModelParams&, const ModelParams&)>;

/// Scene visiting order for an epoch.
std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n);

/// Seed of the random streams used when visiting a scene at a given epoch.
/// Stream ids: 1 proposals, 2 teacher view, 3 student view, 4 mixup partners.
std::uint64_t step_seed(std::uint64_t seed, int epoch, std::size_t scene_index);

/// Mean-teacher adaptation on unlabeled target scenes. Both models start from
/// `source_model`. Pseudo-labels are regenerated each step from the teacher's
/// weak view and split by the dual thresholds; the high band trains through
/// IoU assignment, the low band through PST and LSCL.
AdaptResult adapt_target(const DomainConfig& cfg, const ModelParams& source_model,
                         const std::vector<Scene>& target, const AdaptConfig& config,
                         const Evaluator& evaluate = {}, const StepObserver& observe = {});

/// Builds the objective inputs for one scene as seen by the adaptation loop.
/// Exposed for tests and the gradient checker.
struct PreparedStep {
  StepInputs inputs;
  std::size_t high_count = 0;
  std::size_t low_count = 0;
};
PreparedStep prepare_step(const DomainConfig& cfg, const ModelParams& student,
                          const ModelParams& teacher, const Scene& scene,
                          const AdaptConfig& config, std::uint64_t stream_seed);

}  // namespace lpu
