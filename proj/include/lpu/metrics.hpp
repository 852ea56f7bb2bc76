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

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <vector>

#include "lpu/detector.hpp"
#include "lpu/synthworld.hpp"

namespace lpu {

/// Detections and ground truth for one scene.
struct EvalScene {
  std::vector<Detection> detections;
  std::vector<SceneObject> ground_truth;
};

struct EvalResult {
  std::vector<double> ap;               // per category; NaN when it has no ground truth
  std::vector<std::size_t> num_gt;      // per category
  std::vector<std::size_t> num_det;     // per category
  double map = 0.0;                     // mean over categories with >= 1 GT
};

/// VOC-style AP with all-point interpolation. Detections are ranked by
/// confidence (ties keep input order); each is matched greedily to the
/// unmatched same-category GT box of highest IoU, if that IoU >= threshold.
/// Throws std::invalid_argument when no category has ground truth.
EvalResult average_precision(const std::vector<EvalScene>& scenes, int num_categories,
                             double iou_threshold = 0.5);

void write_eval_csv(std::ostream& os, const EvalResult& result);

struct BinAccuracy {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();  // NaN marks an empty bin

  bool empty() const { return n == 0; }
};

/// Ten equal-width bins over (0, 1].
std::vector<double> default_bin_edges();

struct BinDiagnosticOptions {
  ProposalParams proposals;
  double fg_iou_threshold = 0.5;
  double nms_threshold = 0.5;
  std::uint64_t seed = 0;
};

/// Foreground-assignment accuracy binned by the confidence of the pseudo-box
/// that each proposal was assigned to. Counted per proposal; a proposal is
/// correct when the ground-truth assignment gives it the same category.
std::vector<BinAccuracy> assignment_accuracy_bins(const ModelParams& teacher,
                                                  const DomainConfig& cfg,
                                                  const std::vector<Scene>& scenes,
                                                  const std::vector<double>& edges,
                                                  const BinDiagnosticOptions& options);

/// Bins assignments given detections; exposed so oracle teachers can be tested
/// without a trained model.
void accumulate_assignment_bins(const std::vector<BBox>& proposals,
                                const std::vector<Detection>& pseudo,
                                const std::vector<SceneObject>& ground_truth, int num_categories,
                                double fg_iou_threshold, std::vector<BinAccuracy>& bins);

std::vector<BinAccuracy> make_bins(const std::vector<double>& edges);

void write_bins_csv(std::ostream& os, const std::vector<BinAccuracy>& bins);

/// Spearman rank correlation (average ranks for ties).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct SlidePoint {
  int step = 0;
  double offset = 0.0;  // horizontal displacement from the starting box
  double max_prob = 0.0;
};

/// Box obtained by shifting `box` horizontally until its IoU with the
/// original equals `target_iou`.
BBox horizontal_shift_for_iou(const BBox& box, double target_iou);

/// Moves a box linearly from gt_box to end_box in `steps` increments and
/// records the highest foreground probability at each position.
std::vector<SlidePoint> slide_diagnostic(const ModelParams& model, const DomainConfig& cfg,
                                         const Scene& scene, const BBox& gt_box,
                                         const BBox& end_box, int steps, Rng& rng);

/// Probability-weighted mean offset along a slide curve.
double confidence_weighted_offset(const std::vector<SlidePoint>& curve);

void write_slide_csv(std::ostream& os, const std::vector<SlidePoint>& curve);

}  // namespace lpu
