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
#include <vector>

#include "lpu/detector.hpp"
#include "lpu/geometry.hpp"

namespace lpu {

/// Teacher detections split by the dual confidence thresholds.
///   high: confidence >= sigma_high
///   low:  sigma_low <= confidence < sigma_high
/// Anything below sigma_low is counted in `dropped` and discarded.
struct PseudoLabelSet {
  std::vector<Detection> high;
  std::vector<Detection> low;
  std::size_t dropped = 0;
  double sigma_high = 0.8;
  double sigma_low = 0.1;
};

PseudoLabelSet partition_detections(const std::vector<Detection>& dets, double sigma_high,
                                    double sigma_low);

/// Per-proposal assignment result. `matched` indexes the pseudo-box that won
/// the IoU comparison, or -1 for background.
struct Assignment {
  int label = 0;
  int matched = -1;
  double overlap = 0.0;
};

/// IoU-based hard label assignment: the category of the highest-IoU pseudo-box
/// if that IoU >= fg_iou_threshold, else background (`background_label`).
/// IoU ties go to the lower pseudo-box index.
std::vector<Assignment> assign_labels_detailed(const std::vector<BBox>& proposals,
                                               const std::vector<Detection>& pseudo,
                                               double fg_iou_threshold, int background_label);

std::vector<int> assign_labels(const std::vector<BBox>& proposals,
                               const std::vector<Detection>& pseudo, double fg_iou_threshold,
                               int background_label);

/// Indices (ascending) of proposals whose best IoU against any low-band
/// pseudo-box is >= match_iou_threshold.
std::vector<std::size_t> match_low_confidence(const std::vector<BBox>& proposals,
                                              const std::vector<Detection>& low,
                                              double match_iou_threshold);

}  // namespace lpu
