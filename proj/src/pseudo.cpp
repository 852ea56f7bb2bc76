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


#include "lpu/pseudo.hpp"

#include "lpu/error.hpp"

namespace lpu {

PseudoLabelSet partition_detections(const std::vector<Detection>& dets, double sigma_high,
                                    double sigma_low) {
  if (!(0.0 <= sigma_low && sigma_low <= sigma_high && sigma_high <= 1.0))
    throw ContractViolation("partition_detections: require 0 <= sigma_low <= sigma_high <= 1");
  PseudoLabelSet out;
  out.sigma_high = sigma_high;
  out.sigma_low = sigma_low;
  for (const auto& d : dets) {
    if (d.confidence >= sigma_high)
      out.high.push_back(d);
    else if (d.confidence >= sigma_low)
      out.low.push_back(d);
    else
      ++out.dropped;
  }
  return out;
}

std::vector<Assignment> assign_labels_detailed(const std::vector<BBox>& proposals,
                                               const std::vector<Detection>& pseudo,
                                               double fg_iou_threshold, int background_label) {
  if (!(fg_iou_threshold > 0.0 && fg_iou_threshold < 1.0))
    throw ContractViolation("assign_labels: fg_iou_threshold must lie in (0, 1)");
  std::vector<Assignment> out(proposals.size(), Assignment{background_label, -1, 0.0});
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t k = 0; k < pseudo.size(); ++k) {
      const double v = iou(proposals[i], pseudo[k].box);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(k);
      }
    }
    if (best >= 0) out[i].overlap = best_iou;
    if (best >= 0 && best_iou >= fg_iou_threshold) {
      out[i].label = pseudo[static_cast<std::size_t>(best)].category;
      out[i].matched = best;
    }
  }
  return out;
}

std::vector<int> assign_labels(const std::vector<BBox>& proposals,
                               const std::vector<Detection>& pseudo, double fg_iou_threshold,
                               int background_label) {
  std::vector<int> labels;
  labels.reserve(proposals.size());
  for (const auto& a : assign_labels_detailed(proposals, pseudo, fg_iou_threshold, background_label))
    labels.push_back(a.label);
  return labels;
}

std::vector<std::size_t> match_low_confidence(const std::vector<BBox>& proposals,
                                              const std::vector<Detection>& low,
                                              double match_iou_threshold) {
  if (!(match_iou_threshold > 0.0 && match_iou_threshold < 1.0))
    throw ContractViolation("match_low_confidence: match_iou_threshold must lie in (0, 1)");
  std::vector<std::size_t> matched;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    for (const auto& d : low) {
      if (iou(proposals[i], d.box) >= match_iou_threshold) {
        matched.push_back(i);
        break;
      }
    }
  }
  return matched;
}

}  // namespace lpu
