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

#include <utility>
#include <vector>

#include "lpu/adapt.hpp"
#include "lpu/pseudo.hpp"

namespace lpu::baseline {

// The plain mean teacher written out from primitives, without the adaptation
// loop: teacher pseudo-labels above sigma_h, hard cross-entropy, SGD, EMA.
// Returns (student, teacher) after every step.
inline std::vector<std::pair<ModelParams, ModelParams>> plain_mean_teacher(const DomainConfig& cfg,
                                                                          const ModelParams& source,
                                                                          const std::vector<Scene>& target,
                                                                          const AdaptConfig& c) {
  ModelParams student = source, teacher = source;
  OptimizerState opt(c.learning_rate, c.momentum, student);
  std::vector<std::pair<ModelParams, ModelParams>> trace;
  for (int epoch = 0; epoch < c.epochs; ++epoch) {
    for (std::size_t idx : epoch_order(c.seed, epoch, target.size())) {
      const Scene& scene = target[idx];
      const std::uint64_t s = step_seed(c.seed, epoch, idx);
      Rng prop_rng = make_rng(s, {1}), teacher_rng = make_rng(s, {2}), student_rng = make_rng(s, {3});
      const auto boxes = boxes_of(generate_proposals(cfg, scene, c.proposals, prop_rng));
      const Eigen::MatrixXd tf = extract_features(cfg, scene, boxes, View::kWeak, teacher_rng);
      const Eigen::MatrixXd sf = extract_features(cfg, scene, boxes, View::kStrong, student_rng);
      const auto dets = detections_from_probs(boxes, forward_batch(teacher, tf).probs, c.nms_threshold);
      std::vector<Detection> high;
      for (const auto& d : dets)
        if (d.confidence >= c.sigma_high) high.push_back(d);
      const auto labels = assign_labels(boxes, high, c.fg_iou_threshold, cfg.background());
      const RoiBatch cache = forward_batch(student, sf);
      ModelParams grads = student.zeros_like();
      backward(student, sf, cache, loss_high_with_grad(cache.probs, labels).grad, Eigen::MatrixXd(), grads);
      sgd_step(student, grads, opt);
      ema_update(teacher, student, c.alpha);
      trace.emplace_back(student, teacher);
    }
  }
  return trace;
}

}  // namespace lpu::baseline
