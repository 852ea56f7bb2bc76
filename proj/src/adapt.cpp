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


#include "lpu/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "lpu/error.hpp"
#include "lpu/pseudo.hpp"

namespace lpu {
namespace {

enum Stream : std::uint64_t { kProposals = 1, kTeacherView = 2, kStudentView = 3, kPartners = 4 };

std::vector<Detection> as_pseudo(const std::vector<SceneObject>& objects) {
  std::vector<Detection> out;
  for (const auto& o : objects) out.push_back({o.box, o.category, 1.0, 0});
  return out;
}

}  // namespace

void AdaptConfig::validate() const {
  auto require = [](bool ok, const char* key, const std::string& what) {
    if (!ok) throw ConfigError(key, what);
  };
  require(sigma_low >= 0.0 && sigma_low <= 1.0, "sigma_l", "sigma_l must lie in [0, 1]");
  require(sigma_high >= 0.0 && sigma_high <= 1.0, "sigma_h", "sigma_h must lie in [0, 1]");
  require(sigma_low <= sigma_high, "sigma_l", "sigma_l must not exceed sigma_h");
  require(lambda_pst >= 0.0, "lambda_pst", "lambda_pst must be >= 0");
  require(lambda_lscl >= 0.0, "lambda_lscl", "lambda_lscl must be >= 0");
  require(tau > 0.0, "tau", "tau must be > 0");
  require(alpha >= 0.0 && alpha <= 1.0, "alpha", "alpha must lie in [0, 1]");
  require(learning_rate > 0.0, "lr", "lr must be > 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum", "momentum must lie in [0, 1)");
  require(epochs >= 0, "epochs", "epochs must be >= 0");
  require(batch_size >= 1, "batch_size", "batch_size must be >= 1");
  require(fg_iou_threshold > 0.0 && fg_iou_threshold < 1.0, "fg_iou", "fg_iou must lie in (0, 1)");
  require(match_iou_threshold > 0.0 && match_iou_threshold < 1.0, "match_iou",
          "match_iou must lie in (0, 1)");
  require(nms_threshold >= 0.0 && nms_threshold <= 1.0, "nms_iou", "nms_iou must lie in [0, 1]");
}

ModelParams pretrain_source(const DomainConfig& cfg, const std::vector<Scene>& source,
                            const PretrainConfig& config) {
  if (source.empty()) throw ContractViolation("pretrain_source: no labeled source scenes");
  ModelParams params =
      init_params(cfg.feature_dim, config.hidden_dim, cfg.num_outputs(), config.seed);
  if (config.epochs == 0) return params;
  OptimizerState opt(config.learning_rate, config.momentum, params);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t idx : epoch_order(config.seed ^ 0x50u, epoch, source.size())) {
      const Scene& scene = source[idx];
      const std::uint64_t s = step_seed(config.seed ^ 0x50u, epoch, idx);
      Rng prop_rng = make_rng(s, {kProposals});
      const auto boxes = boxes_of(generate_proposals(cfg, scene, config.proposals, prop_rng));
      if (boxes.empty()) continue;
      Rng view_rng = make_rng(s, {kStudentView});
      const Eigen::MatrixXd features = extract_features(cfg, scene, boxes, View::kStrong, view_rng);
      const auto labels =
          assign_labels(boxes, as_pseudo(scene.objects), config.fg_iou_threshold, cfg.background());
      const RoiBatch cache = forward_batch(params, features);
      const LossWithGrad loss = loss_high_with_grad(cache.probs, labels);
      if (!std::isfinite(loss.value))
        throw DivergenceError(fmt::format("pretrain_source: non-finite loss at epoch {}", epoch));
      ModelParams grads = params.zeros_like();
      backward(params, features, cache, loss.grad, {}, grads);
      sgd_step(params, grads, opt);
    }
  }
  return params;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, {0xE90C, static_cast<std::uint64_t>(epoch)});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::uint64_t step_seed(std::uint64_t seed, int epoch, std::size_t scene_index) {
  return derive_seed(seed, {0x57E9, static_cast<std::uint64_t>(epoch), scene_index});
}

PreparedStep prepare_step(const DomainConfig& cfg, const ModelParams& student,
                          const ModelParams& teacher, const Scene& scene,
                          const AdaptConfig& config, std::uint64_t stream_seed) {
  PreparedStep step;
  StepInputs& in = step.inputs;
  Rng prop_rng = make_rng(stream_seed, {kProposals});
  const auto boxes = boxes_of(generate_proposals(cfg, scene, config.proposals, prop_rng));
  Rng teacher_rng = make_rng(stream_seed, {kTeacherView});
  Rng student_rng = make_rng(stream_seed, {kStudentView});
  const Eigen::MatrixXd teacher_features =
      extract_features(cfg, scene, boxes, View::kWeak, teacher_rng);
  in.features = extract_features(cfg, scene, boxes, View::kStrong, student_rng);
  in.teacher_probs.resize(0, cfg.num_outputs());
  in.teacher_embedding.resize(0, teacher.hidden_dim());
  if (boxes.empty()) return step;

  const RoiBatch teacher_out = forward_batch(teacher, teacher_features);
  const auto dets = detections_from_probs(boxes, teacher_out.probs, config.nms_threshold);
  const auto pseudo = partition_detections(dets, config.sigma_high, config.sigma_low);
  step.high_count = pseudo.high.size();
  step.low_count = pseudo.low.size();
  in.hard_labels = assign_labels(boxes, pseudo.high, config.fg_iou_threshold, cfg.background());

  // With both weights at zero the low band has no effect at all, so the step
  // reduces exactly to the plain mean teacher.
  const bool use_low = (config.enable_pst && config.lambda_pst != 0.0) ||
                       (config.enable_lscl && config.lambda_lscl != 0.0);
  if (!use_low || pseudo.low.empty()) return step;
  in.matched = match_low_confidence(boxes, pseudo.low, config.match_iou_threshold);
  const auto np = static_cast<Eigen::Index>(in.matched.size());
  in.teacher_probs.resize(np, cfg.num_outputs());
  in.teacher_embedding.resize(np, teacher.hidden_dim());
  for (Eigen::Index i = 0; i < np; ++i) {
    const auto row = static_cast<Eigen::Index>(in.matched[static_cast<std::size_t>(i)]);
    in.teacher_probs.row(i) = teacher_out.probs.row(row);
    in.teacher_embedding.row(i) = teacher_out.embedding.row(row);
    in.matched_boxes.push_back(boxes[static_cast<std::size_t>(row)]);
    if (config.exclude_low_from_high) in.hard_labels[static_cast<std::size_t>(row)] = -1;
  }
  in.partner_from_student = partner_from_student(config.mixup);
  if (config.enable_lscl && np >= 2) {
    Eigen::MatrixXd class_probs = in.teacher_probs;
    if (config.mixup == MixupStrategy::kClsStudent) {
      const Eigen::MatrixXd student_probs = forward_batch(student, in.features).probs;
      for (Eigen::Index i = 0; i < np; ++i)
        class_probs.row(i) = student_probs.row(Eigen::Index(in.matched[std::size_t(i)]));
    }
    Rng partner_rng = make_rng(stream_seed, {kPartners});
    in.partners = select_partners(config.mixup, in.matched_boxes, class_probs, partner_rng);
  }
  return step;
}

AdaptResult adapt_target(const DomainConfig& cfg, const ModelParams& source_model,
                         const std::vector<Scene>& target, const AdaptConfig& config,
                         const Evaluator& evaluate, const StepObserver& observe) {
  config.validate();
  if (!source_model.all_finite()) throw ContractViolation("adapt_target: source model is not finite");
  if (target.empty()) throw ContractViolation("adapt_target: no target scenes");
  AdaptResult result{source_model, source_model, {}, false, {}};
  ModelParams& student = result.student;
  ModelParams& teacher = result.teacher;
  OptimizerState opt(config.learning_rate, config.momentum, student);
  const ObjectiveWeights weights{config.lambda_pst, config.lambda_lscl, config.tau,
                                 config.enable_pst, config.enable_lscl,
                                 config.normalize_contrastive, config.lscl_key_in_denominator};
  long step_index = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch + 1;
    std::size_t scenes_seen = 0;
    const auto order = epoch_order(config.seed, epoch, target.size());
    for (std::size_t start = 0; start < order.size(); start += std::size_t(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + std::size_t(config.batch_size));
      ModelParams grads = student.zeros_like();
      for (std::size_t k = start; k < stop; ++k) {
        const PreparedStep prep = prepare_step(cfg, student, teacher, target[order[k]], config,
                                               step_seed(config.seed, epoch, order[k]));
        if (prep.inputs.features.rows() == 0) continue;
        ModelParams scene_grads;
        const LossReport rep = evaluate_objective(student, prep.inputs, weights, &scene_grads);
        if (!std::isfinite(rep.l_total) || !scene_grads.all_finite()) {
          result.diverged = true;
          result.diagnostic = fmt::format("non-finite total loss at epoch {} step {}", epoch + 1, step_index);
          return result;
        }
        if (stop - start == 1) {
          grads = std::move(scene_grads);
        } else {
          scene_grads *= 1.0 / static_cast<double>(stop - start);
          grads += scene_grads;
        }
        log.l_high += rep.l_high;
        log.l_pst += rep.l_pst;
        log.l_lscl += rep.l_lscl;
        log.num_matched += static_cast<double>(rep.num_matched);
        log.high_count += static_cast<double>(prep.high_count);
        log.low_count += static_cast<double>(prep.low_count);
        ++scenes_seen;
      }
      ModelParams last_student = student;
      sgd_step(student, grads, opt);
      if (!student.all_finite()) {
        student = std::move(last_student);
        result.diverged = true;
        result.diagnostic = fmt::format("non-finite parameters at epoch {} step {}", epoch + 1, step_index);
        return result;
      }
      ema_update(teacher, student, config.alpha);
      if (observe) observe(step_index, student, teacher);
      ++step_index;
    }
    if (scenes_seen > 0) {
      const double inv = 1.0 / static_cast<double>(scenes_seen);
      log.l_high *= inv;
      log.l_pst *= inv;
      log.l_lscl *= inv;
      log.num_matched *= inv;
      log.high_count *= inv;
      log.low_count *= inv;
    }
    if (evaluate) log.eval = evaluate(teacher);
    result.log.push_back(std::move(log));
  }
  return result;
}

}  // namespace lpu
