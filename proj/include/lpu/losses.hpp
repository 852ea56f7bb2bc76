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
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lpu/detector.hpp"
#include "lpu/geometry.hpp"
#include "lpu/rng.hpp"

namespace lpu {

/// Probabilities are clamped to this floor before taking logs.
inline constexpr double kProbFloor = 1e-12;

/// Scalar loss together with its gradient with respect to one input.
struct LossWithGrad {
  double value = 0.0;
  Eigen::MatrixXd grad;
  bool clamped = false;  // some probability hit kProbFloor
  bool skipped = false;  // batch too small for the loss to apply
};

/// Mean over rows of -log probs[i, labels[i]]. Rows with a negative label are
/// ignored and not counted. Empty input gives 0.
double loss_high(const Eigen::MatrixXd& probs, const std::vector<int>& labels);
/// Gradient is with respect to the logits that produced `probs`.
LossWithGrad loss_high_with_grad(const Eigen::MatrixXd& probs, const std::vector<int>& labels);

/// Proposal soft training: (1/N) sum_i sum_c -target[i,c] log student[i,c],
/// over every output including background. `teacher_probs` is a constant.
double loss_pst(const Eigen::MatrixXd& student_probs, const Eigen::MatrixXd& teacher_probs);
/// Gradient is with respect to the student logits.
LossWithGrad loss_pst_with_grad(const Eigen::MatrixXd& student_probs,
                                const Eigen::MatrixXd& teacher_probs);

/// For every box, the index of the other box with the largest IoU (ties and the
/// all-disjoint case resolve to the lowest index). Requires at least two boxes.
std::vector<std::size_t> nearest_neighbor(const std::vector<BBox>& boxes);

enum class MixupStrategy { kIou, kRandom, kCls, kIouStudent, kRandomStudent, kClsStudent };

const char* to_string(MixupStrategy s);
MixupStrategy parse_mixup_strategy(const std::string& s);
/// The "-" variants mix with (and contrast against) the student's own
/// neighbor feature instead of the teacher's.
bool partner_from_student(MixupStrategy s);

/// Picks the mixup partner A_i of every proposal.
///   iou:    nearest_neighbor(boxes)
///   random: uniform over j != i, drawn from `rng`
///   cls:    argmax over j != i of the cosine similarity of class_probs rows
std::vector<std::size_t> select_partners(MixupStrategy strategy, const std::vector<BBox>& boxes,
                                         const Eigen::MatrixXd& class_probs, Rng& rng);

/// Low-confidence proposals with paired student/teacher embeddings.
struct ProposalBatch {
  std::vector<BBox> boxes;
  Eigen::MatrixXd student_features;  // N_p x h
  Eigen::MatrixXd teacher_features;  // N_p x h
  std::vector<std::size_t> neighbors;
  std::vector<double> weights;
  Eigen::MatrixXd mixed;
  bool partner_from_student = false;

  std::size_t size() const { return boxes.size(); }
  /// Row i of the key paired with proposal i: teacher (or student) feature of A_i.
  Eigen::MatrixXd partner_features() const;
};

/// w_i = iou(T_i, T_{A_i}); f'_i = (1 - w_i) f^s_i + w_i f^t_{A_i}.
void iou_mixup(ProposalBatch& batch);

/// Adjacent-proposal contrastive consistency. Query f'_i, positives f^s_i and
/// f^t_{A_i} weighted by (1 - w_i) and w_i, denominator over all student
/// features. Returns 0 with `skipped` when N_p < 2.
///
/// With `key_in_denominator` the partner key f^t_{A_i} also joins the softmax
/// denominator of row i. Without it the partner term is not bounded below and
/// the student can lower the loss indefinitely by pushing its own features
/// away from every query.
double loss_lscl(const ProposalBatch& batch, double tau, bool key_in_denominator = false);
/// Gradient is with respect to `student_features` (rows N_p x h). When the
/// partner comes from the student, its contribution is folded in as well.
LossWithGrad loss_lscl_with_grad(const ProposalBatch& batch, double tau,
                                 bool key_in_denominator = false);

double total_loss(double l_high, double l_pst, double l_lscl, double lambda_pst,
                  double lambda_lscl);

struct LossReport {
  double l_high = 0.0;
  double l_pst = 0.0;
  double l_lscl = 0.0;
  double l_total = 0.0;
  double lambda_pst = 1.0;
  double lambda_lscl = 0.1;
  double tau = 0.07;
  std::size_t num_matched = 0;
  bool lscl_skipped = true;
  bool prob_clamped = false;
};

struct ObjectiveWeights {
  double lambda_pst = 1.0;
  double lambda_lscl = 0.1;
  double tau = 0.07;
  bool use_pst = true;
  bool use_lscl = true;
  bool normalize_contrastive = false;
  bool lscl_key_in_denominator = false;
};

/// Everything needed to evaluate one adaptation step's objective for a fixed
/// student input. Teacher quantities are constants.
struct StepInputs {
  Eigen::MatrixXd features;             // student view, one row per proposal
  std::vector<int> hard_labels;         // per proposal; negative = excluded from L_h
  std::vector<std::size_t> matched;     // proposals matched to low-band pseudo-labels
  std::vector<BBox> matched_boxes;      // boxes of `matched`, same order
  Eigen::MatrixXd teacher_probs;        // rows aligned with `matched`
  Eigen::MatrixXd teacher_embedding;    // rows aligned with `matched`
  std::vector<std::size_t> partners;    // A_i, indices into `matched`
  bool partner_from_student = false;
};

/// L_total = L_h + lambda_pst * L_pst + lambda_lscl * L_lscl. When `grads` is
/// non-null the parameter gradient is written there (overwritten). Terms with
/// a zero weight, or disabled, contribute no gradient.
LossReport evaluate_objective(const ModelParams& student, const StepInputs& inputs,
                              const ObjectiveWeights& weights, ModelParams* grads);

/// Row-wise L2 normalization and its backward pass.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& x);
Eigen::MatrixXd normalize_rows_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& d_normalized);

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  std::size_t max_coords = 0;  // 0 checks every coordinate
  std::uint64_t seed = 0;
  std::size_t report_worst = 5;
};

struct GradCheckEntry {
  std::size_t coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  std::vector<GradCheckEntry> worst;  // descending rel_err
  bool passed = true;

  /// "coordinate,analytic,numeric,rel_err" rows.
  void write(std::ostream& os) const;
};

/// Compares `analytic` with central differences (L(p+h e) - L(p-h e)) / 2h.
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckReport grad_check(const std::function<double(const ModelParams&)>& loss,
                           const ModelParams& params, const ModelParams& analytic,
                           const GradCheckOptions& options);

}  // namespace lpu
