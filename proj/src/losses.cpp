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


#include "lpu/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

#include "lpu/error.hpp"

namespace lpu {
namespace {

double safe_log(double p, bool& clamped) {
  if (p < kProbFloor) {
    clamped = true;
    p = kProbFloor;
  }
  return std::log(p);
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double m = row.maxCoeff();
  return m + std::log((row.array() - m).exp().sum());
}

}  // namespace

LossWithGrad loss_high_with_grad(const Eigen::MatrixXd& probs, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows())
    throw ContractViolation("loss_high: one label per row required");
  LossWithGrad out;
  out.grad = Eigen::MatrixXd::Zero(probs.rows(), probs.cols());
  std::size_t counted = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    if (labels[i] >= probs.cols()) throw ContractViolation("loss_high: label out of range");
    ++counted;
  }
  if (counted == 0) return out;
  const double inv = 1.0 / static_cast<double>(counted);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    const auto r = static_cast<Eigen::Index>(i);
    out.value -= safe_log(probs(r, labels[i]), out.clamped);
    out.grad.row(r) = probs.row(r) * inv;
    out.grad(r, labels[i]) -= inv;
  }
  out.value *= inv;
  return out;
}

double loss_high(const Eigen::MatrixXd& probs, const std::vector<int>& labels) {
  return loss_high_with_grad(probs, labels).value;
}

LossWithGrad loss_pst_with_grad(const Eigen::MatrixXd& student_probs,
                                const Eigen::MatrixXd& teacher_probs) {
  if (student_probs.rows() != teacher_probs.rows() || student_probs.cols() != teacher_probs.cols())
    throw ContractViolation("loss_pst: student and teacher probabilities must have equal shape");
  LossWithGrad out;
  const Eigen::Index n = student_probs.rows();
  out.grad = Eigen::MatrixXd::Zero(n, student_probs.cols());
  if (n == 0) return out;
  const double inv = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < student_probs.cols(); ++c) {
      const double t = teacher_probs(i, c);
      if (t != 0.0) out.value -= t * safe_log(student_probs(i, c), out.clamped);
    }
    // d/dz of -sum_c t_c log softmax(z)_c is p * sum(t) - t.
    out.grad.row(i) = (student_probs.row(i) * teacher_probs.row(i).sum() - teacher_probs.row(i)) * inv;
  }
  out.value *= inv;
  return out;
}

double loss_pst(const Eigen::MatrixXd& student_probs, const Eigen::MatrixXd& teacher_probs) {
  return loss_pst_with_grad(student_probs, teacher_probs).value;
}

std::vector<std::size_t> nearest_neighbor(const std::vector<BBox>& boxes) {
  if (boxes.size() < 2) throw ContractViolation("nearest_neighbor: need at least two boxes");
  std::vector<std::size_t> out(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    std::size_t best = i == 0 ? 1 : 0;
    double best_iou = iou(boxes[i], boxes[best]);
    for (std::size_t j = best + 1; j < boxes.size(); ++j) {
      if (j == i) continue;
      const double v = iou(boxes[i], boxes[j]);
      if (v > best_iou) {
        best_iou = v;
        best = j;
      }
    }
    out[i] = best;
  }
  return out;
}

const char* to_string(MixupStrategy s) {
  switch (s) {
    case MixupStrategy::kIou: return "iou";
    case MixupStrategy::kRandom: return "random";
    case MixupStrategy::kCls: return "cls";
    case MixupStrategy::kIouStudent: return "iou-";
    case MixupStrategy::kRandomStudent: return "random-";
    case MixupStrategy::kClsStudent: return "cls-";
  }
  return "?";
}

MixupStrategy parse_mixup_strategy(const std::string& s) {
  for (auto m : {MixupStrategy::kIou, MixupStrategy::kRandom, MixupStrategy::kCls,
                 MixupStrategy::kIouStudent, MixupStrategy::kRandomStudent,
                 MixupStrategy::kClsStudent})
    if (s == to_string(m)) return m;
  throw std::invalid_argument("unknown mixup strategy '" + s + "'");
}

bool partner_from_student(MixupStrategy s) {
  return s == MixupStrategy::kIouStudent || s == MixupStrategy::kRandomStudent ||
         s == MixupStrategy::kClsStudent;
}

std::vector<std::size_t> select_partners(MixupStrategy strategy, const std::vector<BBox>& boxes,
                                         const Eigen::MatrixXd& class_probs, Rng& rng) {
  const std::size_t n = boxes.size();
  if (n < 2) throw ContractViolation("select_partners: need at least two proposals");
  switch (strategy) {
    case MixupStrategy::kIou:
    case MixupStrategy::kIouStudent:
      return nearest_neighbor(boxes);
    case MixupStrategy::kRandom:
    case MixupStrategy::kRandomStudent: {
      std::vector<std::size_t> out(n);
      std::uniform_int_distribution<std::size_t> pick(0, n - 2);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = pick(rng);
        out[i] = j >= i ? j + 1 : j;
      }
      return out;
    }
    case MixupStrategy::kCls:
    case MixupStrategy::kClsStudent: {
      if (class_probs.rows() != static_cast<Eigen::Index>(n))
        throw ContractViolation("select_partners: one probability row per proposal required");
      const Eigen::MatrixXd unit = normalize_rows(class_probs);
      const Eigen::MatrixXd sim = unit * unit.transpose();
      std::vector<std::size_t> out(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = i == 0 ? 1 : 0;
        for (std::size_t j = best + 1; j < n; ++j)
          if (j != i && sim(Eigen::Index(i), Eigen::Index(j)) > sim(Eigen::Index(i), Eigen::Index(best)))
            best = j;
        out[i] = best;
      }
      return out;
    }
  }
  throw ContractViolation("select_partners: unknown strategy");
}

Eigen::MatrixXd ProposalBatch::partner_features() const {
  const Eigen::MatrixXd& source = partner_from_student ? student_features : teacher_features;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(neighbors.size()), source.cols());
  for (std::size_t i = 0; i < neighbors.size(); ++i)
    out.row(Eigen::Index(i)) = source.row(Eigen::Index(neighbors[i]));
  return out;
}

void iou_mixup(ProposalBatch& batch) {
  const std::size_t n = batch.size();
  if (batch.neighbors.size() != n) throw ContractViolation("iou_mixup: neighbor list size mismatch");
  if (batch.student_features.rows() != Eigen::Index(n) || batch.teacher_features.rows() != Eigen::Index(n))
    throw ContractViolation("iou_mixup: feature rows must match the proposal count");
  batch.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.neighbors[i] >= n) throw ContractViolation("iou_mixup: neighbor index out of range");
    batch.weights[i] = iou(batch.boxes[i], batch.boxes[batch.neighbors[i]]);
  }
  const Eigen::MatrixXd partner = batch.partner_features();
  const Eigen::Map<const Eigen::VectorXd> w(batch.weights.data(), Eigen::Index(n));
  batch.mixed = (1.0 - w.array()).matrix().asDiagonal() * batch.student_features;
  batch.mixed += w.asDiagonal() * partner;
}

LossWithGrad loss_lscl_with_grad(const ProposalBatch& batch, double tau, bool key_in_denominator) {
  if (!(tau > 0.0)) throw ContractViolation("loss_lscl: tau must be > 0");
  LossWithGrad out;
  const Eigen::Index n = Eigen::Index(batch.size());
  out.grad = Eigen::MatrixXd::Zero(n, batch.student_features.cols());
  if (n < 2) {
    out.skipped = true;
    return out;
  }
  if (batch.weights.size() != batch.size() || batch.mixed.rows() != n)
    throw ContractViolation("loss_lscl: run iou_mixup before computing the loss");
  const Eigen::MatrixXd& s = batch.student_features;
  const Eigen::MatrixXd p = batch.partner_features();
  const Eigen::MatrixXd& q = batch.mixed;
  const Eigen::Map<const Eigen::VectorXd> w(batch.weights.data(), n);
  const Eigen::VectorXd keep = (1.0 - w.array()).matrix();

  const Eigen::MatrixXd logits = q * s.transpose() / tau;  // query i against student key j
  Eigen::MatrixXd soft(n, n);
  Eigen::VectorXd soft_key = Eigen::VectorXd::Zero(n);  // softmax mass on the partner key
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pos_partner = q.row(i).dot(p.row(i)) / tau;
    double lse = log_sum_exp(logits.row(i));
    if (key_in_denominator) {
      const double hi = std::max(lse, pos_partner);
      lse = hi + std::log(std::exp(lse - hi) + std::exp(pos_partner - hi));
      soft_key[i] = std::exp(pos_partner - lse);
    }
    soft.row(i) = (logits.row(i).array() - lse).exp();
    total += keep[i] * (logits(i, i) - lse) + w[i] * (pos_partner - lse);
  }
  out.value = -total / double(n);

  const double scale = -1.0 / (double(n) * tau);
  const Eigen::VectorXd key_weight = w - soft_key;
  const Eigen::MatrixXd d_q = scale * (keep.asDiagonal() * s + key_weight.asDiagonal() * p - soft * s);
  Eigen::MatrixXd d_s = scale * (keep.asDiagonal() * q - soft.transpose() * q);
  d_s += keep.asDiagonal() * d_q;
  if (batch.partner_from_student) {
    const Eigen::MatrixXd d_p = scale * (key_weight.asDiagonal() * q) + w.asDiagonal() * d_q;
    for (Eigen::Index i = 0; i < n; ++i) d_s.row(Eigen::Index(batch.neighbors[i])) += d_p.row(i);
  }
  out.grad = std::move(d_s);
  return out;
}

double loss_lscl(const ProposalBatch& batch, double tau, bool key_in_denominator) {
  return loss_lscl_with_grad(batch, tau, key_in_denominator).value;
}

double total_loss(double l_high, double l_pst, double l_lscl, double lambda_pst,
                  double lambda_lscl) {
  return l_high + lambda_pst * l_pst + lambda_lscl * l_lscl;
}

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double norm = x.row(i).norm();
    if (norm > 0.0) out.row(i) /= norm;
  }
  return out;
}

Eigen::MatrixXd normalize_rows_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& d_normalized) {
  Eigen::MatrixXd out = d_normalized;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double norm = x.row(i).norm();
    if (norm == 0.0) continue;
    const Eigen::RowVectorXd u = x.row(i) / norm;
    out.row(i) = (d_normalized.row(i) - u * u.dot(d_normalized.row(i))) / norm;
  }
  return out;
}

LossReport evaluate_objective(const ModelParams& student, const StepInputs& in,
                              const ObjectiveWeights& wts, ModelParams* grads) {
  const Eigen::Index n = in.features.rows();
  if (static_cast<Eigen::Index>(in.hard_labels.size()) != n)
    throw ContractViolation("evaluate_objective: one hard label per proposal required");
  const Eigen::Index np = Eigen::Index(in.matched.size());
  if (in.matched_boxes.size() != in.matched.size() || in.teacher_probs.rows() != np ||
      in.teacher_embedding.rows() != np)
    throw ContractViolation("evaluate_objective: matched proposal data misaligned");

  LossReport report;
  report.lambda_pst = wts.lambda_pst;
  report.lambda_lscl = wts.lambda_lscl;
  report.tau = wts.tau;
  report.num_matched = in.matched.size();

  const RoiBatch cache = forward_batch(student, in.features);
  Eigen::MatrixXd d_logits = Eigen::MatrixXd::Zero(n, student.num_outputs());
  Eigen::MatrixXd d_embedding = Eigen::MatrixXd::Zero(n, student.hidden_dim());

  const LossWithGrad high = loss_high_with_grad(cache.probs, in.hard_labels);
  report.l_high = high.value;
  report.prob_clamped = high.clamped;
  d_logits += high.grad;

  if (wts.use_pst && np > 0) {
    Eigen::MatrixXd student_probs(np, cache.probs.cols());
    for (Eigen::Index i = 0; i < np; ++i) student_probs.row(i) = cache.probs.row(Eigen::Index(in.matched[i]));
    const LossWithGrad pst = loss_pst_with_grad(student_probs, in.teacher_probs);
    report.l_pst = pst.value;
    report.prob_clamped = report.prob_clamped || pst.clamped;
    if (wts.lambda_pst != 0.0)
      for (Eigen::Index i = 0; i < np; ++i)
        d_logits.row(Eigen::Index(in.matched[i])) += wts.lambda_pst * pst.grad.row(i);
  }

  if (wts.use_lscl && np >= 2) {
    if (in.partners.size() != in.matched.size())
      throw ContractViolation("evaluate_objective: one partner per matched proposal required");
    Eigen::MatrixXd raw(np, student.hidden_dim());
    for (Eigen::Index i = 0; i < np; ++i) raw.row(i) = cache.embedding.row(Eigen::Index(in.matched[i]));
    ProposalBatch batch;
    batch.boxes = in.matched_boxes;
    batch.student_features = wts.normalize_contrastive ? normalize_rows(raw) : raw;
    batch.teacher_features =
        wts.normalize_contrastive ? normalize_rows(in.teacher_embedding) : in.teacher_embedding;
    batch.neighbors = in.partners;
    batch.partner_from_student = in.partner_from_student;
    iou_mixup(batch);
    LossWithGrad lscl = loss_lscl_with_grad(batch, wts.tau, wts.lscl_key_in_denominator);
    report.l_lscl = lscl.value;
    report.lscl_skipped = false;
    if (wts.lambda_lscl != 0.0) {
      if (wts.normalize_contrastive) lscl.grad = normalize_rows_backward(raw, lscl.grad);
      for (Eigen::Index i = 0; i < np; ++i)
        d_embedding.row(Eigen::Index(in.matched[i])) += wts.lambda_lscl * lscl.grad.row(i);
    }
  }

  report.l_total = total_loss(report.l_high, report.l_pst, report.l_lscl, wts.lambda_pst,
                              wts.lambda_lscl);
  if (grads) {
    *grads = student.zeros_like();
    backward(student, in.features, cache, d_logits, d_embedding, *grads);
  }
  return report;
}

void GradCheckReport::write(std::ostream& os) const {
  os << "coordinate,analytic,numeric,rel_err\n";
  for (const auto& e : worst)
    os << fmt::format("{},{:.10e},{:.10e},{:.3e}\n", e.coord, e.analytic, e.numeric, e.rel_err);
  os << fmt::format("# checked={} max_rel_err={:.3e} {}\n", coords_checked, max_rel_err,
                    passed ? "PASS" : "FAIL");
}

GradCheckReport grad_check(const std::function<double(const ModelParams&)>& loss,
                           const ModelParams& params, const ModelParams& analytic,
                           const GradCheckOptions& opt) {
  if (!(opt.step > 0.0)) throw ContractViolation("grad_check: step must be > 0");
  if (!params.same_shape(analytic)) throw ContractViolation("grad_check: gradient shape mismatch");
  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (opt.max_coords > 0 && opt.max_coords < coords.size()) {
    Rng rng = make_rng(opt.seed, {0x6C});
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opt.max_coords);
    std::sort(coords.begin(), coords.end());
  }
  GradCheckReport report;
  std::vector<GradCheckEntry> entries;
  ModelParams probe = params;
  for (std::size_t c : coords) {
    const double orig = probe.coord(c);
    probe.coord(c) = orig + opt.step;
    const double up = loss(probe);
    probe.coord(c) = orig - opt.step;
    const double down = loss(probe);
    probe.coord(c) = orig;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double a = analytic.coord(c);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    entries.push_back({c, a, numeric, std::abs(a - numeric) / denom});
  }
  report.coords_checked = entries.size();
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& x, const auto& y) { return x.rel_err > y.rel_err; });
  if (!entries.empty()) report.max_rel_err = entries.front().rel_err;
  report.passed = report.max_rel_err < opt.tolerance;
  entries.resize(std::min(entries.size(), opt.report_worst));
  report.worst = std::move(entries);
  return report;
}

}  // namespace lpu
