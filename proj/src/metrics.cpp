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


#include "lpu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

#include "lpu/error.hpp"
#include "lpu/pseudo.hpp"

namespace lpu {

EvalResult average_precision(const std::vector<EvalScene>& scenes, int num_categories,
                             double iou_threshold) {
  EvalResult result;
  const auto nc = static_cast<std::size_t>(num_categories);
  result.ap.assign(nc, std::numeric_limits<double>::quiet_NaN());
  result.num_gt.assign(nc, 0);
  result.num_det.assign(nc, 0);
  for (const auto& s : scenes) {
    for (const auto& g : s.ground_truth) ++result.num_gt.at(static_cast<std::size_t>(g.category));
    for (const auto& d : s.detections) ++result.num_det.at(static_cast<std::size_t>(d.category));
  }

  struct Ranked {
    std::size_t scene;
    std::size_t det;
    double confidence;
  };
  double ap_sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_categories; ++c) {
    const std::size_t n_gt = result.num_gt[static_cast<std::size_t>(c)];
    if (n_gt == 0) continue;
    std::vector<Ranked> ranked;
    for (std::size_t s = 0; s < scenes.size(); ++s)
      for (std::size_t k = 0; k < scenes[s].detections.size(); ++k)
        if (scenes[s].detections[k].category == c)
          ranked.push_back({s, k, scenes[s].detections[k].confidence});
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Ranked& a, const Ranked& b) { return a.confidence > b.confidence; });

    std::vector<std::vector<bool>> used(scenes.size());
    for (std::size_t s = 0; s < scenes.size(); ++s) used[s].assign(scenes[s].ground_truth.size(), false);

    // mrec/mpre carry the (0, 0) and (1, 0) sentinels of the VOC recipe.
    std::vector<double> mrec{0.0};
    std::vector<double> mpre{0.0};
    std::size_t tp = 0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const auto& gt = scenes[ranked[r].scene].ground_truth;
      const BBox& box = scenes[ranked[r].scene].detections[ranked[r].det].box;
      int best = -1;
      double best_iou = -1.0;
      for (std::size_t g = 0; g < gt.size(); ++g) {
        if (gt[g].category != c || used[ranked[r].scene][g]) continue;
        const double v = iou(box, gt[g].box);
        if (v > best_iou) {
          best_iou = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0 && best_iou >= iou_threshold) {
        used[ranked[r].scene][static_cast<std::size_t>(best)] = true;
        ++tp;
      }
      mrec.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
      mpre.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    }
    mrec.push_back(1.0);
    mpre.push_back(0.0);
    for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
    double ap = 0.0;
    for (std::size_t i = 1; i < mrec.size(); ++i)
      if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
    result.ap[static_cast<std::size_t>(c)] = ap;
    ap_sum += ap;
    ++present;
  }
  if (present == 0) throw std::invalid_argument("average_precision: no ground truth in any category");
  result.map = ap_sum / present;
  return result;
}

void write_eval_csv(std::ostream& os, const EvalResult& r) {
  os << "category,n_gt,n_det,ap\n";
  for (std::size_t c = 0; c < r.ap.size(); ++c)
    os << fmt::format("{},{},{},{:.6f}\n", c, r.num_gt[c], r.num_det[c], r.ap[c]);
  os << fmt::format("mAP,,,{:.6f}\n", r.map);
}

std::vector<double> default_bin_edges() {
  std::vector<double> edges;
  for (int i = 0; i <= 10; ++i) edges.push_back(i / 10.0);
  return edges;
}

std::vector<BinAccuracy> make_bins(const std::vector<double>& edges) {
  if (edges.size() < 2) throw ContractViolation("bins need at least two edges");
  std::vector<BinAccuracy> bins;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    if (!(edges[i] < edges[i + 1])) throw ContractViolation("bin edges must increase");
    BinAccuracy b;
    b.lo = edges[i];
    b.hi = edges[i + 1];
    bins.push_back(b);
  }
  return bins;
}

void accumulate_assignment_bins(const std::vector<BBox>& proposals,
                                const std::vector<Detection>& pseudo,
                                const std::vector<SceneObject>& ground_truth, int num_categories,
                                double fg_iou_threshold, std::vector<BinAccuracy>& bins) {
  std::vector<Detection> gt_dets;
  for (const auto& g : ground_truth) gt_dets.push_back({g.box, g.category, 1.0, 0});
  const auto assigned = assign_labels_detailed(proposals, pseudo, fg_iou_threshold, num_categories);
  const auto oracle = assign_labels(proposals, gt_dets, fg_iou_threshold, num_categories);
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (assigned[i].matched < 0) continue;
    const double conf = pseudo[static_cast<std::size_t>(assigned[i].matched)].confidence;
    // Bins are (lo, hi]; the first bin also takes conf == lo.
    for (std::size_t b = 0; b < bins.size(); ++b) {
      if ((conf > bins[b].lo || (b == 0 && conf >= bins[b].lo)) && conf <= bins[b].hi) {
        ++bins[b].n;
        if (oracle[i] == assigned[i].label) ++bins[b].correct;
        break;
      }
    }
  }
  for (auto& b : bins)
    b.accuracy = b.n ? static_cast<double>(b.correct) / static_cast<double>(b.n)
                     : std::numeric_limits<double>::quiet_NaN();
}

std::vector<BinAccuracy> assignment_accuracy_bins(const ModelParams& teacher,
                                                  const DomainConfig& cfg,
                                                  const std::vector<Scene>& scenes,
                                                  const std::vector<double>& edges,
                                                  const BinDiagnosticOptions& opt) {
  auto bins = make_bins(edges);
  for (const auto& scene : scenes) {
    Rng rng = make_rng(opt.seed, {0xB1A5, scene.seed});
    const auto proposals = generate_proposals(cfg, scene, opt.proposals, rng);
    if (proposals.empty()) continue;
    const auto boxes = boxes_of(proposals);
    const auto dets = predict_detections(teacher, cfg, scene, proposals, View::kWeak,
                                         opt.nms_threshold, rng);
    accumulate_assignment_bins(boxes, dets, scene.objects, cfg.num_categories,
                               opt.fg_iou_threshold, bins);
  }
  return bins;
}

void write_bins_csv(std::ostream& os, const std::vector<BinAccuracy>& bins) {
  os << "bin_lo,bin_hi,n,accuracy\n";
  for (const auto& b : bins) {
    if (b.empty())
      os << fmt::format("{:.2f},{:.2f},0,absent\n", b.lo, b.hi);
    else
      os << fmt::format("{:.2f},{:.2f},{},{:.6f}\n", b.lo, b.hi, b.n, b.accuracy);
  }
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractViolation("spearman: need paired samples");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

BBox horizontal_shift_for_iou(const BBox& box, double target_iou) {
  if (!(target_iou > 0.0 && target_iou <= 1.0)) throw ContractViolation("target IoU must lie in (0, 1]");
  // (w - dx) / (w + dx) = target for a pure horizontal shift.
  const double dx = box.width() * (1.0 - target_iou) / (1.0 + target_iou);
  return {box.x1 + dx, box.y1, box.x2 + dx, box.y2};
}

std::vector<SlidePoint> slide_diagnostic(const ModelParams& model, const DomainConfig& cfg,
                                         const Scene& scene, const BBox& gt_box,
                                         const BBox& end_box, int steps, Rng& rng) {
  if (steps < 1) throw ContractViolation("slide_diagnostic: steps must be >= 1");
  std::vector<SlidePoint> curve;
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const BBox box = lerp(gt_box, end_box, t);
    const auto out = forward(model, extract_feature(cfg, scene, box, View::kWeak, rng));
    curve.push_back({s, box.x1 - gt_box.x1, out.probs.head(cfg.num_categories).maxCoeff()});
  }
  return curve;
}

double confidence_weighted_offset(const std::vector<SlidePoint>& curve) {
  double num = 0.0, den = 0.0;
  for (const auto& p : curve) {
    num += p.max_prob * p.offset;
    den += p.max_prob;
  }
  return den > 0.0 ? num / den : 0.0;
}

void write_slide_csv(std::ostream& os, const std::vector<SlidePoint>& curve) {
  os << "step,offset,max_prob\n";
  for (const auto& p : curve) os << fmt::format("{},{:.6f},{:.6f}\n", p.step, p.offset, p.max_prob);
}

}  // namespace lpu
