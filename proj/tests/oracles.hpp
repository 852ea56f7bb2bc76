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


// Independent brute-force references used by the unit and acceptance suites.
// Each deliberately follows a different code path than the library routine it
// checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "lpu/detector.hpp"
#include "lpu/geometry.hpp"
#include "lpu/metrics.hpp"
#include "lpu/rng.hpp"

namespace lpu::oracle {

inline double box_iou(const BBox& a, const BBox& b) {
  // Intersection via explicit overlap intervals per axis.
  const double ox = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double oy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ox * oy;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return inter / uni;
}

/// Precomputed IoU matrix, then repeated argmax selection with elimination.
inline std::vector<std::size_t> nms(const std::vector<ScoredBox>& dets, double thr) {
  const std::size_t n = dets.size();
  std::vector<std::vector<double>> m(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m[i][j] = box_iou(dets[i].box, dets[j].box);
  std::vector<bool> alive(n, true);
  std::vector<std::size_t> kept;
  while (true) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i)
      if (alive[i] && (best == n || dets[i].score > dets[best].score)) best = i;
    if (best == n) break;
    kept.push_back(best);
    alive[best] = false;
    for (std::size_t i = 0; i < n; ++i)
      if (alive[i] && m[best][i] > thr) alive[i] = false;
  }
  return kept;
}

inline std::vector<std::size_t> nearest_neighbor(const std::vector<BBox>& boxes) {
  const std::size_t n = boxes.size();
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = -1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double v = box_iou(boxes[i], boxes[j]);
      if (v > best) {  // strict: first (lowest) index wins ties
        best = v;
        out[i] = j;
      }
    }
  }
  return out;
}

inline std::vector<int> assign_labels(const std::vector<BBox>& proposals,
                                      const std::vector<Detection>& pseudo, double thr,
                                      int background) {
  std::vector<int> out;
  for (const auto& p : proposals) {
    std::vector<double> ious;
    for (const auto& d : pseudo) ious.push_back(box_iou(p, d.box));
    if (ious.empty()) {
      out.push_back(background);
      continue;
    }
    const auto it = std::max_element(ious.begin(), ious.end());  // first max
    out.push_back(*it >= thr ? pseudo[std::size_t(it - ious.begin())].category : background);
  }
  return out;
}

/// AP by explicit enumeration of score cutoffs: for every prefix of the
/// ranking the matching is recomputed from scratch, and each true positive
/// contributes (1 / n_gt) times the best precision at any cutoff at or after it.
inline double average_precision_category(const std::vector<EvalScene>& scenes, int category,
                                         double thr) {
  struct Item {
    std::size_t scene, det;
    double conf;
  };
  std::vector<Item> items;
  std::size_t n_gt = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    for (const auto& g : scenes[s].ground_truth) n_gt += g.category == category;
    for (std::size_t k = 0; k < scenes[s].detections.size(); ++k)
      if (scenes[s].detections[k].category == category)
        items.push_back({s, k, scenes[s].detections[k].confidence});
  }
  if (n_gt == 0) return std::numeric_limits<double>::quiet_NaN();  // category absent
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.conf > b.conf; });
  const std::size_t n = items.size();
  std::vector<double> precision(n + 1, 0.0), recall(n + 1, 0.0);
  for (std::size_t cut = 1; cut <= n; ++cut) {
    std::vector<std::vector<bool>> used(scenes.size());
    for (std::size_t s = 0; s < scenes.size(); ++s) used[s].assign(scenes[s].ground_truth.size(), false);
    std::size_t tp = 0;
    for (std::size_t r = 0; r < cut; ++r) {
      const auto& sc = scenes[items[r].scene];
      int best = -1;
      double best_iou = -1.0;
      for (std::size_t g = 0; g < sc.ground_truth.size(); ++g) {
        if (sc.ground_truth[g].category != category || used[items[r].scene][g]) continue;
        const double v = box_iou(sc.detections[items[r].det].box, sc.ground_truth[g].box);
        if (v > best_iou) {
          best_iou = v;
          best = int(g);
        }
      }
      if (best >= 0 && best_iou >= thr) {
        used[items[r].scene][std::size_t(best)] = true;
        ++tp;
      }
    }
    precision[cut] = double(tp) / double(cut);
    recall[cut] = double(tp) / double(n_gt);
  }
  double ap = 0.0;
  for (std::size_t cut = 1; cut <= n; ++cut) {
    const double gain = recall[cut] - recall[cut - 1];
    if (gain <= 0.0) continue;
    double best_p = 0.0;
    for (std::size_t later = cut; later <= n; ++later) best_p = std::max(best_p, precision[later]);
    ap += gain * best_p;
  }
  return ap;
}

/// Contrastive loss written as plain nested loops over scalars, straight from
/// its definition (partner keys from the teacher unless `student_partner`).
inline double lscl_loss(const std::vector<std::vector<double>>& fs,
                        const std::vector<std::vector<double>>& ft,
                        const std::vector<std::size_t>& partner, const std::vector<double>& w,
                        double tau, bool student_partner = false, bool key_in_denominator = false) {
  const std::size_t n = fs.size(), h = fs[0].size();
  auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < h; ++k) acc += a[k] * b[k];
    return acc;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& key = student_partner ? fs[partner[i]] : ft[partner[i]];
    std::vector<double> q(h);
    for (std::size_t k = 0; k < h; ++k) q[k] = (1.0 - w[i]) * fs[i][k] + w[i] * key[k];
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(dot(q, fs[j]) / tau);
    if (key_in_denominator) denom += std::exp(dot(q, key) / tau);
    total += (1.0 - w[i]) * std::log(std::exp(dot(q, fs[i]) / tau) / denom) +
             w[i] * std::log(std::exp(dot(q, key) / tau) / denom);
  }
  return -total / double(n);
}

inline BBox random_box(Rng& rng, double extent = 100.0, double min_side = 2.0, double max_side = 40.0) {
  std::uniform_real_distribution<double> pos(0.0, extent - max_side);
  std::uniform_real_distribution<double> side(min_side, max_side);
  const double x = pos(rng), y = pos(rng);
  return {x, y, x + side(rng), y + side(rng)};
}

/// Random boxes clustered in a small area so overlaps are common.
inline BBox clustered_box(Rng& rng) { return random_box(rng, 40.0, 2.0, 20.0); }

}  // namespace lpu::oracle
