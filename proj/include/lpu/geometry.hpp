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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

namespace lpu {

/// Axis-aligned box in continuous scene coordinates. Valid boxes have
/// x2 > x1, y2 > y1 and finite corners; see is_valid().
template <typename Scalar>
struct BBoxT {
  Scalar x1{0};
  Scalar y1{0};
  Scalar x2{1};
  Scalar y2{1};

  Scalar width() const { return x2 - x1; }
  Scalar height() const { return y2 - y1; }
  Scalar area() const { return width() * height(); }

  bool is_valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
           std::isfinite(y2) && x2 > x1 && y2 > y1;
  }

  friend bool operator==(const BBoxT&, const BBoxT&) = default;
};

using BBox = BBoxT<double>;

/// Intersection over union. Symmetric, 1 for identical boxes, 0 when the
/// boxes do not overlap.
template <typename Scalar>
Scalar iou(const BBoxT<Scalar>& a, const BBoxT<Scalar>& b) {
  if (a == b) return Scalar(1);
  const Scalar iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const Scalar ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= Scalar(0) || ih <= Scalar(0)) return Scalar(0);
  const Scalar inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

template <typename Scalar>
struct ScoredBoxT {
  BBoxT<Scalar> box;
  Scalar score{0};
};

using ScoredBox = ScoredBoxT<double>;

/// Order of indices by descending score, ties by lower index.
template <typename Scalar>
std::vector<std::size_t> score_order(std::span<const ScoredBoxT<Scalar>> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  return order;
}

/// Greedy non-maximum suppression. A box is dropped when its IoU with an
/// already kept, higher-ranked box exceeds `iou_threshold`. Returns the kept
/// indices in descending score order.
template <typename Scalar>
std::vector<std::size_t> nms(std::span<const ScoredBoxT<Scalar>> dets, Scalar iou_threshold) {
  std::vector<std::size_t> kept;
  for (std::size_t idx : score_order(dets)) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return iou(dets[idx].box, dets[k].box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

template <typename Scalar>
std::vector<std::size_t> nms(const std::vector<ScoredBoxT<Scalar>>& dets, Scalar iou_threshold) {
  return nms(std::span<const ScoredBoxT<Scalar>>(dets), iou_threshold);
}

/// Linear interpolation between two boxes, t in [0, 1].
template <typename Scalar>
BBoxT<Scalar> lerp(const BBoxT<Scalar>& a, const BBoxT<Scalar>& b, Scalar t) {
  return {a.x1 + t * (b.x1 - a.x1), a.y1 + t * (b.y1 - a.y1), a.x2 + t * (b.x2 - a.x2),
          a.y2 + t * (b.y2 - a.y2)};
}

}  // namespace lpu
