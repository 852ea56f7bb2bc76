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


#include "lpu/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "lpu/error.hpp"

namespace lpu {
namespace {

constexpr std::uint64_t kAppearanceStream = 0xA77E;
constexpr std::uint64_t kDistractorAppearanceStream = 0xD157;
constexpr std::uint64_t kFadeStream = 0xFADE;

Eigen::VectorXd normal_vector(int n, double sigma, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = sigma * normal(rng);
  return v;
}

Eigen::VectorXd object_appearance(const DomainConfig& cfg, const Scene& scene,
                                  std::size_t object_index) {
  if (cfg.feature_noise_sigma == 0.0) return Eigen::VectorXd::Zero(cfg.feature_dim);
  Rng rng = make_rng(scene.seed, {kAppearanceStream, object_index});
  return normal_vector(cfg.feature_dim, cfg.feature_noise_sigma, rng);
}

double object_fade(const DomainConfig& cfg, const Scene& scene, std::size_t object_index) {
  if (scene.domain != Domain::kTarget || cfg.object_fade_max == 0.0) return 0.0;
  Rng rng = make_rng(scene.seed, {kFadeStream, object_index});
  return std::uniform_real_distribution<double>(0.0, cfg.object_fade_max)(rng);
}

Eigen::VectorXd distractor_appearance(const DomainConfig& cfg, const Scene& scene,
                                      std::size_t index) {
  const SceneObject& d = scene.distractors[index];
  Eigen::VectorXd f = cfg.distractor_blend * cfg.prototypes.row(d.category).transpose() +
                      (1.0 - cfg.distractor_blend) * cfg.prototypes.row(cfg.background()).transpose();
  if (cfg.feature_noise_sigma == 0.0) return f;
  Rng rng = make_rng(scene.seed, {kDistractorAppearanceStream, index});
  return f + normal_vector(cfg.feature_dim, cfg.feature_noise_sigma, rng);
}

}  // namespace

const char* to_string(Domain d) { return d == Domain::kSource ? "source" : "target"; }

Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::kSource;
  if (s == "target") return Domain::kTarget;
  throw std::invalid_argument("unknown domain tag '" + s + "'");
}

void DomainConfig::validate() const {
  if (num_categories < 1) throw std::invalid_argument("num_categories must be >= 1");
  if (feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
  if (prototypes.rows() != num_outputs() || prototypes.cols() != feature_dim)
    throw std::invalid_argument("prototypes must be (C+1) x d");
  if (domain_offset.size() != feature_dim)
    throw std::invalid_argument("domain_offset must have length d");
  if (!(weak_aug_sigma >= 0.0 && strong_aug_sigma >= weak_aug_sigma && feature_noise_sigma >= 0.0))
    throw std::invalid_argument("require strong_aug_sigma >= weak_aug_sigma >= 0");
  if (min_objects < 1 || max_objects < min_objects)
    throw std::invalid_argument("require 1 <= min_objects <= max_objects");
  if (!(min_object_size > 0.0 && max_object_size >= min_object_size &&
        max_object_size <= std::min(scene_width, scene_height)))
    throw std::invalid_argument("object size range must fit the scene");
  if (min_distractors < 0 || max_distractors < min_distractors)
    throw std::invalid_argument("require 0 <= min_distractors <= max_distractors");
  if (!(distractor_blend >= 0.0 && distractor_blend <= 1.0))
    throw std::invalid_argument("distractor_blend must lie in [0, 1]");
  if (!(object_fade_max >= 0.0 && object_fade_max <= 1.0))
    throw std::invalid_argument("object_fade_max must lie in [0, 1]");
  double min_dist = std::numeric_limits<double>::infinity();
  for (int a = 0; a < prototypes.rows(); ++a)
    for (int b = a + 1; b < prototypes.rows(); ++b)
      min_dist = std::min(min_dist, (prototypes.row(a) - prototypes.row(b)).norm());
  if (!(min_dist > 0.0)) throw std::invalid_argument("prototypes must be pairwise distinct");
}

DomainConfig make_domain(const WorldParams& p, std::uint64_t seed) {
  DomainConfig cfg;
  cfg.num_categories = p.num_categories;
  cfg.feature_dim = p.feature_dim;
  Rng rng = make_rng(seed, {0xD0'0A1Eu});
  std::normal_distribution<double> normal(0.0, 1.0);
  cfg.prototypes.resize(p.num_categories + 1, p.feature_dim);
  for (Eigen::Index r = 0; r < cfg.prototypes.rows(); ++r)
    for (Eigen::Index c = 0; c < cfg.prototypes.cols(); ++c)
      cfg.prototypes(r, c) = p.prototype_scale * normal(rng);
  if (!(p.offset_fade >= 0.0 && p.offset_fade <= 1.0))
    throw std::invalid_argument("offset_fade must lie in [0, 1]");
  Eigen::VectorXd random_dir = normal_vector(p.feature_dim, 1.0, rng);
  const Eigen::VectorXd fade_dir =
      (cfg.prototypes.row(p.num_categories) - cfg.prototypes.topRows(p.num_categories).colwise().mean())
          .transpose()
          .normalized();
  random_dir -= fade_dir * fade_dir.dot(random_dir);
  const Eigen::VectorXd dir =
      p.offset_fade * fade_dir + std::sqrt(1.0 - p.offset_fade * p.offset_fade) * random_dir.normalized();
  cfg.domain_offset = p.offset_norm > 0.0 ? Eigen::VectorXd(dir * p.offset_norm)
                                          : Eigen::VectorXd::Zero(p.feature_dim);
  cfg.feature_noise_sigma = p.feature_noise_sigma;
  cfg.weak_aug_sigma = p.weak_aug_sigma;
  cfg.strong_aug_sigma = p.strong_aug_sigma;
  cfg.scene_width = p.scene_width;
  cfg.scene_height = p.scene_height;
  cfg.min_objects = p.min_objects;
  cfg.max_objects = p.max_objects;
  cfg.min_object_size = p.min_object_size;
  cfg.max_object_size = p.max_object_size;
  cfg.min_distractors = p.min_distractors;
  cfg.max_distractors = p.max_distractors;
  cfg.distractor_blend = p.distractor_blend;
  cfg.source_distractors = p.source_distractors;
  cfg.object_fade_max = p.object_fade_max;
  cfg.validate();
  return cfg;
}

Scene generate_scene(const DomainConfig& cfg, Domain domain, std::uint64_t scene_seed) {
  Scene scene{domain, scene_seed, {}, {}};
  Rng rng = make_rng(scene_seed, {0x5CE7E});
  std::uniform_int_distribution<int> count(cfg.min_objects, cfg.max_objects);
  std::uniform_int_distribution<int> category(0, cfg.num_categories - 1);
  std::uniform_real_distribution<double> size(cfg.min_object_size, cfg.max_object_size);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = count(rng);
  // Objects (and distractors) overlap at most lightly so every one is
  // individually detectable.
  constexpr double kMaxObjectOverlap = 0.1;
  constexpr int kMaxAttempts = 64;
  auto crowded = [&](const BBox& box) {
    auto hit = [&](const SceneObject& o) { return iou(o.box, box) > kMaxObjectOverlap; };
    return std::any_of(scene.objects.begin(), scene.objects.end(), hit) ||
           std::any_of(scene.distractors.begin(), scene.distractors.end(), hit);
  };
  auto place = [&](std::vector<SceneObject>& into, int wanted) {
    for (int attempt = 0; attempt < kMaxAttempts && static_cast<int>(into.size()) < wanted;
         ++attempt) {
      const double w = size(rng);
      const double h = size(rng);
      const double x1 = unit(rng) * (cfg.scene_width - w);
      const double y1 = unit(rng) * (cfg.scene_height - h);
      SceneObject obj{category(rng), {x1, y1, x1 + w, y1 + h}};
      if (!crowded(obj.box)) into.push_back(obj);
    }
  };
  place(scene.objects, n);
  if (cfg.max_distractors > 0 && (domain == Domain::kTarget || cfg.source_distractors)) {
    std::uniform_int_distribution<int> n_distractors(cfg.min_distractors, cfg.max_distractors);
    place(scene.distractors, n_distractors(rng));
  }
  return scene;
}

Dataset generate_dataset(const DomainConfig& cfg, int n_source, int n_target, int n_eval,
                         std::uint64_t seed) {
  if (n_source < 1 || n_target < 1 || n_eval < 1)
    throw ContractViolation("dataset split sizes must be >= 1");
  auto split = [&](Domain domain, std::uint64_t split_id, int n) {
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      scenes.push_back(generate_scene(cfg, domain, derive_seed(seed, {split_id, std::uint64_t(i)})));
    return scenes;
  };
  return {split(Domain::kSource, 1, n_source), split(Domain::kTarget, 2, n_target),
          split(Domain::kTarget, 3, n_eval)};
}

BBox clip_box(const BBox& box, const BBox& extent) {
  auto clip_axis = [](double lo, double hi, double min_v, double max_v) {
    lo = std::clamp(lo, min_v, max_v);
    hi = std::clamp(hi, min_v, max_v);
    if (hi < lo) std::swap(lo, hi);
    if (hi - lo < kMinBoxSide) {
      hi = std::min(max_v, lo + kMinBoxSide);
      lo = hi - kMinBoxSide;
    }
    return std::pair{lo, hi};
  };
  const auto [x1, x2] = clip_axis(box.x1, box.x2, extent.x1, extent.x2);
  const auto [y1, y2] = clip_axis(box.y1, box.y2, extent.y1, extent.y2);
  return {x1, y1, x2, y2};
}

Eigen::VectorXd extract_feature(const DomainConfig& cfg, const Scene& scene, const BBox& box,
                                View view, Rng& rng) {
  if (!box.is_valid()) throw ContractViolation("extract_feature: invalid box");
  Eigen::VectorXd f = Eigen::VectorXd::Zero(cfg.feature_dim);
  double max_overlap = 0.0;
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    const auto& obj = scene.objects[k];
    const double overlap = iou(box, obj.box);
    if (overlap <= 0.0) continue;
    max_overlap = std::max(max_overlap, overlap);
    const double fade = object_fade(cfg, scene, k);
    f += overlap * ((1.0 - fade) * (cfg.prototypes.row(obj.category).transpose() +
                                    object_appearance(cfg, scene, k)) +
                    fade * cfg.prototypes.row(cfg.background()).transpose());
  }
  for (std::size_t k = 0; k < scene.distractors.size(); ++k) {
    const double overlap = iou(box, scene.distractors[k].box);
    if (overlap <= 0.0) continue;
    max_overlap = std::max(max_overlap, overlap);
    f += overlap * distractor_appearance(cfg, scene, k);
  }
  f += (1.0 - max_overlap) * cfg.prototypes.row(cfg.background()).transpose();
  if (scene.domain == Domain::kTarget) f += cfg.domain_offset;
  const double sigma = view == View::kWeak ? cfg.weak_aug_sigma : cfg.strong_aug_sigma;
  if (sigma > 0.0) f += normal_vector(cfg.feature_dim, sigma, rng);
  return f;
}

Eigen::MatrixXd extract_features(const DomainConfig& cfg, const Scene& scene,
                                 const std::vector<BBox>& boxes, View view, Rng& rng) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(boxes.size()), cfg.feature_dim);
  for (std::size_t i = 0; i < boxes.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = extract_feature(cfg, scene, boxes[i], view, rng);
  return out;
}

std::vector<Proposal> generate_proposals(const DomainConfig& cfg, const Scene& scene,
                                         const ProposalParams& params, Rng& rng) {
  if (params.n_jitter < 0 || params.n_random < 0 || params.jitter_sigma < 0.0)
    throw ContractViolation("generate_proposals: counts and jitter_sigma must be >= 0");
  std::vector<Proposal> out;
  const BBox extent = cfg.extent();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<SceneObject> anchors = scene.objects;
  anchors.insert(anchors.end(), scene.distractors.begin(), scene.distractors.end());
  for (const auto& obj : anchors) {
    const double w = obj.box.width();
    const double h = obj.box.height();
    for (int j = 0; j < params.n_jitter; ++j) {
      BBox b = obj.box;
      if (params.jitter_sigma > 0.0) {
        b.x1 += params.jitter_sigma * w * normal(rng);
        b.y1 += params.jitter_sigma * h * normal(rng);
        b.x2 += params.jitter_sigma * w * normal(rng);
        b.y2 += params.jitter_sigma * h * normal(rng);
      }
      out.push_back({clip_box(b, extent), ProposalOrigin::kJitteredGt});
    }
  }
  std::uniform_real_distribution<double> size(cfg.min_object_size, cfg.max_object_size);
  std::uniform_real_distribution<double> cx(0.0, cfg.scene_width);
  std::uniform_real_distribution<double> cy(0.0, cfg.scene_height);
  for (int j = 0; j < params.n_random; ++j) {
    const double w = size(rng);
    const double h = size(rng);
    const double x = cx(rng);
    const double y = cy(rng);
    out.push_back({clip_box({x - w / 2, y - h / 2, x + w / 2, y + h / 2}, extent),
                   ProposalOrigin::kRandom});
  }
  return out;
}

std::vector<BBox> boxes_of(const std::vector<Proposal>& proposals) {
  std::vector<BBox> boxes;
  boxes.reserve(proposals.size());
  for (const auto& p : proposals) boxes.push_back(p.box);
  return boxes;
}

void write_scenes(std::ostream& os, const std::vector<Scene>& scenes) {
  for (const auto& s : scenes) {
    os << to_string(s.domain) << ' ' << s.seed;
    for (const auto& o : s.objects)
      os << fmt::format(" {},{:.17g},{:.17g},{:.17g},{:.17g}", o.category, o.box.x1, o.box.y1,
                        o.box.x2, o.box.y2);
    for (const auto& o : s.distractors)
      os << fmt::format(" d{},{:.17g},{:.17g},{:.17g},{:.17g}", o.category, o.box.x1, o.box.y1,
                        o.box.x2, o.box.y2);
    os << '\n';
  }
}

std::vector<Scene> read_scenes(std::istream& is) {
  std::vector<Scene> scenes;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    Scene s;
    if (!(ls >> tag >> s.seed)) throw std::runtime_error(fmt::format("scene line {}: bad header", line_no));
    s.domain = parse_domain(tag);
    std::string tuple;
    while (ls >> tuple) {
      SceneObject o;
      char c1, c2, c3, c4;
      const bool distractor = !tuple.empty() && tuple[0] == 'd';
      std::istringstream ts(distractor ? tuple.substr(1) : tuple);
      if (!(ts >> o.category >> c1 >> o.box.x1 >> c2 >> o.box.y1 >> c3 >> o.box.x2 >> c4 >> o.box.y2) ||
          c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',' || !o.box.is_valid())
        throw std::runtime_error(fmt::format("scene line {}: bad object '{}'", line_no, tuple));
      (distractor ? s.distractors : s.objects).push_back(o);
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

void save_scenes(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_scenes(os, scenes);
}

std::vector<Scene> load_scenes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  return read_scenes(is);
}

}  // namespace lpu
