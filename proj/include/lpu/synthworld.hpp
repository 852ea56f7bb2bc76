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

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lpu/geometry.hpp"
#include "lpu/rng.hpp"

namespace lpu {

enum class Domain { kSource, kTarget };
enum class View { kWeak, kStrong };

const char* to_string(Domain d);
Domain parse_domain(const std::string& s);

/// Knobs for building a DomainConfig from a seed.
struct WorldParams {
  int num_categories = 4;
  int feature_dim = 16;
  double prototype_scale = 1.0;  // per-coordinate std of prototype entries
  double offset_norm = 1.85;     // Euclidean length of the source->target shift
  // Share of the shift pointing from the mean foreground prototype towards the
  // background prototype (objects fade into background, as in fog); the rest
  // is a random orthogonal direction.
  double offset_fade = 0.9;
  // Target objects additionally fade towards the background by a per-object
  // share drawn uniformly from [0, object_fade_max] (uneven fog density).
  double object_fade_max = 0.0;
  double feature_noise_sigma = 0.3;
  double weak_aug_sigma = 0.1;
  double strong_aug_sigma = 0.15;
  double scene_width = 100.0;
  double scene_height = 100.0;
  int min_objects = 1;
  int max_objects = 4;
  double min_object_size = 12.0;
  double max_object_size = 36.0;
  // Unlabeled clutter: each distractor looks like a blend of one random
  // category prototype (weight distractor_blend) and the background prototype.
  int min_distractors = 2;
  int max_distractors = 5;
  double distractor_blend = 0.6;
  // False keeps source scenes clean: clutter the source model never saw.
  bool source_distractors = false;
};

/// Feature oracle and scene layout distribution. Row C of `prototypes` is the
/// background prototype.
struct DomainConfig {
  int num_categories = 4;
  int feature_dim = 16;
  Eigen::MatrixXd prototypes;
  Eigen::VectorXd domain_offset;
  double object_fade_max = 0.0;
  double feature_noise_sigma = 0.0;
  double weak_aug_sigma = 0.0;
  double strong_aug_sigma = 0.0;
  double scene_width = 100.0;
  double scene_height = 100.0;
  int min_objects = 1;
  int max_objects = 4;
  double min_object_size = 12.0;
  double max_object_size = 36.0;
  int min_distractors = 0;
  int max_distractors = 0;
  double distractor_blend = 0.5;
  bool source_distractors = true;

  int num_outputs() const { return num_categories + 1; }
  int background() const { return num_categories; }
  BBox extent() const { return {0.0, 0.0, scene_width, scene_height}; }

  /// Throws std::invalid_argument when an invariant does not hold.
  void validate() const;
};

DomainConfig make_domain(const WorldParams& params, std::uint64_t seed);

struct SceneObject {
  int category = 0;
  BBox box;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Scene {
  Domain domain = Domain::kSource;
  std::uint64_t seed = 0;
  std::vector<SceneObject> objects;
  // Never annotated; `category` names the prototype the distractor imitates.
  std::vector<SceneObject> distractors;

  friend bool operator==(const Scene&, const Scene&) = default;
};

enum class ProposalOrigin { kJitteredGt, kRandom };

struct Proposal {
  BBox box;
  ProposalOrigin origin = ProposalOrigin::kRandom;
};

struct ProposalParams {
  int n_jitter = 8;   // per ground-truth object and per distractor
  int n_random = 24;  // per scene
  double jitter_sigma = 0.15;  // relative to object width/height
};

struct Dataset {
  std::vector<Scene> source;
  std::vector<Scene> target;       // adaptation split; labels never read by training
  std::vector<Scene> target_eval;  // held out for metrics only
};

Scene generate_scene(const DomainConfig& cfg, Domain domain, std::uint64_t scene_seed);

/// Every scene draws from its own derived stream, so the result does not depend
/// on generation order.
Dataset generate_dataset(const DomainConfig& cfg, int n_source, int n_target, int n_eval,
                         std::uint64_t seed);

/// Smallest side length kept after clipping a box to the scene.
inline constexpr double kMinBoxSide = 1e-3;

BBox clip_box(const BBox& box, const BBox& extent);

/// IoU-weighted mixture of object and background prototypes, plus the domain
/// offset for target scenes, plus Gaussian noise whose scale depends on `view`.
/// Per-object appearance variation (feature_noise_sigma) is a fixed function of
/// the scene seed.
Eigen::VectorXd extract_feature(const DomainConfig& cfg, const Scene& scene, const BBox& box,
                                View view, Rng& rng);

/// Row i holds the feature of boxes[i].
Eigen::MatrixXd extract_features(const DomainConfig& cfg, const Scene& scene,
                                 const std::vector<BBox>& boxes, View view, Rng& rng);

std::vector<Proposal> generate_proposals(const DomainConfig& cfg, const Scene& scene,
                                         const ProposalParams& params, Rng& rng);

std::vector<BBox> boxes_of(const std::vector<Proposal>& proposals);

// Line-delimited text records: "<domain> <seed> <cat,x1,y1,x2,y2> ...", with
// distractors written as "d<cat>,x1,y1,x2,y2".
void write_scenes(std::ostream& os, const std::vector<Scene>& scenes);
std::vector<Scene> read_scenes(std::istream& is);
void save_scenes(const std::string& path, const std::vector<Scene>& scenes);
std::vector<Scene> load_scenes(const std::string& path);

}  // namespace lpu
