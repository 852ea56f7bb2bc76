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

#include <sstream>
#include <stdexcept>

#include <gtest/gtest.h>

#include "lpu/error.hpp"

namespace lpu {
namespace {

DomainConfig noiseless_domain() {
  WorldParams p;
  p.feature_noise_sigma = 0.0;
  p.weak_aug_sigma = 0.0;
  p.strong_aug_sigma = 0.0;
  return make_domain(p, 3);
}

Scene one_object_scene(Domain domain) {
  Scene s;
  s.domain = domain;
  s.seed = 77;
  s.objects.push_back({2, {10, 10, 30, 30}});
  return s;
}

TEST(MakeDomainTest, ShapesAndOffsetNorm) {
  WorldParams p;
  p.offset_norm = 2.5;
  const auto cfg = make_domain(p, 1);
  EXPECT_EQ(cfg.prototypes.rows(), p.num_categories + 1);
  EXPECT_EQ(cfg.prototypes.cols(), p.feature_dim);
  EXPECT_NEAR(cfg.domain_offset.norm(), 2.5, 1e-12);
  EXPECT_EQ(cfg.background(), p.num_categories);
}

TEST(MakeDomainTest, FullFadePointsFromForegroundToBackground) {
  WorldParams p;
  p.offset_fade = 1.0;
  const auto cfg = make_domain(p, 9);
  const Eigen::VectorXd dir =
      (cfg.prototypes.row(p.num_categories) - cfg.prototypes.topRows(p.num_categories).colwise().mean())
          .transpose()
          .normalized();
  EXPECT_NEAR(cfg.domain_offset.normalized().dot(dir), 1.0, 1e-12);
}

TEST(MakeDomainTest, ZeroOffsetNorm) {
  WorldParams p;
  p.offset_norm = 0.0;
  EXPECT_TRUE(make_domain(p, 2).domain_offset.isZero());
}

TEST(MakeDomainTest, RejectsBadParams) {
  WorldParams p;
  p.strong_aug_sigma = 0.01;  // below weak
  EXPECT_THROW(make_domain(p, 1), std::invalid_argument);
  p = WorldParams{};
  p.offset_fade = 1.5;
  EXPECT_THROW(make_domain(p, 1), std::invalid_argument);
  p = WorldParams{};
  p.max_objects = 0;
  EXPECT_THROW(make_domain(p, 1), std::invalid_argument);
  p = WorldParams{};
  p.min_distractors = 3;
  p.max_distractors = 1;
  EXPECT_THROW(make_domain(p, 1), std::invalid_argument);
}

TEST(ExtractFeatureTest, DisjointSourceBoxIsBackgroundPrototype) {
  const auto cfg = noiseless_domain();
  const Scene s = one_object_scene(Domain::kSource);
  Rng rng(1);
  const Eigen::VectorXd f = extract_feature(cfg, s, {60, 60, 80, 80}, View::kWeak, rng);
  EXPECT_EQ(f, Eigen::VectorXd(cfg.prototypes.row(cfg.background()).transpose()));
}

TEST(ExtractFeatureTest, ExactObjectBoxIsCategoryPrototype) {
  const auto cfg = noiseless_domain();
  const Scene s = one_object_scene(Domain::kSource);
  Rng rng(1);
  const Eigen::VectorXd f = extract_feature(cfg, s, s.objects[0].box, View::kStrong, rng);
  EXPECT_TRUE(f.isApprox(Eigen::VectorXd(cfg.prototypes.row(2).transpose()), 1e-14));
}

TEST(ExtractFeatureTest, HalfOverlapMixesPrototypes) {
  const auto cfg = noiseless_domain();
  const Scene s = one_object_scene(Domain::kSource);
  Rng rng(1);
  // Box covering the right half of the object plus as much empty area: IoU 1/3.
  const Eigen::VectorXd f = extract_feature(cfg, s, {20, 10, 40, 30}, View::kWeak, rng);
  const Eigen::VectorXd expected = (1.0 / 3.0) * cfg.prototypes.row(2).transpose() +
                                   (2.0 / 3.0) * cfg.prototypes.row(cfg.background()).transpose();
  EXPECT_TRUE(f.isApprox(expected, 1e-12));
}

TEST(ExtractFeatureTest, TargetAddsDomainOffsetOnly) {
  WorldParams p;
  p.feature_noise_sigma = 0.5;
  const auto cfg = make_domain(p, 4);
  const Scene src = one_object_scene(Domain::kSource);
  Scene tgt = src;
  tgt.domain = Domain::kTarget;
  for (const BBox b : {BBox{12, 9, 31, 28}, BBox{50, 50, 70, 90}}) {
    Rng r1(42), r2(42);
    const Eigen::VectorXd fs = extract_feature(cfg, src, b, View::kStrong, r1);
    const Eigen::VectorXd ft = extract_feature(cfg, tgt, b, View::kStrong, r2);
    EXPECT_TRUE((ft - fs).isApprox(cfg.domain_offset, 1e-12));
  }
}

TEST(ExtractFeatureTest, ObjectFadeStaysOnSegmentTowardsBackground) {
  WorldParams p;
  p.feature_noise_sigma = 0.0;
  p.weak_aug_sigma = 0.0;
  p.strong_aug_sigma = 0.0;
  p.object_fade_max = 0.6;
  const auto cfg = make_domain(p, 3);
  const Eigen::VectorXd proto = cfg.prototypes.row(2).transpose();
  const Eigen::VectorXd bg = cfg.prototypes.row(cfg.background()).transpose();
  double lo = 1.0, hi = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Scene s = one_object_scene(Domain::kTarget);
    s.seed = seed;
    Rng rng(1);
    const Eigen::VectorXd f = extract_feature(cfg, s, s.objects[0].box, View::kWeak, rng) - cfg.domain_offset;
    // f = (1 - u) proto + u bg for some u in [0, 0.6].
    const double u = (proto - f).dot(proto - bg) / (proto - bg).squaredNorm();
    EXPECT_TRUE(f.isApprox((1.0 - u) * proto + u * bg, 1e-12));
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  EXPECT_GE(lo, 0.0);
  EXPECT_LE(hi, 0.6);
  EXPECT_GT(hi - lo, 0.3);  // genuinely varies across scenes
  Rng rng(1);
  const Scene src = one_object_scene(Domain::kSource);
  EXPECT_TRUE(extract_feature(cfg, src, src.objects[0].box, View::kWeak, rng).isApprox(proto, 1e-14));
}

TEST(ExtractFeatureTest, StrongViewIsNoisierThanWeak) {
  const auto cfg = make_domain(WorldParams{}, 5);
  const Scene s = one_object_scene(Domain::kSource);
  Rng rw(1), rs(1), rz(1);
  DomainConfig clean = cfg;
  clean.weak_aug_sigma = clean.strong_aug_sigma = 0.0;
  const Eigen::VectorXd base = extract_feature(clean, s, s.objects[0].box, View::kWeak, rz);
  double weak = 0.0, strong = 0.0;
  for (int i = 0; i < 200; ++i) {
    weak += (extract_feature(cfg, s, s.objects[0].box, View::kWeak, rw) - base).squaredNorm();
    strong += (extract_feature(cfg, s, s.objects[0].box, View::kStrong, rs) - base).squaredNorm();
  }
  const double d = cfg.feature_dim * 200.0;
  EXPECT_NEAR(weak / d, cfg.weak_aug_sigma * cfg.weak_aug_sigma, 0.002);
  EXPECT_NEAR(strong / d, cfg.strong_aug_sigma * cfg.strong_aug_sigma, 0.02);
}

TEST(ExtractFeatureTest, RejectsInvalidBox) {
  const auto cfg = noiseless_domain();
  Rng rng(1);
  EXPECT_THROW(extract_feature(cfg, one_object_scene(Domain::kSource), {5, 5, 5, 9}, View::kWeak, rng),
               ContractViolation);
}

TEST(GenerateSceneTest, ObjectsRespectLayoutRules) {
  WorldParams p;
  p.max_distractors = 2;
  const auto cfg = make_domain(p, 6);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Scene s = generate_scene(cfg, Domain::kTarget, seed);
    ASSERT_GE(s.objects.size(), 1u);
    ASSERT_LE(s.objects.size(), std::size_t(cfg.max_objects));
    std::vector<SceneObject> all = s.objects;
    all.insert(all.end(), s.distractors.begin(), s.distractors.end());
    for (std::size_t a = 0; a < all.size(); ++a) {
      EXPECT_GE(all[a].box.x1, 0.0);
      EXPECT_LE(all[a].box.x2, cfg.scene_width);
      EXPECT_GE(all[a].box.width(), cfg.min_object_size);
      EXPECT_LE(all[a].box.width(), cfg.max_object_size);
      EXPECT_GE(all[a].category, 0);
      EXPECT_LT(all[a].category, cfg.num_categories);
      for (std::size_t b = a + 1; b < all.size(); ++b) EXPECT_LE(iou(all[a].box, all[b].box), 0.1);
    }
  }
}

TEST(GenerateSceneTest, TargetOnlyDistractors) {
  WorldParams p;
  p.min_distractors = 1;
  p.max_distractors = 2;
  p.source_distractors = false;
  const auto cfg = make_domain(p, 6);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    EXPECT_TRUE(generate_scene(cfg, Domain::kSource, seed).distractors.empty());
    EXPECT_FALSE(generate_scene(cfg, Domain::kTarget, seed).distractors.empty());
  }
  // Objects come first from the scene stream, so they do not depend on the switch.
  p.source_distractors = true;
  const auto with = make_domain(p, 6);
  for (std::uint64_t seed = 0; seed < 50; ++seed)
    EXPECT_EQ(generate_scene(cfg, Domain::kSource, seed).objects,
              generate_scene(with, Domain::kSource, seed).objects);
}

TEST(GenerateDatasetTest, DeterministicAndSplitSized) {
  const auto cfg = make_domain(WorldParams{}, 7);
  const Dataset a = generate_dataset(cfg, 5, 4, 3, 99);
  const Dataset b = generate_dataset(cfg, 5, 4, 3, 99);
  EXPECT_EQ(a.source, b.source);
  EXPECT_EQ(a.target, b.target);
  EXPECT_EQ(a.target_eval, b.target_eval);
  EXPECT_EQ(a.source.size(), 5u);
  EXPECT_EQ(a.target.size(), 4u);
  EXPECT_EQ(a.target_eval.size(), 3u);
  for (const auto& s : a.target) EXPECT_EQ(s.domain, Domain::kTarget);
  // A longer split begins with the same scenes.
  const Dataset c = generate_dataset(cfg, 8, 4, 3, 99);
  EXPECT_TRUE(std::equal(a.source.begin(), a.source.end(), c.source.begin()));
  EXPECT_NE(generate_dataset(cfg, 5, 4, 3, 100).source, a.source);
  EXPECT_THROW(generate_dataset(cfg, 0, 1, 1, 1), ContractViolation);
}

TEST(GenerateProposalsTest, CountsAndValidity) {
  WorldParams p;
  p.max_distractors = 2;
  const auto cfg = make_domain(p, 8);
  ProposalParams pp;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Scene s = generate_scene(cfg, Domain::kSource, seed);
    Rng rng(seed);
    const auto props = generate_proposals(cfg, s, pp, rng);
    EXPECT_EQ(props.size(),
              std::size_t(pp.n_jitter) * (s.objects.size() + s.distractors.size()) + std::size_t(pp.n_random));
    for (const auto& pr : props) {
      EXPECT_TRUE(pr.box.is_valid());
      EXPECT_GE(pr.box.x1, 0.0);
      EXPECT_LE(pr.box.y2, cfg.scene_height);
    }
  }
}

TEST(GenerateProposalsTest, ZeroJitterReproducesObjects) {
  const auto cfg = make_domain(WorldParams{}, 8);
  const Scene s = generate_scene(cfg, Domain::kSource, 3);
  ProposalParams pp{2, 0, 0.0};
  Rng rng(1);
  const auto props = generate_proposals(cfg, s, pp, rng);
  for (std::size_t k = 0; k < s.objects.size(); ++k) {
    EXPECT_EQ(props[2 * k].box, s.objects[k].box);
    EXPECT_EQ(props[2 * k].origin, ProposalOrigin::kJitteredGt);
  }
  EXPECT_THROW(generate_proposals(cfg, s, ProposalParams{-1, 0, 0.0}, rng), ContractViolation);
}

TEST(ClipBoxTest, ClampsAndKeepsMinimumSide) {
  const BBox extent{0, 0, 100, 100};
  EXPECT_EQ(clip_box({-5, 10, 20, 120}, extent), (BBox{0, 10, 20, 100}));
  const BBox outside = clip_box({120, 120, 130, 140}, extent);
  EXPECT_TRUE(outside.is_valid());
  EXPECT_NEAR(outside.width(), kMinBoxSide, 1e-12);
}

TEST(SceneIoTest, RoundTripIsExact) {
  WorldParams p;
  p.max_distractors = 2;
  const auto cfg = make_domain(p, 10);
  const Dataset d = generate_dataset(cfg, 6, 6, 1, 5);
  std::vector<Scene> scenes = d.source;
  scenes.insert(scenes.end(), d.target.begin(), d.target.end());
  std::stringstream ss;
  write_scenes(ss, scenes);
  EXPECT_EQ(read_scenes(ss), scenes);
}

TEST(SceneIoTest, RejectsMalformedLines) {
  std::istringstream bad_header("target\n");
  EXPECT_THROW(read_scenes(bad_header), std::runtime_error);
  std::istringstream bad_object("source 4 1,2,3\n");
  EXPECT_THROW(read_scenes(bad_object), std::runtime_error);
  std::istringstream bad_domain("moon 4\n");
  EXPECT_THROW(read_scenes(bad_domain), std::invalid_argument);
  std::istringstream comment("# note\n\nsource 4 0,1,1,2,2\n");
  EXPECT_EQ(read_scenes(comment).size(), 1u);
}

}  // namespace
}  // namespace lpu
