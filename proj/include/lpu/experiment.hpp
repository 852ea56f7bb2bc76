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
#include <cstdint>
#include <exception>
#include <functional>
#include <iosfwd>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lpu/adapt.hpp"
#include "lpu/metrics.hpp"
#include "lpu/synthworld.hpp"

namespace lpu {

/// Everything a run needs besides the seed.
struct ExperimentConfig {
  WorldParams world;
  int n_source = 200;
  int n_target = 100;
  int n_eval = 100;
  PretrainConfig pretrain;
  AdaptConfig adapt;
  ProposalParams eval_proposals;
  double eval_nms = 0.5;
};

// Flat "key = value" schema. Unknown keys and unparsable values throw
// ConfigError naming the key.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);
std::vector<std::string> config_keys();
/// Ordered (key, value) pairs for every setting.
std::vector<std::pair<std::string, std::string>> config_snapshot(const ExperimentConfig& cfg);
/// Reads a config file: '#' comments, blank lines, "key = value" lines.
void apply_config_stream(ExperimentConfig& cfg, std::istream& is, const std::string& origin);
void apply_config_file(ExperimentConfig& cfg, const std::string& path);
/// Parses "key=value" overrides.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);
/// Checks cross-field invariants; throws ConfigError.
void validate_config(const ExperimentConfig& cfg);

/// Per-seed world, data and source model.
struct SeedContext {
  std::uint64_t seed = 0;
  DomainConfig domain;
  Dataset data;
  ModelParams source_model;
};

SeedContext prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed);

/// Teacher-style evaluation on labeled scenes with fixed per-scene proposals.
EvalResult evaluate_model(const ModelParams& model, const DomainConfig& domain,
                          const std::vector<Scene>& scenes, const ExperimentConfig& cfg);

struct VariantRun {
  std::string config_id;
  std::uint64_t seed = 0;
  double source_map = 0.0;  // unadapted source model on the target eval split
  EvalResult final_eval;
  AdaptResult adapt;
};

/// Runs adaptation for one seed with `adapt` overriding cfg.adapt (its seed is
/// replaced by the run seed), logging the teacher every epoch.
VariantRun run_variant(const SeedContext& ctx, const ExperimentConfig& cfg,
                       const std::string& config_id, AdaptConfig adapt);

struct Variant {
  std::string id;
  AdaptConfig adapt;
};

/// Table-structured studies built on top of cfg.adapt:
///   "ablation":   mt, mt+pst, mt+lscl, mt+pst+lscl
///   "thresholds": single 0.8, single 0.1, lpu 1.0/0.1, lpu 0.8/0.1
///   "mixup":      iou, random, cls and their student-only variants
std::vector<Variant> study_variants(const std::string& study, const AdaptConfig& base);

/// Runs fn(i) for i in [0, n) over `jobs` worker threads and returns results
/// in index order, independent of completion order.
template <typename Fn>
auto parallel_map(std::size_t n, int jobs, Fn fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using R = decltype(fn(std::size_t{}));
  std::vector<R> out(n);
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(n, std::size_t(std::max(jobs, 1))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) out[i] = fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct StudyRow {
  std::string config_id;
  std::vector<double> maps;  // per seed, seed order
  double mean = 0.0;
  double stddev = 0.0;
};

struct StudyResult {
  std::vector<std::uint64_t> seeds;
  std::vector<double> source_maps;
  std::vector<StudyRow> rows;
  std::vector<VariantRun> runs;  // variant-major, then seed
};

/// Runs every variant over every seed; seeds are prepared once and shared.
StudyResult run_study(const ExperimentConfig& cfg, const std::vector<Variant>& variants,
                      const std::vector<std::uint64_t>& seeds, int jobs);

std::vector<std::uint64_t> seed_list(std::uint64_t first, int count);

// CSV writers. `manifest` is written as a leading "# manifest <hash>" line.
void write_epoch_log_header(std::ostream& os, int num_categories);
void write_epoch_log_rows(std::ostream& os, const VariantRun& run, int num_categories);
void write_study_summary(std::ostream& os, const StudyResult& result);
void write_study_seeds(std::ostream& os, const StudyResult& result);

/// 64-bit FNV-1a, hex encoded.
std::string content_hash(const std::string& data);

}  // namespace lpu
