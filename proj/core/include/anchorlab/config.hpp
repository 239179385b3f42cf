#pragma once

// Line-oriented run configuration:
//
//   # comment
//   world.seed = 7
//   personalize.method = anchored
//
// Unknown keys, malformed values and inconsistent w/lambda pairs are rejected
// with ConfigError before any computation starts.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "anchorlab/concepts.hpp"
#include "anchorlab/diffusion.hpp"
#include "anchorlab/metrics.hpp"
#include "anchorlab/objectives.hpp"
#include "anchorlab/personalize.hpp"

namespace anchorlab {

struct RunConfig {
  WorldOptions world;
  int total_steps = 200;
  ScheduleKind schedule = ScheduleKind::cosine;
  std::uint64_t run_seed = 0;

  PretrainOptions pretrain;

  ObjectiveConfig objective;
  PersonalizeOptions personalize;
  AdaptationOptions adaptation;
  double tau_frac = 0.6;
  std::size_t prior_size = kDefaultPriorSize;

  EvalOptions eval;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  std::vector<double> sweep_grid = kDefaultSweepGrid;

  Schedule make_schedule() const;
  void validate() const;
};

// Applies `section.key = value` lines on top of the defaults.
RunConfig parse_config(const std::string& text);
// Throws ConfigError naming the path when the file cannot be read.
RunConfig load_config(const std::filesystem::path& path);

}  // namespace anchorlab
