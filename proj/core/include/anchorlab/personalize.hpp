#pragma once

// Training loops: base-model pretraining and the four personalization methods
// (subject reconstruction, + prior preservation, frozen-anchor regularisation,
// and the self-anchored variant), all on low-rank deltas by default.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "anchorlab/concepts.hpp"
#include "anchorlab/denoiser.hpp"
#include "anchorlab/diffusion.hpp"
#include "anchorlab/dynamics.hpp"
#include "anchorlab/metrics.hpp"
#include "anchorlab/objectives.hpp"

namespace anchorlab {

DenoiserConfig denoiser_config_for(const World& world, const Schedule& sched);

struct PretrainOptions {
  int steps = 20000;
  std::size_t batch = 128;
  double lr = 1e-3;
  double final_lr_fraction = 0.1;  // cosine decay from lr to lr * fraction
  std::uint64_t seed = 0;
  double loss_ceiling = 1.5;  // on the mean loss of the final window
  int ceiling_window = 500;
};

struct LossRecord {
  int step = 0;
  LossBreakdown loss;  // batch means
};

inline const std::vector<std::string> kLossHeader{"step", "total", "recon", "anchor", "ppl"};
std::vector<std::vector<std::string>> loss_rows(const std::vector<LossRecord>& trace);

struct PretrainResult {
  DenoiserModel model;
  std::vector<LossRecord> trace;
};

// Throws DivergenceError on a non-finite loss or when the final-window mean
// loss exceeds options.loss_ceiling.
PretrainResult pretrain(const World& world, const Schedule& sched, const PretrainOptions& options);

struct AdaptationOptions {
  int rank = 4;
  double scale = 1.0;
  bool full_finetune = false;
  std::uint64_t seed = 0;  // low-rank down-projection init
};

struct ModelPair {
  DenoiserModel theta;
  DenoiserModel theta_prime;
  std::uint64_t theta_prime_checksum = 0;

  bool anchor_intact() const;
};

// theta_prime is a plain copy of the pretrained model. theta additionally
// gets a SUBJECT embedding copied from CLASS(base_class) and zero-initialised
// low-rank deltas (unless full_finetune).
ModelPair snapshot(const DenoiserModel& pretrained, int base_class, const AdaptationOptions& adaptation);

struct PriorSet {
  Matrix latents;
  std::uint64_t seed = 0;
  int base_class = 0;
};

inline constexpr std::size_t kDefaultPriorSize = 200;

// DDIM(50) samples under (CLASS k, PLAIN), guidance scale 1.
PriorSet build_prior_set(const DenoiserModel& theta_prime, const Schedule& sched, int k,
                         std::size_t m = kDefaultPriorSize, std::uint64_t seed = 0);

void save_prior_set(const PriorSet& prior, const std::filesystem::path& path);
PriorSet load_prior_set(const std::filesystem::path& path);

struct PersonalizeOptions {
  int steps = 1000;
  std::size_t batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int probe_every = 50;
  std::size_t probe_size = 256;
  int probe_bins = 8;
  ProbeAnchorLatent probe_anchor = ProbeAnchorLatent::subject;
};

struct PersonalizeResult {
  std::vector<DynamicsRecord> dynamics;
  std::vector<LossRecord> trace;
};

// Trains pair.theta in place. Only low-rank deltas and the SUBJECT embedding
// are updated unless the pair was built for full fine-tuning. Throws
// ConfigError for RECON_PPL without a prior set and DivergenceError on
// non-finite parameters.
PersonalizeResult personalize(ModelPair& pair, const World& world, const Schedule& sched,
                              const ObjectiveConfig& objective, const PersonalizeOptions& options,
                              const PriorSet* prior = nullptr);

// Guidance used to evaluate a personalized model. Method-level SWITCH
// guidance is selected separately via switching_guidance().
GuidanceSpec subject_guidance();
GuidanceSpec switching_guidance(int base_class, double tau_frac);

// Sampling seed used when evaluating a run trained with `run_seed`. Shared by
// every method so paired comparisons see the same sampler noise.
std::uint64_t evaluation_seed(std::uint64_t run_seed);

struct SweepCell {
  double w = 0.0;
  std::uint64_t seed = 0;
  EvalReport report;
  std::vector<DynamicsRecord> dynamics;
};

// One (w, seed) cell: fresh snapshot with deltas seeded from `seed`,
// ANCHORED personalization, evaluation. Cells are independent of each other.
SweepCell run_sweep_cell(const DenoiserModel& pretrained, const World& world, const Schedule& sched,
                         const AlignmentThresholds& thresholds, double w, std::uint64_t seed,
                         const AdaptationOptions& adaptation, const PersonalizeOptions& personalize_options,
                         const EvalOptions& eval_options);

inline const std::vector<double> kDefaultSweepGrid{0.0, 0.25, 0.5, 0.75, 1.0};

std::vector<SweepCell> run_ablation_wsweep(const DenoiserModel& pretrained, const World& world,
                                           const Schedule& sched, const AlignmentThresholds& thresholds,
                                           const std::vector<double>& grid, const std::vector<std::uint64_t>& seeds,
                                           const AdaptationOptions& adaptation,
                                           const PersonalizeOptions& personalize_options,
                                           const EvalOptions& eval_options);

}  // namespace anchorlab
