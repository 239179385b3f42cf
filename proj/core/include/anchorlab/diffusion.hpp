#pragma once

// Variance-preserving diffusion: schedules, forward noising, ancestral and
// deterministic samplers, guidance combinators and eps -> score conversion.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "anchorlab/denoiser.hpp"
#include "anchorlab/neural.hpp"

namespace anchorlab {

enum class ScheduleKind { linear, cosine };

ScheduleKind parse_schedule_kind(const std::string& s);
std::string to_string(ScheduleKind k);

// Index 0 is clean data (alpha=1, sigma=0); 1..T are noise levels.
struct Schedule {
  int total_steps = 0;
  ScheduleKind kind = ScheduleKind::cosine;
  std::vector<double> alpha_bar;  // alpha^2
  std::vector<double> alpha;
  std::vector<double> sigma;
  std::vector<double> beta;  // beta[0] = 0

  double alpha_at(int t) const { return alpha.at(static_cast<std::size_t>(t)); }
  double sigma_at(int t) const { return sigma.at(static_cast<std::size_t>(t)); }
};

Schedule make_schedule(int total_steps, ScheduleKind kind);

// alpha_t z0 + sigma_t eps
Vec forward_noise(std::span<const double> z0, int t, std::span<const double> eps, const Schedule& sched);

// Tweedie: score(z_t) = -eps_hat / sigma_t.
Vec eps_to_score(std::span<const double> eps_hat, int t, const Schedule& sched);

Vec cfg_combine(std::span<const double> eps_cond, std::span<const double> eps_uncond, double scale);

// lambda * eps_rare + (1 - lambda) * eps_freq, lambda in [0, 1].
Vec blend_guidance(std::span<const double> eps_rare, std::span<const double> eps_freq, double lambda);

// Ancestral DDPM update z_t -> z_{t-1}. Pass an empty `noise` to suppress
// the stochastic term; at t = 1 no noise is ever added.
Vec ddpm_step(std::span<const double> z_t, std::span<const double> eps_hat, int t, const Schedule& sched,
              std::span<const double> noise);

// Deterministic (eta = 0) DDIM update z_t -> z_{t_next}.
Vec ddim_step(std::span<const double> z_t, std::span<const double> eps_hat, int t, int t_next,
              const Schedule& sched);

// Descending "leading" grid t_0 > t_1 > ... > t_k = 0 for a k-step DDIM run,
// with t_i = (k - 1 - i) * T / k + 1. The chain starts one stride below T:
// at t = T the signal coefficient is ~1e-4, so an eps-predictor's error is
// amplified by sigma/alpha into the clean estimate.
std::vector<int> ddim_timesteps(int total_steps, int steps);

enum class GuidanceMode { none, cfg, blend, switching };

struct GuidanceSpec {
  GuidanceMode mode = GuidanceMode::none;
  double scale = 1.0;      // CFG
  double lambda = 0.5;     // BLEND weight on the primary condition
  double tau_frac = 0.6;   // SWITCH: anchor for the first ceil(tau * steps) steps
  ConditionToken primary;
  ConditionToken anchor;   // frequent concept (BLEND, SWITCH); unconditional for CFG is NULL

  void validate() const;

  static GuidanceSpec plain(ConditionToken c) { return {GuidanceMode::none, 1.0, 0.5, 0.6, c, c}; }
  static GuidanceSpec cfg(ConditionToken c, double g) { return {GuidanceMode::cfg, g, 0.5, 0.6, c, c}; }
  static GuidanceSpec blend(ConditionToken rare, ConditionToken freq, double lambda) {
    return {GuidanceMode::blend, 1.0, lambda, 0.6, rare, freq};
  }
  static GuidanceSpec switching(ConditionToken primary, ConditionToken anchor, double tau) {
    return {GuidanceMode::switching, 1.0, 0.5, tau, primary, anchor};
  }
};

enum class SamplerKind { ddpm, ddim };

struct SamplerSpec {
  SamplerKind kind = SamplerKind::ddpm;
  int ddim_steps = 50;

  static SamplerSpec ddpm() { return {SamplerKind::ddpm, 0}; }
  static SamplerSpec ddim(int steps) { return {SamplerKind::ddim, steps}; }
};

// Number of anchor-conditioned steps for SWITCH guidance over `steps` denoising steps.
int switch_anchor_steps(double tau_frac, int steps);

// Guided noise prediction for a batch at a single timestep. `step_index` is
// the 0-based position in the denoising loop (used by SWITCH).
Matrix guided_eps(const DenoiserModel& model, const Matrix& z, int t, const GuidanceSpec& g, int step_index,
                  int total_sampling_steps);

// Draws n samples. Chain i owns a generator seeded with seed ^ i, so results do
// not depend on how chains are batched. Throws StateError for an untrained model.
Matrix sample(const DenoiserModel& model, const Schedule& sched, const GuidanceSpec& guidance, std::size_t n,
              const SamplerSpec& sampler, std::uint64_t seed);

}  // namespace anchorlab
