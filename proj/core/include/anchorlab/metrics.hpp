#pragma once

// Analytic stand-ins for image-fidelity and prompt-alignment scores.
//
// fidelity_nn   mean over samples of exp(-distance to nearest reference),
//               after undoing the sampling context
// fidelity_mmd  1 - MMD_rbf(samples, references) / sqrt(2), clamped to [0, 1]
// alignment     fraction of samples whose class log-density in the sampling
//               context reaches the calibrated 5th-percentile threshold

#include <cstdint>
#include <string>
#include <vector>

#include "anchorlab/concepts.hpp"
#include "anchorlab/diffusion.hpp"

namespace anchorlab {

struct AlignmentThresholds {
  std::vector<std::vector<double>> tau;  // [class][context + 1]

  double at(int k, int context) const;
};

inline constexpr double kAlignmentQuantile = 0.05;
inline constexpr std::size_t kCalibrationSamples = 10000;

AlignmentThresholds calibrate_thresholds(const World& world, std::uint64_t seed,
                                         std::size_t n = kCalibrationSamples, double quantile = kAlignmentQuantile);

struct FidelityScores {
  double nn = 0.0;
  double mmd = 0.0;
};

double median_pairwise_distance(const Matrix& points);
double mmd_rbf(const Matrix& x, const Matrix& y, double bandwidth);

// Throws DimensionError on an empty sample set.
FidelityScores fidelity(const Matrix& samples, const World& world, int context);

double alignment(const Matrix& samples, const World& world, int k, int context, const AlignmentThresholds& thresholds);

std::string context_name(int context);  // "plain", "ctx0", ...
int parse_context_name(const std::string& s);

struct ContextScore {
  int context = -1;
  double fidelity_nn = 0.0;
  double fidelity_mmd = 0.0;
  double alignment = 0.0;
  std::size_t n = 0;
};

struct EvalReport {
  std::vector<ContextScore> contexts;
  double fidelity_nn = 0.0;  // means over evaluated contexts
  double fidelity_mmd = 0.0;
  double alignment = 0.0;
  std::size_t n_samples = 0;

  const ContextScore& score(int context) const;
  // Mean alignment over non-PLAIN contexts (the subject is only trained in PLAIN).
  double unseen_alignment() const;
};

struct EvalOptions {
  std::vector<int> contexts;  // empty: PLAIN plus every world context
  std::size_t n_per_context = 256;
  SamplerSpec sampler = SamplerSpec::ddpm();
};

// Samples `guidance.primary` (and `guidance.anchor`) re-targeted to each
// evaluation context and scores them. Samples of the SUBJECT are scored for
// alignment against its base class.
EvalReport evaluate_method(const DenoiserModel& model, const Schedule& sched, const World& world,
                           const AlignmentThresholds& thresholds, const GuidanceSpec& guidance,
                           const EvalOptions& options, std::uint64_t seed);

inline const std::vector<std::string> kMetricsHeader{"method", "w", "seed", "context", "fidelity_nn",
                                                     "fidelity_mmd", "alignment", "n"};

std::vector<std::vector<std::string>> metrics_rows(const std::string& method, double w, std::uint64_t seed,
                                                   const EvalReport& report);

}  // namespace anchorlab
