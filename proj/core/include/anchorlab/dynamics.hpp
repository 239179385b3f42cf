#pragma once

// Semantic-space probes taken during personalization: distances among the
// true noise, the subject prediction and the frozen anchor prediction on a
// fixed probe batch.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anchorlab/concepts.hpp"
#include "anchorlab/denoiser.hpp"
#include "anchorlab/diffusion.hpp"

namespace anchorlab {

enum class ProbeAnchorLatent {
  subject,  // anchor branch sees the same subject-derived z_t
  prior,    // anchor branch sees prior-set latents noised with the same (eps, t)
};

ProbeAnchorLatent parse_probe_anchor(const std::string& s);
std::string to_string(ProbeAnchorLatent p);

struct ProbeSet {
  Matrix z0;
  Matrix eps;
  std::vector<int> t;
  Matrix z_t;
  std::optional<Matrix> anchor_z_t;  // set in prior mode
};

// `size` probes with z0 drawn from the references and t stratified over `bins`
// equal-width timestep bins. In prior mode `prior_latents` supplies the class
// latents for the anchor branch.
ProbeSet make_probe_set(const World& world, const Schedule& sched, std::size_t size, int bins, std::uint64_t seed,
                        ProbeAnchorLatent mode = ProbeAnchorLatent::subject, const Matrix* prior_latents = nullptr);

struct DynamicsRecord {
  int step = 0;
  double d1 = 0.0;      // mean |eps - eps_theta(z_t, SUBJECT)|
  double d2 = 0.0;      // mean |eps_theta(z_t, SUBJECT) - eps_theta'(z_t, CLASS)|
  double d3 = 0.0;      // mean |eps - eps_theta'(z_t, CLASS)|
  double diff_b = 0.0;  // d1 - d3
  double diff_c = 0.0;  // d1 - d2
};

// The anchor branch always uses the frozen model, whatever the training method.
DynamicsRecord probe(const DenoiserModel& theta, const DenoiserModel& theta_prime, const ProbeSet& probes, int step);

// Mean of `field` over records whose step lies in the last `fraction` of the run.
double final_window_mean(const std::vector<DynamicsRecord>& records, double DynamicsRecord::*field,
                         double fraction = 0.2);

struct DriftEntry {
  std::string method;
  double final_d2 = 0.0;
  double final_d1 = 0.0;
  double initial_d1 = 0.0;
};

struct DriftSummary {
  std::vector<DriftEntry> ranked;  // ascending final-window D2

  const DriftEntry& get(const std::string& method) const;
};

// Throws ConfigError when fewer than two methods are given or their probe
// step schedules differ.
DriftSummary compare_drift(const std::map<std::string, std::vector<DynamicsRecord>>& records_by_method,
                           double fraction = 0.2);

inline const std::vector<std::string> kDynamicsHeader{"method", "seed", "step", "D1", "D2", "D3", "diff_b", "diff_c"};

std::vector<std::vector<std::string>> dynamics_rows(const std::string& method, std::uint64_t seed,
                                                    const std::vector<DynamicsRecord>& records);

struct DynamicsSeries {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<DynamicsRecord> records;
};

std::vector<DynamicsSeries> read_dynamics_csv(const std::filesystem::path& path);

// fig2 (D2), fig6a (D1), fig6b (diff_b) and fig6c (diff_c) line charts, one
// line per (method, seed) averaged over seeds per method.
void write_dynamics_figures(const std::vector<DynamicsSeries>& series, const std::filesystem::path& out_dir);

}  // namespace anchorlab
