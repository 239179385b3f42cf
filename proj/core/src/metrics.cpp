#include "anchorlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "anchorlab/errors.hpp"
#include "anchorlab/io.hpp"

namespace anchorlab {

namespace {

double dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double mean_kernel(const Matrix& a, const Matrix& b, double gamma, bool same) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.rows; ++j) {
      if (same && i == j) {
        acc += 1.0;
        continue;
      }
      const double d = dist(a.row(i), b.row(j));
      acc += std::exp(-gamma * d * d);
    }
  }
  return acc / static_cast<double>(a.rows * b.rows);
}

Matrix invert_rows(const Matrix& samples, const World& world, int context) {
  Matrix out(samples.rows, samples.cols);
  for (std::size_t i = 0; i < samples.rows; ++i) {
    const Vec x = context_invert(world, context, samples.row(i));
    std::copy(x.begin(), x.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

double AlignmentThresholds::at(int k, int context) const {
  return tau.at(static_cast<std::size_t>(k)).at(static_cast<std::size_t>(context + 1));
}

AlignmentThresholds calibrate_thresholds(const World& world, std::uint64_t seed, std::size_t n, double quantile) {
  if (n == 0 || !(quantile >= 0.0 && quantile < 1.0)) throw ConfigError("calibrate_thresholds: bad n or quantile");
  AlignmentThresholds th;
  for (int k = 0; k < world.num_classes(); ++k) {
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(k + 1)));
    const Matrix xs = sample_class(world, k, n, rng);
    std::vector<double> row;
    for (int j = -1; j < world.num_contexts(); ++j) {
      // Same underlying draws in every context, so thresholds differ exactly by log|det A_j|.
      std::vector<double> dens(n);
      for (std::size_t i = 0; i < n; ++i) {
        const Vec y = context_apply(world, j, xs.row(i));
        dens[i] = class_log_density(world, k, j, y);
      }
      std::sort(dens.begin(), dens.end());
      row.push_back(dens[static_cast<std::size_t>(quantile * static_cast<double>(n))]);
    }
    th.tau.push_back(std::move(row));
  }
  return th;
}

double median_pairwise_distance(const Matrix& points) {
  std::vector<double> d;
  d.reserve(points.rows * (points.rows - 1) / 2);
  for (std::size_t i = 0; i < points.rows; ++i) {
    for (std::size_t j = i + 1; j < points.rows; ++j) d.push_back(dist(points.row(i), points.row(j)));
  }
  if (d.empty()) return 1.0;
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

double mmd_rbf(const Matrix& x, const Matrix& y, double bandwidth) {
  if (x.rows == 0 || y.rows == 0) throw DimensionError("mmd_rbf: empty sample set");
  if (!(bandwidth > 0.0)) throw ConfigError("mmd_rbf: bandwidth must be positive");
  const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);
  const double mmd2 = mean_kernel(x, x, gamma, true) + mean_kernel(y, y, gamma, true) -
                      2.0 * mean_kernel(x, y, gamma, false);
  return std::sqrt(std::max(mmd2, 0.0));
}

FidelityScores fidelity(const Matrix& samples, const World& world, int context) {
  if (samples.rows == 0) throw DimensionError("fidelity: empty sample set");
  const Matrix refs = world.reference_matrix();
  if (refs.rows == 0) throw StateError("fidelity: world has no references");
  const Matrix inv = invert_rows(samples, world, context);

  FidelityScores s;
  for (std::size_t i = 0; i < inv.rows; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < refs.rows; ++r) best = std::min(best, dist(inv.row(i), refs.row(r)));
    s.nn += std::exp(-best);
  }
  s.nn /= static_cast<double>(inv.rows);

  Matrix pooled(inv.rows + refs.rows, inv.cols);
  std::copy(inv.data.begin(), inv.data.end(), pooled.data.begin());
  std::copy(refs.data.begin(), refs.data.end(), pooled.data.begin() + static_cast<std::ptrdiff_t>(inv.data.size()));
  double bw = median_pairwise_distance(pooled);
  if (!(bw > 0.0)) bw = 1.0;
  const double mmd = mmd_rbf(inv, refs, bw);
  s.mmd = std::clamp(1.0 - mmd / std::sqrt(2.0), 0.0, 1.0);
  return s;
}

double alignment(const Matrix& samples, const World& world, int k, int context, const AlignmentThresholds& thresholds) {
  if (samples.rows == 0) throw DimensionError("alignment: empty sample set");
  const double tau = thresholds.at(k, context);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples.rows; ++i) {
    if (class_log_density(world, k, context, samples.row(i)) >= tau) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.rows);
}

std::string context_name(int context) { return context < 0 ? "plain" : "ctx" + std::to_string(context); }

int parse_context_name(const std::string& s) {
  if (s == "plain") return -1;
  if (s.rfind("ctx", 0) == 0 && s.size() > 3) return std::stoi(s.substr(3));
  return std::stoi(s);
}

const ContextScore& EvalReport::score(int context) const {
  for (const auto& c : contexts) {
    if (c.context == context) return c;
  }
  throw RangeError("context " + context_name(context) + " was not evaluated");
}

double EvalReport::unseen_alignment() const {
  double acc = 0.0;
  int n = 0;
  for (const auto& c : contexts) {
    if (c.context >= 0) {
      acc += c.alignment;
      ++n;
    }
  }
  return n ? acc / n : 0.0;
}

EvalReport evaluate_method(const DenoiserModel& model, const Schedule& sched, const World& world,
                           const AlignmentThresholds& thresholds, const GuidanceSpec& guidance,
                           const EvalOptions& options, std::uint64_t seed) {
  std::vector<int> contexts = options.contexts;
  if (contexts.empty()) {
    for (int j = -1; j < world.num_contexts(); ++j) contexts.push_back(j);
  }
  const int score_class = guidance.primary.kind == ConceptKind::subject ? world.subject.base_class
                                                                            : guidance.primary.class_index;
  EvalReport report;
  for (int ctx : contexts) {
    GuidanceSpec g = guidance;
    g.primary = g.primary.with_context(ctx);
    g.anchor = g.anchor.with_context(ctx);
    const std::uint64_t ctx_seed = seed ^ (0xd1b54a32d192ed03ULL * static_cast<std::uint64_t>(ctx + 2));
    const Matrix xs = sample(model, sched, g, options.n_per_context, options.sampler, ctx_seed);
    ContextScore cs;
    cs.context = ctx;
    const FidelityScores f = fidelity(xs, world, ctx);
    cs.fidelity_nn = std::clamp(f.nn, 0.0, 1.0);
    cs.fidelity_mmd = f.mmd;
    cs.alignment = score_class >= 0 ? alignment(xs, world, score_class, ctx, thresholds) : 0.0;
    cs.n = xs.rows;
    report.contexts.push_back(cs);
    report.fidelity_nn += cs.fidelity_nn;
    report.fidelity_mmd += cs.fidelity_mmd;
    report.alignment += cs.alignment;
    report.n_samples += cs.n;
  }
  const auto n = static_cast<double>(report.contexts.size());
  report.fidelity_nn /= n;
  report.fidelity_mmd /= n;
  report.alignment /= n;
  return report;
}

std::vector<std::vector<std::string>> metrics_rows(const std::string& method, double w, std::uint64_t seed,
                                                   const EvalReport& report) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& c : report.contexts) {
    rows.push_back({method, format_double(w), std::to_string(seed), context_name(c.context),
                    format_double(c.fidelity_nn), format_double(c.fidelity_mmd), format_double(c.alignment),
                    std::to_string(c.n)});
  }
  return rows;
}

}  // namespace anchorlab
