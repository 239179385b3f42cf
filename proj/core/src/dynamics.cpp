#include "anchorlab/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "anchorlab/errors.hpp"
#include "anchorlab/io.hpp"
#include "anchorlab/svg.hpp"

namespace anchorlab {

namespace {

double l2(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace

ProbeAnchorLatent parse_probe_anchor(const std::string& s) {
  if (s == "subject") return ProbeAnchorLatent::subject;
  if (s == "prior") return ProbeAnchorLatent::prior;
  throw ConfigError("unknown probe anchor latent '" + s + "' (expected subject or prior)");
}

std::string to_string(ProbeAnchorLatent p) { return p == ProbeAnchorLatent::subject ? "subject" : "prior"; }

ProbeSet make_probe_set(const World& world, const Schedule& sched, std::size_t size, int bins, std::uint64_t seed,
                        ProbeAnchorLatent mode, const Matrix* prior_latents) {
  if (bins < 1 || size == 0) throw ConfigError("probe set needs size >= 1 and bins >= 1");
  if (mode == ProbeAnchorLatent::prior && (!prior_latents || prior_latents->rows == 0)) {
    throw ConfigError("prior-latent probes need a prior set");
  }
  const auto& refs = world.subject.references;
  if (refs.empty()) throw StateError("probe set needs subject references");
  const auto d = static_cast<std::size_t>(world.dim());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_ref(0, refs.size() - 1);

  ProbeSet p;
  p.z0 = Matrix(size, d);
  p.eps = Matrix(size, d);
  p.z_t = Matrix(size, d);
  p.t.resize(size);
  Matrix anchor_z;
  if (mode == ProbeAnchorLatent::prior) anchor_z = Matrix(size, d);
  const int T = sched.total_steps;
  for (std::size_t i = 0; i < size; ++i) {
    const int bin = static_cast<int>(i % static_cast<std::size_t>(bins));
    const int lo = 1 + (bin * T) / bins;
    const int hi = std::max(lo, ((bin + 1) * T) / bins);
    std::uniform_int_distribution<int> pick_t(lo, hi);
    p.t[i] = pick_t(rng);
    const auto& r = refs[pick_ref(rng)];
    for (std::size_t k = 0; k < d; ++k) {
      p.z0(i, k) = r[static_cast<Eigen::Index>(k)];
      p.eps(i, k) = normal(rng);
    }
    const Vec zt = forward_noise(p.z0.row(i), p.t[i], p.eps.row(i), sched);
    std::copy(zt.begin(), zt.end(), p.z_t.row(i).begin());
    if (mode == ProbeAnchorLatent::prior) {
      const auto row = prior_latents->row(i % prior_latents->rows);
      const Vec az = forward_noise(row, p.t[i], p.eps.row(i), sched);
      std::copy(az.begin(), az.end(), anchor_z.row(i).begin());
    }
  }
  if (mode == ProbeAnchorLatent::prior) p.anchor_z_t = std::move(anchor_z);
  return p;
}

DynamicsRecord probe(const DenoiserModel& theta, const DenoiserModel& theta_prime, const ProbeSet& probes, int step) {
  const std::size_t n = probes.z_t.rows;
  const int k = theta.subject_base_class();
  std::vector<ConditionToken> sbj(n, ConditionToken::subject());
  std::vector<ConditionToken> cls(n, ConditionToken::cls(k));
  const Matrix pred = theta.predict(probes.z_t, probes.t, sbj);
  const Matrix anchor = theta_prime.predict(probes.anchor_z_t ? *probes.anchor_z_t : probes.z_t, probes.t, cls);
  DynamicsRecord r;
  r.step = step;
  for (std::size_t i = 0; i < n; ++i) {
    r.d1 += l2(probes.eps.row(i), pred.row(i));
    r.d2 += l2(pred.row(i), anchor.row(i));
    r.d3 += l2(probes.eps.row(i), anchor.row(i));
  }
  const auto nn = static_cast<double>(n);
  r.d1 /= nn;
  r.d2 /= nn;
  r.d3 /= nn;
  r.diff_b = r.d1 - r.d3;
  r.diff_c = r.d1 - r.d2;
  return r;
}

double final_window_mean(const std::vector<DynamicsRecord>& records, double DynamicsRecord::*field,
                         double fraction) {
  if (records.empty()) throw ConfigError("final_window_mean: no records");
  const int first = records.front().step;
  const int last = records.back().step;
  const double cutoff = last - fraction * (last - first);
  double acc = 0.0;
  int n = 0;
  for (const auto& r : records) {
    if (r.step >= cutoff) {
      acc += r.*field;
      ++n;
    }
  }
  return acc / n;
}

const DriftEntry& DriftSummary::get(const std::string& method) const {
  for (const auto& e : ranked) {
    if (e.method == method) return e;
  }
  throw ConfigError("no drift entry for method " + method);
}

DriftSummary compare_drift(const std::map<std::string, std::vector<DynamicsRecord>>& records_by_method,
                           double fraction) {
  if (records_by_method.size() < 2) throw ConfigError("compare_drift needs at least two methods");
  std::vector<int> schedule;
  for (const auto& r : records_by_method.begin()->second) schedule.push_back(r.step);
  DriftSummary s;
  for (const auto& [method, records] : records_by_method) {
    std::vector<int> steps;
    for (const auto& r : records) steps.push_back(r.step);
    if (steps != schedule) throw ConfigError("compare_drift: probe schedules differ for method " + method);
    DriftEntry e;
    e.method = method;
    e.final_d2 = final_window_mean(records, &DynamicsRecord::d2, fraction);
    e.final_d1 = final_window_mean(records, &DynamicsRecord::d1, fraction);
    e.initial_d1 = records.front().d1;
    s.ranked.push_back(e);
  }
  std::stable_sort(s.ranked.begin(), s.ranked.end(),
                   [](const DriftEntry& a, const DriftEntry& b) { return a.final_d2 < b.final_d2; });
  return s;
}

std::vector<std::vector<std::string>> dynamics_rows(const std::string& method, std::uint64_t seed,
                                                    const std::vector<DynamicsRecord>& records) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : records) {
    rows.push_back({method, std::to_string(seed), std::to_string(r.step), format_double(r.d1), format_double(r.d2),
                    format_double(r.d3), format_double(r.diff_b), format_double(r.diff_c)});
  }
  return rows;
}

std::vector<DynamicsSeries> read_dynamics_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  std::vector<DynamicsSeries> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::string& method = t.text(i, "method");
    const auto seed = static_cast<std::uint64_t>(std::stoull(t.text(i, "seed")));
    if (out.empty() || out.back().method != method || out.back().seed != seed) out.push_back({method, seed, {}});
    DynamicsRecord r;
    r.step = std::stoi(t.text(i, "step"));
    r.d1 = t.number(i, "D1");
    r.d2 = t.number(i, "D2");
    r.d3 = t.number(i, "D3");
    r.diff_b = t.number(i, "diff_b");
    r.diff_c = t.number(i, "diff_c");
    out.back().records.push_back(r);
  }
  return out;
}

void write_dynamics_figures(const std::vector<DynamicsSeries>& series, const std::filesystem::path& out_dir) {
  // Average each method's curves over seeds (records share a step schedule per method).
  std::map<std::string, std::vector<const DynamicsSeries*>> by_method;
  std::vector<std::string> order;
  for (const auto& s : series) {
    if (!by_method.count(s.method)) order.push_back(s.method);
    by_method[s.method].push_back(&s);
  }
  struct Figure {
    const char* file;
    const char* title;
    const char* ylabel;
    double DynamicsRecord::*field;
  };
  const Figure figures[] = {
      {"fig2.svg", "Subject vs anchor prediction distance", "D2", &DynamicsRecord::d2},
      {"fig6a.svg", "Reference vs subject prediction distance", "D1", &DynamicsRecord::d1},
      {"fig6b.svg", "D1 - D3 (reference-subject minus reference-anchor)", "diff_b", &DynamicsRecord::diff_b},
      {"fig6c.svg", "D1 - D2 (subject-reference minus subject-anchor)", "diff_c", &DynamicsRecord::diff_c},
  };
  for (const auto& fig : figures) {
    svg::Chart chart;
    chart.title = fig.title;
    chart.x_label = "adaptation step";
    chart.y_label = fig.ylabel;
    for (const auto& method : order) {
      const auto& runs = by_method[method];
      const auto& base = runs.front()->records;
      svg::Series line;
      line.name = method;
      for (std::size_t i = 0; i < base.size(); ++i) {
        double acc = 0.0;
        int n = 0;
        for (const auto* run : runs) {
          if (i < run->records.size()) {
            acc += run->records[i].*(fig.field);
            ++n;
          }
        }
        line.x.push_back(base[i].step);
        line.y.push_back(acc / n);
      }
      chart.series.push_back(std::move(line));
    }
    svg::write(chart, out_dir / fig.file);
  }
}

}  // namespace anchorlab
