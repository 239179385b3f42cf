// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are fixed
// here; the process exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "anchorlab/concepts.hpp"
#include "anchorlab/diffusion.hpp"
#include "anchorlab/dynamics.hpp"
#include "anchorlab/errors.hpp"
#include "anchorlab/metrics.hpp"
#include "anchorlab/objectives.hpp"
#include "anchorlab/personalize.hpp"
#include "anchorlab/stats.hpp"
#include "commands.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace anchorlab;
namespace fs = std::filesystem;

namespace {

// Criterion tolerances.
constexpr double kIdentityRelGap = 1e-9;
constexpr double kGradientGap = 1e-10;
constexpr double kFiniteDiffRelError = 1e-4;
constexpr double kFiniteDiffStep = 1e-4;
constexpr double kMeanTolerance = 0.05;
constexpr double kCovRelTolerance = 0.10;
constexpr double kInitTolerance = 1e-12;
constexpr double kSignTestAlpha = 0.05;
constexpr double kSpearmanBound = 0.8;
constexpr double kD1Ratio = 0.5;
constexpr double kFidelityRatio = 0.9;

constexpr double kBudgetIdentity = 5.0;
constexpr double kBudgetGradients = 30.0;
constexpr double kBudgetSampler = 300.0;
constexpr double kBudgetDrift = 1200.0;
constexpr double kBudgetSweep = 1800.0;

const std::vector<std::uint64_t> kSeeds{0, 1, 2, 3, 4};
const std::vector<Method> kMethods{Method::recon, Method::recon_ppl, Method::anchored, Method::anchored_ft};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << "criterion " << id << (id < 10 ? "  " : " ") << (pass ? "PASS" : "FAIL") << "  " << what << ": "
            << detail << std::endl;
}

// 1. Blend/anchor loss identity and gradient proportionality.
void loss_identity() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  std::normal_distribution<double> normal;
  const std::size_t dims[] = {2, 8, 64};
  const double lambdas[] = {0.1, 0.25, 0.5, 0.75, 0.9};
  double worst_gap = 0.0, worst_grad = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t d = dims[i % 3];
    const double l = lambdas[(i / 3) % 5];
    Vec p(d), r(d), f(d);
    for (std::size_t k = 0; k < d; ++k) {
      p[k] = normal(rng);
      r[k] = normal(rng);
      f[k] = normal(rng);
    }
    worst_gap = std::max(worst_gap, check_blend_anchor_identity(p, r, f, l).relative_gap());
    const Vec gb = grad_blended_wrt_pred(p, r, f, l);
    const Vec ga = grad_anchored_wrt_pred(p, r, f, ObjectiveConfig::weight_from_lambda(l));
    for (std::size_t k = 0; k < d; ++k) worst_grad = std::max(worst_grad, std::abs(gb[k] - l * ga[k]));
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_gap < kIdentityRelGap && worst_grad < kGradientGap && secs < kBudgetIdentity;
  report(1, pass, "loss identity over 1000 draws",
         "max relative gap " + sci(worst_gap) + " (< " + sci(kIdentityRelGap) + "), max gradient gap " +
             sci(worst_grad) + " (< " + sci(kGradientGap) + "), " + sci(secs) + " s (< 5 s)");
}

// 2. Finite-difference gradient checks over every layer.
void gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  std::string where;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto mlp = testkit::check_mlp(testkit::random_case(1000 + s), 2000 + s, kFiniteDiffStep);
    const auto den = testkit::check_denoiser(3000 + s, kFiniteDiffStep);
    for (const auto* r : {&mlp, &den}) {
      checked += r->checked;
      if (r->max_rel_error > worst) {
        worst = r->max_rel_error;
        where = r->worst;
      }
    }
  }
  const double secs = seconds_since(t0);
  report(2, worst < kFiniteDiffRelError && secs < kBudgetGradients, "finite-difference gradients, 10 configs",
         std::to_string(checked) + " entries, max relative error " + sci(worst) + " at " + where + " (< 1e-4), " +
             sci(secs) + " s (< 30 s)");
}

// 3. Unconditional sampler on a single 2-D Gaussian.
void sampler_sanity() {
  const auto t0 = Clock::now();
  Eigen::VectorXd mu(2);
  mu << 1.0, -0.5;
  Eigen::MatrixXd cov(2, 2);
  cov << 0.8, 0.3, 0.3, 0.5;
  const World world = gaussian_world(mu, cov, 7);
  const Schedule sched = make_schedule(200, ScheduleKind::cosine);
  PretrainOptions o;
  o.seed = 7;
  const DenoiserModel model = pretrain(world, sched, o).model;
  const std::size_t n = 4096;
  const Matrix xs = sample(model, sched, GuidanceSpec::plain(ConditionToken::null()), n, SamplerSpec::ddpm(), 99);
  Eigen::Vector2d m = Eigen::Vector2d::Zero();
  for (std::size_t i = 0; i < n; ++i) m += Eigen::Vector2d(xs(i, 0), xs(i, 1));
  m /= static_cast<double>(n);
  Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector2d d = Eigen::Vector2d(xs(i, 0), xs(i, 1)) - m;
    c += d * d.transpose();
  }
  c /= static_cast<double>(n - 1);
  const double mean_err = (m - mu).cwiseAbs().maxCoeff();
  double cov_err = 0.0;
  for (int r = 0; r < 2; ++r) {
    for (int k = 0; k < 2; ++k) cov_err = std::max(cov_err, std::abs(c(r, k) - cov(r, k)) / std::abs(cov(r, k)));
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "mean (" << sci(m[0]) << ", " << sci(m[1]) << ") max error " << sci(mean_err) << " (< 0.05), cov ["
    << sci(c(0, 0)) << " " << sci(c(0, 1)) << "; " << sci(c(1, 0)) << " " << sci(c(1, 1)) << "] max relative error "
    << sci(cov_err) << " (< 0.1), " << sci(secs) << " s (< 300 s)";
  report(3, mean_err < kMeanTolerance && cov_err < kCovRelTolerance && secs < kBudgetSampler,
         "single-Gaussian sampler, 4096 samples", d.str());
}

struct MethodRun {
  std::vector<DynamicsRecord> dynamics;
  EvalReport report;
};

struct Experiment {
  std::map<Method, std::vector<MethodRun>> runs;  // per seed, in kSeeds order
  double seconds = 0.0;
};

Experiment run_methods(const testkit::DefaultSetup& s, const AlignmentThresholds& th) {
  const auto t0 = Clock::now();
  Experiment e;
  const int k = s.world.subject.base_class;
  const PriorSet prior = build_prior_set(s.model, s.sched, k, kDefaultPriorSize, 0);
  for (std::uint64_t seed : kSeeds) {
    for (Method m : kMethods) {
      AdaptationOptions a;
      a.seed = seed;
      ModelPair pair = snapshot(s.model, k, a);
      PersonalizeOptions p;
      p.seed = seed;
      ObjectiveConfig obj;
      obj.method = m;
      const auto res = personalize(pair, s.world, s.sched, obj, p, &prior);
      if (!pair.anchor_intact()) throw StateError("frozen anchor changed");
      MethodRun run;
      run.dynamics = res.dynamics;
      run.report = evaluate_method(pair.theta, s.sched, s.world, th, subject_guidance(), {}, evaluation_seed(seed));
      e.runs[m].push_back(std::move(run));
    }
  }
  e.seconds = seconds_since(t0);
  return e;
}

std::vector<double> per_seed(const Experiment& e, Method m, const std::function<double(const MethodRun&)>& f) {
  std::vector<double> out;
  for (const auto& r : e.runs.at(m)) out.push_back(f(r));
  return out;
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + sci(v[i]);
  return s + "]";
}

// 4. Step-0 identities and the zero-weight degeneracy.
void init_identities(const testkit::DefaultSetup& s, const Experiment& e) {
  double worst = 0.0;
  for (const auto& [m, runs] : e.runs) {
    for (const auto& r : runs) {
      worst = std::max({worst, std::abs(r.dynamics.front().d2), std::abs(r.dynamics.front().diff_b)});
    }
  }
  const int k = s.world.subject.base_class;
  PersonalizeOptions p;
  p.steps = 100;
  p.seed = 17;
  ModelPair recon = snapshot(s.model, k, {.seed = 17});
  ModelPair anchored = snapshot(s.model, k, {.seed = 17});
  ObjectiveConfig o;
  o.method = Method::recon;
  personalize(recon, s.world, s.sched, o, p);
  o.method = Method::anchored;
  o.w = 0.0;
  personalize(anchored, s.world, s.sched, o, p);
  bool bitwise = true;
  const auto a = recon.theta.all_parameters(), b = anchored.theta.all_parameters();
  for (std::size_t i = 0; i < a.size(); ++i) bitwise = bitwise && a[i]->values == b[i]->values;
  report(4, worst <= kInitTolerance && bitwise, "initialization identities",
         "max |D2|, |diff_b| at step 0 over 4 methods x 5 seeds " + sci(worst) + " (<= 1e-12); ANCHORED(w=0) vs RECON at step 100 " +
             (bitwise ? "bitwise identical" : "differs"));
}

// 5. Final-window drift ordering.
void drift(const Experiment& e) {
  auto d2 = [](const MethodRun& r) { return final_window_mean(r.dynamics, &DynamicsRecord::d2); };
  const auto anc = per_seed(e, Method::anchored, d2);
  const auto rec = per_seed(e, Method::recon, d2);
  const auto ppl = per_seed(e, Method::recon_ppl, d2);
  const double p_rec = stats::sign_test_greater(rec, anc);
  const double p_ppl = stats::sign_test_greater(ppl, anc);
  const bool pass = p_rec < kSignTestAlpha && p_ppl < kSignTestAlpha && e.seconds < kBudgetDrift;
  report(5, pass, "final-window D2, ANCHORED below RECON and RECON_PPL",
         "ANCHORED " + list(anc) + ", RECON " + list(rec) + ", RECON_PPL " + list(ppl) + "; sign test p " + sci(p_rec) +
             " and " + sci(p_ppl) + " (< 0.05); 4 methods x 5 seeds in " + sci(e.seconds) + " s (< 1200 s)");
}

// 6. Anchor-weight sweep trend.
void sweep(const testkit::DefaultSetup& s, const AlignmentThresholds& th) {
  const auto t0 = Clock::now();
  const auto cells = run_ablation_wsweep(s.model, s.world, s.sched, th, kDefaultSweepGrid, kSeeds, {}, {}, {});
  std::vector<double> al, fid;
  for (double w : kDefaultSweepGrid) {
    double a = 0.0, f = 0.0;
    int n = 0;
    for (const auto& c : cells) {
      if (c.w != w) continue;
      a += c.report.alignment;
      f += c.report.fidelity_nn;
      ++n;
    }
    al.push_back(a / n);
    fid.push_back(f / n);
  }
  const double r_al = stats::spearman(kDefaultSweepGrid, al);
  const double r_fid = stats::spearman(kDefaultSweepGrid, fid);
  const double secs = seconds_since(t0);
  report(6, r_al >= kSpearmanBound && r_fid <= -kSpearmanBound && secs < kBudgetSweep,
         "w sweep {0, 0.25, 0.5, 0.75, 1} x 5 seeds",
         "alignment " + list(al) + " Spearman " + sci(r_al) + " (>= 0.8), fidelity_nn " + list(fid) + " Spearman " +
             sci(r_fid) + " (<= -0.8), " + sci(secs) + " s (< 1800 s)");
}

// 7. Frozen versus self anchor.
void frozen_anchor(const Experiment& e) {
  auto al = [](const MethodRun& r) { return r.report.alignment; };
  const auto anc = per_seed(e, Method::anchored, al);
  const auto ft = per_seed(e, Method::anchored_ft, al);
  const double p = stats::sign_test_greater(anc, ft);
  report(7, p < kSignTestAlpha, "alignment, frozen anchor above self anchor",
         "ANCHORED " + list(anc) + ", ANCHORED_FT " + list(ft) + "; sign test p " + sci(p) + " (< 0.05)");
}

// 8. D1 shrinks below half its initial value for every method.
void d1_decay(const Experiment& e) {
  bool pass = true;
  std::string detail;
  for (Method m : kMethods) {
    double fin = 0.0, init = 0.0;
    for (const auto& r : e.runs.at(m)) {
      fin += final_window_mean(r.dynamics, &DynamicsRecord::d1);
      init += r.dynamics.front().d1;
    }
    const double ratio = fin / init;
    pass = pass && ratio < kD1Ratio;
    detail += (detail.empty() ? "" : ", ") + to_string(m) + " " + sci(ratio);
  }
  report(8, pass, "final-window D1 / initial D1 (seed means)", detail + " (each < 0.5)");
}

// 9. Unseen-context alignment with retained plain-context fidelity.
void context_generalization(const Experiment& e) {
  auto unseen = [](const MethodRun& r) { return r.report.unseen_alignment(); };
  auto plain_fid = [](const MethodRun& r) { return r.report.score(-1).fidelity_nn; };
  const auto anc = per_seed(e, Method::anchored, unseen);
  const auto rec = per_seed(e, Method::recon, unseen);
  const double p = stats::sign_test_greater(anc, rec);
  const double fa = stats::mean(per_seed(e, Method::anchored, plain_fid));
  const double fr = stats::mean(per_seed(e, Method::recon, plain_fid));
  const double ratio = fa / fr;
  report(9, p < kSignTestAlpha && ratio >= kFidelityRatio, "unseen-context alignment and plain fidelity",
         "unseen alignment ANCHORED " + list(anc) + ", RECON " + list(rec) + "; sign test p " + sci(p) +
             " (< 0.05); plain fidelity_nn " + sci(fa) + " / " + sci(fr) + " = " + sci(ratio) + " (>= 0.9)");
}

std::map<std::string, std::string> csv_files(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[fs::relative(entry.path(), root).string()] = ss.str();
  }
  return out;
}

// 10. Byte-identical CSV outputs from two full pipeline runs.
void determinism(const fs::path& scratch) {
  const char* config =
      "pretrain.steps = 1500\n"
      "personalize.steps = 200\n"
      "personalize.probe_every = 20\n"
      "personalize.ppl_m = 64\n"
      "eval.n_per_context = 64\n"
      "eval.seeds = 0, 1\n"
      "sweep.grid = 0, 0.5, 1\n";
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  const fs::path cfg = scratch / "pipeline.cfg";
  std::ofstream(cfg) << config;
  std::ostringstream log, err;
  auto pipeline = [&](const fs::path& out) {
    int rc = cli::cmd_pretrain(cfg, out, {}, log, err);
    for (const char* m : {"recon", "recon_ppl", "anchored", "anchored_ft", "beyond"}) {
      cli::Overrides o;
      o.method = m;
      rc = rc ? rc : cli::cmd_personalize(cfg, out, o, log, err);
    }
    rc = rc ? rc : cli::cmd_evaluate(cfg, out, {}, log, err);
    rc = rc ? rc : cli::cmd_sweep(cfg, out, {}, log, err);
    rc = rc ? rc : cli::cmd_report({out}, out / "report", log, err);
    return rc;
  };
  const int rc_a = pipeline(scratch / "a");
  const int rc_b = pipeline(scratch / "b");
  const auto a = csv_files(scratch / "a");
  const auto b = csv_files(scratch / "b");
  std::size_t differing = 0;
  for (const auto& [name, body] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != body) ++differing;
  }
  const bool pass = rc_a == 0 && rc_b == 0 && a.size() == b.size() && differing == 0 && a.size() >= 10;
  report(10, pass, "pipeline rerun determinism",
         std::to_string(a.size()) + " CSV files compared, " + std::to_string(differing) + " differ; exit codes " +
             std::to_string(rc_a) + ", " + std::to_string(rc_b) + (err.str().empty() ? "" : "; " + err.str()));
  if (pass) fs::remove_all(scratch);
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path scratch = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "anchorlab_acceptance";
  try {
    loss_identity();
    gradients();
    sampler_sanity();

    const auto& s = testkit::default_setup();
    const AlignmentThresholds th = calibrate_thresholds(s.world, s.world.options.seed ^ 0x6a09e667f3bcc908ULL);
    const Experiment e = run_methods(s, th);
    init_identities(s, e);
    drift(e);
    sweep(s, th);
    frozen_anchor(e);
    d1_decay(e);
    context_generalization(e);
    determinism(scratch);
  } catch (const std::exception& ex) {
    std::cout << "acceptance aborted: " << ex.what() << std::endl;
    return 2;
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
