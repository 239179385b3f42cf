#include "commands.hpp"

#include <algorithm>
#include <map>
#include <ostream>

#include "anchorlab/config.hpp"
#include "anchorlab/errors.hpp"
#include "anchorlab/io.hpp"
#include "anchorlab/personalize.hpp"
#include "anchorlab/stats.hpp"
#include "anchorlab/svg.hpp"

namespace fs = std::filesystem;

namespace anchorlab::cli {

namespace {

const std::vector<std::string> kMethodOrder{"recon", "recon_ppl", "anchored", "anchored_ft", "beyond"};
constexpr std::uint64_t kThresholdStream = 0x6a09e667f3bcc908ULL;

RunConfig load(const fs::path& config, const Overrides& o) {
  RunConfig c = load_config(config);
  if (o.method && *o.method != "beyond") c.objective.method = parse_method(*o.method);
  if (o.w) {
    c.objective.w = *o.w;
    c.objective.lambda.reset();
  }
  if (o.seed) {
    c.run_seed = *o.seed;
    c.pretrain.seed = *o.seed;
    c.personalize.seed = *o.seed;
    c.adaptation.seed = *o.seed;
  }
  if (o.tau) c.tau_frac = *o.tau;
  c.validate();
  return c;
}

std::string method_name(const RunConfig& c, const Overrides& o) {
  return o.method ? *o.method : to_string(c.objective.method);
}

void require(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifactError("missing artifact: " + p.string());
}

struct Run {
  World world;
  DenoiserModel pretrained;
};

Run load_run(const fs::path& out) {
  require(out / "world.txt");
  require(out / "pretrained.ckpt");
  return {load_world(out / "world.txt"), DenoiserModel::load(out / "pretrained.ckpt")};
}

AlignmentThresholds thresholds_for(const World& world) {
  return calibrate_thresholds(world, world.options.seed ^ kThresholdStream);
}

PriorSet prior_for(const fs::path& out, const RunConfig& c, const Run& run, const Schedule& sched) {
  const fs::path p = out / "prior_set.csv";
  if (fs::exists(p)) return load_prior_set(p);
  PriorSet prior = build_prior_set(run.pretrained, sched, run.world.subject.base_class, c.prior_size, c.run_seed);
  save_prior_set(prior, p);
  return prior;
}

// Write-then-rename so an interrupted run never leaves a partial file behind.
void write_csv_atomic(const fs::path& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  fs::path tmp = path;
  tmp += ".tmp";
  write_csv(tmp, header, rows);
  fs::rename(tmp, path);
}

double metric_w(const RunConfig& c, const std::string& method) {
  return method == "anchored" || method == "anchored_ft" ? c.objective.w : 0.0;
}

int evaluate_one(const RunConfig& c, const fs::path& out, const std::string& method, const Run& run,
                 const AlignmentThresholds& th, std::ostream& log) {
  const Schedule sched = c.make_schedule();
  GuidanceSpec guidance = subject_guidance();
  fs::path ckpt = out / method / "model.ckpt";
  if (method == "beyond") {
    ckpt = out / "recon" / "model.ckpt";
    guidance = switching_guidance(run.world.subject.base_class, c.tau_frac);
  }
  require(ckpt);
  const DenoiserModel model = DenoiserModel::load(ckpt);
  const EvalReport report = evaluate_method(model, sched, run.world, th, guidance, c.eval, evaluation_seed(c.run_seed));
  fs::create_directories(out / method);
  write_csv_atomic(out / method / "metrics.csv", kMetricsHeader,
                   metrics_rows(method, metric_w(c, method), c.run_seed, report));
  log << method << ": fidelity_nn " << format_double(report.fidelity_nn) << ", alignment "
      << format_double(report.alignment) << "\n";
  return kOk;
}

std::size_t method_rank(const std::string& m) {
  const auto it = std::find(kMethodOrder.begin(), kMethodOrder.end(), m);
  return static_cast<std::size_t>(it - kMethodOrder.begin());
}

}  // namespace

int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const NumericError& e) {
    err << "numeric divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const MissingArtifactError& e) {
    err << "missing artifact: " << e.what() << "\n";
    return kMissingArtifact;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

int cmd_pretrain(const fs::path& config, const fs::path& out, const Overrides& o, std::ostream& log,
                 std::ostream& err) {
  return guarded(
      [&] {
        const RunConfig c = load(config, o);
        fs::create_directories(out);
        const World world = build_world(c.world);
        const Schedule sched = c.make_schedule();
        log << "pretraining " << c.pretrain.steps << " steps\n";
        const PretrainResult res = pretrain(world, sched, c.pretrain);
        save_world(world, out / "world.txt");
        res.model.save(out / "pretrained.ckpt");
        write_csv_atomic(out / "loss.csv", kLossHeader, loss_rows(res.trace));
        const PriorSet prior = build_prior_set(res.model, sched, world.subject.base_class, c.prior_size, c.run_seed);
        save_prior_set(prior, out / "prior_set.csv");
        log << "final loss " << format_double(res.trace.back().loss.total) << "\n";
        return static_cast<int>(kOk);
      },
      err);
}

int cmd_personalize(const fs::path& config, const fs::path& out, const Overrides& o, std::ostream& log,
                    std::ostream& err) {
  return guarded(
      [&] {
        const RunConfig c = load(config, o);
        const std::string method = method_name(c, o);
        if (method == "beyond") {
          // Inference-only: reuses the recon checkpoint with switching guidance.
          require(out / "recon" / "model.ckpt");
          fs::create_directories(out / "beyond");
          log << "beyond: guidance-only, no checkpoint written\n";
          return static_cast<int>(kOk);
        }
        const Run run = load_run(out);
        const Schedule sched = c.make_schedule();
        ModelPair pair = snapshot(run.pretrained, run.world.subject.base_class, c.adaptation);
        const bool needs_prior = c.objective.method == Method::recon_ppl ||
                                 c.personalize.probe_anchor == ProbeAnchorLatent::prior;
        std::optional<PriorSet> prior;
        if (needs_prior) prior = prior_for(out, c, run, sched);
        log << "personalizing with " << method << " for " << c.personalize.steps << " steps\n";
        const PersonalizeResult res =
            personalize(pair, run.world, sched, c.objective, c.personalize, prior ? &*prior : nullptr);
        if (!pair.anchor_intact()) throw StateError("frozen anchor changed during personalization");
        const fs::path dir = out / method;
        fs::create_directories(dir);
        pair.theta.save(dir / "model.ckpt");
        write_csv_atomic(dir / "loss.csv", kLossHeader, loss_rows(res.trace));
        write_csv_atomic(dir / "dynamics.csv", kDynamicsHeader, dynamics_rows(method, c.run_seed, res.dynamics));
        return static_cast<int>(kOk);
      },
      err);
}

int cmd_evaluate(const fs::path& config, const fs::path& out, const Overrides& o, std::ostream& log,
                 std::ostream& err) {
  return guarded(
      [&] {
        const RunConfig c = load(config, o);
        const Run run = load_run(out);
        const AlignmentThresholds th = thresholds_for(run.world);
        std::vector<std::string> methods;
        if (o.method) {
          methods.push_back(*o.method);
        } else {
          for (const auto& m : kMethodOrder) {
            if (m == "beyond" ? fs::exists(out / "beyond") : fs::exists(out / m / "model.ckpt")) methods.push_back(m);
          }
          if (methods.empty()) throw MissingArtifactError("no personalized checkpoints under " + out.string());
        }
        for (const auto& m : methods) evaluate_one(c, out, m, run, th, log);
        return static_cast<int>(kOk);
      },
      err);
}

int cmd_sweep(const fs::path& config, const fs::path& out, const Overrides& o, std::ostream& log, std::ostream& err) {
  return guarded(
      [&] {
        const RunConfig c = load(config, o);
        const Run run = load_run(out);
        const Schedule sched = c.make_schedule();
        const AlignmentThresholds th = thresholds_for(run.world);
        const fs::path root = out / "sweep";
        fs::create_directories(root);

        std::vector<std::vector<std::string>> rows;
        std::map<std::string, svg::Series> by_w;
        std::vector<std::string> w_order;
        for (double w : c.sweep_grid) {
          for (std::uint64_t seed : c.seeds) {
            const fs::path cell = root / ("w" + format_double(w) + "_s" + std::to_string(seed));
            const fs::path metrics = cell / "metrics.csv";
            if (!fs::exists(metrics)) {
              log << "sweep cell w=" << format_double(w) << " seed=" << seed << "\n";
              const SweepCell sc = run_sweep_cell(run.pretrained, run.world, sched, th, w, seed, c.adaptation,
                                                  c.personalize, c.eval);
              fs::create_directories(cell);
              write_csv_atomic(cell / "dynamics.csv", kDynamicsHeader, dynamics_rows("anchored", seed, sc.dynamics));
              write_csv_atomic(metrics, kMetricsHeader, metrics_rows("anchored", w, seed, sc.report));
            }
            const CsvTable t = read_csv(metrics);
            const auto dyn = read_dynamics_csv(cell / "dynamics.csv");
            double nn = 0.0, mmd = 0.0, al = 0.0, unseen = 0.0;
            int n_unseen = 0;
            for (std::size_t i = 0; i < t.rows.size(); ++i) {
              nn += t.number(i, "fidelity_nn");
              mmd += t.number(i, "fidelity_mmd");
              al += t.number(i, "alignment");
              if (t.text(i, "context") != "plain") {
                unseen += t.number(i, "alignment");
                ++n_unseen;
              }
            }
            const auto n = static_cast<double>(t.rows.size());
            const double d2 = dyn.empty() ? 0.0 : final_window_mean(dyn.front().records, &DynamicsRecord::d2);
            rows.push_back({format_double(w), std::to_string(seed), format_double(nn / n), format_double(mmd / n),
                            format_double(al / n), format_double(n_unseen ? unseen / n_unseen : 0.0),
                            format_double(d2)});
            const std::string key = format_double(w);
            if (!by_w.count(key)) {
              w_order.push_back(key);
              by_w[key].name = "w=" + key;
            }
            by_w[key].x.push_back(nn / n);
            by_w[key].y.push_back(al / n);
          }
        }
        write_csv_atomic(out / "sweep.csv", kSweepHeader, rows);
        svg::Chart chart;
        chart.title = "Anchor weight sweep: alignment vs fidelity";
        chart.x_label = "fidelity_nn";
        chart.y_label = "alignment";
        chart.lines = false;
        for (const auto& k : w_order) chart.series.push_back(by_w[k]);
        svg::write(chart, out / "fig4.svg");
        return static_cast<int>(kOk);
      },
      err);
}

void assign_ranks(std::vector<MethodSummary>& rows) {
  std::vector<double> nn, mmd, al;
  for (const auto& r : rows) {
    nn.push_back(r.fidelity_nn);
    mmd.push_back(r.fidelity_mmd);
    al.push_back(r.alignment);
  }
  const auto rn = stats::average_ranks(nn, true);
  const auto rm = stats::average_ranks(mmd, true);
  const auto ra = stats::average_ranks(al, true);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].rank_fidelity_nn = rn[i];
    rows[i].rank_fidelity_mmd = rm[i];
    rows[i].rank_alignment = ra[i];
    rows[i].rank = (rn[i] + rm[i] + ra[i]) / 3.0;
  }
}

int cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out, std::ostream& log, std::ostream& err) {
  return guarded(
      [&] {
        if (run_dirs.empty()) throw MissingArtifactError("report needs at least one run directory");
        struct Acc {
          double nn = 0.0, mmd = 0.0, al = 0.0;
          int n = 0;
        };
        std::map<std::string, Acc> acc;
        std::vector<DynamicsSeries> dynamics;
        for (const auto& run : run_dirs) {
          if (!fs::is_directory(run)) throw MissingArtifactError("not a run directory: " + run.string());
          std::vector<fs::path> dirs;
          for (const auto& entry : fs::directory_iterator(run)) {
            if (entry.is_directory() && entry.path().filename() != "sweep") dirs.push_back(entry.path());
          }
          std::sort(dirs.begin(), dirs.end());
          for (const auto& dir : dirs) {
            if (fs::exists(dir / "metrics.csv")) {
              const CsvTable t = read_csv(dir / "metrics.csv");
              for (std::size_t i = 0; i < t.rows.size(); ++i) {
                Acc& a = acc[t.text(i, "method")];
                a.nn += t.number(i, "fidelity_nn");
                a.mmd += t.number(i, "fidelity_mmd");
                a.al += t.number(i, "alignment");
                ++a.n;
              }
            }
            if (fs::exists(dir / "dynamics.csv")) {
              for (auto& s : read_dynamics_csv(dir / "dynamics.csv")) dynamics.push_back(std::move(s));
            }
          }
        }
        if (acc.empty()) throw MissingArtifactError("no metrics.csv found in the given run directories");

        std::vector<MethodSummary> rows;
        for (const auto& [method, a] : acc) {
          rows.push_back({method, a.nn / a.n, a.mmd / a.n, a.al / a.n, 0.0, 0.0, 0.0, 0.0});
        }
        std::stable_sort(rows.begin(), rows.end(), [](const MethodSummary& x, const MethodSummary& y) {
          const auto rx = method_rank(x.method), ry = method_rank(y.method);
          return rx != ry ? rx < ry : x.method < y.method;
        });
        assign_ranks(rows);

        fs::create_directories(out);
        std::vector<std::vector<std::string>> table;
        for (const auto& r : rows) {
          table.push_back({r.method, format_double(r.fidelity_nn), format_double(r.fidelity_mmd),
                           format_double(r.alignment), format_double(r.rank_fidelity_nn),
                           format_double(r.rank_fidelity_mmd), format_double(r.rank_alignment),
                           format_double(r.rank)});
        }
        write_csv_atomic(out / "comparison.csv", kComparisonHeader, table);

        std::stable_sort(dynamics.begin(), dynamics.end(), [](const DynamicsSeries& a, const DynamicsSeries& b) {
          const auto ra = method_rank(a.method), rb = method_rank(b.method);
          if (ra != rb) return ra < rb;
          if (a.method != b.method) return a.method < b.method;
          return a.seed < b.seed;
        });
        if (!dynamics.empty()) write_dynamics_figures(dynamics, out);

        svg::Chart fig5;
        fig5.title = "Alignment vs fidelity per method";
        fig5.x_label = "fidelity_nn";
        fig5.y_label = "alignment";
        fig5.lines = false;
        for (const auto& r : rows) fig5.series.push_back({r.method, {r.fidelity_nn}, {r.alignment}});
        svg::write(fig5, out / "fig5.svg");
        log << "wrote comparison of " << rows.size() << " methods to " << (out / "comparison.csv").string() << "\n";
        return static_cast<int>(kOk);
      },
      err);
}

}  // namespace anchorlab::cli
