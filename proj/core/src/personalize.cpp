#include "anchorlab/personalize.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "anchorlab/errors.hpp"
#include "anchorlab/io.hpp"

namespace anchorlab {

namespace {

constexpr std::uint64_t kPriorStream = 0x7f4a7c159e3779b9ULL;
constexpr std::uint64_t kProbeStream = 0x2545f4914f6cdd1dULL;
constexpr std::uint64_t kEvalStream = 0x94d049bb133111ebULL;

struct NoisedBatch {
  Matrix z_t;
  Matrix eps;
  std::vector<int> t;
};

NoisedBatch noise_batch(const Matrix& z0, const Schedule& sched, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick_t(1, sched.total_steps);
  std::normal_distribution<double> normal(0.0, 1.0);
  NoisedBatch b;
  b.z_t = Matrix(z0.rows, z0.cols);
  b.eps = Matrix(z0.rows, z0.cols);
  b.t.resize(z0.rows);
  for (std::size_t i = 0; i < z0.rows; ++i) {
    b.t[i] = pick_t(rng);
    for (std::size_t k = 0; k < z0.cols; ++k) b.eps(i, k) = normal(rng);
    const double a = sched.alpha_at(b.t[i]);
    const double s = sched.sigma_at(b.t[i]);
    for (std::size_t k = 0; k < z0.cols; ++k) b.z_t(i, k) = a * z0(i, k) + s * b.eps(i, k);
  }
  return b;
}

Matrix stack(const std::vector<TrainExample>& examples, std::size_t d) {
  Matrix m(examples.size(), d);
  for (std::size_t i = 0; i < examples.size(); ++i) std::copy(examples[i].z0.begin(), examples[i].z0.end(), m.row(i).begin());
  return m;
}

double mean_sq(const Matrix& a, const Matrix& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.rows);
}

}  // namespace

DenoiserConfig denoiser_config_for(const World& world, const Schedule& sched) {
  DenoiserConfig c;
  c.data_dim = world.dim();
  c.num_classes = world.num_classes();
  c.num_contexts = world.num_contexts();
  c.total_steps = sched.total_steps;
  return c;
}

std::vector<std::vector<std::string>> loss_rows(const std::vector<LossRecord>& trace) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(trace.size());
  for (const auto& r : trace) {
    rows.push_back({std::to_string(r.step), format_double(r.loss.total), format_double(r.loss.recon_term),
                    format_double(r.loss.anchor_term), format_double(r.loss.ppl_term)});
  }
  return rows;
}

PretrainResult pretrain(const World& world, const Schedule& sched, const PretrainOptions& options) {
  if (options.steps < 1 || options.batch == 0 || !(options.lr > 0.0)) throw ConfigError("pretrain: bad options");
  PretrainResult res{DenoiserModel(denoiser_config_for(world, sched), options.seed), {}};
  DenoiserModel& model = res.model;
  std::mt19937_64 rng(options.seed ^ 0x1b873593ULL);
  const auto d = static_cast<std::size_t>(world.dim());
  AdamState adam(AdamOptions{options.lr});
  const auto params = model.base_parameters();
  const double inv_b = 1.0 / static_cast<double>(options.batch);
  res.trace.reserve(static_cast<std::size_t>(options.steps));

  const double lr_floor = options.lr * options.final_lr_fraction;
  for (int step = 1; step <= options.steps; ++step) {
    const double progress = static_cast<double>(step - 1) / static_cast<double>(options.steps);
    adam.options.lr = lr_floor + 0.5 * (options.lr - lr_floor) * (1.0 + std::cos(std::numbers::pi * progress));
    const auto batch = sample_pretrain_batch(world, options.batch, rng);
    const Matrix z0 = stack(batch, d);
    const NoisedBatch nb = noise_batch(z0, sched, rng);
    std::vector<ConditionToken> cond(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) cond[i] = batch[i].cond;

    DenoiserCache cache;
    const Matrix pred = model.predict(nb.z_t, nb.t, cond, &cache);
    const double loss = mean_sq(pred, nb.eps);
    if (!std::isfinite(loss)) throw DivergenceError("pretrain: non-finite loss at step " + std::to_string(step));
    Matrix grad(pred.rows, pred.cols);
    for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] = 2.0 * inv_b * (pred.data[i] - nb.eps.data[i]);
    model.zero_grad();
    model.backward(cache, grad);
    adam_step(params, adam);
    res.trace.push_back({step, {loss, loss, 0.0, 0.0}});
  }

  const std::size_t window = std::min<std::size_t>(res.trace.size(), static_cast<std::size_t>(std::max(1, options.ceiling_window)));
  double tail = 0.0;
  for (std::size_t i = res.trace.size() - window; i < res.trace.size(); ++i) tail += res.trace[i].loss.total;
  tail /= static_cast<double>(window);
  if (!(tail < options.loss_ceiling)) {
    throw DivergenceError("pretrain: final loss " + format_double(tail) + " above ceiling " +
                          format_double(options.loss_ceiling));
  }
  model.set_trained(true);
  return res;
}

bool ModelPair::anchor_intact() const { return checksum(theta_prime.all_parameters()) == theta_prime_checksum; }

ModelPair snapshot(const DenoiserModel& pretrained, int base_class, const AdaptationOptions& adaptation) {
  if (!pretrained.trained()) throw StateError("snapshot: model is not pretrained");
  if (base_class < 0 || base_class >= pretrained.config().num_classes) throw RangeError("snapshot: bad base class");
  ModelPair pair{pretrained, pretrained, 0};
  pair.theta_prime.disable_low_rank();
  pair.theta.register_subject(base_class);
  if (!adaptation.full_finetune) pair.theta.enable_low_rank(adaptation.rank, adaptation.scale, adaptation.seed);
  pair.theta_prime_checksum = checksum(pair.theta_prime.all_parameters());
  return pair;
}

PriorSet build_prior_set(const DenoiserModel& theta_prime, const Schedule& sched, int k, std::size_t m,
                         std::uint64_t seed) {
  if (m == 0) throw ConfigError("prior set size must be positive");
  PriorSet p;
  p.seed = seed;
  p.base_class = k;
  p.latents = sample(theta_prime, sched, GuidanceSpec::cfg(ConditionToken::cls(k), 1.0), m, SamplerSpec::ddim(50), seed);
  return p;
}

void save_prior_set(const PriorSet& prior, const std::filesystem::path& path) {
  std::vector<std::string> header{"sample_id"};
  for (std::size_t k = 0; k < prior.latents.cols; ++k) header.push_back("dim_" + std::to_string(k));
  header.push_back("concept");
  header.push_back("context");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < prior.latents.rows; ++i) {
    std::vector<std::string> row{std::to_string(i)};
    for (std::size_t k = 0; k < prior.latents.cols; ++k) row.push_back(format_double(prior.latents(i, k)));
    row.push_back("class" + std::to_string(prior.base_class));
    row.push_back("plain");
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

PriorSet load_prior_set(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  std::size_t d = 0;
  while (std::find(t.header.begin(), t.header.end(), "dim_" + std::to_string(d)) != t.header.end()) ++d;
  if (d == 0 || t.rows.empty()) throw MissingArtifactError("prior set is empty: " + path.string());
  PriorSet p;
  p.latents = Matrix(t.rows.size(), d);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (std::size_t k = 0; k < d; ++k) p.latents(i, k) = t.number(i, "dim_" + std::to_string(k));
  }
  const std::string& tag = t.text(0, "concept");
  p.base_class = tag.rfind("class", 0) == 0 ? std::stoi(tag.substr(5)) : 0;
  return p;
}

PersonalizeResult personalize(ModelPair& pair, const World& world, const Schedule& sched,
                              const ObjectiveConfig& objective, const PersonalizeOptions& options,
                              const PriorSet* prior) {
  objective.validate();
  if (options.steps < 0 || options.batch == 0 || !(options.lr > 0.0) || options.probe_every < 1) {
    throw ConfigError("personalize: bad options");
  }
  const Method method = objective.method;
  if (method == Method::recon_ppl && (!prior || prior->latents.rows == 0)) {
    throw ConfigError("recon_ppl needs a prior set");
  }
  DenoiserModel& theta = pair.theta;
  const DenoiserModel& theta_prime = pair.theta_prime;
  if (!theta.has_subject()) throw StateError("personalize: theta has no SUBJECT concept");
  const int k = theta.subject_base_class();
  const auto d = static_cast<std::size_t>(world.dim());
  const std::size_t B = options.batch;
  const double inv_b = 1.0 / static_cast<double>(B);

  const bool anchored = method == Method::anchored || method == Method::anchored_ft;
  const double w = anchored ? objective.w : 0.0;
  const bool use_ppl = method == Method::recon_ppl;

  std::vector<ParamTensor*> params;
  if (theta.has_low_rank()) {
    params = theta.low_rank_parameters();
    params.push_back(theta.subject_embedding());
  } else {
    params = theta.base_parameters();
  }
  AdamState adam(AdamOptions{options.lr});

  std::mt19937_64 rng(options.seed);
  std::mt19937_64 prior_rng(options.seed ^ kPriorStream);
  const Matrix* prior_latents = prior ? &prior->latents : nullptr;
  const ProbeSet probes = make_probe_set(world, sched, options.probe_size, options.probe_bins,
                                         options.seed ^ kProbeStream, options.probe_anchor, prior_latents);

  const std::vector<ConditionToken> sbj(B, ConditionToken::subject());
  const std::vector<ConditionToken> cls(B, ConditionToken::cls(k));

  PersonalizeResult res;
  res.dynamics.push_back(probe(theta, theta_prime, probes, 0));

  for (int step = 1; step <= options.steps; ++step) {
    const Matrix z0 = stack(subject_batch(world, B, rng), d);
    const NoisedBatch nb = noise_batch(z0, sched, rng);

    theta.zero_grad();
    DenoiserCache cache;
    const Matrix pred = theta.predict(nb.z_t, nb.t, sbj, &cache);

    DenoiserCache anchor_cache;
    const Matrix anchor = method == Method::anchored_ft ? theta.predict(nb.z_t, nb.t, cls, &anchor_cache)
                                                        : theta_prime.predict(nb.z_t, nb.t, cls);

    LossRecord rec{step, {}};
    rec.loss.recon_term = mean_sq(pred, nb.eps);
    rec.loss.anchor_term = mean_sq(pred, anchor);

    Matrix grad(pred.rows, pred.cols);
    for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] = 2.0 * inv_b * (pred.data[i] - nb.eps.data[i]);
    if (w != 0.0) {
      for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += 2.0 * inv_b * w * (pred.data[i] - anchor.data[i]);
    }
    theta.backward(cache, grad);
    if (method == Method::anchored_ft && w != 0.0) {
      Matrix ga(anchor.rows, anchor.cols);
      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] = 2.0 * inv_b * w * (anchor.data[i] - pred.data[i]);
      theta.backward(anchor_cache, ga);
    }

    if (use_ppl) {
      std::uniform_int_distribution<std::size_t> pick(0, prior->latents.rows - 1);
      Matrix pz(B, d);
      for (std::size_t i = 0; i < B; ++i) {
        const auto row = prior->latents.row(pick(prior_rng));
        std::copy(row.begin(), row.end(), pz.row(i).begin());
      }
      const NoisedBatch pb = noise_batch(pz, sched, prior_rng);
      DenoiserCache pcache;
      const Matrix ppred = theta.predict(pb.z_t, pb.t, cls, &pcache);
      rec.loss.ppl_term = mean_sq(ppred, pb.eps);
      Matrix gp(ppred.rows, ppred.cols);
      const double pw = objective.ppl_weight;
      for (std::size_t i = 0; i < gp.data.size(); ++i) gp.data[i] = 2.0 * inv_b * pw * (ppred.data[i] - pb.eps.data[i]);
      theta.backward(pcache, gp);
    }
    rec.loss.total = rec.loss.recon_term + w * rec.loss.anchor_term + (use_ppl ? objective.ppl_weight * rec.loss.ppl_term : 0.0);
    if (!std::isfinite(rec.loss.total)) {
      throw DivergenceError("personalize: non-finite loss at step " + std::to_string(step));
    }

    adam_step(params, adam);
    for (const auto* p : params) {
      if (!p->all_finite()) throw DivergenceError("personalize: non-finite parameters at step " + std::to_string(step));
    }
    res.trace.push_back(rec);
    if (step % options.probe_every == 0 || step == options.steps) {
      res.dynamics.push_back(probe(theta, theta_prime, probes, step));
    }
  }
  return res;
}

GuidanceSpec subject_guidance() { return GuidanceSpec::plain(ConditionToken::subject()); }

GuidanceSpec switching_guidance(int base_class, double tau_frac) {
  return GuidanceSpec::switching(ConditionToken::subject(), ConditionToken::cls(base_class), tau_frac);
}

std::uint64_t evaluation_seed(std::uint64_t run_seed) { return run_seed ^ kEvalStream; }

SweepCell run_sweep_cell(const DenoiserModel& pretrained, const World& world, const Schedule& sched,
                         const AlignmentThresholds& thresholds, double w, std::uint64_t seed,
                         const AdaptationOptions& adaptation, const PersonalizeOptions& personalize_options,
                         const EvalOptions& eval_options) {
  AdaptationOptions a = adaptation;
  a.seed = seed;
  ModelPair pair = snapshot(pretrained, world.subject.base_class, a);
  PersonalizeOptions p = personalize_options;
  p.seed = seed;
  ObjectiveConfig obj;
  obj.method = Method::anchored;
  obj.w = w;
  SweepCell cell;
  cell.w = w;
  cell.seed = seed;
  cell.dynamics = personalize(pair, world, sched, obj, p).dynamics;
  cell.report = evaluate_method(pair.theta, sched, world, thresholds, subject_guidance(), eval_options,
                                evaluation_seed(seed));
  return cell;
}

std::vector<SweepCell> run_ablation_wsweep(const DenoiserModel& pretrained, const World& world,
                                           const Schedule& sched, const AlignmentThresholds& thresholds,
                                           const std::vector<double>& grid, const std::vector<std::uint64_t>& seeds,
                                           const AdaptationOptions& adaptation,
                                           const PersonalizeOptions& personalize_options,
                                           const EvalOptions& eval_options) {
  std::vector<SweepCell> cells;
  for (double w : grid) {
    for (std::uint64_t s : seeds) {
      cells.push_back(run_sweep_cell(pretrained, world, sched, thresholds, w, s, adaptation, personalize_options,
                                     eval_options));
    }
  }
  return cells;
}

}  // namespace anchorlab
