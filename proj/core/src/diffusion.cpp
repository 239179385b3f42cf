#include "anchorlab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "anchorlab/errors.hpp"

namespace anchorlab {

namespace {

constexpr double kMaxBeta = 0.999;
constexpr double kCosineOffset = 0.008;

void check_t(int t, const Schedule& sched, const char* where) {
  if (t < 0 || t > sched.total_steps) {
    throw RangeError(std::string(where) + ": t=" + std::to_string(t) + " outside [0, " +
                     std::to_string(sched.total_steps) + "]");
  }
}

void check_same(std::size_t a, std::size_t b, const char* where) {
  if (a != b) throw DimensionError(std::string(where) + ": operand sizes differ");
}

}  // namespace

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw ConfigError("unknown schedule kind '" + s + "' (expected linear or cosine)");
}

std::string to_string(ScheduleKind k) { return k == ScheduleKind::linear ? "linear" : "cosine"; }

Schedule make_schedule(int total_steps, ScheduleKind kind) {
  if (total_steps < 2) throw ConfigError("make_schedule: T must be >= 2, got " + std::to_string(total_steps));
  const auto n = static_cast<std::size_t>(total_steps);
  std::vector<double> beta(n + 1, 0.0);
  if (kind == ScheduleKind::linear) {
    // Standard 1e-4 .. 0.02 endpoints, rescaled so short schedules still reach noise.
    const double scale = 1000.0 / static_cast<double>(total_steps);
    const double lo = scale * 1e-4;
    const double hi = scale * 0.02;
    for (std::size_t t = 1; t <= n; ++t) {
      const double frac = static_cast<double>(t - 1) / static_cast<double>(n - 1);
      beta[t] = std::min(lo + (hi - lo) * frac, kMaxBeta);
    }
  } else {
    auto f = [&](double t) {
      const double x = (t / static_cast<double>(total_steps) + kCosineOffset) / (1.0 + kCosineOffset);
      const double c = std::cos(x * std::numbers::pi / 2.0);
      return c * c;
    };
    for (std::size_t t = 1; t <= n; ++t) {
      beta[t] = std::min(1.0 - f(static_cast<double>(t)) / f(static_cast<double>(t - 1)), kMaxBeta);
    }
  }
  Schedule s;
  s.total_steps = total_steps;
  s.kind = kind;
  s.beta = beta;
  s.alpha_bar.assign(n + 1, 1.0);
  s.alpha.assign(n + 1, 1.0);
  s.sigma.assign(n + 1, 0.0);
  for (std::size_t t = 1; t <= n; ++t) {
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - beta[t]);
    s.alpha[t] = std::sqrt(s.alpha_bar[t]);
    s.sigma[t] = std::sqrt(1.0 - s.alpha_bar[t]);
  }
  return s;
}

Vec forward_noise(std::span<const double> z0, int t, std::span<const double> eps, const Schedule& sched) {
  check_t(t, sched, "forward_noise");
  check_same(z0.size(), eps.size(), "forward_noise");
  const double a = sched.alpha_at(t);
  const double s = sched.sigma_at(t);
  Vec out(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) out[i] = a * z0[i] + s * eps[i];
  return out;
}

Vec eps_to_score(std::span<const double> eps_hat, int t, const Schedule& sched) {
  check_t(t, sched, "eps_to_score");
  const double s = sched.sigma_at(t);
  if (s == 0.0) throw NumericError("eps_to_score: sigma_t = 0 at t=" + std::to_string(t) + ", score undefined");
  Vec out(eps_hat.size());
  for (std::size_t i = 0; i < eps_hat.size(); ++i) out[i] = -eps_hat[i] / s;
  return out;
}

Vec cfg_combine(std::span<const double> eps_cond, std::span<const double> eps_uncond, double scale) {
  check_same(eps_cond.size(), eps_uncond.size(), "cfg_combine");
  if (scale == 1.0) return Vec(eps_cond.begin(), eps_cond.end());
  if (scale == 0.0) return Vec(eps_uncond.begin(), eps_uncond.end());
  Vec out(eps_cond.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_uncond[i] + scale * (eps_cond[i] - eps_uncond[i]);
  return out;
}

Vec blend_guidance(std::span<const double> eps_rare, std::span<const double> eps_freq, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("blend_guidance: lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
  // Written in the CFG form so that blend(a, b, l) == cfg_combine(a, b, l) exactly.
  return cfg_combine(eps_rare, eps_freq, lambda);
}

Vec ddpm_step(std::span<const double> z_t, std::span<const double> eps_hat, int t, const Schedule& sched,
              std::span<const double> noise) {
  if (t < 1 || t > sched.total_steps) throw RangeError("ddpm_step: t=" + std::to_string(t) + " outside [1, T]");
  check_same(z_t.size(), eps_hat.size(), "ddpm_step");
  const auto ti = static_cast<std::size_t>(t);
  const double beta = sched.beta[ti];
  const double inv_sqrt_keep = 1.0 / std::sqrt(1.0 - beta);
  const double eps_coef = beta / sched.sigma[ti];
  Vec out(z_t.size());
  for (std::size_t i = 0; i < z_t.size(); ++i) out[i] = inv_sqrt_keep * (z_t[i] - eps_coef * eps_hat[i]);
  if (t > 1 && !noise.empty()) {
    check_same(noise.size(), z_t.size(), "ddpm_step");
    const double post_var = beta * (1.0 - sched.alpha_bar[ti - 1]) / (1.0 - sched.alpha_bar[ti]);
    const double post_std = std::sqrt(post_var);
    for (std::size_t i = 0; i < z_t.size(); ++i) out[i] += post_std * noise[i];
  }
  return out;
}

Vec ddim_step(std::span<const double> z_t, std::span<const double> eps_hat, int t, int t_next,
              const Schedule& sched) {
  if (t_next >= t) throw RangeError("ddim_step: t_next must be < t");
  check_t(t, sched, "ddim_step");
  check_t(t_next, sched, "ddim_step");
  check_same(z_t.size(), eps_hat.size(), "ddim_step");
  const double a = sched.alpha_at(t);
  const double s = sched.sigma_at(t);
  const double an = sched.alpha_at(t_next);
  const double sn = sched.sigma_at(t_next);
  Vec out(z_t.size());
  for (std::size_t i = 0; i < z_t.size(); ++i) {
    const double x0 = (z_t[i] - s * eps_hat[i]) / a;
    out[i] = an * x0 + sn * eps_hat[i];
  }
  return out;
}

std::vector<int> ddim_timesteps(int total_steps, int steps) {
  if (steps < 1) throw ConfigError("ddim: steps must be >= 1");
  steps = std::min(steps, total_steps);
  const double stride = static_cast<double>(total_steps) / static_cast<double>(steps);
  std::vector<int> ts;
  for (int i = 0; i < steps; ++i) ts.push_back(static_cast<int>(std::lround((steps - 1 - i) * stride)) + 1);
  ts.push_back(0);
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  return ts;
}

void GuidanceSpec::validate() const {
  switch (mode) {
    case GuidanceMode::none: break;
    case GuidanceMode::cfg:
      if (!(scale >= 0.0)) throw ConfigError("CFG scale must be >= 0");
      break;
    case GuidanceMode::blend:
      if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("BLEND lambda must lie in [0, 1]");
      break;
    case GuidanceMode::switching:
      // Closed interval: the endpoints give the pure-anchor / pure-primary limits.
      if (!(tau_frac >= 0.0 && tau_frac <= 1.0)) throw ConfigError("SWITCH tau must lie in [0, 1]");
      break;
  }
}

int switch_anchor_steps(double tau_frac, int steps) {
  const double raw = std::ceil(tau_frac * static_cast<double>(steps) - 1e-9);
  return std::clamp(static_cast<int>(raw), 0, steps);
}

Matrix guided_eps(const DenoiserModel& model, const Matrix& z, int t, const GuidanceSpec& g, int step_index,
                  int total_sampling_steps) {
  switch (g.mode) {
    case GuidanceMode::none: return model.predict(z, t, g.primary);
    case GuidanceMode::cfg: {
      Matrix cond = model.predict(z, t, g.primary);
      if (g.scale == 1.0) return cond;
      const ConditionToken uncond = ConditionToken::null(g.primary.context);
      Matrix un = model.predict(z, t, uncond);
      Matrix out(z.rows, z.cols);
      for (std::size_t r = 0; r < z.rows; ++r) {
        const Vec v = cfg_combine(cond.row(r), un.row(r), g.scale);
        std::copy(v.begin(), v.end(), out.row(r).begin());
      }
      return out;
    }
    case GuidanceMode::blend: {
      Matrix rare = model.predict(z, t, g.primary);
      Matrix freq = model.predict(z, t, g.anchor);
      Matrix out(z.rows, z.cols);
      for (std::size_t r = 0; r < z.rows; ++r) {
        const Vec v = blend_guidance(rare.row(r), freq.row(r), g.lambda);
        std::copy(v.begin(), v.end(), out.row(r).begin());
      }
      return out;
    }
    case GuidanceMode::switching: {
      const bool use_anchor = step_index < switch_anchor_steps(g.tau_frac, total_sampling_steps);
      return model.predict(z, t, use_anchor ? g.anchor : g.primary);
    }
  }
  return {};
}

Matrix sample(const DenoiserModel& model, const Schedule& sched, const GuidanceSpec& guidance, std::size_t n,
              const SamplerSpec& sampler, std::uint64_t seed) {
  if (!model.trained()) throw StateError("sample: model has not been trained");
  if (model.config().total_steps != sched.total_steps) {
    throw ConfigError("sample: model and schedule disagree on T");
  }
  guidance.validate();
  const auto d = static_cast<std::size_t>(model.config().data_dim);
  std::vector<std::mt19937_64> chains;
  chains.reserve(n);
  for (std::size_t i = 0; i < n; ++i) chains.emplace_back(seed ^ static_cast<std::uint64_t>(i));
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix z(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    normal.reset();
    for (std::size_t k = 0; k < d; ++k) z(i, k) = normal(chains[i]);
  }

  if (sampler.kind == SamplerKind::ddpm) {
    const int steps = sched.total_steps;
    Vec noise(d);
    for (int t = sched.total_steps; t >= 1; --t) {
      const Matrix eps = guided_eps(model, z, t, guidance, sched.total_steps - t, steps);
      for (std::size_t i = 0; i < n; ++i) {
        std::span<const double> nz;
        if (t > 1) {
          normal.reset();
          for (auto& v : noise) v = normal(chains[i]);
          nz = noise;
        }
        const Vec next = ddpm_step(z.row(i), eps.row(i), t, sched, nz);
        std::copy(next.begin(), next.end(), z.row(i).begin());
      }
    }
  } else {
    const auto ts = ddim_timesteps(sched.total_steps, sampler.ddim_steps);
    const int steps = static_cast<int>(ts.size()) - 1;
    for (int s = 0; s < steps; ++s) {
      const int t = ts[static_cast<std::size_t>(s)];
      const int t_next = ts[static_cast<std::size_t>(s + 1)];
      const Matrix eps = guided_eps(model, z, t, guidance, s, steps);
      for (std::size_t i = 0; i < n; ++i) {
        const Vec next = ddim_step(z.row(i), eps.row(i), t, t_next, sched);
        std::copy(next.begin(), next.end(), z.row(i).begin());
      }
    }
  }
  for (double v : z.data) {
    if (!std::isfinite(v)) throw NumericError("sample: non-finite sample produced");
  }
  return z;
}

}  // namespace anchorlab
