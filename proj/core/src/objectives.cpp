#include "anchorlab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "anchorlab/diffusion.hpp"
#include "anchorlab/errors.hpp"

namespace anchorlab {

namespace {

void check_sizes(std::size_t a, std::size_t b, const char* where) {
  if (a != b) throw DimensionError(std::string(where) + ": vectors differ in length");
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::recon: return "recon";
    case Method::recon_ppl: return "recon_ppl";
    case Method::anchored: return "anchored";
    case Method::anchored_ft: return "anchored_ft";
  }
  return "unknown";
}

Method parse_method(const std::string& s) {
  if (s == "recon") return Method::recon;
  if (s == "recon_ppl") return Method::recon_ppl;
  if (s == "anchored") return Method::anchored;
  if (s == "anchored_ft") return Method::anchored_ft;
  throw ConfigError("unknown method '" + s + "' (valid: recon, recon_ppl, anchored, anchored_ft, beyond)");
}

double ObjectiveConfig::weight_from_lambda(double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw ConfigError("lambda must lie in (0, 1], got " + std::to_string(lambda));
  }
  return (1.0 - lambda) / lambda;
}

ObjectiveConfig ObjectiveConfig::from_lambda(Method m, double lambda) {
  ObjectiveConfig c;
  c.method = m;
  c.lambda = lambda;
  c.w = weight_from_lambda(lambda);
  return c;
}

void ObjectiveConfig::validate() const {
  if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("anchor weight w must be finite and >= 0");
  if (!(ppl_weight >= 0.0)) throw ConfigError("ppl weight must be >= 0");
  if (lambda) {
    const double implied = weight_from_lambda(*lambda);
    if (std::abs(implied - w) >= 1e-12) {
      throw ConfigError("w=" + std::to_string(w) + " disagrees with lambda=" + std::to_string(*lambda) +
                        " (expected w=(1-lambda)/lambda=" + std::to_string(implied) + ")");
    }
  }
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  check_sizes(a.size(), b.size(), "squared_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double loss_recon(std::span<const double> eps_pred, std::span<const double> eps) {
  return squared_distance(eps, eps_pred);
}

double loss_ppl(std::span<const double> eps_pred_on_prior, std::span<const double> eps) {
  return squared_distance(eps, eps_pred_on_prior);
}

double loss_blended(std::span<const double> eps_pred, std::span<const double> eps_rare,
                    std::span<const double> eps_freq, double lambda) {
  check_sizes(eps_pred.size(), eps_rare.size(), "loss_blended");
  const Vec target = blend_guidance(eps_rare, eps_freq, lambda);
  return squared_distance(target, eps_pred);
}

LossBreakdown loss_anchored(std::span<const double> eps_pred, std::span<const double> eps,
                            std::span<const double> eps_anchor, double w) {
  if (!(w >= 0.0)) throw ConfigError("loss_anchored: w must be >= 0");
  LossBreakdown b;
  b.recon_term = squared_distance(eps, eps_pred);
  b.anchor_term = squared_distance(eps_pred, eps_anchor);
  b.total = b.recon_term + w * b.anchor_term;
  return b;
}

double IdentityCheck::relative_gap() const {
  const double scale = std::max({std::abs(lhs), std::abs(rhs), std::numeric_limits<double>::min()});
  return gap / scale;
}

IdentityCheck check_blend_anchor_identity(std::span<const double> eps_pred, std::span<const double> eps_rare,
                                          std::span<const double> eps_freq, double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw ConfigError("check_blend_anchor_identity: lambda must lie in (0, 1), got " + std::to_string(lambda));
  }
  IdentityCheck c;
  c.lhs = loss_blended(eps_pred, eps_rare, eps_freq, lambda);
  const double w = ObjectiveConfig::weight_from_lambda(lambda);
  const LossBreakdown anchored = loss_anchored(eps_pred, eps_rare, eps_freq, w);
  c.rhs = lambda * anchored.total - lambda * (1.0 - lambda) * squared_distance(eps_rare, eps_freq);
  c.gap = std::abs(c.lhs - c.rhs);
  return c;
}

Vec grad_blended_wrt_pred(std::span<const double> eps_pred, std::span<const double> eps_rare,
                          std::span<const double> eps_freq, double lambda) {
  check_sizes(eps_pred.size(), eps_rare.size(), "grad_blended_wrt_pred");
  const Vec target = blend_guidance(eps_rare, eps_freq, lambda);
  Vec g(eps_pred.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * (eps_pred[i] - target[i]);
  return g;
}

Vec grad_anchored_wrt_pred(std::span<const double> eps_pred, std::span<const double> eps,
                           std::span<const double> eps_anchor, double w) {
  check_sizes(eps_pred.size(), eps.size(), "grad_anchored_wrt_pred");
  check_sizes(eps_pred.size(), eps_anchor.size(), "grad_anchored_wrt_pred");
  Vec g(eps_pred.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = 2.0 * (eps_pred[i] - eps[i]);
    if (w != 0.0) g[i] += 2.0 * w * (eps_pred[i] - eps_anchor[i]);
  }
  return g;
}

Vec anchored_minimizer(std::span<const double> eps, std::span<const double> eps_anchor, double w) {
  check_sizes(eps.size(), eps_anchor.size(), "anchored_minimizer");
  Vec m(eps.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = (eps[i] + w * eps_anchor[i]) / (1.0 + w);
  return m;
}

}  // namespace anchorlab
