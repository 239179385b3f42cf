#pragma once

// Personalization losses. Per-example forms take one prediction vector;
// batch reductions are the mean over examples of these per-example sums.
//
// The blended target eps* = l * eps_rare + (1 - l) * eps_freq satisfies
//
//   |eps* - p|^2 = l * (|eps_rare - p|^2 + w |p - eps_freq|^2)
//                  - l (1 - l) |eps_rare - eps_freq|^2,   w = (1 - l) / l,
//
// so regressing onto the blend and minimising the anchored loss share
// gradients up to the factor l and therefore share minimisers.

#include <optional>
#include <span>
#include <string>

#include "anchorlab/neural.hpp"

namespace anchorlab {

enum class Method { recon, recon_ppl, anchored, anchored_ft };

std::string to_string(Method m);
Method parse_method(const std::string& s);  // throws ConfigError

struct ObjectiveConfig {
  Method method = Method::anchored;
  double w = 1.0;
  std::optional<double> lambda;
  double ppl_weight = 1.0;

  // w = (1 - lambda) / lambda, lambda in (0, 1].
  static ObjectiveConfig from_lambda(Method m, double lambda);
  static double weight_from_lambda(double lambda);

  // Throws ConfigError on w < 0, lambda out of (0, 1] or w/lambda mismatch.
  void validate() const;
};

struct LossBreakdown {
  double total = 0.0;
  double recon_term = 0.0;
  double anchor_term = 0.0;
  double ppl_term = 0.0;
};

double squared_distance(std::span<const double> a, std::span<const double> b);

// |eps - eps_pred|^2
double loss_recon(std::span<const double> eps_pred, std::span<const double> eps);

// Same functional form on prior-set latents under the class condition.
double loss_ppl(std::span<const double> eps_pred_on_prior, std::span<const double> eps);

// |blend(eps_rare, eps_freq, lambda) - eps_pred|^2
double loss_blended(std::span<const double> eps_pred, std::span<const double> eps_rare,
                    std::span<const double> eps_freq, double lambda);

// recon = |eps - eps_pred|^2, anchor = |eps_pred - eps_anchor|^2, total = recon + w * anchor.
LossBreakdown loss_anchored(std::span<const double> eps_pred, std::span<const double> eps,
                            std::span<const double> eps_anchor, double w);

struct IdentityCheck {
  double lhs = 0.0;  // loss_blended
  double rhs = 0.0;  // lambda * anchored total - lambda (1 - lambda) |eps_rare - eps_freq|^2
  double gap = 0.0;  // |lhs - rhs|
  double relative_gap() const;
};

// Evaluates both sides of the blend/anchor identity. lambda must lie in (0, 1).
IdentityCheck check_blend_anchor_identity(std::span<const double> eps_pred, std::span<const double> eps_rare,
                                          std::span<const double> eps_freq, double lambda);

// d/d eps_pred of loss_blended: 2 (eps_pred - eps*).
Vec grad_blended_wrt_pred(std::span<const double> eps_pred, std::span<const double> eps_rare,
                          std::span<const double> eps_freq, double lambda);

// d/d eps_pred of loss_anchored total: 2 (eps_pred - eps) + 2 w (eps_pred - eps_anchor).
Vec grad_anchored_wrt_pred(std::span<const double> eps_pred, std::span<const double> eps,
                           std::span<const double> eps_anchor, double w);

// argmin over eps_pred of loss_anchored: (eps + w eps_anchor) / (1 + w).
Vec anchored_minimizer(std::span<const double> eps, std::span<const double> eps_anchor, double w);

}  // namespace anchorlab
