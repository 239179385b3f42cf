#include <gtest/gtest.h>

#include <random>

#include "anchorlab/diffusion.hpp"
#include "anchorlab/errors.hpp"
#include "anchorlab/objectives.hpp"

using namespace anchorlab;

namespace {

Vec draw(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Vec v(d);
  for (auto& x : v) x = n(rng);
  return v;
}

double loop_sq(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST(LossRecon, Basics) {
  EXPECT_EQ(loss_recon(Vec{1.0, 2.0}, Vec{1.0, 2.0}), 0.0);
  EXPECT_EQ(loss_recon(Vec{3.0, 4.0}, Vec{0.0, 0.0}), 25.0);
  std::mt19937_64 rng(1);
  const Vec a = draw(9, rng), b = draw(9, rng);
  EXPECT_NEAR(loss_recon(a, b), loop_sq(a, b), 1e-13);
  EXPECT_THROW(loss_recon(Vec{1.0}, Vec{1.0, 2.0}), DimensionError);
}

TEST(LossPpl, SharesReconForm) {
  std::mt19937_64 rng(2);
  const Vec a = draw(5, rng), b = draw(5, rng);
  EXPECT_EQ(loss_ppl(a, a), 0.0);
  EXPECT_EQ(loss_ppl(a, b), loss_recon(a, b));
  EXPECT_NEAR(loss_ppl(a, b), loop_sq(a, b), 1e-13);
}

TEST(LossBlended, Endpoints) {
  std::mt19937_64 rng(3);
  const Vec p = draw(4, rng), r = draw(4, rng), f = draw(4, rng);
  EXPECT_NEAR(loss_blended(p, r, f, 1.0), loss_recon(p, r), 1e-14);
  EXPECT_NEAR(loss_blended(p, r, f, 0.0), loss_recon(p, f), 1e-14);
  for (double l : {0.1, 0.5, 0.8}) EXPECT_NEAR(loss_blended(p, r, r, l), loss_recon(r, p), 1e-13);
  EXPECT_THROW(loss_blended(p, r, f, -0.1), ConfigError);
}

TEST(LossAnchored, Breakdown) {
  std::mt19937_64 rng(4);
  const Vec p = draw(6, rng), e = draw(6, rng), a = draw(6, rng);
  const auto w0 = loss_anchored(p, e, a, 0.0);
  EXPECT_EQ(w0.total, loss_recon(p, e));
  const auto same = loss_anchored(e, e, e, 2.0);
  EXPECT_EQ(same.total, 0.0);
  const auto w1 = loss_anchored(p, e, a, 1.0);
  EXPECT_NEAR(w1.total, loop_sq(p, e) + loop_sq(p, a), 1e-12);
  EXPECT_NEAR(w1.total, w1.recon_term + 1.0 * w1.anchor_term + 1.0 * w1.ppl_term, 1e-12);
  EXPECT_THROW(loss_anchored(p, e, a, -1.0), ConfigError);
}

TEST(LambdaWeight, Mapping) {
  EXPECT_EQ(ObjectiveConfig::weight_from_lambda(0.5), 1.0);
  EXPECT_EQ(ObjectiveConfig::weight_from_lambda(1.0), 0.0);
  EXPECT_NEAR(ObjectiveConfig::weight_from_lambda(0.2), 4.0, 1e-12);
  EXPECT_THROW(ObjectiveConfig::weight_from_lambda(0.0), ConfigError);
  ObjectiveConfig bad;
  bad.lambda = 0.5;
  bad.w = 3.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_EQ(parse_method("anchored_ft"), Method::anchored_ft);
  EXPECT_THROW(parse_method("beyond"), ConfigError);
}

TEST(BlendIdentity, RandomDraws) {
  std::mt19937_64 rng(5);
  const double lambdas[] = {0.1, 0.25, 0.5, 0.75, 0.9};
  std::uniform_int_distribution<std::size_t> dim(2, 64);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t d = dim(rng);
    const double l = lambdas[i % 5];
    const Vec p = draw(d, rng), r = draw(d, rng), f = draw(d, rng);
    worst = std::max(worst, check_blend_anchor_identity(p, r, f, l).relative_gap());
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(BlendIdentity, EqualTargetsVanish) {
  std::mt19937_64 rng(6);
  const Vec p = draw(8, rng), r = draw(8, rng);
  const auto c = check_blend_anchor_identity(p, r, r, 0.3);
  EXPECT_LT(c.gap, 1e-12);
}

TEST(BlendIdentity, HalfLambdaHandExpansion) {
  // lambda = 0.5, p = eps_rare: lhs = |0.5 (r - f)|^2 = 0.25 |D|^2
  const Vec r{1.0, -2.0, 0.5}, f{0.0, 1.0, 2.5};
  const auto c = check_blend_anchor_identity(r, r, f, 0.5);
  const double d2 = 1.0 + 9.0 + 4.0;
  EXPECT_NEAR(c.lhs, 0.25 * d2, 1e-14);
  // rhs = 0.5 (0 + |r - f|^2) - 0.25 |D|^2
  EXPECT_NEAR(c.rhs, 0.5 * d2 - 0.25 * d2, 1e-14);
}

TEST(Gradients, BlendedIsLambdaTimesAnchored) {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double l = 0.05 + 0.9 * (i / 200.0);
    const double w = ObjectiveConfig::weight_from_lambda(l);
    const Vec p = draw(8, rng), r = draw(8, rng), f = draw(8, rng);
    const Vec gb = grad_blended_wrt_pred(p, r, f, l);
    const Vec ga = grad_anchored_wrt_pred(p, r, f, w);
    for (std::size_t k = 0; k < p.size(); ++k) worst = std::max(worst, std::abs(gb[k] - l * ga[k]));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Gradients, ClosedFormAndMinimizer) {
  std::mt19937_64 rng(8);
  const Vec p = draw(5, rng), r = draw(5, rng), f = draw(5, rng);
  const double l = 0.3;
  const Vec star = blend_guidance(r, f, l);
  const Vec g = grad_blended_wrt_pred(p, r, f, l);
  for (std::size_t k = 0; k < p.size(); ++k) EXPECT_NEAR(g[k], 2.0 * (p[k] - star[k]), 1e-14);
  for (double v : grad_blended_wrt_pred(star, r, f, l)) EXPECT_NEAR(v, 0.0, 1e-14);
  const Vec m = anchored_minimizer(r, f, 1.5);
  for (double v : grad_anchored_wrt_pred(m, r, f, 1.5)) EXPECT_NEAR(v, 0.0, 1e-13);
}

TEST(Gradients, MatchFiniteDifference) {
  std::mt19937_64 rng(9);
  const Vec p = draw(4, rng), e = draw(4, rng), a = draw(4, rng);
  const Vec g = grad_anchored_wrt_pred(p, e, a, 0.7);
  for (std::size_t k = 0; k < p.size(); ++k) {
    Vec up = p, dn = p;
    up[k] += 1e-5;
    dn[k] -= 1e-5;
    const double fd = (loss_anchored(up, e, a, 0.7).total - loss_anchored(dn, e, a, 0.7).total) / 2e-5;
    EXPECT_NEAR(g[k], fd, 1e-8);
  }
}
