#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "anchorlab/concepts.hpp"
#include "anchorlab/errors.hpp"

using namespace anchorlab;

namespace {

Eigen::VectorXd ev(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

World world_with_known_context() {
  Eigen::MatrixXd cov(2, 2);
  cov << 0.5, 0.1, 0.1, 0.3;
  World w = gaussian_world(ev({1.0, -1.0}), cov, 0);
  ContextTransform ctx;
  ctx.A.resize(2, 2);
  ctx.A << 2.0, 1.0, 0.0, 1.0;
  ctx.b = ev({1.0, -1.0});
  ctx.prepare();
  w.contexts.push_back(ctx);
  w.options.num_contexts = 1;
  return w;
}

}  // namespace

TEST(BuildWorld, SameSeedIsBitExact) {
  const World a = build_world({.seed = 5});
  const World b = build_world({.seed = 5});
  ASSERT_EQ(a.classes.size(), b.classes.size());
  for (std::size_t k = 0; k < a.classes.size(); ++k) {
    for (std::size_t c = 0; c < a.classes[k].components.size(); ++c) {
      EXPECT_EQ(a.classes[k].components[c].mean, b.classes[k].components[c].mean);
      EXPECT_EQ(a.classes[k].components[c].cov, b.classes[k].components[c].cov);
    }
  }
  for (std::size_t j = 0; j < a.contexts.size(); ++j) EXPECT_EQ(a.contexts[j].A, b.contexts[j].A);
  EXPECT_EQ(a.reference_matrix(), b.reference_matrix());
}

TEST(BuildWorld, DefaultShape) {
  const World w = build_world({});
  EXPECT_EQ(w.dim(), 2);
  EXPECT_EQ(w.num_classes(), 4);
  EXPECT_EQ(w.num_contexts(), 3);
  EXPECT_EQ(w.subject.references.size(), 5u);
  for (const auto& mix : w.classes) {
    double s = 0.0;
    for (const auto& c : mix.components) s += c.weight;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(BuildWorld, ClassSeparationOverSeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const World w = build_world({.seed = seed});
    double max_std = 0.0;
    for (const auto& mix : w.classes) {
      for (const auto& c : mix.components) max_std = std::max(max_std, c.max_std());
    }
    for (int a = 0; a < w.num_classes(); ++a) {
      for (int b = a + 1; b < w.num_classes(); ++b) {
        const double dist = (w.classes[a].mean() - w.classes[b].mean()).norm();
        EXPECT_GE(dist, 6.0 * max_std) << "seed " << seed;
      }
    }
  }
}

TEST(BuildWorld, ReferencesNearGenerator) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const World w = build_world({.seed = seed});
    const auto& g = w.subject.generator;
    const auto& base = w.classes[w.subject.base_class].components[w.subject.base_component];
    for (const auto& r : w.subject.references) {
      const Eigen::VectorXd white = g.chol.triangularView<Eigen::Lower>().solve(r - g.mean);
      EXPECT_LE(white.norm(), 4.0);
    }
    // Generator mean sits the configured Mahalanobis distance from its base component.
    const Eigen::VectorXd off = base.chol.triangularView<Eigen::Lower>().solve(g.mean - base.mean);
    EXPECT_NEAR(off.norm(), 2.5, 1e-9);
  }
}

TEST(BuildWorld, ContextsWellConditioned) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const World w = build_world({.seed = seed});
    for (const auto& c : w.contexts) {
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(c.A);
      const auto sv = svd.singularValues();
      EXPECT_LE(sv.maxCoeff() / sv.minCoeff(), 5.0);
      EXPECT_GT(std::abs(c.A.determinant()), 1e-6);
    }
  }
}

TEST(BuildWorld, RejectsBadOptions) {
  EXPECT_THROW(build_world({.num_classes = 1}), ConfigError);
  EXPECT_THROW(build_world({.num_contexts = 0}), ConfigError);
  EXPECT_THROW(build_world({.num_references = 3}), ConfigError);
  EXPECT_THROW(build_world({.subject_offset = 3.5}), ConfigError);
}

TEST(PretrainBatch, NeverSubjectAndUniform) {
  const World w = build_world({.seed = 2});
  const std::size_t n = 10000;
  const auto batch = sample_pretrain_batch(w, n, std::uint64_t{11});
  std::vector<int> class_counts(4, 0);
  int nulls = 0;
  std::vector<int> ctx_counts(4, 0);
  for (const auto& ex : batch) {
    ASSERT_NE(ex.cond.kind, ConceptKind::subject);
    ctx_counts[ex.cond.context + 1]++;
    if (ex.cond.kind == ConceptKind::null_concept) {
      ++nulls;
    } else {
      class_counts[ex.cond.class_index]++;
    }
  }
  // Class counts among non-NULL examples: binomial(n - nulls, 1/4).
  const double m = static_cast<double>(n - nulls);
  for (int c : class_counts) EXPECT_NEAR(c, m / 4, 3.0 * std::sqrt(m * 0.25 * 0.75));
  for (int c : ctx_counts) EXPECT_NEAR(c, n / 4.0, 3.0 * std::sqrt(n * 0.25 * 0.75));
  EXPECT_NEAR(nulls / static_cast<double>(n), 0.10, 0.01);
}

TEST(SubjectBatch, DrawsReferencesUniformly) {
  const World w = build_world({.seed = 4});
  const auto batch = subject_batch(w, 1000, std::uint64_t{3});
  std::vector<int> counts(w.subject.references.size(), 0);
  for (const auto& ex : batch) {
    EXPECT_EQ(ex.cond, ConditionToken::subject());
    bool found = false;
    for (std::size_t r = 0; r < counts.size(); ++r) {
      const auto& ref = w.subject.references[r];
      if (ex.z0[0] == ref[0] && ex.z0[1] == ref[1]) {
        counts[r]++;
        found = true;
        break;
      }
    }
    EXPECT_TRUE(found);
  }
  for (int c : counts) EXPECT_NEAR(c, 200, 60);
}

TEST(Context, RoundTripAndPlain) {
  const World w = build_world({.seed = 8});
  const Vec x{0.3, -1.7};
  EXPECT_EQ(context_apply(w, -1, x), x);
  EXPECT_EQ(context_invert(w, -1, x), x);
  for (int j = 0; j < w.num_contexts(); ++j) {
    const Vec back = context_invert(w, j, context_apply(w, j, x));
    EXPECT_NEAR(back[0], x[0], 1e-10);
    EXPECT_NEAR(back[1], x[1], 1e-10);
  }
  EXPECT_THROW(context_apply(w, 3, x), RangeError);
  EXPECT_THROW(context_apply(w, 0, Vec{1.0}), DimensionError);
}

TEST(Context, UnitSquareCorners) {
  // A = [[2, 1], [0, 1]], b = (1, -1)
  const World w = world_with_known_context();
  const std::vector<std::pair<Vec, Vec>> cases{
      {{0, 0}, {1, -1}}, {{1, 0}, {3, -1}}, {{0, 1}, {2, 0}}, {{1, 1}, {4, 0}}};
  for (const auto& [x, y] : cases) EXPECT_EQ(context_apply(w, 0, x), y);
}

TEST(ClassDensity, GaussianPeak) {
  Eigen::MatrixXd cov(2, 2);
  cov << 0.5, 0.1, 0.1, 0.3;
  const World w = gaussian_world(ev({1.0, -1.0}), cov, 0);
  const double expect = -std::log(2 * std::numbers::pi) - 0.5 * std::log(cov.determinant());
  EXPECT_NEAR(class_log_density(w, 0, -1, Vec{1.0, -1.0}), expect, 1e-12);
}

TEST(ClassDensity, ContextChangeOfVariables) {
  const World w = build_world({.seed = 6});
  std::mt19937_64 rng(1);
  for (int k = 0; k < w.num_classes(); ++k) {
    const Matrix xs = sample_class(w, k, 50, rng);
    for (std::size_t i = 0; i < xs.rows; ++i) {
      const Vec x(xs.row(i).begin(), xs.row(i).end());
      const double plain = class_log_density(w, k, -1, x);
      for (int j = 0; j < w.num_contexts(); ++j) {
        const double moved = class_log_density(w, k, j, context_apply(w, j, x));
        EXPECT_NEAR(moved + w.contexts[j].log_abs_det, plain, 1e-9);
      }
    }
  }
}

TEST(ClassDensity, IntegratesToOne) {
  const World w = build_world({.seed = 3});
  std::mt19937_64 rng(5);
  for (int k = 0; k < 2; ++k) {
    Eigen::Vector2d lo = Eigen::Vector2d::Constant(1e9), hi = Eigen::Vector2d::Constant(-1e9);
    for (const auto& c : w.classes[k].components) {
      const double r = 7.0 * c.max_std();
      lo = lo.cwiseMin(c.mean - Eigen::Vector2d::Constant(r));
      hi = hi.cwiseMax(c.mean + Eigen::Vector2d::Constant(r));
    }
    std::uniform_real_distribution<double> ux(lo[0], hi[0]), uy(lo[1], hi[1]);
    const std::size_t n = 400000;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::exp(class_log_density(w, k, -1, Vec{ux(rng), uy(rng)}));
    const double area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    EXPECT_NEAR(acc / n * area, 1.0, 0.02);
  }
}

TEST(WorldFile, RoundTripReproducesDensities) {
  const World w = build_world({.seed = 12});
  const auto path = std::filesystem::temp_directory_path() / "anchorlab_world_roundtrip.txt";
  save_world(w, path);
  const World r = load_world(path);
  std::filesystem::remove(path);
  EXPECT_EQ(r.options, w.options);
  EXPECT_EQ(r.reference_matrix(), w.reference_matrix());
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int i = 0; i < 100; ++i) {
    const Vec x{n(rng), n(rng)};
    for (int k = 0; k < w.num_classes(); ++k) {
      for (int j = -1; j < w.num_contexts(); ++j) {
        EXPECT_NEAR(class_log_density(r, k, j, x), class_log_density(w, k, j, x), 1e-12);
      }
    }
  }
}

TEST(WorldFile, MissingFile) {
  EXPECT_THROW(load_world("/nonexistent/anchorlab/world.txt"), MissingArtifactError);
}
