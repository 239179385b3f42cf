#pragma once

// Analytic synthetic worlds. Superclasses are Gaussian mixtures, contexts are
// invertible affine maps, and the subject is a shifted copy of one class
// component observed only through a handful of reference points.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "anchorlab/denoiser.hpp"
#include "anchorlab/neural.hpp"

namespace anchorlab {

struct GaussianComponent {
  double weight = 0.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  // Derived from cov by prepare().
  Eigen::MatrixXd chol;  // lower factor
  double log_det = 0.0;

  // Throws NumericError when cov is not positive definite.
  void prepare();
  double log_density(const Eigen::VectorXd& x) const;
  // Largest standard deviation along any direction.
  double max_std() const;
};

struct GaussianMixture {
  std::vector<GaussianComponent> components;

  Eigen::VectorXd mean() const;
  double log_density(const Eigen::VectorXd& x) const;
  Eigen::VectorXd sample(std::mt19937_64& rng) const;
};

struct ContextTransform {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;

  Eigen::MatrixXd A_inv;  // derived
  double log_abs_det = 0.0;

  void prepare();
};

struct Subject {
  int base_class = 0;
  int base_component = 0;
  GaussianComponent generator;  // shifted copy of the base component
  std::vector<Eigen::VectorXd> references;
};

struct WorldOptions {
  std::uint64_t seed = 0;
  int dim = 2;
  int num_classes = 4;
  int num_contexts = 3;
  int num_references = 5;
  double subject_offset = 2.5;  // Mahalanobis distance from the base component mean
  double reference_spread = 0.5;  // generator covariance = spread^2 * base covariance

  void validate() const;
  bool operator==(const WorldOptions&) const = default;
};

struct World {
  WorldOptions options;
  std::vector<GaussianMixture> classes;
  std::vector<ContextTransform> contexts;  // PLAIN is implicit (identity)
  Subject subject;

  int dim() const { return options.dim; }
  int num_classes() const { return static_cast<int>(classes.size()); }
  int num_contexts() const { return static_cast<int>(contexts.size()); }
  Matrix reference_matrix() const;
};

struct TrainExample {
  Vec z0;
  ConditionToken cond;
};

// Deterministic world from options.seed. Class mixtures are placed so every
// pair of class means (and of their components) is separated by at least six
// times the largest component standard deviation.
World build_world(const WorldOptions& options);

// Context index -1 is PLAIN (identity).
Vec context_apply(const World& world, int context, std::span<const double> x);
Vec context_invert(const World& world, int context, std::span<const double> y);

// Exact log-density of x under class k pushed through context j.
double class_log_density(const World& world, int k, int context, std::span<const double> x);

// Samples from class k in PLAIN coordinates.
Matrix sample_class(const World& world, int k, std::size_t n, std::mt19937_64& rng);

// Uniform over (class, context incl. PLAIN) pairs; 10% of conditions are NULL.
std::vector<TrainExample> sample_pretrain_batch(const World& world, std::size_t n, std::mt19937_64& rng);
std::vector<TrainExample> sample_pretrain_batch(const World& world, std::size_t n, std::uint64_t seed);

// References drawn uniformly with replacement, condition (SUBJECT, PLAIN).
std::vector<TrainExample> subject_batch(const World& world, std::size_t n, std::mt19937_64& rng);
std::vector<TrainExample> subject_batch(const World& world, std::size_t n, std::uint64_t seed);

inline constexpr double kNullConditionRate = 0.10;

// Structured text; doubles are written in shortest round-trip form so a
// reloaded world reproduces densities exactly.
void save_world(const World& world, const std::filesystem::path& path);
World load_world(const std::filesystem::path& path);

// A one-class, context-free world whose single class is N(mean, cov). Used for
// sampler sanity checks.
World gaussian_world(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, std::uint64_t seed);

}  // namespace anchorlab
