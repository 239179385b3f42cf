#include "anchorlab/concepts.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "anchorlab/errors.hpp"
#include "anchorlab/io.hpp"

namespace anchorlab {

namespace {

constexpr double kSeparationFactor = 6.0;
constexpr double kMinComponentStd = 0.25;
constexpr double kMaxComponentStd = 0.45;
constexpr double kComponentJitter = 0.5;
constexpr double kMinContextScale = 0.7;
constexpr double kMaxContextScale = 1.4;
constexpr double kContextShift = 1.5;
constexpr double kReferenceMaxMahalanobis = 4.0;
constexpr double kSupportQuantile = 0.001;
constexpr int kSupportSamples = 20000;

Eigen::VectorXd to_eigen(std::span<const double> x) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) v[static_cast<Eigen::Index>(i)] = x[i];
  return v;
}

Vec to_vec(const Eigen::VectorXd& v) { return Vec(v.data(), v.data() + v.size()); }

Eigen::VectorXd gaussian_vector(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v[i] = normal(rng);
  return v;
}

Eigen::MatrixXd random_orthogonal(int d, std::mt19937_64& rng) {
  Eigen::MatrixXd g(d, d);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int c = 0; c < d; ++c) {
    for (int r = 0; r < d; ++r) g(r, c) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < d; ++i) {
    if (r(i, i) < 0) q.col(i) *= -1.0;
  }
  return q;
}

const ContextTransform* context_ptr(const World& world, int context) {
  if (context < 0) return nullptr;
  if (context >= world.num_contexts()) {
    throw RangeError("context " + std::to_string(context) + " out of range");
  }
  return &world.contexts[static_cast<std::size_t>(context)];
}

void check_dim(const World& world, std::size_t n) {
  if (n != static_cast<std::size_t>(world.dim())) throw DimensionError("world vector dimension mismatch");
}

double support_threshold(const World& world, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& mix = world.classes[static_cast<std::size_t>(k)];
  std::vector<double> dens;
  dens.reserve(kSupportSamples);
  for (int i = 0; i < kSupportSamples; ++i) dens.push_back(mix.log_density(mix.sample(rng)));
  std::sort(dens.begin(), dens.end());
  return dens[static_cast<std::size_t>(kSupportQuantile * kSupportSamples)];
}

// Rejection placement of class centroids.
bool well_separated(const std::vector<GaussianMixture>& classes, double min_dist) {
  for (std::size_t a = 0; a < classes.size(); ++a) {
    for (std::size_t b = a + 1; b < classes.size(); ++b) {
      if ((classes[a].mean() - classes[b].mean()).norm() < min_dist) return false;
      for (const auto& ca : classes[a].components) {
        for (const auto& cb : classes[b].components) {
          if ((ca.mean - cb.mean).norm() < min_dist) return false;
        }
      }
    }
  }
  return true;
}

}  // namespace

void GaussianComponent::prepare() {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericError("covariance is not positive definite");
  chol = llt.matrixL();
  log_det = 0.0;
  for (Eigen::Index i = 0; i < chol.rows(); ++i) {
    if (!(chol(i, i) > 0.0)) throw NumericError("singular covariance");
    log_det += 2.0 * std::log(chol(i, i));
  }
}

double GaussianComponent::log_density(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd diff = x - mean;
  const Eigen::VectorXd white = chol.triangularView<Eigen::Lower>().solve(diff);
  const double d = static_cast<double>(mean.size());
  return -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det + white.squaredNorm());
}

double GaussianComponent::max_std() const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  return std::sqrt(es.eigenvalues().maxCoeff());
}

Eigen::VectorXd GaussianMixture::mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(components.front().mean.size());
  for (const auto& c : components) m += c.weight * c.mean;
  return m;
}

double GaussianMixture::log_density(const Eigen::VectorXd& x) const {
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  terms.reserve(components.size());
  for (const auto& c : components) {
    terms.push_back(std::log(c.weight) + c.log_density(x));
    best = std::max(best, terms.back());
  }
  if (!std::isfinite(best)) return best;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - best);
  return best + std::log(acc);
}

Eigen::VectorXd GaussianMixture::sample(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  std::size_t pick = components.size() - 1;
  for (std::size_t i = 0; i < components.size(); ++i) {
    acc += components[i].weight;
    if (u < acc) {
      pick = i;
      break;
    }
  }
  const auto& c = components[pick];
  return c.mean + c.chol * gaussian_vector(static_cast<int>(c.mean.size()), rng);
}

void ContextTransform::prepare() {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  const double det = lu.determinant();
  if (!(std::abs(det) > 1e-6)) throw NumericError("context transform is singular");
  A_inv = lu.inverse();
  log_abs_det = std::log(std::abs(det));
}

void WorldOptions::validate() const {
  if (dim < 1) throw ConfigError("world.d must be >= 1");
  if (num_classes < 2) throw ConfigError("world.K must be >= 2");
  if (num_contexts < 1) throw ConfigError("world.n_contexts must be >= 1");
  if (num_references < 4 || num_references > 6) throw ConfigError("world.n_ref must lie in [4, 6]");
  if (!(subject_offset >= 2.0 && subject_offset <= 3.0)) throw ConfigError("world.subject_offset must lie in [2, 3]");
  if (!(reference_spread > 0.0 && reference_spread <= 1.0)) throw ConfigError("world.ref_spread must lie in (0, 1]");
}

Matrix World::reference_matrix() const {
  Matrix m(subject.references.size(), static_cast<std::size_t>(dim()));
  for (std::size_t i = 0; i < subject.references.size(); ++i) {
    for (int k = 0; k < dim(); ++k) m(i, static_cast<std::size_t>(k)) = subject.references[i][k];
  }
  return m;
}

World build_world(const WorldOptions& options) {
  options.validate();
  const int d = options.dim;
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  World world;
  world.options = options;

  // Shapes of each class relative to its centroid.
  std::vector<GaussianMixture> shapes;
  double max_std = 0.0;
  for (int k = 0; k < options.num_classes; ++k) {
    GaussianMixture mix;
    const int n_comp = 2 + static_cast<int>(unif(rng) < 0.5);
    double wsum = 0.0;
    for (int c = 0; c < n_comp; ++c) {
      GaussianComponent comp;
      comp.weight = 0.5 + unif(rng);
      wsum += comp.weight;
      comp.mean = kComponentJitter * gaussian_vector(d, rng);
      const Eigen::MatrixXd q = random_orthogonal(d, rng);
      Eigen::VectorXd var(d);
      for (int i = 0; i < d; ++i) {
        const double s = kMinComponentStd + (kMaxComponentStd - kMinComponentStd) * unif(rng);
        var[i] = s * s;
      }
      comp.cov = q * var.asDiagonal() * q.transpose();
      comp.cov = 0.5 * (comp.cov + comp.cov.transpose());
      comp.prepare();
      max_std = std::max(max_std, comp.max_std());
      mix.components.push_back(std::move(comp));
    }
    for (auto& c : mix.components) c.weight /= wsum;
    shapes.push_back(std::move(mix));
  }

  const double min_dist = kSeparationFactor * max_std;
  double half_width = min_dist;
  for (int attempt = 0;; ++attempt) {
    if (attempt > 0 && attempt % 200 == 0) half_width *= 1.15;
    std::vector<GaussianMixture> placed = shapes;
    for (auto& mix : placed) {
      Eigen::VectorXd centre(d);
      for (int i = 0; i < d; ++i) centre[i] = half_width * (2.0 * unif(rng) - 1.0);
      for (auto& c : mix.components) c.mean += centre;
    }
    if (well_separated(placed, min_dist)) {
      world.classes = std::move(placed);
      break;
    }
  }

  for (int j = 0; j < options.num_contexts; ++j) {
    ContextTransform ctx;
    const Eigen::MatrixXd q1 = random_orthogonal(d, rng);
    const Eigen::MatrixXd q2 = random_orthogonal(d, rng);
    Eigen::VectorXd s(d);
    for (int i = 0; i < d; ++i) s[i] = kMinContextScale + (kMaxContextScale - kMinContextScale) * unif(rng);
    ctx.A = q1 * s.asDiagonal() * q2;
    ctx.b.resize(d);
    for (int i = 0; i < d; ++i) ctx.b[i] = kContextShift * (2.0 * unif(rng) - 1.0);
    ctx.prepare();
    world.contexts.push_back(std::move(ctx));
  }

  Subject& subject = world.subject;
  subject.base_class = static_cast<int>(unif(rng) * options.num_classes) % options.num_classes;
  const auto& base_mix = world.classes[static_cast<std::size_t>(subject.base_class)];
  subject.base_component = 0;
  for (std::size_t c = 1; c < base_mix.components.size(); ++c) {
    if (base_mix.components[c].weight > base_mix.components[static_cast<std::size_t>(subject.base_component)].weight) {
      subject.base_component = static_cast<int>(c);
    }
  }
  const auto& base = base_mix.components[static_cast<std::size_t>(subject.base_component)];
  // Push the subject outward, away from the class centroid.
  const Eigen::VectorXd fallback = gaussian_vector(d, rng);
  Eigen::VectorXd dir = base.mean - base_mix.mean();
  if (dir.norm() < 1e-9) dir = fallback;
  dir.normalize();
  const Eigen::VectorXd white = base.chol.triangularView<Eigen::Lower>().solve(dir);
  const double maha_unit = white.norm();
  subject.generator.weight = 1.0;
  subject.generator.mean = base.mean + (options.subject_offset / maha_unit) * dir;
  subject.generator.cov = options.reference_spread * options.reference_spread * base.cov;
  subject.generator.prepare();

  const double support = support_threshold(world, subject.base_class, options.seed ^ 0xa5a5a5a5ULL);
  for (int tries = 0; static_cast<int>(subject.references.size()) < options.num_references; ++tries) {
    if (tries > 100000) throw NumericError("build_world: could not draw subject references inside class support");
    const Eigen::VectorXd z = gaussian_vector(d, rng);
    if (z.norm() > kReferenceMaxMahalanobis) continue;
    const Eigen::VectorXd x = subject.generator.mean + subject.generator.chol * z;
    if (base_mix.log_density(x) < support) continue;
    subject.references.push_back(x);
  }
  return world;
}

Vec context_apply(const World& world, int context, std::span<const double> x) {
  check_dim(world, x.size());
  const auto* ctx = context_ptr(world, context);
  if (!ctx) return Vec(x.begin(), x.end());
  return to_vec(ctx->A * to_eigen(x) + ctx->b);
}

Vec context_invert(const World& world, int context, std::span<const double> y) {
  check_dim(world, y.size());
  const auto* ctx = context_ptr(world, context);
  if (!ctx) return Vec(y.begin(), y.end());
  return to_vec(ctx->A_inv * (to_eigen(y) - ctx->b));
}

double class_log_density(const World& world, int k, int context, std::span<const double> x) {
  if (k < 0 || k >= world.num_classes()) throw RangeError("class " + std::to_string(k) + " out of range");
  check_dim(world, x.size());
  const auto* ctx = context_ptr(world, context);
  const auto& mix = world.classes[static_cast<std::size_t>(k)];
  if (!ctx) return mix.log_density(to_eigen(x));
  const Eigen::VectorXd pre = ctx->A_inv * (to_eigen(x) - ctx->b);
  return mix.log_density(pre) - ctx->log_abs_det;
}

Matrix sample_class(const World& world, int k, std::size_t n, std::mt19937_64& rng) {
  if (k < 0 || k >= world.num_classes()) throw RangeError("class " + std::to_string(k) + " out of range");
  const auto& mix = world.classes[static_cast<std::size_t>(k)];
  Matrix out(n, static_cast<std::size_t>(world.dim()));
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd x = mix.sample(rng);
    for (int j = 0; j < world.dim(); ++j) out(i, static_cast<std::size_t>(j)) = x[j];
  }
  return out;
}

std::vector<TrainExample> sample_pretrain_batch(const World& world, std::size_t n, std::mt19937_64& rng) {
  const int pairs = world.num_classes() * (world.num_contexts() + 1);
  std::uniform_int_distribution<int> pick(0, pairs - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<TrainExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int p = pick(rng);
    const int k = p / (world.num_contexts() + 1);
    const int ctx = p % (world.num_contexts() + 1) - 1;
    const Eigen::VectorXd x = world.classes[static_cast<std::size_t>(k)].sample(rng);
    TrainExample ex;
    ex.z0 = context_apply(world, ctx, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
    ex.cond = unif(rng) < kNullConditionRate ? ConditionToken::null(ctx) : ConditionToken::cls(k, ctx);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TrainExample> sample_pretrain_batch(const World& world, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_pretrain_batch(world, n, rng);
}

std::vector<TrainExample> subject_batch(const World& world, std::size_t n, std::mt19937_64& rng) {
  const auto& refs = world.subject.references;
  if (refs.empty()) throw StateError("subject_batch: world has no subject references");
  std::uniform_int_distribution<std::size_t> pick(0, refs.size() - 1);
  std::vector<TrainExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = refs[pick(rng)];
    out.push_back({to_vec(r), ConditionToken::subject()});
  }
  return out;
}

std::vector<TrainExample> subject_batch(const World& world, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return subject_batch(world, n, rng);
}

namespace {

void write_vec(std::ostream& out, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << format_double(v[i]);
}

void write_mat(std::ostream& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << ' ' << format_double(m(r, c));
  }
}

class WorldReader {
 public:
  WorldReader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

  void expect(const std::string& word) {
    std::string got;
    if (!(in_ >> got) || got != word) fail("expected '" + word + "', got '" + got + "'");
  }
  template <typename T>
  T value() {
    std::string tok;
    if (!(in_ >> tok)) fail("unexpected end of file");
    if constexpr (std::is_same_v<T, double>) {
      return parse_double(tok);
    } else {
      std::istringstream ss(tok);
      T v{};
      if (!(ss >> v)) fail("bad integer '" + tok + "'");
      return v;
    }
  }
  Eigen::VectorXd vec(int d) {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v[i] = value<double>();
    return v;
  }
  Eigen::MatrixXd mat(int d) {
    Eigen::MatrixXd m(d, d);
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c < d; ++c) m(r, c) = value<double>();
    }
    return m;
  }
  [[noreturn]] void fail(const std::string& msg) { throw MissingArtifactError("world file " + name_ + ": " + msg); }

 private:
  std::istream& in_;
  std::string name_;
};

}  // namespace

void save_world(const World& world, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot write world file: " + path.string());
  const auto& o = world.options;
  out << "anchorlab-world 1\n";
  out << "seed " << o.seed << "\n";
  out << "dim " << o.dim << "\n";
  out << "classes " << world.num_classes() << "\n";
  out << "contexts " << world.num_contexts() << "\n";
  out << "references " << o.num_references << "\n";
  out << "subject_offset " << format_double(o.subject_offset) << "\n";
  out << "reference_spread " << format_double(o.reference_spread) << "\n";
  for (std::size_t k = 0; k < world.classes.size(); ++k) {
    out << "class " << k << " components " << world.classes[k].components.size() << "\n";
    for (const auto& c : world.classes[k].components) {
      out << "component " << format_double(c.weight) << " mean";
      write_vec(out, c.mean);
      out << " cov";
      write_mat(out, c.cov);
      out << "\n";
    }
  }
  for (std::size_t j = 0; j < world.contexts.size(); ++j) {
    out << "context " << j << " A";
    write_mat(out, world.contexts[j].A);
    out << " b";
    write_vec(out, world.contexts[j].b);
    out << "\n";
  }
  const auto& s = world.subject;
  out << "subject " << s.base_class << " " << s.base_component << " mean";
  write_vec(out, s.generator.mean);
  out << " cov";
  write_mat(out, s.generator.cov);
  out << "\n";
  out << "refs " << s.references.size() << "\n";
  for (const auto& r : s.references) {
    out << "ref";
    write_vec(out, r);
    out << "\n";
  }
  if (!out) throw MissingArtifactError("failed writing world file: " + path.string());
}

World load_world(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open world file: " + path.string());
  WorldReader r(in, path.string());
  r.expect("anchorlab-world");
  if (r.value<int>() != 1) r.fail("unsupported version");
  World w;
  auto& o = w.options;
  r.expect("seed");
  o.seed = r.value<std::uint64_t>();
  r.expect("dim");
  o.dim = r.value<int>();
  r.expect("classes");
  o.num_classes = r.value<int>();
  r.expect("contexts");
  o.num_contexts = r.value<int>();
  r.expect("references");
  o.num_references = r.value<int>();
  r.expect("subject_offset");
  o.subject_offset = r.value<double>();
  r.expect("reference_spread");
  o.reference_spread = r.value<double>();
  const int d = o.dim;
  for (int k = 0; k < o.num_classes; ++k) {
    r.expect("class");
    if (r.value<int>() != k) r.fail("classes out of order");
    r.expect("components");
    const int n = r.value<int>();
    GaussianMixture mix;
    for (int c = 0; c < n; ++c) {
      GaussianComponent comp;
      r.expect("component");
      comp.weight = r.value<double>();
      r.expect("mean");
      comp.mean = r.vec(d);
      r.expect("cov");
      comp.cov = r.mat(d);
      comp.prepare();
      mix.components.push_back(std::move(comp));
    }
    w.classes.push_back(std::move(mix));
  }
  for (int j = 0; j < o.num_contexts; ++j) {
    ContextTransform ctx;
    r.expect("context");
    if (r.value<int>() != j) r.fail("contexts out of order");
    r.expect("A");
    ctx.A = r.mat(d);
    r.expect("b");
    ctx.b = r.vec(d);
    ctx.prepare();
    w.contexts.push_back(std::move(ctx));
  }
  r.expect("subject");
  w.subject.base_class = r.value<int>();
  w.subject.base_component = r.value<int>();
  r.expect("mean");
  w.subject.generator.weight = 1.0;
  w.subject.generator.mean = r.vec(d);
  r.expect("cov");
  w.subject.generator.cov = r.mat(d);
  w.subject.generator.prepare();
  r.expect("refs");
  const int n_refs = r.value<int>();
  for (int i = 0; i < n_refs; ++i) {
    r.expect("ref");
    w.subject.references.push_back(r.vec(d));
  }
  return w;
}

World gaussian_world(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, std::uint64_t seed) {
  World w;
  w.options.seed = seed;
  w.options.dim = static_cast<int>(mean.size());
  w.options.num_classes = 1;
  w.options.num_contexts = 0;
  w.options.num_references = 0;
  GaussianComponent c;
  c.weight = 1.0;
  c.mean = mean;
  c.cov = cov;
  c.prepare();
  GaussianMixture mix;
  mix.components.push_back(std::move(c));
  w.classes.push_back(std::move(mix));
  return w;
}

}  // namespace anchorlab
