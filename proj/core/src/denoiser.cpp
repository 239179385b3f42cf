#include "anchorlab/denoiser.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <type_traits>

#include "anchorlab/errors.hpp"

namespace anchorlab {

namespace {

constexpr std::array<char, 8> kCheckpointMagic{'A', 'N', 'C', 'H', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <typename T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void tensor(const ParamTensor& p) {
    put<std::uint32_t>(static_cast<std::uint32_t>(p.shape.size()));
    for (auto s : p.shape) put<std::uint64_t>(s);
    out_.write(reinterpret_cast<const char*>(p.values.data()),
               static_cast<std::streamsize>(p.values.size() * sizeof(double)));
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string name) : in_(in), name_(std::move(name)) {}
  template <typename T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw MissingArtifactError("truncated checkpoint: " + name_);
    return v;
  }
  void tensor(ParamTensor& p) {
    const auto ndims = get<std::uint32_t>();
    if (ndims != p.shape.size()) throw NumericError("checkpoint tensor rank mismatch in " + name_);
    for (std::size_t i = 0; i < ndims; ++i) {
      if (get<std::uint64_t>() != p.shape[i]) throw NumericError("checkpoint tensor shape mismatch in " + name_);
    }
    in_.read(reinterpret_cast<char*>(p.values.data()), static_cast<std::streamsize>(p.values.size() * sizeof(double)));
    if (!in_) throw MissingArtifactError("truncated checkpoint: " + name_);
  }

 private:
  std::ifstream& in_;
  std::string name_;
};

template <typename Model>
auto serial_order(Model& m) {
  using Ptr = std::conditional_t<std::is_const_v<Model>, const ParamTensor*, ParamTensor*>;
  std::vector<Ptr> out;
  for (auto& layer : m.net().layers()) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
    if (auto* d = layer.low_rank()) {
      out.push_back(&d->down);
      out.push_back(&d->up);
    }
  }
  for (auto& e : m.concept_embeddings()) out.push_back(&e);
  for (auto& e : m.context_embeddings()) out.push_back(&e);
  return out;
}

}  // namespace

std::string to_string(const ConditionToken& c) {
  std::string name;
  switch (c.kind) {
    case ConceptKind::null_concept: name = "NULL"; break;
    case ConceptKind::class_concept: name = "CLASS(" + std::to_string(c.class_index) + ")"; break;
    case ConceptKind::subject: name = "SUBJECT"; break;
  }
  return name + "/" + (c.is_plain() ? std::string("PLAIN") : "CTX(" + std::to_string(c.context) + ")");
}

std::size_t DenoiserConfig::input_width() const {
  return static_cast<std::size_t>(data_dim + time_dim + concept_dim + context_dim);
}

DenoiserModel::DenoiserModel(DenoiserConfig config, std::uint64_t seed) : config_(std::move(config)) {
  if (config_.data_dim <= 0 || config_.num_classes <= 0 || config_.num_contexts < 0 || config_.total_steps < 2) {
    throw ConfigError("DenoiserModel: invalid dimensions");
  }
  if (config_.time_dim % 2 != 0) throw ConfigError("DenoiserModel: time_dim must be even");
  net_ = Mlp(config_.input_width(), config_.hidden, static_cast<std::size_t>(config_.data_dim));
  net_.init(seed);
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto cdim = static_cast<std::size_t>(config_.concept_dim);
  const auto xdim = static_cast<std::size_t>(config_.context_dim);
  for (int k = 0; k < config_.num_classes + 1; ++k) {
    ParamTensor e({cdim});
    for (auto& v : e.values) v = normal(rng);
    concept_emb_.push_back(std::move(e));
  }
  for (int j = 0; j < config_.num_contexts + 1; ++j) {
    ParamTensor e({xdim});
    for (auto& v : e.values) v = normal(rng);
    context_emb_.push_back(std::move(e));
  }
  build_time_table();
}

void DenoiserModel::build_time_table() {
  time_table_.clear();
  for (int t = 0; t <= config_.total_steps; ++t) {
    time_table_.push_back(time_embedding(t, config_.total_steps, config_.time_dim));
  }
}

std::size_t DenoiserModel::concept_row(const ConditionToken& c) const {
  switch (c.kind) {
    case ConceptKind::null_concept: return 0;
    case ConceptKind::class_concept:
      if (c.class_index < 0 || c.class_index >= config_.num_classes) {
        throw RangeError("class index " + std::to_string(c.class_index) + " out of range");
      }
      return static_cast<std::size_t>(1 + c.class_index);
    case ConceptKind::subject:
      if (!has_subject_) throw StateError("SUBJECT condition used before a subject was registered");
      return static_cast<std::size_t>(config_.num_classes + 1);
  }
  return 0;
}

std::size_t DenoiserModel::context_row(const ConditionToken& c) const {
  if (c.context >= config_.num_contexts) {
    throw RangeError("context index " + std::to_string(c.context) + " out of range");
  }
  return c.is_plain() ? 0 : static_cast<std::size_t>(1 + c.context);
}

Matrix DenoiserModel::predict(const Matrix& z, std::span<const int> t, std::span<const ConditionToken> cond,
                              DenoiserCache* cache) const {
  const auto d = static_cast<std::size_t>(config_.data_dim);
  if (z.cols != d || t.size() != z.rows || cond.size() != z.rows) {
    throw DimensionError("DenoiserModel::predict: batch shape mismatch");
  }
  const std::size_t width = config_.input_width();
  Matrix input(z.rows, width);
  for (std::size_t r = 0; r < z.rows; ++r) {
    if (t[r] < 0 || t[r] > config_.total_steps) throw RangeError("timestep " + std::to_string(t[r]) + " out of range");
    double* row = input.data.data() + r * width;
    std::size_t off = 0;
    for (std::size_t i = 0; i < d; ++i) row[off++] = z(r, i);
    for (double v : time_table_[static_cast<std::size_t>(t[r])]) row[off++] = v;
    for (double v : concept_emb_[concept_row(cond[r])].values) row[off++] = v;
    for (double v : context_emb_[context_row(cond[r])].values) row[off++] = v;
  }
  if (cache) cache->conditions.assign(cond.begin(), cond.end());
  return net_.forward(input, cache ? &cache->mlp : nullptr);
}

Matrix DenoiserModel::predict(const Matrix& z, int t, const ConditionToken& cond) const {
  std::vector<int> ts(z.rows, t);
  std::vector<ConditionToken> cs(z.rows, cond);
  return predict(z, ts, cs);
}

void DenoiserModel::backward(const DenoiserCache& cache, const Matrix& grad_out) {
  Matrix grad_in = net_.backward(cache.mlp, grad_out);
  const auto d = static_cast<std::size_t>(config_.data_dim);
  const auto tdim = static_cast<std::size_t>(config_.time_dim);
  const auto cdim = static_cast<std::size_t>(config_.concept_dim);
  const auto xdim = static_cast<std::size_t>(config_.context_dim);
  for (std::size_t r = 0; r < grad_in.rows; ++r) {
    const auto g = grad_in.row(r);
    auto& ce = concept_emb_[concept_row(cache.conditions[r])];
    for (std::size_t i = 0; i < cdim; ++i) ce.grad[i] += g[d + tdim + i];
    auto& xe = context_emb_[context_row(cache.conditions[r])];
    for (std::size_t i = 0; i < xdim; ++i) xe.grad[i] += g[d + tdim + cdim + i];
  }
}

void DenoiserModel::register_subject(int base_class) {
  if (base_class < 0 || base_class >= config_.num_classes) throw RangeError("register_subject: bad base class");
  ParamTensor e = concept_emb_[static_cast<std::size_t>(1 + base_class)];
  e.zero_grad();
  if (has_subject_) {
    concept_emb_.back() = std::move(e);
  } else {
    concept_emb_.push_back(std::move(e));
  }
  has_subject_ = true;
  subject_base_class_ = base_class;
}

std::vector<ParamTensor*> DenoiserModel::base_parameters() {
  auto out = net_.base_parameters();
  for (auto& e : concept_emb_) out.push_back(&e);
  for (auto& e : context_emb_) out.push_back(&e);
  return out;
}

std::vector<ParamTensor*> DenoiserModel::low_rank_parameters() { return net_.low_rank_parameters(); }

ParamTensor* DenoiserModel::subject_embedding() { return has_subject_ ? &concept_emb_.back() : nullptr; }

std::vector<const ParamTensor*> DenoiserModel::all_parameters() const {
  auto out = net_.all_parameters();
  for (const auto& e : concept_emb_) out.push_back(&e);
  for (const auto& e : context_emb_) out.push_back(&e);
  return out;
}

void DenoiserModel::zero_grad() {
  for (auto* p : base_parameters()) p->zero_grad();
  for (auto* p : low_rank_parameters()) p->zero_grad();
}

bool DenoiserModel::all_finite() const {
  for (const auto* p : all_parameters()) {
    if (!p->all_finite()) return false;
  }
  return true;
}

void DenoiserModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot write checkpoint: " + path.string());
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  Writer w(out);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::int32_t>(config_.data_dim);
  w.put<std::int32_t>(config_.num_classes);
  w.put<std::int32_t>(config_.num_contexts);
  w.put<std::int32_t>(config_.total_steps);
  w.put<std::int32_t>(config_.time_dim);
  w.put<std::int32_t>(config_.concept_dim);
  w.put<std::int32_t>(config_.context_dim);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(config_.hidden.size()));
  for (auto h : config_.hidden) w.put<std::uint64_t>(h);
  w.put<std::uint8_t>(has_subject_ ? 1 : 0);
  w.put<std::int32_t>(subject_base_class_);
  w.put<std::uint8_t>(trained_ ? 1 : 0);
  const auto* delta = net_.layers().front().low_rank();
  w.put<std::uint8_t>(delta ? 1 : 0);
  w.put<std::int32_t>(delta ? delta->rank : 0);
  w.put<double>(delta ? delta->scale : 0.0);
  const auto tensors = serial_order(*this);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto* p : tensors) w.tensor(*p);
  if (!out) throw MissingArtifactError("failed writing checkpoint: " + path.string());
}

DenoiserModel DenoiserModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw MissingArtifactError("not an anchorlab checkpoint: " + path.string());
  Reader r(in, path.string());
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw MissingArtifactError("unsupported checkpoint version " + std::to_string(version));
  }
  DenoiserConfig cfg;
  cfg.data_dim = r.get<std::int32_t>();
  cfg.num_classes = r.get<std::int32_t>();
  cfg.num_contexts = r.get<std::int32_t>();
  cfg.total_steps = r.get<std::int32_t>();
  cfg.time_dim = r.get<std::int32_t>();
  cfg.concept_dim = r.get<std::int32_t>();
  cfg.context_dim = r.get<std::int32_t>();
  const auto n_hidden = r.get<std::uint32_t>();
  cfg.hidden.clear();
  for (std::uint32_t i = 0; i < n_hidden; ++i) cfg.hidden.push_back(r.get<std::uint64_t>());
  const bool has_subject = r.get<std::uint8_t>() != 0;
  const int base_class = r.get<std::int32_t>();
  const bool trained = r.get<std::uint8_t>() != 0;
  const bool has_delta = r.get<std::uint8_t>() != 0;
  const int rank = r.get<std::int32_t>();
  const double scale = r.get<double>();

  DenoiserModel m(cfg, 0);
  if (has_subject) m.register_subject(base_class);
  if (has_delta) m.enable_low_rank(rank, scale, 0);
  m.trained_ = trained;
  const auto tensors = serial_order(m);
  if (r.get<std::uint32_t>() != tensors.size()) throw NumericError("checkpoint tensor count mismatch");
  for (auto* p : tensors) r.tensor(*p);
  return m;
}

}  // namespace anchorlab
