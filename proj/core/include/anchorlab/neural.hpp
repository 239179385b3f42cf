#pragma once

// Minimal dense-network substrate: parameter tensors, linear layers with
// optional low-rank deltas, a SiLU MLP with explicit reverse-mode backward,
// sinusoidal time features, and Adam.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace anchorlab {

using Vec = std::vector<double>;

// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

struct ParamTensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;

  ParamTensor() = default;
  explicit ParamTensor(std::vector<std::size_t> shape);

  std::size_t size() const { return values.size(); }
  void zero_grad();
  bool all_finite() const;
};

// y = W x + b for a single vector. Throws DimensionError on mismatch.
Vec linear_forward(std::span<const double> x, const Matrix& weight, std::span<const double> bias);

double silu(double x);
Vec silu(std::span<const double> x);
double silu_derivative(double x);

// Interleaved [sin(f_0 s), cos(f_0 s), sin(f_1 s), cos(f_1 s), ...] with s = t / T
// and frequencies spaced geometrically from 1 to 100.
Vec time_embedding(int t, int total_steps, int dim);

struct LowRankDelta {
  ParamTensor down;  // rank x in
  ParamTensor up;    // out x rank, zero at init
  int rank = 0;
  double scale = 1.0;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_dim, std::size_t out_dim);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and bias.
  void init(std::mt19937_64& rng);

  void enable_low_rank(int rank, double scale, std::mt19937_64& rng);
  void disable_low_rank() { delta_.reset(); }
  bool has_low_rank() const { return delta_.has_value(); }
  LowRankDelta* low_rank() { return delta_ ? &*delta_ : nullptr; }
  const LowRankDelta* low_rank() const { return delta_ ? &*delta_ : nullptr; }

  // W + scale * up * down (exactly W while up is zero).
  Matrix effective_weight() const;

  ParamTensor weight;  // out x in
  ParamTensor bias;    // out

 private:
  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
  std::optional<LowRankDelta> delta_;
};

// Activations recorded by Mlp::forward for the matching backward call.
struct MlpCache {
  std::vector<Matrix> layer_inputs;    // input to each linear layer
  std::vector<Matrix> pre_activations; // output of each hidden linear layer
  std::vector<Matrix> weights;         // effective weights used in the pass
  bool recorded = false;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t input_dim, std::vector<std::size_t> hidden_dims, std::size_t output_dim);

  void init(std::uint64_t seed);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }
  const std::vector<std::size_t>& hidden_dims() const { return hidden_dims_; }

  // Batched forward: x is batch x input_dim. Pass a cache to enable backward.
  Matrix forward(const Matrix& x, MlpCache* cache = nullptr) const;

  // Accumulates parameter gradients (including low-rank deltas) and returns
  // the gradient with respect to the input batch. Throws StateError if the
  // cache holds no recorded forward pass.
  Matrix backward(const MlpCache& cache, const Matrix& grad_out);

  void enable_low_rank(int rank, double scale, std::uint64_t seed);
  void disable_low_rank();
  bool has_low_rank() const;

  std::vector<ParamTensor*> base_parameters();
  std::vector<ParamTensor*> low_rank_parameters();
  std::vector<const ParamTensor*> all_parameters() const;

  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }

 private:
  std::size_t input_dim_ = 0;
  std::size_t output_dim_ = 0;
  std::vector<std::size_t> hidden_dims_;
  std::vector<Linear> layers_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step = 0;

  AdamState() = default;
  explicit AdamState(AdamOptions opts) : options(opts) {}
};

// One bias-corrected Adam update over `params` using their stored grads.
// Accumulators are allocated on the first call; later calls must pass
// parameters of the same shapes in the same order.
void adam_step(std::span<ParamTensor* const> params, AdamState& state);

// Deterministic FNV-1a digest of parameter bit patterns.
std::uint64_t checksum(std::span<const ParamTensor* const> params);

}  // namespace anchorlab
