#include "anchorlab/neural.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "anchorlab/errors.hpp"

namespace anchorlab {

namespace {

constexpr double kMaxTimeFrequency = 100.0;

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

// out (rows x out_dim) = x (rows x in_dim) * W^T + b, with W given transposed
// (in_dim x out_dim) so the inner loop runs over contiguous memory.
void affine_rows(const Matrix& x, const Matrix& weight, std::span<const double> bias, Matrix& out) {
  const std::size_t in = weight.cols;
  const std::size_t outd = weight.rows;
  Matrix wt(in, outd);
  for (std::size_t o = 0; o < outd; ++o) {
    for (std::size_t i = 0; i < in; ++i) wt(i, o) = weight(o, i);
  }
  out = Matrix(x.rows, outd);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double* y = out.data.data() + r * outd;
    for (std::size_t o = 0; o < outd; ++o) y[o] = bias[o];
    const double* xr = x.data.data() + r * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      const double* w = wt.data.data() + i * outd;
      for (std::size_t o = 0; o < outd; ++o) y[o] += xi * w[o];
    }
  }
}

}  // namespace

ParamTensor::ParamTensor(std::vector<std::size_t> s)
    : shape(std::move(s)), values(product(shape), 0.0), grad(values.size(), 0.0) {}

void ParamTensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

bool ParamTensor::all_finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  for (double g : grad) {
    if (!std::isfinite(g)) return false;
  }
  return true;
}

Vec linear_forward(std::span<const double> x, const Matrix& weight, std::span<const double> bias) {
  if (weight.cols != x.size() || weight.rows != bias.size()) {
    throw DimensionError("linear_forward: weight is " + std::to_string(weight.rows) + "x" +
                         std::to_string(weight.cols) + ", input " + std::to_string(x.size()) +
                         ", bias " + std::to_string(bias.size()));
  }
  Vec y(weight.rows);
  for (std::size_t o = 0; o < weight.rows; ++o) {
    double acc = bias[o];
    for (std::size_t i = 0; i < weight.cols; ++i) acc += weight(o, i) * x[i];
    y[o] = acc;
  }
  return y;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

Vec silu(std::span<const double> x) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = silu(x[i]);
  return y;
}

double silu_derivative(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

Vec time_embedding(int t, int total_steps, int dim) {
  if (dim <= 0 || dim % 2 != 0) {
    throw ConfigError("time_embedding: dim must be a positive even integer, got " + std::to_string(dim));
  }
  if (total_steps <= 0 || t < 0 || t > total_steps) {
    throw RangeError("time_embedding: t=" + std::to_string(t) + " outside [0, " +
                     std::to_string(total_steps) + "]");
  }
  const int half = dim / 2;
  const double s = static_cast<double>(t) / static_cast<double>(total_steps);
  Vec out(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double exponent = half > 1 ? static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
    const double freq = std::pow(kMaxTimeFrequency, exponent);
    out[2 * i] = std::sin(freq * s);
    out[2 * i + 1] = std::cos(freq * s);
  }
  return out;
}

Linear::Linear(std::size_t in_dim, std::size_t out_dim)
    : weight({out_dim, in_dim}), bias({out_dim}), in_dim_(in_dim), out_dim_(out_dim) {}

void Linear::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim_));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : weight.values) v = dist(rng);
  for (auto& v : bias.values) v = dist(rng);
}

void Linear::enable_low_rank(int rank, double scale, std::mt19937_64& rng) {
  if (rank <= 0) throw ConfigError("low-rank delta needs rank >= 1");
  LowRankDelta delta;
  delta.rank = rank;
  delta.scale = scale;
  const auto r = static_cast<std::size_t>(rank);
  delta.down = ParamTensor({r, in_dim_});
  delta.up = ParamTensor({out_dim_, r});
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim_));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : delta.down.values) v = dist(rng);
  delta_ = std::move(delta);
}

Matrix Linear::effective_weight() const {
  Matrix w(out_dim_, in_dim_);
  w.data = weight.values;
  if (!delta_) return w;
  const auto r = static_cast<std::size_t>(delta_->rank);
  const auto& up = delta_->up.values;
  const auto& down = delta_->down.values;
  for (std::size_t o = 0; o < out_dim_; ++o) {
    for (std::size_t i = 0; i < in_dim_; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k) acc += up[o * r + k] * down[k * in_dim_ + i];
      w(o, i) += delta_->scale * acc;
    }
  }
  return w;
}

Mlp::Mlp(std::size_t input_dim, std::vector<std::size_t> hidden_dims, std::size_t output_dim)
    : input_dim_(input_dim), output_dim_(output_dim), hidden_dims_(std::move(hidden_dims)) {
  if (input_dim == 0 || output_dim == 0) throw ConfigError("Mlp: dimensions must be positive");
  std::size_t prev = input_dim;
  for (auto h : hidden_dims_) {
    if (h == 0) throw ConfigError("Mlp: hidden dimensions must be positive");
    layers_.emplace_back(prev, h);
    prev = h;
  }
  layers_.emplace_back(prev, output_dim);
}

void Mlp::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& layer : layers_) layer.init(rng);
}

Matrix Mlp::forward(const Matrix& x, MlpCache* cache) const {
  if (x.cols != input_dim_) {
    throw DimensionError("Mlp::forward: expected input width " + std::to_string(input_dim_) +
                         ", got " + std::to_string(x.cols));
  }
  if (cache) {
    cache->layer_inputs.clear();
    cache->pre_activations.clear();
    cache->weights.clear();
    cache->recorded = false;
  }
  Matrix h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Matrix w = layer.effective_weight();
    Matrix out;
    affine_rows(h, w, layer.bias.values, out);
    const bool hidden = l + 1 < layers_.size();
    if (cache) {
      cache->layer_inputs.push_back(std::move(h));
      cache->weights.push_back(std::move(w));
      if (hidden) cache->pre_activations.push_back(out);
    }
    if (hidden) {
      for (auto& v : out.data) v = silu(v);
    }
    h = std::move(out);
  }
  if (cache) cache->recorded = true;
  return h;
}

Matrix Mlp::backward(const MlpCache& cache, const Matrix& grad_out) {
  if (!cache.recorded || cache.layer_inputs.size() != layers_.size()) {
    throw StateError("Mlp::backward called without a recorded forward pass");
  }
  const std::size_t batch = cache.layer_inputs.front().rows;
  if (grad_out.rows != batch || grad_out.cols != output_dim_) {
    throw DimensionError("Mlp::backward: upstream gradient shape mismatch");
  }
  Matrix upstream = grad_out;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    auto& layer = layers_[li];
    const Matrix& input = cache.layer_inputs[li];
    const Matrix& w = cache.weights[li];
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();

    if (li + 1 < layers_.size()) {
      const Matrix& pre = cache.pre_activations[li];
      for (std::size_t k = 0; k < upstream.data.size(); ++k) upstream.data[k] *= silu_derivative(pre.data[k]);
    }

    // dW_eff = upstream^T * input
    Matrix dw(out, in);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xr = input.data.data() + b * in;
      const double* gr = upstream.data.data() + b * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double g = gr[o];
        double* dwr = dw.data.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) dwr[i] += g * xr[i];
      }
    }
    for (std::size_t k = 0; k < dw.data.size(); ++k) layer.weight.grad[k] += dw.data[k];
    for (std::size_t b = 0; b < batch; ++b) {
      const double* gr = upstream.data.data() + b * out;
      for (std::size_t o = 0; o < out; ++o) layer.bias.grad[o] += gr[o];
    }
    if (auto* delta = layer.low_rank()) {
      const auto r = static_cast<std::size_t>(delta->rank);
      // d up = scale * dW * down^T ; d down = scale * up^T * dW
      for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t k = 0; k < r; ++k) {
          double acc = 0.0;
          for (std::size_t i = 0; i < in; ++i) acc += dw(o, i) * delta->down.values[k * in + i];
          delta->up.grad[o * r + k] += delta->scale * acc;
        }
      }
      for (std::size_t k = 0; k < r; ++k) {
        double* dd = delta->down.grad.data() + k * in;
        for (std::size_t o = 0; o < out; ++o) {
          const double u = delta->scale * delta->up.values[o * r + k];
          if (u == 0.0) continue;
          const double* dwr = dw.data.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) dd[i] += u * dwr[i];
        }
      }
    }

    // d input = upstream * W_eff
    Matrix dx(batch, in);
    for (std::size_t b = 0; b < batch; ++b) {
      double* dxr = dx.data.data() + b * in;
      const double* gr = upstream.data.data() + b * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double g = gr[o];
        const double* wr = w.data.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) dxr[i] += g * wr[i];
      }
    }
    upstream = std::move(dx);
  }
  return upstream;
}

void Mlp::enable_low_rank(int rank, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& layer : layers_) layer.enable_low_rank(rank, scale, rng);
}

void Mlp::disable_low_rank() {
  for (auto& layer : layers_) layer.disable_low_rank();
}

bool Mlp::has_low_rank() const {
  return !layers_.empty() && layers_.front().has_low_rank();
}

std::vector<ParamTensor*> Mlp::base_parameters() {
  std::vector<ParamTensor*> out;
  for (auto& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

std::vector<ParamTensor*> Mlp::low_rank_parameters() {
  std::vector<ParamTensor*> out;
  for (auto& layer : layers_) {
    if (auto* d = layer.low_rank()) {
      out.push_back(&d->down);
      out.push_back(&d->up);
    }
  }
  return out;
}

std::vector<const ParamTensor*> Mlp::all_parameters() const {
  std::vector<const ParamTensor*> out;
  for (const auto& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
    if (const auto* d = layer.low_rank()) {
      out.push_back(&d->down);
      out.push_back(&d->up);
    }
  }
  return out;
}

void adam_step(std::span<ParamTensor* const> params, AdamState& state) {
  if (state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.emplace_back(p->size(), 0.0);
      state.second_moment.emplace_back(p->size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: parameter list does not match optimizer state");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.first_moment[k].size() != params[k]->size() || params[k]->grad.size() != params[k]->size()) {
      throw DimensionError("adam_step: parameter " + std::to_string(k) + " changed shape");
    }
  }
  state.step += 1;
  const auto& o = state.options;
  const double step = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, step);
  const double bc2 = 1.0 - std::pow(o.beta2, step);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p.values[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

std::uint64_t checksum(std::span<const ParamTensor* const> params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t word) {
    for (int b = 0; b < 8; ++b) {
      h ^= (word >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  for (const auto* p : params) {
    mix(p->values.size());
    for (double v : p->values) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

}  // namespace anchorlab
