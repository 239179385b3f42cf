#pragma once

// Conditional noise predictor eps(z_t, c, t): an MLP over
// [z_t | time features | concept embedding | context embedding].

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "anchorlab/neural.hpp"

namespace anchorlab {

enum class ConceptKind { null_concept, class_concept, subject };

// A discrete prompt stand-in: concept (NULL / CLASS(k) / SUBJECT) and
// context (PLAIN when context < 0, otherwise CTX(context)).
struct ConditionToken {
  ConceptKind kind = ConceptKind::null_concept;
  int class_index = -1;
  int context = -1;

  static ConditionToken null(int ctx = -1) { return {ConceptKind::null_concept, -1, ctx}; }
  static ConditionToken cls(int k, int ctx = -1) { return {ConceptKind::class_concept, k, ctx}; }
  static ConditionToken subject(int ctx = -1) { return {ConceptKind::subject, -1, ctx}; }

  bool is_plain() const { return context < 0; }
  ConditionToken with_context(int ctx) const { return {kind, class_index, ctx}; }

  bool operator==(const ConditionToken&) const = default;
};

std::string to_string(const ConditionToken& c);

struct DenoiserConfig {
  int data_dim = 2;
  int num_classes = 4;
  int num_contexts = 3;
  int total_steps = 200;
  int time_dim = 32;
  int concept_dim = 16;
  int context_dim = 16;
  std::vector<std::size_t> hidden{128, 128};

  std::size_t input_width() const;
  bool operator==(const DenoiserConfig&) const = default;
};

// Forward record for DenoiserModel::backward.
struct DenoiserCache {
  MlpCache mlp;
  std::vector<ConditionToken> conditions;
};

class DenoiserModel {
 public:
  DenoiserModel() = default;
  DenoiserModel(DenoiserConfig config, std::uint64_t seed);

  const DenoiserConfig& config() const { return config_; }

  // z: batch x data_dim; one timestep and condition per row.
  Matrix predict(const Matrix& z, std::span<const int> t, std::span<const ConditionToken> cond,
                 DenoiserCache* cache = nullptr) const;

  // Same condition and timestep for every row.
  Matrix predict(const Matrix& z, int t, const ConditionToken& cond) const;

  // Accumulates gradients for network weights, low-rank deltas and the
  // embeddings that were used in the recorded forward pass.
  void backward(const DenoiserCache& cache, const Matrix& grad_out);

  // Adds the SUBJECT concept, initialised as an exact copy of CLASS(k).
  void register_subject(int base_class);
  bool has_subject() const { return has_subject_; }
  int subject_base_class() const { return subject_base_class_; }

  void enable_low_rank(int rank, double scale, std::uint64_t seed) { net_.enable_low_rank(rank, scale, seed); }
  void disable_low_rank() { net_.disable_low_rank(); }
  bool has_low_rank() const { return net_.has_low_rank(); }

  bool trained() const { return trained_; }
  void set_trained(bool v) { trained_ = v; }

  std::vector<ParamTensor*> base_parameters();     // network weights + all embeddings
  std::vector<ParamTensor*> low_rank_parameters();
  ParamTensor* subject_embedding();
  std::vector<const ParamTensor*> all_parameters() const;
  void zero_grad();
  bool all_finite() const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  std::vector<ParamTensor>& concept_embeddings() { return concept_emb_; }
  const std::vector<ParamTensor>& concept_embeddings() const { return concept_emb_; }
  std::vector<ParamTensor>& context_embeddings() { return context_emb_; }
  const std::vector<ParamTensor>& context_embeddings() const { return context_emb_; }

  // Versioned little-endian binary checkpoint; round trip is bit-exact.
  void save(const std::filesystem::path& path) const;
  static DenoiserModel load(const std::filesystem::path& path);

 private:
  std::size_t concept_row(const ConditionToken& c) const;
  std::size_t context_row(const ConditionToken& c) const;
  void build_time_table();

  DenoiserConfig config_;
  Mlp net_;
  std::vector<ParamTensor> concept_emb_;  // NULL, CLASS(0..K-1), [SUBJECT]
  std::vector<ParamTensor> context_emb_;  // PLAIN, CTX(0..J-1)
  std::vector<Vec> time_table_;
  bool has_subject_ = false;
  int subject_base_class_ = -1;
  bool trained_ = false;
};

}  // namespace anchorlab
