#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cir/common.hpp"

namespace cir {

struct WorldConfig {
  int num_attributes = 6;       // A
  int values_per_attribute = 4; // V
  int gallery_size = 256;       // G
  double noise_std = 0.02;
  uint64_t render_seed = 7;
  int image_payload_dim = 32;
  int text_payload_dim = 8;  // >= num_attributes; one slot per attribute, zero-padded
};

struct DataConfig {
  std::string dir;  // where generate-data wrote (or ingestion reads) the files
  int train_triplets = 5000;
  int eval_queries = 1000;
  int max_changes = 2;
  uint64_t train_seed = 11;
  uint64_t eval_seed = 12;
};

struct EncoderConfig {
  int hidden = 64;
  int tokens = 8;      // L
  int token_dim = 32;  // D'
  int global_dim = 64; // D_raw; equal to attributes.dim means identity pre-projection
};

struct BackboneConfig {
  EncoderConfig image{64, 8, 32, 64};
  EncoderConfig text{64, 4, 32, 64};
  std::string activation = "tanh";  // tanh | relu
  uint64_t init_seed = 1234;
  bool freeze = false;
};

struct AttributeConfig {
  int global_count = 4;  // P
  int local_count = 8;   // Q
  int dim = 64;          // D
};

struct CompositionConfig {
  int hidden = 0;  // per-row MLP hidden width; 0 means "use attributes.dim"
  bool distill_stop_gradient = true;
};

struct LossConfig {
  double temperature = 0.1;
  double lambda = 1.0;  // teacher rank weight
  double eta = 1.0;     // teacher mask regularization weight
  double mu = 0.1;      // orthogonality weight
  double nu = 10.0;     // composition distillation weight
  double kappa = 0.5;   // matching-degree KL weight
  double cosine_eps = 1e-8;
};

struct TrainConfig {
  int batch_size = 64;
  int epochs = 15;
  double base_lr = 1e-3;
  double backbone_lr = 1e-4;
  double lr_decay_factor = 0.1;
  std::vector<int> decay_epochs{5, 10};  // 1-based epochs at which lr multiplies by the factor
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // 0 disables
  uint64_t seed = 0;
  std::string ablation = "full";  // full | wo_ortho | wo_target_guide | wo_target_guide_c | wo_target_guide_m
  std::vector<std::string> disabled_terms;  // structurally removed loss terms (testing hook)
};

struct EvalConfig {
  std::vector<int> recall_ks{1, 5, 10, 50};
  std::vector<int> subset_ks;
};

struct ExperimentConfig {
  WorldConfig world;
  DataConfig data;
  BackboneConfig backbone;
  AttributeConfig attributes;
  CompositionConfig composition;
  LossConfig loss;
  TrainConfig train;
  EvalConfig eval;
  int threads = 0;  // 0 = leave OpenMP defaults

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);

  static ExperimentConfig load_file(const std::string& path);
  void save_file(const std::string& path) const;

  /// Applies one `key=value` override with a dotted path, e.g. "loss.mu=0.05".
  void apply_override(const std::string& assignment);

  /// Maps the named ablation switch onto loss-weight zeroing.
  void apply_ablation();

  /// Throws ConfigError on inconsistent settings.
  void validate() const;

  /// FNV-1a over the canonical JSON dump; identifies a resolved config.
  uint64_t fingerprint() const;
};

uint64_t fnv1a64(const std::string& bytes);

}  // namespace cir
