#pragma once

#include <string>
#include <vector>

#include "cir/attributes.hpp"
#include "cir/backbone.hpp"
#include "cir/composition.hpp"
#include "cir/config.hpp"
#include "cir/metric.hpp"

namespace cir {

enum class ParamGroup { kBackbone, kHead };

struct ParamInfo {
  std::string name;
  size_t offset = 0;
  size_t count = 0;
  std::vector<int> shape;
  ParamGroup group = ParamGroup::kHead;
};

/// All trainable state: the two encoder towers, the shared attribute banks,
/// and the three composition heads, stored as one flat vector so the
/// optimizer and the checkpoint format can treat parameters uniformly.
class Model {
 public:
  explicit Model(const ExperimentConfig& cfg);

  const ExperimentConfig& config() const { return cfg_; }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }
  size_t param_count() const { return params_.size(); }
  const std::vector<ParamInfo>& param_infos() const { return infos_; }
  const ParamInfo* find_param(const std::string& name) const;

  const EncoderLayout& image_encoder() const { return image_enc_; }
  const EncoderLayout& text_encoder() const { return text_enc_; }
  const AttributeBankLayout& bank() const { return bank_; }
  const HeadLayout& student_head() const { return student_head_; }
  const HeadLayout& teacher_keep_head() const { return teacher_keep_head_; }
  const HeadLayout& teacher_replace_head() const { return teacher_replace_head_; }

  int attribute_count() const { return bank_.K(); }
  int attribute_dim() const { return bank_.D; }

  /// Seeded initialization; draw order follows the parameter registry.
  void initialize(uint64_t seed);

  /// Backbone pass for one input; validates payload length per kind.
  EncodedFeatures encode(const RawInput& input) const;

  /// Full K × D attribute matrix for one input (global rows then local rows).
  Matrix attribute_matrix(const RawInput& input) const;

 private:
  ExperimentConfig cfg_;
  Vec params_;
  std::vector<ParamInfo> infos_;
  EncoderLayout image_enc_, text_enc_;
  AttributeBankLayout bank_;
  HeadLayout student_head_, teacher_keep_head_, teacher_replace_head_;

  size_t add_param(const std::string& name, std::vector<int> shape, ParamGroup group);
  LinearLayer add_linear(const std::string& name, int in, int out, ParamGroup group);
};

// --- batch forward / backward -------------------------------------------------

/// One aligned training batch; payloads only, gallery ids kept for logging.
struct TripletBatch {
  std::vector<Vec> reference;  // image payloads
  std::vector<Vec> text;       // modification payloads
  std::vector<Vec> target;     // image payloads
  std::vector<int> target_ids;
  int size() const { return static_cast<int>(reference.size()); }
};

struct ElementTrace {
  EncoderTrace enc;
  AttributeTrace attr;
};

struct TripletTrace {
  ElementTrace ref, mod, tgt;
  StudentCompositionTrace student;
  TeacherCompositionTrace teacher;
  Vec pooled_query;   // mean rows of student composed
  Vec pooled_target;  // mean rows of E_t
};

/// Which loss terms exist at all in this run (structural removal; a zero
/// weight keeps the term's forward value for logging but drops its gradient).
struct TermSwitches {
  bool rank_stu = true;
  bool rank_tea = true;
  bool mask_tea = true;
  bool ortho = true;
  bool ckd = true;
  bool kl = true;

  static TermSwitches from_disabled(const std::vector<std::string>& disabled);
  bool teacher_needed() const { return rank_tea || mask_tea || ckd; }
};

/// Effective multipliers applied to each term's gradient. Training uses
/// {1, λ, η, μ, ν, κ}; gradient checks isolate single terms.
struct TermWeights {
  double rank_stu = 1.0;
  double rank_tea = 0.0;
  double mask_tea = 0.0;
  double ortho = 0.0;
  double ckd = 0.0;
  double kl = 0.0;
};

struct BatchTrace {
  std::vector<TripletTrace> items;
  Matrix student_logits;  // B × B, cosine / tau
  Matrix teacher_logits;  // B × B, attribute similarity / tau
  Matrix p_student;       // row softmax of student_logits (matching degrees p^c)
  Matrix p_teacher;
  Matrix p_target;        // target visual similarity rows p^t
  LossBreakdown losses;
};

/// Forward for a full batch: encodes all elements, runs both composition
/// branches, and assembles the loss breakdown. Parallel over batch items.
LossBreakdown model_batch_forward(const Model& model, const TripletBatch& batch,
                                  const LossConfig& loss_cfg, const TermSwitches& switches,
                                  BatchTrace& trace);

/// Accumulates d(weighted objective)/d(params) into `grads` (must be zeroed
/// by the caller, sized like model.params()). Deterministic for any thread
/// count: per-item contributions are reduced in item order.
void model_batch_backward(const Model& model, const TripletBatch& batch, const BatchTrace& trace,
                          const LossConfig& loss_cfg, const TermWeights& weights,
                          bool distill_stop_gradient, Vec& grads);

/// Student-branch scoring path used at test time: pooled composed query
/// feature for one (reference, text) pair.
Vec student_query_embedding(const Model& model, const Vec& reference_payload,
                            const Vec& text_payload);

/// Pooled target embedding for one gallery image.
Vec target_embedding(const Model& model, const Vec& image_payload);

}  // namespace cir
