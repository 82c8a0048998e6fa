#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cir/data.hpp"
#include "cir/model.hpp"

namespace cir {

struct EvalProtocol {
  std::vector<int> recall_ks{1, 5, 10, 50};
  std::vector<int> subset_ks;
};

struct EvalReport {
  std::map<int, double> recall_at;
  std::map<int, double> recall_subset_at;
  std::map<std::string, double> averages;
  int num_queries = 0;

  nlohmann::json to_json() const;
  std::string to_text() const;
  bool operator==(const EvalReport& o) const = default;
};

/// Rank of `target` in a score row under the deterministic ordering
/// (score descending, index ascending). 0 means top-1.
int rank_of_target(const double* scores, int n, int target);

/// Recall metrics from a Q × G score matrix. Subsets, when present, restrict
/// the ranking to the listed candidates (which must include the target).
/// Requesting subset Ks without any subset annotations is a configuration
/// error. Averages: avg_recall over recall_ks, avg_subset_recall over
/// subset_ks, and cirr_avg = (R@5 + R_subset@1)/2 when both are available.
EvalReport compute_recalls(const Matrix& scores, const std::vector<int>& targets,
                           const std::vector<std::vector<int>>& subsets,
                           const EvalProtocol& protocol);

/// Full retrieval evaluation through the deployed student path: composes each
/// query, scores it against every gallery embedding by cosine, and ranks.
/// Teacher parameters are never touched.
EvalReport evaluate(const Model& model, const std::vector<Triplet>& queries,
                    const Matrix& gallery_payloads, const EvalProtocol& protocol);

/// Q × G score matrix of the student path (exposed for oracle tests).
Matrix student_score_matrix(const Model& model, const std::vector<Triplet>& queries,
                            const Matrix& gallery_payloads);

// --- teacher-mask diagnostics --------------------------------------------------

struct MaskAlignmentReport {
  double score = 0.0;               // mean AUC of the assigned slots, in [0,1]
  std::vector<int> slot_for_attribute;  // latent attribute -> assigned mask slot
  Matrix auc;                       // K × A per-(slot, attribute) AUC
};

/// AUC of `values` as a predictor of binary `labels`, with midrank tie
/// handling; 0.5 when either class is empty.
double binary_auc(const Vec& values, const std::vector<uint8_t>& labels);

/// Maximum-weight one-to-one assignment (rows >= cols); returns, per column,
/// the assigned row. O(n^3) Hungarian method.
std::vector<int> max_assignment(const Matrix& weight);

/// Alignment between replace-mask slots (N × K) and ground-truth changed
/// attributes (N × A) after the score-maximizing slot<->attribute assignment.
MaskAlignmentReport mask_alignment_score(const Matrix& replace_masks,
                                         const std::vector<std::vector<uint8_t>>& changed);

/// Runs the teacher branch over annotated queries and scores how well its
/// replace masks indicate the truly changed latent attributes.
MaskAlignmentReport mask_alignment_report(const Model& model,
                                          const std::vector<Triplet>& queries,
                                          const Matrix& gallery_payloads, int num_attributes);

/// Per-query student and teacher masks for inspection dumps.
struct MaskDump {
  std::vector<Vec> student_keep;
  std::vector<Vec> teacher_keep;
  std::vector<Vec> teacher_replace;
};
MaskDump dump_masks(const Model& model, const std::vector<Triplet>& queries,
                    const Matrix& gallery_payloads);

}  // namespace cir
