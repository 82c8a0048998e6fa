#pragma once

#include <span>
#include <vector>

#include "cir/common.hpp"

namespace cir {

/// Cosine similarity. eps = 0 is strict: a zero-norm vector raises
/// DegenerateInputError. Training paths pass eps > 0, which adds eps to each
/// norm before dividing.
double cosine_similarity(const double* a, const double* b, int n, double eps = 0.0);

/// Accumulates upstream * d cos(a,b) / d{a,b} into da / db (either nullable).
void cosine_similarity_backward(const double* a, const double* b, int n, double eps,
                                double upstream, double* da, double* db);

/// Sum over rows of per-row cosine similarity; range [-K, K].
double attribute_similarity(const Matrix& a, const Matrix& b, double eps = 0.0);

/// S[i][j] = attribute_similarity(a[i], b[j]). Parallel over rows.
Matrix attribute_similarity_matrix(std::span<const Matrix> a, std::span<const Matrix> b,
                                   double eps);

/// S[i][j] = cosine(a[i], b[j]). Parallel over rows.
Matrix cosine_similarity_matrix(std::span<const Vec> a, std::span<const Vec> b, double eps);

/// Row-mean pooling of a K × D attribute matrix.
Vec mean_pool(const Matrix& m);

/// Numerically stable row softmax.
void softmax(const double* logits, int n, double* probs);

/// log(sum_j exp(x[j])) via the max-shift trick.
double log_sum_exp(const double* x, int n);

/// Mean over rows of -log softmax(row)[row index]: the batch-based
/// classification loss with the diagonal as the positive class.
double softmax_cross_entropy_diagonal(const Matrix& logits);

enum class DistributionKind { kTargetVisual, kMatchingDegree };

/// A length-B probability vector owned by batch element `owner_index`.
struct SimilarityDistribution {
  Vec probs;
  int owner_index = 0;
  DistributionKind kind = DistributionKind::kTargetVisual;

  /// Enforces positivity and sum-to-one (1e-9).
  void validate() const;
};

// --- spec-level operations ---------------------------------------------------

/// Late-fusion batch classification loss for the teacher branch:
/// logits[i][j] = attribute_similarity(composed[i], targets[j]) / tau.
double late_fusion_rank_loss(std::span<const Matrix> composed, std::span<const Matrix> targets,
                             double tau, double eps = 0.0);

/// Early-fusion loss for the student branch on pooled vectors:
/// logits[i][j] = cosine(composed[i], targets[j]) / tau.
double early_fusion_rank_loss(std::span<const Vec> composed, std::span<const Vec> targets,
                              double tau, double eps = 0.0);

/// Normalized visual similarity of target i against every batch target.
SimilarityDistribution target_similarity_distribution(std::span<const Matrix> targets, int i,
                                                      double tau, double eps = 0.0);

/// Normalized matching degree of one composed query against batch targets.
SimilarityDistribution matching_degree_distribution(const Vec& query_pooled,
                                                    std::span<const Vec> target_pooled,
                                                    int owner_index, double tau, double eps = 0.0);

/// KL(p_t || p_c) in nats. Callers treat p_t as a constant when
/// differentiating. Returns +inf if p_c has a zero where p_t is positive.
double kl_matching_regularization(const SimilarityDistribution& p_t,
                                  const SimilarityDistribution& p_c);

struct LossWeights {
  double lambda = 1.0;  // teacher rank
  double eta = 1.0;     // teacher mask regularization
  double mu = 0.1;      // orthogonality
  double nu = 10.0;     // composition distillation
  double kappa = 0.5;   // matching-degree KL
};

struct LossBreakdown {
  double rank_stu = 0.0;
  double rank_tea = 0.0;
  double mask_tea = 0.0;
  double ortho = 0.0;
  double ckd = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

/// total = rank_stu + λ·rank_tea + η·mask_tea + μ·ortho + ν·ckd + κ·kl
LossBreakdown total_objective(double rank_stu, double rank_tea, double mask_tea, double ortho,
                              double ckd, double kl, const LossWeights& w);

}  // namespace cir
