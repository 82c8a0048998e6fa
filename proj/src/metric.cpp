#include "cir/metric.hpp"

#include <cmath>

namespace cir {

double cosine_similarity(const double* a, const double* b, int n, double eps) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (eps == 0.0 && (na == 0.0 || nb == 0.0)) {
    throw DegenerateInputError("cosine similarity of a zero-norm vector is undefined");
  }
  return dot / ((na + eps) * (nb + eps));
}

void cosine_similarity_backward(const double* a, const double* b, int n, double eps,
                                double upstream, double* da, double* db) {
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (int i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na2 += a[i] * a[i];
    nb2 += b[i] * b[i];
  }
  const double na = std::sqrt(na2);
  const double nb = std::sqrt(nb2);
  if (eps == 0.0 && (na == 0.0 || nb == 0.0)) {
    throw DegenerateInputError("cosine similarity of a zero-norm vector is undefined");
  }
  const double denom = (na + eps) * (nb + eps);
  const double cos = dot / denom;
  // d cos / da = b / denom - cos * (a / ||a||) / (||a|| + eps); the unit-vector
  // term vanishes at ||a|| = 0 because dot is 0 there.
  if (da) {
    const double sa = na > 0.0 ? cos / (na * (na + eps)) : 0.0;
    for (int i = 0; i < n; ++i) da[i] += upstream * (b[i] / denom - sa * a[i]);
  }
  if (db) {
    const double sb = nb > 0.0 ? cos / (nb * (nb + eps)) : 0.0;
    for (int i = 0; i < n; ++i) db[i] += upstream * (a[i] / denom - sb * b[i]);
  }
}

double attribute_similarity(const Matrix& a, const Matrix& b, double eps) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidInputError("attribute_similarity: matrices must share K and D");
  }
  double acc = 0.0;
  for (int k = 0; k < a.rows(); ++k) {
    acc += cosine_similarity(a.row(k), b.row(k), a.cols(), eps);
  }
  return acc;
}

Matrix attribute_similarity_matrix(std::span<const Matrix> a, std::span<const Matrix> b,
                                   double eps) {
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  Matrix s(n, m);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) s(i, j) = attribute_similarity(a[i], b[j], eps);
  }
  return s;
}

Matrix cosine_similarity_matrix(std::span<const Vec> a, std::span<const Vec> b, double eps) {
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  Matrix s(n, m);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const int dim = static_cast<int>(a[i].size());
    for (int j = 0; j < m; ++j) s(i, j) = cosine_similarity(a[i].data(), b[j].data(), dim, eps);
  }
  return s;
}

Vec mean_pool(const Matrix& m) {
  if (m.rows() < 1) throw InvalidInputError("mean_pool: empty matrix");
  Vec out(m.cols(), 0.0);
  for (int k = 0; k < m.rows(); ++k) {
    const double* row = m.row(k);
    for (int d = 0; d < m.cols(); ++d) out[d] += row[d];
  }
  for (double& v : out) v /= m.rows();
  return out;
}

double log_sum_exp(const double* x, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += std::exp(x[i] - mx);
  return mx + std::log(acc);
}

void softmax(const double* logits, int n, double* probs) {
  double mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    z += probs[i];
  }
  for (int i = 0; i < n; ++i) probs[i] /= z;
}

double softmax_cross_entropy_diagonal(const Matrix& logits) {
  const int b = logits.rows();
  double acc = 0.0;
  for (int i = 0; i < b; ++i) {
    acc += log_sum_exp(logits.row(i), b) - logits(i, i);
  }
  return acc / b;
}

void SimilarityDistribution::validate() const {
  double sum = 0.0;
  for (double p : probs) {
    if (!(p > 0.0)) throw InvalidInputError("similarity distribution entries must be positive");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw InvalidInputError("similarity distribution must sum to 1 within 1e-9");
  }
}

namespace {

void check_rank_inputs(size_t composed, size_t targets, double tau) {
  if (composed == 0 || composed != targets) {
    throw InvalidInputError("rank loss requires B >= 1 aligned composed/target entries");
  }
  if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
}

}  // namespace

double late_fusion_rank_loss(std::span<const Matrix> composed, std::span<const Matrix> targets,
                             double tau, double eps) {
  check_rank_inputs(composed.size(), targets.size(), tau);
  Matrix logits = attribute_similarity_matrix(composed, targets, eps);
  for (int i = 0; i < logits.rows(); ++i) {
    for (int j = 0; j < logits.cols(); ++j) logits(i, j) /= tau;
  }
  return softmax_cross_entropy_diagonal(logits);
}

double early_fusion_rank_loss(std::span<const Vec> composed, std::span<const Vec> targets,
                              double tau, double eps) {
  check_rank_inputs(composed.size(), targets.size(), tau);
  Matrix logits = cosine_similarity_matrix(composed, targets, eps);
  for (int i = 0; i < logits.rows(); ++i) {
    for (int j = 0; j < logits.cols(); ++j) logits(i, j) /= tau;
  }
  return softmax_cross_entropy_diagonal(logits);
}

SimilarityDistribution target_similarity_distribution(std::span<const Matrix> targets, int i,
                                                      double tau, double eps) {
  const int b = static_cast<int>(targets.size());
  if (b < 1) throw InvalidInputError("target_similarity_distribution requires B >= 1");
  if (i < 0 || i >= b) throw InvalidInputError("owner index out of range");
  if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
  Vec logits(b);
  for (int j = 0; j < b; ++j) {
    logits[j] = attribute_similarity(targets[i], targets[j], eps) / tau;
  }
  SimilarityDistribution dist;
  dist.probs.resize(b);
  softmax(logits.data(), b, dist.probs.data());
  dist.owner_index = i;
  dist.kind = DistributionKind::kTargetVisual;
  return dist;
}

SimilarityDistribution matching_degree_distribution(const Vec& query_pooled,
                                                    std::span<const Vec> target_pooled,
                                                    int owner_index, double tau, double eps) {
  const int b = static_cast<int>(target_pooled.size());
  if (b < 1) throw InvalidInputError("matching_degree_distribution requires B >= 1");
  if (owner_index < 0 || owner_index >= b) throw InvalidInputError("owner index out of range");
  if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
  Vec logits(b);
  for (int j = 0; j < b; ++j) {
    logits[j] = cosine_similarity(query_pooled.data(), target_pooled[j].data(),
                                  static_cast<int>(query_pooled.size()), eps) /
                tau;
  }
  SimilarityDistribution dist;
  dist.probs.resize(b);
  softmax(logits.data(), b, dist.probs.data());
  dist.owner_index = owner_index;
  dist.kind = DistributionKind::kMatchingDegree;
  return dist;
}

double kl_matching_regularization(const SimilarityDistribution& p_t,
                                  const SimilarityDistribution& p_c) {
  if (p_t.probs.size() != p_c.probs.size()) {
    throw InvalidInputError("KL regularization requires equal-length distributions");
  }
  double acc = 0.0;
  for (size_t j = 0; j < p_t.probs.size(); ++j) {
    const double pt = p_t.probs[j];
    if (pt <= 0.0) continue;
    acc += pt * (std::log(pt) - std::log(p_c.probs[j]));
  }
  return acc;
}

LossBreakdown total_objective(double rank_stu, double rank_tea, double mask_tea, double ortho,
                              double ckd, double kl, const LossWeights& w) {
  if (w.lambda < 0 || w.eta < 0 || w.mu < 0 || w.nu < 0 || w.kappa < 0) {
    throw ConfigError("loss weights must be nonnegative");
  }
  LossBreakdown out;
  out.rank_stu = rank_stu;
  out.rank_tea = rank_tea;
  out.mask_tea = mask_tea;
  out.ortho = ortho;
  out.ckd = ckd;
  out.kl = kl;
  out.total = rank_stu + w.lambda * rank_tea + w.eta * mask_tea + w.mu * ortho + w.nu * ckd +
              w.kappa * kl;
  return out;
}

}  // namespace cir
