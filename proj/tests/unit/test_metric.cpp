#include <doctest.h>

#include <cmath>

#include "cir/metric.hpp"
#include "cir/rng.hpp"
#include "reference.hpp"
#include "test_util.hpp"

using namespace cir;
using namespace cir::testutil;

TEST_SUITE_BEGIN("metric");

namespace {

std::vector<Matrix> random_matrices(Rng& rng, int b, int k, int d) {
  std::vector<Matrix> out;
  for (int i = 0; i < b; ++i) out.push_back(random_matrix(rng, k, d));
  return out;
}

std::vector<Vec> random_vecs(Rng& rng, int b, int d) {
  std::vector<Vec> out;
  for (int i = 0; i < b; ++i) out.push_back(random_vec(rng, d));
  return out;
}

}  // namespace

TEST_CASE("attribute similarity of a matrix with itself is K") {
  Rng rng(1);
  const Matrix a = random_matrix(rng, 4, 6);
  CHECK(attribute_similarity(a, a) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("attribute similarity of row-orthogonal matrices is zero") {
  Matrix a(2, 4), b(2, 4);
  a(0, 0) = 2.0;
  a(1, 1) = 3.0;
  b(0, 2) = 1.0;
  b(1, 3) = 5.0;
  CHECK(attribute_similarity(a, b) == doctest::Approx(0.0));
}

TEST_CASE("attribute similarity matches the per-row scalar loop") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + static_cast<int>(rng.uniform_int(0, 3));
    const int d = 2 + static_cast<int>(rng.uniform_int(0, 6));
    const Matrix a = random_matrix(rng, k, d);
    const Matrix b = random_matrix(rng, k, d);
    CHECK(attribute_similarity(a, b) ==
          doctest::Approx(ref::attribute_similarity(a, b)).epsilon(1e-10));
  }
}

TEST_CASE("zero-norm rows are a degenerate input in strict mode only") {
  Matrix a(1, 3), b(1, 3);
  b(0, 0) = 1.0;
  CHECK_THROWS_AS(attribute_similarity(a, b), DegenerateInputError);
  CHECK(attribute_similarity(a, b, 1e-8) == doctest::Approx(0.0));
}

TEST_CASE("rank losses are zero for a single-element batch") {
  Rng rng(3);
  const std::vector<Matrix> c = random_matrices(rng, 1, 3, 5);
  const std::vector<Matrix> t = random_matrices(rng, 1, 3, 5);
  CHECK(late_fusion_rank_loss(c, t, 0.1) == doctest::Approx(0.0));
  const std::vector<Vec> cp = random_vecs(rng, 1, 5);
  const std::vector<Vec> tp = random_vecs(rng, 1, 5);
  CHECK(early_fusion_rank_loss(cp, tp, 0.1) == doctest::Approx(0.0));
}

TEST_CASE("uniform logits give log B") {
  Rng rng(4);
  const int b = 5;
  const Matrix one = random_matrix(rng, 2, 4);
  const std::vector<Matrix> c(b, one), t(b, one);
  CHECK(late_fusion_rank_loss(c, t, 0.07) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  const Vec v = random_vec(rng, 4);
  const std::vector<Vec> cp(b, v), tp(b, v);
  CHECK(early_fusion_rank_loss(cp, tp, 0.07) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("rank losses match the brute-force oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int b = 1 + static_cast<int>(rng.uniform_int(0, 5));
    const int k = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const int d = 2 + static_cast<int>(rng.uniform_int(0, 6));
    const double tau = 0.05 + rng.uniform();
    const std::vector<Matrix> c = random_matrices(rng, b, k, d);
    const std::vector<Matrix> t = random_matrices(rng, b, k, d);
    Matrix sims(b, b);
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < b; ++j) sims(i, j) = ref::attribute_similarity(c[i], t[j]);
    }
    const double got = late_fusion_rank_loss(c, t, tau);
    const double want = ref::rank_loss(sims, tau);
    CHECK(std::abs(got - want) <= 1e-10 * std::max(1.0, std::abs(want)));

    const std::vector<Vec> cp = random_vecs(rng, b, d);
    const std::vector<Vec> tp = random_vecs(rng, b, d);
    Matrix cos_sims(b, b);
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < b; ++j) cos_sims(i, j) = ref::cosine(cp[i], tp[j]);
    }
    const double got_e = early_fusion_rank_loss(cp, tp, tau);
    const double want_e = ref::rank_loss(cos_sims, tau);
    CHECK(std::abs(got_e - want_e) <= 1e-10 * std::max(1.0, std::abs(want_e)));
  }
}

TEST_CASE("temperature must be positive") {
  Rng rng(6);
  const std::vector<Matrix> c = random_matrices(rng, 2, 2, 3);
  CHECK_THROWS_AS(late_fusion_rank_loss(c, c, 0.0), ConfigError);
  CHECK_THROWS_AS(late_fusion_rank_loss(c, c, -1.0), ConfigError);
}

TEST_CASE("target similarity distribution: identical targets are uniform") {
  Rng rng(7);
  const Matrix one = random_matrix(rng, 2, 5);
  const std::vector<Matrix> targets(4, one);
  const SimilarityDistribution dist = target_similarity_distribution(targets, 1, 0.1);
  dist.validate();
  for (double p : dist.probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(dist.owner_index == 1);
  CHECK(dist.kind == DistributionKind::kTargetVisual);
}

TEST_CASE("target similarity distribution at K=3, tau=0.1 separates sharply") {
  // Self-similarity 3, cross-similarity 0: softmax([30, 0]).
  Matrix t0(3, 6), t1(3, 6);
  t0(0, 0) = 1.0;
  t0(1, 1) = 1.0;
  t0(2, 2) = 1.0;
  t1(0, 3) = 1.0;
  t1(1, 4) = 1.0;
  t1(2, 5) = 1.0;
  const std::vector<Matrix> targets{t0, t1};
  const SimilarityDistribution dist = target_similarity_distribution(targets, 0, 0.1);
  CHECK(dist.probs[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(dist.probs[1] == doctest::Approx(9.357623e-14).epsilon(1e-5));
}

TEST_CASE("matching degree distribution: known cosines") {
  Vec q{1.0, 0.0};
  std::vector<Vec> targets{{2.0, 0.0}, {0.0, 3.0}};  // cosines 1 and 0
  const SimilarityDistribution dist = matching_degree_distribution(q, targets, 0, 0.1);
  dist.validate();
  CHECK(dist.probs[0] == doctest::Approx(0.9999546021312976).epsilon(1e-10));
  CHECK(dist.probs[1] == doctest::Approx(4.5397868702434395e-05).epsilon(1e-8));
  CHECK(dist.kind == DistributionKind::kMatchingDegree);
}

TEST_CASE("matching degree distribution: identical targets are uniform") {
  Rng rng(8);
  const Vec q = random_vec(rng, 4);
  const Vec t = random_vec(rng, 4);
  const std::vector<Vec> targets(5, t);
  const SimilarityDistribution dist = matching_degree_distribution(q, targets, 2, 0.05);
  for (double p : dist.probs) CHECK(p == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("distributions match the brute-force softmax oracle") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const int b = 1 + static_cast<int>(rng.uniform_int(0, 5));
    const int k = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const int d = 2 + static_cast<int>(rng.uniform_int(0, 5));
    const double tau = 0.05 + rng.uniform();
    const int owner = static_cast<int>(rng.uniform_int(0, b - 1));

    const std::vector<Matrix> targets = random_matrices(rng, b, k, d);
    const SimilarityDistribution got = target_similarity_distribution(targets, owner, tau);
    Vec logits(b);
    for (int j = 0; j < b; ++j) {
      logits[j] = ref::attribute_similarity(targets[owner], targets[j]) / tau;
    }
    const Vec want = ref::softmax(logits);
    for (int j = 0; j < b; ++j) {
      CHECK(std::abs(got.probs[j] - want[j]) <= 1e-10 * std::max(1.0, std::abs(want[j])));
    }

    const Vec q = random_vec(rng, d);
    const std::vector<Vec> pooled = random_vecs(rng, b, d);
    const SimilarityDistribution got_m = matching_degree_distribution(q, pooled, owner, tau);
    Vec logits_m(b);
    for (int j = 0; j < b; ++j) logits_m[j] = ref::cosine(q, pooled[j]) / tau;
    const Vec want_m = ref::softmax(logits_m);
    for (int j = 0; j < b; ++j) {
      CHECK(std::abs(got_m.probs[j] - want_m[j]) <= 1e-10 * std::max(1.0, std::abs(want_m[j])));
    }
  }
}

TEST_CASE("KL regularization on constructed distributions") {
  SimilarityDistribution p{{0.5, 0.5}, 0, DistributionKind::kTargetVisual};
  SimilarityDistribution q{{0.9, 0.1}, 0, DistributionKind::kMatchingDegree};
  CHECK(kl_matching_regularization(p, p) == doctest::Approx(0.0));
  CHECK(kl_matching_regularization(p, q) ==
        doctest::Approx(0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1)).epsilon(1e-12));
  CHECK(kl_matching_regularization(p, q) == doctest::Approx(0.5108256237).epsilon(1e-9));
}

TEST_CASE("KL is nonnegative and zero only at equality") {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const int b = 2 + static_cast<int>(rng.uniform_int(0, 5));
    Vec la = random_vec(rng, b), lb = random_vec(rng, b);
    SimilarityDistribution p, q;
    p.probs = ref::softmax(la);
    q.probs = ref::softmax(lb);
    const double kl = kl_matching_regularization(p, q);
    CHECK(kl >= -1e-15);
    CHECK(kl == doctest::Approx(ref::kl_divergence(p.probs, q.probs)).epsilon(1e-10));
    // Perturbed copy must strictly increase the divergence away from zero.
    CHECK(kl_matching_regularization(p, p) == doctest::Approx(0.0));
  }
  SimilarityDistribution p{{0.7, 0.3}, 0, DistributionKind::kTargetVisual};
  SimilarityDistribution q{{0.3, 0.7}, 0, DistributionKind::kMatchingDegree};
  CHECK(kl_matching_regularization(p, q) > 0.0);
}

TEST_CASE("total objective composes the weighted sum") {
  const LossBreakdown zero_w = total_objective(3.5, 7, 9, 11, 13, 15, {0, 0, 0, 0, 0});
  CHECK(zero_w.total == doctest::Approx(3.5));
  const LossBreakdown unit = total_objective(1, 2, 3, 4, 5, 6, {1, 1, 1, 1, 1});
  CHECK(unit.total == doctest::Approx(21.0));
  // Fashion-domain regime over all-ones parts.
  const LossBreakdown fashion = total_objective(1, 1, 1, 1, 1, 1, {1.0, 1.0, 0.1, 10.0, 0.5});
  CHECK(fashion.total == doctest::Approx(13.6).epsilon(1e-12));
}

TEST_CASE("rank losses are invariant to row rescaling") {
  Rng rng(11);
  const int b = 4, k = 3, d = 5;
  std::vector<Matrix> c = random_matrices(rng, b, k, d);
  const std::vector<Matrix> t = random_matrices(rng, b, k, d);
  const double before = late_fusion_rank_loss(c, t, 0.1);
  for (Matrix& m : c) {
    for (size_t i = 0; i < m.size(); ++i) m.data()[i] *= 2.0;
  }
  const double after = late_fusion_rank_loss(c, t, 0.1);
  CHECK(std::abs(before - after) < 1e-9);

  std::vector<Vec> cp = random_vecs(rng, b, d);
  const std::vector<Vec> tp = random_vecs(rng, b, d);
  const double before_e = early_fusion_rank_loss(cp, tp, 0.1);
  for (Vec& v : cp) {
    for (double& x : v) x *= 2.0;
  }
  CHECK(std::abs(before_e - early_fusion_rank_loss(cp, tp, 0.1)) < 1e-9);
}

TEST_CASE("K=1 late fusion equals early fusion on row means") {
  Rng rng(12);
  const int b = 4, d = 6;
  const std::vector<Matrix> c = random_matrices(rng, b, 1, d);
  const std::vector<Matrix> t = random_matrices(rng, b, 1, d);
  std::vector<Vec> cp, tp;
  for (int i = 0; i < b; ++i) {
    cp.push_back(mean_pool(c[i]));
    tp.push_back(mean_pool(t[i]));
  }
  CHECK(late_fusion_rank_loss(c, t, 0.1) ==
        doctest::Approx(early_fusion_rank_loss(cp, tp, 0.1)).epsilon(1e-12));
}

TEST_CASE("softmax distributions are normalized and positive") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const int b = 1 + static_cast<int>(rng.uniform_int(0, 7));
    const std::vector<Matrix> targets = random_matrices(rng, b, 2, 4);
    const SimilarityDistribution dist =
        target_similarity_distribution(targets, 0, 0.05 + rng.uniform());
    dist.validate();
    double sum = 0.0;
    for (double p : dist.probs) sum += p;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_SUITE_END();
