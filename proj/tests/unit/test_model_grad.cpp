#include <doctest.h>

#include <cmath>

#include "cir/model.hpp"
#include "test_util.hpp"

using namespace cir;
using namespace cir::testutil;

TEST_SUITE_BEGIN("model_grad");

namespace {

// Loss forward for finite differences. Guidance pieces under stop-gradient
// (the target similarity rows for kl, the teacher masks for ckd) are frozen
// at the base parameters so the analytic routing is what gets checked.
struct FrozenGuidance {
  Matrix p_target;
  std::vector<Vec> teacher_keep, teacher_replace;
};

FrozenGuidance capture_guidance(const Model& model, const TripletBatch& batch,
                                const LossConfig& loss_cfg) {
  BatchTrace trace;
  model_batch_forward(model, batch, loss_cfg, TermSwitches{}, trace);
  FrozenGuidance g;
  g.p_target = trace.p_target;
  for (const TripletTrace& t : trace.items) {
    g.teacher_keep.push_back(t.teacher.keep);
    g.teacher_replace.push_back(t.teacher.replace);
  }
  return g;
}

double frozen_term_value(const Model& model, const TripletBatch& batch,
                         const LossConfig& loss_cfg, const std::string& term,
                         const FrozenGuidance* frozen) {
  BatchTrace trace;
  const LossBreakdown l = model_batch_forward(model, batch, loss_cfg, TermSwitches{}, trace);
  const int b = batch.size();
  if (term == "rank_stu") return l.rank_stu;
  if (term == "rank_tea") return l.rank_tea;
  if (term == "mask_tea") return l.mask_tea;
  if (term == "ortho") return l.ortho;
  if (term == "ckd_full") return l.ckd;
  if (term == "kl") {
    // KL against the frozen target-similarity rows.
    double acc = 0.0;
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < b; ++j) {
        const double pt = frozen->p_target(i, j);
        if (pt > 0.0) acc += pt * (std::log(pt) - std::log(trace.p_student(i, j)));
      }
    }
    return acc / b;
  }
  if (term == "ckd") {
    // Distillation against frozen teacher masks.
    const int k = static_cast<int>(trace.items[0].student.keep.size());
    double acc = 0.0;
    for (int i = 0; i < b; ++i) {
      double keep_mse = 0.0, rep_mse = 0.0;
      for (int x = 0; x < k; ++x) {
        const double dk = frozen->teacher_keep[i][x] - trace.items[i].student.keep[x];
        const double dr =
            frozen->teacher_replace[i][x] - (1.0 - trace.items[i].student.keep[x]);
        keep_mse += dk * dk;
        rep_mse += dr * dr;
      }
      acc += (keep_mse + rep_mse) / k;
    }
    return acc / b;
  }
  throw Error("unknown term " + term);
}

void check_term_gradient(const std::string& term, bool distill_stop_gradient = true) {
  ExperimentConfig cfg = tiny_config();
  Model model(cfg);
  // Break the symmetric zero-logit initialization so sigmoid derivatives vary.
  Rng rng(31);
  for (const char* name : {"student_head.l2.weight", "teacher_keep_head.l2.weight",
                           "teacher_replace_head.l2.weight"}) {
    const ParamInfo* info = model.find_param(name);
    for (size_t i = 0; i < info->count; ++i) model.params()[info->offset + i] = rng.normal(0, 0.4);
  }
  const TripletBatch batch = random_batch(rng, cfg, 3);

  TermWeights weights;
  weights.rank_stu = term == "rank_stu" ? 1.0 : 0.0;
  weights.rank_tea = term == "rank_tea" ? 1.0 : 0.0;
  weights.mask_tea = term == "mask_tea" ? 1.0 : 0.0;
  weights.ortho = term == "ortho" ? 1.0 : 0.0;
  weights.ckd = (term == "ckd" || term == "ckd_full") ? 1.0 : 0.0;
  weights.kl = term == "kl" ? 1.0 : 0.0;

  BatchTrace trace;
  model_batch_forward(model, batch, cfg.loss, TermSwitches{}, trace);
  Vec analytic(model.param_count(), 0.0);
  model_batch_backward(model, batch, trace, cfg.loss, weights, distill_stop_gradient, analytic);

  const FrozenGuidance frozen = capture_guidance(model, batch, cfg.loss);
  const Vec fd = finite_difference(
      model.params(),
      [&]() { return frozen_term_value(model, batch, cfg.loss, term, &frozen); }, 1e-5);

  CHECK_MESSAGE(rel_error_norm(analytic, fd) < 1e-4, "term = ", term);
}

}  // namespace

TEST_CASE("student rank loss gradient") { check_term_gradient("rank_stu"); }
TEST_CASE("teacher rank loss gradient") { check_term_gradient("rank_tea"); }
TEST_CASE("teacher mask regularization gradient") { check_term_gradient("mask_tea"); }
TEST_CASE("orthogonal regularization gradient") { check_term_gradient("ortho"); }
TEST_CASE("distillation gradient with stop-gradient teacher") { check_term_gradient("ckd"); }
TEST_CASE("distillation gradient with trainable teacher") {
  check_term_gradient("ckd_full", /*distill_stop_gradient=*/false);
}
TEST_CASE("matching-degree KL gradient") { check_term_gradient("kl"); }

TEST_CASE("full weighted objective gradient") {
  ExperimentConfig cfg = tiny_config();
  Model model(cfg);
  Rng rng(32);
  for (const char* name : {"student_head.l2.weight", "teacher_keep_head.l2.weight",
                           "teacher_replace_head.l2.weight"}) {
    const ParamInfo* info = model.find_param(name);
    for (size_t i = 0; i < info->count; ++i) model.params()[info->offset + i] = rng.normal(0, 0.4);
  }
  const TripletBatch batch = random_batch(rng, cfg, 4);

  TermWeights weights{1.0, cfg.loss.lambda, cfg.loss.eta, cfg.loss.mu, cfg.loss.nu,
                      cfg.loss.kappa};
  BatchTrace trace;
  model_batch_forward(model, batch, cfg.loss, TermSwitches{}, trace);
  Vec analytic(model.param_count(), 0.0);
  model_batch_backward(model, batch, trace, cfg.loss, weights, true, analytic);

  const FrozenGuidance frozen = capture_guidance(model, batch, cfg.loss);
  auto value = [&]() {
    double acc = frozen_term_value(model, batch, cfg.loss, "rank_stu", nullptr);
    acc += cfg.loss.lambda * frozen_term_value(model, batch, cfg.loss, "rank_tea", nullptr);
    acc += cfg.loss.eta * frozen_term_value(model, batch, cfg.loss, "mask_tea", nullptr);
    acc += cfg.loss.mu * frozen_term_value(model, batch, cfg.loss, "ortho", nullptr);
    acc += cfg.loss.nu * frozen_term_value(model, batch, cfg.loss, "ckd", &frozen);
    acc += cfg.loss.kappa * frozen_term_value(model, batch, cfg.loss, "kl", &frozen);
    return acc;
  };
  const Vec fd = finite_difference(model.params(), value, 1e-5);
  CHECK(rel_error_norm(analytic, fd) < 1e-4);
}

TEST_SUITE_END();
