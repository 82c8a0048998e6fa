#pragma once

#include <cstdint>
#include <vector>

#include "cir/common.hpp"
#include "cir/model.hpp"

namespace cir {

/// Adam with decoupled weight decay and per-group learning rates (the
/// backbone group typically steps at a fraction of the head rate).
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(size_t n) : m_(n, 0.0), v_(n, 0.0) {}

  void reset(size_t n) {
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
    t_ = 0;
  }

  struct StepRates {
    double lr_head = 1e-3;
    double lr_backbone = 1e-4;
    bool freeze_backbone = false;
  };

  void step(Vec& params, const Vec& grads, const std::vector<ParamInfo>& infos,
            const StepRates& rates, const TrainConfig& cfg);

  Vec& first_moment() { return m_; }
  Vec& second_moment() { return v_; }
  const Vec& first_moment() const { return m_; }
  const Vec& second_moment() const { return v_; }
  int64_t steps() const { return t_; }
  void set_steps(int64_t t) { t_ = t; }

 private:
  Vec m_, v_;
  int64_t t_ = 0;
};

}  // namespace cir
