#include "cir/adamw.hpp"

#include <cmath>

namespace cir {

void AdamW::step(Vec& params, const Vec& grads, const std::vector<ParamInfo>& infos,
                 const StepRates& rates, const TrainConfig& cfg) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw InvalidInputError("AdamW buffers do not match the parameter vector");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (const ParamInfo& info : infos) {
    const bool backbone = info.group == ParamGroup::kBackbone;
    if (backbone && rates.freeze_backbone) continue;
    const double lr = backbone ? rates.lr_backbone : rates.lr_head;
    for (size_t i = info.offset; i < info.offset + info.count; ++i) {
      const double g = grads[i];
      m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * g;
      v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      params[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * params[i]);
    }
  }
}

}  // namespace cir
