#include "cir/model.hpp"

#include <algorithm>
#include <cmath>

#include "cir/rng.hpp"

namespace cir {

namespace {

size_t shape_count(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation: " + name);
}

}  // namespace

size_t Model::add_param(const std::string& name, std::vector<int> shape, ParamGroup group) {
  ParamInfo info;
  info.name = name;
  info.offset = params_.size();
  info.count = shape_count(shape);
  info.shape = std::move(shape);
  info.group = group;
  params_.resize(params_.size() + info.count, 0.0);
  infos_.push_back(std::move(info));
  return infos_.back().offset;
}

LinearLayer Model::add_linear(const std::string& name, int in, int out, ParamGroup group) {
  LinearLayer l;
  l.in = in;
  l.out = out;
  l.w = add_param(name + ".weight", {out, in}, group);
  l.b = add_param(name + ".bias", {out}, group);
  return l;
}

Model::Model(const ExperimentConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const Activation act = parse_activation(cfg_.backbone.activation);
  const int D = cfg_.attributes.dim;
  const int P = cfg_.attributes.global_count;
  const int Q = cfg_.attributes.local_count;

  auto build_encoder = [&](const std::string& prefix, const EncoderConfig& e, int input_dim) {
    EncoderLayout enc;
    enc.input_dim = input_dim;
    enc.hidden = e.hidden;
    enc.tokens = e.tokens;
    enc.token_dim = e.token_dim;
    enc.global_dim = e.global_dim;
    enc.act = act;
    enc.input_to_hidden = add_linear(prefix + ".input_to_hidden", input_dim, e.hidden,
                                     ParamGroup::kBackbone);
    enc.hidden_to_tokens = add_linear(prefix + ".hidden_to_tokens", e.hidden,
                                      e.tokens * e.token_dim, ParamGroup::kBackbone);
    enc.mean_to_global = add_linear(prefix + ".mean_to_global", e.token_dim, e.global_dim,
                                    ParamGroup::kBackbone);
    return enc;
  };
  image_enc_ = build_encoder("image_encoder", cfg_.backbone.image, cfg_.world.image_payload_dim);
  text_enc_ = build_encoder("text_encoder", cfg_.backbone.text, cfg_.world.text_payload_dim);

  bank_.P = P;
  bank_.Q = Q;
  bank_.D = D;
  bank_.cond_masks = add_param("attributes.condition_masks", {P, D}, ParamGroup::kHead);
  bank_.proj_image =
      add_linear("attributes.token_projection_image", cfg_.backbone.image.token_dim, D,
                 ParamGroup::kHead);
  bank_.proj_text = add_linear("attributes.token_projection_text", cfg_.backbone.text.token_dim,
                               D, ParamGroup::kHead);
  bank_.pre_image_identity = cfg_.backbone.image.global_dim == D;
  if (!bank_.pre_image_identity) {
    bank_.pre_image = add_linear("attributes.global_projection_image",
                                 cfg_.backbone.image.global_dim, D, ParamGroup::kHead);
  }
  bank_.pre_text_identity = cfg_.backbone.text.global_dim == D;
  if (!bank_.pre_text_identity) {
    bank_.pre_text = add_linear("attributes.global_projection_text",
                                cfg_.backbone.text.global_dim, D, ParamGroup::kHead);
  }
  bank_.agg_w = add_param("attributes.aggregator_weights", {Q, D}, ParamGroup::kHead);
  bank_.agg_b = add_param("attributes.aggregator_biases", {Q}, ParamGroup::kHead);

  const int hc = cfg_.composition.hidden > 0 ? cfg_.composition.hidden : D;
  auto build_head = [&](const std::string& prefix) {
    HeadLayout h;
    h.D = D;
    h.hidden = hc;
    h.act = act;
    h.l1 = add_linear(prefix + ".l1", 2 * D, hc, ParamGroup::kHead);
    h.l2 = add_linear(prefix + ".l2", hc, 1, ParamGroup::kHead);
    return h;
  };
  student_head_ = build_head("student_head");
  teacher_keep_head_ = build_head("teacher_keep_head");
  teacher_replace_head_ = build_head("teacher_replace_head");

  initialize(cfg_.backbone.init_seed);
}

void Model::initialize(uint64_t seed) {
  Rng rng(seed);
  for (const ParamInfo& info : infos_) {
    double* p = params_.data() + info.offset;
    const bool is_bias = info.name.ends_with(".bias");
    if (info.name == "attributes.condition_masks") {
      // Unit-mean start keeps initial attribute features near the raw feature.
      for (size_t i = 0; i < info.count; ++i) p[i] = rng.normal(1.0, 0.1);
    } else if (info.name.ends_with(".l2.weight") || info.name.ends_with(".l2.bias")) {
      // Composition-head output layers start at zero so keep masks open at 0.5.
      std::fill(p, p + info.count, 0.0);
    } else if (is_bias || info.name == "attributes.aggregator_biases") {
      std::fill(p, p + info.count, 0.0);
    } else {
      const int fan_in = info.shape.size() == 2 ? info.shape[1] : info.shape.back();
      const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (size_t i = 0; i < info.count; ++i) p[i] = rng.normal(0.0, scale);
    }
  }
}

const ParamInfo* Model::find_param(const std::string& name) const {
  for (const ParamInfo& info : infos_) {
    if (info.name == name) return &info;
  }
  return nullptr;
}

EncodedFeatures Model::encode(const RawInput& input) const {
  const EncoderLayout& enc = input.kind == InputKind::kImage ? image_enc_ : text_enc_;
  if (static_cast<int>(input.payload.size()) != enc.input_dim) {
    throw ConfigError("payload length " + std::to_string(input.payload.size()) +
                      " does not match encoder input size " + std::to_string(enc.input_dim));
  }
  return encoder_encode(enc, params_.data(), input.payload);
}

Matrix Model::attribute_matrix(const RawInput& input) const {
  const EncoderLayout& enc = input.kind == InputKind::kImage ? image_enc_ : text_enc_;
  if (static_cast<int>(input.payload.size()) != enc.input_dim) {
    throw ConfigError("payload length " + std::to_string(input.payload.size()) +
                      " does not match encoder input size " + std::to_string(enc.input_dim));
  }
  EncoderTrace et;
  encoder_forward(enc, params_.data(), input.payload, et);
  AttributeTrace at;
  attribute_forward(bank_, params_.data(), input.kind, et.global, et.tokens, at);
  return at.features;
}

TermSwitches TermSwitches::from_disabled(const std::vector<std::string>& disabled) {
  TermSwitches sw;
  for (const std::string& name : disabled) {
    if (name == "rank_stu") sw.rank_stu = false;
    else if (name == "rank_tea") sw.rank_tea = false;
    else if (name == "mask_tea") sw.mask_tea = false;
    else if (name == "ortho") sw.ortho = false;
    else if (name == "ckd") sw.ckd = false;
    else if (name == "kl") sw.kl = false;
    else throw ConfigError("unknown loss term in disabled_terms: " + name);
  }
  return sw;
}

namespace {

void forward_element(const Model& model, InputKind kind, const Vec& payload, ElementTrace& out) {
  const EncoderLayout& enc =
      kind == InputKind::kImage ? model.image_encoder() : model.text_encoder();
  encoder_forward(enc, model.params().data(), payload, out.enc);
  attribute_forward(model.bank(), model.params().data(), kind, out.enc.global, out.enc.tokens,
                    out.attr);
}

void softmax_rows(const Matrix& logits, Matrix& probs) {
  probs = Matrix(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i) softmax(logits.row(i), logits.cols(), probs.row(i));
}

}  // namespace

LossBreakdown model_batch_forward(const Model& model, const TripletBatch& batch,
                                  const LossConfig& loss_cfg, const TermSwitches& switches,
                                  BatchTrace& trace) {
  const int B = batch.size();
  if (B < 1) throw InvalidInputError("batch must contain at least one triplet");
  if (static_cast<int>(batch.text.size()) != B || static_cast<int>(batch.target.size()) != B) {
    throw InvalidInputError("batch element lists must be aligned");
  }
  const double tau = loss_cfg.temperature;
  if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
  const double eps = loss_cfg.cosine_eps;
  const int K = model.attribute_count();
  const bool teacher = switches.teacher_needed();
  const double* params = model.params().data();

  trace.items.assign(B, TripletTrace{});
#pragma omp parallel for schedule(static)
  for (int i = 0; i < B; ++i) {
    TripletTrace& t = trace.items[i];
    forward_element(model, InputKind::kImage, batch.reference[i], t.ref);
    forward_element(model, InputKind::kText, batch.text[i], t.mod);
    forward_element(model, InputKind::kImage, batch.target[i], t.tgt);
    student_compose_forward(model.student_head(), params, t.ref.attr.features,
                            t.mod.attr.features, t.student);
    if (teacher) {
      teacher_compose_forward(model.teacher_keep_head(), model.teacher_replace_head(), params,
                              t.tgt.attr.features, t.ref.attr.features, t.mod.attr.features,
                              t.teacher);
    }
    t.pooled_query = mean_pool(t.student.composed);
    t.pooled_target = mean_pool(t.tgt.attr.features);
  }

  // Pairwise logits. Student logits double as the matching-degree logits.
  trace.student_logits = Matrix(B, B);
  trace.teacher_logits = teacher && switches.rank_tea ? Matrix(B, B) : Matrix();
  trace.p_target = switches.kl ? Matrix(B, B) : Matrix();
#pragma omp parallel for schedule(static)
  for (int i = 0; i < B; ++i) {
    const TripletTrace& ti = trace.items[i];
    for (int j = 0; j < B; ++j) {
      const TripletTrace& tj = trace.items[j];
      trace.student_logits(i, j) =
          cosine_similarity(ti.pooled_query.data(), tj.pooled_target.data(),
                            static_cast<int>(ti.pooled_query.size()), eps) /
          tau;
      if (!trace.teacher_logits.empty()) {
        trace.teacher_logits(i, j) =
            attribute_similarity(ti.teacher.composed, tj.tgt.attr.features, eps) / tau;
      }
      if (!trace.p_target.empty()) {
        trace.p_target(i, j) =
            attribute_similarity(ti.tgt.attr.features, tj.tgt.attr.features, eps) / tau;
      }
    }
  }
  softmax_rows(trace.student_logits, trace.p_student);
  if (!trace.teacher_logits.empty()) softmax_rows(trace.teacher_logits, trace.p_teacher);
  if (!trace.p_target.empty()) {
    Matrix tmp;
    softmax_rows(trace.p_target, tmp);
    trace.p_target = std::move(tmp);
  }

  LossBreakdown parts;
  if (switches.rank_stu) parts.rank_stu = softmax_cross_entropy_diagonal(trace.student_logits);
  if (!trace.teacher_logits.empty()) {
    parts.rank_tea = softmax_cross_entropy_diagonal(trace.teacher_logits);
  }
  for (int i = 0; i < B; ++i) {
    const TripletTrace& t = trace.items[i];
    if (teacher && switches.mask_tea) {
      MaskPair m{t.teacher.keep, t.teacher.replace, Branch::kTeacher};
      parts.mask_tea += teacher_mask_regularization(m) / B;
    }
    if (switches.ortho) {
      parts.ortho += orthogonal_regularization(t.ref.attr.features, t.mod.attr.features,
                                               t.tgt.attr.features) /
                     B;
    }
    if (teacher && switches.ckd) {
      Vec stu_replace(K);
      for (int k = 0; k < K; ++k) stu_replace[k] = 1.0 - t.student.keep[k];
      MaskPair stu{t.student.keep, stu_replace, Branch::kStudent};
      MaskPair tea{t.teacher.keep, t.teacher.replace, Branch::kTeacher};
      parts.ckd += composition_distillation_loss(stu, tea) / B;
    }
    if (switches.kl) {
      double kl_i = 0.0;
      for (int j = 0; j < B; ++j) {
        const double pt = trace.p_target(i, j);
        if (pt > 0.0) kl_i += pt * (std::log(pt) - std::log(trace.p_student(i, j)));
      }
      parts.kl += kl_i / B;
    }
  }

  LossWeights w{loss_cfg.lambda, loss_cfg.eta, loss_cfg.mu, loss_cfg.nu, loss_cfg.kappa};
  trace.losses = total_objective(parts.rank_stu, parts.rank_tea, parts.mask_tea, parts.ortho,
                                 parts.ckd, parts.kl, w);
  return trace.losses;
}

void model_batch_backward(const Model& model, const TripletBatch& batch, const BatchTrace& trace,
                          const LossConfig& loss_cfg, const TermWeights& weights,
                          bool distill_stop_gradient, Vec& grads) {
  const int B = batch.size();
  const int K = model.attribute_count();
  const int D = model.attribute_dim();
  const double tau = loss_cfg.temperature;
  const double eps = loss_cfg.cosine_eps;
  const double* params = model.params().data();
  const size_t n_params = model.param_count();
  if (grads.size() != n_params) throw InvalidInputError("gradient buffer size mismatch");

  const bool use_tea_rank = weights.rank_tea != 0.0 && !trace.teacher_logits.empty();
  const bool use_kl = weights.kl != 0.0 && !trace.p_target.empty();
  const bool use_stu_rank = weights.rank_stu != 0.0;
  const bool teacher_present = !trace.items.empty() && !trace.items[0].teacher.keep.empty();
  const bool use_mask_tea = weights.mask_tea != 0.0 && teacher_present;
  const bool use_ckd = weights.ckd != 0.0 && teacher_present;
  const bool teacher_backward =
      use_tea_rank || use_mask_tea || (use_ckd && !distill_stop_gradient);

  // Upstream gradients on the two logits matrices.
  Matrix d_stu_logits(B, B);
  if (use_stu_rank || use_kl) {
    for (int i = 0; i < B; ++i) {
      for (int j = 0; j < B; ++j) {
        double g = 0.0;
        if (use_stu_rank) {
          g += weights.rank_stu / B * (trace.p_student(i, j) - (i == j ? 1.0 : 0.0));
        }
        if (use_kl) {
          g += weights.kl / B * (trace.p_student(i, j) - trace.p_target(i, j));
        }
        d_stu_logits(i, j) = g;
      }
    }
  }
  Matrix d_tea_logits;
  if (use_tea_rank) {
    d_tea_logits = Matrix(B, B);
    for (int i = 0; i < B; ++i) {
      for (int j = 0; j < B; ++j) {
        d_tea_logits(i, j) =
            weights.rank_tea / B * (trace.p_teacher(i, j) - (i == j ? 1.0 : 0.0));
      }
    }
  }

  // Per-item gradient buffers; merged in item order so the result is
  // independent of the OpenMP thread count.
  std::vector<Vec> item_grads(B, Vec(n_params, 0.0));

#pragma omp parallel for schedule(static)
  for (int p = 0; p < B; ++p) {
    const TripletTrace& tp = trace.items[p];
    double* g = item_grads[p].data();
    const int dim = static_cast<int>(tp.pooled_query.size());

    Matrix d_comp_stu(K, D), d_comp_tea, d_e_ref(K, D), d_e_mod(K, D), d_e_tgt(K, D);
    if (teacher_backward || use_tea_rank) d_comp_tea = Matrix(K, D);
    Vec d_pooled_query(dim, 0.0), d_pooled_target(dim, 0.0);
    Vec d_keep_stu(K, 0.0), d_rep_stu(K, 0.0), d_keep_tea(K, 0.0), d_rep_tea(K, 0.0);

    if (use_stu_rank || use_kl) {
      // Item p as the query row.
      for (int j = 0; j < B; ++j) {
        const double up = d_stu_logits(p, j) / tau;
        if (up == 0.0) continue;
        cosine_similarity_backward(tp.pooled_query.data(),
                                   trace.items[j].pooled_target.data(), dim, eps, up,
                                   d_pooled_query.data(), nullptr);
      }
      // Item p as the target column.
      for (int i = 0; i < B; ++i) {
        const double up = d_stu_logits(i, p) / tau;
        if (up == 0.0) continue;
        cosine_similarity_backward(trace.items[i].pooled_query.data(),
                                   tp.pooled_target.data(), dim, eps, up, nullptr,
                                   d_pooled_target.data());
      }
    }
    if (use_tea_rank) {
      for (int j = 0; j < B; ++j) {
        const double up = d_tea_logits(p, j) / tau;
        const Matrix& tgt_j = trace.items[j].tgt.attr.features;
        for (int k = 0; k < K; ++k) {
          cosine_similarity_backward(tp.teacher.composed.row(k), tgt_j.row(k), D, eps, up,
                                     d_comp_tea.row(k), nullptr);
        }
      }
      for (int i = 0; i < B; ++i) {
        const double up = d_tea_logits(i, p) / tau;
        const Matrix& comp_i = trace.items[i].teacher.composed;
        for (int k = 0; k < K; ++k) {
          cosine_similarity_backward(comp_i.row(k), tp.tgt.attr.features.row(k), D, eps, up,
                                     nullptr, d_e_tgt.row(k));
        }
      }
    }

    // Mean-pool backward.
    for (int k = 0; k < K; ++k) {
      double* dcs = d_comp_stu.row(k);
      double* det = d_e_tgt.row(k);
      for (int d = 0; d < D; ++d) {
        dcs[d] += d_pooled_query[d] / K;
        det[d] += d_pooled_target[d] / K;
      }
    }

    if (weights.ortho != 0.0) {
      const double scale = weights.ortho / B;
      orthogonality_penalty_grad(tp.ref.attr.features, scale, d_e_ref);
      orthogonality_penalty_grad(tp.mod.attr.features, scale, d_e_mod);
      orthogonality_penalty_grad(tp.tgt.attr.features, scale, d_e_tgt);
    }
    if (use_mask_tea) {
      const double base = weights.mask_tea / B * 2.0 / K;
      for (int k = 0; k < K; ++k) {
        const double diff = tp.teacher.replace[k] - (1.0 - tp.teacher.keep[k]);
        d_rep_tea[k] += base * diff;
        d_keep_tea[k] += base * diff;
      }
    }
    if (use_ckd) {
      const double base = weights.ckd / B * 2.0 / K;
      for (int k = 0; k < K; ++k) {
        const double dk = tp.student.keep[k] - tp.teacher.keep[k];
        const double dr = (1.0 - tp.student.keep[k]) - tp.teacher.replace[k];
        d_keep_stu[k] += base * dk;
        d_rep_stu[k] += base * dr;
        if (!distill_stop_gradient) {
          d_keep_tea[k] -= base * dk;
          d_rep_tea[k] -= base * dr;
        }
      }
    }

    if (teacher_backward) {
      teacher_compose_backward(model.teacher_keep_head(), model.teacher_replace_head(), params,
                               tp.tgt.attr.features, tp.ref.attr.features, tp.mod.attr.features,
                               tp.teacher, d_comp_tea, d_keep_tea, d_rep_tea, g, d_e_tgt,
                               d_e_ref, d_e_mod);
    }
    student_compose_backward(model.student_head(), params, tp.ref.attr.features,
                             tp.mod.attr.features, tp.student, d_comp_stu, d_keep_stu, d_rep_stu,
                             g, d_e_ref, d_e_mod);

    auto element_backward = [&](InputKind kind, const ElementTrace& et, const Matrix& d_e) {
      Vec d_global;
      Matrix d_tokens;
      attribute_backward(model.bank(), params, kind, et.enc.tokens, et.attr, d_e, g, d_global,
                         d_tokens);
      const EncoderLayout& enc =
          kind == InputKind::kImage ? model.image_encoder() : model.text_encoder();
      encoder_backward(enc, params, et.enc, d_tokens, d_global, g);
    };
    element_backward(InputKind::kImage, tp.ref, d_e_ref);
    element_backward(InputKind::kText, tp.mod, d_e_mod);
    element_backward(InputKind::kImage, tp.tgt, d_e_tgt);
  }

  for (int i = 0; i < B; ++i) {
    const double* src = item_grads[i].data();
    for (size_t n = 0; n < n_params; ++n) grads[n] += src[n];
  }
}

Vec student_query_embedding(const Model& model, const Vec& reference_payload,
                            const Vec& text_payload) {
  ElementTrace ref, mod;
  forward_element(model, InputKind::kImage, reference_payload, ref);
  forward_element(model, InputKind::kText, text_payload, mod);
  StudentCompositionTrace stu;
  student_compose_forward(model.student_head(), model.params().data(), ref.attr.features,
                          mod.attr.features, stu);
  return mean_pool(stu.composed);
}

Vec target_embedding(const Model& model, const Vec& image_payload) {
  ElementTrace tgt;
  forward_element(model, InputKind::kImage, image_payload, tgt);
  return mean_pool(tgt.attr.features);
}

}  // namespace cir
