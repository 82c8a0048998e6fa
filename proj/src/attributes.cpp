#include "cir/attributes.hpp"

namespace cir {

void global_attributes_forward(const double* projected_global, const double* masks, int P, int D,
                               double* out) {
  for (int i = 0; i < P; ++i) {
    const double* m = masks + static_cast<size_t>(i) * D;
    double* row = out + static_cast<size_t>(i) * D;
    for (int d = 0; d < D; ++d) row[d] = projected_global[d] * m[d];
  }
}

void local_attributes_forward(const Matrix& proj_tokens, const double* agg_w, const double* agg_b,
                              int Q, double* gates, double* out) {
  const int L = proj_tokens.rows();
  const int D = proj_tokens.cols();
  if (L < 1) throw InvalidInputError("local attribute extraction requires at least one token");
  for (int j = 0; j < Q; ++j) {
    const double* w = agg_w + static_cast<size_t>(j) * D;
    double* g = gates + static_cast<size_t>(j) * L;
    double* row = out + static_cast<size_t>(j) * D;
    std::fill(row, row + D, 0.0);
    for (int l = 0; l < L; ++l) {
      const double* tok = proj_tokens.row(l);
      double logit = agg_b[j];
      for (int d = 0; d < D; ++d) logit += w[d] * tok[d];
      const double s = sigmoid(logit);
      g[l] = s;
      for (int d = 0; d < D; ++d) row[d] += s * tok[d];
    }
  }
}

Matrix extract_global_attributes(const Vec& global, const ConditionMaskBank& bank) {
  const int P = bank.masks.rows();
  const int D = bank.masks.cols();
  if (static_cast<int>(global.size()) != D) {
    throw ConfigError("global feature dim " + std::to_string(global.size()) +
                      " does not match condition mask dim " + std::to_string(D));
  }
  Matrix out(P, D);
  global_attributes_forward(global.data(), bank.masks.data(), P, D, out.data());
  return out;
}

Matrix extract_local_attributes(const Matrix& tokens, const AggregatorBank& bank,
                                Matrix* gates_out) {
  const int L = tokens.rows();
  if (L < 1) throw InvalidInputError("local attribute extraction requires at least one token");
  if (tokens.cols() != bank.projection_w.cols()) {
    throw ConfigError("token dim " + std::to_string(tokens.cols()) +
                      " does not match projection input dim " +
                      std::to_string(bank.projection_w.cols()));
  }
  const int D = bank.projection_w.rows();
  const int Q = bank.agg_w.rows();
  Matrix proj(L, D);
  for (int l = 0; l < L; ++l) {
    const double* tok = tokens.row(l);
    double* p = proj.row(l);
    for (int d = 0; d < D; ++d) {
      double acc = bank.projection_b[d];
      const double* w = bank.projection_w.row(d);
      for (int c = 0; c < tokens.cols(); ++c) acc += w[c] * tok[c];
      p[d] = acc;
    }
  }
  Matrix gates(Q, L);
  Matrix out(Q, D);
  local_attributes_forward(proj, bank.agg_w.data(), bank.agg_b.data(), Q, gates.data(),
                           out.data());
  if (gates_out) *gates_out = std::move(gates);
  return out;
}

double orthogonality_penalty(const Matrix& e) {
  const int K = e.rows();
  const int D = e.cols();
  double total = 0.0;
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) {
      double dot = 0.0;
      const double* a = e.row(i);
      const double* b = e.row(j);
      for (int d = 0; d < D; ++d) dot += a[d] * b[d];
      const double diff = dot - (i == j ? 1.0 : 0.0);
      total += diff * diff;
    }
  }
  return total;
}

double orthogonal_regularization(const Matrix& e_ref, const Matrix& e_mod, const Matrix& e_tgt) {
  for (const Matrix* m : {&e_ref, &e_mod, &e_tgt}) {
    if (m->rows() != e_ref.rows() || m->cols() != e_ref.cols()) {
      throw InvalidInputError("orthogonal regularization requires three K×D matrices");
    }
  }
  return orthogonality_penalty(e_ref) + orthogonality_penalty(e_mod) +
         orthogonality_penalty(e_tgt);
}

void orthogonality_penalty_grad(const Matrix& e, double scale, Matrix& d_e) {
  const int K = e.rows();
  const int D = e.cols();
  // d/dE ||E Eᵀ - I||² = 4 (E Eᵀ - I) E
  Matrix gram(K, K);
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) {
      double dot = 0.0;
      const double* a = e.row(i);
      const double* b = e.row(j);
      for (int d = 0; d < D; ++d) dot += a[d] * b[d];
      gram(i, j) = dot - (i == j ? 1.0 : 0.0);
    }
  }
  for (int i = 0; i < K; ++i) {
    double* out = d_e.row(i);
    for (int j = 0; j < K; ++j) {
      const double g = 4.0 * scale * gram(i, j);
      if (g == 0.0) continue;
      const double* b = e.row(j);
      for (int d = 0; d < D; ++d) out[d] += g * b[d];
    }
  }
}

void attribute_forward(const AttributeBankLayout& bank, const double* params, InputKind kind,
                       const Vec& global, const Matrix& tokens, AttributeTrace& trace) {
  const int P = bank.P, Q = bank.Q, D = bank.D;
  const bool identity =
      kind == InputKind::kImage ? bank.pre_image_identity : bank.pre_text_identity;
  const LinearLayer& pre = kind == InputKind::kImage ? bank.pre_image : bank.pre_text;
  const LinearLayer& proj = kind == InputKind::kImage ? bank.proj_image : bank.proj_text;

  trace.raw_global = global;
  if (identity) {
    if (static_cast<int>(global.size()) != D) {
      throw ConfigError("global width must equal attribute dim under identity pre-projection");
    }
    trace.projected_global = global;
  } else {
    trace.projected_global.resize(D);
    pre.forward(params, global.data(), trace.projected_global.data());
  }

  trace.features = Matrix(bank.K(), D);
  global_attributes_forward(trace.projected_global.data(), params + bank.cond_masks, P, D,
                            trace.features.data());

  const int L = tokens.rows();
  if (L < 1) throw InvalidInputError("local attribute extraction requires at least one token");
  if (tokens.cols() != proj.in) {
    throw ConfigError("token dim does not match the modality projection");
  }
  trace.proj_tokens = Matrix(L, D);
  for (int l = 0; l < L; ++l) {
    proj.forward(params, tokens.row(l), trace.proj_tokens.row(l));
  }
  trace.gates = Matrix(Q, L);
  local_attributes_forward(trace.proj_tokens, params + bank.agg_w, params + bank.agg_b, Q,
                           trace.gates.data(), trace.features.row(P));
}

void attribute_backward(const AttributeBankLayout& bank, const double* params, InputKind kind,
                        const Matrix& raw_tokens, const AttributeTrace& trace, const Matrix& d_e,
                        double* grads, Vec& d_global, Matrix& d_tokens) {
  const int P = bank.P, Q = bank.Q, D = bank.D;
  const int L = trace.proj_tokens.rows();
  const bool identity =
      kind == InputKind::kImage ? bank.pre_image_identity : bank.pre_text_identity;
  const LinearLayer& pre = kind == InputKind::kImage ? bank.pre_image : bank.pre_text;
  const LinearLayer& proj = kind == InputKind::kImage ? bank.proj_image : bank.proj_text;
  const double* masks = params + bank.cond_masks;
  double* d_masks = grads + bank.cond_masks;

  // Global rows: U[i] = p ⊙ C_i
  Vec d_proj_global(D, 0.0);
  for (int i = 0; i < P; ++i) {
    const double* du = d_e.row(i);
    const double* m = masks + static_cast<size_t>(i) * D;
    double* dm = d_masks + static_cast<size_t>(i) * D;
    for (int d = 0; d < D; ++d) {
      d_proj_global[d] += du[d] * m[d];
      dm[d] += du[d] * trace.projected_global[d];
    }
  }
  if (identity) {
    d_global = d_proj_global;
  } else {
    d_global.assign(pre.in, 0.0);
    pre.backward(params, trace.raw_global.data(), d_proj_global.data(), grads, d_global.data());
  }

  // Local rows: V[j] = Σ_l s_jl X̄[l]; s_jl = σ(w_j·X̄[l] + c_j)
  Matrix d_proj_tokens(L, D);
  const double* agg_w = params + bank.agg_w;
  double* d_agg_w = grads + bank.agg_w;
  double* d_agg_b = grads + bank.agg_b;
  for (int j = 0; j < Q; ++j) {
    const double* dv = d_e.row(P + j);
    const double* w = agg_w + static_cast<size_t>(j) * D;
    double* dw = d_agg_w + static_cast<size_t>(j) * D;
    for (int l = 0; l < L; ++l) {
      const double s = trace.gates(j, l);
      const double* tok = trace.proj_tokens.row(l);
      double* dtok = d_proj_tokens.row(l);
      double ds = 0.0;
      for (int d = 0; d < D; ++d) ds += dv[d] * tok[d];
      const double dz = ds * s * (1.0 - s);
      for (int d = 0; d < D; ++d) {
        dtok[d] += s * dv[d] + dz * w[d];
        dw[d] += dz * tok[d];
      }
      d_agg_b[j] += dz;
    }
  }

  d_tokens = Matrix(L, proj.in);
  for (int l = 0; l < L; ++l) {
    proj.backward(params, raw_tokens.row(l), d_proj_tokens.row(l), grads, d_tokens.row(l));
  }
}

}  // namespace cir
