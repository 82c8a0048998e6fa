#pragma once

#include "cir/backbone.hpp"
#include "cir/common.hpp"
#include "cir/layers.hpp"

namespace cir {

/// P learnable elementwise masks over the (pre-projected) global feature.
/// One bank is shared by the reference image, the modification text, and the
/// target image so the K attribute rows stay aligned across elements.
struct ConditionMaskBank {
  Matrix masks;  // P × D
};

/// Token projection plus Q per-token scoring kernels. The aggregators act on
/// projected D-dimensional tokens, so one bank serves both modalities; only
/// the projection is per-modality when token dims differ.
struct AggregatorBank {
  Matrix projection_w;  // D × D'
  Vec projection_b;     // D
  Matrix agg_w;         // Q × D
  Vec agg_b;            // Q
};

// --- core kernels (span forms; shared by the spec-level ops and the model) ---

/// out[i*D+d] = projected_global[d] * masks[i*D+d]
void global_attributes_forward(const double* projected_global, const double* masks, int P, int D,
                               double* out);

/// gates[j*L+l] = sigmoid(agg_w[j]·proj_tokens[l] + agg_b[j]);
/// out[j,:] = sum_l gates[j*L+l] * proj_tokens[l,:]  (unnormalized weighted sum)
void local_attributes_forward(const Matrix& proj_tokens, const double* agg_w, const double* agg_b,
                              int Q, double* gates, double* out);

// --- spec-level operations -------------------------------------------------

/// Global attribute rows from a D-dimensional global feature (identity
/// pre-projection; callers apply any D_raw -> D affine beforehand).
Matrix extract_global_attributes(const Vec& global, const ConditionMaskBank& bank);

/// Local attribute rows from raw L × D' tokens. `gates_out`, when non-null,
/// receives the Q × L sigmoid weights.
Matrix extract_local_attributes(const Matrix& tokens, const AggregatorBank& bank,
                                Matrix* gates_out = nullptr);

/// Sum over the three matrices of ||E Eᵀ - I||_F².
double orthogonal_regularization(const Matrix& e_ref, const Matrix& e_mod, const Matrix& e_tgt);

/// Single-matrix term of the regularizer.
double orthogonality_penalty(const Matrix& e);

/// dE += scale * 4 (E Eᵀ - I) E
void orthogonality_penalty_grad(const Matrix& e, double scale, Matrix& d_e);

// --- model-path layout and forward/backward ---------------------------------

struct AttributeBankLayout {
  size_t cond_masks = 0;  // P × D
  LinearLayer proj_image; // D'_img -> D
  LinearLayer proj_text;  // D'_txt -> D
  // Optional affine reconciling backbone global width with attribute width;
  // identity when D_raw == D.
  bool pre_image_identity = true;
  bool pre_text_identity = true;
  LinearLayer pre_image;
  LinearLayer pre_text;
  size_t agg_w = 0;  // Q × D
  size_t agg_b = 0;  // Q
  int P = 0, Q = 0, D = 0;
  int K() const { return P + Q; }
};

struct AttributeTrace {
  Vec raw_global;        // D_raw (encoder output, kept for the pre-projection backward)
  Vec projected_global;  // D
  Matrix proj_tokens;    // L × D
  Matrix gates;          // Q × L
  Matrix features;       // K × D (global rows first, then local rows)
};

void attribute_forward(const AttributeBankLayout& bank, const double* params, InputKind kind,
                       const Vec& global, const Matrix& tokens, AttributeTrace& trace);

/// Backward from dE (K × D); accumulates bank gradients and emits gradients
/// on the encoder outputs.
void attribute_backward(const AttributeBankLayout& bank, const double* params, InputKind kind,
                        const Matrix& raw_tokens, const AttributeTrace& trace, const Matrix& d_e,
                        double* grads, Vec& d_global, Matrix& d_tokens);

}  // namespace cir
