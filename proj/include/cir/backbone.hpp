#pragma once

#include "cir/common.hpp"
#include "cir/layers.hpp"

namespace cir {

enum class InputKind { kImage, kText };

/// Synthetic "pixel" / token-slot payload plus its modality tag.
struct RawInput {
  InputKind kind = InputKind::kImage;
  Vec payload;
};

/// Output of one encoder pass: the last-stage global vector and the
/// token matrix it was pooled from.
struct EncodedFeatures {
  Vec global;     // D_raw
  Matrix tokens;  // L × D'
};

/// Two-stage trainable encoder: affine -> nonlinearity -> affine producing
/// L×D' tokens; mean over tokens -> affine producing the global vector.
/// One instance per modality; towers share no weights.
struct EncoderLayout {
  LinearLayer input_to_hidden;   // n -> H
  LinearLayer hidden_to_tokens;  // H -> L*D'
  LinearLayer mean_to_global;    // D' -> D_raw
  int input_dim = 0;
  int hidden = 0;
  int tokens = 0;     // L
  int token_dim = 0;  // D'
  int global_dim = 0; // D_raw
  Activation act = Activation::kTanh;
};

/// Every intermediate needed for the backward pass.
struct EncoderTrace {
  Vec input;       // n
  Vec pre_hidden;  // H
  Vec hidden;      // H
  Matrix tokens;   // L × D'
  Vec token_mean;  // D'
  Vec global;      // D_raw
};

/// Pure function of (input, params): fills the trace.
void encoder_forward(const EncoderLayout& enc, const double* params, const Vec& input,
                     EncoderTrace& trace);

EncodedFeatures encoder_encode(const EncoderLayout& enc, const double* params, const Vec& input);

/// Accumulates parameter gradients given upstream gradients on the tokens
/// and the global vector.
void encoder_backward(const EncoderLayout& enc, const double* params, const EncoderTrace& trace,
                      const Matrix& d_tokens, const Vec& d_global, double* grads);

}  // namespace cir
