#include "cir/backbone.hpp"

namespace cir {

void encoder_forward(const EncoderLayout& enc, const double* params, const Vec& input,
                     EncoderTrace& trace) {
  if (static_cast<int>(input.size()) != enc.input_dim) {
    throw ConfigError("encoder input length " + std::to_string(input.size()) +
                      " does not match configured input_dim " + std::to_string(enc.input_dim));
  }
  const int L = enc.tokens, Dp = enc.token_dim, H = enc.hidden;

  trace.input = input;
  trace.pre_hidden.resize(H);
  enc.input_to_hidden.forward(params, input.data(), trace.pre_hidden.data());

  trace.hidden.resize(H);
  for (int i = 0; i < H; ++i) trace.hidden[i] = activate(enc.act, trace.pre_hidden[i]);

  trace.tokens = Matrix(L, Dp);
  enc.hidden_to_tokens.forward(params, trace.hidden.data(), trace.tokens.data());

  trace.token_mean.assign(Dp, 0.0);
  for (int l = 0; l < L; ++l) {
    const double* row = trace.tokens.row(l);
    for (int d = 0; d < Dp; ++d) trace.token_mean[d] += row[d];
  }
  for (int d = 0; d < Dp; ++d) trace.token_mean[d] /= L;

  trace.global.resize(enc.global_dim);
  enc.mean_to_global.forward(params, trace.token_mean.data(), trace.global.data());
}

EncodedFeatures encoder_encode(const EncoderLayout& enc, const double* params, const Vec& input) {
  EncoderTrace t;
  encoder_forward(enc, params, input, t);
  return EncodedFeatures{std::move(t.global), std::move(t.tokens)};
}

void encoder_backward(const EncoderLayout& enc, const double* params, const EncoderTrace& trace,
                      const Matrix& d_tokens, const Vec& d_global, double* grads) {
  const int L = enc.tokens, Dp = enc.token_dim, H = enc.hidden;

  Vec d_mean(Dp, 0.0);
  enc.mean_to_global.backward(params, trace.token_mean.data(), d_global.data(), grads,
                              d_mean.data());

  // d(token l) = d_tokens[l] + d_mean / L
  Matrix d_tok = d_tokens;
  if (d_tok.empty()) d_tok = Matrix(L, Dp);
  for (int l = 0; l < L; ++l) {
    double* row = d_tok.row(l);
    for (int d = 0; d < Dp; ++d) row[d] += d_mean[d] / L;
  }

  Vec d_hidden(H, 0.0);
  enc.hidden_to_tokens.backward(params, trace.hidden.data(), d_tok.data(), grads,
                                d_hidden.data());

  Vec d_pre(H);
  for (int i = 0; i < H; ++i) d_pre[i] = d_hidden[i] * activate_grad(enc.act, trace.pre_hidden[i]);

  enc.input_to_hidden.backward(params, trace.input.data(), d_pre.data(), grads, nullptr);
}

}  // namespace cir
