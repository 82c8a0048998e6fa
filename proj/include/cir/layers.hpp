#pragma once

#include <cmath>
#include <cstddef>

#include "cir/common.hpp"

namespace cir {

enum class Activation { kTanh, kRelu };

inline double activate(Activation a, double x) {
  return a == Activation::kTanh ? std::tanh(x) : (x > 0.0 ? x : 0.0);
}

/// Derivative expressed through the pre-activation input.
inline double activate_grad(Activation a, double pre) {
  if (a == Activation::kTanh) {
    const double t = std::tanh(pre);
    return 1.0 - t * t;
  }
  return pre > 0.0 ? 1.0 : 0.0;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Affine map y = W x + b with W stored row-major out×in. Fields are offsets
/// into a flat parameter vector owned by the model.
struct LinearLayer {
  size_t w = 0;
  size_t b = 0;
  int in = 0;
  int out = 0;

  void forward(const double* params, const double* x, double* y) const {
    const double* W = params + w;
    const double* B = params + b;
    for (int o = 0; o < out; ++o) {
      double acc = B[o];
      const double* row = W + static_cast<size_t>(o) * in;
      for (int i = 0; i < in; ++i) acc += row[i] * x[i];
      y[o] = acc;
    }
  }

  /// Accumulates parameter gradients; writes input gradient if dx != nullptr
  /// (dx is accumulated into, not overwritten).
  void backward(const double* params, const double* x, const double* dy, double* grads,
                double* dx) const {
    double* dW = grads + w;
    double* dB = grads + b;
    const double* W = params + w;
    for (int o = 0; o < out; ++o) {
      const double g = dy[o];
      if (g == 0.0) continue;
      double* dRow = dW + static_cast<size_t>(o) * in;
      const double* row = W + static_cast<size_t>(o) * in;
      for (int i = 0; i < in; ++i) dRow[i] += g * x[i];
      dB[o] += g;
      if (dx) {
        for (int i = 0; i < in; ++i) dx[i] += g * row[i];
      }
    }
  }

  size_t param_count() const { return static_cast<size_t>(out) * in + out; }
};

}  // namespace cir
