#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "nmt/transformer.hpp"

namespace nmt {

// Linear warmup to peak_lr, then decay proportional to 1/sqrt(step).
// Steps are 1-based.
inline double learning_rate(double peak_lr, size_t warmup_steps, size_t step) {
  if (step == 0) return 0.0;
  double s = static_cast<double>(step);
  double w = static_cast<double>(std::max<size_t>(warmup_steps, 1));
  return peak_lr * std::min(s / w, std::sqrt(w / s));
}

// Global L2 norm over trainable gradients, accumulated in double.
template <typename T>
double global_norm(const Parameters<T> &grads) {
  double sum = 0.0;
  for (const auto &entry : grads.entries()) {
    if (!entry.trainable) continue;
    for (T v : entry.value.values()) sum += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(sum);
}

// Rescales gradients so their global norm is at most max_norm. Returns the
// norm before clipping.
template <typename T>
double clip_global_norm(Parameters<T> &grads, double max_norm) {
  double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto &entry : grads.entries()) {
      for (T &v : entry.value.values()) v *= scale;
    }
  }
  return norm;
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
};

template <typename T>
struct AdamState {
  Parameters<T> m;
  Parameters<T> v;
  uint64_t t = 0;

  static AdamState zeros_for(const Parameters<T> &params) {
    return {params.zeros_like(), params.zeros_like(), 0};
  }
  bool operator==(const AdamState &) const = default;
};

// One bias-corrected Adam update on every trainable tensor.
template <typename T>
void adam_step(Parameters<T> &params, const Parameters<T> &grads, AdamState<T> &state,
               double lr, const AdamOptions &options = {}) {
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  const T b1 = static_cast<T>(options.beta1);
  const T b2 = static_cast<T>(options.beta2);
  const T step = static_cast<T>(lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(options.epsilon);
  for (size_t e = 0; e < params.size(); ++e) {
    auto &entry = params.entries()[e];
    if (!entry.trainable) continue;
    auto &m = state.m.entries()[e].value;
    auto &v = state.v.entries()[e].value;
    const auto &g = grads.entries()[e].value;
    for (size_t i = 0; i < g.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      entry.value[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

}  // namespace nmt
