#pragma once

// Row kernels shared by the autodiff graph and the incremental decoder. Both
// paths must call these exact functions so that teacher-forced evaluation and
// token-by-token decoding agree bit for bit. T selects the arithmetic type.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

namespace tinyrl::kernels {

// out[j] = sum_i a[i] * b[i * n + j], accumulated in ascending i.
template <class T>
inline void vec_mat(const double* a, const double* b, std::size_t k, std::size_t n, double* out) {
  for (std::size_t j = 0; j < n; ++j) {
    T acc = T(0);
    for (std::size_t i = 0; i < k; ++i) acc += T(a[i]) * T(b[i * n + j]);
    out[j] = double(acc);
  }
}

template <class T>
inline void add_vec(const double* a, const double* b, std::size_t n, double* out) {
  for (std::size_t j = 0; j < n; ++j) out[j] = double(T(a[j]) + T(b[j]));
}

template <class T>
inline void add_scalar(const double* a, double c, std::size_t n, double* out) {
  const T tc = T(c);
  for (std::size_t j = 0; j < n; ++j) out[j] = double(T(a[j]) + tc);
}

template <class T>
inline void rms_norm_row(const double* x, const double* gain, std::size_t n, double eps, double* out) {
  T ms = T(0);
  for (std::size_t j = 0; j < n; ++j) ms += T(x[j]) * T(x[j]);
  ms /= T(n);
  const T inv = T(1) / std::sqrt(ms + T(eps));
  for (std::size_t j = 0; j < n; ++j) out[j] = double(T(x[j]) * inv * T(gain[j]));
}

template <class T>
inline T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

template <class T>
inline void silu_vec(const double* x, std::size_t n, double* out) {
  for (std::size_t j = 0; j < n; ++j) out[j] = double(silu(T(x[j])));
}

template <class T>
inline void log_softmax_row(const double* x, std::size_t n, double* out) {
  T m = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j) m = std::max(m, T(x[j]));
  T s = T(0);
  for (std::size_t j = 0; j < n; ++j) s += std::exp(T(x[j]) - m);
  const T lse = m + std::log(s);
  for (std::size_t j = 0; j < n; ++j) out[j] = double(T(x[j]) - lse);
}

template <class T>
inline void softmax_row(const double* x, std::size_t n, double* out) {
  T m = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j) m = std::max(m, T(x[j]));
  T s = T(0);
  for (std::size_t j = 0; j < n; ++j) s += std::exp(T(x[j]) - m);
  for (std::size_t j = 0; j < n; ++j) out[j] = double(std::exp(T(x[j]) - m) / s);
}

// One step of the decayed linear-attention recurrence for a single head:
//   S <- decay * S + k v^T,   o = q^T S.
// state is dk x dv row-major.
inline void linear_attention_step(const double* q, const double* k, const double* v, std::size_t dk,
                                  std::size_t dv, double decay, double* state, double* out) {
  for (std::size_t i = 0; i < dk; ++i) {
    for (std::size_t j = 0; j < dv; ++j) state[i * dv + j] = decay * state[i * dv + j] + k[i] * v[j];
  }
  for (std::size_t j = 0; j < dv; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dk; ++i) acc += q[i] * state[i * dv + j];
    out[j] = acc;
  }
}

// Causal softmax attention for the last query over `count` cached positions.
// keys/values rows are `stride` apart; probs receives the attention weights.
inline void softmax_attention_row(const double* q, const double* keys, const double* values, std::size_t count,
                                  std::size_t stride, std::size_t dh, double scale, double* probs, double* out) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < count; ++s) {
    double dot = 0.0;
    for (std::size_t i = 0; i < dh; ++i) dot += q[i] * keys[s * stride + i];
    probs[s] = dot * scale;
    m = std::max(m, probs[s]);
  }
  double z = 0.0;
  for (std::size_t s = 0; s < count; ++s) {
    probs[s] = std::exp(probs[s] - m);
    z += probs[s];
  }
  for (std::size_t s = 0; s < count; ++s) probs[s] /= z;
  for (std::size_t j = 0; j < dh; ++j) {
    double acc = 0.0;
    for (std::size_t s = 0; s < count; ++s) acc += probs[s] * values[s * stride + j];
    out[j] = acc;
  }
}

}  // namespace tinyrl::kernels
