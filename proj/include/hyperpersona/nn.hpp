#pragma once

// Row-wise building blocks shared by the encoder, the hypernetwork and the
// baselines. Activations are stored with one token per row.

#include "hyperpersona/common.hpp"

#include <unsupported/Eigen/SpecialFunctions>

#include <cmath>
#include <numbers>
#include <string>
#include <type_traits>
#include <vector>

namespace hyperpersona {

// Non-owning view of one parameter tensor. Storage is Eigen's column-major
// buffer; rows/cols describe the logical shape.
template <typename Scalar>
struct ParamView {
  std::string name;
  std::string group;
  bool frozen = false;
  Scalar* data = nullptr;
  Index rows = 0;
  Index cols = 0;

  Index size() const { return rows * cols; }
  Eigen::Map<Matrix<Scalar>> matrix() const { return {data, rows, cols}; }
};

template <typename Scalar>
ParamView<Scalar> view_of(std::string name, std::string group, bool frozen, Matrix<Scalar>& m) {
  return {std::move(name), std::move(group), frozen, m.data(), m.rows(), m.cols()};
}

template <typename Scalar>
ParamView<Scalar> view_of(std::string name, std::string group, bool frozen, Vector<Scalar>& v) {
  return {std::move(name), std::move(group), frozen, v.data(), v.rows(), 1};
}

// FNV-1a over the raw bytes of every view; used to verify that frozen
// tensors stay bit-identical.
template <typename Scalar>
std::uint64_t checksum(const std::vector<ParamView<Scalar>>& views) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& v : views) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(v.data);
    for (std::size_t k = 0; k < static_cast<std::size_t>(v.size()) * sizeof(Scalar); ++k) {
      h ^= bytes[k];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> normalized;
  Vector<Scalar> inv_std;
};

inline constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
void layer_norm_forward(const Matrix<Scalar>& x, const Vector<Scalar>& gain, const Vector<Scalar>& bias,
                        Matrix<Scalar>& y, LayerNormCache<Scalar>& cache) {
  const Index n = x.cols();
  const Vector<Scalar> mean = x.rowwise().mean();
  cache.normalized = x.colwise() - mean;
  const Vector<Scalar> var = cache.normalized.array().square().rowwise().sum() / static_cast<Scalar>(n);
  cache.inv_std = (var.array() + static_cast<Scalar>(kLayerNormEps)).rsqrt();
  cache.normalized = cache.inv_std.asDiagonal() * cache.normalized;
  y = (cache.normalized * gain.asDiagonal()).rowwise() + bias.transpose();
}

// dx is overwritten; gain/bias gradients are accumulated when non-null.
template <typename Scalar>
void layer_norm_backward(const Matrix<Scalar>& dy, const Vector<Scalar>& gain, const LayerNormCache<Scalar>& cache,
                         Matrix<Scalar>& dx, Vector<Scalar>* dgain, Vector<Scalar>* dbias) {
  if (dgain) *dgain += (dy.array() * cache.normalized.array()).colwise().sum().transpose().matrix();
  if (dbias) *dbias += dy.colwise().sum().transpose();
  const Matrix<Scalar> dnorm = dy * gain.asDiagonal();
  const Scalar n = static_cast<Scalar>(dy.cols());
  const Vector<Scalar> mean_d = dnorm.rowwise().sum() / n;
  const Vector<Scalar> mean_dx = (dnorm.array() * cache.normalized.array()).rowwise().sum().matrix() / n;
  dx = dnorm.colwise() - mean_d;
  dx -= cache.normalized.cwiseProduct(mean_dx.replicate(1, dy.cols()));
  dx = cache.inv_std.asDiagonal() * dx;
}

// Exact (erf) GeLU and its derivative.
template <typename Scalar>
  requires std::is_floating_point_v<Scalar>
Scalar gelu(Scalar x) {
  return static_cast<Scalar>(0.5) * x * (static_cast<Scalar>(1) + std::erf(x * static_cast<Scalar>(std::numbers::sqrt2 / 2)));
}

template <typename Scalar>
  requires std::is_floating_point_v<Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar cdf = static_cast<Scalar>(0.5) * (static_cast<Scalar>(1) + std::erf(x * static_cast<Scalar>(std::numbers::sqrt2 / 2)));
  const Scalar pdf = std::exp(static_cast<Scalar>(-0.5) * x * x) * static_cast<Scalar>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

// Packet erf/exp; the scalar versions above are the reference.
template <typename Derived>
auto gelu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const auto a = x.derived().array();
  const Scalar c = static_cast<Scalar>(std::numbers::sqrt2 / 2);
  return (static_cast<Scalar>(0.5) * a * ((a * c).erf() + static_cast<Scalar>(1))).matrix();
}

template <typename Derived>
auto gelu_grad(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const auto a = x.derived().array();
  const Scalar c = static_cast<Scalar>(std::numbers::sqrt2 / 2);
  const Scalar k = static_cast<Scalar>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return (static_cast<Scalar>(0.5) * ((a * c).erf() + static_cast<Scalar>(1)) +
          a * k * (a.square() * static_cast<Scalar>(-0.5)).exp())
      .matrix();
}

template <typename Scalar>
void softmax_rows(Matrix<Scalar>& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    const Scalar peak = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - peak).exp();
    m.row(r) /= m.row(r).sum();
  }
}

template <typename Scalar>
Vector<Scalar> softmax(const Vector<Scalar>& logits) {
  const Scalar peak = logits.maxCoeff();
  Vector<Scalar> p = (logits.array() - peak).exp();
  return p / p.sum();
}

// Row-wise softmax backward: probabilities and upstream gradient in, logit gradient out.
template <typename Scalar>
Matrix<Scalar> softmax_rows_backward(const Matrix<Scalar>& probs, const Matrix<Scalar>& dprobs) {
  const Vector<Scalar> dot = (probs.array() * dprobs.array()).rowwise().sum();
  return probs.cwiseProduct(dprobs.colwise() - dot);
}

// Cross-entropy of one example and its gradient w.r.t. the logits.
template <typename Scalar>
Scalar cross_entropy(const Vector<Scalar>& logits, int label, Vector<Scalar>* dlogits) {
  const Scalar peak = logits.maxCoeff();
  const Scalar log_sum = peak + std::log((logits.array() - peak).exp().sum());
  if (dlogits) {
    *dlogits = (logits.array() - log_sum).exp();
    (*dlogits)(label) -= static_cast<Scalar>(1);
  }
  return log_sum - logits(label);
}

template <typename Scalar>
int argmax(const Vector<Scalar>& v) {
  Index best = 0;
  v.maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace hyperpersona
