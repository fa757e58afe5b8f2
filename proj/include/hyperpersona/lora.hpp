#pragma once

#include "hyperpersona/common.hpp"
#include "hyperpersona/nn.hpp"

#include <compare>
#include <map>
#include <string>

namespace hyperpersona {

// Projections of an attention block that can carry an adapter.
enum class Projection { Query = 0, Value = 1 };

inline const char* to_string(Projection p) { return p == Projection::Query ? "query" : "value"; }

struct TargetKey {
  int layer = 0;
  Projection projection = Projection::Query;

  // Dense target index: (layer, query) -> 2*layer, (layer, value) -> 2*layer+1.
  int index() const { return 2 * layer + static_cast<int>(projection); }
  static TargetKey from_index(int j) { return {j / 2, static_cast<Projection>(j % 2)}; }
  std::string name() const { return "layers." + std::to_string(layer) + "." + to_string(projection); }

  friend auto operator<=>(const TargetKey&, const TargetKey&) = default;
};

// Low-rank update of one projection: W' = W + (alpha / r) * B * A, with A of
// shape r x d_in and B of shape d_out x r.
template <typename Scalar>
struct LoraFactors {
  Matrix<Scalar> A;
  Matrix<Scalar> B;
  double alpha = 32.0;

  Index rank() const { return A.rows(); }
  Index in_dim() const { return A.cols(); }
  Index out_dim() const { return B.rows(); }
  Scalar scale() const { return static_cast<Scalar>(alpha / static_cast<double>(rank())); }

  static LoraFactors zeros(Index rank, Index d_in, Index d_out, double alpha) {
    return {Matrix<Scalar>::Zero(rank, d_in), Matrix<Scalar>::Zero(d_out, rank), alpha};
  }

  void check(Index d_in, Index d_out, const std::string& where) const {
    if (rank() < 1 || B.cols() != rank() || in_dim() != d_in || out_dim() != d_out) {
      throw ContractError("adapter shape mismatch at " + where + ": A is " + std::to_string(A.rows()) + "x" +
                          std::to_string(A.cols()) + ", B is " + std::to_string(B.rows()) + "x" +
                          std::to_string(B.cols()) + ", projection is " + std::to_string(d_out) + "x" +
                          std::to_string(d_in));
    }
    if (!(alpha > 0.0)) throw ContractError("adapter alpha must be positive at " + where);
  }
};

// W x + (alpha/r) B (A x); the low-rank path is two thin products.
template <typename Scalar>
Vector<Scalar> apply(const Vector<Scalar>& x, const Matrix<Scalar>& W, const LoraFactors<Scalar>& f) {
  if (x.size() != W.cols()) throw ContractError("apply: input length does not match projection");
  f.check(W.cols(), W.rows(), "apply");
  const Vector<Scalar> low = f.A * x;
  return W * x + f.scale() * (f.B * low);
}

// Row-batched low-rank path: Y += s * (X A^T) B^T. The r-wide intermediate is
// returned through `hidden` for the backward pass.
template <typename Scalar>
void add_low_rank(const Matrix<Scalar>& X, const LoraFactors<Scalar>& f, Matrix<Scalar>& Y, Matrix<Scalar>& hidden) {
  hidden.noalias() = X * f.A.transpose();
  Y.noalias() += f.scale() * (hidden * f.B.transpose());
}

// Backward of add_low_rank. Accumulates into dX (when non-null) and into the
// factor gradients.
template <typename Scalar>
void add_low_rank_backward(const Matrix<Scalar>& X, const LoraFactors<Scalar>& f, const Matrix<Scalar>& hidden,
                           const Matrix<Scalar>& dY, Matrix<Scalar>* dX, LoraFactors<Scalar>& grad) {
  const Scalar s = f.scale();
  grad.B.noalias() += s * (dY.transpose() * hidden);
  const Matrix<Scalar> dhidden = s * (dY * f.B);
  grad.A.noalias() += dhidden.transpose() * X;
  if (dX) dX->noalias() += dhidden * f.A;
}

// Adapters keyed by target. All entries share rank and alpha.
template <typename Scalar>
class AdapterSet {
 public:
  void set(TargetKey key, LoraFactors<Scalar> factors) {
    if (!entries_.empty()) {
      const auto& first = entries_.begin()->second;
      if (first.rank() != factors.rank() || first.alpha != factors.alpha) {
        throw ContractError("adapter set entries must share rank and alpha");
      }
    }
    entries_.insert_or_assign(key, std::move(factors));
  }

  const LoraFactors<Scalar>* find(TargetKey key) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }
  LoraFactors<Scalar>* find(TargetKey key) {
    const auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  // Same keys and shapes, all zeros; used as a gradient accumulator.
  AdapterSet zeros_like() const {
    AdapterSet out;
    for (const auto& [key, f] : entries_) {
      out.entries_.emplace(key, LoraFactors<Scalar>::zeros(f.rank(), f.in_dim(), f.out_dim(), f.alpha));
    }
    return out;
  }

  void set_zero() {
    for (auto& [key, f] : entries_) {
      f.A.setZero();
      f.B.setZero();
    }
  }

  void scale_by(Scalar c) {
    for (auto& [key, f] : entries_) {
      f.A *= c;
      f.B *= c;
    }
  }

  std::vector<ParamView<Scalar>> parameters(const std::string& group = "adapters") {
    std::vector<ParamView<Scalar>> out;
    for (auto& [key, f] : entries_) {
      out.push_back(view_of(key.name() + ".lora_A", group, false, f.A));
      out.push_back(view_of(key.name() + ".lora_B", group, false, f.B));
    }
    return out;
  }

 private:
  std::map<TargetKey, LoraFactors<Scalar>> entries_;
};

}  // namespace hyperpersona
