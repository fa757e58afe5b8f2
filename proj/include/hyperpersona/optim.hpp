#pragma once

#include "hyperpersona/nn.hpp"

#include <cmath>
#include <vector>

namespace hyperpersona {

struct AdamSettings {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Plain Adam with bias correction. Parameters flagged frozen are never
// touched, so their bytes stay identical across any number of steps.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamSettings settings = {}) : settings_(settings) {}

  const AdamSettings& settings() const { return settings_; }
  long steps() const { return t_; }

  void step(const std::vector<ParamView<Scalar>>& params, const std::vector<ParamView<Scalar>>& grads) {
    if (params.size() != grads.size()) throw ContractError("Adam: parameter/gradient lists differ in length");
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(Vector<Scalar>::Zero(p.size()));
        v_.push_back(Vector<Scalar>::Zero(p.size()));
      }
    }
    if (m_.size() != params.size()) throw ContractError("Adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(settings_.beta1);
    const auto b2 = static_cast<Scalar>(settings_.beta2);
    const auto step_size = static_cast<Scalar>(settings_.learning_rate / c1);
    const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
    const auto eps = static_cast<Scalar>(settings_.eps);
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& p = params[k];
      if (p.frozen) continue;
      if (grads[k].size() != p.size()) throw ContractError("Adam: gradient shape mismatch for " + p.name);
      if (m_[k].size() != p.size()) {
        // The tensor grew (e.g. a new annotator row); keep moments of the old prefix.
        const Index old = m_[k].size();
        m_[k].conservativeResize(p.size());
        v_[k].conservativeResize(p.size());
        m_[k].tail(p.size() - old).setZero();
        v_[k].tail(p.size() - old).setZero();
      }
      Eigen::Map<Vector<Scalar>> w(p.data, p.size());
      Eigen::Map<const Vector<Scalar>> g(grads[k].data, p.size());
      m_[k] = b1 * m_[k] + (Scalar(1) - b1) * g;
      v_[k] = b2 * v_[k] + (Scalar(1) - b2) * g.cwiseAbs2();
      w.array() -= step_size * m_[k].array() / ((v_[k].array() * inv_c2).sqrt() + eps);
    }
  }

 private:
  AdamSettings settings_;
  std::vector<Vector<Scalar>> m_;
  std::vector<Vector<Scalar>> v_;
  long t_ = 0;
};

template <typename Scalar>
void zero_grads(const std::vector<ParamView<Scalar>>& grads) {
  for (const auto& g : grads) Eigen::Map<Vector<Scalar>>(g.data, g.size()).setZero();
}

template <typename Scalar>
void scale_grads(const std::vector<ParamView<Scalar>>& grads, Scalar c) {
  for (const auto& g : grads) Eigen::Map<Vector<Scalar>>(g.data, g.size()) *= c;
}

}  // namespace hyperpersona
