#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "param_store.hpp"
#include "tensor.hpp"

namespace rmn {

// lr0 / factor^floor(epoch / interval); epoch is zero-based. A factor of 1
// keeps the rate constant.
inline real lr_schedule(std::size_t epoch, real lr0, real factor, std::size_t interval) {
  if (factor < 1.0) throw ValueError("lr schedule: decay factor must be at least 1");
  if (interval == 0) throw ValueError("lr schedule: decay interval must be positive");
  return lr0 / std::pow(factor, static_cast<real>(epoch / interval));
}

// Scales all gradients so their joint L2 norm is at most max_norm; returns
// the norm before clipping.
inline real clip_global_norm(std::vector<Tensor> params, real max_norm) {
  real sq = 0.0;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (real g : p.grad()) sq += g * g;
  }
  const real norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const real s = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& v : p.grad_mut()) v *= s;
    }
  }
  return norm;
}

inline void scale_grads(std::vector<Tensor> params, real s) {
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (auto& v : p.grad_mut()) v *= s;
  }
}

// Standard Adam with bias correction. Gradients must be populated for every
// tracked parameter; they are zeroed after the update.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, real beta1 = 0.9, real beta2 = 0.999, real eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].size(), 0.0);
      v_[i].assign(params_[i].size(), 0.0);
    }
  }

  std::size_t steps() const { return step_; }

  void step(real lr) {
    for (auto& p : params_)
      if (!p.has_grad())
        throw ValueError("adam: a tracked parameter has no gradient; run backward first");
    ++step_;
    const real bc1 = 1.0 - std::pow(beta1_, static_cast<real>(step_));
    const real bc2 = 1.0 - std::pow(beta2_, static_cast<real>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& data = params_[i].data();
      const auto& grad = params_[i].grad();
      for (std::size_t j = 0; j < data.size(); ++j) {
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * grad[j];
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * grad[j] * grad[j];
        const real mhat = m_[i][j] / bc1;
        const real vhat = v_[i][j] / bc2;
        data[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
      params_[i].zero_grad();
    }
  }

 private:
  std::vector<Tensor> params_;
  real beta1_, beta2_, eps_;
  std::vector<std::vector<real>> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace rmn
