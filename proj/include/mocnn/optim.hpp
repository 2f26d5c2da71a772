#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mocnn/tensor.hpp"

namespace mocnn {

struct LrSchedule {
  double lr_start = 1e-3;
  double lr_end = 1e-6;
  std::size_t total_epochs = 1;
};

/// Exponential interpolation from lr_start at epoch 0 to lr_end at the last epoch.
inline double lr_at(const LrSchedule& schedule, std::size_t epoch) {
  if (!(schedule.lr_start >= schedule.lr_end && schedule.lr_end > 0)) {
    throw Error(Errc::InvalidArgument, "schedule requires lr_start >= lr_end > 0");
  }
  if (epoch >= schedule.total_epochs) {
    throw Error(Errc::EpochOutOfRange, "epoch " + std::to_string(epoch) + " of " +
                                           std::to_string(schedule.total_epochs));
  }
  if (schedule.total_epochs == 1) return schedule.lr_start;
  if (epoch == 0) return schedule.lr_start;
  if (epoch + 1 == schedule.total_epochs) return schedule.lr_end;
  const double t = double(epoch) / double(schedule.total_epochs - 1);
  return schedule.lr_start * std::pow(schedule.lr_end / schedule.lr_start, t);
}

/// SGD with heavy-ball momentum: v = momentum * v + g; w -= lr * v.
/// Frozen parameters are skipped entirely, so their bytes never change.
template <typename Scalar>
class SgdMomentum {
 public:
  explicit SgdMomentum(Scalar momentum = Scalar(0.9)) : momentum_(momentum) {}

  void step(std::span<Parameter<Scalar>*> params, Scalar lr) {
    if (velocity_.size() != params.size()) {
      velocity_.clear();
      for (const auto* p : params) velocity_.emplace_back(p->value.shape());
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<Scalar>& p = *params[i];
      if (!p.trainable) continue;
      Tensor<Scalar>& v = velocity_[i];
      if (v.shape() != p.value.shape()) v = Tensor<Scalar>(p.value.shape());
      for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = momentum_ * v[k] + p.grad[k];
        p.value[k] -= lr * v[k];
      }
    }
  }

  void reset() { velocity_.clear(); }

 private:
  Scalar momentum_;
  std::vector<Tensor<Scalar>> velocity_;
};

/// Adam with bias correction. Frozen parameters are skipped like in SgdMomentum.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(Scalar beta1 = Scalar(0.9), Scalar beta2 = Scalar(0.999), Scalar eps = Scalar(1e-8))
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<Parameter<Scalar>*> params, Scalar lr) {
    if (m_.size() != params.size()) {
      m_.clear();
      v_.clear();
      for (const auto* p : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
      }
    }
    ++t_;
    const Scalar c1 = Scalar(1) - std::pow(beta1_, Scalar(t_));
    const Scalar c2 = Scalar(1) - std::pow(beta2_, Scalar(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<Scalar>& p = *params[i];
      if (!p.trainable) continue;
      if (m_[i].shape() != p.value.shape()) {
        m_[i] = Tensor<Scalar>(p.value.shape());
        v_[i] = Tensor<Scalar>(p.value.shape());
      }
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const Scalar g = p.grad[k];
        m_[i][k] = beta1_ * m_[i][k] + (Scalar(1) - beta1_) * g;
        v_[i][k] = beta2_ * v_[i][k] + (Scalar(1) - beta2_) * g * g;
        p.value[k] -= lr * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  Scalar beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor<Scalar>> m_, v_;
};

template <typename Scalar>
void sgd_step(std::span<Parameter<Scalar>*> params, Scalar lr, SgdMomentum<Scalar>& optimizer) {
  optimizer.step(params, lr);
}

}  // namespace mocnn
