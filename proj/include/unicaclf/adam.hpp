#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace unicaclf {

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps, std::size_t size)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    state_.m.assign(size, 0.0);
    state_.v.assign(size, 0.0);
  }

  void update(std::span<double> params, std::span<const double> grad) {
    if (params.size() != state_.m.size() || grad.size() != params.size())
      throw std::invalid_argument("adam: size mismatch");
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double c1 = 1.0 - std::pow(beta1_, t);
    const double c2 = 1.0 - std::pow(beta2_, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      state_.m[i] = beta1_ * state_.m[i] + (1.0 - beta1_) * grad[i];
      state_.v[i] = beta2_ * state_.v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      const double m_hat = state_.m[i] / c1;
      const double v_hat = state_.v[i] / c2;
      params[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }

  const AdamState& state() const noexcept { return state_; }
  void set_state(AdamState s) {
    if (s.m.size() != state_.m.size() || s.v.size() != state_.v.size())
      throw std::invalid_argument("adam: state size mismatch");
    state_ = std::move(s);
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  AdamState state_;
};

}  // namespace unicaclf
