#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pmim/autodiff.hpp"
#include "pmim/errors.hpp"
#include "pmim/mat.hpp"

namespace pmim {

// Linear warmup to peak, then cosine decay reaching min_lr exactly at the
// last step (steps index 0..total_steps-1). Continuous at the boundary.
inline double lr_schedule(double step, double total_steps, double warmup_steps,
                          double peak_lr, double min_lr) {
  PMIM_CHECK(step >= 0 && total_steps >= 1, "lr_schedule: bad step/total");
  if (warmup_steps > 0 && step < warmup_steps) return peak_lr * step / warmup_steps;
  const double span = total_steps - 1 - warmup_steps;
  double t = span > 0 ? (step - warmup_steps) / span : 1.0;
  t = std::min(1.0, std::max(0.0, t));
  return min_lr + 0.5 * (peak_lr - min_lr) * (1.0 + std::cos(M_PI * t));
}

template <class S>
double gradient_norm(const ParamStore<S>& params) {
  double sq = 0;
  for (const auto& p : params) sq += p.grad.template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

// Scales all gradients so the global l2 norm is at most max_norm. Returns
// the pre-clip norm. Bitwise no-op when already within bounds.
template <class S>
double clip_gradients(ParamStore<S>& params, double max_norm) {
  const double norm = gradient_norm(params);
  if (max_norm > 0 && std::isfinite(max_norm) && norm > max_norm) {
    const S scale = static_cast<S>(max_norm / norm);
    for (auto& p : params) p.grad *= scale;
  }
  return norm;
}

// Adam with decoupled weight decay. Decay applies to weight matrices
// (names ending ".w") only; norms, biases and embedding tables are exempt.
template <class S>
class AdamW {
 public:
  AdamW(const ParamStore<S>& params, double beta1, double beta2, double eps,
        double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
    for (const auto& p : params) {
      m_.push_back(Mat<S>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Mat<S>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  void step(ParamStore<S>& params, double lr) {
    PMIM_CHECK(params.size() == m_.size(), "optimizer/param store size mismatch");
    ++t_;
    const S bc1 = static_cast<S>(1.0 - std::pow(beta1_, t_));
    const S bc2 = static_cast<S>(1.0 - std::pow(beta2_, t_));
    const S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
    const S eps = static_cast<S>(eps_), slr = static_cast<S>(lr);
    size_t i = 0;
    for (auto& p : params) {
      if (weight_decay_ > 0 && decays(p.name))
        p.value *= (S(1) - slr * static_cast<S>(weight_decay_));
      m_[i] = b1 * m_[i] + (S(1) - b1) * p.grad;
      v_[i] = b2 * v_[i] + (S(1) - b2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -=
          slr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps);
      ++i;
    }
  }

  int64_t steps_taken() const { return t_; }
  void set_steps_taken(int64_t t) { t_ = t; }
  size_t size() const { return m_.size(); }
  Mat<S>& first_moment(size_t i) { return m_[i]; }
  Mat<S>& second_moment(size_t i) { return v_[i]; }
  const Mat<S>& first_moment(size_t i) const { return m_[i]; }
  const Mat<S>& second_moment(size_t i) const { return v_[i]; }

  static bool decays(const std::string& name) {
    return name.size() >= 2 && name.compare(name.size() - 2, 2, ".w") == 0;
  }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
  std::vector<Mat<S>> m_, v_;
};

}  // namespace pmim
