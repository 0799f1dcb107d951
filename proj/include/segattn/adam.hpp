#pragma once

#include <string>
#include <vector>

#include "segattn/layers.hpp"

namespace segattn {

// ADAM with bias correction. beta2/epsilon follow the conventional defaults;
// beta1 and the learning rate come from the config.
template <typename S>
class AdamOptimizer {
public:
  AdamOptimizer() = default;

  AdamOptimizer(std::vector<NamedParam<S>> params, S lr, S beta1,
                S beta2 = S(0.999), S eps = S(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params) {
      if (!p.trainable) continue;
      params_.push_back(p);
      m_.emplace_back(p.tensor.value().shape());
      v_.emplace_back(p.tensor.value().shape());
    }
  }

  // One update from the accumulated gradients; params without a gradient are
  // treated as having zero gradient.
  void step() {
    ++t_;
    const S c1 = S(1) - std::pow(beta1_, static_cast<S>(t_));
    const S c2 = S(1) - std::pow(beta2_, static_cast<S>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Array<S>& value = params_[i].tensor.value();
      Array<S>& m = m_[i];
      Array<S>& v = v_[i];
      const bool has_grad = params_[i].tensor.has_grad();
      const Array<S>& g = params_[i].tensor.grad();
      for (Index k = 0; k < value.size(); ++k) {
        const S gk = has_grad ? g[k] : S(0);
        m[k] = beta1_ * m[k] + (S(1) - beta1_) * gk;
        v[k] = beta2_ * v[k] + (S(1) - beta2_) * gk * gk;
        const S mhat = m[k] / c1;
        const S vhat = v[k] / c2;
        value[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.clear_grad();
  }

  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }

  // Moment buffers for checkpointing, named after their parameters.
  void collect_state(ParamCollection<S>& out, const std::string& prefix) {
    for (size_t i = 0; i < params_.size(); ++i) {
      out.add_state(prefix + "/m/" + params_[i].name, &m_[i]);
      out.add_state(prefix + "/v/" + params_[i].name, &v_[i]);
    }
    step_store_ = Array<S>({1});
    step_store_[0] = static_cast<S>(t_);
    out.add_state(prefix + "/t", &step_store_);
  }

  void sync_step_from_store() { t_ = static_cast<long>(step_store_[0]); }
  void sync_step_to_store() { step_store_[0] = static_cast<S>(t_); }

private:
  std::vector<NamedParam<S>> params_;
  std::vector<Array<S>> m_, v_;
  Array<S> step_store_;
  S lr_ = S(0), beta1_ = S(0.9), beta2_ = S(0.999), eps_ = S(1e-8);
  long t_ = 0;
};

}  // namespace segattn
