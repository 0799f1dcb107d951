#pragma once

#include <string>
#include <vector>

#include "segattn/nn_ops.hpp"

namespace segattn {

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
  bool trainable = true;
};

template <typename S>
struct NamedState {
  std::string name;
  Array<S>* array = nullptr;
};

// Everything a checkpoint or optimizer needs to reach: trainable parameters
// plus persistent non-trainable state (BN running statistics).
template <typename S>
struct ParamCollection {
  std::vector<NamedParam<S>> params;
  std::vector<NamedState<S>> state;

  void add(const std::string& name, const Tensor<S>& t, bool trainable = true) {
    params.push_back({name, t, trainable});
  }
  void add_state(const std::string& name, Array<S>* a) {
    state.push_back({name, a});
  }
};

namespace init {

// Convolutions: zero-mean normal, std 0.02.
template <typename S>
Array<S> conv_weight(Shape shape, const std::string& name, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init/" + name));
  return Array<S>::random_normal(std::move(shape), rng, S(0.02));
}

// Dense and recurrent weights: uniform in +-1/sqrt(fan_in).
template <typename S>
Array<S> dense_weight(Shape shape, Index fan_in, const std::string& name,
                      std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init/" + name));
  const S bound = S(1) / std::sqrt(static_cast<S>(fan_in));
  return Array<S>::random_uniform(std::move(shape), rng, -bound, bound);
}

}  // namespace init

template <typename S>
struct Conv2dLayer {
  Tensor<S> w, b;
  Index stride = 1, pad = 1;

  Conv2dLayer() = default;
  Conv2dLayer(const std::string& name, Index out_c, Index in_c, Index k,
              Index stride_, Index pad_, std::uint64_t seed)
      : stride(stride_), pad(pad_) {
    w = Tensor<S>::leaf(init::conv_weight<S>({out_c, in_c, k, k}, name + "/w", seed), true);
    b = Tensor<S>::leaf(Array<S>({out_c}), true);
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    return conv2d(x, w, b, stride, pad);
  }

  void collect(ParamCollection<S>& out, const std::string& name,
               bool trainable = true) const {
    out.add(name + "/w", w, trainable);
    out.add(name + "/b", b, trainable);
  }
};

template <typename S>
struct LinearLayer {
  Tensor<S> w, b;  // w is (out x in)

  LinearLayer() = default;
  LinearLayer(const std::string& name, Index out_d, Index in_d,
              std::uint64_t seed, bool with_bias = true) {
    w = Tensor<S>::leaf(init::dense_weight<S>({out_d, in_d}, in_d, name + "/w", seed), true);
    if (with_bias) b = Tensor<S>::leaf(Array<S>({out_d}), true);
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return linear(x, w, b); }

  void collect(ParamCollection<S>& out, const std::string& name) const {
    out.add(name + "/w", w);
    if (b.defined()) out.add(name + "/b", b);
  }
};

}  // namespace segattn
