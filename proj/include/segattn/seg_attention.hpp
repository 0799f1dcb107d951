#pragma once

#include "segattn/layers.hpp"

namespace segattn {

// Segmentation attention: spatially-adaptive modulation of normalized
// features by per-pixel scale and shift derived from the segmentation map,
//
//   F' = BN(F) .* gamma(S) + beta(S)
//
// where gamma and beta are 3x3 convolution heads over a shared 3x3 trunk of
// S. BN carries no learned affine; all scale/shift comes from S.
//
// In ablated mode the heads are frozen at gamma = 1, beta = 0, so the module
// degrades to plain batch normalization and the mask cannot influence F'.
template <typename S>
class SegAttention {
public:
  SegAttention() = default;

  SegAttention(const std::string& name, Index c_seg, Index hidden, Index feat_c,
               std::uint64_t seed, bool ablated = false)
      : c_seg_(c_seg), feat_c_(feat_c), ablated_(ablated), bn_(feat_c) {
    trunk_ = Conv2dLayer<S>(name + "/trunk", hidden, c_seg, 3, 1, 1, seed);
    gamma_ = Conv2dLayer<S>(name + "/gamma", feat_c, hidden, 3, 1, 1, seed);
    beta_ = Conv2dLayer<S>(name + "/beta", feat_c, hidden, 3, 1, 1, seed);
    if (ablated) {
      gamma_.w.value().set_zero();
      gamma_.b.value().fill(S(1));
      beta_.w.value().set_zero();
      beta_.b.value().set_zero();
    }
  }

  Tensor<S> forward(const Tensor<S>& f, const Tensor<S>& s, BnMode mode,
                    S eps = S(1e-5), S momentum = S(0.1)) {
    SEGATTN_CHECK(f.value().rank() == 4 && s.value().rank() == 4,
                  "seg attention expects rank-4 features and masks");
    SEGATTN_CHECK(f.dim(2) == s.dim(2) && f.dim(3) == s.dim(3),
                  "spatial mismatch: features " << f.dim(2) << "x" << f.dim(3)
                                                << ", masks " << s.dim(2) << "x"
                                                << s.dim(3));
    SEGATTN_CHECK(s.dim(1) == c_seg_, "mask channels " << s.dim(1)
                                                       << " != c_seg " << c_seg_);
    SEGATTN_CHECK(f.dim(1) == feat_c_,
                  "feature channels " << f.dim(1) << " != head width " << feat_c_);
    Tensor<S> hidden = relu(trunk_(s));
    Tensor<S> gamma = gamma_(hidden);
    Tensor<S> beta = beta_(hidden);
    Tensor<S> normalized = batch_norm(f, bn_, mode, eps, momentum);
    return add(mul(normalized, gamma), beta);
  }

  void collect(ParamCollection<S>& out, const std::string& name) {
    trunk_.collect(out, name + "/trunk", !ablated_);
    gamma_.collect(out, name + "/gamma", !ablated_);
    beta_.collect(out, name + "/beta", !ablated_);
    out.add_state(name + "/bn/running_mean", &bn_.running_mean);
    out.add_state(name + "/bn/running_var", &bn_.running_var);
  }

  bool ablated() const { return ablated_; }
  Conv2dLayer<S>& trunk() { return trunk_; }
  Conv2dLayer<S>& gamma_head() { return gamma_; }
  Conv2dLayer<S>& beta_head() { return beta_; }
  BnState<S>& bn_state() { return bn_; }

private:
  Index c_seg_ = 0, feat_c_ = 0;
  bool ablated_ = false;
  Conv2dLayer<S> trunk_, gamma_, beta_;
  BnState<S> bn_;
};

}  // namespace segattn
