#pragma once

#include <algorithm>
#include <cstring>
#include <vector>

#include "segattn/ops.hpp"

namespace segattn {

namespace detail {

// Patch matrix for one sample: rows (c,ki,kj), cols (oh,ow). Out-of-bounds
// taps are zero.
template <typename S>
void im2col(const S* x, Index c_in, Index h, Index w, Index kh, Index kw,
            Index stride, Index pad, Index oh, Index ow, S* col) {
  for (Index c = 0; c < c_in; ++c) {
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj) {
        S* dst = col + ((c * kh + ki) * kw + kj) * oh * ow;
        const S* src = x + c * h * w;
        for (Index i = 0; i < oh; ++i) {
          const Index hi = i * stride - pad + ki;
          S* row = dst + i * ow;
          if (hi < 0 || hi >= h) {
            std::fill_n(row, ow, S(0));
            continue;
          }
          if (stride == 1) {
            const Index wj0 = -pad + kj;
            const Index j0 = std::min<Index>(std::max<Index>(0, -wj0), ow);
            const Index j1 = std::min<Index>(ow, w - wj0);
            if (j0 > 0) std::fill_n(row, j0, S(0));
            if (j1 > j0)
              std::memcpy(row + j0, src + hi * w + wj0 + j0,
                          static_cast<size_t>(j1 - j0) * sizeof(S));
            if (j1 < ow) std::fill_n(row + std::max<Index>(j1, j0), ow - std::max<Index>(j1, j0), S(0));
          } else {
            for (Index j = 0; j < ow; ++j) {
              const Index wj = j * stride - pad + kj;
              row[j] = (wj < 0 || wj >= w) ? S(0) : src[hi * w + wj];
            }
          }
        }
      }
    }
  }
}

// Scatter-add of a patch-gradient matrix back into the input gradient.
template <typename S>
void col2im_add(const S* col, Index c_in, Index h, Index w, Index kh, Index kw,
                Index stride, Index pad, Index oh, Index ow, S* gx) {
  for (Index c = 0; c < c_in; ++c) {
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj) {
        const S* src = col + ((c * kh + ki) * kw + kj) * oh * ow;
        S* dst = gx + c * h * w;
        for (Index i = 0; i < oh; ++i) {
          const Index hi = i * stride - pad + ki;
          if (hi < 0 || hi >= h) continue;
          for (Index j = 0; j < ow; ++j) {
            const Index wj = j * stride - pad + kj;
            if (wj >= 0 && wj < w) dst[hi * w + wj] += src[i * ow + j];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution; x {N,C,H,W}, weight {O,C,kh,kw}, optional bias {O}.
template <typename S>
Tensor<S> conv2d(Tensor<S> x, Tensor<S> w, Tensor<S> bias,
                 Index stride = 1, Index pad = 0) {
  SEGATTN_CHECK(x.value().rank() == 4 && w.value().rank() == 4,
                "conv2d expects rank-4 input and weight");
  const Index n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  SEGATTN_CHECK(w.dim(1) == c_in, "conv2d channel mismatch: input " << c_in
                                      << ", weight expects " << w.dim(1));
  const Index oh = (h + 2 * pad - kh) / stride + 1;
  const Index ow = (wd + 2 * pad - kw) / stride + 1;
  SEGATTN_CHECK(oh > 0 && ow > 0, "conv2d output would be empty");
  const Index k = c_in * kh * kw;

  Array<S> y({n, c_out, oh, ow});
  auto wmat = w.value().mat(c_out, k);
#pragma omp parallel
  {
    Array<S> col({k, oh * ow});
#pragma omp for
    for (Index i = 0; i < n; ++i) {
      detail::im2col(x.value().data() + i * c_in * h * wd, c_in, h, wd, kh, kw,
                     stride, pad, oh, ow, col.data());
      typename Array<S>::MatMap yi(y.data() + i * c_out * oh * ow, c_out, oh * ow);
      yi.noalias() = wmat * col.mat();
      if (bias.defined())
        yi.colwise() += bias.value().vec();
    }
  }

  std::vector<Tensor<S>> inputs = {x, w};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor<S>::op(
      std::move(y), std::move(inputs),
      [x, w, bias, n, c_in, h, wd, c_out, kh, kw, stride, pad, oh, ow,
       k](const Array<S>& g) mutable {
        Array<S> gx, gw_partial;
        const bool need_gx = x.requires_grad();
        if (need_gx) gx = Array<S>(x.value().shape());
        const bool need_gw = w.requires_grad();
        if (need_gw) gw_partial = Array<S>({n, c_out, k});
        auto wmat = w.value().mat(c_out, k);
#pragma omp parallel
        {
          Array<S> col({k, oh * ow});
          Array<S> gcol({k, oh * ow});
#pragma omp for
          for (Index i = 0; i < n; ++i) {
            typename Array<S>::ConstMatMap gi(g.data() + i * c_out * oh * ow,
                                              c_out, oh * ow);
            if (need_gw)
              detail::im2col(x.value().data() + i * c_in * h * wd, c_in, h, wd,
                             kh, kw, stride, pad, oh, ow, col.data());
            if (need_gw) {
              typename Array<S>::MatMap gwi(gw_partial.data() + i * c_out * k,
                                            c_out, k);
              gwi.noalias() = gi * col.mat().transpose();
            }
            if (need_gx) {
              gcol.mat().noalias() = wmat.transpose() * gi;
              detail::col2im_add(gcol.data(), c_in, h, wd, kh, kw, stride, pad,
                                 oh, ow, gx.data() + i * c_in * h * wd);
            }
          }
        }
        if (need_gx) x.accumulate_grad(gx);
        if (need_gw) {
          Array<S> gw(w.value().shape());
          for (Index i = 0; i < n; ++i)
            gw.vec() += typename Array<S>::ConstVecMap(
                gw_partial.data() + i * c_out * k, c_out * k);
          w.accumulate_grad(gw);
        }
        if (bias.defined() && bias.requires_grad()) {
          Array<S> gb({c_out});
          for (Index i = 0; i < n; ++i) {
            typename Array<S>::ConstMatMap gi(g.data() + i * c_out * oh * ow,
                                              c_out, oh * ow);
            gb.vec() += gi.rowwise().sum();
          }
          bias.accumulate_grad(gb);
        }
      });
}

// Nearest-neighbor x2 upsampling of {N,C,H,W}.
template <typename S>
Tensor<S> upsample_nearest2(Tensor<S> x) {
  SEGATTN_CHECK(x.value().rank() == 4, "upsample_nearest2 expects rank-4");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Array<S> y({n, c, 2 * h, 2 * w});
  const Array<S>& v = x.value();
  for (Index p = 0; p < n * c; ++p) {
    const S* src = v.data() + p * h * w;
    S* dst = y.data() + p * 4 * h * w;
    for (Index i = 0; i < 2 * h; ++i)
      for (Index j = 0; j < 2 * w; ++j)
        dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
  }
  return Tensor<S>::op(std::move(y), {x},
                       [x, n, c, h, w](const Array<S>& g) mutable {
                         Array<S> gx(x.value().shape());
                         for (Index p = 0; p < n * c; ++p) {
                           const S* src = g.data() + p * 4 * h * w;
                           S* dst = gx.data() + p * h * w;
                           for (Index i = 0; i < 2 * h; ++i)
                             for (Index j = 0; j < 2 * w; ++j)
                               dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
                         }
                         x.accumulate_grad(gx);
                       });
}

// Pixel-center nearest downsampling by x2: output (i,j) samples (2i+1, 2j+1).
template <typename S>
Tensor<S> downsample_nearest2(Tensor<S> x) {
  SEGATTN_CHECK(x.value().rank() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
                "downsample_nearest2 expects even spatial dims");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2) / 2, w = x.dim(3) / 2;
  Array<S> y({n, c, h, w});
  const Array<S>& v = x.value();
  for (Index p = 0; p < n * c; ++p) {
    const S* src = v.data() + p * 4 * h * w;
    S* dst = y.data() + p * h * w;
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j)
        dst[i * w + j] = src[(2 * i + 1) * 2 * w + 2 * j + 1];
  }
  return Tensor<S>::op(std::move(y), {x},
                       [x, n, c, h, w](const Array<S>& g) mutable {
                         Array<S> gx(x.value().shape());
                         for (Index p = 0; p < n * c; ++p) {
                           const S* src = g.data() + p * h * w;
                           S* dst = gx.data() + p * 4 * h * w;
                           for (Index i = 0; i < h; ++i)
                             for (Index j = 0; j < w; ++j)
                               dst[(2 * i + 1) * 2 * w + 2 * j + 1] +=
                                   src[i * w + j];
                         }
                         x.accumulate_grad(gx);
                       });
}

// Global average pool {N,C,H,W} -> {N,C}.
template <typename S>
Tensor<S> global_avg_pool(Tensor<S> x) {
  SEGATTN_CHECK(x.value().rank() == 4, "global_avg_pool expects rank-4");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const S inv = S(1) / static_cast<S>(hw);
  Array<S> y({n, c});
  for (Index p = 0; p < n * c; ++p) {
    typename Array<S>::ConstVecMap src(x.value().data() + p * hw, hw);
    y[p] = src.sum() * inv;
  }
  return Tensor<S>::op(std::move(y), {x},
                       [x, n, c, hw, inv](const Array<S>& g) mutable {
                         Array<S> gx(x.value().shape());
                         for (Index p = 0; p < n * c; ++p)
                           std::fill_n(gx.data() + p * hw, hw, g[p] * inv);
                         x.accumulate_grad(gx);
                       });
}

// Row gather from an embedding table {V,D} by integer ids.
template <typename S>
Tensor<S> embedding_lookup(Tensor<S> table, std::vector<Index> ids) {
  SEGATTN_CHECK(table.value().rank() == 2, "embedding table must be rank-2");
  const Index v = table.dim(0), d = table.dim(1);
  const Index n = static_cast<Index>(ids.size());
  for (Index id : ids)
    SEGATTN_CHECK(id >= 0 && id < v, "token id " << id << " outside vocabulary");
  Array<S> y({n, d});
  for (Index i = 0; i < n; ++i)
    std::copy_n(table.value().data() + ids[static_cast<size_t>(i)] * d, d,
                y.data() + i * d);
  return Tensor<S>::op(std::move(y), {table},
                       [table, ids = std::move(ids), d](const Array<S>& g) mutable {
                         Array<S> gt(table.value().shape());
                         for (size_t i = 0; i < ids.size(); ++i) {
                           typename Array<S>::VecMap row(gt.data() + ids[i] * d, d);
                           typename Array<S>::ConstVecMap gi(
                               g.data() + static_cast<Index>(i) * d, d);
                           row += gi;
                         }
                         table.accumulate_grad(gt);
                       });
}

// ---------------------------------------------------------------------------
// Batch normalization (parameter-free; scale/shift live elsewhere)
// ---------------------------------------------------------------------------

enum class BnMode { kTrain, kEval, kIdentity };

template <typename S>
struct BnState {
  Array<S> running_mean;
  Array<S> running_var;

  explicit BnState(Index channels = 0) {
    if (channels > 0) {
      running_mean = Array<S>({channels});
      running_var = Array<S>({channels}, S(1));
    }
  }
};

// Per-channel normalization of {N,C,H,W} without learned affine. Train mode
// normalizes by batch statistics (biased variance) and updates the running
// estimates (unbiased variance) with the given momentum.
template <typename S>
Tensor<S> batch_norm(Tensor<S> x, BnState<S>& state, BnMode mode,
                     S eps = S(1e-5), S momentum = S(0.1)) {
  SEGATTN_CHECK(x.value().rank() == 4, "batch_norm expects rank-4");
  if (mode == BnMode::kIdentity) {
    Array<S> y = x.value();
    return Tensor<S>::op(std::move(y), {x}, [x](const Array<S>& g) mutable {
      x.accumulate_grad(g);
    });
  }
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const Index cnt = n * hw;
  SEGATTN_CHECK(state.running_mean.size() == c, "batch_norm state channels");

  Array<S> mean({c}), invstd({c});
  if (mode == BnMode::kTrain) {
    SEGATTN_CHECK(cnt >= 2, "batch_norm train mode needs at least 2 values per channel");
    for (Index ch = 0; ch < c; ++ch) {
      S m = S(0);
      for (Index i = 0; i < n; ++i) {
        typename Array<S>::ConstVecMap v(x.value().data() + (i * c + ch) * hw, hw);
        m += v.sum();
      }
      m /= static_cast<S>(cnt);
      S var = S(0);
      for (Index i = 0; i < n; ++i) {
        typename Array<S>::ConstVecMap v(x.value().data() + (i * c + ch) * hw, hw);
        var += (v.array() - m).square().sum();
      }
      const S biased = var / static_cast<S>(cnt);
      const S unbiased = var / static_cast<S>(cnt - 1);
      mean[ch] = m;
      invstd[ch] = S(1) / std::sqrt(biased + eps);
      state.running_mean[ch] =
          (S(1) - momentum) * state.running_mean[ch] + momentum * m;
      state.running_var[ch] =
          (S(1) - momentum) * state.running_var[ch] + momentum * unbiased;
    }
  } else {
    for (Index ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      invstd[ch] = S(1) / std::sqrt(state.running_var[ch] + eps);
    }
  }

  Array<S> y(x.value().shape());
  for (Index i = 0; i < n; ++i)
    for (Index ch = 0; ch < c; ++ch) {
      typename Array<S>::ConstVecMap v(x.value().data() + (i * c + ch) * hw, hw);
      typename Array<S>::VecMap out(y.data() + (i * c + ch) * hw, hw);
      out = (v.array() - mean[ch]) * invstd[ch];
    }

  Array<S> xhat = y;  // normalized values, needed for the train backward
  const bool train = mode == BnMode::kTrain;
  return Tensor<S>::op(
      std::move(y), {x},
      [x, xhat = std::move(xhat), invstd = std::move(invstd), n, c, hw, cnt,
       train](const Array<S>& g) mutable {
        Array<S> gx(x.value().shape());
        if (!train) {
          for (Index i = 0; i < n; ++i)
            for (Index ch = 0; ch < c; ++ch) {
              typename Array<S>::ConstVecMap gi(g.data() + (i * c + ch) * hw, hw);
              typename Array<S>::VecMap out(gx.data() + (i * c + ch) * hw, hw);
              out = gi * invstd[ch];
            }
        } else {
          // dx = invstd * (g - mean(g) - xhat * mean(g*xhat)), per channel.
          for (Index ch = 0; ch < c; ++ch) {
            S gsum = S(0), gxsum = S(0);
            for (Index i = 0; i < n; ++i) {
              typename Array<S>::ConstVecMap gi(g.data() + (i * c + ch) * hw, hw);
              typename Array<S>::ConstVecMap xh(xhat.data() + (i * c + ch) * hw, hw);
              gsum += gi.sum();
              gxsum += gi.dot(xh);
            }
            const S gmean = gsum / static_cast<S>(cnt);
            const S gxmean = gxsum / static_cast<S>(cnt);
            for (Index i = 0; i < n; ++i) {
              typename Array<S>::ConstVecMap gi(g.data() + (i * c + ch) * hw, hw);
              typename Array<S>::ConstVecMap xh(xhat.data() + (i * c + ch) * hw, hw);
              typename Array<S>::VecMap out(gx.data() + (i * c + ch) * hw, hw);
              out = invstd[ch] * (gi.array() - gmean - xh.array() * gxmean);
            }
          }
        }
        x.accumulate_grad(gx);
      });
}

}  // namespace segattn
