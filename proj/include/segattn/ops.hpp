#pragma once

#include <cmath>
#include <vector>

#include "segattn/autograd.hpp"

namespace segattn {

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(Tensor<S> a, Tensor<S> b) {
  SEGATTN_CHECK(a.value().same_shape(b.value()),
                "add shape mismatch " << shape_str(a.shape()) << " vs "
                                      << shape_str(b.shape()));
  Array<S> y = a.value();
  y.vec() += b.value().vec();
  return Tensor<S>::op(std::move(y), {a, b}, [a, b](const Array<S>& g) mutable {
    if (a.requires_grad()) a.accumulate_grad(g);
    if (b.requires_grad()) b.accumulate_grad(g);
  });
}

template <typename S>
Tensor<S> sub(Tensor<S> a, Tensor<S> b) {
  SEGATTN_CHECK(a.value().same_shape(b.value()), "sub shape mismatch");
  Array<S> y = a.value();
  y.vec() -= b.value().vec();
  return Tensor<S>::op(std::move(y), {a, b}, [a, b](const Array<S>& g) mutable {
    if (a.requires_grad()) a.accumulate_grad(g);
    if (b.requires_grad()) {
      Array<S> gb(g.shape());
      gb.vec() = -g.vec();
      b.accumulate_grad(gb);
    }
  });
}

template <typename S>
Tensor<S> mul(Tensor<S> a, Tensor<S> b) {
  SEGATTN_CHECK(a.value().same_shape(b.value()), "mul shape mismatch");
  Array<S> y(a.value().shape());
  y.vec() = a.value().vec().cwiseProduct(b.value().vec());
  return Tensor<S>::op(std::move(y), {a, b}, [a, b](const Array<S>& g) mutable {
    if (a.requires_grad()) {
      Array<S> ga(g.shape());
      ga.vec() = g.vec().cwiseProduct(b.value().vec());
      a.accumulate_grad(ga);
    }
    if (b.requires_grad()) {
      Array<S> gb(g.shape());
      gb.vec() = g.vec().cwiseProduct(a.value().vec());
      b.accumulate_grad(gb);
    }
  });
}

template <typename S>
Tensor<S> scale(Tensor<S> x, S c) {
  Array<S> y(x.value().shape());
  y.vec() = x.value().vec() * c;
  return Tensor<S>::op(std::move(y), {x}, [x, c](const Array<S>& g) mutable {
    Array<S> gx(g.shape());
    gx.vec() = g.vec() * c;
    x.accumulate_grad(gx);
  });
}

template <typename S>
Tensor<S> neg(Tensor<S> x) {
  return scale(x, S(-1));
}

template <typename S>
Tensor<S> add_scalar(Tensor<S> x, S c) {
  Array<S> y(x.value().shape());
  y.vec() = x.value().vec().array() + c;
  return Tensor<S>::op(std::move(y), {x}, [x](const Array<S>& g) mutable {
    x.accumulate_grad(g);
  });
}

// Elementwise product with a constant array (not part of the graph).
template <typename S>
Tensor<S> mul_const(Tensor<S> x, Array<S> k) {
  SEGATTN_CHECK(x.value().same_shape(k), "mul_const shape mismatch");
  Array<S> y(x.value().shape());
  y.vec() = x.value().vec().cwiseProduct(k.vec());
  return Tensor<S>::op(std::move(y), {x},
                       [x, k = std::move(k)](const Array<S>& g) mutable {
                         Array<S> gx(g.shape());
                         gx.vec() = g.vec().cwiseProduct(k.vec());
                         x.accumulate_grad(gx);
                       });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> relu(Tensor<S> x) {
  Array<S> y(x.value().shape());
  y.vec() = x.value().vec().cwiseMax(S(0));
  return Tensor<S>::op(std::move(y), {x}, [x](const Array<S>& g) mutable {
    Array<S> gx(g.shape());
    const Array<S>& v = x.value();
    for (Index i = 0; i < g.size(); ++i) gx[i] = v[i] > S(0) ? g[i] : S(0);
    x.accumulate_grad(gx);
  });
}

template <typename S>
Tensor<S> leaky_relu(Tensor<S> x, S slope) {
  Array<S> y(x.value().shape());
  for (Index i = 0; i < y.size(); ++i) {
    S v = x.value()[i];
    y[i] = v > S(0) ? v : slope * v;
  }
  return Tensor<S>::op(std::move(y), {x}, [x, slope](const Array<S>& g) mutable {
    Array<S> gx(g.shape());
    const Array<S>& v = x.value();
    for (Index i = 0; i < g.size(); ++i)
      gx[i] = v[i] > S(0) ? g[i] : slope * g[i];
    x.accumulate_grad(gx);
  });
}

template <typename S>
Tensor<S> tanh(Tensor<S> x) {
  Array<S> y(x.value().shape());
  y.vec() = x.value().vec().array().tanh();
  Array<S> saved = y;
  return Tensor<S>::op(std::move(y), {x},
                       [x, saved = std::move(saved)](const Array<S>& g) mutable {
                         Array<S> gx(g.shape());
                         gx.vec() = g.vec().array() *
                                    (S(1) - saved.vec().array().square());
                         x.accumulate_grad(gx);
                       });
}

template <typename S>
S stable_sigmoid(S v) {
  if (v >= S(0)) {
    S e = std::exp(-v);
    return S(1) / (S(1) + e);
  }
  S e = std::exp(v);
  return e / (S(1) + e);
}

// softplus(x) = log(1 + e^x), overflow-safe.
template <typename S>
S stable_softplus(S v) {
  return std::max(v, S(0)) + std::log1p(std::exp(-std::abs(v)));
}

template <typename S>
Tensor<S> sigmoid(Tensor<S> x) {
  Array<S> y(x.value().shape());
  for (Index i = 0; i < y.size(); ++i) y[i] = stable_sigmoid(x.value()[i]);
  Array<S> saved = y;
  return Tensor<S>::op(std::move(y), {x},
                       [x, saved = std::move(saved)](const Array<S>& g) mutable {
                         Array<S> gx(g.shape());
                         for (Index i = 0; i < g.size(); ++i)
                           gx[i] = g[i] * saved[i] * (S(1) - saved[i]);
                         x.accumulate_grad(gx);
                       });
}

template <typename S>
Tensor<S> softplus(Tensor<S> x) {
  Array<S> y(x.value().shape());
  for (Index i = 0; i < y.size(); ++i) y[i] = stable_softplus(x.value()[i]);
  return Tensor<S>::op(std::move(y), {x}, [x](const Array<S>& g) mutable {
    Array<S> gx(g.shape());
    for (Index i = 0; i < g.size(); ++i)
      gx[i] = g[i] * stable_sigmoid(x.value()[i]);
    x.accumulate_grad(gx);
  });
}

template <typename S>
Tensor<S> exp(Tensor<S> x) {
  Array<S> y(x.value().shape());
  y.vec() = x.value().vec().array().exp();
  Array<S> saved = y;
  return Tensor<S>::op(std::move(y), {x},
                       [x, saved = std::move(saved)](const Array<S>& g) mutable {
                         Array<S> gx(g.shape());
                         gx.vec() = g.vec().cwiseProduct(saved.vec());
                         x.accumulate_grad(gx);
                       });
}

template <typename S>
Tensor<S> log(Tensor<S> x) {
  Array<S> y(x.value().shape());
  y.vec() = x.value().vec().array().log();
  return Tensor<S>::op(std::move(y), {x}, [x](const Array<S>& g) mutable {
    Array<S> gx(g.shape());
    gx.vec() = g.vec().cwiseQuotient(x.value().vec());
    x.accumulate_grad(gx);
  });
}

template <typename S>
Tensor<S> square(Tensor<S> x) {
  Array<S> y(x.value().shape());
  y.vec() = x.value().vec().array().square();
  return Tensor<S>::op(std::move(y), {x}, [x](const Array<S>& g) mutable {
    Array<S> gx(g.shape());
    gx.vec() = S(2) * g.vec().cwiseProduct(x.value().vec());
    x.accumulate_grad(gx);
  });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

// y = op(a) * op(b) on rank-2 tensors, with optional transposes.
template <typename S>
Tensor<S> matmul(Tensor<S> a, Tensor<S> b, bool ta = false,
                 bool tb = false) {
  SEGATTN_CHECK(a.value().rank() == 2 && b.value().rank() == 2,
                "matmul expects rank-2 tensors");
  const Index m = ta ? a.dim(1) : a.dim(0);
  const Index ka = ta ? a.dim(0) : a.dim(1);
  const Index kb = tb ? b.dim(1) : b.dim(0);
  const Index n = tb ? b.dim(0) : b.dim(1);
  SEGATTN_CHECK(ka == kb, "matmul inner dims " << ka << " vs " << kb);
  Array<S> y({m, n});
  auto A = a.value().mat();
  auto B = b.value().mat();
  auto Y = y.mat();
  if (!ta && !tb) Y.noalias() = A * B;
  else if (ta && !tb) Y.noalias() = A.transpose() * B;
  else if (!ta && tb) Y.noalias() = A * B.transpose();
  else Y.noalias() = A.transpose() * B.transpose();
  return Tensor<S>::op(
      std::move(y), {a, b}, [a, b, ta, tb](const Array<S>& g) mutable {
        auto G = g.mat();
        auto A = a.value().mat();
        auto B = b.value().mat();
        if (a.requires_grad()) {
          Array<S> ga(a.value().shape());
          auto GA = ga.mat();
          if (!ta && !tb) GA.noalias() = G * B.transpose();
          else if (!ta && tb) GA.noalias() = G * B;
          else if (ta && !tb) GA.noalias() = B * G.transpose();
          else GA.noalias() = B.transpose() * G.transpose();
          a.accumulate_grad(ga);
        }
        if (b.requires_grad()) {
          Array<S> gb(b.value().shape());
          auto GB = gb.mat();
          if (!ta && !tb) GB.noalias() = A.transpose() * G;
          else if (ta && !tb) GB.noalias() = A * G;
          else if (!ta && tb) GB.noalias() = G.transpose() * A;
          else GB.noalias() = G.transpose() * A.transpose();
          b.accumulate_grad(gb);
        }
      });
}

// Batched matmul over the leading dim: {B,m,k} x {B,k,n} -> {B,m,n}.
template <typename S>
Tensor<S> bmm(Tensor<S> a, Tensor<S> b, bool ta = false,
              bool tb = false) {
  SEGATTN_CHECK(a.value().rank() == 3 && b.value().rank() == 3,
                "bmm expects rank-3 tensors");
  SEGATTN_CHECK(a.dim(0) == b.dim(0), "bmm batch mismatch");
  const Index nb = a.dim(0);
  const Index m = ta ? a.dim(2) : a.dim(1);
  const Index ka = ta ? a.dim(1) : a.dim(2);
  const Index kb = tb ? b.dim(2) : b.dim(1);
  const Index n = tb ? b.dim(1) : b.dim(2);
  SEGATTN_CHECK(ka == kb, "bmm inner dims " << ka << " vs " << kb);
  Array<S> y({nb, m, n});
  const Index sa = a.dim(1) * a.dim(2), sb = b.dim(1) * b.dim(2), sy = m * n;
  for (Index i = 0; i < nb; ++i) {
    typename Array<S>::ConstMatMap A(a.value().data() + i * sa, a.dim(1), a.dim(2));
    typename Array<S>::ConstMatMap B(b.value().data() + i * sb, b.dim(1), b.dim(2));
    typename Array<S>::MatMap Y(y.data() + i * sy, m, n);
    if (!ta && !tb) Y.noalias() = A * B;
    else if (ta && !tb) Y.noalias() = A.transpose() * B;
    else if (!ta && tb) Y.noalias() = A * B.transpose();
    else Y.noalias() = A.transpose() * B.transpose();
  }
  return Tensor<S>::op(
      std::move(y), {a, b},
      [a, b, ta, tb, nb, m, n, sa, sb, sy](const Array<S>& g) mutable {
        Array<S> ga, gb;
        if (a.requires_grad()) ga = Array<S>(a.value().shape());
        if (b.requires_grad()) gb = Array<S>(b.value().shape());
        for (Index i = 0; i < nb; ++i) {
          typename Array<S>::ConstMatMap A(a.value().data() + i * sa, a.dim(1), a.dim(2));
          typename Array<S>::ConstMatMap B(b.value().data() + i * sb, b.dim(1), b.dim(2));
          typename Array<S>::ConstMatMap G(g.data() + i * sy, m, n);
          if (a.requires_grad()) {
            typename Array<S>::MatMap GA(ga.data() + i * sa, a.dim(1), a.dim(2));
            if (!ta && !tb) GA.noalias() = G * B.transpose();
            else if (!ta && tb) GA.noalias() = G * B;
            else if (ta && !tb) GA.noalias() = B * G.transpose();
            else GA.noalias() = B.transpose() * G.transpose();
          }
          if (b.requires_grad()) {
            typename Array<S>::MatMap GB(gb.data() + i * sb, b.dim(1), b.dim(2));
            if (!ta && !tb) GB.noalias() = A.transpose() * G;
            else if (ta && !tb) GB.noalias() = A * G;
            else if (!ta && tb) GB.noalias() = G.transpose() * A;
            else GB.noalias() = G.transpose() * A.transpose();
          }
        }
        if (a.requires_grad()) a.accumulate_grad(ga);
        if (b.requires_grad()) b.accumulate_grad(gb);
      });
}

// y[n,:] = x[n,:] + b  (bias broadcast over rows)
template <typename S>
Tensor<S> add_rowvec(Tensor<S> x, Tensor<S> b) {
  SEGATTN_CHECK(x.value().rank() == 2 && b.value().rank() == 1 &&
                    x.dim(1) == b.dim(0),
                "add_rowvec shape mismatch");
  Array<S> y(x.value().shape());
  y.mat() = x.value().mat().rowwise() +
            b.value().vec().transpose();
  return Tensor<S>::op(std::move(y), {x, b}, [x, b](const Array<S>& g) mutable {
    if (x.requires_grad()) x.accumulate_grad(g);
    if (b.requires_grad()) {
      Array<S> gb(b.value().shape());
      gb.vec() = g.mat().colwise().sum().transpose();
      b.accumulate_grad(gb);
    }
  });
}

// y = x * W^T + b with W stored (out x in), the usual dense-layer layout.
template <typename S>
Tensor<S> linear(Tensor<S> x, Tensor<S> w, Tensor<S> bias) {
  Tensor<S> y = matmul(x, w, false, true);
  if (bias.defined()) y = add_rowvec(y, bias);
  return y;
}

// y[n,:] = m[n] * x[n,:]  (per-row scaling by a constant vector)
template <typename S>
Tensor<S> scale_rows(Tensor<S> x, Array<S> m) {
  SEGATTN_CHECK(x.value().rank() == 2 && m.rank() == 1 && x.dim(0) == m.dim(0),
                "scale_rows shape mismatch");
  Array<S> y(x.value().shape());
  y.mat() = m.vec().asDiagonal() * x.value().mat();
  return Tensor<S>::op(std::move(y), {x},
                       [x, m = std::move(m)](const Array<S>& g) mutable {
                         Array<S> gx(g.shape());
                         gx.mat() = m.vec().asDiagonal() * g.mat();
                         x.accumulate_grad(gx);
                       });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(Tensor<S> x) {
  Array<S> y({1}, x.value().vec().sum());
  return Tensor<S>::op(std::move(y), {x}, [x](const Array<S>& g) mutable {
    Array<S> gx(x.value().shape(), g[0]);
    x.accumulate_grad(gx);
  });
}

template <typename S>
Tensor<S> mean_all(Tensor<S> x) {
  const S inv = S(1) / static_cast<S>(x.value().size());
  Array<S> y({1}, x.value().vec().sum() * inv);
  return Tensor<S>::op(std::move(y), {x}, [x, inv](const Array<S>& g) mutable {
    Array<S> gx(x.value().shape(), g[0] * inv);
    x.accumulate_grad(gx);
  });
}

// Row sums of a rank-2 tensor: {r,c} -> {r}.
template <typename S>
Tensor<S> row_sum(Tensor<S> x) {
  SEGATTN_CHECK(x.value().rank() == 2, "row_sum expects rank-2");
  Array<S> y({x.dim(0)});
  y.vec() = x.value().mat().rowwise().sum();
  return Tensor<S>::op(std::move(y), {x}, [x](const Array<S>& g) mutable {
    Array<S> gx(x.value().shape());
    gx.mat() = g.vec() * Eigen::Matrix<S, 1, Eigen::Dynamic>::Ones(x.dim(1));
    x.accumulate_grad(gx);
  });
}

// Row dot products: {r,c},{r,c} -> {r}.
template <typename S>
Tensor<S> rowwise_dot(Tensor<S> a, Tensor<S> b) {
  SEGATTN_CHECK(a.value().rank() == 2 && a.value().same_shape(b.value()),
                "rowwise_dot shape mismatch");
  Array<S> y({a.dim(0)});
  y.vec() = a.value().mat().cwiseProduct(b.value().mat()).rowwise().sum();
  return Tensor<S>::op(std::move(y), {a, b}, [a, b](const Array<S>& g) mutable {
    if (a.requires_grad()) {
      Array<S> ga(a.value().shape());
      ga.mat() = g.vec().asDiagonal() * b.value().mat();
      a.accumulate_grad(ga);
    }
    if (b.requires_grad()) {
      Array<S> gb(b.value().shape());
      gb.mat() = g.vec().asDiagonal() * a.value().mat();
      b.accumulate_grad(gb);
    }
  });
}

template <typename S>
Tensor<S> add_n(std::vector<Tensor<S>> xs) {
  SEGATTN_CHECK(!xs.empty(), "add_n of nothing");
  Tensor<S> acc = xs[0];
  for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

namespace detail {
// Shared softmax backward for one row: gx = y .* (g - dot(g, y)).
template <typename S>
void softmax_row_backward(const S* y, const S* g, S* gx, Index n, S temp) {
  S dot = S(0);
  for (Index i = 0; i < n; ++i) dot += g[i] * y[i];
  for (Index i = 0; i < n; ++i) gx[i] = temp * y[i] * (g[i] - dot);
}
}  // namespace detail

// Row-wise softmax(temp * x) of a rank-2 tensor.
template <typename S>
Tensor<S> softmax_rows(Tensor<S> x, S temp = S(1)) {
  SEGATTN_CHECK(x.value().rank() == 2, "softmax_rows expects rank-2");
  const Index r = x.dim(0), c = x.dim(1);
  Array<S> y(x.value().shape());
  for (Index i = 0; i < r; ++i) {
    const S* xi = x.value().data() + i * c;
    S* yi = y.data() + i * c;
    S mx = xi[0];
    for (Index j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
    S sum = S(0);
    for (Index j = 0; j < c; ++j) {
      yi[j] = std::exp(temp * (xi[j] - mx));
      sum += yi[j];
    }
    for (Index j = 0; j < c; ++j) yi[j] /= sum;
  }
  Array<S> saved = y;
  return Tensor<S>::op(std::move(y), {x},
                       [x, saved = std::move(saved), r, c,
                        temp](const Array<S>& g) mutable {
                         Array<S> gx(x.value().shape());
                         for (Index i = 0; i < r; ++i)
                           detail::softmax_row_backward(saved.data() + i * c,
                                                        g.data() + i * c,
                                                        gx.data() + i * c, c, temp);
                         x.accumulate_grad(gx);
                       });
}

// Per-pixel softmax across channels: {N,C,H,W} normalized over C.
template <typename S>
Tensor<S> softmax_channels(Tensor<S> x) {
  SEGATTN_CHECK(x.value().rank() == 4, "softmax_channels expects rank-4");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Array<S> y(x.value().shape());
  const Array<S>& v = x.value();
  for (Index i = 0; i < n; ++i) {
    for (Index p = 0; p < hw; ++p) {
      const Index base = i * c * hw + p;
      S mx = v[base];
      for (Index k = 1; k < c; ++k) mx = std::max(mx, v[base + k * hw]);
      S sum = S(0);
      for (Index k = 0; k < c; ++k) {
        S e = std::exp(v[base + k * hw] - mx);
        y[base + k * hw] = e;
        sum += e;
      }
      for (Index k = 0; k < c; ++k) y[base + k * hw] /= sum;
    }
  }
  Array<S> saved = y;
  return Tensor<S>::op(
      std::move(y), {x},
      [x, saved = std::move(saved), n, c, hw](const Array<S>& g) mutable {
        Array<S> gx(x.value().shape());
        for (Index i = 0; i < n; ++i) {
          for (Index p = 0; p < hw; ++p) {
            const Index base = i * c * hw + p;
            S dot = S(0);
            for (Index k = 0; k < c; ++k)
              dot += g[base + k * hw] * saved[base + k * hw];
            for (Index k = 0; k < c; ++k)
              gx[base + k * hw] =
                  saved[base + k * hw] * (g[base + k * hw] - dot);
          }
        }
        x.accumulate_grad(gx);
      });
}

// Masked softmax over the last dim of {N,R,T} scores; mask is {N,T} with 1 for
// valid positions. Masked positions get exactly zero weight and zero gradient.
template <typename S>
Tensor<S> attn_softmax(Tensor<S> scores, Array<S> mask) {
  SEGATTN_CHECK(scores.value().rank() == 3, "attn_softmax expects rank-3");
  SEGATTN_CHECK(mask.rank() == 2 && mask.dim(0) == scores.dim(0) &&
                    mask.dim(1) == scores.dim(2),
                "attn_softmax mask shape mismatch");
  const Index n = scores.dim(0), r = scores.dim(1), t = scores.dim(2);
  for (Index i = 0; i < n; ++i) {
    S any = S(0);
    for (Index k = 0; k < t; ++k) any += mask.at(i, k);
    SEGATTN_CHECK(any > S(0), "attn_softmax: all positions masked in row " << i);
  }
  Array<S> y(scores.value().shape());
  const Array<S>& v = scores.value();
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < r; ++j) {
      const Index base = (i * r + j) * t;
      S mx = -std::numeric_limits<S>::infinity();
      for (Index k = 0; k < t; ++k)
        if (mask.at(i, k) > S(0)) mx = std::max(mx, v[base + k]);
      S sum = S(0);
      for (Index k = 0; k < t; ++k) {
        if (mask.at(i, k) > S(0)) {
          y[base + k] = std::exp(v[base + k] - mx);
          sum += y[base + k];
        } else {
          y[base + k] = S(0);
        }
      }
      for (Index k = 0; k < t; ++k) y[base + k] /= sum;
    }
  }
  Array<S> saved = y;
  return Tensor<S>::op(
      std::move(y), {scores},
      [scores, saved = std::move(saved), n, r, t](const Array<S>& g) mutable {
        Array<S> gx(scores.value().shape());
        for (Index i = 0; i < n * r; ++i)
          detail::softmax_row_backward(saved.data() + i * t, g.data() + i * t,
                                       gx.data() + i * t, t, S(1));
        scores.accumulate_grad(gx);
      });
}

// Row-wise L2 normalization; rows must have nonzero norm (cosine is undefined
// otherwise).
template <typename S>
Tensor<S> l2_normalize_rows(Tensor<S> x) {
  SEGATTN_CHECK(x.value().rank() == 2, "l2_normalize_rows expects rank-2");
  const Index r = x.dim(0), c = x.dim(1);
  Array<S> y(x.value().shape());
  Array<S> norms({r});
  for (Index i = 0; i < r; ++i) {
    typename Array<S>::ConstVecMap xi(x.value().data() + i * c, c);
    S nrm = xi.norm();
    SEGATTN_CHECK(nrm > S(0), "zero-norm embedding at row " << i);
    norms[i] = nrm;
    typename Array<S>::VecMap yi(y.data() + i * c, c);
    yi = xi / nrm;
  }
  Array<S> saved = y;
  return Tensor<S>::op(
      std::move(y), {x},
      [x, saved = std::move(saved), norms = std::move(norms), r,
       c](const Array<S>& g) mutable {
        Array<S> gx(x.value().shape());
        for (Index i = 0; i < r; ++i) {
          typename Array<S>::ConstVecMap gi(g.data() + i * c, c);
          typename Array<S>::ConstVecMap yi(saved.data() + i * c, c);
          typename Array<S>::VecMap gxi(gx.data() + i * c, c);
          const S dot = gi.dot(yi);
          gxi = (gi - dot * yi) / norms[i];
        }
        x.accumulate_grad(gx);
      });
}

// Masked variant: rows with mask 0 pass through as zeros (used for padded
// word positions, which are exact zeros by contract and carry no gradient).
template <typename S>
Tensor<S> l2_normalize_rows_masked(Tensor<S> x, Array<S> row_mask) {
  SEGATTN_CHECK(x.value().rank() == 2 && row_mask.rank() == 1 &&
                    row_mask.dim(0) == x.dim(0),
                "l2_normalize_rows_masked shape mismatch");
  const Index r = x.dim(0), c = x.dim(1);
  Array<S> y(x.value().shape());
  Array<S> norms({r}, S(1));
  for (Index i = 0; i < r; ++i) {
    if (row_mask[i] <= S(0)) continue;
    typename Array<S>::ConstVecMap xi(x.value().data() + i * c, c);
    S nrm = xi.norm();
    SEGATTN_CHECK(nrm > S(0), "zero-norm embedding at row " << i);
    norms[i] = nrm;
    typename Array<S>::VecMap yi(y.data() + i * c, c);
    yi = xi / nrm;
  }
  Array<S> saved = y;
  return Tensor<S>::op(
      std::move(y), {x},
      [x, saved = std::move(saved), norms = std::move(norms),
       row_mask = std::move(row_mask), r, c](const Array<S>& g) mutable {
        Array<S> gx(x.value().shape());
        for (Index i = 0; i < r; ++i) {
          if (row_mask[i] <= S(0)) continue;
          typename Array<S>::ConstVecMap gi(g.data() + i * c, c);
          typename Array<S>::ConstVecMap yi(saved.data() + i * c, c);
          typename Array<S>::VecMap gxi(gx.data() + i * c, c);
          const S dot = gi.dot(yi);
          gxi = (gi - dot * yi) / norms[i];
        }
        x.accumulate_grad(gx);
      });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> transpose2d(Tensor<S> x) {
  SEGATTN_CHECK(x.value().rank() == 2, "transpose2d expects rank-2");
  Array<S> y({x.dim(1), x.dim(0)});
  y.mat() = x.value().mat().transpose();
  return Tensor<S>::op(std::move(y), {x}, [x](const Array<S>& g) mutable {
    Array<S> gx(x.value().shape());
    gx.mat() = g.mat().transpose();
    x.accumulate_grad(gx);
  });
}

template <typename S>
Tensor<S> slice_rows(Tensor<S> x, Index r0, Index r1) {
  SEGATTN_CHECK(x.value().rank() == 2 && r0 >= 0 && r1 <= x.dim(0) && r0 < r1,
                "slice_rows bounds");
  const Index c = x.dim(1);
  Array<S> y({r1 - r0, c});
  std::copy_n(x.value().data() + r0 * c, (r1 - r0) * c, y.data());
  return Tensor<S>::op(std::move(y), {x},
                       [x, r0, c](const Array<S>& g) mutable {
                         Array<S> gx(x.value().shape());
                         std::copy_n(g.data(), g.size(), gx.data() + r0 * c);
                         x.accumulate_grad(gx);
                       });
}

// Stack rank-2 blocks along dim 0.
template <typename S>
Tensor<S> concat_rows(std::vector<Tensor<S>> xs) {
  SEGATTN_CHECK(!xs.empty(), "concat_rows of nothing");
  const Index c = xs[0].dim(1);
  Index rows = 0;
  for (const auto& x : xs) {
    SEGATTN_CHECK(x.value().rank() == 2 && x.dim(1) == c, "concat_rows cols");
    rows += x.dim(0);
  }
  Array<S> y({rows, c});
  Index off = 0;
  for (const auto& x : xs) {
    std::copy_n(x.value().data(), x.value().size(), y.data() + off * c);
    off += x.dim(0);
  }
  std::vector<Tensor<S>> inputs = xs;
  return Tensor<S>::op(std::move(y), std::move(inputs),
                       [xs, c](const Array<S>& g) mutable {
                         Index off = 0;
                         for (auto& x : xs) {
                           if (x.requires_grad()) {
                             Array<S> gx(x.value().shape());
                             std::copy_n(g.data() + off * c, gx.size(), gx.data());
                             x.accumulate_grad(gx);
                           }
                           off += x.dim(0);
                         }
                       });
}

template <typename S>
Tensor<S> reshape(Tensor<S> x, Shape shape) {
  Array<S> y = x.value().reshaped(shape);
  return Tensor<S>::op(std::move(y), {x},
                       [x](const Array<S>& g) mutable {
                         x.accumulate_grad(g.reshaped(x.value().shape()));
                       });
}

// {a,b,c} -> {a,c,b}
template <typename S>
Tensor<S> permute_021(Tensor<S> x) {
  SEGATTN_CHECK(x.value().rank() == 3, "permute_021 expects rank-3");
  const Index a = x.dim(0), b = x.dim(1), c = x.dim(2);
  Array<S> y({a, c, b});
  const Array<S>& v = x.value();
  for (Index i = 0; i < a; ++i)
    for (Index j = 0; j < b; ++j)
      for (Index k = 0; k < c; ++k) y.at(i, k, j) = v.at(i, j, k);
  return Tensor<S>::op(std::move(y), {x},
                       [x, a, b, c](const Array<S>& g) mutable {
                         Array<S> gx(x.value().shape());
                         for (Index i = 0; i < a; ++i)
                           for (Index j = 0; j < b; ++j)
                             for (Index k = 0; k < c; ++k)
                               gx.at(i, j, k) = g.at(i, k, j);
                         x.accumulate_grad(gx);
                       });
}

template <typename S>
Tensor<S> slice_cols(Tensor<S> x, Index c0, Index c1) {
  SEGATTN_CHECK(x.value().rank() == 2 && c0 >= 0 && c1 <= x.dim(1) && c0 < c1,
                "slice_cols bounds");
  const Index r = x.dim(0), c = x.dim(1), w = c1 - c0;
  Array<S> y({r, w});
  y.mat() = x.value().mat().middleCols(c0, w);
  return Tensor<S>::op(std::move(y), {x},
                       [x, c0, w, r, c](const Array<S>& g) mutable {
                         Array<S> gx({r, c});
                         gx.mat().middleCols(c0, w) = g.mat();
                         x.accumulate_grad(gx);
                       });
}

template <typename S>
Tensor<S> concat_cols(std::vector<Tensor<S>> xs) {
  SEGATTN_CHECK(!xs.empty(), "concat_cols of nothing");
  const Index r = xs[0].dim(0);
  Index total = 0;
  for (const auto& x : xs) {
    SEGATTN_CHECK(x.value().rank() == 2 && x.dim(0) == r, "concat_cols rows");
    total += x.dim(1);
  }
  Array<S> y({r, total});
  Index off = 0;
  for (const auto& x : xs) {
    y.mat().middleCols(off, x.dim(1)) = x.value().mat();
    off += x.dim(1);
  }
  std::vector<Tensor<S>> inputs = xs;
  return Tensor<S>::op(std::move(y), std::move(inputs),
                       [xs](const Array<S>& g) mutable {
                         Index off = 0;
                         for (auto& x : xs) {
                           const Index w = x.dim(1);
                           if (x.requires_grad()) {
                             Array<S> gx(x.value().shape());
                             gx.mat() = g.mat().middleCols(off, w);
                             x.accumulate_grad(gx);
                           }
                           off += w;
                         }
                       });
}

// Channel concat of two {N,C,H,W} tensors.
template <typename S>
Tensor<S> concat_channels(Tensor<S> a, Tensor<S> b) {
  SEGATTN_CHECK(a.value().rank() == 4 && b.value().rank() == 4 &&
                    a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
                    a.dim(3) == b.dim(3),
                "concat_channels shape mismatch");
  const Index n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const Index hw = a.dim(2) * a.dim(3);
  Array<S> y({n, ca + cb, a.dim(2), a.dim(3)});
  for (Index i = 0; i < n; ++i) {
    std::copy_n(a.value().data() + i * ca * hw, ca * hw,
                y.data() + i * (ca + cb) * hw);
    std::copy_n(b.value().data() + i * cb * hw, cb * hw,
                y.data() + i * (ca + cb) * hw + ca * hw);
  }
  return Tensor<S>::op(
      std::move(y), {a, b}, [a, b, n, ca, cb, hw](const Array<S>& g) mutable {
        if (a.requires_grad()) {
          Array<S> ga(a.value().shape());
          for (Index i = 0; i < n; ++i)
            std::copy_n(g.data() + i * (ca + cb) * hw, ca * hw,
                        ga.data() + i * ca * hw);
          a.accumulate_grad(ga);
        }
        if (b.requires_grad()) {
          Array<S> gb(b.value().shape());
          for (Index i = 0; i < n; ++i)
            std::copy_n(g.data() + i * (ca + cb) * hw + ca * hw, cb * hw,
                        gb.data() + i * cb * hw);
          b.accumulate_grad(gb);
        }
      });
}

// {N,D} -> {N,D,H,W} by spatial replication.
template <typename S>
Tensor<S> broadcast_spatial(Tensor<S> x, Index h, Index w) {
  SEGATTN_CHECK(x.value().rank() == 2, "broadcast_spatial expects rank-2");
  const Index n = x.dim(0), d = x.dim(1), hw = h * w;
  Array<S> y({n, d, h, w});
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j)
      std::fill_n(y.data() + (i * d + j) * hw, hw, x.value().at(i, j));
  return Tensor<S>::op(std::move(y), {x},
                       [x, n, d, hw](const Array<S>& g) mutable {
                         Array<S> gx(x.value().shape());
                         for (Index i = 0; i < n; ++i)
                           for (Index j = 0; j < d; ++j) {
                             typename Array<S>::ConstVecMap gij(
                                 g.data() + (i * d + j) * hw, hw);
                             gx.at(i, j) = gij.sum();
                           }
                         x.accumulate_grad(gx);
                       });
}

}  // namespace segattn
