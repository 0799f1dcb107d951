#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "segattn/losses.hpp"
#include "segattn/metrics.hpp"

namespace segattn {
namespace verify {

// Reference implementations, written as direct loops with no shared code
// paths with the production ops (the production conv goes through im2col +
// GEMM; these do not). They exist to cross-check the modules and are also
// exposed through `segattn verify`.

template <typename S>
Array<S> reference_conv2d(const Array<S>& x, const Array<S>& w, const Array<S>& b,
                          Index stride, Index pad) {
  const Index n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const Index oh = (h + 2 * pad - kh) / stride + 1;
  const Index ow = (wd + 2 * pad - kw) / stride + 1;
  Array<S> y({n, c_out, oh, ow});
  for (Index ni = 0; ni < n; ++ni)
    for (Index o = 0; o < c_out; ++o)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          double acc = b.empty() ? 0.0 : static_cast<double>(b[o]);
          for (Index c = 0; c < c_in; ++c)
            for (Index ki = 0; ki < kh; ++ki)
              for (Index kj = 0; kj < kw; ++kj) {
                const Index hi = i * stride - pad + ki;
                const Index wj = j * stride - pad + kj;
                if (hi < 0 || hi >= h || wj < 0 || wj >= wd) continue;
                acc += static_cast<double>(x.at(ni, c, hi, wj)) *
                       static_cast<double>(w.at(o, c, ki, kj));
              }
          y.at(ni, o, i, j) = static_cast<S>(acc);
        }
  return y;
}

// Elementwise Eq.-1 reference: BN(F) .* gamma(S) + beta(S) with the heads
// evaluated by the reference convolution. identity_bn skips normalization;
// otherwise batch statistics are computed directly.
template <typename S>
Array<S> reference_seg_attn(const Array<S>& f, const Array<S>& s,
                            const Array<S>& trunk_w, const Array<S>& trunk_b,
                            const Array<S>& gamma_w, const Array<S>& gamma_b,
                            const Array<S>& beta_w, const Array<S>& beta_b,
                            bool identity_bn, S eps = S(1e-5)) {
  Array<S> hidden = reference_conv2d(s, trunk_w, trunk_b, 1, 1);
  for (Index i = 0; i < hidden.size(); ++i)
    hidden[i] = std::max(hidden[i], S(0));
  Array<S> gamma = reference_conv2d(hidden, gamma_w, gamma_b, 1, 1);
  Array<S> beta = reference_conv2d(hidden, beta_w, beta_b, 1, 1);

  Array<S> bnf = f;
  if (!identity_bn) {
    const Index n = f.dim(0), c = f.dim(1), hw = f.dim(2) * f.dim(3);
    for (Index ch = 0; ch < c; ++ch) {
      double mean = 0.0;
      for (Index i = 0; i < n; ++i)
        for (Index p = 0; p < hw; ++p)
          mean += static_cast<double>(f[(i * c + ch) * hw + p]);
      mean /= static_cast<double>(n * hw);
      double var = 0.0;
      for (Index i = 0; i < n; ++i)
        for (Index p = 0; p < hw; ++p) {
          const double d = static_cast<double>(f[(i * c + ch) * hw + p]) - mean;
          var += d * d;
        }
      var /= static_cast<double>(n * hw);
      const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
      for (Index i = 0; i < n; ++i)
        for (Index p = 0; p < hw; ++p)
          bnf[(i * c + ch) * hw + p] = static_cast<S>(
              (static_cast<double>(f[(i * c + ch) * hw + p]) - mean) * inv);
    }
  }
  Array<S> out(f.shape());
  for (Index i = 0; i < out.size(); ++i)
    out[i] = bnf[i] * gamma[i] + beta[i];
  return out;
}

// Direct softmax-attention reference over valid words.
template <typename S>
Array<S> reference_word_attention(const Array<S>& hidden, const Array<S>& words,
                                  const Array<S>& token_mask, const Array<S>& proj_w) {
  const Index n = hidden.dim(0), c = hidden.dim(1);
  const Index hw = hidden.dim(2) * hidden.dim(3);
  const Index t = words.dim(1), d = words.dim(2);
  // Projected words e' = U e.
  Array<S> proj({n, t, static_cast<Index>(c)});
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < t; ++k)
      for (Index o = 0; o < c; ++o) {
        double acc = 0.0;
        for (Index q = 0; q < d; ++q)
          acc += static_cast<double>(proj_w.at(o, q)) *
                 static_cast<double>(words.at(i, k, q));
        proj.at(i, k, o) = static_cast<S>(acc);
      }
  Array<S> ctx(hidden.shape());
  for (Index i = 0; i < n; ++i)
    for (Index p = 0; p < hw; ++p) {
      std::vector<double> scores(static_cast<size_t>(t), 0.0);
      double mx = -1e300;
      for (Index k = 0; k < t; ++k) {
        if (token_mask.at(i, k) <= S(0)) continue;
        double acc = 0.0;
        for (Index ch = 0; ch < c; ++ch)
          acc += static_cast<double>(hidden[(i * c + ch) * hw + p]) *
                 static_cast<double>(proj.at(i, k, ch));
        scores[static_cast<size_t>(k)] = acc;
        mx = std::max(mx, acc);
      }
      double denom = 0.0;
      for (Index k = 0; k < t; ++k)
        if (token_mask.at(i, k) > S(0))
          denom += std::exp(scores[static_cast<size_t>(k)] - mx);
      for (Index ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (Index k = 0; k < t; ++k) {
          if (token_mask.at(i, k) <= S(0)) continue;
          const double alpha = std::exp(scores[static_cast<size_t>(k)] - mx) / denom;
          acc += alpha * static_cast<double>(proj.at(i, k, ch));
        }
        ctx[(i * c + ch) * hw + p] = static_cast<S>(acc);
      }
    }
  return ctx;
}

// Direct-summation DAMSM reference (both terms), double precision.
inline std::pair<double, double> reference_damsm(
    const ArrayD& regions /*{N,R,D}*/, const ArrayD& words /*{N,T,D}*/,
    const ArrayD& token_mask /*{N,T}*/, const ArrayD& global_f /*{N,D}*/,
    const ArrayD& sentence /*{N,D}*/, double g1, double g2, double g3) {
  const Index n = regions.dim(0), r = regions.dim(1), d = regions.dim(2);
  const Index t = words.dim(1);
  auto norm_row = [](const double* p, Index len) {
    double s = 0.0;
    for (Index i = 0; i < len; ++i) s += p[i] * p[i];
    return std::sqrt(s);
  };
  auto cosine = [&](const double* a, const double* b) {
    double dot = 0.0;
    for (Index i = 0; i < d; ++i) dot += a[i] * b[i];
    return dot / (norm_row(a, d) * norm_row(b, d));
  };

  // Word-level relevance R(i image, j sentence).
  std::vector<std::vector<double>> rel(static_cast<size_t>(n),
                                       std::vector<double>(static_cast<size_t>(n)));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      double agg = 0.0;
      for (Index k = 0; k < t; ++k) {
        if (token_mask.at(j, k) <= 0.0) continue;
        const double* e = words.data() + (j * t + k) * d;
        // Attention over regions of image i.
        std::vector<double> a(static_cast<size_t>(r));
        double mx = -1e300;
        for (Index q = 0; q < r; ++q) {
          a[static_cast<size_t>(q)] = g1 * cosine(e, regions.data() + (i * r + q) * d);
          mx = std::max(mx, a[static_cast<size_t>(q)]);
        }
        double denom = 0.0;
        for (Index q = 0; q < r; ++q) {
          a[static_cast<size_t>(q)] = std::exp(a[static_cast<size_t>(q)] - mx);
          denom += a[static_cast<size_t>(q)];
        }
        std::vector<double> ctx(static_cast<size_t>(d), 0.0);
        for (Index q = 0; q < r; ++q)
          for (Index z = 0; z < d; ++z)
            ctx[static_cast<size_t>(z)] += a[static_cast<size_t>(q)] / denom *
                                           regions[(i * r + q) * d + z];
        agg += std::exp(g2 * cosine(ctx.data(), e));
      }
      rel[static_cast<size_t>(i)][static_cast<size_t>(j)] = std::log(agg) / g2;
    }
  }

  auto contest = [&](const std::vector<std::vector<double>>& m) {
    double loss = 0.0;
    for (Index i = 0; i < n; ++i) {
      double denom = 0.0;
      for (Index j = 0; j < n; ++j)
        denom += std::exp(g3 * m[static_cast<size_t>(i)][static_cast<size_t>(j)]);
      loss -= std::log(std::exp(g3 * m[static_cast<size_t>(i)][static_cast<size_t>(i)]) / denom);
    }
    for (Index j = 0; j < n; ++j) {
      double denom = 0.0;
      for (Index i = 0; i < n; ++i)
        denom += std::exp(g3 * m[static_cast<size_t>(i)][static_cast<size_t>(j)]);
      loss -= std::log(std::exp(g3 * m[static_cast<size_t>(j)][static_cast<size_t>(j)]) / denom);
    }
    return loss;
  };

  const double word_term = contest(rel);
  std::vector<std::vector<double>> srel(static_cast<size_t>(n),
                                        std::vector<double>(static_cast<size_t>(n)));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      srel[static_cast<size_t>(i)][static_cast<size_t>(j)] =
          cosine(global_f.data() + i * d, sentence.data() + j * d);
  return {word_term, contest(srel)};
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

// Central differences in double precision against the autograd gradients.
// loss_fn must rebuild the graph from the leaves' current values.
inline double finite_diff_max_rel_error(std::vector<TensorD> leaves,
                                        const std::function<TensorD()>& loss_fn,
                                        double step = 1e-3) {
  TensorD loss = loss_fn();
  loss.backward();
  std::vector<ArrayD> analytic;
  for (auto& leaf : leaves) {
    analytic.push_back(leaf.has_grad() ? leaf.grad()
                                       : ArrayD(leaf.value().shape()));
    leaf.clear_grad();
  }
  double max_err = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    ArrayD& v = leaves[li].value();
    for (Index k = 0; k < v.size(); ++k) {
      const double orig = v[k];
      v[k] = orig + step;
      const double lp = loss_fn().scalar();
      v[k] = orig - step;
      const double lm = loss_fn().scalar();
      v[k] = orig;
      const double numeric = (lp - lm) / (2.0 * step);
      const double a = analytic[li][k];
      const double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

// ---------------------------------------------------------------------------
// Check plumbing
// ---------------------------------------------------------------------------

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail_v {

inline void check_near(std::vector<CheckResult>& out, const std::string& name,
                       double actual, double expected, double tol) {
  CheckResult r;
  r.name = name;
  r.pass = std::isfinite(actual) && std::abs(actual - expected) <= tol;
  std::ostringstream os;
  os << "value " << actual << ", expected " << expected << " (tol " << tol << ")";
  r.detail = os.str();
  out.push_back(r);
}

inline void check_true(std::vector<CheckResult>& out, const std::string& name,
                       bool cond, const std::string& detail = "") {
  out.push_back({name, cond, detail});
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

template <typename S>
DiscriminatorVerdict<S> verdict_from_probs(double uncond, double cond) {
  DiscriminatorVerdict<S> v;
  v.uncond_logit = Tensor<S>::constant(Array<S>({1}, static_cast<S>(logit(uncond))));
  v.cond_logit = Tensor<S>::constant(Array<S>({1}, static_cast<S>(logit(cond))));
  return v;
}

inline double max_abs_diff(const ArrayD& a, const ArrayD& b) {
  double m = 0.0;
  for (Index i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_rel_diff(const ArrayD& a, const ArrayD& b) {
  double m = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    m = std::max(m, std::abs(a[i] - b[i]) / denom);
  }
  return m;
}

inline ArrayD random_onehot_mask(Index n, Index c_seg, Index h, Index w, Rng& rng) {
  ArrayD s({n, c_seg, h, w});
  for (Index i = 0; i < n; ++i)
    for (Index p = 0; p < h * w; ++p) {
      const Index cls = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(c_seg)));
      s[(i * c_seg + cls) * h * w + p] = 1.0;
    }
  return s;
}

}  // namespace detail_v

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> run_losses_suite() {
  using detail_v::check_near;
  using detail_v::verdict_from_probs;
  std::vector<CheckResult> out;

  // Generator loss hand values.
  check_near(out, "generator_loss probs (0.5,0.5) = ln 2",
             generator_loss(verdict_from_probs<double>(0.5, 0.5)).scalar(),
             0.6931472, 1e-6);
  {
    DiscriminatorVerdict<double> v;
    v.uncond_logit = TensorD::constant(ArrayD({1}, 40.0));
    v.cond_logit = TensorD::constant(ArrayD({1}, 40.0));
    check_near(out, "generator_loss probs (1,1) = 0",
               generator_loss(v).scalar(), 0.0, 1e-6);
  }
  check_near(out, "generator_loss probs (0.8,0.4)",
             generator_loss(verdict_from_probs<double>(0.8, 0.4)).scalar(),
             0.569717, 1e-6);

  // Discriminator loss hand values.
  {
    DiscriminatorVerdict<double> real, fake;
    real.uncond_logit = TensorD::constant(ArrayD({1}, 40.0));
    real.cond_logit = TensorD::constant(ArrayD({1}, 40.0));
    fake.uncond_logit = TensorD::constant(ArrayD({1}, -40.0));
    fake.cond_logit = TensorD::constant(ArrayD({1}, -40.0));
    check_near(out, "discriminator_loss perfect = 0",
               discriminator_loss(real, fake).scalar(), 0.0, 1e-6);
  }
  check_near(out, "discriminator_loss all 0.5 = 2 ln 2",
             discriminator_loss(verdict_from_probs<double>(0.5, 0.5),
                                verdict_from_probs<double>(0.5, 0.5))
                 .scalar(),
             1.386294, 1e-6);
  check_near(out, "discriminator_loss real(0.9,0.8) fake(0.2,0.1)",
             discriminator_loss(verdict_from_probs<double>(0.9, 0.8),
                                verdict_from_probs<double>(0.2, 0.1))
                 .scalar(),
             0.328504, 1e-6);

  // Mask generator loss.
  {
    std::vector<DiscriminatorVerdict<double>> stages(
        3, verdict_from_probs<double>(0.5, 0.5));
    check_near(out, "mask_generator_loss 3 stages all 0.5 = 3 ln 2",
               mask_generator_loss(stages).scalar(), 2.079442, 1e-6);
    std::vector<DiscriminatorVerdict<double>> one = {
        verdict_from_probs<double>(0.8, 0.4)};
    check_near(out, "mask_generator_loss single stage (0.8,0.4)",
               mask_generator_loss(one).scalar(), 0.569717, 1e-6);
  }

  // DAMSM: N=1 degenerate and the N=2 orthogonal construction.
  {
    ImageEmbedding<double> img;
    TextEmbedding<double> txt;
    img.regions = TensorD::constant(ArrayD({1, 1, 4}, {1, 0, 0, 0}));
    img.global = TensorD::constant(ArrayD({1, 4}, {1, 0, 0, 0}));
    txt.words = TensorD::constant(ArrayD({1, 1, 4}, {1, 0, 0, 0}));
    txt.sentence = TensorD::constant(ArrayD({1, 4}, {1, 0, 0, 0}));
    txt.token_mask = ArrayD({1, 1}, 1.0);
    txt.lengths = {1};
    auto dl = damsm_loss(img, txt, DamsmParams<double>{});
    check_near(out, "damsm N=1 word term = 0", dl.word_term.scalar(), 0.0, 1e-9);
    check_near(out, "damsm N=1 sentence term = 0", dl.sentence_term.scalar(), 0.0, 1e-9);
  }
  {
    ImageEmbedding<double> img;
    TextEmbedding<double> txt;
    img.regions = TensorD::constant(ArrayD({2, 1, 4}, {1, 0, 0, 0, 0, 1, 0, 0}));
    img.global = TensorD::constant(ArrayD({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0}));
    txt.words = TensorD::constant(ArrayD({2, 1, 4}, {1, 0, 0, 0, 0, 1, 0, 0}));
    txt.sentence = TensorD::constant(ArrayD({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0}));
    txt.token_mask = ArrayD({2, 1}, 1.0);
    txt.lengths = {1, 1};
    auto dl = damsm_loss(img, txt, DamsmParams<double>{});
    const double expected = 4.0 * std::log1p(std::exp(-10.0));
    check_near(out, "damsm N=2 orthogonal sentence term = 4 ln(1+e^-10)",
               dl.sentence_term.scalar(), expected, 1e-9);
    check_near(out, "damsm N=2 sentence term matches 1.816e-4",
               dl.sentence_term.scalar(), 1.816e-4, 1e-6);
  }

  // Eq. 5 composition.
  check_near(out, "total loss Eq.5 composition = 4.0",
             total_loss_value(1.0, 0.5, 0.2, 0.3, 5.0, MaskMode::kSelfAttention),
             4.0, 1e-12);
  check_near(out, "total loss lambda=0 = L_G + L_Gs",
             total_loss_value(1.0, 0.5, 0.7, 0.2, 0.0, MaskMode::kSelfAttention),
             1.5, 1e-12);
  check_near(out, "total loss all zero = 0",
             total_loss_value(0, 0, 0, 0, 5.0, MaskMode::kSelfAttention), 0.0, 0.0);
  check_near(out, "total loss dataset_mask drops L_Gs",
             total_loss_value(1.0, 0.5, 0.1, 0.1, 5.0, MaskMode::kDatasetMask),
             2.0, 1e-12);

  // Logit-space equivalence and monotonicity.
  {
    double max_err = 0.0;
    for (double p : {1e-6, 1e-4, 0.02, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-6}) {
      const double viaLogit = stable_softplus(-detail_v::logit(p));
      const double naive = -std::log(p);
      max_err = std::max(max_err,
                         std::abs(viaLogit - naive) / std::max(1e-12, naive));
    }
    detail_v::check_true(out, "logit-space loss equals naive -log p (rel 1e-6)",
                         max_err < 1e-6, "max rel err " + std::to_string(max_err));
  }
  {
    const double l1 = generator_loss(verdict_from_probs<double>(0.3, 0.5)).scalar();
    const double l2 = generator_loss(verdict_from_probs<double>(0.6, 0.5)).scalar();
    detail_v::check_true(out, "generator_loss decreases as fake logit rises",
                         l2 < l1);
  }
  {
    const double logit = 0.73;
    const double d_fake = stable_softplus(logit) / 2.0;
    const double g_term = stable_softplus(-logit) / 2.0;
    detail_v::check_true(
        out, "Eq.3/Eq.4 evaluate the same logit on both sides",
        std::abs(d_fake - (-std::log1p(-stable_sigmoid(logit)) / 2.0)) < 1e-9 &&
            std::abs(g_term - (-std::log(stable_sigmoid(logit)) / 2.0)) < 1e-9);
  }
  return out;
}

inline std::vector<CheckResult> run_oracle_suite() {
  using detail_v::check_near;
  using detail_v::check_true;
  std::vector<CheckResult> out;

  // Eq. 1 vs the elementwise reference on 100 random instances, identity BN.
  {
    Rng rng(20240501);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const Index n = 2, c = 4, c_seg = 3, hidden = 5, h = 8, w = 8;
      SegAttention<double> sa("sa", c_seg, hidden, c,
                              derive_seed(991, "oracle", static_cast<std::uint64_t>(trial)));
      ArrayD f = ArrayD::random_normal({n, c, h, w}, rng);
      ArrayD s = detail_v::random_onehot_mask(n, c_seg, h, w, rng);
      TensorD got = sa.forward(TensorD::constant(f), TensorD::constant(s),
                               BnMode::kIdentity);
      ArrayD want = reference_seg_attn(
          f, s, sa.trunk().w.value(), sa.trunk().b.value(),
          sa.gamma_head().w.value(), sa.gamma_head().b.value(),
          sa.beta_head().w.value(), sa.beta_head().b.value(), true);
      worst = std::max(worst, detail_v::max_rel_diff(got.value(), want));
    }
    check_true(out, "seg_attn matches elementwise oracle on 100 instances (1e-5)",
               worst < 1e-5, "max rel err " + std::to_string(worst));
  }

  // Zero heads collapse to exactly zero; gamma=1/beta=0 passes BN through.
  {
    Rng rng(7);
    const Index n = 2, c = 3, c_seg = 3, h = 6, w = 6;
    SegAttention<double> sa("sa", c_seg, 4, c, 55);
    sa.gamma_head().w.value().set_zero();
    sa.gamma_head().b.value().set_zero();
    sa.beta_head().w.value().set_zero();
    sa.beta_head().b.value().set_zero();
    ArrayD f = ArrayD::random_normal({n, c, h, w}, rng);
    ArrayD s = detail_v::random_onehot_mask(n, c_seg, h, w, rng);
    TensorD got = sa.forward(TensorD::constant(f), TensorD::constant(s),
                             BnMode::kIdentity);
    bool all_zero = true;
    for (Index i = 0; i < got.value().size(); ++i)
      all_zero = all_zero && got.value()[i] == 0.0;
    check_true(out, "zero-weight heads collapse F' to exact 0", all_zero);

    sa.gamma_head().b.value().fill(1.0);
    TensorD passthrough = sa.forward(TensorD::constant(f), TensorD::constant(s),
                                     BnMode::kIdentity);
    check_true(out, "gamma=1, beta=0 gives F' = BN(F) exactly (identity BN)",
               detail_v::max_abs_diff(passthrough.value(), f) <= 1e-6);
  }

  // Batch norm hand example: values {1,3} -> {-1,+1} with eps shift.
  {
    ArrayD x({2, 1, 1, 2}, {1, 3, 3, 1});
    BnState<double> st(1);
    TensorD y = batch_norm(TensorD::constant(x), st, BnMode::kTrain);
    check_near(out, "batch_norm {1,3} -> -1", y.value()[0], -1.0, 1e-4);
    check_near(out, "batch_norm {1,3} -> +1", y.value()[1], 1.0, 1e-4);
    Rng rng(11);
    ArrayD big = ArrayD::random_normal({4, 2, 5, 5}, rng, 2.5, 0.7);
    BnState<double> st2(2);
    TensorD z = batch_norm(TensorD::constant(big), st2, BnMode::kTrain);
    double worst_mean = 0.0, worst_var = 0.0;
    for (Index ch = 0; ch < 2; ++ch) {
      double m = 0.0, v = 0.0;
      long cnt = 0;
      for (Index i = 0; i < 4; ++i)
        for (Index p = 0; p < 25; ++p) {
          m += z.value()[(i * 2 + ch) * 25 + p];
          ++cnt;
        }
      m /= static_cast<double>(cnt);
      for (Index i = 0; i < 4; ++i)
        for (Index p = 0; p < 25; ++p) {
          const double d = z.value()[(i * 2 + ch) * 25 + p] - m;
          v += d * d;
        }
      v /= static_cast<double>(cnt);
      worst_mean = std::max(worst_mean, std::abs(m));
      worst_var = std::max(worst_var, std::abs(v - 1.0));
    }
    check_true(out, "batch_norm train output has mean<1e-5, |var-1|<1e-3",
               worst_mean < 1e-5 && worst_var < 1e-3);
  }

  // Word attention vs direct softmax oracle.
  {
    Rng rng(3);
    const Index n = 1, c = 4, h = 2, w = 2, t = 3, d = 5;
    ArrayD hidden = ArrayD::random_normal({n, c, h, w}, rng);
    ArrayD words = ArrayD::random_normal({n, t, d}, rng);
    ArrayD mask({n, t}, 1.0);
    LinearLayer<double> proj("proj", c, d, 99, false);
    auto res = word_attention(TensorD::constant(hidden), TensorD::constant(words),
                              mask, proj);
    ArrayD want = reference_word_attention(hidden, words, mask, proj.w.value());
    check_true(out, "word_attention matches softmax oracle (1e-6)",
               detail_v::max_abs_diff(res.context.value(), want) < 1e-6);
    // Attention rows sum to 1.
    double worst = 0.0;
    for (Index i = 0; i < res.alpha.dim(0); ++i)
      for (Index j = 0; j < res.alpha.dim(1); ++j) {
        double sum = 0.0;
        for (Index k = 0; k < res.alpha.dim(2); ++k)
          sum += res.alpha.value().at(i, j, k);
        worst = std::max(worst, std::abs(sum - 1.0));
      }
    check_true(out, "word attention weights sum to 1 (1e-6)", worst < 1e-6);
  }

  // DAMSM vs direct-summation reference on a random batch.
  {
    Rng rng(5);
    const Index n = 4, r = 4, t = 3, d = 6;
    ArrayD regions = ArrayD::random_normal({n, r, d}, rng);
    ArrayD words = ArrayD::random_normal({n, t, d}, rng);
    ArrayD mask({n, t});
    std::vector<int> lengths;
    for (Index i = 0; i < n; ++i) {
      const int len = 1 + static_cast<int>(rng.uniform_int(t));
      lengths.push_back(len);
      for (int k = 0; k < len; ++k) mask.at(i, k) = 1.0;
      for (Index k = len; k < t; ++k)
        for (Index q = 0; q < d; ++q) words.at(i, k, q) = 0.0;
    }
    ArrayD global_f = ArrayD::random_normal({n, d}, rng);
    ArrayD sentence = ArrayD::random_normal({n, d}, rng);
    ImageEmbedding<double> img;
    img.regions = TensorD::constant(regions);
    img.global = TensorD::constant(global_f);
    TextEmbedding<double> txt;
    txt.words = TensorD::constant(words);
    txt.sentence = TensorD::constant(sentence);
    txt.token_mask = mask;
    txt.lengths = lengths;
    auto got = damsm_loss(img, txt, DamsmParams<double>{});
    auto [want_word, want_sent] =
        reference_damsm(regions, words, mask, global_f, sentence, 5.0, 5.0, 10.0);
    check_near(out, "damsm word term matches direct oracle",
               got.word_term.scalar(), want_word, 1e-5);
    check_near(out, "damsm sentence term matches direct oracle",
               got.sentence_term.scalar(), want_sent, 1e-5);
  }

  // Metric analytics.
  {
    ArrayD uniform({40, 4}, 0.25);
    check_near(out, "inception_score uniform = 1",
               inception_score(uniform, 10).value, 1.0, 1e-9);
    const Index k = 10;
    ArrayD onehot({100, k});
    for (Index i = 0; i < 100; ++i) onehot.at(i, i % k) = 1.0;
    check_near(out, "inception_score balanced one-hot = K",
               inception_score(onehot, 10).value, 10.0, 1e-9);
    ArrayD two({50, 2});
    for (Index i = 0; i < 50; ++i) {
      two.at(i, 0) = i % 2 == 0 ? 0.9 : 0.1;
      two.at(i, 1) = i % 2 == 0 ? 0.1 : 0.9;
    }
    check_near(out, "inception_score two-class mixture = 1.44495",
               inception_score(two, 5).value, 1.44495, 1e-4);
  }
  {
    ArrayD img({2, 3}, {1, 0, 0, 0, 1, 0});
    ArrayD matched = img;
    ArrayD distractors({2, 2, 3}, {0, 0, 1, 0, 1, 0, 1, 0, 0, 0, 0, 1});
    check_near(out, "r_precision oracle embeddings = 1",
               r_precision(img, matched, distractors).value, 1.0, 1e-12);
    ArrayD tied({1, 2}, {1, 0});
    ArrayD tied_match({1, 2}, {1, 0});
    ArrayD tied_distr({1, 1, 2}, {1, 0});
    check_near(out, "r_precision tie counts as failure",
               r_precision(tied, tied_match, tied_distr).value, 0.0, 1e-12);
  }

  // Nearest-neighbor pyramid index arithmetic: 4x4 one-hot in 2x2 class
  // blocks downsampled to 2x2 picks the (1,1) sample of each block.
  {
    std::vector<std::uint8_t> raw = {0, 0, 1, 1, 0, 0, 1, 1,
                                     2, 2, 3, 3, 2, 2, 3, 3};
    ArrayD full = mask_to_label_map<double>(raw.data(), 4, 4, 4);
    ArrayD down = nearest_resample(full, 2, 2);
    bool ok = down.at(0, 0, 0) == 1.0 && down.at(1, 0, 1) == 1.0 &&
              down.at(2, 1, 0) == 1.0 && down.at(3, 1, 1) == 1.0;
    check_true(out, "mask pyramid picks block centers (index arithmetic)", ok);
    check_true(out, "downsampled mask stays one-hot", is_valid_label_map(down));
  }
  return out;
}

inline std::vector<CheckResult> run_gradcheck_suite() {
  using detail_v::check_true;
  std::vector<CheckResult> out;
  const double tol = 1e-4;

  // seg_attention: dF'/dparams and dF'/dF on a 1x2x4x4 instance.
  {
    Rng rng(31);
    const Index n = 1, c = 2, c_seg = 3, hidden = 4, h = 4, w = 4;
    SegAttention<double> sa("sa", c_seg, hidden, c, 4242);
    ArrayD f0 = ArrayD::random_normal({n, c, h, w}, rng);
    ArrayD s = detail_v::random_onehot_mask(n, c_seg, h, w, rng);
    ArrayD head = ArrayD::random_normal({n, c, h, w}, rng);
    TensorD f = TensorD::leaf(f0, true);
    TensorD s_t = TensorD::constant(s);

    for (BnMode mode : {BnMode::kIdentity, BnMode::kTrain}) {
      auto loss_fn = [&]() {
        return sum_all(mul_const(sa.forward(f, s_t, mode), head));
      };
      std::vector<TensorD> leaves = {f,
                                     sa.trunk().w,
                                     sa.trunk().b,
                                     sa.gamma_head().w,
                                     sa.gamma_head().b,
                                     sa.beta_head().w,
                                     sa.beta_head().b};
      const double err = finite_diff_max_rel_error(leaves, loss_fn);
      check_true(out,
                 std::string("gradcheck seg_attention (") +
                     (mode == BnMode::kIdentity ? "identity" : "train") + " BN)",
                 err < tol, "max rel err " + std::to_string(err));
    }
  }

  // word_attention: hidden, words, and projection.
  {
    Rng rng(32);
    const Index n = 1, c = 4, h = 2, w = 2, t = 3, d = 5;
    TensorD hidden = TensorD::leaf(ArrayD::random_normal({n, c, h, w}, rng), true);
    TensorD words = TensorD::leaf(ArrayD::random_normal({n, t, d}, rng), true);
    ArrayD mask({n, t}, 1.0);
    mask.at(0, 2) = 0.0;  // one padded position
    words.value().at(0, 2, 0) = 0.0;
    LinearLayer<double> proj("proj", c, d, 77, false);
    ArrayD head = ArrayD::random_normal({n, c, h, w}, rng);
    auto loss_fn = [&]() {
      return sum_all(
          mul_const(word_attention(hidden, words, mask, proj).context, head));
    };
    const double err =
        finite_diff_max_rel_error({hidden, words, proj.w}, loss_fn);
    check_true(out, "gradcheck word_attention", err < tol,
               "max rel err " + std::to_string(err));
  }

  // damsm_loss end to end.
  {
    Rng rng(33);
    const Index n = 3, r = 3, t = 3, d = 4;
    TensorD regions = TensorD::leaf(ArrayD::random_normal({n, r, d}, rng), true);
    TensorD words = TensorD::leaf(ArrayD::random_normal({n, t, d}, rng), true);
    TensorD global_f = TensorD::leaf(ArrayD::random_normal({n, d}, rng), true);
    TensorD sentence = TensorD::leaf(ArrayD::random_normal({n, d}, rng), true);
    ArrayD mask({n, t}, 1.0);
    mask.at(1, 2) = 0.0;
    for (Index q = 0; q < d; ++q) words.value().at(1, 2, q) = 0.0;
    std::vector<int> lengths = {3, 2, 3};
    auto loss_fn = [&]() {
      ImageEmbedding<double> img;
      img.regions = regions;
      img.global = global_f;
      TextEmbedding<double> txt;
      txt.words = words;
      txt.sentence = sentence;
      txt.token_mask = mask;
      txt.lengths = lengths;
      auto dl = damsm_loss(img, txt, DamsmParams<double>{});
      return add(dl.word_term, dl.sentence_term);
    };
    const double err = finite_diff_max_rel_error(
        {regions, words, global_f, sentence}, loss_fn);
    check_true(out, "gradcheck damsm_loss", err < tol,
               "max rel err " + std::to_string(err));
  }

  // Text encoder with a scalar head on the sentence feature (2 tokens, D=4).
  {
    Rng rng(34);
    TextEncoder<double> enc(8, 4, 1234);
    std::vector<std::vector<Index>> ids = {{3, 5, 0, 0}};
    std::vector<int> lengths = {2};
    ArrayD head = ArrayD::random_normal({1, 4}, rng);
    ParamCollection<double> params;
    enc.collect(params);
    std::vector<TensorD> leaves;
    for (auto& p : params.params) leaves.push_back(p.tensor);
    auto loss_fn = [&]() {
      return sum_all(mul_const(enc.encode(ids, lengths).sentence, head));
    };
    const double err = finite_diff_max_rel_error(leaves, loss_fn);
    check_true(out, "gradcheck text encoder sentence head", err < tol,
               "max rel err " + std::to_string(err));
  }
  return out;
}

inline bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

}  // namespace verify
}  // namespace segattn
