#pragma once

#include <map>
#include <string>
#include <vector>

#include "segattn/encoders.hpp"
#include "segattn/networks.hpp"

namespace segattn {

// Per-iteration loss breakdown. `total` is the generator-side objective
// L = L_G + L_Gs + lambda * L_DAMSM; `total_d` sums the discriminator losses.
struct LossReport {
  std::map<std::string, double> terms;

  double at(const std::string& name) const {
    auto it = terms.find(name);
    SEGATTN_CHECK(it != terms.end(), "missing loss term '" << name << "'");
    return it->second;
  }

  void check_finite() const {
    for (const auto& [name, v] : terms)
      SEGATTN_CHECK(std::isfinite(v), "non-finite loss term '" << name << "' = " << v);
  }
};

template <typename S>
struct DamsmParams {
  S gamma1 = S(5), gamma2 = S(5), gamma3 = S(10);
};

// -E[log sigma(l)] computed in logit space as mean softplus(-l).
template <typename S>
Tensor<S> mean_log_sigmoid_neg(const Tensor<S>& logit) {
  return mean_all(softplus(neg(logit)));
}

// -E[log(1 - sigma(l))] = mean softplus(l).
template <typename S>
Tensor<S> mean_log_one_minus_sigmoid_neg(const Tensor<S>& logit) {
  return mean_all(softplus(logit));
}

// Generator adversarial loss for one stage:
//   L_Gi = -E[log D_i(G_i)]/2 - E[log D_i(G_i, t)]/2
template <typename S>
Tensor<S> generator_loss(const DiscriminatorVerdict<S>& fake) {
  return scale(add(mean_log_sigmoid_neg(fake.uncond_logit),
                   mean_log_sigmoid_neg(fake.cond_logit)),
               S(0.5));
}

// Discriminator loss for one stage:
//   L_Di = -E[log D_i(x)]/2 - E[log(1-D_i(G_i))]/2
//          -E[log D_i(x,t)]/2 - E[log(1-D_i(G_i,t))]/2
template <typename S>
Tensor<S> discriminator_loss(const DiscriminatorVerdict<S>& real,
                             const DiscriminatorVerdict<S>& fake) {
  Tensor<S> sum = add(
      add(mean_log_sigmoid_neg(real.uncond_logit),
          mean_log_one_minus_sigmoid_neg(fake.uncond_logit)),
      add(mean_log_sigmoid_neg(real.cond_logit),
          mean_log_one_minus_sigmoid_neg(fake.cond_logit)));
  return scale(sum, S(0.5));
}

// L_Gs: the Eq.-3 functional form applied to the mask discriminators' verdicts
// on generated masks, summed over stages.
template <typename S>
Tensor<S> mask_generator_loss(const std::vector<DiscriminatorVerdict<S>>& fakes) {
  SEGATTN_CHECK(!fakes.empty(),
                "mask_generator_loss called without mask verdicts "
                "(self_attention mode only)");
  std::vector<Tensor<S>> terms;
  for (const auto& v : fakes) terms.push_back(generator_loss(v));
  return add_n(terms);
}

// DAMSM-style matching loss. Word level: regions attend to each word (temp
// gamma1), word relevances aggregate by smooth max (gamma2), and matched
// pairs compete against the batch in both directions (temp gamma3). Sentence
// level: same batch contest on global/sentence cosines.
template <typename S>
struct DamsmLoss {
  Tensor<S> word_term;
  Tensor<S> sentence_term;
};

template <typename S>
DamsmLoss<S> damsm_loss(const ImageEmbedding<S>& img, const TextEmbedding<S>& txt,
                        const DamsmParams<S>& params) {
  const Index n = img.global.dim(0);
  SEGATTN_CHECK(txt.sentence.dim(0) == n, "damsm batch mismatch");
  SEGATTN_CHECK(n >= 1, "damsm needs at least one pair");
  const Index r = img.regions.dim(1), d = img.regions.dim(2);
  const Index t = txt.words.dim(1);
  SEGATTN_CHECK(txt.words.dim(2) == d, "joint space dim mismatch");

  // Flattened, normalized word rows; padded rows stay zero and are excluded
  // from every sum through the validity mask.
  Array<S> row_mask({n * t});
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < t; ++k) row_mask[i * t + k] = txt.token_mask.at(i, k);
  Tensor<S> words_n =
      l2_normalize_rows_masked(reshape(txt.words, {n * t, d}), row_mask);
  Tensor<S> regions_n = l2_normalize_rows(reshape(img.regions, {n * r, d}));

  // Rel[i][j]: relevance of image i to sentence j.
  std::vector<Tensor<S>> rel_rows;
  for (Index i = 0; i < n; ++i) {
    Tensor<S> regions_i = slice_rows(regions_n, i * r, (i + 1) * r);  // {R,D}
    Tensor<S> cos_wr = matmul(words_n, regions_i, false, true);       // {NT,R}
    Tensor<S> alpha = softmax_rows(cos_wr, params.gamma1);
    Tensor<S> context = l2_normalize_rows(matmul(alpha, regions_i));  // {NT,D}
    Tensor<S> cos_cw = rowwise_dot(context, words_n);                 // {NT}
    Tensor<S> weighted = mul_const(exp(scale(cos_cw, params.gamma2)), row_mask);
    Tensor<S> per_sentence = row_sum(reshape(weighted, {n, t}));      // {N}
    rel_rows.push_back(reshape(scale(log(per_sentence), S(1) / params.gamma2),
                               {Index(1), n}));
  }
  Tensor<S> rel = concat_rows(rel_rows);  // {N,N}

  auto batch_contest = [&](const Tensor<S>& scores) {
    Array<S> eye({n, n});
    for (Index i = 0; i < n; ++i) eye.at(i, i) = S(1);
    Tensor<S> p_text_given_img = softmax_rows(scores, params.gamma3);
    Tensor<S> p_img_given_text = softmax_rows(transpose2d(scores), params.gamma3);
    Tensor<S> diag1 = sum_all(mul_const(log(p_text_given_img), eye));
    Tensor<S> diag2 = sum_all(mul_const(log(p_img_given_text), eye));
    return neg(add(diag1, diag2));
  };

  DamsmLoss<S> out;
  out.word_term = batch_contest(rel);

  Tensor<S> global_n = l2_normalize_rows(img.global);
  Tensor<S> sentence_n = l2_normalize_rows(txt.sentence);
  out.sentence_term = batch_contest(matmul(global_n, sentence_n, false, true));
  return out;
}

// Eq. 5 composition. In dataset_mask mode L_Gs is absent (0).
inline double total_loss_value(double l_g, double l_gs, double damsm_word,
                               double damsm_sent, double lambda, MaskMode mode) {
  const double gs = mode == MaskMode::kSelfAttention ? l_gs : 0.0;
  return l_g + gs + lambda * (damsm_word + damsm_sent);
}

}  // namespace segattn
