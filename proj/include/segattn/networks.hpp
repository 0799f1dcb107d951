#pragma once

#include <string>
#include <vector>

#include "segattn/config.hpp"
#include "segattn/encoders.hpp"
#include "segattn/seg_attention.hpp"

namespace segattn {

// Per-location softmax attention over word features. Words are projected into
// the hidden channel space; every spatial location attends over the valid
// words of its own caption and receives the attention-weighted context.
template <typename S>
struct WordAttentionResult {
  Tensor<S> context;  // {N, C, H, W}
  Tensor<S> alpha;    // {N, H*W, T}
};

template <typename S>
WordAttentionResult<S> word_attention(const Tensor<S>& hidden,
                                      const Tensor<S>& words,
                                      const Array<S>& token_mask,
                                      const LinearLayer<S>& proj) {
  SEGATTN_CHECK(hidden.value().rank() == 4, "word_attention expects rank-4 hidden");
  SEGATTN_CHECK(words.value().rank() == 3, "word_attention expects {N,T,D} words");
  const Index n = hidden.dim(0), c = hidden.dim(1);
  const Index hw = hidden.dim(2) * hidden.dim(3);
  const Index t = words.dim(1), d = words.dim(2);
  SEGATTN_CHECK(words.dim(0) == n, "word_attention batch mismatch");
  SEGATTN_CHECK(proj.w.dim(0) == c && proj.w.dim(1) == d,
                "word projection must map D=" << d << " to C=" << c);

  Tensor<S> projected = reshape(
      matmul(reshape(words, {n * t, d}), proj.w, false, true), {n, t, c});
  Tensor<S> locs = permute_021(reshape(hidden, {n, c, hw}));   // {N,HW,C}
  Tensor<S> scores = bmm(locs, projected, false, true);        // {N,HW,T}
  Tensor<S> alpha = attn_softmax(scores, token_mask);
  Tensor<S> ctx = bmm(alpha, projected);                       // {N,HW,C}
  WordAttentionResult<S> out;
  out.context = reshape(permute_021(ctx), {n, c, hidden.dim(2), hidden.dim(3)});
  out.alpha = alpha;
  return out;
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

template <typename S>
struct GeneratorOutput {
  std::vector<Tensor<S>> images;  // one per stage, tanh range (-1,1)
};

// Coarse-to-fine generator. Stage 0 projects [z, sentence] to a 4x4 seed grid
// and upsamples to the base resolution; later stages inject word attention,
// apply a residual block, upsample, and re-apply segmentation attention. The
// attention module runs after every upsampling step with the mask resampled
// to the current working resolution.
template <typename S>
class Generator {
public:
  Generator() = default;

  Generator(const TrainConfig& cfg, std::uint64_t seed,
            const std::string& name = "generator")
      : cfg_(cfg) {
    const auto channels = cfg.channel_schedule();
    const Index c_seg = cfg.seg_classes;
    const Index hidden = cfg.seg_attn_hidden();
    const Index ch0 = channels[0];
    fc_ = LinearLayer<S>(name + "/fc", ch0 * 16,
                         cfg.latent_dim + cfg.text_dim, seed);

    // Stage 0 interior: 4 -> base_resolution by x2 steps.
    Index res = 4;
    int j = 0;
    while (res < cfg.base_resolution) {
      res *= 2;
      const std::string blk = name + "/stage0/up" + std::to_string(j);
      stage0_convs_.emplace_back(blk + "/conv", ch0, ch0, 3, 1, 1, seed);
      stage0_attn_.emplace_back(blk + "/sa", c_seg, hidden, ch0, seed,
                                cfg.ablate_seg_attention);
      ++j;
    }

    to_img_.emplace_back(Conv2dLayer<S>(name + "/stage0/to_img", 3, ch0, 3, 1, 1, seed));

    for (int i = 1; i < cfg.stage_count; ++i) {
      const std::string st = name + "/stage" + std::to_string(i);
      const Index c_prev = channels[static_cast<size_t>(i - 1)];
      const Index c_cur = channels[static_cast<size_t>(i)];
      StageBlock blk;
      blk.attn_proj = LinearLayer<S>(st + "/word_proj", c_prev, cfg.text_dim, seed,
                                     /*with_bias=*/false);
      blk.merge = Conv2dLayer<S>(st + "/merge", c_cur, 2 * c_prev, 3, 1, 1, seed);
      blk.res1 = Conv2dLayer<S>(st + "/res1", c_cur, c_cur, 3, 1, 1, seed);
      blk.res2 = Conv2dLayer<S>(st + "/res2", c_cur, c_cur, 3, 1, 1, seed);
      blk.up_conv = Conv2dLayer<S>(st + "/up_conv", c_cur, c_cur, 3, 1, 1, seed);
      blk.attn = SegAttention<S>(st + "/sa", c_seg, hidden, c_cur, seed,
                                 cfg.ablate_seg_attention);
      stages_.push_back(std::move(blk));
      to_img_.emplace_back(Conv2dLayer<S>(st + "/to_img", 3, c_cur, 3, 1, 1, seed));
    }
  }

  // masks: one {N, C_seg, r_i, r_i} tensor per stage (soft or one-hot).
  GeneratorOutput<S> forward(const Tensor<S>& z, const TextEmbedding<S>& text,
                             const std::vector<Tensor<S>>& masks, BnMode bn_mode) {
    SEGATTN_CHECK(static_cast<int>(masks.size()) == cfg_.stage_count,
                  "mask pyramid has " << masks.size() << " levels, expected "
                                      << cfg_.stage_count);
    const auto resolutions = cfg_.stage_resolutions();
    for (size_t i = 0; i < masks.size(); ++i) {
      SEGATTN_CHECK(masks[i].dim(2) == resolutions[i] &&
                        masks[i].dim(3) == resolutions[i],
                    "mask level " << i << " resolution mismatch");
    }
    const Index n = z.dim(0);
    SEGATTN_CHECK(z.dim(1) == cfg_.latent_dim, "latent dim mismatch");
    SEGATTN_CHECK(text.sentence.dim(0) == n, "text/latent batch mismatch");

    GeneratorOutput<S> out;
    Tensor<S> h = reshape(fc_(concat_cols<S>({z, text.sentence})),
                          {n, cfg_.channel_schedule()[0], 4, 4});

    // Stage 0: repeated x2 upsampling, attention at every working resolution.
    Index res = 4;
    for (size_t j = 0; j < stage0_convs_.size(); ++j) {
      res *= 2;
      h = upsample_nearest2(h);
      h = stage0_convs_[j](h);
      Tensor<S> mask_here = masks[0];
      for (Index r = resolutions[0]; r > res; r /= 2)
        mask_here = downsample_nearest2(mask_here);
      h = stage0_attn_[j].forward(h, mask_here, bn_mode);
      h = relu(h);
    }
    out.images.push_back(tanh(to_img_[0](h)));

    for (size_t i = 0; i < stages_.size(); ++i) {
      StageBlock& blk = stages_[i];
      auto attn = word_attention(h, text.words, text.token_mask, blk.attn_proj);
      Tensor<S> merged = relu(blk.merge(concat_channels(h, attn.context)));
      Tensor<S> res_out = add(merged, blk.res2(relu(blk.res1(merged))));
      h = upsample_nearest2(res_out);
      h = blk.up_conv(h);
      h = blk.attn.forward(h, masks[i + 1], bn_mode);
      h = relu(h);
      out.images.push_back(tanh(to_img_[i + 1](h)));
    }
    return out;
  }

  void collect(ParamCollection<S>& out, const std::string& name = "generator") {
    fc_.collect(out, name + "/fc");
    for (size_t j = 0; j < stage0_convs_.size(); ++j) {
      const std::string blk = name + "/stage0/up" + std::to_string(j);
      stage0_convs_[j].collect(out, blk + "/conv");
      stage0_attn_[j].collect(out, blk + "/sa");
    }
    to_img_[0].collect(out, name + "/stage0/to_img");
    for (size_t i = 0; i < stages_.size(); ++i) {
      const std::string st = name + "/stage" + std::to_string(i + 1);
      stages_[i].attn_proj.collect(out, st + "/word_proj");
      stages_[i].merge.collect(out, st + "/merge");
      stages_[i].res1.collect(out, st + "/res1");
      stages_[i].res2.collect(out, st + "/res2");
      stages_[i].up_conv.collect(out, st + "/up_conv");
      stages_[i].attn.collect(out, st + "/sa");
      to_img_[i + 1].collect(out, st + "/to_img");
    }
  }

  std::vector<SegAttention<S>*> attention_modules() {
    std::vector<SegAttention<S>*> mods;
    for (auto& a : stage0_attn_) mods.push_back(&a);
    for (auto& s : stages_) mods.push_back(&s.attn);
    return mods;
  }

private:
  struct StageBlock {
    LinearLayer<S> attn_proj;
    Conv2dLayer<S> merge, res1, res2, up_conv;
    SegAttention<S> attn;
  };

  TrainConfig cfg_;
  LinearLayer<S> fc_;
  std::vector<Conv2dLayer<S>> stage0_convs_;
  std::vector<SegAttention<S>> stage0_attn_;
  std::vector<StageBlock> stages_;
  std::vector<Conv2dLayer<S>> to_img_;
};

// ---------------------------------------------------------------------------
// Self-attention mask generator G_s
// ---------------------------------------------------------------------------

// Same coarse-to-fine topology as the image generator but without word
// attention and without segmentation attention. Each stage emits soft label
// maps through a per-pixel channel softmax.
template <typename S>
class SelfAttnGenerator {
public:
  SelfAttnGenerator() = default;

  SelfAttnGenerator(const TrainConfig& cfg, std::uint64_t seed,
                    const std::string& name = "mask_generator")
      : cfg_(cfg) {
    const auto channels = cfg.channel_schedule();
    const Index ch0 = channels[0];
    fc_ = LinearLayer<S>(name + "/fc", ch0 * 16,
                         cfg.latent_dim + cfg.text_dim, seed);
    Index res = 4;
    int j = 0;
    while (res < cfg.base_resolution) {
      res *= 2;
      stage0_convs_.emplace_back(name + "/stage0/up" + std::to_string(j) + "/conv",
                                 ch0, ch0, 3, 1, 1, seed);
      ++j;
    }
    to_mask_.emplace_back(Conv2dLayer<S>(name + "/stage0/to_mask",
                                         cfg.seg_classes, ch0, 3, 1, 1, seed));
    for (int i = 1; i < cfg.stage_count; ++i) {
      const std::string st = name + "/stage" + std::to_string(i);
      const Index c_prev = channels[static_cast<size_t>(i - 1)];
      const Index c_cur = channels[static_cast<size_t>(i)];
      StageBlock blk;
      blk.res1 = Conv2dLayer<S>(st + "/res1", c_prev, c_prev, 3, 1, 1, seed);
      blk.res2 = Conv2dLayer<S>(st + "/res2", c_prev, c_prev, 3, 1, 1, seed);
      blk.up_conv = Conv2dLayer<S>(st + "/up_conv", c_cur, c_prev, 3, 1, 1, seed);
      stages_.push_back(std::move(blk));
      to_mask_.emplace_back(Conv2dLayer<S>(st + "/to_mask", cfg.seg_classes,
                                           c_cur, 3, 1, 1, seed));
    }
  }

  // Returns soft label maps, one per stage; channels sum to 1 per pixel.
  std::vector<Tensor<S>> forward(const Tensor<S>& z, const Tensor<S>& sentence) {
    const Index n = z.dim(0);
    SEGATTN_CHECK(sentence.dim(0) == n, "batch mismatch");
    Tensor<S> h = reshape(fc_(concat_cols<S>({z, sentence})),
                          {n, cfg_.channel_schedule()[0], 4, 4});
    for (auto& conv : stage0_convs_) {
      h = upsample_nearest2(h);
      h = relu(conv(h));
    }
    std::vector<Tensor<S>> masks;
    masks.push_back(softmax_channels(to_mask_[0](h)));
    for (size_t i = 0; i < stages_.size(); ++i) {
      StageBlock& blk = stages_[i];
      Tensor<S> res_out = add(h, blk.res2(relu(blk.res1(h))));
      h = upsample_nearest2(res_out);
      h = relu(blk.up_conv(h));
      masks.push_back(softmax_channels(to_mask_[i + 1](h)));
    }
    return masks;
  }

  void collect(ParamCollection<S>& out, const std::string& name = "mask_generator") {
    fc_.collect(out, name + "/fc");
    for (size_t j = 0; j < stage0_convs_.size(); ++j)
      stage0_convs_[j].collect(out, name + "/stage0/up" + std::to_string(j) + "/conv");
    to_mask_[0].collect(out, name + "/stage0/to_mask");
    for (size_t i = 0; i < stages_.size(); ++i) {
      const std::string st = name + "/stage" + std::to_string(i + 1);
      stages_[i].res1.collect(out, st + "/res1");
      stages_[i].res2.collect(out, st + "/res2");
      stages_[i].up_conv.collect(out, st + "/up_conv");
      to_mask_[i + 1].collect(out, st + "/to_mask");
    }
  }

private:
  struct StageBlock {
    Conv2dLayer<S> res1, res2, up_conv;
  };

  TrainConfig cfg_;
  LinearLayer<S> fc_;
  std::vector<Conv2dLayer<S>> stage0_convs_;
  std::vector<StageBlock> stages_;
  std::vector<Conv2dLayer<S>> to_mask_;
};

// ---------------------------------------------------------------------------
// Discriminators
// ---------------------------------------------------------------------------

template <typename S>
struct DiscriminatorVerdict {
  Tensor<S> uncond_logit;  // {N}
  Tensor<S> cond_logit;    // {N}
};

// Probabilities for reporting: numerically safe sigmoid clamped strictly
// inside (0,1). Losses always work on the logits.
template <typename S>
Array<S> verdict_probabilities(const Tensor<S>& logit) {
  Array<S> p(logit.value().shape());
  const S lo = S(1e-6), hi = S(1) - S(1e-6);
  for (Index i = 0; i < p.size(); ++i)
    p[i] = std::min(hi, std::max(lo, stable_sigmoid(logit.value()[i])));
  return p;
}

// Shared downsampling trunk to a 4x4 grid, then an unconditional head and a
// conditional head that sees the sentence feature replicated spatially.
template <typename S>
class Discriminator {
public:
  Discriminator() = default;

  Discriminator(const std::string& name, Index in_channels, Index resolution,
                Index text_dim, std::uint64_t seed)
      : in_channels_(in_channels), resolution_(resolution), text_dim_(text_dim) {
    Index ch = in_channels, res = resolution, width = 32;
    int bi = 0;
    while (res > 4) {
      downs_.emplace_back(name + "/down" + std::to_string(bi), width, ch, 4, 2, 1, seed);
      ch = width;
      width = std::min<Index>(width * 2, 128);
      res /= 2;
      ++bi;
    }
    trunk_out_ = ch;
    uncond_ = LinearLayer<S>(name + "/uncond", 1, ch * 16, seed);
    cond_merge_ = Conv2dLayer<S>(name + "/cond_merge", 64, ch + text_dim, 3, 1, 1, seed);
    cond_out_ = LinearLayer<S>(name + "/cond_out", 1, 64 * 16, seed);
  }

  DiscriminatorVerdict<S> forward(const Tensor<S>& x, const Tensor<S>& sentence) const {
    SEGATTN_CHECK(x.value().rank() == 4 && x.dim(1) == in_channels_,
                  "discriminator expects {N," << in_channels_ << ",H,W}");
    SEGATTN_CHECK(x.dim(2) == resolution_ && x.dim(3) == resolution_,
                  "discriminator resolution " << x.dim(2) << "x" << x.dim(3)
                                              << ", expected " << resolution_);
    SEGATTN_CHECK(sentence.dim(0) == x.dim(0) && sentence.dim(1) == text_dim_,
                  "sentence feature shape mismatch");
    Tensor<S> h = x;
    for (const auto& blk : downs_) h = leaky_relu(blk(h), S(0.2));
    const Index n = h.dim(0);

    DiscriminatorVerdict<S> v;
    v.uncond_logit = reshape(uncond_(reshape(h, {n, trunk_out_ * 16})), {n});
    Tensor<S> srep = broadcast_spatial(sentence, 4, 4);
    Tensor<S> merged = leaky_relu(cond_merge_(concat_channels(h, srep)), S(0.2));
    v.cond_logit = reshape(cond_out_(reshape(merged, {n, Index(64) * 16})), {n});
    return v;
  }

  void collect(ParamCollection<S>& out, const std::string& name) {
    for (size_t i = 0; i < downs_.size(); ++i)
      downs_[i].collect(out, name + "/down" + std::to_string(i));
    uncond_.collect(out, name + "/uncond");
    cond_merge_.collect(out, name + "/cond_merge");
    cond_out_.collect(out, name + "/cond_out");
  }

private:
  Index in_channels_ = 0, resolution_ = 0, text_dim_ = 0, trunk_out_ = 0;
  std::vector<Conv2dLayer<S>> downs_;
  LinearLayer<S> uncond_;
  Conv2dLayer<S> cond_merge_;
  LinearLayer<S> cond_out_;
};

}  // namespace segattn
