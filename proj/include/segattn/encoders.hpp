#pragma once

#include <string>
#include <vector>

#include "segattn/layers.hpp"

namespace segattn {

// Word-level and sentence-level text features. Word features are stored
// {N, T, D} with padded positions exactly zero; sentence features are the
// combined final hidden states of both directions.
template <typename S>
struct TextEmbedding {
  Tensor<S> words;     // {N, T, D}
  Tensor<S> sentence;  // {N, D}
  Array<S> token_mask; // {N, T}, 1 at valid positions
  std::vector<int> lengths;
};

template <typename S>
struct ImageEmbedding {
  Tensor<S> regions;  // {N, R, D} region features in the joint space
  Tensor<S> global;   // {N, D}
};

// Single-layer bidirectional LSTM over padded token batches. Hidden size is
// text_dim/2 per direction so concatenated features have width text_dim.
template <typename S>
class TextEncoder {
public:
  TextEncoder() = default;

  TextEncoder(Index vocab_size, Index text_dim, std::uint64_t seed,
              const std::string& name = "text_encoder")
      : vocab_(vocab_size), dim_(text_dim), hidden_(text_dim / 2) {
    SEGATTN_CHECK(text_dim % 2 == 0, "text_dim must be even");
    embed_ = Tensor<S>::leaf(
        init::dense_weight<S>({vocab_, dim_}, dim_, name + "/embed", seed), true);
    for (int d = 0; d < 2; ++d) {
      const std::string dir = name + (d == 0 ? "/fwd" : "/bwd");
      wx_[d] = Tensor<S>::leaf(
          init::dense_weight<S>({4 * hidden_, dim_}, dim_, dir + "/wx", seed), true);
      wh_[d] = Tensor<S>::leaf(
          init::dense_weight<S>({4 * hidden_, hidden_}, hidden_, dir + "/wh", seed),
          true);
      bias_[d] = Tensor<S>::leaf(Array<S>({4 * hidden_}), true);
    }
  }

  TextEmbedding<S> encode(const std::vector<std::vector<Index>>& ids,
                          const std::vector<int>& lengths) const {
    const Index n = static_cast<Index>(ids.size());
    SEGATTN_CHECK(n > 0 && lengths.size() == ids.size(), "bad token batch");
    const Index t_max = static_cast<Index>(ids[0].size());
    for (const auto& row : ids)
      SEGATTN_CHECK(static_cast<Index>(row.size()) == t_max, "ragged token batch");
    for (int len : lengths)
      SEGATTN_CHECK(len >= 1 && len <= t_max, "caption length " << len);

    Array<S> mask({n, t_max});
    for (Index i = 0; i < n; ++i)
      for (Index t = 0; t < t_max; ++t)
        mask.at(i, t) = t < lengths[static_cast<size_t>(i)] ? S(1) : S(0);

    // Per-timestep embeddings, shared by both directions.
    std::vector<Tensor<S>> x_t(static_cast<size_t>(t_max));
    for (Index t = 0; t < t_max; ++t) {
      std::vector<Index> col(static_cast<size_t>(n));
      for (Index i = 0; i < n; ++i) col[static_cast<size_t>(i)] = ids[static_cast<size_t>(i)][static_cast<size_t>(t)];
      x_t[static_cast<size_t>(t)] = embedding_lookup(embed_, std::move(col));
    }

    std::vector<Tensor<S>> h_fwd(static_cast<size_t>(t_max));
    std::vector<Tensor<S>> h_bwd(static_cast<size_t>(t_max));
    Tensor<S> fwd_final, bwd_final;
    run_direction(0, x_t, mask, /*reverse=*/false, h_fwd, fwd_final);
    run_direction(1, x_t, mask, /*reverse=*/true, h_bwd, bwd_final);

    // Word feature t = [h_fwd_t, h_bwd_t], zeroed at padded positions.
    std::vector<Tensor<S>> word_cols(static_cast<size_t>(t_max));
    for (Index t = 0; t < t_max; ++t) {
      Tensor<S> wt = concat_cols<S>({h_fwd[static_cast<size_t>(t)], h_bwd[static_cast<size_t>(t)]});
      Array<S> mcol({n});
      for (Index i = 0; i < n; ++i) mcol[i] = mask.at(i, t);
      word_cols[static_cast<size_t>(t)] = scale_rows(wt, std::move(mcol));
    }

    TextEmbedding<S> out;
    out.words = reshape(concat_cols(word_cols), {n, t_max, dim_});
    out.sentence = concat_cols<S>({fwd_final, bwd_final});
    out.token_mask = std::move(mask);
    out.lengths = lengths;
    return out;
  }

  void collect(ParamCollection<S>& out, const std::string& name = "text_encoder") {
    out.add(name + "/embed", embed_);
    for (int d = 0; d < 2; ++d) {
      const std::string dir = name + (d == 0 ? "/fwd" : "/bwd");
      out.add(dir + "/wx", wx_[d]);
      out.add(dir + "/wh", wh_[d]);
      out.add(dir + "/b", bias_[d]);
    }
  }

  Index text_dim() const { return dim_; }

private:
  void run_direction(int d, const std::vector<Tensor<S>>& x_t,
                     const Array<S>& mask, bool reverse,
                     std::vector<Tensor<S>>& h_out, Tensor<S>& final_h) const {
    const Index t_max = static_cast<Index>(x_t.size());
    const Index n = x_t[0].dim(0);
    Tensor<S> h = Tensor<S>::constant(Array<S>({n, hidden_}));
    Tensor<S> c = Tensor<S>::constant(Array<S>({n, hidden_}));
    for (Index step = 0; step < t_max; ++step) {
      const Index t = reverse ? t_max - 1 - step : step;
      Tensor<S> gates = add(linear(x_t[static_cast<size_t>(t)], wx_[d], bias_[d]),
                            matmul(h, wh_[d], false, true));
      Tensor<S> i_g = sigmoid(slice_cols(gates, 0, hidden_));
      Tensor<S> f_g = sigmoid(slice_cols(gates, hidden_, 2 * hidden_));
      Tensor<S> g_g = tanh(slice_cols(gates, 2 * hidden_, 3 * hidden_));
      Tensor<S> o_g = sigmoid(slice_cols(gates, 3 * hidden_, 4 * hidden_));
      Tensor<S> c_new = add(mul(f_g, c), mul(i_g, g_g));
      Tensor<S> h_new = mul(o_g, tanh(c_new));
      // Gate by validity so padding never touches the state.
      Array<S> m({n}), m_inv({n});
      for (Index i = 0; i < n; ++i) {
        m[i] = mask.at(i, t);
        m_inv[i] = S(1) - m[i];
      }
      h = add(scale_rows(h_new, m), scale_rows(h, std::move(m_inv)));
      Array<S> m2 = m;
      Array<S> m2_inv({n});
      for (Index i = 0; i < n; ++i) m2_inv[i] = S(1) - m2[i];
      c = add(scale_rows(c_new, std::move(m2)), scale_rows(c, std::move(m2_inv)));
      h_out[static_cast<size_t>(t)] = h;
    }
    final_h = h;
  }

  Index vocab_ = 0, dim_ = 0, hidden_ = 0;
  Tensor<S> embed_;
  Tensor<S> wx_[2], wh_[2], bias_[2];
};

// Small convolutional image encoder: strided 4x4 blocks down to a 4x4 grid,
// a 1x1 projection for region features and a pooled projection for the
// global feature. Trained jointly with everything else.
template <typename S>
class ImageEncoder {
public:
  ImageEncoder() = default;

  ImageEncoder(Index resolution, Index text_dim, std::uint64_t seed,
               const std::string& name = "image_encoder")
      : resolution_(resolution), dim_(text_dim) {
    SEGATTN_CHECK(resolution >= 8 && (resolution & (resolution - 1)) == 0,
                  "image encoder resolution must be a power of two >= 8");
    Index ch = 3, res = resolution, width = 32;
    int bi = 0;
    while (res > 4) {
      blocks_.emplace_back(name + "/down" + std::to_string(bi), width, ch, 4, 2, 1, seed);
      ch = width;
      width = std::min<Index>(width * 2, 128);
      res /= 2;
      ++bi;
    }
    trunk_out_ = ch;
    region_proj_ = Conv2dLayer<S>(name + "/region_proj", dim_, ch, 1, 1, 0, seed);
    global_proj_ = LinearLayer<S>(name + "/global_proj", dim_, ch, seed);
  }

  ImageEmbedding<S> encode(const Tensor<S>& images) const {
    SEGATTN_CHECK(images.value().rank() == 4 && images.dim(1) == 3,
                  "image encoder expects {N,3,H,W}");
    SEGATTN_CHECK(images.dim(2) == resolution_ && images.dim(3) == resolution_,
                  "image encoder expects " << resolution_ << "x" << resolution_
                                           << ", got " << images.dim(2) << "x"
                                           << images.dim(3));
    Tensor<S> h = images;
    for (const auto& blk : blocks_) h = leaky_relu(blk(h), S(0.2));
    const Index n = h.dim(0);
    Tensor<S> regions = region_proj_(h);  // {N, D, 4, 4}
    ImageEmbedding<S> out;
    out.regions = permute_021(reshape(regions, {n, dim_, Index(16)}));  // {N,16,D}
    out.global = global_proj_(global_avg_pool(h));
    return out;
  }

  void collect(ParamCollection<S>& out, const std::string& name = "image_encoder") {
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(out, name + "/down" + std::to_string(i));
    region_proj_.collect(out, name + "/region_proj");
    global_proj_.collect(out, name + "/global_proj");
  }

  Index region_count() const { return 16; }

private:
  Index resolution_ = 0, dim_ = 0, trunk_out_ = 0;
  std::vector<Conv2dLayer<S>> blocks_;
  Conv2dLayer<S> region_proj_;
  LinearLayer<S> global_proj_;
};

}  // namespace segattn
