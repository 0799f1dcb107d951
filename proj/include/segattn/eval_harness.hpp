#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "segattn/metrics.hpp"
#include "segattn/trainer.hpp"

namespace segattn {

// Evaluation-side glue: held-out scene sets, chunked generation with a
// trained checkpoint, embedding extraction, and metric JSON emission.

inline std::vector<Scene> make_heldout_scenes(const TrainConfig& cfg, int count,
                                              const std::string& label = "heldout") {
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    scenes.push_back(generate_scene(
        derive_seed(cfg.seed, label, static_cast<std::uint64_t>(i)), cfg));
  return scenes;
}

template <typename S>
Array<S> scenes_to_label_maps(const std::vector<Scene>& scenes,
                              const TrainConfig& cfg) {
  const Index n = static_cast<Index>(scenes.size());
  const Index res = cfg.final_resolution();
  Array<S> out({n, cfg.seg_classes, res, res});
  for (Index i = 0; i < n; ++i) {
    Array<S> m = mask_to_label_map<S>(scenes[static_cast<size_t>(i)].raw_mask.data(),
                                      res, res, cfg.seg_classes);
    std::copy_n(m.data(), m.size(), out.data() + i * m.size());
  }
  return out;
}

template <typename S>
Array<S> scenes_to_images(const std::vector<Scene>& scenes, const TrainConfig& cfg) {
  const Index n = static_cast<Index>(scenes.size());
  const Index res = cfg.final_resolution();
  Array<S> out({n, 3, res, res});
  for (Index i = 0; i < n; ++i)
    for (Index p = 0; p < 3 * res * res; ++p)
      out[i * 3 * res * res + p] =
          u8_to_signed<S>(scenes[static_cast<size_t>(i)].image[static_cast<size_t>(p)]);
  return out;
}

// Generated images at every stage for a set of (caption, mask) pairs. In
// self_attention mode the masks come from G_s; `generated_masks` (optional)
// receives the final-stage G_s soft masks.
template <typename S>
std::vector<Array<S>> generate_for_scenes(Trainer<S>& trainer,
                                          const std::vector<Scene>& scenes,
                                          std::uint64_t z_label_seed,
                                          Array<S>* generated_masks = nullptr,
                                          Index chunk = 16) {
  const TrainConfig& cfg = trainer.config();
  const Index n = static_cast<Index>(scenes.size());
  const auto resolutions = cfg.stage_resolutions();
  std::vector<Array<S>> out;
  for (int r : resolutions) out.emplace_back(Shape{n, 3, r, r});
  if (generated_masks)
    *generated_masks = Array<S>({n, cfg.seg_classes, resolutions.back(), resolutions.back()});

  Rng zrng(derive_seed(cfg.seed, "sample_z", z_label_seed));
  for (Index lo = 0; lo < n; lo += chunk) {
    const Index hi = std::min(n, lo + chunk);
    const Index m = hi - lo;

    std::vector<std::vector<Index>> ids(static_cast<size_t>(m));
    std::vector<int> lengths(static_cast<size_t>(m));
    for (Index i = 0; i < m; ++i) {
      const auto& sc = scenes[static_cast<size_t>(lo + i)];
      ids[static_cast<size_t>(i)].assign(sc.tokens.ids.begin(), sc.tokens.ids.end());
      lengths[static_cast<size_t>(i)] = sc.tokens.length;
    }
    TextEmbedding<S> text = trainer.text_encoder().encode(ids, lengths);
    Tensor<S> z = Tensor<S>::constant(
        Array<S>::random_normal({m, cfg.latent_dim}, zrng));

    std::vector<Tensor<S>> masks;
    if (cfg.mode == MaskMode::kSelfAttention) {
      masks = trainer.mask_generator()->forward(z, text.sentence);
    } else {
      for (size_t li = 0; li < resolutions.size(); ++li) {
        const Index r = resolutions[li];
        Array<S> level({m, cfg.seg_classes, r, r});
        for (Index i = 0; i < m; ++i) {
          const auto& sc = scenes[static_cast<size_t>(lo + i)];
          Array<S> full = mask_to_label_map<S>(
              sc.raw_mask.data(), cfg.final_resolution(), cfg.final_resolution(),
              cfg.seg_classes);
          Array<S> lvl = (r == cfg.final_resolution())
                             ? full
                             : nearest_resample(full, r, r);
          std::copy_n(lvl.data(), lvl.size(), level.data() + i * lvl.size());
        }
        masks.push_back(Tensor<S>::constant(std::move(level)));
      }
    }

    GeneratorOutput<S> gen = trainer.generator().forward(z, text, masks, BnMode::kEval);
    for (size_t li = 0; li < out.size(); ++li) {
      const Index sz = gen.images[li].value().size() / m;
      std::copy_n(gen.images[li].value().data(), m * sz,
                  out[li].data() + lo * sz);
    }
    if (generated_masks && cfg.mode == MaskMode::kSelfAttention) {
      const Index sz = masks.back().value().size() / m;
      std::copy_n(masks.back().value().data(), m * sz,
                  generated_masks->data() + lo * sz);
    }
  }
  return out;
}

// Global image embeddings for generated images, chunked.
template <typename S>
Array<S> encode_image_globals(Trainer<S>& trainer, const Array<S>& images,
                              Index chunk = 32) {
  const Index n = images.dim(0);
  const Index d = trainer.config().text_dim;
  Array<S> out({n, d});
  const Index per = images.size() / n;
  for (Index lo = 0; lo < n; lo += chunk) {
    const Index hi = std::min(n, lo + chunk);
    Array<S> part({hi - lo, images.dim(1), images.dim(2), images.dim(3)});
    std::copy_n(images.data() + lo * per, (hi - lo) * per, part.data());
    ImageEmbedding<S> emb = trainer.image_encoder().encode(Tensor<S>::constant(part));
    std::copy_n(emb.global.value().data(), (hi - lo) * d, out.data() + lo * d);
  }
  return out;
}

// Sentence embeddings for the scenes' captions.
template <typename S>
Array<S> encode_caption_sentences(Trainer<S>& trainer,
                                  const std::vector<Scene>& scenes,
                                  Index chunk = 64) {
  const Index n = static_cast<Index>(scenes.size());
  const Index d = trainer.config().text_dim;
  Array<S> out({n, d});
  for (Index lo = 0; lo < n; lo += chunk) {
    const Index hi = std::min(n, lo + chunk);
    std::vector<std::vector<Index>> ids(static_cast<size_t>(hi - lo));
    std::vector<int> lengths(static_cast<size_t>(hi - lo));
    for (Index i = 0; i < hi - lo; ++i) {
      const auto& sc = scenes[static_cast<size_t>(lo + i)];
      ids[static_cast<size_t>(i)].assign(sc.tokens.ids.begin(), sc.tokens.ids.end());
      lengths[static_cast<size_t>(i)] = sc.tokens.length;
    }
    TextEmbedding<S> text = trainer.text_encoder().encode(ids, lengths);
    std::copy_n(text.sentence.value().data(), (hi - lo) * d, out.data() + lo * d);
  }
  return out;
}

// Distractor sets: R-1 sentence embeddings drawn from other samples.
template <typename S>
Array<S> sample_distractors(const Array<S>& sentences, Index r_minus_1,
                            std::uint64_t seed) {
  const Index n = sentences.dim(0), d = sentences.dim(1);
  SEGATTN_CHECK(n >= 2, "need at least 2 captions for distractors");
  Rng rng(seed);
  Array<S> out({n, r_minus_1, d});
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < r_minus_1; ++j) {
      Index pick = i;
      while (pick == i) pick = static_cast<Index>(rng.uniform_int(n));
      std::copy_n(sentences.data() + pick * d, d,
                  out.data() + (i * r_minus_1 + j) * d);
    }
  return out;
}

inline void write_metric_json(const std::string& path, const MetricResult& m,
                              std::uint64_t config_hash,
                              const std::string& checkpoint_path) {
  nlohmann::json j;
  j["name"] = m.name;
  j["value"] = m.value;
  j["dispersion"] = m.dispersion;
  j["sample_count"] = m.sample_count;
  j["config_hash"] = std::to_string(config_hash);
  j["checkpoint_path"] = checkpoint_path;
  write_text_atomic(path, j.dump(2) + "\n");
}

}  // namespace segattn
