#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "segattn/adam.hpp"
#include "segattn/checkpoint.hpp"
#include "segattn/dataset.hpp"
#include "segattn/shapesworld.hpp"

namespace segattn {

struct MetricResult {
  std::string name;
  double value = 0.0;
  double dispersion = 0.0;  // std across splits / binomial std / across samples
  long sample_count = 0;
};

// Inception Score: exp(E_x KL(p(y|x) || p(y))) per split, reported as
// mean +- std over splits. Rows must be probability vectors; a trailing
// partial split is truncated.
template <typename S>
MetricResult inception_score(const Array<S>& posteriors, int splits) {
  SEGATTN_CHECK(posteriors.rank() == 2, "inception_score expects {N,K}");
  const Index n = posteriors.dim(0), k = posteriors.dim(1);
  SEGATTN_CHECK(k >= 2, "inception_score needs K >= 2 classes");
  SEGATTN_CHECK(splits >= 1, "splits must be >= 1");
  for (Index i = 0; i < n; ++i) {
    double sum = 0.0;
    for (Index j = 0; j < k; ++j) {
      const double p = static_cast<double>(posteriors.at(i, j));
      SEGATTN_CHECK(p >= 0.0, "negative posterior at row " << i);
      sum += p;
    }
    SEGATTN_CHECK(std::abs(sum - 1.0) <= 1e-5,
                  "posterior row " << i << " sums to " << sum);
  }
  const Index split_size = n / splits;
  SEGATTN_CHECK(split_size >= 1, "fewer samples than splits");

  std::vector<double> scores;
  for (int s = 0; s < splits; ++s) {
    const Index lo = s * split_size, hi = lo + split_size;
    std::vector<double> marginal(static_cast<size_t>(k), 0.0);
    for (Index i = lo; i < hi; ++i)
      for (Index j = 0; j < k; ++j)
        marginal[static_cast<size_t>(j)] += static_cast<double>(posteriors.at(i, j));
    for (auto& m : marginal) m /= static_cast<double>(split_size);
    double mean_kl = 0.0;
    for (Index i = lo; i < hi; ++i) {
      double kl = 0.0;
      for (Index j = 0; j < k; ++j) {
        const double p = static_cast<double>(posteriors.at(i, j));
        if (p > 0.0) kl += p * std::log(p / marginal[static_cast<size_t>(j)]);
      }
      mean_kl += kl;
    }
    scores.push_back(std::exp(mean_kl / static_cast<double>(split_size)));
  }

  MetricResult r;
  r.name = "inception_score";
  r.sample_count = static_cast<long>(split_size) * splits;
  for (double s : scores) r.value += s;
  r.value /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - r.value) * (s - r.value);
  r.dispersion = std::sqrt(var / static_cast<double>(scores.size()));
  return r;
}

namespace detail {
template <typename S>
double cosine(const S* a, const S* b, Index d) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (Index i = 0; i < d; ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  SEGATTN_CHECK(na > 0.0 && nb > 0.0, "zero-norm embedding in cosine");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}
}  // namespace detail

// R-precision: fraction of samples whose matched text outranks all R-1
// distractors by cosine similarity to the image embedding. Ties count as
// failure.
template <typename S>
MetricResult r_precision(const Array<S>& image_embeds, const Array<S>& matched,
                         const Array<S>& distractors) {
  SEGATTN_CHECK(image_embeds.rank() == 2 && matched.rank() == 2 &&
                    distractors.rank() == 3,
                "r_precision expects {N,D},{N,D},{N,R-1,D}");
  const Index n = image_embeds.dim(0), d = image_embeds.dim(1);
  SEGATTN_CHECK(matched.dim(0) == n && matched.dim(1) == d &&
                    distractors.dim(0) == n && distractors.dim(2) == d,
                "r_precision shape mismatch");
  const Index dr = distractors.dim(1);
  long hits = 0;
  for (Index i = 0; i < n; ++i) {
    const S* img = image_embeds.data() + i * d;
    const double matched_sim = detail::cosine(img, matched.data() + i * d, d);
    bool best = true;
    for (Index j = 0; j < dr && best; ++j) {
      const double sim =
          detail::cosine(img, distractors.data() + (i * dr + j) * d, d);
      if (sim >= matched_sim) best = false;  // strict win required
    }
    if (best) ++hits;
  }
  MetricResult r;
  r.name = "r_precision";
  r.sample_count = static_cast<long>(n);
  r.value = static_cast<double>(hits) / static_cast<double>(n);
  r.dispersion = std::sqrt(std::max(0.0, r.value * (1.0 - r.value) /
                                             static_cast<double>(n)));
  return r;
}

// Caption-derived color assignment for one sample: which palette color each
// nonbackground class wears, plus the background color.
struct SampleColorMap {
  int background_palette = 0;
  std::vector<std::pair<int, int>> class_to_palette;  // (mask class, palette idx)
};

// Shape-control metric: segment the generated image by nearest palette color,
// map object colors to classes via the caption, and compare against the
// input label maps with per-class IoU.
template <typename S>
MetricResult mask_iou(const Array<S>& images, const Array<S>& masks,
                      const std::vector<SampleColorMap>& color_maps) {
  SEGATTN_CHECK(images.rank() == 4 && images.dim(1) == 3, "mask_iou expects {N,3,H,W}");
  SEGATTN_CHECK(masks.rank() == 4, "mask_iou expects {N,C,H,W} masks");
  const Index n = images.dim(0), h = images.dim(2), w = images.dim(3);
  SEGATTN_CHECK(masks.dim(0) == n && masks.dim(2) == h && masks.dim(3) == w,
                "mask_iou image/mask mismatch");
  SEGATTN_CHECK(static_cast<Index>(color_maps.size()) == n, "color map count");
  const Index c_seg = masks.dim(1);
  const auto& palette = shapes_palette();

  // Palette in the same [-1,1] space as the generated images.
  std::vector<std::array<double, 3>> pal;
  for (const auto& p : palette)
    pal.push_back({u8_to_signed<double>(p.r), u8_to_signed<double>(p.g),
                   u8_to_signed<double>(p.b)});

  const Index hw = h * w;
  std::vector<double> per_sample;
  double total = 0.0;
  long count = 0;
  for (Index i = 0; i < n; ++i) {
    // True class per pixel from the one-hot mask.
    std::vector<int> truth(static_cast<size_t>(hw), 0);
    long nonbackground = 0;
    for (Index p = 0; p < hw; ++p) {
      int best = 0;
      S best_v = masks[(i * c_seg) * hw + p];
      for (Index ch = 1; ch < c_seg; ++ch) {
        const S v = masks[(i * c_seg + ch) * hw + p];
        if (v > best_v) {
          best_v = v;
          best = static_cast<int>(ch);
        }
      }
      truth[static_cast<size_t>(p)] = best;
      if (best != 0) ++nonbackground;
    }
    SEGATTN_CHECK(nonbackground > 0, "empty nonbackground mask at sample " << i);

    // Predicted class per pixel by nearest palette color.
    const auto& cmap = color_maps[static_cast<size_t>(i)];
    std::vector<int> palette_to_class(palette.size(), 0);
    for (const auto& [cls, pidx] : cmap.class_to_palette)
      palette_to_class[static_cast<size_t>(pidx)] = cls;
    std::vector<int> pred(static_cast<size_t>(hw), 0);
    for (Index p = 0; p < hw; ++p) {
      const double r = static_cast<double>(images[(i * 3 + 0) * hw + p]);
      const double g = static_cast<double>(images[(i * 3 + 1) * hw + p]);
      const double b = static_cast<double>(images[(i * 3 + 2) * hw + p]);
      int best = 0;
      double best_d = 1e300;
      for (size_t pi = 0; pi < pal.size(); ++pi) {
        const double dr = r - pal[pi][0], dg = g - pal[pi][1], db = b - pal[pi][2];
        const double dist = dr * dr + dg * dg + db * db;
        if (dist < best_d) {
          best_d = dist;
          best = static_cast<int>(pi);
        }
      }
      pred[static_cast<size_t>(p)] = palette_to_class[static_cast<size_t>(best)];
    }

    double sample_iou = 0.0;
    int sample_classes = 0;
    for (Index cls = 1; cls < c_seg; ++cls) {
      long inter = 0, uni = 0;
      for (Index p = 0; p < hw; ++p) {
        const bool t = truth[static_cast<size_t>(p)] == cls;
        const bool q = pred[static_cast<size_t>(p)] == cls;
        if (t && q) ++inter;
        if (t || q) ++uni;
      }
      bool class_in_mask = false;
      for (Index p = 0; p < hw && !class_in_mask; ++p)
        class_in_mask = truth[static_cast<size_t>(p)] == cls;
      if (!class_in_mask) continue;
      const double iou = uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
      sample_iou += iou;
      ++sample_classes;
      total += iou;
      ++count;
    }
    per_sample.push_back(sample_classes > 0 ? sample_iou / sample_classes : 0.0);
  }

  MetricResult r;
  r.name = "mask_iou";
  r.sample_count = static_cast<long>(n);
  r.value = count > 0 ? total / static_cast<double>(count) : 0.0;
  double mean_s = 0.0;
  for (double v : per_sample) mean_s += v;
  mean_s /= static_cast<double>(per_sample.size());
  double var = 0.0;
  for (double v : per_sample) var += (v - mean_s) * (v - mean_s);
  r.dispersion = std::sqrt(var / static_cast<double>(per_sample.size()));
  return r;
}

// Builds the color map for one scene the same way captions describe it.
inline SampleColorMap scene_color_map(const Scene& scene) {
  SampleColorMap m;
  m.background_palette = scene.background_color;
  for (const auto& obj : scene.objects)
    m.class_to_palette.emplace_back(shape_class(obj.shape_kind), obj.color);
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation classifier (shape x color classes) for the Inception Score
// ---------------------------------------------------------------------------

template <typename S>
class ShapesClassifier {
public:
  ShapesClassifier() = default;

  ShapesClassifier(Index resolution, Index classes, std::uint64_t seed)
      : resolution_(resolution), classes_(classes) {
    Index ch = 3, res = resolution, width = 16;
    int bi = 0;
    while (res > 8) {
      blocks_.emplace_back("classifier/down" + std::to_string(bi), width, ch, 4, 2, 1, seed);
      ch = width;
      width = std::min<Index>(width * 2, 64);
      res /= 2;
      ++bi;
    }
    trunk_out_ = ch;
    head_ = LinearLayer<S>("classifier/head", classes, ch, seed);
  }

  Tensor<S> logits(const Tensor<S>& images) const {
    SEGATTN_CHECK(images.dim(2) == resolution_ && images.dim(3) == resolution_,
                  "classifier resolution mismatch");
    Tensor<S> h = images;
    for (const auto& blk : blocks_) h = leaky_relu(blk(h), S(0.2));
    return head_(global_avg_pool(h));
  }

  void collect(ParamCollection<S>& out) {
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(out, "classifier/down" + std::to_string(i));
    head_.collect(out, "classifier/head");
  }

  Index resolution() const { return resolution_; }
  Index classes() const { return classes_; }

  void save(const std::string& path, std::uint64_t iteration) {
    CheckpointContent<S> content;
    content.iteration = iteration;
    content.config_text = "classifier res=" + std::to_string(resolution_) +
                          " classes=" + std::to_string(classes_);
    ParamCollection<S> all;
    collect(all);
    for (const auto& p : all.params)
      content.tensors.emplace_back(p.name, p.tensor.value());
    save_checkpoint(path, content);
  }

  static ShapesClassifier<S> load(const std::string& path, Index resolution,
                                  Index classes) {
    ShapesClassifier<S> c(resolution, classes, 0);
    CheckpointContent<S> content = load_checkpoint<S>(path);
    std::map<std::string, const Array<S>*> loaded;
    for (const auto& [name, arr] : content.tensors) loaded[name] = &arr;
    ParamCollection<S> all;
    c.collect(all);
    for (auto& p : all.params) {
      auto it = loaded.find(p.name);
      SEGATTN_CHECK(it != loaded.end(), "classifier checkpoint missing '" << p.name << "'");
      SEGATTN_CHECK(it->second->same_shape(p.tensor.value()),
                    "classifier tensor '" << p.name << "' shape mismatch");
      p.tensor.value() = *it->second;
    }
    return c;
  }

private:
  Index resolution_ = 0, classes_ = 0, trunk_out_ = 0;
  std::vector<Conv2dLayer<S>> blocks_;
  LinearLayer<S> head_;
};

// Softmax posteriors from classifier logits, row-normalized.
template <typename S>
Array<S> classifier_posteriors(const ShapesClassifier<S>& clf,
                               const Array<S>& images) {
  Tensor<S> lg = clf.logits(Tensor<S>::constant(images));
  Tensor<S> probs = softmax_rows(lg);
  return probs.value();
}

// Mean cross entropy of logits vs integer labels.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
  const Index n = logits.dim(0), k = logits.dim(1);
  Array<S> onehot({n, k});
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    SEGATTN_CHECK(y >= 0 && y < k, "label out of range");
    onehot.at(i, y) = S(1);
  }
  Tensor<S> logp = log(softmax_rows(logits));
  return scale(sum_all(mul_const(logp, onehot)), S(-1) / static_cast<S>(n));
}

// Trains the classifier on the rendered dataset until it clears the held-out
// accuracy floor. Fails loudly if the floor is unreachable in the budget.
template <typename S>
ShapesClassifier<S> train_eval_classifier(const DatasetCache& cache,
                                          const TrainConfig& cfg,
                                          double accuracy_floor = 0.95,
                                          long max_batches = 4000,
                                          double* final_accuracy = nullptr) {
  const Index res = cache.manifest.resolution;
  const Index classes = scene_class_count();
  ShapesClassifier<S> clf(res, classes, derive_seed(cfg.seed, "classifier"));
  ParamCollection<S> params;
  clf.collect(params);
  AdamOptimizer<S> opt(params.params, S(1e-3), S(0.9));
  Rng rng(derive_seed(cfg.seed, "classifier_train"));

  // 90/10 split by shuffled index.
  std::vector<long> order(cache.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<long>(i);
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);
  const size_t train_count = std::max<size_t>(1, order.size() * 9 / 10);
  std::vector<long> train_idx(order.begin(), order.begin() + static_cast<long>(train_count));
  std::vector<long> held_idx(order.begin() + static_cast<long>(train_count), order.end());
  SEGATTN_CHECK(!held_idx.empty(), "dataset too small for a held-out split");

  const Index batch = 32;
  auto make_images = [&](const std::vector<long>& idx) {
    Array<S> imgs({static_cast<Index>(idx.size()), 3, res, res});
    std::vector<int> labels(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
      const auto& u8 = cache.images[static_cast<size_t>(idx[i])];
      for (Index p = 0; p < 3 * res * res; ++p)
        imgs[static_cast<Index>(i) * 3 * res * res + p] =
            u8_to_signed<S>(u8[static_cast<size_t>(p)]);
      labels[i] = cache.manifest.entries[static_cast<size_t>(idx[i])].class_label;
    }
    return std::make_pair(std::move(imgs), std::move(labels));
  };

  auto held_accuracy = [&]() {
    long correct = 0;
    const size_t chunk = 256;
    for (size_t start = 0; start < held_idx.size(); start += chunk) {
      std::vector<long> part(held_idx.begin() + static_cast<long>(start),
                             held_idx.begin() +
                                 static_cast<long>(std::min(start + chunk, held_idx.size())));
      auto [imgs, labels] = make_images(part);
      Array<S> probs = classifier_posteriors(clf, imgs);
      for (Index i = 0; i < probs.dim(0); ++i) {
        Index best = 0;
        for (Index j = 1; j < probs.dim(1); ++j)
          if (probs.at(i, j) > probs.at(i, best)) best = j;
        if (static_cast<int>(best) == labels[static_cast<size_t>(i)]) ++correct;
      }
    }
    return static_cast<double>(correct) / static_cast<double>(held_idx.size());
  };

  double acc = 0.0;
  for (long step = 0; step < max_batches; ++step) {
    std::vector<long> idx(static_cast<size_t>(batch));
    for (auto& v : idx)
      v = train_idx[rng.uniform_int(train_idx.size())];
    auto [imgs, labels] = make_images(idx);
    Tensor<S> loss = cross_entropy(clf.logits(Tensor<S>::constant(imgs)), labels);
    loss.backward();
    opt.step();
    opt.zero_grad();
    if ((step + 1) % 100 == 0) {
      acc = held_accuracy();
      SEGATTN_LOG_DEBUG << "classifier step " << (step + 1) << " held-out acc " << acc;
      if (acc >= accuracy_floor) break;
    }
  }
  if (acc < accuracy_floor) acc = held_accuracy();
  if (final_accuracy) *final_accuracy = acc;
  SEGATTN_CHECK(acc >= accuracy_floor,
                "classifier reached only " << acc << " held-out accuracy (floor "
                                           << accuracy_floor << ")");
  return clf;
}

}  // namespace segattn
