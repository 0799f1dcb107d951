#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "segattn/adam.hpp"
#include "segattn/checkpoint.hpp"
#include "segattn/dataset.hpp"
#include "segattn/losses.hpp"

namespace segattn {

// Owns every network, the optimizers, step counter, and RNG stream; one
// train_step runs the alternating min-max update of Eq. 2: discriminators
// first on detached fakes (Eq. 4), then the generator side on Eq. 5.
template <typename S>
class Trainer {
public:
  explicit Trainer(const TrainConfig& cfg)
      : cfg_(cfg),
        rng_(derive_seed(cfg.seed, "train")),
        gen_(cfg, cfg.seed),
        text_(shapes_vocabulary().size(), cfg.text_dim, cfg.seed),
        img_(cfg.final_resolution(), cfg.text_dim, cfg.seed) {
    damsm_.gamma1 = static_cast<S>(cfg.damsm_gamma1);
    damsm_.gamma2 = static_cast<S>(cfg.damsm_gamma2);
    damsm_.gamma3 = static_cast<S>(cfg.damsm_gamma3);
    const auto resolutions = cfg.stage_resolutions();
    for (int i = 0; i < cfg.stage_count; ++i)
      discs_.emplace_back("disc" + std::to_string(i), 3, resolutions[static_cast<size_t>(i)],
                          cfg.text_dim, cfg.seed);
    if (cfg.mode == MaskMode::kSelfAttention) {
      gs_ = std::make_unique<SelfAttnGenerator<S>>(cfg, cfg.seed);
      for (int i = 0; i < cfg.stage_count; ++i)
        mask_discs_.emplace_back("mask_disc" + std::to_string(i), cfg.seg_classes,
                                 resolutions[static_cast<size_t>(i)], cfg.text_dim,
                                 cfg.seed);
    }

    ParamCollection<S> gside;
    gen_.collect(gside, "generator");
    text_.collect(gside, "text_encoder");
    img_.collect(gside, "image_encoder");
    if (gs_) gs_->collect(gside, "mask_generator");
    opt_g_ = AdamOptimizer<S>(gside.params, static_cast<S>(cfg.learning_rate),
                              static_cast<S>(cfg.adam_beta1));

    for (int i = 0; i < cfg.stage_count; ++i) {
      ParamCollection<S> dside;
      discs_[static_cast<size_t>(i)].collect(dside, "disc" + std::to_string(i));
      opt_d_.emplace_back(dside.params, static_cast<S>(cfg.learning_rate),
                          static_cast<S>(cfg.adam_beta1));
    }
    for (size_t i = 0; i < mask_discs_.size(); ++i) {
      ParamCollection<S> dside;
      mask_discs_[i].collect(dside, "mask_disc" + std::to_string(i));
      opt_d_.emplace_back(dside.params, static_cast<S>(cfg.learning_rate),
                          static_cast<S>(cfg.adam_beta1));
    }
  }

  const TrainConfig& config() const { return cfg_; }
  std::uint64_t iteration() const { return iteration_; }
  Generator<S>& generator() { return gen_; }
  SelfAttnGenerator<S>* mask_generator() { return gs_.get(); }
  TextEncoder<S>& text_encoder() { return text_; }
  ImageEncoder<S>& image_encoder() { return img_; }
  std::vector<Discriminator<S>>& discriminators() { return discs_; }
  std::vector<Discriminator<S>>& mask_discriminators() { return mask_discs_; }
  Rng& rng() { return rng_; }

  // Mask pyramid tensors for the generator, per mode: dataset label maps as
  // constants, or G_s soft masks (kept attached so adversarial gradients on
  // the images flow through the masks into G_s).
  std::vector<Tensor<S>> masks_for_generator(const Batch<S>& batch,
                                             const Tensor<S>& z,
                                             const TextEmbedding<S>& text) {
    std::vector<Tensor<S>> masks;
    if (cfg_.mode == MaskMode::kSelfAttention) {
      masks = gs_->forward(z, text.sentence);
    } else {
      for (const auto& level : batch.mask_pyramid)
        masks.push_back(Tensor<S>::constant(level));
    }
    return masks;
  }

  LossReport train_step(const Batch<S>& batch) {
    const Index n = batch.batch_size();
    SEGATTN_CHECK(n >= 1, "empty batch");
    LossReport report;

    Tensor<S> z = Tensor<S>::constant(
        Array<S>::random_normal({n, cfg_.latent_dim}, rng_));
    TextEmbedding<S> text = text_.encode(batch.token_ids, batch.lengths);
    Tensor<S> sent_detached = text.sentence.detach();

    std::vector<Tensor<S>> masks = masks_for_generator(batch, z, text);
    GeneratorOutput<S> fakes = gen_.forward(z, text, masks, BnMode::kTrain);

    // ---- Discriminator updates (fakes detached).
    std::vector<Tensor<S>> d_losses;
    double total_d = 0.0;
    for (int i = 0; i < cfg_.stage_count; ++i) {
      const auto tag = std::to_string(i);
      auto real = discs_[static_cast<size_t>(i)].forward(
          Tensor<S>::constant(batch.image_pyramid[static_cast<size_t>(i)]),
          sent_detached);
      auto fake = discs_[static_cast<size_t>(i)].forward(
          fakes.images[static_cast<size_t>(i)].detach(), sent_detached);
      Tensor<S> ru = scale(mean_log_sigmoid_neg(real.uncond_logit), S(0.5));
      Tensor<S> fu = scale(mean_log_one_minus_sigmoid_neg(fake.uncond_logit), S(0.5));
      Tensor<S> rc = scale(mean_log_sigmoid_neg(real.cond_logit), S(0.5));
      Tensor<S> fc = scale(mean_log_one_minus_sigmoid_neg(fake.cond_logit), S(0.5));
      report.terms["d_real_uncond_" + tag] = static_cast<double>(ru.scalar());
      report.terms["d_fake_uncond_" + tag] = static_cast<double>(fu.scalar());
      report.terms["d_real_cond_" + tag] = static_cast<double>(rc.scalar());
      report.terms["d_fake_cond_" + tag] = static_cast<double>(fc.scalar());
      Tensor<S> ld = add(add(ru, fu), add(rc, fc));
      total_d += static_cast<double>(ld.scalar());
      d_losses.push_back(ld);
    }
    if (cfg_.mode == MaskMode::kSelfAttention) {
      for (int i = 0; i < cfg_.stage_count; ++i) {
        auto real = mask_discs_[static_cast<size_t>(i)].forward(
            Tensor<S>::constant(batch.mask_pyramid[static_cast<size_t>(i)]),
            sent_detached);
        auto fake = mask_discs_[static_cast<size_t>(i)].forward(
            masks[static_cast<size_t>(i)].detach(), sent_detached);
        Tensor<S> ld = discriminator_loss(real, fake);
        report.terms["gs_d_" + std::to_string(i)] = static_cast<double>(ld.scalar());
        total_d += static_cast<double>(ld.scalar());
        d_losses.push_back(ld);
      }
    }
    add_n(d_losses).backward();
    for (auto& opt : opt_d_) {
      opt.step();
      opt.zero_grad();
    }
    report.terms["total_d"] = total_d;

    // ---- Generator-side update on Eq. 5 (D parameters already updated).
    std::vector<Tensor<S>> g_losses;
    for (int i = 0; i < cfg_.stage_count; ++i) {
      const auto tag = std::to_string(i);
      auto fake = discs_[static_cast<size_t>(i)].forward(
          fakes.images[static_cast<size_t>(i)], text.sentence);
      Tensor<S> gu = scale(mean_log_sigmoid_neg(fake.uncond_logit), S(0.5));
      Tensor<S> gc = scale(mean_log_sigmoid_neg(fake.cond_logit), S(0.5));
      report.terms["g_uncond_" + tag] = static_cast<double>(gu.scalar());
      report.terms["g_cond_" + tag] = static_cast<double>(gc.scalar());
      g_losses.push_back(add(gu, gc));
    }
    Tensor<S> l_g = add_n(g_losses);
    report.terms["total_g"] = static_cast<double>(l_g.scalar());

    Tensor<S> objective = l_g;
    double l_gs_value = 0.0;
    if (cfg_.mode == MaskMode::kSelfAttention) {
      std::vector<Tensor<S>> gs_losses;
      for (int i = 0; i < cfg_.stage_count; ++i) {
        auto fake = mask_discs_[static_cast<size_t>(i)].forward(
            masks[static_cast<size_t>(i)], text.sentence);
        Tensor<S> lgs = generator_loss(fake);
        report.terms["gs_g_" + std::to_string(i)] = static_cast<double>(lgs.scalar());
        gs_losses.push_back(lgs);
      }
      Tensor<S> l_gs = add_n(gs_losses);
      l_gs_value = static_cast<double>(l_gs.scalar());
      objective = add(objective, l_gs);
    }
    report.terms["total_gs"] = l_gs_value;

    ImageEmbedding<S> img_emb = img_.encode(fakes.images.back());
    DamsmLoss<S> dl = damsm_loss(img_emb, text, damsm_);
    report.terms["damsm_word"] = static_cast<double>(dl.word_term.scalar());
    report.terms["damsm_sent"] = static_cast<double>(dl.sentence_term.scalar());
    objective = add(objective,
                    scale(add(dl.word_term, dl.sentence_term),
                          static_cast<S>(cfg_.lambda_damsm)));
    report.terms["total"] = total_loss_value(
        report.at("total_g"), l_gs_value, report.at("damsm_word"),
        report.at("damsm_sent"), cfg_.lambda_damsm, cfg_.mode);

    objective.backward();
    opt_g_.step();
    opt_g_.zero_grad();
    // The generator pass also deposited gradients in the discriminators.
    for (auto& opt : opt_d_) opt.zero_grad();

    ++iteration_;
    report.check_finite();
    return report;
  }

  // ---- Checkpointing --------------------------------------------------

  ParamCollection<S> collect_all() {
    ParamCollection<S> all;
    gen_.collect(all, "generator");
    text_.collect(all, "text_encoder");
    img_.collect(all, "image_encoder");
    if (gs_) gs_->collect(all, "mask_generator");
    for (size_t i = 0; i < discs_.size(); ++i)
      discs_[i].collect(all, "disc" + std::to_string(i));
    for (size_t i = 0; i < mask_discs_.size(); ++i)
      mask_discs_[i].collect(all, "mask_disc" + std::to_string(i));
    opt_g_.collect_state(all, "opt_g");
    for (size_t i = 0; i < opt_d_.size(); ++i)
      opt_d_[i].collect_state(all, "opt_d" + std::to_string(i));
    return all;
  }

  void save(const std::string& path) {
    opt_g_.sync_step_to_store();
    for (auto& opt : opt_d_) opt.sync_step_to_store();
    CheckpointContent<S> content;
    content.iteration = iteration_;
    content.config_text = serialize_config(cfg_);
    ParamCollection<S> all = collect_all();
    for (const auto& p : all.params)
      content.tensors.emplace_back(p.name, p.tensor.value());
    for (const auto& s : all.state) content.tensors.emplace_back(s.name, *s.array);
    content.rng_state = rng_.save_state();
    save_checkpoint(path, content);
  }

  void restore(const CheckpointContent<S>& content) {
    std::map<std::string, const Array<S>*> loaded;
    for (const auto& [name, arr] : content.tensors) loaded[name] = &arr;
    ParamCollection<S> all = collect_all();
    auto restore_one = [&](const std::string& name, Array<S>& dst) {
      auto it = loaded.find(name);
      SEGATTN_CHECK(it != loaded.end(), "checkpoint missing tensor '" << name << "'");
      SEGATTN_CHECK(it->second->same_shape(dst),
                    "checkpoint tensor '" << name << "' has shape "
                                          << shape_str(it->second->shape())
                                          << ", expected " << shape_str(dst.shape()));
      dst = *it->second;
    };
    for (auto& p : all.params) restore_one(p.name, p.tensor.value());
    for (auto& s : all.state) restore_one(s.name, *s.array);
    opt_g_.sync_step_from_store();
    for (auto& opt : opt_d_) opt.sync_step_from_store();
    iteration_ = content.iteration;
    rng_.restore_state(content.rng_state);
  }

  static std::unique_ptr<Trainer<S>> from_checkpoint(const std::string& path) {
    CheckpointContent<S> content = load_checkpoint<S>(path);
    TrainConfig cfg = validate_config(parse_key_value_text(content.config_text));
    auto trainer = std::make_unique<Trainer<S>>(cfg);
    trainer->restore(content);
    return trainer;
  }

private:
  TrainConfig cfg_;
  Rng rng_;
  Generator<S> gen_;
  TextEncoder<S> text_;
  ImageEncoder<S> img_;
  std::unique_ptr<SelfAttnGenerator<S>> gs_;
  std::vector<Discriminator<S>> discs_;
  std::vector<Discriminator<S>> mask_discs_;
  AdamOptimizer<S> opt_g_;
  std::vector<AdamOptimizer<S>> opt_d_;
  DamsmParams<S> damsm_;
  std::uint64_t iteration_ = 0;
};

// ---------------------------------------------------------------------------
// Training driver
// ---------------------------------------------------------------------------

struct TrainingResult {
  std::string final_checkpoint;
  std::string metrics_path;
};

// Runs cfg.max_iterations steps against a rendered dataset, streaming the
// loss report to metrics.csv and checkpointing every `checkpoint_every`
// iterations (keeping the most recent `checkpoint_keep`).
template <typename S>
TrainingResult run_training(const TrainConfig& cfg, const std::string& manifest_path,
                            const std::string& out_dir,
                            const std::string& resume_path = "",
                            long checkpoint_every = 500, int checkpoint_keep = 3) {
  namespace fs = std::filesystem;
  DatasetManifest manifest = load_manifest(manifest_path);
  check_dataset_matches_config(manifest, cfg);
  DatasetCache cache(std::move(manifest));

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir);

  auto trainer = std::make_unique<Trainer<S>>(cfg);
  bool resumed = false;
  if (!resume_path.empty()) {
    trainer->restore(load_checkpoint<S>(resume_path));
    resumed = true;
  }

  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  std::ofstream metrics(metrics_path,
                        resumed ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("cannot open " + metrics_path);
  if (!resumed) metrics << "iteration,term,value\n";
  metrics << std::setprecision(10);

  std::vector<std::string> periodic;
  const long start = static_cast<long>(trainer->iteration());
  SEGATTN_LOG_INFO << "training " << to_string(cfg.mode) << " from iteration "
                   << start << " to " << cfg.max_iterations;
  for (long it = start; it < cfg.max_iterations; ++it) {
    std::vector<long> indices(static_cast<size_t>(cfg.batch_size));
    for (auto& idx : indices)
      idx = static_cast<long>(trainer->rng().uniform_int(cache.size()));
    Batch<S> batch = load_batch<S>(cache, indices, cfg);
    LossReport report = trainer->train_step(batch);
    for (const auto& [term, value] : report.terms)
      metrics << (it + 1) << "," << term << "," << value << "\n";
    metrics.flush();

    if (checkpoint_every > 0 && (it + 1) % checkpoint_every == 0 &&
        (it + 1) < cfg.max_iterations) {
      const std::string path =
          (fs::path(out_dir) / ("checkpoint_" + std::to_string(it + 1) + ".ckpt")).string();
      trainer->save(path);
      periodic.push_back(path);
      while (static_cast<int>(periodic.size()) > checkpoint_keep) {
        fs::remove(periodic.front(), ec);
        periodic.erase(periodic.begin());
      }
      SEGATTN_LOG_INFO << "iteration " << (it + 1) << ": total=" << report.at("total")
                       << " total_d=" << report.at("total_d");
    }
  }

  TrainingResult result;
  result.final_checkpoint = (fs::path(out_dir) / "checkpoint_final.ckpt").string();
  result.metrics_path = metrics_path;
  trainer->save(result.final_checkpoint);
  return result;
}

}  // namespace segattn
