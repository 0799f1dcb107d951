// Command-line entry point: dataset synthesis, training, sampling,
// evaluation, and the built-in verification suites.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "segattn/eval_harness.hpp"
#include "segattn/verify.hpp"

namespace fs = std::filesystem;
using namespace segattn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

std::string resolve_manifest(const std::string& data) {
  if (fs::is_directory(data)) return (fs::path(data) / "manifest.json").string();
  return data;
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

void write_image_png(const std::string& path, const ArrayF& images, Index i) {
  const Index h = images.dim(2), w = images.dim(3);
  std::vector<std::uint8_t> planar(static_cast<size_t>(3) * h * w);
  for (Index p = 0; p < 3 * h * w; ++p)
    planar[static_cast<size_t>(p)] =
        signed_to_u8(images[i * 3 * h * w + p]);
  write_png_rgb(path, planar.data(), static_cast<int>(h), static_cast<int>(w));
}

// Argmax-class visualization of a soft mask, tinted with palette colors.
void write_mask_png(const std::string& path, const ArrayF& masks, Index i) {
  const Index c = masks.dim(1), h = masks.dim(2), w = masks.dim(3);
  const auto& palette = shapes_palette();
  std::vector<std::uint8_t> planar(static_cast<size_t>(3) * h * w);
  const size_t plane = static_cast<size_t>(h) * w;
  for (Index p = 0; p < h * w; ++p) {
    Index best = 0;
    for (Index ch = 1; ch < c; ++ch)
      if (masks[(i * c + ch) * h * w + p] > masks[(i * c + best) * h * w + p])
        best = ch;
    std::uint8_t r = 40, g = 40, b = 40;  // background: dark gray
    if (best > 0) {
      const auto& col = palette[static_cast<size_t>((best - 1) * 2)];
      r = col.r;
      g = col.g;
      b = col.b;
    }
    planar[static_cast<size_t>(p)] = r;
    planar[plane + static_cast<size_t>(p)] = g;
    planar[2 * plane + static_cast<size_t>(p)] = b;
  }
  write_png_rgb(path, planar.data(), static_cast<int>(h), static_cast<int>(w));
}

int cmd_synth_data(const std::string& config_path, long count,
                   const std::string& out_dir) {
  return run_guarded([&]() {
    TrainConfig cfg = load_config_file(config_path);
    DatasetManifest manifest = render_dataset(cfg, count, out_dir);
    std::cout << "manifest: " << (fs::path(out_dir) / "manifest.json").string()
              << "\n"
              << "entries: " << manifest.entries.size() << "\n"
              << "config_hash: " << manifest.config_hash << "\n";
    return kExitOk;
  });
}

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& out_dir, const std::string& mode_override,
              const std::string& resume, bool ablate) {
  return run_guarded([&]() {
    TrainConfig cfg = load_config_file(config_path);
    if (!mode_override.empty()) {
      if (mode_override == "dataset_mask") cfg.mode = MaskMode::kDatasetMask;
      else if (mode_override == "self_attention") cfg.mode = MaskMode::kSelfAttention;
      else throw CheckError("unknown mode '" + mode_override + "'");
    }
    if (ablate) cfg.ablate_seg_attention = true;
    TrainingResult result =
        run_training<float>(cfg, resolve_manifest(data), out_dir, resume);
    std::cout << "final_checkpoint: " << result.final_checkpoint << "\n"
              << "metrics: " << result.metrics_path << "\n";
    return kExitOk;
  });
}

int cmd_sample(const std::string& checkpoint, const std::string& captions_file,
               const std::string& masks_dir, const std::string& out_dir,
               std::uint64_t seed) {
  // Mode/flag consistency is a usage question, so settle it before any work.
  CheckpointContent<float> content;
  TrainConfig cfg;
  try {
    content = load_checkpoint<float>(checkpoint);
    cfg = validate_config(parse_key_value_text(content.config_text));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  if (cfg.mode == MaskMode::kDatasetMask && masks_dir.empty()) {
    std::cerr << "error: dataset_mask checkpoints require --masks-dir\n";
    return kExitUsage;
  }
  if (cfg.mode == MaskMode::kSelfAttention && !masks_dir.empty()) {
    std::cerr << "error: self_attention checkpoints forbid --masks-dir\n";
    return kExitUsage;
  }

  return run_guarded([&]() {
    auto trainer = std::make_unique<Trainer<float>>(cfg);
    trainer->restore(content);

    std::ifstream in(captions_file);
    if (!in) throw IoError("cannot open captions file: " + captions_file);
    std::vector<std::string> captions;
    std::string line;
    while (std::getline(in, line)) {
      if (!detail::trim(line).empty()) captions.push_back(detail::trim(line));
    }
    SEGATTN_CHECK(!captions.empty(), "captions file is empty");

    const Vocabulary vocab = shapes_vocabulary();
    const Index n = static_cast<Index>(captions.size());
    const Index res = cfg.final_resolution();
    std::vector<std::vector<Index>> ids(static_cast<size_t>(n));
    std::vector<int> lengths(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) {
      int unknown = 0;
      TokenSequence seq = tokenize(vocab, captions[static_cast<size_t>(i)],
                                   TrainConfig::kTMax, true, &unknown);
      if (unknown > 0)
        SEGATTN_LOG_INFO << "caption " << i << ": " << unknown
                         << " unknown token(s) mapped to <unk>";
      ids[static_cast<size_t>(i)].assign(seq.ids.begin(), seq.ids.end());
      lengths[static_cast<size_t>(i)] = seq.length;
    }

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir);

    TextEmbedding<float> text = trainer->text_encoder().encode(ids, lengths);
    Rng zrng(derive_seed(seed, "cli_sample"));
    Tensor<float> z =
        Tensor<float>::constant(ArrayF::random_normal({n, cfg.latent_dim}, zrng));

    std::vector<Tensor<float>> masks;
    if (cfg.mode == MaskMode::kSelfAttention) {
      masks = trainer->mask_generator()->forward(z, text.sentence);
    } else {
      const auto resolutions = cfg.stage_resolutions();
      for (int r : resolutions) {
        ArrayF level({n, cfg.seg_classes, r, r});
        for (Index i = 0; i < n; ++i) {
          char name[16];
          std::snprintf(name, sizeof(name), "%05lld.png",
                        static_cast<long long>(i));
          int h = 0, w = 0;
          auto raw = read_png_gray((fs::path(masks_dir) / name).string(), &h, &w);
          SEGATTN_CHECK(h == res && w == res,
                        "mask " << name << " must be " << res << "x" << res);
          ArrayF full = mask_to_label_map<float>(raw.data(), res, res, cfg.seg_classes);
          ArrayF lvl = (r == res) ? full : nearest_resample(full, r, r);
          std::copy_n(lvl.data(), lvl.size(), level.data() + i * lvl.size());
        }
        masks.push_back(Tensor<float>::constant(std::move(level)));
      }
    }

    GeneratorOutput<float> gen =
        trainer->generator().forward(z, text, masks, BnMode::kEval);
    for (Index i = 0; i < n; ++i) {
      for (size_t s = 0; s < gen.images.size(); ++s) {
        char name[48];
        std::snprintf(name, sizeof(name), "sample_%05lld_stage%zu.png",
                      static_cast<long long>(i), s);
        write_image_png((fs::path(out_dir) / name).string(),
                        gen.images[s].value(), i);
      }
      if (cfg.mode == MaskMode::kSelfAttention) {
        char name[48];
        std::snprintf(name, sizeof(name), "sample_%05lld_mask.png",
                      static_cast<long long>(i));
        write_mask_png((fs::path(out_dir) / name).string(),
                       masks.back().value(), i);
      }
    }
    std::cout << "wrote " << n * static_cast<Index>(gen.images.size())
              << " images to " << out_dir << "\n";
    return kExitOk;
  });
}

int cmd_eval(const std::string& checkpoint, const std::string& data,
             std::vector<std::string> metrics, const std::string& out_dir,
             long samples) {
  // Validate the metric list up front: unknown names are a usage error.
  if (metrics.empty()) metrics = {"is", "rprec", "iou"};
  for (const auto& m : metrics) {
    if (m != "is" && m != "rprec" && m != "iou") {
      std::cerr << "error: unknown metric '" << m << "' (expected is, rprec, iou)\n";
      return kExitUsage;
    }
  }
  return run_guarded([&]() {
    auto trainer = Trainer<float>::from_checkpoint(checkpoint);
    const TrainConfig& cfg = trainer->config();
    DatasetManifest manifest = load_manifest(resolve_manifest(data));
    check_dataset_matches_config(manifest, cfg);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir);

    const int n = static_cast<int>(samples);
    std::vector<Scene> scenes = make_heldout_scenes(cfg, n);
    ArrayF generated_masks;
    std::vector<ArrayF> stages = generate_for_scenes(
        *trainer, scenes, /*z_label_seed=*/1, &generated_masks);
    const ArrayF& final_images = stages.back();

    for (const auto& metric : metrics) {
      if (metric == "is") {
        const std::string clf_path =
            (fs::path(manifest.root_dir) / "eval_classifier.ckpt").string();
        ShapesClassifier<float> clf;
        if (fs::exists(clf_path)) {
          clf = ShapesClassifier<float>::load(clf_path, cfg.final_resolution(),
                                              scene_class_count());
        } else {
          SEGATTN_LOG_INFO << "training evaluation classifier -> " << clf_path;
          DatasetCache cache(manifest);
          clf = train_eval_classifier<float>(cache, cfg);
          clf.save(clf_path, 0);
        }
        // Chunked posteriors.
        ArrayF post({static_cast<Index>(n), scene_class_count()});
        const Index chunk = 64, per = final_images.size() / n;
        for (Index lo = 0; lo < n; lo += chunk) {
          const Index hi = std::min<Index>(n, lo + chunk);
          ArrayF part({hi - lo, 3, cfg.final_resolution(), cfg.final_resolution()});
          std::copy_n(final_images.data() + lo * per, (hi - lo) * per, part.data());
          ArrayF p = classifier_posteriors(clf, part);
          std::copy_n(p.data(), p.size(), post.data() + lo * post.dim(1));
        }
        MetricResult r = inception_score(post, 10);
        write_metric_json((fs::path(out_dir) / "inception_score.json").string(), r,
                          cfg.data_hash(), checkpoint);
        std::cout << r.name << ": " << r.value << " +- " << r.dispersion << "\n";
      } else if (metric == "rprec") {
        ArrayF img_emb = encode_image_globals(*trainer, final_images);
        ArrayF sent_emb = encode_caption_sentences(*trainer, scenes);
        ArrayF distractors =
            sample_distractors(sent_emb, 9, derive_seed(cfg.seed, "distractors"));
        MetricResult r = r_precision(img_emb, sent_emb, distractors);
        r.name = "r_precision";
        write_metric_json((fs::path(out_dir) / "r_precision.json").string(), r,
                          cfg.data_hash(), checkpoint);
        std::cout << r.name << ": " << r.value << " +- " << r.dispersion << "\n";
      } else {
        SEGATTN_CHECK(cfg.mode == MaskMode::kDatasetMask,
                      "mask_iou requires a dataset_mask checkpoint (self-attention "
                      "runs generate their own masks)");
        ArrayF input_masks = scenes_to_label_maps<float>(scenes, cfg);
        std::vector<SampleColorMap> cmaps;
        for (const auto& sc : scenes) cmaps.push_back(scene_color_map(sc));
        MetricResult r = mask_iou(final_images, input_masks, cmaps);
        write_metric_json((fs::path(out_dir) / "mask_iou.json").string(), r,
                          cfg.data_hash(), checkpoint);
        std::cout << r.name << ": " << r.value << " +- " << r.dispersion << "\n";
      }
    }
    return kExitOk;
  });
}

int cmd_verify(std::vector<std::string> suites) {
  if (suites.empty()) suites = {"oracle", "gradcheck", "losses"};
  for (const auto& s : suites) {
    if (s != "oracle" && s != "gradcheck" && s != "losses") {
      std::cerr << "error: unknown suite '" << s
                << "' (expected oracle, gradcheck, losses)\n";
      return kExitUsage;
    }
  }
  return run_guarded([&]() {
    bool ok = true;
    for (const auto& s : suites) {
      std::vector<verify::CheckResult> results;
      if (s == "oracle") results = verify::run_oracle_suite();
      else if (s == "gradcheck") results = verify::run_gradcheck_suite();
      else results = verify::run_losses_suite();
      for (const auto& r : results) {
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << s << ": " << r.name;
        if (!r.pass && !r.detail.empty()) std::cout << " -- " << r.detail;
        std::cout << "\n";
        ok = ok && r.pass;
      }
    }
    return ok ? kExitOk : kExitRuntime;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SegAttnGAN: segmentation-attention text-to-image synthesis"};
  app.require_subcommand(1);

  std::string config_path, data, out_dir, mode_override, resume, checkpoint;
  std::string captions_file, masks_dir;
  std::vector<std::string> metrics, suites;
  long count = 1000, samples = 512;
  std::uint64_t seed = 0;
  bool ablate = false;

  auto* synth = app.add_subcommand("synth-data", "Render a ShapesWorld dataset");
  synth->add_option("--config", config_path, "Config file")->required();
  synth->add_option("--count", count, "Number of scenes")->required();
  synth->add_option("--out", out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train on a rendered dataset");
  train->add_option("--config", config_path, "Config file")->required();
  train->add_option("--data", data, "Dataset directory or manifest.json")->required();
  train->add_option("--out", out_dir, "Run output directory")->required();
  train->add_option("--mode", mode_override,
                    "Override mode: dataset_mask | self_attention");
  train->add_option("--resume", resume, "Checkpoint to resume from");
  train->add_flag("--ablate-seg-attention", ablate,
                  "Freeze segmentation attention at identity (ablation)");

  auto* sample = app.add_subcommand("sample", "Generate images from captions");
  sample->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  sample->add_option("--captions-file", captions_file, "One caption per line")
      ->required();
  sample->add_option("--masks-dir", masks_dir,
                     "Directory of NNNNN.png class-id masks (dataset_mask mode)");
  sample->add_option("--out", out_dir, "Output directory")->required();
  sample->add_option("--seed", seed, "Latent seed");

  auto* eval = app.add_subcommand("eval", "Evaluate a trained checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  eval->add_option("--data", data, "Dataset directory or manifest.json")->required();
  eval->add_option("--metrics", metrics, "Metrics: is, rprec, iou")
      ->delimiter(',');
  eval->add_option("--out", out_dir, "Output directory")->required();
  eval->add_option("--samples", samples, "Held-out sample count");

  auto* verify_cmd = app.add_subcommand("verify", "Run built-in check suites");
  verify_cmd->add_option("--suite", suites, "Suites: oracle, gradcheck, losses")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (synth->parsed()) return cmd_synth_data(config_path, count, out_dir);
  if (train->parsed())
    return cmd_train(config_path, data, out_dir, mode_override, resume, ablate);
  if (sample->parsed())
    return cmd_sample(checkpoint, captions_file, masks_dir, out_dir, seed);
  if (eval->parsed()) return cmd_eval(checkpoint, data, metrics, out_dir, samples);
  if (verify_cmd->parsed()) return cmd_verify(suites);
  return kExitUsage;
}
