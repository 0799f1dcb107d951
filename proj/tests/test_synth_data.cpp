// synth_data: scene determinism, caption/mask consistency, label maps,
// pyramids, dataset round trips.

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "segattn/dataset.hpp"
#include "segattn/verify.hpp"

using namespace segattn;
namespace fs = std::filesystem;

namespace {

TrainConfig desk_config() {
  return validate_config(parse_key_value_text("profile = desk"));
}

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("segattn_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Scene, SameSeedIsBitIdentical) {
  TrainConfig cfg = desk_config();
  Scene a = generate_scene(991, cfg);
  Scene b = generate_scene(991, cfg);
  EXPECT_EQ(a.caption, b.caption);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.raw_mask, b.raw_mask);
  EXPECT_EQ(a.class_label, b.class_label);
  Scene c = generate_scene(992, cfg);
  EXPECT_NE(a.image, c.image);
}

TEST(Scene, CaptionMaskConsistency) {
  TrainConfig cfg = desk_config();
  const Vocabulary vocab = shapes_vocabulary();
  for (int i = 0; i < 200; ++i) {
    Scene s = generate_scene(derive_seed(5, "consistency", i), cfg);
    // Shape-token set in the caption == nonbackground classes in the mask.
    std::set<int> caption_classes;
    for (const auto& w : split_words(s.caption))
      for (int k = 0; k < kShapeKinds; ++k)
        if (w == shape_name(k)) caption_classes.insert(shape_class(k));
    std::set<int> mask_classes;
    for (std::uint8_t v : s.raw_mask)
      if (v != 0) mask_classes.insert(v);
    EXPECT_EQ(caption_classes, mask_classes) << "seed " << i << ": " << s.caption;
    // Every object class in the caption has nonzero pixel support.
    for (int cls : caption_classes) {
      long cnt = 0;
      for (std::uint8_t v : s.raw_mask) cnt += v == cls;
      EXPECT_GT(cnt, 0);
    }
    for (int id : s.tokens.ids) {
      EXPECT_GE(id, 0);
      EXPECT_LT(id, vocab.size());
    }
  }
}

TEST(Scene, PaletteAndShapeCoverage) {
  TrainConfig cfg = desk_config();
  std::set<int> shapes, colors;
  for (int i = 0; i < 1000; ++i) {
    Scene s = generate_scene(derive_seed(42, "coverage", i), cfg);
    for (const auto& o : s.objects) {
      shapes.insert(o.shape_kind);
      colors.insert(o.color);
    }
  }
  EXPECT_EQ(shapes.size(), 3u);
  EXPECT_EQ(colors.size(), 8u);
}

TEST(LabelMap, OneHotExpansion) {
  std::vector<std::uint8_t> raw = {0, 1, 1, 2};
  ArrayD m = mask_to_label_map<double>(raw.data(), 2, 2, 3);
  EXPECT_EQ(m.shape(), (Shape{3, 2, 2}));
  EXPECT_TRUE(is_valid_label_map(m));
  EXPECT_EQ(m.at(0, 0, 0), 1.0);
  EXPECT_EQ(m.at(1, 0, 1), 1.0);
  EXPECT_EQ(m.at(1, 1, 0), 1.0);
  EXPECT_EQ(m.at(2, 1, 1), 1.0);

  std::vector<std::uint8_t> zeros(9, 0);
  ArrayD z = mask_to_label_map<double>(zeros.data(), 3, 3, 4);
  for (Index p = 0; p < 9; ++p) EXPECT_EQ(z[p], 1.0);
  for (Index p = 9; p < z.size(); ++p) EXPECT_EQ(z[p], 0.0);

  std::vector<std::uint8_t> bad = {5};
  EXPECT_THROW(mask_to_label_map<double>(bad.data(), 1, 1, 3), CheckError);
}

TEST(LabelMap, ArgmaxRoundTripOnRandomMasks) {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::uint8_t> raw(64);
    for (auto& v : raw) v = static_cast<std::uint8_t>(rng.uniform_int(4));
    ArrayD m = mask_to_label_map<double>(raw.data(), 8, 8, 4);
    for (Index p = 0; p < 64; ++p) {
      Index best = 0;
      for (Index c = 1; c < 4; ++c)
        if (m[c * 64 + p] > m[best * 64 + p]) best = c;
      ASSERT_EQ(best, raw[static_cast<size_t>(p)]);
    }
  }
}

TEST(MaskPyramid, LevelsStayOneHotAndDouble) {
  TrainConfig cfg = desk_config();
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Scene s = generate_scene(rng.next_u64(), cfg);
    ArrayD full = mask_to_label_map<double>(s.raw_mask.data(), 64, 64, 4);
    auto levels = build_mask_pyramid(full, cfg);
    ASSERT_EQ(levels.size(), 3u);
    Index side = 16;
    for (const auto& lvl : levels) {
      EXPECT_EQ(lvl.dim(1), side);
      EXPECT_EQ(lvl.dim(2), side);
      EXPECT_TRUE(is_valid_label_map(lvl));
      side *= 2;
    }
  }
  ArrayD constant({4, 64, 64});
  for (Index p = 0; p < 64 * 64; ++p) constant[2 * 64 * 64 + p] = 1.0;
  auto levels = build_mask_pyramid(constant, cfg);
  for (const auto& lvl : levels)
    for (Index p = 0; p < lvl.dim(1) * lvl.dim(2); ++p)
      EXPECT_EQ(lvl[2 * lvl.dim(1) * lvl.dim(2) + p], 1.0);
  ArrayD wrong({4, 32, 32});
  EXPECT_THROW(build_mask_pyramid(wrong, cfg), CheckError);
}

TEST(AreaDownsample, ConstantAndAverage) {
  ArrayD img({1, 2, 2}, 0.25);
  ArrayD down = area_downsample(img, 1, 1);
  EXPECT_DOUBLE_EQ(down[0], 0.25);
  ArrayD img2({1, 2, 2}, {1.0, 3.0, 5.0, 7.0});
  EXPECT_DOUBLE_EQ(area_downsample(img2, 1, 1)[0], 4.0);
}

TEST(Dataset, RenderLoadRoundTrip) {
  TrainConfig cfg = desk_config();
  fs::path dir = temp_dir("roundtrip");
  DatasetManifest manifest = render_dataset(cfg, 10, dir.string());
  EXPECT_EQ(manifest.entries.size(), 10u);

  DatasetManifest loaded = load_manifest((dir / "manifest.json").string());
  EXPECT_EQ(loaded.entries.size(), 10u);
  EXPECT_EQ(loaded.config_hash, cfg.data_hash());
  EXPECT_EQ(loaded.vocab.size(), shapes_vocabulary().size());

  DatasetCache cache(loaded);
  for (size_t i = 0; i < cache.size(); ++i) {
    Scene s = generate_scene(loaded.entries[i].seed, cfg);
    EXPECT_EQ(cache.images[i], s.image) << "image bytes differ at " << i;
    EXPECT_EQ(cache.masks[i], s.raw_mask);
    EXPECT_EQ(loaded.entries[i].caption, s.caption);
  }
  fs::remove_all(dir);
}

TEST(Dataset, ConfigHashGuard) {
  TrainConfig cfg = desk_config();
  fs::path dir = temp_dir("hashguard");
  render_dataset(cfg, 3, dir.string());
  DatasetManifest loaded = load_manifest((dir / "manifest.json").string());
  TrainConfig other = validate_config(
      parse_key_value_text("profile = desk\nbase_resolution = 32"));
  EXPECT_THROW(check_dataset_matches_config(loaded, other), CheckError);
  EXPECT_THROW(load_batch<float>(DatasetCache(loaded), {0}, other), CheckError);
  fs::remove_all(dir);
}

TEST(Dataset, LoadBatchContracts) {
  TrainConfig cfg = desk_config();
  fs::path dir = temp_dir("loadbatch");
  DatasetManifest manifest = render_dataset(cfg, 4, dir.string());
  DatasetCache cache(manifest);
  Batch<float> batch = load_batch<float>(cache, {0}, cfg);
  ASSERT_EQ(batch.image_pyramid.size(), 3u);
  EXPECT_EQ(batch.image_pyramid[0].shape(), (Shape{1, 3, 16, 16}));
  EXPECT_EQ(batch.image_pyramid[1].shape(), (Shape{1, 3, 32, 32}));
  EXPECT_EQ(batch.image_pyramid[2].shape(), (Shape{1, 3, 64, 64}));
  EXPECT_EQ(batch.mask_pyramid[0].shape(), (Shape{1, 4, 16, 16}));
  for (const auto& level : batch.image_pyramid) {
    for (Index i = 0; i < level.size(); ++i) {
      ASSERT_GE(level[i], -1.0f);
      ASSERT_LE(level[i], 1.0f);
    }
  }
  for (const auto& level : batch.mask_pyramid)
    EXPECT_TRUE(is_valid_label_map(level));
  EXPECT_THROW(load_batch<float>(cache, {99}, cfg), CheckError);

  // Full-resolution reload equals the stored bytes exactly.
  const auto& entry = manifest.entries[0];
  int h = 0, w = 0;
  auto file_bytes = read_png_rgb((dir / entry.image_path).string(), &h, &w);
  Scene s = generate_scene(entry.seed, cfg);
  EXPECT_EQ(file_bytes, s.image);
  fs::remove_all(dir);
}

TEST(Dataset, CountMustBePositive) {
  TrainConfig cfg = desk_config();
  fs::path dir = temp_dir("badcount");
  EXPECT_THROW(render_dataset(cfg, 0, dir.string()), CheckError);
  fs::remove_all(dir);
}

TEST(Dataset, DeterministicBytesAcrossRenders) {
  TrainConfig cfg = desk_config();
  fs::path a = temp_dir("det_a"), b = temp_dir("det_b");
  render_dataset(cfg, 5, a.string());
  render_dataset(cfg, 5, b.string());
  for (int i = 0; i < 5; ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "%05d.png", i);
    int h, w;
    EXPECT_EQ(read_png_rgb((a / "images" / name).string(), &h, &w),
              read_png_rgb((b / "images" / name).string(), &h, &w));
    EXPECT_EQ(read_png_gray((a / "masks" / name).string(), &h, &w),
              read_png_gray((b / "masks" / name).string(), &h, &w));
  }
  fs::remove_all(a);
  fs::remove_all(b);
}
