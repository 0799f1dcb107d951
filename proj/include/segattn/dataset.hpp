#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segattn/labelmap.hpp"
#include "segattn/logging.hpp"
#include "segattn/png_io.hpp"
#include "segattn/shapesworld.hpp"

namespace segattn {

constexpr int kManifestVersion = 1;

struct ManifestEntry {
  long index = 0;
  std::uint64_t seed = 0;
  std::string image_path;  // relative to the dataset root
  std::string mask_path;
  std::vector<int> caption_tokens;  // unpadded
  std::string caption;
  int class_label = 0;
};

struct DatasetManifest {
  int version = kManifestVersion;
  std::uint64_t config_hash = 0;
  int resolution = 0;
  int seg_classes = 0;
  Vocabulary vocab;
  std::vector<ManifestEntry> entries;
  std::string root_dir;  // directory holding manifest.json
};

namespace detail {

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["version"] = m.version;
  j["config_hash"] = std::to_string(m.config_hash);
  j["resolution"] = m.resolution;
  j["seg_classes"] = m.seg_classes;
  j["vocabulary"] = m.vocab.tokens();
  auto& entries = j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"index", e.index},
                       {"seed", std::to_string(e.seed)},
                       {"image_path", e.image_path},
                       {"mask_path", e.mask_path},
                       {"caption_tokens", e.caption_tokens},
                       {"caption", e.caption},
                       {"class_label", e.class_label}});
  }
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j,
                                          const std::string& root_dir) {
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  SEGATTN_CHECK(m.version == kManifestVersion,
                "manifest version " << m.version << " unsupported");
  m.config_hash = std::stoull(j.at("config_hash").get<std::string>());
  m.resolution = j.at("resolution").get<int>();
  m.seg_classes = j.at("seg_classes").get<int>();
  const auto tokens = j.at("vocabulary").get<std::vector<std::string>>();
  SEGATTN_CHECK(tokens.size() >= 2 && tokens[0] == "<pad>" && tokens[1] == "<unk>",
                "manifest vocabulary missing reserved tokens");
  for (size_t i = 2; i < tokens.size(); ++i) m.vocab.add(tokens[i]);
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.index = je.at("index").get<long>();
    e.seed = std::stoull(je.at("seed").get<std::string>());
    e.image_path = je.at("image_path").get<std::string>();
    e.mask_path = je.at("mask_path").get<std::string>();
    e.caption_tokens = je.at("caption_tokens").get<std::vector<int>>();
    e.caption = je.at("caption").get<std::string>();
    e.class_label = je.at("class_label").get<int>();
    m.entries.push_back(std::move(e));
  }
  m.root_dir = root_dir;
  return m;
}

inline std::string entry_name(long index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05ld.png", index);
  return buf;
}

}  // namespace detail

inline void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out << text;
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + tmp + " -> " + path);
}

// Renders `count` scenes to out_dir (images/, masks/, manifest.json) and
// returns the manifest. Scene i derives its seed from (config.seed, i).
inline DatasetManifest render_dataset(const TrainConfig& config, long count,
                                      const std::string& out_dir) {
  SEGATTN_CHECK(count > 0, "dataset count must be positive, got " << count);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  fs::create_directories(fs::path(out_dir) / "masks", ec);
  if (ec) throw IoError("cannot create dataset directories under " + out_dir);

  DatasetManifest m;
  m.config_hash = config.data_hash();
  m.resolution = config.final_resolution();
  m.seg_classes = config.seg_classes;
  m.vocab = shapes_vocabulary();
  m.root_dir = out_dir;
  m.entries.reserve(static_cast<size_t>(count));

  for (long i = 0; i < count; ++i) {
    const std::uint64_t seed = derive_seed(config.seed, "scene", static_cast<std::uint64_t>(i));
    Scene scene = generate_scene(seed, config);
    ManifestEntry e;
    e.index = i;
    e.seed = seed;
    e.image_path = "images/" + detail::entry_name(i);
    e.mask_path = "masks/" + detail::entry_name(i);
    e.caption = scene.caption;
    e.caption_tokens.assign(scene.tokens.ids.begin(),
                            scene.tokens.ids.begin() + scene.tokens.length);
    e.class_label = scene.class_label;
    write_png_rgb((fs::path(out_dir) / e.image_path).string(), scene.image.data(),
                  scene.resolution, scene.resolution);
    write_png_gray((fs::path(out_dir) / e.mask_path).string(),
                   scene.raw_mask.data(), scene.resolution, scene.resolution);
    m.entries.push_back(std::move(e));
  }

  write_text_atomic((fs::path(out_dir) / "manifest.json").string(),
                    detail::manifest_to_json(m).dump(2));
  SEGATTN_LOG_DEBUG << "rendered " << count << " scenes to " << out_dir;
  return m;
}

inline DatasetManifest load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest: " + manifest_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw IoError("malformed manifest " + manifest_path + ": " + e.what());
  }
  return detail::manifest_from_json(
      j, std::filesystem::path(manifest_path).parent_path().string());
}

inline void check_dataset_matches_config(const DatasetManifest& m,
                                         const TrainConfig& config) {
  SEGATTN_CHECK(m.config_hash == config.data_hash(),
                "dataset config hash " << m.config_hash
                                       << " does not match config " << config.data_hash());
}

// In-memory u8 copy of the dataset; decoded once, shared by every batch.
struct DatasetCache {
  DatasetManifest manifest;
  std::vector<std::vector<std::uint8_t>> images;  // planar 3*R*R
  std::vector<std::vector<std::uint8_t>> masks;   // R*R class ids

  explicit DatasetCache(DatasetManifest man) : manifest(std::move(man)) {
    namespace fs = std::filesystem;
    images.reserve(manifest.entries.size());
    masks.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
      int h = 0, w = 0;
      auto img = read_png_rgb((fs::path(manifest.root_dir) / e.image_path).string(), &h, &w);
      SEGATTN_CHECK(h == manifest.resolution && w == manifest.resolution,
                    "image " << e.image_path << " has resolution " << h << "x" << w);
      auto msk = read_png_gray((fs::path(manifest.root_dir) / e.mask_path).string(), &h, &w);
      SEGATTN_CHECK(h == manifest.resolution && w == manifest.resolution,
                    "mask " << e.mask_path << " has resolution " << h << "x" << w);
      images.push_back(std::move(img));
      masks.push_back(std::move(msk));
    }
  }

  size_t size() const { return manifest.entries.size(); }
};

// One training batch: image pyramid (area-averaged, [-1,1]), one-hot mask
// pyramid, padded token ids with lengths, and class labels.
template <typename S>
struct Batch {
  std::vector<Array<S>> image_pyramid;  // per stage {N,3,r,r}
  std::vector<Array<S>> mask_pyramid;   // per stage {N,C_seg,r,r}
  std::vector<std::vector<Index>> token_ids;  // N rows of t_max ids
  Array<S> token_mask;                  // {N,t_max} 1 for valid positions
  std::vector<int> lengths;
  std::vector<int> class_labels;

  Index batch_size() const { return image_pyramid.empty() ? 0 : image_pyramid.back().dim(0); }
};

template <typename S>
Batch<S> load_batch(const DatasetCache& cache, const std::vector<long>& indices,
                    const TrainConfig& config) {
  check_dataset_matches_config(cache.manifest, config);
  const Index n = static_cast<Index>(indices.size());
  SEGATTN_CHECK(n > 0, "empty batch");
  const Index res = cache.manifest.resolution;
  const auto resolutions = config.stage_resolutions();
  const Index c_seg = config.seg_classes;
  const Index t_max = TrainConfig::kTMax;

  Batch<S> batch;
  for (int r : resolutions) {
    batch.image_pyramid.emplace_back(Shape{n, 3, r, r});
    batch.mask_pyramid.emplace_back(Shape{n, c_seg, r, r});
  }
  batch.token_mask = Array<S>({n, t_max});
  batch.lengths.resize(static_cast<size_t>(n));
  batch.class_labels.resize(static_cast<size_t>(n));
  batch.token_ids.resize(static_cast<size_t>(n));

  for (Index bi = 0; bi < n; ++bi) {
    const long idx = indices[static_cast<size_t>(bi)];
    SEGATTN_CHECK(idx >= 0 && idx < static_cast<long>(cache.size()),
                  "dataset index " << idx << " out of range");
    const auto& entry = cache.manifest.entries[static_cast<size_t>(idx)];
    const auto& img_u8 = cache.images[static_cast<size_t>(idx)];
    const auto& msk_u8 = cache.masks[static_cast<size_t>(idx)];

    Array<S> full_img({3, res, res});
    for (Index p = 0; p < 3 * res * res; ++p)
      full_img[p] = u8_to_signed<S>(img_u8[static_cast<size_t>(p)]);
    Array<S> full_mask =
        mask_to_label_map<S>(msk_u8.data(), res, res, static_cast<int>(c_seg));
    auto mask_levels = build_mask_pyramid(full_mask, config);

    for (size_t li = 0; li < resolutions.size(); ++li) {
      const Index r = resolutions[li];
      Array<S> img_level =
          (r == res) ? full_img : area_downsample(full_img, r, r);
      std::copy_n(img_level.data(), img_level.size(),
                  batch.image_pyramid[li].data() + bi * 3 * r * r);
      std::copy_n(mask_levels[li].data(), mask_levels[li].size(),
                  batch.mask_pyramid[li].data() + bi * c_seg * r * r);
    }

    const int len = static_cast<int>(entry.caption_tokens.size());
    SEGATTN_CHECK(len >= 1 && len <= t_max, "caption length " << len);
    batch.lengths[static_cast<size_t>(bi)] = len;
    batch.class_labels[static_cast<size_t>(bi)] = entry.class_label;
    auto& row = batch.token_ids[static_cast<size_t>(bi)];
    row.assign(static_cast<size_t>(t_max), 0);
    for (int t = 0; t < len; ++t) {
      row[static_cast<size_t>(t)] = entry.caption_tokens[static_cast<size_t>(t)];
      batch.token_mask.at(bi, t) = S(1);
    }
  }
  return batch;
}

}  // namespace segattn
