#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "segattn/check.hpp"
#include "segattn/rng.hpp"

namespace segattn {

enum class MaskMode { kDatasetMask, kSelfAttention };
enum class Profile { kDesk, kPaper };

inline std::string to_string(MaskMode m) {
  return m == MaskMode::kDatasetMask ? "dataset_mask" : "self_attention";
}
inline std::string to_string(Profile p) {
  return p == Profile::kDesk ? "desk" : "paper";
}

// Full training/run configuration. Values come from a flat `key = value`
// config file; per-profile defaults fill everything the file leaves out.
struct TrainConfig {
  Profile profile = Profile::kDesk;
  int stage_count = 3;
  int base_resolution = 16;
  int text_dim = 32;
  int latent_dim = 100;
  int seg_classes = 4;
  double lambda_damsm = 5.0;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.5;
  double damsm_gamma1 = 5.0;
  double damsm_gamma2 = 5.0;
  double damsm_gamma3 = 10.0;
  int batch_size = 16;
  long max_iterations = 20000;
  std::uint64_t seed = 42;
  MaskMode mode = MaskMode::kDatasetMask;
  bool ablate_seg_attention = false;

  // Fixed by design, not configurable.
  static constexpr int kTMax = 16;

  int seg_attn_hidden() const { return profile == Profile::kDesk ? 64 : 128; }

  std::vector<int> stage_resolutions() const {
    std::vector<int> r(static_cast<size_t>(stage_count));
    int res = base_resolution;
    for (auto& v : r) {
      v = res;
      res *= 2;
    }
    return r;
  }

  int final_resolution() const {
    return base_resolution << (stage_count - 1);
  }

  // Per-stage generator channel widths, coarse to fine.
  std::vector<int> channel_schedule() const {
    std::vector<int> ch(static_cast<size_t>(stage_count));
    int c = profile == Profile::kDesk ? 128 : 256;
    for (auto& v : ch) {
      v = c;
      c = std::max(16, c / 2);
    }
    return ch;
  }

  // Hash over the fields that determine dataset content and layout. Training
  // hyperparameters are deliberately excluded so one rendered dataset serves
  // every mode, seed, and ablation variant with the same geometry.
  std::uint64_t data_hash() const {
    std::ostringstream os;
    os << "v1|" << stage_count << "|" << base_resolution << "|" << seg_classes
       << "|" << kTMax;
    return fnv1a64(os.str());
  }

  std::uint64_t full_hash() const;
};

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline long parse_long(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    long out = std::stol(v, &pos);
    SEGATTN_CHECK(pos == v.size(), "trailing characters");
    return out;
  } catch (const CheckError&) {
    throw;
  } catch (const std::exception&) {
    throw CheckError("config key '" + key + "': not an integer: '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    SEGATTN_CHECK(pos == v.size(), "trailing characters");
    return out;
  } catch (const CheckError&) {
    throw;
  } catch (const std::exception&) {
    throw CheckError("config key '" + key + "': not a number: '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw CheckError("config key '" + key + "': not a bool: '" + v + "'");
}

}  // namespace detail

// Parses the flat `key = value` document format (UTF-8, '#' comments).
inline KeyValues parse_key_value_text(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    SEGATTN_CHECK(eq != std::string::npos,
                  "config line " << lineno << ": expected 'key = value'");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    SEGATTN_CHECK(!key.empty() && !value.empty(),
                  "config line " << lineno << ": empty key or value");
    SEGATTN_CHECK(!kv.count(key), "duplicate config key '" << key << "'");
    kv[key] = value;
  }
  return kv;
}

// Applies profile defaults, overlays explicit keys, and enforces invariants.
inline TrainConfig validate_config(const KeyValues& raw) {
  auto it = raw.find("profile");
  SEGATTN_CHECK(it != raw.end(), "missing required config key 'profile'");
  TrainConfig cfg;
  if (it->second == "desk") {
    cfg.profile = Profile::kDesk;
  } else if (it->second == "paper") {
    cfg.profile = Profile::kPaper;
    cfg.base_resolution = 64;
    cfg.text_dim = 256;
  } else {
    throw CheckError("unknown profile '" + it->second + "'");
  }

  int explicit_final_resolution = -1;
  for (const auto& [key, value] : raw) {
    if (key == "profile") continue;
    if (key == "stage_count") cfg.stage_count = static_cast<int>(detail::parse_long(key, value));
    else if (key == "base_resolution") cfg.base_resolution = static_cast<int>(detail::parse_long(key, value));
    else if (key == "final_resolution") explicit_final_resolution = static_cast<int>(detail::parse_long(key, value));
    else if (key == "text_dim") cfg.text_dim = static_cast<int>(detail::parse_long(key, value));
    else if (key == "latent_dim") cfg.latent_dim = static_cast<int>(detail::parse_long(key, value));
    else if (key == "seg_classes") cfg.seg_classes = static_cast<int>(detail::parse_long(key, value));
    else if (key == "lambda_damsm") cfg.lambda_damsm = detail::parse_double(key, value);
    else if (key == "learning_rate") cfg.learning_rate = detail::parse_double(key, value);
    else if (key == "adam_beta1") cfg.adam_beta1 = detail::parse_double(key, value);
    else if (key == "damsm_gamma1") cfg.damsm_gamma1 = detail::parse_double(key, value);
    else if (key == "damsm_gamma2") cfg.damsm_gamma2 = detail::parse_double(key, value);
    else if (key == "damsm_gamma3") cfg.damsm_gamma3 = detail::parse_double(key, value);
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(detail::parse_long(key, value));
    else if (key == "max_iterations") cfg.max_iterations = detail::parse_long(key, value);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
    else if (key == "mode") {
      if (value == "dataset_mask") cfg.mode = MaskMode::kDatasetMask;
      else if (value == "self_attention") cfg.mode = MaskMode::kSelfAttention;
      else throw CheckError("unknown mode '" + value + "'");
    } else if (key == "ablate_seg_attention") {
      cfg.ablate_seg_attention = detail::parse_bool(key, value);
    } else {
      throw CheckError("unknown config key '" + key + "'");
    }
  }

  SEGATTN_CHECK(cfg.stage_count >= 1, "stage_count must be >= 1");
  SEGATTN_CHECK(cfg.base_resolution >= 4 &&
                    (cfg.base_resolution & (cfg.base_resolution - 1)) == 0,
                "base_resolution must be a power of two >= 4");
  if (explicit_final_resolution >= 0) {
    SEGATTN_CHECK(explicit_final_resolution == cfg.final_resolution(),
                  "final_resolution " << explicit_final_resolution
                                      << " is not base_resolution * 2^(stage_count-1) = "
                                      << cfg.final_resolution());
  }
  SEGATTN_CHECK(cfg.seg_classes >= 2, "seg_classes must be >= 2");
  SEGATTN_CHECK(cfg.text_dim >= 2 && cfg.text_dim % 2 == 0,
                "text_dim must be a positive even integer");
  SEGATTN_CHECK(cfg.latent_dim >= 1, "latent_dim must be >= 1");
  SEGATTN_CHECK(cfg.lambda_damsm >= 0.0, "lambda_damsm must be nonnegative");
  SEGATTN_CHECK(cfg.learning_rate > 0.0, "learning_rate must be positive");
  SEGATTN_CHECK(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0,
                "adam_beta1 must be in [0,1)");
  SEGATTN_CHECK(cfg.damsm_gamma1 > 0.0 && cfg.damsm_gamma2 > 0.0 &&
                    cfg.damsm_gamma3 > 0.0,
                "DAMSM temperatures must be positive");
  SEGATTN_CHECK(cfg.batch_size >= 1, "batch_size must be >= 1");
  SEGATTN_CHECK(cfg.max_iterations >= 0, "max_iterations must be >= 0");
  return cfg;
}

inline std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "profile = " << to_string(cfg.profile) << "\n"
     << "stage_count = " << cfg.stage_count << "\n"
     << "base_resolution = " << cfg.base_resolution << "\n"
     << "text_dim = " << cfg.text_dim << "\n"
     << "latent_dim = " << cfg.latent_dim << "\n"
     << "seg_classes = " << cfg.seg_classes << "\n"
     << "lambda_damsm = " << cfg.lambda_damsm << "\n"
     << "learning_rate = " << cfg.learning_rate << "\n"
     << "adam_beta1 = " << cfg.adam_beta1 << "\n"
     << "damsm_gamma1 = " << cfg.damsm_gamma1 << "\n"
     << "damsm_gamma2 = " << cfg.damsm_gamma2 << "\n"
     << "damsm_gamma3 = " << cfg.damsm_gamma3 << "\n"
     << "batch_size = " << cfg.batch_size << "\n"
     << "max_iterations = " << cfg.max_iterations << "\n"
     << "seed = " << cfg.seed << "\n"
     << "mode = " << to_string(cfg.mode) << "\n"
     << "ablate_seg_attention = " << (cfg.ablate_seg_attention ? "true" : "false")
     << "\n";
  return os.str();
}

inline std::uint64_t TrainConfig::full_hash() const {
  return fnv1a64(serialize_config(*this));
}

inline TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return validate_config(parse_key_value_text(ss.str()));
}

}  // namespace segattn
