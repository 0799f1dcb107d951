#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "segattn/array.hpp"
#include "segattn/config.hpp"
#include "segattn/rng.hpp"
#include "segattn/vocab.hpp"

namespace segattn {

// Procedural scenes: an 8-color background, one or two non-overlapping
// primitive shapes on a 2x2 placement grid, a templated caption, and a
// pixel-exact class mask. Everything derives from a single 64-bit seed.

struct PaletteColor {
  std::uint8_t r, g, b;
  const char* name;
};

inline const std::array<PaletteColor, 8>& shapes_palette() {
  static const std::array<PaletteColor, 8> kPalette = {{
      {220, 30, 30, "red"},
      {40, 170, 60, "green"},
      {40, 60, 220, "blue"},
      {235, 220, 50, "yellow"},
      {240, 140, 30, "orange"},
      {140, 50, 200, "purple"},
      {60, 210, 220, "cyan"},
      {245, 245, 245, "white"},
  }};
  return kPalette;
}

inline constexpr int kShapeKinds = 3;  // circle, square, triangle
inline const char* shape_name(int kind) {
  static const char* kNames[kShapeKinds] = {"circle", "square", "triangle"};
  return kNames[kind];
}

// Mask class id for a shape kind; 0 is background.
inline int shape_class(int kind) { return kind + 1; }

inline Vocabulary shapes_vocabulary() {
  Vocabulary v;
  for (const char* w : {"a", "on", "background", "and", "small", "large"}) v.add(w);
  for (const auto& c : shapes_palette()) v.add(c.name);
  for (int k = 0; k < kShapeKinds; ++k) v.add(shape_name(k));
  return v;
}

struct SceneObject {
  int shape_kind = 0;  // 0 circle, 1 square, 2 triangle
  int color = 0;       // palette index
  bool large = false;
  double cx = 0.5, cy = 0.5;  // center in canvas fractions
  double radius = 0.1;        // circumradius in canvas fractions

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    switch (shape_kind) {
      case 0:
        return dx * dx + dy * dy <= radius * radius;
      case 1: {
        const double half = radius * 0.82;
        return std::abs(dx) <= half && std::abs(dy) <= half;
      }
      default: {
        // Upward-pointing equilateral triangle with circumradius `radius`.
        const double ax = cx, ay = cy - radius;
        const double bx = cx - 0.8660254037844386 * radius, by = cy + 0.5 * radius;
        const double cx2 = cx + 0.8660254037844386 * radius, cy2 = cy + 0.5 * radius;
        auto side = [x, y](double x1, double y1, double x2, double y2) {
          return (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
        };
        const double s1 = side(ax, ay, bx, by);
        const double s2 = side(bx, by, cx2, cy2);
        const double s3 = side(cx2, cy2, ax, ay);
        return (s1 >= 0 && s2 >= 0 && s3 >= 0) || (s1 <= 0 && s2 <= 0 && s3 <= 0);
      }
    }
  }
};

struct Scene {
  int background_color = 0;
  std::vector<SceneObject> objects;
  std::string caption;
  TokenSequence tokens;
  int class_label = 0;                 // shape kind x color of the lead object
  std::vector<std::uint8_t> image;     // planar RGB, 3*H*W
  std::vector<std::uint8_t> raw_mask;  // H*W class ids
  int resolution = 0;
};

inline int scene_class_count() {
  return kShapeKinds * static_cast<int>(shapes_palette().size());
}

inline Scene generate_scene(std::uint64_t scene_seed, const TrainConfig& config) {
  Rng rng(scene_seed);
  const int res = config.final_resolution();
  const auto& palette = shapes_palette();

  Scene scene;
  scene.resolution = res;
  scene.background_color = static_cast<int>(rng.uniform_int(palette.size()));

  const int count = 1 + static_cast<int>(rng.uniform_int(2));
  // Distinct grid cells guarantee non-overlap; distinct colors keep the
  // color->class mapping of the IoU metric unambiguous.
  std::vector<int> cells = {0, 1, 2, 3};
  std::vector<int> used_colors = {scene.background_color};
  for (int i = 0; i < count; ++i) {
    SceneObject obj;
    obj.shape_kind = static_cast<int>(rng.uniform_int(kShapeKinds));
    for (;;) {
      int c = static_cast<int>(rng.uniform_int(palette.size()));
      bool clash = false;
      for (int u : used_colors) clash = clash || u == c;
      if (!clash) {
        obj.color = c;
        used_colors.push_back(c);
        break;
      }
    }
    obj.large = rng.uniform_int(2) == 1;
    obj.radius = obj.large ? 0.16 : 0.10;
    const size_t slot = rng.uniform_int(cells.size());
    const int cell = cells[slot];
    cells.erase(cells.begin() + static_cast<long>(slot));
    const double cellx = (cell % 2) * 0.5, celly = (cell / 2) * 0.5;
    obj.cx = cellx + 0.25 + rng.uniform(-0.05, 0.05);
    obj.cy = celly + 0.25 + rng.uniform(-0.05, 0.05);
    scene.objects.push_back(obj);
  }

  // Caption: "a <size> <color> <shape> [and a <size> <color> <shape>] on a
  // <color> background"
  std::string caption;
  for (size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    caption += (i == 0 ? "a " : " and a ");
    caption += o.large ? "large " : "small ";
    caption += palette[static_cast<size_t>(o.color)].name;
    caption += " ";
    caption += shape_name(o.shape_kind);
  }
  caption += " on a ";
  caption += palette[static_cast<size_t>(scene.background_color)].name;
  caption += " background";
  scene.caption = caption;

  const auto& lead = scene.objects.front();
  scene.class_label = lead.shape_kind * static_cast<int>(palette.size()) + lead.color;

  // Mask: pixel-center membership test. Objects never overlap.
  scene.raw_mask.assign(static_cast<size_t>(res) * res, 0);
  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      const double px = (x + 0.5) / res, py = (y + 0.5) / res;
      for (const auto& o : scene.objects) {
        if (o.contains(px, py)) {
          scene.raw_mask[static_cast<size_t>(y) * res + x] =
              static_cast<std::uint8_t>(shape_class(o.shape_kind));
          break;
        }
      }
    }
  }

  // Image: 3x3 supersampling for soft edges.
  scene.image.assign(static_cast<size_t>(3) * res * res, 0);
  const auto& bg = palette[static_cast<size_t>(scene.background_color)];
  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      int acc[3] = {0, 0, 0};
      for (int sy = 0; sy < 3; ++sy) {
        for (int sx = 0; sx < 3; ++sx) {
          const double px = (x + (sx + 0.5) / 3.0) / res;
          const double py = (y + (sy + 0.5) / 3.0) / res;
          const PaletteColor* col = &bg;
          for (const auto& o : scene.objects) {
            if (o.contains(px, py)) {
              col = &palette[static_cast<size_t>(o.color)];
              break;
            }
          }
          acc[0] += col->r;
          acc[1] += col->g;
          acc[2] += col->b;
        }
      }
      const size_t idx = static_cast<size_t>(y) * res + x;
      const size_t plane = static_cast<size_t>(res) * res;
      scene.image[idx] = static_cast<std::uint8_t>((acc[0] + 4) / 9);
      scene.image[plane + idx] = static_cast<std::uint8_t>((acc[1] + 4) / 9);
      scene.image[2 * plane + idx] = static_cast<std::uint8_t>((acc[2] + 4) / 9);
    }
  }

  const Vocabulary vocab = shapes_vocabulary();
  scene.tokens = tokenize(vocab, scene.caption, TrainConfig::kTMax,
                          /*allow_unknown=*/false);
  return scene;
}

// Maps u8 [0,255] to the [-1,1] float convention used by every network input.
template <typename S>
inline S u8_to_signed(std::uint8_t v) {
  return static_cast<S>(v) / S(127.5) - S(1);
}

template <typename S>
inline std::uint8_t signed_to_u8(S v) {
  S x = (v + S(1)) * S(127.5);
  if (x < S(0)) x = S(0);
  if (x > S(255)) x = S(255);
  return static_cast<std::uint8_t>(std::lround(static_cast<double>(x)));
}

}  // namespace segattn
