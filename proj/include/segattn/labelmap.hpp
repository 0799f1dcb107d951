#pragma once

#include <cstdint>
#include <vector>

#include "segattn/array.hpp"
#include "segattn/config.hpp"

namespace segattn {

// One-hot expansion of a class-id mask into a {c_seg, h, w} label map: channel
// k is the indicator of class k, so channels sum to exactly 1 at every pixel.
template <typename S>
Array<S> mask_to_label_map(const std::uint8_t* mask, Index h, Index w, int c_seg) {
  Array<S> out({static_cast<Index>(c_seg), h, w});
  const Index hw = h * w;
  for (Index p = 0; p < hw; ++p) {
    const int cls = mask[p];
    SEGATTN_CHECK(cls < c_seg, "mask class " << cls << " >= c_seg " << c_seg);
    out[cls * hw + p] = S(1);
  }
  return out;
}

// Pixel-center nearest-neighbor resampling of a {C,H,W} map. Preserves
// one-hotness since every output pixel copies a single input pixel.
template <typename S>
Array<S> nearest_resample(const Array<S>& in, Index oh, Index ow) {
  SEGATTN_CHECK(in.rank() == 3, "nearest_resample expects {C,H,W}");
  const Index c = in.dim(0), h = in.dim(1), w = in.dim(2);
  Array<S> out({c, oh, ow});
  for (Index i = 0; i < oh; ++i) {
    const Index si = static_cast<Index>((i + 0.5) * static_cast<double>(h) / oh);
    for (Index j = 0; j < ow; ++j) {
      const Index sj = static_cast<Index>((j + 0.5) * static_cast<double>(w) / ow);
      for (Index ch = 0; ch < c; ++ch)
        out.at(ch, i, j) = in.at(ch, std::min(si, h - 1), std::min(sj, w - 1));
    }
  }
  return out;
}

// Box-average downsampling of a {C,H,W} image by an exact integer factor; the
// anti-aliased path for photographic content.
template <typename S>
Array<S> area_downsample(const Array<S>& in, Index oh, Index ow) {
  SEGATTN_CHECK(in.rank() == 3, "area_downsample expects {C,H,W}");
  const Index c = in.dim(0), h = in.dim(1), w = in.dim(2);
  SEGATTN_CHECK(h % oh == 0 && w % ow == 0,
                "area_downsample needs integer factor: " << h << "x" << w
                                                         << " -> " << oh << "x" << ow);
  const Index fy = h / oh, fx = w / ow;
  const S inv = S(1) / static_cast<S>(fy * fx);
  Array<S> out({c, oh, ow});
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j) {
        S acc = S(0);
        for (Index dy = 0; dy < fy; ++dy)
          for (Index dx = 0; dx < fx; ++dx)
            acc += in.at(ch, i * fy + dy, j * fx + dx);
        out.at(ch, i, j) = acc * inv;
      }
  return out;
}

// Downsampled label-map stack, one level per generator stage (level i at
// base_resolution * 2^i). Input must be at the final stage resolution.
template <typename S>
std::vector<Array<S>> build_mask_pyramid(const Array<S>& full,
                                         const TrainConfig& config) {
  SEGATTN_CHECK(full.rank() == 3, "build_mask_pyramid expects {C,H,W}");
  const Index res = config.final_resolution();
  SEGATTN_CHECK(full.dim(1) == res && full.dim(2) == res,
                "label map resolution " << full.dim(1) << "x" << full.dim(2)
                                        << " != final stage " << res << "x" << res);
  SEGATTN_CHECK(full.dim(0) == config.seg_classes,
                "label map channels " << full.dim(0) << " != seg_classes "
                                      << config.seg_classes);
  std::vector<Array<S>> levels;
  for (int r : config.stage_resolutions()) {
    if (r == res) levels.push_back(full);
    else levels.push_back(nearest_resample(full, r, r));
  }
  return levels;
}

// True when every pixel's channel sum is exactly 1 and entries are in [0,1].
template <typename S>
bool is_valid_label_map(const Array<S>& m, S tol = S(0)) {
  const Index c = m.dim(m.rank() - 3);
  const Index hw = m.dim(m.rank() - 2) * m.dim(m.rank() - 1);
  const Index outer = m.size() / (c * hw);
  for (Index n = 0; n < outer; ++n)
    for (Index p = 0; p < hw; ++p) {
      S sum = S(0);
      for (Index ch = 0; ch < c; ++ch) {
        const S v = m[(n * c + ch) * hw + p];
        if (v < S(0) || v > S(1)) return false;
        sum += v;
      }
      if (std::abs(sum - S(1)) > tol) return false;
    }
  return true;
}

}  // namespace segattn
