#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "saccade/attention.hpp"
#include "saccade/tensor.hpp"

namespace saccade {

enum class Adjacency {
  kManhattan2,  // |dy| + |dx| <= 2
  kEightWay,    // max(|dy|, |dx|) <= 1
};

Adjacency parse_adjacency(const std::string& name);
std::string to_string(Adjacency a);

struct SpatialConfig {
  std::size_t k = 1;
  std::size_t d = 2;
  std::size_t crop_height = 64;
  std::size_t crop_width = 64;
  double suppression = 0.5;
  Adjacency adjacency = Adjacency::kManhattan2;
};

// Throws std::invalid_argument when the configuration cannot be applied to
// an image of the given size.
void validate(const SpatialConfig& cfg, std::size_t image_height,
              std::size_t image_width);

struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  bool at(std::size_t r, std::size_t c) const { return bits[r * width + c] != 0; }
};

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
  auto operator<=>(const Cell&) const = default;
};

// Member cells in raster order.
using Region = std::vector<Cell>;

struct PixelBox {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

struct RegionBox {
  double score = 0.0;
  double centroid_row = 0.0;
  double centroid_col = 0.0;
  PixelBox box;
  std::size_t rank = 0;  // 1-based
};

struct FrameViews {
  Tensor low;                   // 3 x H/d x W/d
  std::vector<Tensor> crops;    // each 3 x H' x W', from the full image
  std::vector<RegionBox> regions;
};

// Bilinear resampling with half-pixel centres; for d = 2 this is the 2x2
// block mean.
Tensor downsample(const Tensor& image, std::size_t d);

// Cells whose channel-mean attention reaches fraction * max. An all-zero map
// gives an empty mask.
BinaryMask suppress(const AttentionMap& a, double fraction = 0.5);

// Maximal components in order of their first cell in raster order.
std::vector<Region> connected_regions(const BinaryMask& mask, Adjacency adjacency);

// Scores each region by its summed channel-mean attention, sorts by score
// (descending), then centroid row, then centroid column, and keeps k.
// Boxes are left empty.
std::vector<RegionBox> top_k_regions(const AttentionMap& a,
                                     const std::vector<Region>& regions,
                                     std::size_t k);

// Maps an attention-grid centroid to a crop_h x crop_w pixel box centred on
// it, slid back inside the image when it would cross a border.
PixelBox project_to_pixels(double centroid_row, double centroid_col,
                           std::size_t attn_height, std::size_t attn_width,
                           std::size_t image_height, std::size_t image_width,
                           std::size_t crop_height, std::size_t crop_width);

Tensor crop(const Tensor& image, const PixelBox& box);

// `a` must come from the low-resolution view of `image`.
FrameViews sample_frame(const Tensor& image, const AttentionMap& a,
                        const SpatialConfig& cfg);
// Same, for a precomputed low-resolution view.
FrameViews sample_frame(const Tensor& image, Tensor low, const AttentionMap& a,
                        const SpatialConfig& cfg);

}  // namespace saccade
