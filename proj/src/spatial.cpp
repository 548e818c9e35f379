#include "saccade/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

namespace saccade {

Adjacency parse_adjacency(const std::string& name) {
  if (name == "manhattan2") return Adjacency::kManhattan2;
  if (name == "eightway") return Adjacency::kEightWay;
  throw std::invalid_argument("unknown adjacency '" + name +
                              "' (expected manhattan2 or eightway)");
}

std::string to_string(Adjacency a) {
  return a == Adjacency::kManhattan2 ? "manhattan2" : "eightway";
}

void validate(const SpatialConfig& cfg, std::size_t image_height,
              std::size_t image_width) {
  if (cfg.d == 0 || image_height % cfg.d != 0 || image_width % cfg.d != 0) {
    throw std::invalid_argument("spatial: down-sampling factor " +
                                std::to_string(cfg.d) + " must divide " +
                                std::to_string(image_height) + "x" +
                                std::to_string(image_width));
  }
  if (!(cfg.suppression > 0.0 && cfg.suppression < 1.0)) {
    throw std::invalid_argument("spatial: suppression fraction must lie in (0, 1)");
  }
  if (cfg.k > 0 && (cfg.crop_height == 0 || cfg.crop_width == 0 ||
                    cfg.crop_height > image_height ||
                    cfg.crop_width > image_width)) {
    throw std::invalid_argument("spatial: crop " + std::to_string(cfg.crop_height) +
                                "x" + std::to_string(cfg.crop_width) +
                                " does not fit the image");
  }
}

Tensor downsample(const Tensor& image, std::size_t d) {
  if (image.rank() != 3) {
    throw std::invalid_argument("downsample: expected C x H x W, got " +
                                shape_str(image.shape()));
  }
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (d == 0 || H % d != 0 || W % d != 0) {
    throw std::invalid_argument("downsample: factor " + std::to_string(d) +
                                " does not divide " + shape_str(image.shape()));
  }
  const std::size_t h = H / d, w = W / d;
  // Source coordinate of output index o is (o + 0.5) * d - 0.5.
  auto taps = [d](std::size_t o, std::size_t extent) {
    const double s = (static_cast<double>(o) + 0.5) * static_cast<double>(d) - 0.5;
    const auto lo = static_cast<std::size_t>(std::floor(s));
    const double frac = s - static_cast<double>(lo);
    const std::size_t hi = std::min(lo + 1, extent - 1);
    return std::tuple{lo, hi, frac};
  };
  Tensor out({C, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    const auto [y0, y1, fy] = taps(y, H);
    for (std::size_t x = 0; x < w; ++x) {
      const auto [x0, x1, fx] = taps(x, W);
      for (std::size_t c = 0; c < C; ++c) {
        const double top = (1 - fx) * image.at(c, y0, x0) + fx * image.at(c, y0, x1);
        const double bot = (1 - fx) * image.at(c, y1, x0) + fx * image.at(c, y1, x1);
        out.at(c, y, x) = (1 - fy) * top + fy * bot;
      }
    }
  }
  return out;
}

BinaryMask suppress(const AttentionMap& a, double fraction) {
  const Tensor m = channel_mean(a);
  BinaryMask mask{a.height(), a.width(), std::vector<std::uint8_t>(m.size(), 0)};
  double peak = 0.0;
  for (double v : m.data()) peak = std::max(peak, v);
  if (peak <= 0.0) return mask;
  const double cut = fraction * peak;
  for (std::size_t i = 0; i < m.size(); ++i) mask.bits[i] = m[i] >= cut ? 1 : 0;
  return mask;
}

std::vector<Region> connected_regions(const BinaryMask& mask, Adjacency adjacency) {
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -2; dy <= 2; ++dy) {
    for (int dx = -2; dx <= 2; ++dx) {
      if (dy == 0 && dx == 0) continue;
      const bool linked = adjacency == Adjacency::kManhattan2
                              ? std::abs(dy) + std::abs(dx) <= 2
                              : std::max(std::abs(dy), std::abs(dx)) <= 1;
      if (linked) offsets.emplace_back(dy, dx);
    }
  }
  const auto H = static_cast<int>(mask.height), W = static_cast<int>(mask.width);
  std::vector<std::uint8_t> seen(mask.bits.size(), 0);
  std::vector<Region> regions;
  std::vector<Cell> stack;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      if (!mask.at(r, c) || seen[r * W + c]) continue;
      Region region;
      seen[r * W + c] = 1;
      stack.push_back({static_cast<std::size_t>(r), static_cast<std::size_t>(c)});
      while (!stack.empty()) {
        const Cell cell = stack.back();
        stack.pop_back();
        region.push_back(cell);
        for (auto [dy, dx] : offsets) {
          const int y = static_cast<int>(cell.row) + dy;
          const int x = static_cast<int>(cell.col) + dx;
          if (y < 0 || x < 0 || y >= H || x >= W) continue;
          if (!mask.at(y, x) || seen[y * W + x]) continue;
          seen[y * W + x] = 1;
          stack.push_back({static_cast<std::size_t>(y), static_cast<std::size_t>(x)});
        }
      }
      std::sort(region.begin(), region.end());
      regions.push_back(std::move(region));
    }
  }
  return regions;
}

std::vector<RegionBox> top_k_regions(const AttentionMap& a,
                                     const std::vector<Region>& regions,
                                     std::size_t k) {
  const Tensor m = channel_mean(a);
  const std::size_t W = a.width();
  std::vector<RegionBox> boxes;
  boxes.reserve(regions.size());
  for (const Region& region : regions) {
    RegionBox b;
    double wr = 0.0, wc = 0.0;
    for (const Cell& cell : region) {
      const double v = m[cell.row * W + cell.col];
      b.score += v;
      wr += v * static_cast<double>(cell.row);
      wc += v * static_cast<double>(cell.col);
    }
    if (b.score <= 0.0) continue;
    b.centroid_row = wr / b.score;
    b.centroid_col = wc / b.score;
    boxes.push_back(b);
  }
  std::sort(boxes.begin(), boxes.end(), [](const RegionBox& x, const RegionBox& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.centroid_row != y.centroid_row) return x.centroid_row < y.centroid_row;
    return x.centroid_col < y.centroid_col;
  });
  if (boxes.size() > k) boxes.resize(k);
  for (std::size_t i = 0; i < boxes.size(); ++i) boxes[i].rank = i + 1;
  return boxes;
}

PixelBox project_to_pixels(double centroid_row, double centroid_col,
                           std::size_t attn_height, std::size_t attn_width,
                           std::size_t image_height, std::size_t image_width,
                           std::size_t crop_height, std::size_t crop_width) {
  if (crop_height > image_height || crop_width > image_width) {
    throw std::invalid_argument("project_to_pixels: crop " +
                                std::to_string(crop_height) + "x" +
                                std::to_string(crop_width) + " exceeds image " +
                                std::to_string(image_height) + "x" +
                                std::to_string(image_width));
  }
  auto place = [](double centroid, std::size_t attn, std::size_t image,
                  std::size_t extent) {
    const double scale = static_cast<double>(image) / static_cast<double>(attn);
    const double centre = (centroid + 0.5) * scale;
    const double start = std::floor(centre - static_cast<double>(extent) / 2.0 + 0.5);
    const double limit = static_cast<double>(image - extent);
    return static_cast<std::size_t>(std::clamp(start, 0.0, limit));
  };
  return {place(centroid_row, attn_height, image_height, crop_height),
          place(centroid_col, attn_width, image_width, crop_width), crop_height,
          crop_width};
}

Tensor crop(const Tensor& image, const PixelBox& box) {
  const std::size_t C = image.dim(0);
  if (box.top + box.height > image.dim(1) || box.left + box.width > image.dim(2)) {
    throw std::invalid_argument("crop: box leaves image " + shape_str(image.shape()));
  }
  Tensor out({C, box.height, box.width});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < box.height; ++y)
      for (std::size_t x = 0; x < box.width; ++x)
        out.at(c, y, x) = image.at(c, box.top + y, box.left + x);
  return out;
}

FrameViews sample_frame(const Tensor& image, const AttentionMap& a,
                        const SpatialConfig& cfg) {
  return sample_frame(image, downsample(image, cfg.d), a, cfg);
}

FrameViews sample_frame(const Tensor& image, Tensor low, const AttentionMap& a,
                        const SpatialConfig& cfg) {
  validate(cfg, image.dim(1), image.dim(2));
  FrameViews views{std::move(low), {}, {}};
  if (cfg.k == 0) return views;
  const auto regions = connected_regions(suppress(a, cfg.suppression), cfg.adjacency);
  views.regions = top_k_regions(a, regions, cfg.k);
  for (RegionBox& r : views.regions) {
    r.box = project_to_pixels(r.centroid_row, r.centroid_col, a.height(), a.width(),
                              image.dim(1), image.dim(2), cfg.crop_height,
                              cfg.crop_width);
    views.crops.push_back(crop(image, r.box));
  }
  return views;
}

}  // namespace saccade
