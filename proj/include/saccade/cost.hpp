#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "saccade/spatial.hpp"

namespace saccade {

using Flops = std::uint64_t;

// 2 * C_in * C_out * K^2 * H_out * W_out at flops_per_mac = 2.
Flops conv_flops(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                 std::size_t h_out, std::size_t w_out, Flops flops_per_mac = 2);
// Stacked GRU step: 3H (in + H) multiply-adds per layer plus gate arithmetic.
Flops gru_flops(std::size_t input, std::size_t hidden, std::size_t layers,
                Flops flops_per_mac = 2);
Flops linear_flops(std::size_t in, std::size_t out, Flops flops_per_mac = 2);

enum class LayerKind { kConv, kAttention, kPool, kLinear };

struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;  // footprint extent for attention
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct LayerCost {
  Flops flops = 0;
  std::size_t out_height = 0;
  std::size_t out_width = 0;
};

// Ordered layers with the split point `split` (number of layers in the
// first half, 1 <= split <= size).
//
// Text form, one layer per line, '#' starts a comment:
//   split <n>
//   conv <c_in> <c_out> <kernel> <stride> [padding]
//   attention <channels> <extent>
//   pool <channels>
//   linear <in> <out>
class LayerCostTable {
 public:
  LayerCostTable() = default;
  LayerCostTable(std::vector<LayerSpec> layers, std::size_t split,
                 Flops flops_per_mac = 2);

  static LayerCostTable parse(const std::string& text, Flops flops_per_mac = 2);
  static LayerCostTable load(const std::filesystem::path& path,
                             Flops flops_per_mac = 2);
  std::string to_text() const;

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t size() const { return layers_.size(); }
  std::size_t split() const { return split_; }
  Flops flops_per_mac() const { return flops_per_mac_; }

  // Per-layer cost for an input of height x width; throws when a layer's
  // output would be empty.
  std::vector<LayerCost> evaluate(std::size_t height, std::size_t width) const;
  Flops total(std::size_t height, std::size_t width) const;
  // Layers [0, split) and [split, size).
  Flops first_half(std::size_t height, std::size_t width, std::size_t split) const;
  Flops second_half(std::size_t height, std::size_t width, std::size_t split) const;

 private:
  void check_split(std::size_t split) const;

  std::vector<LayerSpec> layers_;
  std::size_t split_ = 1;
  Flops flops_per_mac_ = 2;
};

// Total cost at N x N inputs for each side N.
std::vector<std::pair<std::size_t, Flops>> scaling_curve(
    const LayerCostTable& table, std::span<const std::size_t> sides);

struct CostInputs {
  std::size_t low_height = 0;  // pre-scanned (low-resolution) input
  std::size_t low_width = 0;
  std::size_t split = 0;       // 0 selects the table's own split
  Flops hallucinator = 0;
  Flops sampler = 0;
  std::size_t k = 0;
  std::size_t crop_height = 0;
  std::size_t crop_width = 0;
  Flops classifier = 0;
};

struct CostBreakdown {
  Flops first_half = 0;
  Flops hallucinator = 0;
  Flops sampler = 0;
  Flops second_half = 0;
  Flops crop = 0;  // backbone cost of one crop
  std::size_t k = 0;
  Flops classifier = 0;

  Flops o_pre = 0;   // first_half + hallucinator + sampler
  Flops o_rest = 0;  // second_half + k * crop + classifier
  Flops o_full = 0;  // o_pre + o_rest
};

CostBreakdown breakdown(const LayerCostTable& table, const CostInputs& in);

// Rejects a spatial configuration whose low-res pass plus k crops costs at
// least as much as the full-resolution pass.
void check_complexity(const LayerCostTable& table, std::size_t image_height,
                      std::size_t image_width, const SpatialConfig& cfg);

enum class FrameStatus { kFull, kPrescan, kSkip };

std::string to_string(FrameStatus s);

struct FrameDecision {
  FrameStatus status = FrameStatus::kFull;
  Flops flops = 0;
  // Latest FULL frame whose prediction stands at this frame (0-based).
  std::size_t source = 0;
};

Flops charge(FrameStatus status, const CostBreakdown& cb);

// n_full * O_full + n_pre * O_pre; with `normalize`, divided by
// (n_full + n_pre + n_skip) * O_full.
double efficiency_loss(std::size_t n_full, std::size_t n_pre, std::size_t n_skip,
                       const CostBreakdown& cb, bool normalize);

// Average GFLOPS per top-1 accuracy point.
double tradeoff(double avg_gflops, double top1_percent);
// reference / model.
double speedup(double reference_avg, double model_avg);

struct RunStats {
  std::size_t frames = 0;
  std::size_t n_full = 0;
  std::size_t n_pre = 0;
  std::size_t n_skip = 0;
  Flops total_flops = 0;

  double avg_flops() const;
  double pct_full() const;
  double pct_pre() const;
  double pct_skip() const;
};

RunStats aggregate(std::span<const FrameDecision> stream);
RunStats aggregate(std::span<const std::vector<FrameDecision>> streams);

}  // namespace saccade
