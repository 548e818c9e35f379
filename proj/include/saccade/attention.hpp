#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "saccade/autograd.hpp"
#include "saccade/nn.hpp"
#include "saccade/tensor.hpp"

namespace saccade {

// Softmax weights of one query position over its footprint. The window's
// top-left corner sits at (top, left) in plane coordinates and may hang off
// the plane; weights are C x rows x cols.
struct LocalAttention {
  std::ptrdiff_t top = 0;
  std::ptrdiff_t left = 0;
  Tensor weights;

  std::size_t channels() const { return weights.dim(0); }
  std::size_t rows() const { return weights.dim(1); }
  std::size_t cols() const { return weights.dim(2); }
};

enum class AttentionKind { kRawCumulative, kNormalized };

// Nonnegative C x H x W saliency map.
struct AttentionMap {
  Tensor values;
  AttentionKind kind = AttentionKind::kRawCumulative;

  std::size_t channels() const { return values.dim(0); }
  std::size_t height() const { return values.dim(1); }
  std::size_t width() const { return values.dim(2); }
};

// Per-cell number of footprints covering the cell.
struct CountMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> counts;

  std::uint32_t at(std::size_t h, std::size_t w) const {
    return counts[h * width + w];
  }
};

struct Window {
  std::ptrdiff_t top = 0;
  std::ptrdiff_t left = 0;
  std::size_t rows = 1;
  std::size_t cols = 1;
};

// Query/key/value 1x1 projections, C -> C.
struct AttentionProjections {
  AttentionProjections() = default;
  AttentionProjections(const std::string& name, std::size_t channels);

  void init(Rng& rng);
  ParameterRefs parameters();

  Conv2d query;
  Conv2d key;
  Conv2d value;
};

struct PairwiseOutput {
  Var z;
  std::vector<LocalAttention> locals;
};

// z_i = sum_{j in footprint(i)} softmax_j(q_i * k_j) * v_j, computed per
// channel over an extent x extent window centred on i. Footprint positions
// outside the plane are masked out of the softmax and carry zero weight.
PairwiseOutput pairwise_attention(Tape& tape, Var x, AttentionProjections& proj,
                                  std::size_t extent);

// The aggregation step alone, on already projected q, k, v (C x H x W).
// Fills `locals` (one per centre, raster order) when non-null.
Var pairwise_aggregate(Var q, Var k, Var v, std::size_t extent,
                       std::vector<LocalAttention>* locals);

// Scatter-adds every local block into a C x height x width plane; weights
// falling outside the plane are dropped. Rejects a block with no overlap or
// a channel count that disagrees with `channels`.
AttentionMap accumulate_global(std::span<const LocalAttention> locals,
                               std::size_t channels, std::size_t height,
                               std::size_t width);

CountMask count_mask(std::span<const Window> windows, std::size_t height,
                     std::size_t width);
// Centred extent x extent windows at every stride-th cell.
CountMask count_mask(std::size_t height, std::size_t width, std::size_t extent,
                     std::size_t stride);

enum class OverlapCorrection { kDivide, kMultiply };

// Divides (default) or multiplies every channel of each cell by its count.
AttentionMap normalize_attention(const AttentionMap& a, const CountMask& mask,
                                 OverlapCorrection mode = OverlapCorrection::kDivide);

// Mean over channels, H x W.
Tensor channel_mean(const AttentionMap& a);

}  // namespace saccade
