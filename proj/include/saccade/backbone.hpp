#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "saccade/attention.hpp"
#include "saccade/cost.hpp"
#include "saccade/nn.hpp"

namespace saccade {

struct BackboneConfig {
  std::size_t stem = 16;     // channels after the first conv
  std::size_t tap = 8;       // channels at the attention block
  std::size_t head = 32;     // channels of the head convs and pooled feature
  std::size_t extent = 3;    // attention footprint
};

// conv(3->stem, s2) relu, conv(stem->tap, s2) relu, pairwise attention with a
// residual (x + z), then conv(tap->head) relu, conv(head->head) relu, global
// average pool. The first half ends after the attention block; its local
// weights form the attention tap.
class ToyBackbone {
 public:
  ToyBackbone() : ToyBackbone(BackboneConfig{}) {}
  explicit ToyBackbone(BackboneConfig config);

  void init(Rng& rng);
  ParameterRefs parameters();
  const BackboneConfig& config() const { return config_; }
  std::size_t feature_dim() const { return config_.head; }
  // Attention tap spatial extent for an h x w input.
  std::size_t tap_extent(std::size_t in) const;

  struct FirstHalf {
    Var mid;                          // tap x h/4 x w/4
    std::vector<LocalAttention> locals;
  };
  FirstHalf first_half(Tape& tape, Var image);
  Var second_half(Tape& tape, Var mid);  // pooled, length head
  Var encode(Tape& tape, Var image);     // both halves

  // Tape-free inference.
  struct Prescan {
    Tensor mid;
    AttentionMap attention;  // count-normalised cumulative attention
  };
  Prescan prescan(const Tensor& image);
  Tensor finish(const Tensor& mid);
  Tensor encode(const Tensor& image);

  // Layer table for the cost model, split after the attention block.
  LayerCostTable cost_table(Flops flops_per_mac = 2) const;

  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);

 private:
  std::vector<std::uint32_t> dims() const;

  BackboneConfig config_;
  Conv2d conv1_, conv2_, conv3_, conv4_;
  AttentionProjections attn_;
};

// The normalised cumulative map of a set of local weights on an h x w plane.
AttentionMap tap_attention(const std::vector<LocalAttention>& locals,
                           std::size_t channels, std::size_t height,
                           std::size_t width, std::size_t extent);

}  // namespace saccade
