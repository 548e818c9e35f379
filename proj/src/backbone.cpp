#include "saccade/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "saccade/checkpoint.hpp"

namespace saccade {

ToyBackbone::ToyBackbone(BackboneConfig config)
    : config_(config),
      conv1_("backbone.conv1", 3, config.stem, 3, {1, 2}),
      conv2_("backbone.conv2", config.stem, config.tap, 3, {1, 2}),
      conv3_("backbone.conv3", config.tap, config.head, 3, {1, 1}),
      conv4_("backbone.conv4", config.head, config.head, 3, {1, 1}),
      attn_("backbone.attention", config.tap) {
  if (config.extent % 2 == 0) {
    throw std::invalid_argument("backbone: attention extent must be odd");
  }
}

void ToyBackbone::init(Rng& rng) {
  // He-uniform weights and zero biases keep the ReLU stack alive.
  auto he = [&rng](Conv2d& c) {
    init_uniform(c.weight.value, c.in_channels() * c.kernel() * c.kernel(), rng,
                 std::sqrt(6.0));
    c.bias.value.fill(0.0);
  };
  he(conv1_);
  he(conv2_);
  attn_.init(rng);
  he(conv3_);
  he(conv4_);
}

ParameterRefs ToyBackbone::parameters() {
  ParameterRefs out = conv1_.parameters();
  append(out, conv2_.parameters());
  append(out, attn_.parameters());
  append(out, conv3_.parameters());
  append(out, conv4_.parameters());
  return out;
}

std::size_t ToyBackbone::tap_extent(std::size_t in) const {
  const std::size_t a = kernels::conv_out_extent(in, 3, conv1_.geometry());
  return kernels::conv_out_extent(a, 3, conv2_.geometry());
}

ToyBackbone::FirstHalf ToyBackbone::first_half(Tape& tape, Var image) {
  if (image.shape().size() != 3 || image.shape()[0] != 3) {
    throw std::invalid_argument("backbone: expected a 3 x H x W image, got " +
                                shape_str(image.shape()));
  }
  Var x = ops::relu(conv1_.forward(tape, image));
  x = ops::relu(conv2_.forward(tape, x));
  PairwiseOutput p = pairwise_attention(tape, x, attn_, config_.extent);
  return {ops::add(x, p.z), std::move(p.locals)};
}

Var ToyBackbone::second_half(Tape& tape, Var mid) {
  Var x = ops::relu(conv3_.forward(tape, mid));
  x = ops::relu(conv4_.forward(tape, x));
  return ops::global_avg_pool(x);
}

Var ToyBackbone::encode(Tape& tape, Var image) {
  return second_half(tape, first_half(tape, image).mid);
}

ToyBackbone::Prescan ToyBackbone::prescan(const Tensor& image) {
  Tape tape;
  tape.freeze(parameters());
  FirstHalf f = first_half(tape, tape.constant(image));
  const Tensor& mid = f.mid.value();
  AttentionMap a = tap_attention(f.locals, mid.dim(0), mid.dim(1), mid.dim(2),
                                 config_.extent);
  return {mid, std::move(a)};
}

Tensor ToyBackbone::finish(const Tensor& mid) {
  Tape tape;
  tape.freeze(parameters());
  return second_half(tape, tape.constant(mid)).value();
}

Tensor ToyBackbone::encode(const Tensor& image) {
  Tape tape;
  tape.freeze(parameters());
  return encode(tape, tape.constant(image)).value();
}

LayerCostTable ToyBackbone::cost_table(Flops flops_per_mac) const {
  const BackboneConfig& c = config_;
  return LayerCostTable(
      {
          {LayerKind::kConv, 3, c.stem, 3, 2, 1},
          {LayerKind::kConv, c.stem, c.tap, 3, 2, 1},
          {LayerKind::kAttention, c.tap, c.tap, c.extent, 1, 0},
          {LayerKind::kConv, c.tap, c.head, 3, 1, 1},
          {LayerKind::kConv, c.head, c.head, 3, 1, 1},
          {LayerKind::kPool, c.head, c.head, 1, 1, 0},
      },
      3, flops_per_mac);
}

std::vector<std::uint32_t> ToyBackbone::dims() const {
  return {static_cast<std::uint32_t>(config_.stem),
          static_cast<std::uint32_t>(config_.tap),
          static_cast<std::uint32_t>(config_.head),
          static_cast<std::uint32_t>(config_.extent)};
}

void ToyBackbone::save(const std::filesystem::path& path) {
  save_checkpoint(path, "BKBN", dims(), parameters());
}

void ToyBackbone::load(const std::filesystem::path& path) {
  load_checkpoint(path, "BKBN", dims(), parameters());
}

AttentionMap tap_attention(const std::vector<LocalAttention>& locals,
                           std::size_t channels, std::size_t height,
                           std::size_t width, std::size_t extent) {
  const AttentionMap raw = accumulate_global(locals, channels, height, width);
  return normalize_attention(raw, count_mask(height, width, extent, 1));
}

}  // namespace saccade
