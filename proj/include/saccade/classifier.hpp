#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "saccade/cost.hpp"
#include "saccade/nn.hpp"

namespace saccade {

struct ClassifierConfig {
  std::size_t feature_dim = 32;
  std::size_t crop_slots = 3;  // crops beyond k are zero vectors
  std::size_t hidden = 32;
  std::size_t classes = 3;
};

inline constexpr std::size_t kHeads = 3;
using HeadWeights = std::array<double, kHeads>;

// Three GRU heads: low (pooled low-res feature), high (concatenated crop
// features, zero-padded to crop_slots), master (both). Each head maps its
// hidden state to class logits; the prediction is the mean of the heads.
class ThreeHeadClassifier {
 public:
  ThreeHeadClassifier() : ThreeHeadClassifier(ClassifierConfig{}) {}
  explicit ThreeHeadClassifier(ClassifierConfig config);

  void init(Rng& rng);
  ParameterRefs parameters();
  const ClassifierConfig& config() const { return config_; }

  using State = std::array<Tensor, kHeads>;
  State zero_state() const;

  // Zero-padded concatenation of up to crop_slots crop features.
  Tensor pack_crops(const std::vector<Tensor>& crops) const;
  Var pack_crops(Tape& tape, const std::vector<Var>& crops) const;

  using StateVars = std::array<Var, kHeads>;
  // Advances all three memories on one FULL frame.
  StateVars update(Tape& tape, Var low, Var crops, const StateVars& state);
  // Per-head logits read from the memories.
  std::array<Var, kHeads> head_logits(Tape& tape, const StateVars& state);

  State update(const Tensor& low, const Tensor& crops, const State& state);
  std::array<Tensor, kHeads> head_logits(const State& state);

  Flops flops_per_step(Flops flops_per_mac = 2) const;

  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);

 private:
  std::vector<std::uint32_t> dims() const;

  ClassifierConfig config_;
  std::array<GruCell, kHeads> cells_;
  std::array<Linear, kHeads> outs_;
};

// Elementwise mean of the head logits.
Tensor mean_logits(const std::array<Tensor, kHeads>& heads);
Var mean_logits(const std::array<Var, kHeads>& heads);

// sum_h theta_h * CE(logits_h, label). Throws when label is out of range or a
// weight is negative.
Var class_loss(const std::array<Var, kHeads>& heads, std::size_t label,
               const HeadWeights& theta);
double class_loss(const std::array<Tensor, kHeads>& heads, std::size_t label,
                  const HeadWeights& theta);

}  // namespace saccade
