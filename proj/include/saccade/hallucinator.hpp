#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "saccade/attention.hpp"
#include "saccade/nn.hpp"
#include "saccade/optim.hpp"

namespace saccade {

// Whole-map SSIM statistics per channel, averaged over channels. With
// `normalize`, each input is first divided by its largest magnitude (an
// all-zero map stays zero), so the dynamic range is 1.
struct SsimParams {
  double dynamic_range = 1.0;
  double k1 = 0.01;
  double k2 = 0.03;
  bool normalize = true;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

// In [-1, 1]; symmetric in its arguments. Throws on shape mismatch.
double ssim(const Tensor& a, const Tensor& b, const SsimParams& p = {});
double ssim(const AttentionMap& a, const AttentionMap& b, const SsimParams& p = {});

namespace ops {
// x / max|x|, or x unchanged when x is all zeros.
Var max_normalize(Var x);
// Scalar SSIM of two C x H x W tensors.
Var ssim(Var a, Var b, const SsimParams& p = {});
}  // namespace ops

struct ConvLstmState {
  Tensor hidden;  // C_h x H x W
  Tensor cell;    // C_h x H x W
};

struct HallucinatorConfig {
  std::size_t channels = 32;
  std::size_t hidden = 32;
  std::size_t height = 7;
  std::size_t width = 7;
  std::size_t kernel = 3;
};

// Encoder conv -> conv-LSTM cell -> decoder conv, predicting the next
// attention map from the current one. Gates are stacked [i | f | o | g]:
//   c' = f * c + i * g,  h' = o * tanh(c')
class Hallucinator {
 public:
  explicit Hallucinator(HallucinatorConfig config);

  void init(Rng& rng);
  ParameterRefs parameters();
  const HallucinatorConfig& config() const { return config_; }
  ConvLstmState zero_state() const;

  struct StepVars {
    Var prediction;
    Var hidden;
    Var cell;
  };
  StepVars step(Tape& tape, Var attention, Var hidden, Var cell);

  struct StepResult {
    AttentionMap prediction;
    ConvLstmState state;
  };
  StepResult step(const AttentionMap& attention, const ConvLstmState& state);

  // Multiply-add and elementwise work of one step.
  std::uint64_t flops_per_step(std::uint64_t flops_per_mac = 2) const;

  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);

  Conv2d encoder;
  Conv2d gates;
  Conv2d decoder;

 private:
  void check_input(const Tensor& attention) const;
  std::vector<std::uint32_t> dims() const;

  HallucinatorConfig config_;
};

// -(1/(T-1)) * sum_{t=2..T} SSIM(H(A_{t-1}), A_t), feeding the ground-truth
// A_{t-1} at every step. Throws for T < 2.
Var belief_loss(Tape& tape, Hallucinator& h, std::span<const AttentionMap> seq,
                const SsimParams& p = {});
double belief_loss(Hallucinator& h, std::span<const AttentionMap> seq,
                   const SsimParams& p = {});

using AttentionSequence = std::vector<AttentionMap>;

struct HallucinatorTraining {
  double initial_loss = 0.0;
  // Mean belief loss over the training set after each epoch.
  std::vector<double> epoch_loss;
};

// One SGD step per sequence, in a per-epoch shuffled order drawn from rng.
HallucinatorTraining train_hallucinator(Hallucinator& h,
                                        std::span<const AttentionSequence> data,
                                        std::size_t epochs,
                                        const SgdOptions& options, Rng& rng,
                                        const SsimParams& p = {});

double mean_belief_loss(Hallucinator& h, std::span<const AttentionSequence> data,
                        const SsimParams& p = {});

}  // namespace saccade
