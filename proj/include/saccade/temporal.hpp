#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "saccade/cost.hpp"
#include "saccade/nn.hpp"

namespace saccade {

struct GumbelOptions {
  double temperature = 1.0;
  bool noise = true;
  // Forward the one-hot argmax, backward through the soft sample.
  bool hard = false;
};

// softmax((logits + g) / tau) with g ~ Gumbel(0, 1) when noise is on.
// `rng` may be null when noise is off. Throws for tau <= 0.
Var gumbel_softmax(Var logits, const GumbelOptions& opt, Rng* rng);
Tensor gumbel_softmax(const Tensor& logits, const GumbelOptions& opt, Rng* rng);

// Index of the largest entry, ties toward the smaller index.
std::size_t decide(const Tensor& r);

struct PolicyConfig {
  std::size_t feature_dim = 0;
  std::size_t hallucination_dim = 0;
  std::size_t max_skip = 3;  // M
  std::size_t hidden = 128;
  std::size_t layers = 2;

  std::size_t input_dim() const { return feature_dim + hallucination_dim + 1; }
};

// GRU over [features | hallucination | ssim], a linear head to M + 1 logits,
// then a Gumbel softmax.
class Policy {
 public:
  Policy() = default;
  explicit Policy(PolicyConfig config);

  void init(Rng& rng);
  ParameterRefs parameters();
  const PolicyConfig& config() const { return config_; }
  std::vector<Tensor> zero_state() const { return gru_.zero_state(); }

  struct Output {
    Var logits;
    Var r;
    std::vector<Var> state;
  };
  Output forward(Tape& tape, Var features, Var hallucination, Var ssim,
                 const std::vector<Var>& state, const GumbelOptions& opt,
                 Rng* rng);

  struct Decision {
    Tensor r;
    std::size_t m_star = 0;
    std::vector<Tensor> state;
  };
  // Tape-free step.
  Decision step(const Tensor& features, const Tensor& hallucination, double ssim,
                const std::vector<Tensor>& state, const GumbelOptions& opt,
                Rng* rng);

  Flops flops_per_step(Flops flops_per_mac = 2) const;

  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);

 private:
  std::vector<std::uint32_t> dims() const;

  PolicyConfig config_;
  Gru gru_;
  Linear head_;
};

// Frame-by-frame skip bookkeeping. The first frame is always FULL; after a
// decision m* in [1, M] the frame is PRESCAN and the next m* - 1 are SKIP.
class SkipSchedule {
 public:
  explicit SkipSchedule(std::size_t max_skip) : max_skip_(max_skip) {}

  // Status of the next frame. `decide` is called only when the frame is
  // evaluated by the policy (not the first frame, not a skipped one).
  FrameStatus next(const std::function<std::size_t()>& decide);

  std::size_t frames_seen() const { return frame_; }
  std::size_t remaining_skips() const { return remaining_; }
  std::size_t last_full() const { return last_full_; }

 private:
  std::size_t max_skip_;
  std::size_t frame_ = 0;
  std::size_t remaining_ = 0;
  std::size_t last_full_ = 0;
};

// Replays per-evaluated-frame decisions into a T-frame schedule with charged
// FLOPS. Frames beyond the supplied decisions run FULL. Throws when a
// decision exceeds M.
std::vector<FrameDecision> execute_schedule(std::span<const std::size_t> decisions,
                                            std::size_t frames,
                                            std::size_t max_skip,
                                            const CostBreakdown& cb);

}  // namespace saccade
