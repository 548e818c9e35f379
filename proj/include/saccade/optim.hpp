#pragma once

#include <cstddef>
#include <vector>

#include "saccade/autograd.hpp"

namespace saccade {

struct SgdOptions {
  double learning_rate = 0.01;
  double momentum = 0.9;
  // Rescale the joint gradient when its L2 norm exceeds this; 0 disables.
  double clip_norm = 0.0;
  // Multiply the learning rate by `decay_factor` at each listed epoch.
  std::vector<std::size_t> decay_epochs;
  double decay_factor = 0.1;
};

// SGD with momentum: v <- mu * v + g; p <- p - lr * v.
class SgdMomentum {
 public:
  SgdMomentum(ParameterRefs params, SgdOptions options);

  void step(const std::vector<Tensor>& grads);
  // Applies the decay schedule for the epoch about to start.
  void begin_epoch(std::size_t epoch);

  double learning_rate() const { return lr_; }
  const ParameterRefs& parameters() const { return params_; }
  const std::vector<Tensor>& velocity() const { return velocity_; }

 private:
  ParameterRefs params_;
  SgdOptions options_;
  double lr_;
  std::vector<Tensor> velocity_;
};

}  // namespace saccade
