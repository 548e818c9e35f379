#include "saccade/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace saccade {

SgdMomentum::SgdMomentum(ParameterRefs params, SgdOptions options)
    : params_(std::move(params)),
      options_(std::move(options)),
      lr_(options_.learning_rate) {
  velocity_.reserve(params_.size());
  for (const Parameter* p : params_) velocity_.emplace_back(p->value.shape());
}

void SgdMomentum::begin_epoch(std::size_t epoch) {
  const auto& d = options_.decay_epochs;
  const auto passed = std::count_if(d.begin(), d.end(),
                                    [epoch](std::size_t e) { return e <= epoch; });
  lr_ = options_.learning_rate * std::pow(options_.decay_factor, passed);
}

void SgdMomentum::step(const std::vector<Tensor>& grads) {
  if (grads.size() != params_.size()) {
    throw std::invalid_argument("sgd_step: " + std::to_string(grads.size()) +
                                " gradients for " +
                                std::to_string(params_.size()) + " parameters");
  }
  double scale = 1.0;
  if (options_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const Tensor& g : grads) {
      for (double v : g.data()) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > options_.clip_norm) scale = options_.clip_norm / norm;
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i]->value;
    require_same_shape(p, grads[i], "sgd_step");
    Tensor& v = velocity_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = options_.momentum * v[j] + scale * grads[i][j];
      p[j] -= lr_ * v[j];
    }
  }
}

}  // namespace saccade
