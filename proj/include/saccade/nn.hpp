#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "saccade/autograd.hpp"
#include "saccade/ops.hpp"

namespace saccade {

using Rng = std::mt19937_64;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
void init_uniform(Tensor& t, std::size_t fan_in, Rng& rng, double gain = 1.0);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, std::size_t c_in, std::size_t c_out,
         std::size_t kernel, kernels::ConvGeometry geom);

  void init(Rng& rng);
  Var forward(Tape& tape, Var x);
  ParameterRefs parameters() { return {&weight, &bias}; }

  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t out_channels() const { return weight.value.dim(0); }
  std::size_t kernel() const { return weight.value.dim(2); }
  const kernels::ConvGeometry& geometry() const { return geom_; }

  Parameter weight;
  Parameter bias;

 private:
  kernels::ConvGeometry geom_;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out);

  void init(Rng& rng);
  Var forward(Tape& tape, Var x);
  ParameterRefs parameters() { return {&weight, &bias}; }

  std::size_t in_features() const { return weight.value.dim(1); }
  std::size_t out_features() const { return weight.value.dim(0); }

  Parameter weight;
  Parameter bias;
};

// Gates are stacked [reset | update | candidate]:
//   r = sigmoid(Wx_r x + bx_r + Wh_r h + bh_r)
//   z = sigmoid(Wx_z x + bx_z + Wh_z h + bh_z)
//   n = tanh(Wx_n x + bx_n + r * (Wh_n h + bh_n))
//   h' = (1 - z) * n + z * h
class GruCell {
 public:
  GruCell() = default;
  GruCell(std::string name, std::size_t input, std::size_t hidden);

  void init(Rng& rng);
  Var forward(Tape& tape, Var x, Var h);
  ParameterRefs parameters() { return {&w_x, &w_h, &b_x, &b_h}; }

  std::size_t input_size() const { return w_x.value.dim(1); }
  std::size_t hidden_size() const { return w_h.value.dim(1); }

  Parameter w_x;  // 3H x in
  Parameter w_h;  // 3H x H
  Parameter b_x;  // 3H
  Parameter b_h;  // 3H
};

// Tape-free single step; same recurrence as GruCell::forward.
Tensor gru_cell(const Tensor& x, const Tensor& h, GruCell& cell);

// Stacked GRU; layer l consumes layer l-1's new hidden state.
class Gru {
 public:
  Gru() = default;
  Gru(std::string name, std::size_t input, std::size_t hidden,
      std::size_t layers);

  void init(Rng& rng);
  // Advances every layer; returns the new states, top layer last.
  std::vector<Var> forward(Tape& tape, Var x, const std::vector<Var>& states);
  std::vector<Tensor> zero_state() const;
  ParameterRefs parameters();

  std::size_t hidden_size() const { return cells_.front().hidden_size(); }
  std::size_t layers() const { return cells_.size(); }
  std::size_t input_size() const { return cells_.front().input_size(); }

 private:
  std::vector<GruCell> cells_;
};

void append(ParameterRefs& into, const ParameterRefs& more);

}  // namespace saccade
