#include "saccade/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace saccade {

void init_uniform(Tensor& t, std::size_t fan_in, Rng& rng, double gain) {
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
}

void append(ParameterRefs& into, const ParameterRefs& more) {
  into.insert(into.end(), more.begin(), more.end());
}

Conv2d::Conv2d(std::string name, std::size_t c_in, std::size_t c_out,
               std::size_t kernel, kernels::ConvGeometry geom)
    : weight{name + ".weight", Tensor({c_out, c_in, kernel, kernel})},
      bias{name + ".bias", Tensor({c_out})},
      geom_(geom) {}

void Conv2d::init(Rng& rng) {
  const std::size_t fan_in = in_channels() * kernel() * kernel();
  init_uniform(weight.value, fan_in, rng);
  init_uniform(bias.value, fan_in, rng);
}

Var Conv2d::forward(Tape& tape, Var x) {
  return ops::conv2d(x, tape.bind(weight), tape.bind(bias), geom_);
}

Linear::Linear(std::string name, std::size_t in, std::size_t out)
    : weight{name + ".weight", Tensor({out, in})},
      bias{name + ".bias", Tensor({out})} {}

void Linear::init(Rng& rng) {
  init_uniform(weight.value, in_features(), rng);
  init_uniform(bias.value, in_features(), rng);
}

Var Linear::forward(Tape& tape, Var x) {
  return ops::affine(tape.bind(weight), tape.bind(bias), x);
}

GruCell::GruCell(std::string name, std::size_t input, std::size_t hidden)
    : w_x{name + ".w_x", Tensor({3 * hidden, input})},
      w_h{name + ".w_h", Tensor({3 * hidden, hidden})},
      b_x{name + ".b_x", Tensor({3 * hidden})},
      b_h{name + ".b_h", Tensor({3 * hidden})} {}

void GruCell::init(Rng& rng) {
  const std::size_t h = hidden_size();
  init_uniform(w_x.value, h, rng);
  init_uniform(w_h.value, h, rng);
  init_uniform(b_x.value, h, rng);
  init_uniform(b_h.value, h, rng);
}

Var GruCell::forward(Tape& tape, Var x, Var h) {
  const std::size_t hs = hidden_size();
  if (x.size() != input_size() || h.size() != hs) {
    throw std::invalid_argument(
        "gru_cell: expected x of " + std::to_string(input_size()) +
        " and h of " + std::to_string(hs) + ", got " + shape_str(x.shape()) +
        " and " + shape_str(h.shape()));
  }
  Var gx = ops::affine(tape.bind(w_x), tape.bind(b_x), x);
  Var gh = ops::affine(tape.bind(w_h), tape.bind(b_h), h);
  auto part = [hs](Var v, std::size_t k) {
    return ops::slice(v, k * hs, Shape{hs});
  };
  Var r = ops::sigmoid(ops::add(part(gx, 0), part(gh, 0)));
  Var z = ops::sigmoid(ops::add(part(gx, 1), part(gh, 1)));
  Var n = ops::tanh(ops::add(part(gx, 2), ops::mul(r, part(gh, 2))));
  // h' = n + z * (h - n)
  return ops::add(n, ops::mul(z, ops::sub(h, n)));
}

Tensor gru_cell(const Tensor& x, const Tensor& h, GruCell& cell) {
  Tape tape;
  tape.freeze(cell.parameters());
  return cell.forward(tape, tape.constant(x), tape.constant(h)).value();
}

Gru::Gru(std::string name, std::size_t input, std::size_t hidden,
         std::size_t layers) {
  if (layers == 0) throw std::invalid_argument("gru: needs at least one layer");
  for (std::size_t l = 0; l < layers; ++l) {
    cells_.emplace_back(name + ".l" + std::to_string(l), l == 0 ? input : hidden,
                        hidden);
  }
}

void Gru::init(Rng& rng) {
  for (GruCell& c : cells_) c.init(rng);
}

std::vector<Var> Gru::forward(Tape& tape, Var x,
                              const std::vector<Var>& states) {
  if (states.size() != cells_.size()) {
    throw std::invalid_argument("gru: expected " +
                                std::to_string(cells_.size()) + " states");
  }
  std::vector<Var> next;
  next.reserve(cells_.size());
  Var in = x;
  for (std::size_t l = 0; l < cells_.size(); ++l) {
    in = cells_[l].forward(tape, in, states[l]);
    next.push_back(in);
  }
  return next;
}

std::vector<Tensor> Gru::zero_state() const {
  return std::vector<Tensor>(cells_.size(), Tensor({hidden_size()}));
}

ParameterRefs Gru::parameters() {
  ParameterRefs out;
  for (GruCell& c : cells_) append(out, c.parameters());
  return out;
}

}  // namespace saccade
