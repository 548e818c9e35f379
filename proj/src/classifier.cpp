#include "saccade/classifier.hpp"

#include <stdexcept>

#include "saccade/checkpoint.hpp"

namespace saccade {

namespace {

std::size_t head_input(const ClassifierConfig& c, std::size_t head) {
  const std::size_t high = c.crop_slots * c.feature_dim;
  switch (head) {
    case 0: return c.feature_dim;
    case 1: return high;
    default: return c.feature_dim + high;
  }
}

const char* const kHeadNames[kHeads] = {"low", "high", "master"};

}  // namespace

ThreeHeadClassifier::ThreeHeadClassifier(ClassifierConfig config) : config_(config) {
  if (config.classes < 2 || config.feature_dim == 0 || config.hidden == 0) {
    throw std::invalid_argument("classifier: need >= 2 classes and nonzero dims");
  }
  for (std::size_t h = 0; h < kHeads; ++h) {
    const std::string name = std::string("classifier.") + kHeadNames[h];
    cells_[h] = GruCell(name + ".gru", head_input(config, h), config.hidden);
    outs_[h] = Linear(name + ".out", config.hidden, config.classes);
  }
}

void ThreeHeadClassifier::init(Rng& rng) {
  for (std::size_t h = 0; h < kHeads; ++h) {
    cells_[h].init(rng);
    outs_[h].init(rng);
  }
}

ParameterRefs ThreeHeadClassifier::parameters() {
  ParameterRefs out;
  for (std::size_t h = 0; h < kHeads; ++h) {
    append(out, cells_[h].parameters());
    append(out, outs_[h].parameters());
  }
  return out;
}

ThreeHeadClassifier::State ThreeHeadClassifier::zero_state() const {
  State s;
  for (Tensor& t : s) t = Tensor({config_.hidden});
  return s;
}

Tensor ThreeHeadClassifier::pack_crops(const std::vector<Tensor>& crops) const {
  if (crops.size() > config_.crop_slots) {
    throw std::invalid_argument("classifier: " + std::to_string(crops.size()) +
                                " crops exceed " + std::to_string(config_.crop_slots) +
                                " slots");
  }
  const std::size_t F = config_.feature_dim;
  Tensor out({config_.crop_slots * F});
  for (std::size_t i = 0; i < crops.size(); ++i) {
    if (crops[i].size() != F) {
      throw std::invalid_argument("classifier: crop feature of size " +
                                  std::to_string(crops[i].size()) + ", expected " +
                                  std::to_string(F));
    }
    for (std::size_t j = 0; j < F; ++j) out[i * F + j] = crops[i][j];
  }
  return out;
}

Var ThreeHeadClassifier::pack_crops(Tape& tape, const std::vector<Var>& crops) const {
  if (crops.size() > config_.crop_slots) {
    throw std::invalid_argument("classifier: too many crops");
  }
  std::vector<Var> parts = crops;
  const std::size_t missing = config_.crop_slots - crops.size();
  if (missing > 0) parts.push_back(tape.constant(Tensor({missing * config_.feature_dim})));
  return ops::concat(parts);
}

ThreeHeadClassifier::StateVars ThreeHeadClassifier::update(Tape& tape, Var low, Var crops,
                                                           const StateVars& state) {
  if (low.size() != config_.feature_dim ||
      crops.size() != config_.crop_slots * config_.feature_dim) {
    throw std::invalid_argument(
        "classifier: expected low feature " + std::to_string(config_.feature_dim) +
        " and crop block " + std::to_string(config_.crop_slots * config_.feature_dim) +
        ", got " + std::to_string(low.size()) + " and " + std::to_string(crops.size()));
  }
  const std::array<Var, kHeads> inputs{low, crops, ops::concat({low, crops})};
  StateVars next;
  for (std::size_t h = 0; h < kHeads; ++h) {
    next[h] = cells_[h].forward(tape, inputs[h], state[h]);
  }
  return next;
}

std::array<Var, kHeads> ThreeHeadClassifier::head_logits(Tape& tape,
                                                         const StateVars& state) {
  std::array<Var, kHeads> out;
  for (std::size_t h = 0; h < kHeads; ++h) out[h] = outs_[h].forward(tape, state[h]);
  return out;
}

ThreeHeadClassifier::State ThreeHeadClassifier::update(const Tensor& low,
                                                       const Tensor& crops,
                                                       const State& state) {
  Tape tape;
  tape.freeze(parameters());
  StateVars s;
  for (std::size_t h = 0; h < kHeads; ++h) s[h] = tape.constant(state[h]);
  StateVars n = update(tape, tape.constant(low), tape.constant(crops), s);
  State out;
  for (std::size_t h = 0; h < kHeads; ++h) out[h] = n[h].value();
  return out;
}

std::array<Tensor, kHeads> ThreeHeadClassifier::head_logits(const State& state) {
  Tape tape;
  tape.freeze(parameters());
  StateVars s;
  for (std::size_t h = 0; h < kHeads; ++h) s[h] = tape.constant(state[h]);
  const auto v = head_logits(tape, s);
  std::array<Tensor, kHeads> out;
  for (std::size_t h = 0; h < kHeads; ++h) out[h] = v[h].value();
  return out;
}

Flops ThreeHeadClassifier::flops_per_step(Flops flops_per_mac) const {
  Flops total = 0;
  for (std::size_t h = 0; h < kHeads; ++h) {
    total += gru_flops(head_input(config_, h), config_.hidden, 1, flops_per_mac);
    total += linear_flops(config_.hidden, config_.classes, flops_per_mac);
  }
  // Head averaging.
  return total + kHeads * config_.classes;
}

std::vector<std::uint32_t> ThreeHeadClassifier::dims() const {
  return {static_cast<std::uint32_t>(config_.feature_dim),
          static_cast<std::uint32_t>(config_.crop_slots),
          static_cast<std::uint32_t>(config_.hidden),
          static_cast<std::uint32_t>(config_.classes)};
}

void ThreeHeadClassifier::save(const std::filesystem::path& path) {
  save_checkpoint(path, "THCL", dims(), parameters());
}

void ThreeHeadClassifier::load(const std::filesystem::path& path) {
  load_checkpoint(path, "THCL", dims(), parameters());
}

Tensor mean_logits(const std::array<Tensor, kHeads>& heads) {
  Tensor out = heads[0];
  for (std::size_t h = 1; h < kHeads; ++h) {
    require_same_shape(out, heads[h], "mean_logits");
    out += heads[h];
  }
  out *= 1.0 / kHeads;
  return out;
}

Var mean_logits(const std::array<Var, kHeads>& heads) {
  Var sum = heads[0];
  for (std::size_t h = 1; h < kHeads; ++h) sum = ops::add(sum, heads[h]);
  return ops::scale(sum, 1.0 / kHeads);
}

namespace {

void check_theta(const HeadWeights& theta) {
  for (double t : theta) {
    if (!(t >= 0.0)) throw std::invalid_argument("class_loss: head weights must be >= 0");
  }
}

}  // namespace

Var class_loss(const std::array<Var, kHeads>& heads, std::size_t label,
               const HeadWeights& theta) {
  check_theta(theta);
  Var total;
  for (std::size_t h = 0; h < kHeads; ++h) {
    Var term = ops::scale(ops::cross_entropy(heads[h], label), theta[h]);
    total = h == 0 ? term : ops::add(total, term);
  }
  return total;
}

double class_loss(const std::array<Tensor, kHeads>& heads, std::size_t label,
                  const HeadWeights& theta) {
  Tape tape;
  std::array<Var, kHeads> v;
  for (std::size_t h = 0; h < kHeads; ++h) v[h] = tape.constant(heads[h]);
  return class_loss(v, label, theta).value()[0];
}

}  // namespace saccade
