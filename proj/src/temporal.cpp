#include "saccade/temporal.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "saccade/checkpoint.hpp"

namespace saccade {

namespace {

Tensor gumbel_noise(std::size_t n, Rng& rng) {
  // Open interval (0, 1) so both logarithms stay finite.
  std::uniform_real_distribution<double> u(std::numeric_limits<double>::min(), 1.0);
  Tensor g({n});
  for (double& v : g.data()) v = -std::log(-std::log(u(rng)));
  return g;
}

}  // namespace

Var gumbel_softmax(Var logits, const GumbelOptions& opt, Rng* rng) {
  if (!(opt.temperature > 0.0)) {
    throw std::invalid_argument("gumbel_softmax: temperature must be positive");
  }
  Var x = logits;
  if (opt.noise) {
    if (!rng) throw std::invalid_argument("gumbel_softmax: noise requires an rng");
    x = ops::add(x, logits.tape().constant(gumbel_noise(logits.size(), *rng)));
  }
  Var soft = ops::softmax(ops::scale(x, 1.0 / opt.temperature));
  return opt.hard ? ops::straight_through_onehot(soft) : soft;
}

Tensor gumbel_softmax(const Tensor& logits, const GumbelOptions& opt, Rng* rng) {
  Tape tape;
  return gumbel_softmax(tape.constant(logits), opt, rng).value();
}

std::size_t decide(const Tensor& r) {
  if (r.empty()) throw std::invalid_argument("decide: empty sampling vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.size(); ++i) {
    if (r[i] > r[best]) best = i;
  }
  return best;
}

Policy::Policy(PolicyConfig config)
    : config_(config),
      gru_("policy.gru", config.input_dim(), config.hidden, config.layers),
      head_("policy.head", config.hidden, config.max_skip + 1) {
  if (config.max_skip == 0) {
    throw std::invalid_argument("policy: temporal range M must be at least 1");
  }
}

void Policy::init(Rng& rng) {
  gru_.init(rng);
  head_.init(rng);
}

ParameterRefs Policy::parameters() {
  ParameterRefs out = gru_.parameters();
  append(out, head_.parameters());
  return out;
}

Policy::Output Policy::forward(Tape& tape, Var features, Var hallucination,
                               Var ssim, const std::vector<Var>& state,
                               const GumbelOptions& opt, Rng* rng) {
  if (features.size() != config_.feature_dim ||
      hallucination.size() != config_.hallucination_dim || ssim.size() != 1) {
    throw std::invalid_argument(
        "policy: expected features " + std::to_string(config_.feature_dim) +
        ", hallucination " + std::to_string(config_.hallucination_dim) +
        " and a scalar SSIM; got " + std::to_string(features.size()) + ", " +
        std::to_string(hallucination.size()) + ", " + std::to_string(ssim.size()));
  }
  Var x = ops::concat({features, hallucination, ssim});
  Output out;
  out.state = gru_.forward(tape, x, state);
  out.logits = head_.forward(tape, out.state.back());
  out.r = gumbel_softmax(out.logits, opt, rng);
  return out;
}

Policy::Decision Policy::step(const Tensor& features, const Tensor& hallucination,
                              double ssim, const std::vector<Tensor>& state,
                              const GumbelOptions& opt, Rng* rng) {
  Tape tape;
  tape.freeze(parameters());
  std::vector<Var> s;
  for (const Tensor& t : state) s.push_back(tape.constant(t));
  Output o = forward(tape, tape.constant(features), tape.constant(hallucination),
                     tape.constant(Tensor({1}, ssim)), s, opt, rng);
  Decision d{o.r.value(), decide(o.r.value()), {}};
  for (Var v : o.state) d.state.push_back(v.value());
  return d;
}

Flops Policy::flops_per_step(Flops flops_per_mac) const {
  const std::size_t out = config_.max_skip + 1;
  // GRU, head, then exp/sum/divide of the softmax.
  return gru_flops(config_.input_dim(), config_.hidden, config_.layers, flops_per_mac) +
         linear_flops(config_.hidden, out, flops_per_mac) + 4 * out;
}

std::vector<std::uint32_t> Policy::dims() const {
  return {static_cast<std::uint32_t>(config_.input_dim()),
          static_cast<std::uint32_t>(config_.hidden),
          static_cast<std::uint32_t>(config_.layers),
          static_cast<std::uint32_t>(config_.max_skip + 1)};
}

void Policy::save(const std::filesystem::path& path) {
  save_checkpoint(path, "TPOL", dims(), parameters());
}

void Policy::load(const std::filesystem::path& path) {
  load_checkpoint(path, "TPOL", dims(), parameters());
}

FrameStatus SkipSchedule::next(const std::function<std::size_t()>& decide) {
  const std::size_t t = frame_++;
  if (t == 0) {
    last_full_ = 0;
    return FrameStatus::kFull;
  }
  if (remaining_ > 0) {
    --remaining_;
    return FrameStatus::kSkip;
  }
  const std::size_t m = decide();
  if (m > max_skip_) {
    throw std::invalid_argument("schedule: decision " + std::to_string(m) +
                                " exceeds the temporal range " +
                                std::to_string(max_skip_));
  }
  if (m == 0) {
    last_full_ = t;
    return FrameStatus::kFull;
  }
  remaining_ = m - 1;
  return FrameStatus::kPrescan;
}

std::vector<FrameDecision> execute_schedule(std::span<const std::size_t> decisions,
                                            std::size_t frames,
                                            std::size_t max_skip,
                                            const CostBreakdown& cb) {
  SkipSchedule schedule(max_skip);
  std::size_t used = 0;
  std::vector<FrameDecision> out;
  out.reserve(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const FrameStatus s = schedule.next(
        [&] { return used < decisions.size() ? decisions[used++] : std::size_t{0}; });
    out.push_back({s, charge(s, cb), schedule.last_full()});
  }
  return out;
}

}  // namespace saccade
