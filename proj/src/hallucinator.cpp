#include "saccade/hallucinator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "saccade/checkpoint.hpp"

namespace saccade {
namespace ops {

Var max_normalize(Var x) {
  const Tensor& xv = x.value();
  std::size_t arg = 0;
  double m = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (std::abs(xv[i]) > m) {
      m = std::abs(xv[i]);
      arg = i;
    }
  }
  if (m == 0.0) {
    return x.tape().record(xv, {x},
                           [x](Tape& t, const Tensor& g) { t.accumulate(x, g); });
  }
  Tensor out = xv;
  out *= 1.0 / m;
  const double sign = xv[arg] > 0 ? 1.0 : -1.0;
  return x.tape().record(
      std::move(out), {x}, [x, m, arg, sign](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(x);
        Tensor* gx = t.grad_buffer(x);
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          (*gx)[i] += g[i] / m;
          dot += g[i] * xv[i];
        }
        (*gx)[arg] -= sign * dot / (m * m);
      });
}

namespace {

struct ChannelStats {
  double mu_a, mu_b, var_a, var_b, cov;
  double a1, a2, b1, b2, s;
};

ChannelStats channel_stats(const double* a, const double* b, std::size_t n,
                           double c1, double c2) {
  ChannelStats st{};
  const double inv = 1.0 / static_cast<double>(n);
  double sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sa += a[i];
    sb += b[i];
  }
  st.mu_a = sa * inv;
  st.mu_b = sb * inv;
  double va = 0.0, vb = 0.0, cv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - st.mu_a;
    const double db = b[i] - st.mu_b;
    va += da * da;
    vb += db * db;
    cv += da * db;
  }
  st.var_a = va * inv;
  st.var_b = vb * inv;
  st.cov = cv * inv;
  st.a1 = 2.0 * st.mu_a * st.mu_b + c1;
  st.a2 = 2.0 * st.cov + c2;
  st.b1 = st.mu_a * st.mu_a + st.mu_b * st.mu_b + c1;
  st.b2 = st.var_a + st.var_b + c2;
  st.s = (st.a1 * st.a2) / (st.b1 * st.b2);
  return st;
}

Var ssim_core(Var a, Var b, const SsimParams& p) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "ssim");
  if (av.rank() != 3) {
    throw std::invalid_argument("ssim: expected C x H x W maps, got " +
                                shape_str(av.shape()));
  }
  const std::size_t C = av.dim(0), n = av.dim(1) * av.dim(2);
  const double c1 = p.c1(), c2 = p.c2();
  double total = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    total += channel_stats(av.raw() + c * n, bv.raw() + c * n, n, c1, c2).s;
  }
  Tensor out({1}, total / static_cast<double>(C));
  return a.tape().record(
      std::move(out), {a, b}, [a, b, C, n, c1, c2](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        Tensor* ga = t.grad_buffer(a);
        Tensor* gb = t.grad_buffer(b);
        const double scale = g[0] / static_cast<double>(C);
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t c = 0; c < C; ++c) {
          const double* ap = av.raw() + c * n;
          const double* bp = bv.raw() + c * n;
          const ChannelStats st = channel_stats(ap, bp, n, c1, c2);
          const double denom = st.b1 * st.b2;
          const double d_cov = 2.0 * st.a1 / denom;
          const double d_mu_a = 2.0 * st.mu_b * st.a2 / denom - 2.0 * st.mu_a * st.s / st.b1;
          const double d_mu_b = 2.0 * st.mu_a * st.a2 / denom - 2.0 * st.mu_b * st.s / st.b1;
          const double d_var = -st.s / st.b2;
          for (std::size_t i = 0; i < n; ++i) {
            const double da = ap[i] - st.mu_a;
            const double db = bp[i] - st.mu_b;
            if (ga) {
              (*ga)[c * n + i] +=
                  scale * inv * (d_mu_a + 2.0 * d_var * da + d_cov * db);
            }
            if (gb) {
              (*gb)[c * n + i] +=
                  scale * inv * (d_mu_b + 2.0 * d_var * db + d_cov * da);
            }
          }
        }
      });
}

}  // namespace

Var ssim(Var a, Var b, const SsimParams& p) {
  if (p.normalize) return ssim_core(max_normalize(a), max_normalize(b), p);
  return ssim_core(a, b, p);
}

}  // namespace ops

double ssim(const Tensor& a, const Tensor& b, const SsimParams& p) {
  Tape tape;
  return ops::ssim(tape.constant(a), tape.constant(b), p).value()[0];
}

double ssim(const AttentionMap& a, const AttentionMap& b, const SsimParams& p) {
  return ssim(a.values, b.values, p);
}

Hallucinator::Hallucinator(HallucinatorConfig config)
    : encoder("hallucinator.encoder", config.channels, config.hidden,
              config.kernel, {config.kernel / 2, 1}),
      gates("hallucinator.gates", 2 * config.hidden, 4 * config.hidden,
            config.kernel, {config.kernel / 2, 1}),
      decoder("hallucinator.decoder", config.hidden, config.channels,
              config.kernel, {config.kernel / 2, 1}),
      config_(config) {
  if (config.kernel % 2 == 0) {
    throw std::invalid_argument("hallucinator: kernel must be odd");
  }
}

void Hallucinator::init(Rng& rng) {
  encoder.init(rng);
  gates.init(rng);
  decoder.init(rng);
}

ParameterRefs Hallucinator::parameters() {
  ParameterRefs out = encoder.parameters();
  append(out, gates.parameters());
  append(out, decoder.parameters());
  return out;
}

ConvLstmState Hallucinator::zero_state() const {
  const Shape s{config_.hidden, config_.height, config_.width};
  return {Tensor(s), Tensor(s)};
}

void Hallucinator::check_input(const Tensor& attention) const {
  const Shape want{config_.channels, config_.height, config_.width};
  if (attention.shape() != want) {
    throw std::invalid_argument("hallucinator: attention " +
                                shape_str(attention.shape()) +
                                " does not match configured " + shape_str(want));
  }
}

Hallucinator::StepVars Hallucinator::step(Tape& tape, Var attention, Var hidden,
                                          Var cell) {
  check_input(attention.value());
  const std::size_t ch = config_.hidden;
  const Shape plane{ch, config_.height, config_.width};
  const std::size_t block = shape_numel(plane);

  Var e = encoder.forward(tape, attention);
  Var stacked = ops::concat({e, hidden}, Shape{2 * ch, config_.height, config_.width});
  Var z = gates.forward(tape, stacked);
  Var i = ops::sigmoid(ops::slice(z, 0 * block, plane));
  Var f = ops::sigmoid(ops::slice(z, 1 * block, plane));
  Var o = ops::sigmoid(ops::slice(z, 2 * block, plane));
  Var g = ops::tanh(ops::slice(z, 3 * block, plane));
  Var c_next = ops::add(ops::mul(f, cell), ops::mul(i, g));
  Var h_next = ops::mul(o, ops::tanh(c_next));
  return {decoder.forward(tape, h_next), h_next, c_next};
}

Hallucinator::StepResult Hallucinator::step(const AttentionMap& attention,
                                            const ConvLstmState& state) {
  Tape tape;
  tape.freeze(parameters());
  StepVars v = step(tape, tape.constant(attention.values),
                    tape.constant(state.hidden), tape.constant(state.cell));
  return {AttentionMap{v.prediction.value(), attention.kind},
          ConvLstmState{v.hidden.value(), v.cell.value()}};
}

std::uint64_t Hallucinator::flops_per_step(std::uint64_t flops_per_mac) const {
  const std::uint64_t hw = config_.height * config_.width;
  const std::uint64_t k2 = config_.kernel * config_.kernel;
  const std::uint64_t c = config_.channels, h = config_.hidden;
  const std::uint64_t macs = (c * h + 8 * h * h + h * c) * k2 * hw;
  // Gate activations, cell update and output product.
  const std::uint64_t elementwise = 10 * h * hw;
  return flops_per_mac * macs + elementwise;
}

std::vector<std::uint32_t> Hallucinator::dims() const {
  return {static_cast<std::uint32_t>(config_.channels),
          static_cast<std::uint32_t>(config_.hidden),
          static_cast<std::uint32_t>(config_.height),
          static_cast<std::uint32_t>(config_.width),
          static_cast<std::uint32_t>(config_.kernel)};
}

void Hallucinator::save(const std::filesystem::path& path) {
  save_checkpoint(path, "HALC", dims(), parameters());
}

void Hallucinator::load(const std::filesystem::path& path) {
  load_checkpoint(path, "HALC", dims(), parameters());
}

Var belief_loss(Tape& tape, Hallucinator& h, std::span<const AttentionMap> seq,
                const SsimParams& p) {
  if (seq.size() < 2) {
    throw std::invalid_argument("belief_loss: need at least 2 frames, got " +
                                std::to_string(seq.size()));
  }
  const ConvLstmState init = h.zero_state();
  Var hidden = tape.constant(init.hidden);
  Var cell = tape.constant(init.cell);
  std::vector<Var> terms;
  for (std::size_t t = 1; t < seq.size(); ++t) {
    auto step = h.step(tape, tape.constant(seq[t - 1].values), hidden, cell);
    hidden = step.hidden;
    cell = step.cell;
    terms.push_back(ops::ssim(step.prediction, tape.constant(seq[t].values), p));
  }
  return ops::scale(ops::sum(ops::concat(terms)),
                    -1.0 / static_cast<double>(terms.size()));
}

double belief_loss(Hallucinator& h, std::span<const AttentionMap> seq,
                   const SsimParams& p) {
  Tape tape;
  tape.freeze(h.parameters());
  return belief_loss(tape, h, seq, p).value()[0];
}

double mean_belief_loss(Hallucinator& h, std::span<const AttentionSequence> data,
                        const SsimParams& p) {
  if (data.empty()) throw std::invalid_argument("belief loss: empty dataset");
  double total = 0.0;
  for (const AttentionSequence& s : data) total += belief_loss(h, s, p);
  return total / static_cast<double>(data.size());
}

HallucinatorTraining train_hallucinator(Hallucinator& h,
                                        std::span<const AttentionSequence> data,
                                        std::size_t epochs,
                                        const SgdOptions& options, Rng& rng,
                                        const SsimParams& p) {
  if (data.empty()) {
    throw std::invalid_argument("train_hallucinator: empty dataset");
  }
  HallucinatorTraining result;
  result.initial_loss = mean_belief_loss(h, data, p);
  const ParameterRefs params = h.parameters();
  SgdMomentum opt(params, options);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    opt.begin_epoch(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      Tape tape;
      Var loss = belief_loss(tape, h, data[idx], p);
      tape.backward(loss);
      opt.step(tape.grads(params));
    }
    result.epoch_loss.push_back(mean_belief_loss(h, data, p));
  }
  return result;
}

}  // namespace saccade
