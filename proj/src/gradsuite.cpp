#include "saccade/gradsuite.hpp"

#include <algorithm>
#include <functional>
#include <stdexcept>

#include "saccade/attention.hpp"
#include "saccade/classifier.hpp"
#include "saccade/data.hpp"
#include "saccade/gradcheck.hpp"
#include "saccade/hallucinator.hpp"
#include "saccade/temporal.hpp"

namespace saccade {

namespace {

Tensor uniform(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Weighted sum, so every output element carries a distinct gradient.
Var project(Tape& tape, Var x, const Tensor& w) {
  return ops::sum(ops::mul(x, tape.constant(w.reshaped(x.shape()))));
}

using Check = std::function<GradCheckResult(Rng&, const GradCheckOptions&)>;

GradCheckResult conv2d_check(Rng& rng, const GradCheckOptions& o) {
  Conv2d conv("c", 2, 3, 3, {1, 1});
  conv.init(rng);
  Parameter x{"x", uniform({2, 5, 5}, rng)};
  const Tensor w = uniform({3 * 25}, rng);
  ParameterRefs p = conv.parameters();
  p.push_back(&x);
  return check_gradients(p, [&](Tape& t) {
    return project(t, conv.forward(t, t.bind(x)), w);
  }, rng, o);
}

GradCheckResult gru_check(Rng& rng, const GradCheckOptions& o) {
  GruCell cell("g", 4, 3);
  cell.init(rng);
  Parameter x{"x", uniform({4}, rng)}, h{"h", uniform({3}, rng)};
  const Tensor w = uniform({3}, rng);
  ParameterRefs p = cell.parameters();
  p.push_back(&x);
  p.push_back(&h);
  return check_gradients(p, [&](Tape& t) {
    return project(t, cell.forward(t, t.bind(x), t.bind(h)), w);
  }, rng, o);
}

HallucinatorConfig tiny_hallucinator() { return {2, 3, 4, 4, 3}; }

GradCheckResult conv_lstm_check(Rng& rng, const GradCheckOptions& o) {
  Hallucinator hal(tiny_hallucinator());
  hal.init(rng);
  Parameter a{"a", uniform({2, 4, 4}, rng)};
  Parameter h{"h", uniform({3, 4, 4}, rng)}, c{"c", uniform({3, 4, 4}, rng)};
  const Tensor wh = uniform({48}, rng), wc = uniform({48}, rng);
  ParameterRefs p = hal.gates.parameters();
  p.insert(p.end(), {&h, &c});
  return check_gradients(p, [&](Tape& t) {
    auto s = hal.step(t, t.bind(a), t.bind(h), t.bind(c));
    return ops::add(project(t, s.hidden, wh), project(t, s.cell, wc));
  }, rng, o);
}

GradCheckResult encoder_decoder_check(Rng& rng, const GradCheckOptions& o) {
  Hallucinator hal(tiny_hallucinator());
  hal.init(rng);
  Parameter a{"a", uniform({2, 4, 4}, rng)};
  const Tensor w = uniform({32}, rng);
  const auto zero = hal.zero_state();
  ParameterRefs p = hal.parameters();
  p.push_back(&a);
  return check_gradients(p, [&](Tape& t) {
    auto s = hal.step(t, t.bind(a), t.constant(zero.hidden), t.constant(zero.cell));
    return project(t, s.prediction, w);
  }, rng, o);
}

GradCheckResult ssim_check(Rng& rng, const GradCheckOptions& o) {
  Parameter a{"a", uniform({2, 4, 4}, rng, 0.1, 1.0)};
  Parameter b{"b", uniform({2, 4, 4}, rng, 0.1, 1.0)};
  return check_gradients({&a, &b}, [&](Tape& t) {
    return ops::ssim(t.bind(a), t.bind(b));
  }, rng, o);
}

GradCheckResult belief_check(Rng& rng, const GradCheckOptions& o) {
  Hallucinator hal(tiny_hallucinator());
  hal.init(rng);
  std::vector<AttentionMap> seq;
  for (int i = 0; i < 3; ++i) {
    seq.push_back({uniform({2, 4, 4}, rng, 0.0, 1.0), AttentionKind::kNormalized});
  }
  return check_gradients(hal.parameters(), [&](Tape& t) {
    return belief_loss(t, hal, seq);
  }, rng, o);
}

GradCheckResult gumbel_check(Rng& rng, const GradCheckOptions& o) {
  Parameter z{"z", uniform({4}, rng, -2.0, 2.0)};
  const Tensor w = uniform({4}, rng);
  return check_gradients({&z}, [&](Tape& t) {
    return project(t, gumbel_softmax(t.bind(z), {0.7, false, false}, nullptr), w);
  }, rng, o);
}

GradCheckResult policy_check(Rng& rng, const GradCheckOptions& o) {
  Policy pol(PolicyConfig{4, 4, 3, 5, 2});
  pol.init(rng);
  const Tensor f = uniform({4}, rng), h = uniform({4}, rng);
  const Tensor w = uniform({4}, rng);
  const auto state = pol.zero_state();
  return check_gradients(pol.parameters(), [&](Tape& t) {
    std::vector<Var> s;
    for (const Tensor& x : state) s.push_back(t.constant(x));
    auto out = pol.forward(t, t.constant(f), t.constant(h), t.constant(Tensor({1}, 0.4)), s,
                           {1.0, false, false}, nullptr);
    return project(t, out.r, w);
  }, rng, o);
}

GradCheckResult heads_check(Rng& rng, const GradCheckOptions& o) {
  ThreeHeadClassifier cls({3, 2, 4, 3});
  cls.init(rng);
  const Tensor low = uniform({3}, rng), crops = uniform({6}, rng);
  return check_gradients(cls.parameters(), [&](Tape& t) {
    ThreeHeadClassifier::StateVars s;
    for (auto& v : s) v = t.constant(Tensor({4}));
    s = cls.update(t, t.constant(low), t.constant(crops), s);
    return class_loss(cls.head_logits(t, s), 1, {1.0, 0.5, 2.0});
  }, rng, o);
}

GradCheckResult attention_check(Rng& rng, const GradCheckOptions& o) {
  AttentionProjections proj("a", 2);
  proj.init(rng);
  Parameter x{"x", uniform({2, 4, 4}, rng)};
  const Tensor w = uniform({32}, rng);
  ParameterRefs p = proj.parameters();
  p.push_back(&x);
  return check_gradients(p, [&](Tape& t) {
    return project(t, pairwise_attention(t, t.bind(x), proj, 3).z, w);
  }, rng, o);
}

GradCheckResult gate_check(Rng& rng, const GradCheckOptions& o) {
  Parameter g{"g", Tensor::vector({0.35})};
  Parameter a{"a", uniform({5}, rng)}, b{"b", uniform({5}, rng)};
  const Tensor w = uniform({5}, rng);
  return check_gradients({&g, &a, &b}, [&](Tape& t) {
    return project(t, ops::blend(t.bind(g), t.bind(a), t.bind(b)), w);
  }, rng, o);
}

const std::vector<std::pair<std::string, Check>>& registry() {
  static const std::vector<std::pair<std::string, Check>> r = {
      {"conv2d", conv2d_check},
      {"gru_cell", gru_check},
      {"conv_lstm_step", conv_lstm_check},
      {"encoder_decoder", encoder_decoder_check},
      {"ssim", ssim_check},
      {"belief_loss", belief_check},
      {"gumbel_softmax", gumbel_check},
      {"policy_head", policy_check},
      {"cross_entropy_heads", heads_check},
      {"pairwise_attention", attention_check},
      {"memory_gate", gate_check},
  };
  return r;
}

}  // namespace

const std::vector<std::string>& gradient_suite_ops() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, fn] : registry()) n.push_back(name);
    return n;
  }();
  return names;
}

std::vector<GradSuiteRow> run_gradient_suite(std::uint64_t seed, const std::string& corrupt_op,
                                             double threshold) {
  const auto& names = gradient_suite_ops();
  if (!corrupt_op.empty() && std::find(names.begin(), names.end(), corrupt_op) == names.end()) {
    throw std::invalid_argument("gradcheck: unknown op '" + corrupt_op + "'");
  }
  std::vector<GradSuiteRow> rows;
  for (const auto& [name, check] : registry()) {
    Rng rng(mix_seed(seed, name));
    GradCheckOptions opt;
    opt.max_coordinates = 200;
    if (name == corrupt_op) {
      opt.corrupt = [](std::vector<Tensor>& g) {
        for (Tensor& t : g) t *= 1.01;
      };
    }
    const GradCheckResult r = check(rng, opt);
    rows.push_back({name, r.max_rel_err, threshold, r.checked > 0 && r.max_rel_err <= threshold});
  }
  return rows;
}

}  // namespace saccade
