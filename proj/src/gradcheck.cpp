#include "saccade/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace saccade {
namespace {

double eval_loss(const std::function<Var(Tape&)>& loss) {
  Tape tape;
  return loss(tape).value()[0];
}

}  // namespace

GradCheckResult check_gradients(const ParameterRefs& params,
                                const std::function<Var(Tape&)>& loss,
                                Rng& rng, const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
    analytic = tape.grads(params);
  }
  if (options.corrupt) options.corrupt(analytic);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p]->value.size(); ++i) {
      coords.emplace_back(p, i);
    }
  }
  if (coords.size() > options.max_coordinates) {
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coordinates);
  }

  GradCheckResult result;
  for (auto [p, i] : coords) {
    double& x = params[p]->value[i];
    const double saved = x;
    x = saved + options.epsilon;
    const double up = eval_loss(loss);
    x = saved - options.epsilon;
    const double down = eval_loss(loss);
    x = saved;
    const double numeric = (up - down) / (2.0 * options.epsilon);
    const double a = analytic[p][i];
    const double denom =
        std::max({options.floor, std::abs(a), std::abs(numeric)});
    result.max_rel_err = std::max(result.max_rel_err, std::abs(a - numeric) / denom);
    ++result.checked;
  }
  return result;
}

}  // namespace saccade
