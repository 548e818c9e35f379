#include "saccade/data.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <stdexcept>
#include <thread>

namespace saccade {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::string_view stream) {
  // FNV-1a over the stream name, then the integer mixer.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : stream) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return mix_seed(seed, h);
}

namespace {

struct Motion {
  double dr = 0.0;
  double dc = 0.0;
};

Motion direction(Trajectory kind) {
  switch (kind) {
    case Trajectory::kLeftRight: return {0.0, 1.0};
    case Trajectory::kTopDown: return {1.0, 0.0};
    case Trajectory::kStatic: return {0.0, 0.0};
    case Trajectory::kRightLeft: return {0.0, -1.0};
    case Trajectory::kBottomUp: return {-1.0, 0.0};
    case Trajectory::kDiagonal: return {M_SQRT1_2, M_SQRT1_2};
  }
  return {};
}

// Start coordinate along an axis travelled in direction `dir`.
double start_along(double dir, double extent, Rng& rng) {
  std::uniform_real_distribution<double> near(8.0, 12.0);
  if (dir > 0) return near(rng);
  if (dir < 0) return extent - near(rng);
  std::uniform_real_distribution<double> any(12.0, extent - 12.0);
  return any(rng);
}

}  // namespace

SyntheticSequence gen_sequence(const SequenceSpec& spec, std::uint64_t seq_id,
                               std::uint64_t seed) {
  if (spec.classes < 2 || spec.classes > kTrajectoryKinds) {
    throw std::invalid_argument("gen_sequence: classes must be in [2, " +
                                std::to_string(kTrajectoryKinds) + "]");
  }
  if (spec.frames == 0 || spec.height < 24 || spec.width < 24) {
    throw std::invalid_argument("gen_sequence: need T >= 1 and images of at least 24x24");
  }
  SyntheticSequence s;
  s.seq_id = seq_id;
  s.seed = mix_seed(seed, seq_id);
  s.label = seq_id % spec.classes;
  s.kind = static_cast<Trajectory>(s.label);
  Rng rng(s.seed);

  const Motion m = direction(s.kind);
  const double H = static_cast<double>(spec.height);
  const double W = static_cast<double>(spec.width);
  double r0 = start_along(m.dr, H, rng);
  double c0 = start_along(m.dc, W, rng);
  const bool moving = m.dr != 0.0 || m.dc != 0.0;
  if (moving) {
    std::uniform_real_distribution<double> sp(2.0, 3.0);
    s.speed = sp(rng);
    // Keep the whole path at least 8 px from the far border.
    if (spec.frames > 1) {
      const double steps = static_cast<double>(spec.frames - 1);
      auto room = [&](double pos, double dir, double extent) {
        if (dir > 0) return (extent - 8.0 - pos) / (dir * steps);
        if (dir < 0) return (pos - 8.0) / (-dir * steps);
        return std::numeric_limits<double>::infinity();
      };
      s.speed = std::min({s.speed, room(r0, m.dr, H), room(c0, m.dc, W)});
    }
  }

  const double sigma_along = moving ? 3.2 : 1.8;
  const double sigma_across = moving ? 1.3 : 1.8;
  std::normal_distribution<double> jitter(0.0, 0.15);
  std::uniform_real_distribution<double> noise(0.0, 0.35);
  std::uniform_real_distribution<double> gain(0.75, 1.0);
  const double amp = gain(rng);

  // Unit vectors along and across the motion; arbitrary for a static blob.
  const double ar = moving ? m.dr : 0.0, ac = moving ? m.dc : 1.0;
  const double xr = -ac, xc = ar;

  for (std::size_t t = 0; t < spec.frames; ++t) {
    const double td = static_cast<double>(t);
    double cr = r0 + m.dr * s.speed * td;
    double cc = c0 + m.dc * s.speed * td;
    if (!moving) {
      cr += jitter(rng);
      cc += jitter(rng);
    }
    s.centers.push_back({cr, cc});
    Tensor img({3, spec.height, spec.width});
    for (std::size_t y = 0; y < spec.height; ++y) {
      for (std::size_t x = 0; x < spec.width; ++x) {
        const double dy = static_cast<double>(y) + 0.5 - cr;
        const double dx = static_cast<double>(x) + 0.5 - cc;
        const double u = dy * ar + dx * ac;
        const double v = dy * xr + dx * xc;
        const double blob =
            amp * std::exp(-0.5 * (u * u / (sigma_along * sigma_along) +
                                   v * v / (sigma_across * sigma_across)));
        for (std::size_t c = 0; c < 3; ++c) {
          img.at(c, y, x) = std::min(1.0, noise(rng) + blob);
        }
      }
    }
    s.frames.push_back(std::move(img));
  }
  return s;
}

std::vector<SyntheticSequence> gen_dataset(const SequenceSpec& spec, std::size_t n,
                                           std::uint64_t seed, std::uint64_t first_id,
                                           std::size_t jobs) {
  std::vector<SyntheticSequence> out(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    out[i] = gen_sequence(spec, first_id + i, seed);
  });
  return out;
}

std::vector<AttentionMap> translating_blob_attention(const BlobAttentionSpec& spec,
                                                     Rng& rng) {
  static constexpr double kDirs[4][2] = {{0, 1}, {1, 0}, {0, -1}, {-1, 0}};
  std::uniform_int_distribution<int> pick(0, 3);
  const auto& d = kDirs[pick(rng)];
  const double H = static_cast<double>(spec.height);
  const double W = static_cast<double>(spec.width);
  const double travel = spec.speed * static_cast<double>(spec.frames - 1);
  // Start so that the path stays on the map.
  auto start = [&](double dir, double extent) {
    const double lo = dir > 0 ? 0.5 : (dir < 0 ? 0.5 + travel : 0.5);
    const double hi = dir > 0 ? extent - 0.5 - travel : extent - 0.5;
    std::uniform_real_distribution<double> u(lo, std::max(lo, hi));
    return u(rng);
  };
  const double r0 = start(d[0], H);
  const double c0 = start(d[1], W);
  std::uniform_real_distribution<double> g(0.3, 1.0);
  std::vector<double> gains(spec.channels);
  for (double& v : gains) v = g(rng);

  std::vector<AttentionMap> seq;
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const double cr = r0 + d[0] * spec.speed * static_cast<double>(t);
    const double cc = c0 + d[1] * spec.speed * static_cast<double>(t);
    Tensor a({spec.channels, spec.height, spec.width});
    for (std::size_t y = 0; y < spec.height; ++y) {
      for (std::size_t x = 0; x < spec.width; ++x) {
        const double dy = static_cast<double>(y) + 0.5 - cr;
        const double dx = static_cast<double>(x) + 0.5 - cc;
        const double v = std::exp(-(dy * dy + dx * dx) / (2 * spec.sigma * spec.sigma));
        for (std::size_t c = 0; c < spec.channels; ++c) a.at(c, y, x) = gains[c] * v;
      }
    }
    seq.push_back({std::move(a), AttentionKind::kNormalized});
  }
  return seq;
}

void parallel_for(std::size_t n, std::size_t jobs,
                  const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  std::vector<std::exception_ptr> errors(n);
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace saccade
