#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include "saccade/attention.hpp"
#include "saccade/hallucinator.hpp"
#include "saccade/nn.hpp"
#include "saccade/spatial.hpp"
#include "saccade/tensor.hpp"

namespace saccade::testing {

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Zero-padded cross-correlation by direct summation.
inline Tensor naive_conv(const Tensor& in, const Tensor& w, const Tensor& b,
                         std::size_t pad) {
  const long C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const long Co = w.dim(0), K = w.dim(2), P = static_cast<long>(pad);
  const long Ho = H + 2 * P - K + 1, Wo = W + 2 * P - K + 1;
  Tensor out({static_cast<std::size_t>(Co), static_cast<std::size_t>(Ho),
              static_cast<std::size_t>(Wo)});
  for (long co = 0; co < Co; ++co)
    for (long y = 0; y < Ho; ++y)
      for (long x = 0; x < Wo; ++x) {
        double s = b[co];
        for (long ci = 0; ci < C; ++ci)
          for (long ky = 0; ky < K; ++ky)
            for (long kx = 0; kx < K; ++kx) {
              const long iy = y + ky - P, ix = x + kx - P;
              if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
              s += w[((co * C + ci) * K + ky) * K + kx] * in.at(ci, iy, ix);
            }
        out.at(co, y, x) = s;
      }
  return out;
}

inline double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Textbook SSIM on max-normalised maps, whole-map moments, long double.
inline long double ssim_oracle(const Tensor& a, const Tensor& b) {
  auto norm = [](const Tensor& t) {
    long double m = 0;
    for (double v : t.data()) m = std::max(m, std::abs(static_cast<long double>(v)));
    std::vector<long double> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = m == 0 ? 0.0L : t[i] / m;
    return out;
  };
  const auto x = norm(a), y = norm(b);
  const std::size_t C = a.dim(0), n = a.dim(1) * a.dim(2);
  const long double c1 = 0.0001L, c2 = 0.0009L;
  long double total = 0;
  for (std::size_t c = 0; c < C; ++c) {
    long double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += x[c * n + i];
      my += y[c * n + i];
    }
    mx /= n;
    my /= n;
    long double vx = 0, vy = 0, cxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      vx += (x[c * n + i] - mx) * (x[c * n + i] - mx);
      vy += (y[c * n + i] - my) * (y[c * n + i] - my);
      cxy += (x[c * n + i] - mx) * (y[c * n + i] - my);
    }
    vx /= n;
    vy /= n;
    cxy /= n;
    total += ((2 * mx * my + c1) * (2 * cxy + c2)) /
             ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return total / C;
}

// Scatter-add of every local footprint, dropping cells outside the plane.
inline Tensor scatter_oracle(const std::vector<LocalAttention>& locals, std::size_t C,
                             std::size_t H, std::size_t W) {
  Tensor want({C, H, W});
  for (const LocalAttention& l : locals) {
    const long fh = static_cast<long>(l.weights.dim(1)), fw = static_cast<long>(l.weights.dim(2));
    for (std::size_t c = 0; c < C; ++c)
      for (long dy = 0; dy < fh; ++dy)
        for (long dx = 0; dx < fw; ++dx) {
          const long y = l.top + dy, x = l.left + dx;
          if (y < 0 || x < 0 || y >= long(H) || x >= long(W)) continue;
          want.at(c, y, x) += l.weights.at(c, dy, dx);
        }
  }
  return want;
}

inline BinaryMask random_mask(Rng& rng, std::size_t n = 7, double p = 0.45) {
  std::bernoulli_distribution on(p);
  BinaryMask m{n, n, {}};
  for (std::size_t i = 0; i < n * n; ++i) m.bits.push_back(on(rng) ? 1 : 0);
  return m;
}

// Union-find over set cells; components returned as sorted cell-index sets.
inline std::set<std::set<std::size_t>> union_find_oracle(const BinaryMask& m, Adjacency adj) {
  const std::size_t n = m.bits.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (!m.bits[a] || !m.bits[b]) continue;
      const long dy = std::labs(long(a / m.width) - long(b / m.width));
      const long dx = std::labs(long(a % m.width) - long(b % m.width));
      const bool linked = adj == Adjacency::kManhattan2 ? dy + dx <= 2
                                                        : std::max(dy, dx) <= 1;
      if (linked) parent[find(a)] = find(b);
    }
  }
  std::map<std::size_t, std::set<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i)
    if (m.bits[i]) groups[find(i)].insert(i);
  std::set<std::set<std::size_t>> out;
  for (auto& [root, g] : groups) out.insert(g);
  return out;
}

inline std::set<std::set<std::size_t>> as_sets(const std::vector<Region>& regions,
                                               std::size_t w) {
  std::set<std::set<std::size_t>> out;
  for (const Region& r : regions) {
    std::set<std::size_t> s;
    for (const Cell& c : r) s.insert(c.row * w + c.col);
    out.insert(s);
  }
  return out;
}

struct RankedRegion {
  double score, row, col;
};

// Exhaustive scoring and full sort: score desc, then centroid row, column.
inline std::vector<RankedRegion> top_k_oracle(const AttentionMap& a,
                                              const std::vector<Region>& regions,
                                              std::size_t k) {
  const std::size_t C = a.channels();
  std::vector<RankedRegion> all;
  for (const Region& reg : regions) {
    double s = 0, r = 0, c = 0;
    for (const Cell& cell : reg) {
      double m = 0;
      for (std::size_t ch = 0; ch < C; ++ch) m += a.values.at(ch, cell.row, cell.col);
      m /= static_cast<double>(C);
      s += m;
      r += m * cell.row;
      c += m * cell.col;
    }
    all.push_back({s, r / s, c / s});
  }
  std::sort(all.begin(), all.end(), [](const RankedRegion& x, const RankedRegion& y) {
    return std::tie(y.score, x.row, x.col) < std::tie(x.score, y.row, y.col);
  });
  if (all.size() > k) all.resize(k);
  return all;
}

// Scalar GRU: r, z, n gate order, n sees r * (W_hn h + b_hn).
inline Tensor gru_oracle(const GruCell& cell, const Tensor& x, const Tensor& h) {
  const std::size_t n = h.size(), in = x.size();
  const Tensor& wx = cell.w_x.value;
  const Tensor& wh = cell.w_h.value;
  const Tensor& bx = cell.b_x.value;
  const Tensor& bh = cell.b_h.value;
  auto gx = [&](std::size_t row) {
    double s = bx[row];
    for (std::size_t j = 0; j < in; ++j) s += wx[row * in + j] * x[j];
    return s;
  };
  auto gh = [&](std::size_t row) {
    double s = bh[row];
    for (std::size_t j = 0; j < n; ++j) s += wh[row * n + j] * h[j];
    return s;
  };
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    const double r = sigmoid_ref(gx(i) + gh(i));
    const double z = sigmoid_ref(gx(n + i) + gh(n + i));
    const double c = std::tanh(gx(2 * n + i) + r * gh(2 * n + i));
    out[i] = (1 - z) * c + z * h[i];
  }
  return out;
}

struct ConvLstmReference {
  Tensor cell, hidden, prediction;
};

// Encoder conv, gate conv over [encoded; hidden] with i, f, o, g order,
// decoder conv; all by direct summation.
inline ConvLstmReference conv_lstm_oracle(const Hallucinator& h, const Tensor& a,
                                          const ConvLstmState& s) {
  const std::size_t pad = h.gates.kernel() / 2;
  const Tensor e = naive_conv(a, h.encoder.weight.value, h.encoder.bias.value, pad);
  const std::size_t ce = e.dim(0), ch = s.hidden.dim(0), hw = e.dim(1) * e.dim(2);
  Tensor stacked({ce + ch, e.dim(1), e.dim(2)});
  for (std::size_t i = 0; i < ce * hw; ++i) stacked[i] = e[i];
  for (std::size_t i = 0; i < ch * hw; ++i) stacked[ce * hw + i] = s.hidden[i];
  const Tensor z = naive_conv(stacked, h.gates.weight.value, h.gates.bias.value, pad);
  const std::size_t n = ch * hw;
  ConvLstmReference ref{Tensor(s.cell.shape()), Tensor(s.hidden.shape()), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const double ig = sigmoid_ref(z[i]), fg = sigmoid_ref(z[n + i]), og = sigmoid_ref(z[2 * n + i]);
    const double gg = std::tanh(z[3 * n + i]);
    ref.cell[i] = fg * s.cell[i] + ig * gg;
    ref.hidden[i] = og * std::tanh(ref.cell[i]);
  }
  ref.prediction = naive_conv(ref.hidden, h.decoder.weight.value, h.decoder.bias.value, pad);
  return ref;
}

}  // namespace saccade::testing
