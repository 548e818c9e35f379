#include "saccade/attention.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace saccade {

AttentionProjections::AttentionProjections(const std::string& name,
                                           std::size_t channels)
    : query(name + ".query", channels, channels, 1, {}),
      key(name + ".key", channels, channels, 1, {}),
      value(name + ".value", channels, channels, 1, {}) {}

void AttentionProjections::init(Rng& rng) {
  query.init(rng);
  key.init(rng);
  value.init(rng);
}

ParameterRefs AttentionProjections::parameters() {
  ParameterRefs out = query.parameters();
  append(out, key.parameters());
  append(out, value.parameters());
  return out;
}

PairwiseOutput pairwise_attention(Tape& tape, Var x, AttentionProjections& proj,
                                  std::size_t extent) {
  PairwiseOutput out;
  Var q = proj.query.forward(tape, x);
  Var k = proj.key.forward(tape, x);
  Var v = proj.value.forward(tape, x);
  out.z = pairwise_aggregate(q, k, v, extent, &out.locals);
  return out;
}

Var pairwise_aggregate(Var q, Var k, Var v, std::size_t extent,
                       std::vector<LocalAttention>* locals) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (extent % 2 == 0) {
    throw std::invalid_argument("pairwise_attention: footprint extent " +
                                std::to_string(extent) + " must be odd");
  }
  if (qv.rank() != 3 || kv.shape() != qv.shape() || vv.shape() != qv.shape()) {
    throw std::invalid_argument("pairwise_attention: q/k/v shape mismatch " +
                                shape_str(qv.shape()) + ", " +
                                shape_str(kv.shape()) + ", " +
                                shape_str(vv.shape()));
  }
  const std::size_t C = qv.dim(0), H = qv.dim(1), W = qv.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(extent / 2);
  const std::size_t block = extent * extent;
  const std::size_t plane = H * W;

  // alpha[((c * H + y) * W + x) * block + dy * extent + dx]
  auto alpha = std::make_shared<std::vector<double>>(C * plane * block, 0.0);
  Tensor z({C, H, W});
  std::vector<double> logits(block);

  auto inside = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
    return r >= 0 && c >= 0 && r < static_cast<std::ptrdiff_t>(H) &&
           c < static_cast<std::ptrdiff_t>(W);
  };

  for (std::size_t c = 0; c < C; ++c) {
    const double* qp = qv.raw() + c * plane;
    const double* kp = kv.raw() + c * plane;
    const double* vp = vv.raw() + c * plane;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double* a = alpha->data() + ((c * H + y) * W + x) * block;
        const double qi = qp[y * W + x];
        double mx = -INFINITY;
        for (std::size_t dy = 0; dy < extent; ++dy) {
          for (std::size_t dx = 0; dx < extent; ++dx) {
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(y + dy) - pad;
            const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(x + dx) - pad;
            if (!inside(r, s)) continue;
            const double l = qi * kp[r * W + s];
            logits[dy * extent + dx] = l;
            mx = std::max(mx, l);
          }
        }
        double total = 0.0;
        for (std::size_t dy = 0; dy < extent; ++dy) {
          for (std::size_t dx = 0; dx < extent; ++dx) {
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(y + dy) - pad;
            const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(x + dx) - pad;
            if (!inside(r, s)) continue;
            const double e = std::exp(logits[dy * extent + dx] - mx);
            a[dy * extent + dx] = e;
            total += e;
          }
        }
        double acc = 0.0;
        for (std::size_t dy = 0; dy < extent; ++dy) {
          for (std::size_t dx = 0; dx < extent; ++dx) {
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(y + dy) - pad;
            const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(x + dx) - pad;
            if (!inside(r, s)) continue;
            double& w = a[dy * extent + dx];
            w /= total;
            acc += w * vp[r * W + s];
          }
        }
        z.at(c, y, x) = acc;
      }
    }
  }

  if (locals) {
    locals->clear();
    locals->reserve(plane);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        LocalAttention la;
        la.top = static_cast<std::ptrdiff_t>(y) - pad;
        la.left = static_cast<std::ptrdiff_t>(x) - pad;
        la.weights = Tensor({C, extent, extent});
        for (std::size_t c = 0; c < C; ++c) {
          const double* a = alpha->data() + ((c * H + y) * W + x) * block;
          std::copy(a, a + block, la.weights.raw() + c * block);
        }
        locals->push_back(std::move(la));
      }
    }
  }

  return q.tape().record(
      std::move(z), {q, k, v},
      [q, k, v, alpha, C, H, W, extent, pad, block, plane](Tape& t,
                                                           const Tensor& g) {
        const Tensor& qv = t.value(q);
        const Tensor& kv = t.value(k);
        const Tensor& vv = t.value(v);
        Tensor* gq = t.grad_buffer(q);
        Tensor* gk = t.grad_buffer(k);
        Tensor* gv = t.grad_buffer(v);
        std::vector<double> dalpha(block);
        for (std::size_t c = 0; c < C; ++c) {
          const double* qp = qv.raw() + c * plane;
          const double* kp = kv.raw() + c * plane;
          const double* vp = vv.raw() + c * plane;
          for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
              const double gz = g[c * plane + y * W + x];
              if (gz == 0.0) continue;
              const double* a = alpha->data() + ((c * H + y) * W + x) * block;
              double dot = 0.0;
              for (std::size_t j = 0; j < block; ++j) {
                const std::ptrdiff_t r =
                    static_cast<std::ptrdiff_t>(y + j / extent) - pad;
                const std::ptrdiff_t s =
                    static_cast<std::ptrdiff_t>(x + j % extent) - pad;
                if (r < 0 || s < 0 || r >= static_cast<std::ptrdiff_t>(H) ||
                    s >= static_cast<std::ptrdiff_t>(W)) {
                  dalpha[j] = 0.0;
                  continue;
                }
                dalpha[j] = gz * vp[r * W + s];
                dot += a[j] * dalpha[j];
                if (gv) (*gv)[c * plane + r * W + s] += gz * a[j];
              }
              const double qi = qp[y * W + x];
              double gqi = 0.0;
              for (std::size_t j = 0; j < block; ++j) {
                if (a[j] == 0.0) continue;
                const std::ptrdiff_t r =
                    static_cast<std::ptrdiff_t>(y + j / extent) - pad;
                const std::ptrdiff_t s =
                    static_cast<std::ptrdiff_t>(x + j % extent) - pad;
                const double dl = a[j] * (dalpha[j] - dot);
                gqi += dl * kp[r * W + s];
                if (gk) (*gk)[c * plane + r * W + s] += dl * qi;
              }
              if (gq) (*gq)[c * plane + y * W + x] += gqi;
            }
          }
        }
      });
}

AttentionMap accumulate_global(std::span<const LocalAttention> locals,
                               std::size_t channels, std::size_t height,
                               std::size_t width) {
  AttentionMap out{Tensor({channels, height, width}),
                   AttentionKind::kRawCumulative};
  const auto H = static_cast<std::ptrdiff_t>(height);
  const auto W = static_cast<std::ptrdiff_t>(width);
  for (const LocalAttention& la : locals) {
    if (la.weights.rank() != 3 || la.channels() != channels) {
      throw std::invalid_argument(
          "accumulate_global: local attention of shape " +
          shape_str(la.weights.shape()) + " does not have " +
          std::to_string(channels) + " channels");
    }
    const auto rows = static_cast<std::ptrdiff_t>(la.rows());
    const auto cols = static_cast<std::ptrdiff_t>(la.cols());
    if (la.top >= H || la.left >= W || la.top + rows <= 0 ||
        la.left + cols <= 0) {
      throw std::invalid_argument(
          "accumulate_global: footprint at (" + std::to_string(la.top) + ", " +
          std::to_string(la.left) + ") lies outside the " +
          std::to_string(height) + "x" + std::to_string(width) + " plane");
    }
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::ptrdiff_t dy = 0; dy < rows; ++dy) {
        const std::ptrdiff_t r = la.top + dy;
        if (r < 0 || r >= H) continue;
        for (std::ptrdiff_t dx = 0; dx < cols; ++dx) {
          const std::ptrdiff_t s = la.left + dx;
          if (s < 0 || s >= W) continue;
          out.values.at(c, r, s) += la.weights.at(c, dy, dx);
        }
      }
    }
  }
  return out;
}

CountMask count_mask(std::span<const Window> windows, std::size_t height,
                     std::size_t width) {
  CountMask mask{height, width, std::vector<std::uint32_t>(height * width, 0)};
  const auto H = static_cast<std::ptrdiff_t>(height);
  const auto W = static_cast<std::ptrdiff_t>(width);
  for (const Window& w : windows) {
    for (std::size_t dy = 0; dy < w.rows; ++dy) {
      const std::ptrdiff_t r = w.top + static_cast<std::ptrdiff_t>(dy);
      if (r < 0 || r >= H) continue;
      for (std::size_t dx = 0; dx < w.cols; ++dx) {
        const std::ptrdiff_t s = w.left + static_cast<std::ptrdiff_t>(dx);
        if (s < 0 || s >= W) continue;
        ++mask.counts[r * width + s];
      }
    }
  }
  return mask;
}

CountMask count_mask(std::size_t height, std::size_t width, std::size_t extent,
                     std::size_t stride) {
  if (extent % 2 == 0 || stride == 0) {
    throw std::invalid_argument("count_mask: extent must be odd and stride >= 1");
  }
  const auto pad = static_cast<std::ptrdiff_t>(extent / 2);
  std::vector<Window> windows;
  for (std::size_t y = 0; y < height; y += stride) {
    for (std::size_t x = 0; x < width; x += stride) {
      windows.push_back({static_cast<std::ptrdiff_t>(y) - pad,
                         static_cast<std::ptrdiff_t>(x) - pad, extent, extent});
    }
  }
  return count_mask(windows, height, width);
}

AttentionMap normalize_attention(const AttentionMap& a, const CountMask& mask,
                                 OverlapCorrection mode) {
  if (mask.height != a.height() || mask.width != a.width()) {
    throw std::invalid_argument("normalize_attention: mask is " +
                                std::to_string(mask.height) + "x" +
                                std::to_string(mask.width) + ", map is " +
                                shape_str(a.values.shape()));
  }
  AttentionMap out{a.values, AttentionKind::kNormalized};
  const std::size_t plane = mask.height * mask.width;
  for (std::size_t i = 0; i < plane; ++i) {
    const std::uint32_t n = mask.counts[i];
    if (mode == OverlapCorrection::kDivide && n == 0) {
      throw std::invalid_argument("normalize_attention: cell " +
                                  std::to_string(i) + " has zero count");
    }
    for (std::size_t c = 0; c < a.channels(); ++c) {
      double& v = out.values[c * plane + i];
      v = mode == OverlapCorrection::kDivide ? v / n : v * n;
    }
  }
  return out;
}

Tensor channel_mean(const AttentionMap& a) {
  const std::size_t C = a.channels(), H = a.height(), W = a.width();
  Tensor m({H, W});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < H * W; ++i) m[i] += a.values[c * H * W + i];
  }
  m *= 1.0 / static_cast<double>(C);
  return m;
}

}  // namespace saccade
