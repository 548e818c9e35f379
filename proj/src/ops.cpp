#include "saccade/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace saccade {
namespace kernels {
namespace {

struct Range {
  std::size_t begin;
  std::size_t end;  // exclusive
};

// Output positions o with 0 <= o*stride + k - pad < in.
Range valid_outputs(std::size_t in, std::size_t out, std::size_t k,
                    ConvGeometry g) {
  std::size_t begin = 0;
  if (g.padding > k) begin = (g.padding - k + g.stride - 1) / g.stride;
  // o*stride <= in - 1 + pad - k
  if (in + g.padding < k + 1) return {0, 0};
  std::size_t last = (in - 1 + g.padding - k) / g.stride;
  std::size_t end = std::min(out, last + 1);
  if (begin >= end) return {0, 0};
  return {begin, end};
}

struct ConvDims {
  std::size_t c_in, h, w, c_out, k, h_out, w_out;
};

ConvDims check_conv(const Tensor& input, const Tensor& kernel,
                    const Tensor& bias, ConvGeometry g) {
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("conv2d: " + why + " (input " +
                                shape_str(input.shape()) + ", kernel " +
                                shape_str(kernel.shape()) + ", bias " +
                                shape_str(bias.shape()) + ")");
  };
  if (input.rank() != 3) fail("input must be C x H x W");
  if (kernel.rank() != 4) fail("kernel must be C_out x C_in x K x K");
  if (kernel.dim(1) != input.dim(0)) fail("input channel mismatch");
  if (kernel.dim(2) != kernel.dim(3)) fail("kernel must be square");
  if (kernel.dim(2) % 2 == 0) fail("kernel extent must be odd");
  if (bias.rank() != 1 || bias.dim(0) != kernel.dim(0)) fail("bias mismatch");
  if (g.stride == 0) fail("stride must be positive");
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), kernel.dim(0),
             kernel.dim(2), 0, 0};
  if (d.h + 2 * g.padding < d.k || d.w + 2 * g.padding < d.k) {
    fail("output would be empty");
  }
  d.h_out = conv_out_extent(d.h, d.k, g);
  d.w_out = conv_out_extent(d.w, d.k, g);
  return d;
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t k, ConvGeometry g) {
  return (in + 2 * g.padding - k) / g.stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              ConvGeometry g) {
  const ConvDims d = check_conv(input, kernel, bias, g);
  Tensor out({d.c_out, d.h_out, d.w_out});
  const double* in = input.raw();
  const double* wt = kernel.raw();
  double* o = out.raw();
  const std::size_t plane_out = d.h_out * d.w_out;
  for (std::size_t co = 0; co < d.c_out; ++co) {
    double* op = o + co * plane_out;
    std::fill(op, op + plane_out, bias[co]);
    for (std::size_t ci = 0; ci < d.c_in; ++ci) {
      const double* ip = in + ci * d.h * d.w;
      for (std::size_t ky = 0; ky < d.k; ++ky) {
        const Range ry = valid_outputs(d.h, d.h_out, ky, g);
        for (std::size_t kx = 0; kx < d.k; ++kx) {
          const Range rx = valid_outputs(d.w, d.w_out, kx, g);
          const double wv = wt[((co * d.c_in + ci) * d.k + ky) * d.k + kx];
          for (std::size_t y = ry.begin; y < ry.end; ++y) {
            const double* row = ip + (y * g.stride + ky - g.padding) * d.w;
            double* orow = op + y * d.w_out;
            for (std::size_t x = rx.begin; x < rx.end; ++x) {
              orow[x] += wv * row[x * g.stride + kx - g.padding];
            }
          }
        }
      }
    }
  }
  return out;
}

namespace {

void conv2d_backward(const Tensor& input, const Tensor& kernel, ConvGeometry g,
                     const Tensor& gout, Tensor* gin, Tensor* gw, Tensor* gb) {
  const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t c_out = kernel.dim(0), k = kernel.dim(2);
  const std::size_t h_out = gout.dim(1), w_out = gout.dim(2);
  const std::size_t plane_out = h_out * w_out;
  const double* in = input.raw();
  const double* wt = kernel.raw();
  const double* go = gout.raw();
  for (std::size_t co = 0; co < c_out; ++co) {
    const double* gp = go + co * plane_out;
    if (gb) {
      double s = 0.0;
      for (std::size_t i = 0; i < plane_out; ++i) s += gp[i];
      (*gb)[co] += s;
    }
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      const double* ip = in + ci * h * w;
      double* gip = gin ? gin->raw() + ci * h * w : nullptr;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const Range ry = valid_outputs(h, h_out, ky, g);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Range rx = valid_outputs(w, w_out, kx, g);
          const std::size_t widx = ((co * c_in + ci) * k + ky) * k + kx;
          const double wv = wt[widx];
          double acc = 0.0;
          for (std::size_t y = ry.begin; y < ry.end; ++y) {
            const std::size_t iy = y * g.stride + ky - g.padding;
            const double* row = ip + iy * w;
            const double* grow = gp + y * w_out;
            for (std::size_t x = rx.begin; x < rx.end; ++x) {
              const std::size_t ix = x * g.stride + kx - g.padding;
              acc += grow[x] * row[ix];
              if (gip) gip[iy * w + ix] += wv * grow[x];
            }
          }
          if (gw) (*gw)[widx] += acc;
        }
      }
    }
  }
}

}  // namespace

Tensor softmax(const Tensor& x) {
  if (x.empty()) throw std::invalid_argument("softmax: empty input");
  double m = x[0];
  for (double v : x.data()) m = std::max(m, v);
  Tensor out(x.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - m);
    s += out[i];
  }
  for (double& v : out.data()) v /= s;
  return out;
}

Tensor log_softmax(const Tensor& x) {
  if (x.empty()) throw std::invalid_argument("log_softmax: empty input");
  double m = x[0];
  for (double v : x.data()) m = std::max(m, v);
  double s = 0.0;
  for (double v : x.data()) s += std::exp(v - m);
  const double lse = m + std::log(s);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

Tensor matvec(const Tensor& w, const Tensor& x) {
  if (w.rank() != 2 || w.dim(1) != x.size()) {
    throw std::invalid_argument("matvec: shape mismatch " +
                                shape_str(w.shape()) + " x " +
                                shape_str(x.shape()));
  }
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  Tensor out({rows});
  const double* wp = w.raw();
  const double* xp = x.raw();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = wp + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * xp[c];
    out[r] = acc;
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace kernels

namespace ops {
namespace {

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape& t, const Tensor& g) {
                           t.accumulate(a, g);
                           t.accumulate(b, g);
                         });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  out -= b.value();
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape& t, const Tensor& g) {
                           t.accumulate(a, g);
                           if (Tensor* gb = t.grad_buffer(b)) *gb -= g;
                         });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(
      std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        if (Tensor* ga = t.grad_buffer(a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
        }
        if (Tensor* gb = t.grad_buffer(b)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
        }
      });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  out *= s;
  return a.tape().record(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
    }
  });
}

Var blend(Var g, Var a, Var b) {
  if (g.size() != 1) {
    throw std::invalid_argument("blend: gate must be a scalar, got " + shape_str(g.shape()));
  }
  require_same_shape(a.value(), b.value(), "blend");
  const double gv = g.value()[0];
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = gv * out[i] + (1.0 - gv) * b.value()[i];
  }
  return a.tape().record(
      std::move(out), {g, a, b}, [g, a, b](Tape& t, const Tensor& go) {
        const double w = t.value(g)[0];
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        if (Tensor* gg = t.grad_buffer(g)) {
          double s = 0.0;
          for (std::size_t i = 0; i < go.size(); ++i) s += go[i] * (av[i] - bv[i]);
          (*gg)[0] += s;
        }
        if (Tensor* ga = t.grad_buffer(a)) {
          for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += w * go[i];
        }
        if (Tensor* gb = t.grad_buffer(b)) {
          for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += (1.0 - w) * go[i];
        }
      });
}

Var add_scalar(Var a, double s) {
  Tensor out = map(a.value(), [s](double v) { return v + s; });
  return a.tape().record(std::move(out), {a},
                         [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

Var sigmoid(Var a) {
  Tensor out = map(a.value(), kernels::sigmoid);
  const std::size_t self = a.tape().size();
  return a.tape().record(std::move(out), {a}, [a, self](Tape& t, const Tensor& g) {
    const Tensor& yv = t.value(Var(&t, self));
    Tensor* ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      (*ga)[i] += g[i] * yv[i] * (1.0 - yv[i]);
    }
  });
}

Var tanh(Var a) {
  Tensor out = map(a.value(), [](double v) { return std::tanh(v); });
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    Tensor* ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double th = std::tanh(av[i]);
      (*ga)[i] += g[i] * (1.0 - th * th);
    }
  });
}

Var relu(Var a) {
  Tensor out = map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    Tensor* ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0) (*ga)[i] += g[i];
    }
  });
}

Var sum(Var a) {
  Tensor out({1}, a.value().sum());
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_buffer(a);
    for (double& v : ga->data()) v += g[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.size());
  return scale(sum(a), 1.0 / n);
}

Var matvec(Var w, Var x) {
  Tensor out = kernels::matvec(w.value(), x.value());
  return w.tape().record(
      std::move(out), {w, x}, [w, x](Tape& t, const Tensor& g) {
        const Tensor& wv = t.value(w);
        const Tensor& xv = t.value(x);
        const std::size_t rows = wv.dim(0), cols = wv.dim(1);
        if (Tensor* gw = t.grad_buffer(w)) {
          double* gp = gw->raw();
          for (std::size_t r = 0; r < rows; ++r) {
            const double gr = g[r];
            if (gr == 0.0) continue;
            double* row = gp + r * cols;
            for (std::size_t c = 0; c < cols; ++c) row[c] += gr * xv[c];
          }
        }
        if (Tensor* gx = t.grad_buffer(x)) {
          const double* wp = wv.raw();
          double* gp = gx->raw();
          for (std::size_t r = 0; r < rows; ++r) {
            const double gr = g[r];
            if (gr == 0.0) continue;
            const double* row = wp + r * cols;
            for (std::size_t c = 0; c < cols; ++c) gp[c] += gr * row[c];
          }
        }
      });
}

Var affine(Var w, Var b, Var x) { return add(matvec(w, x), b); }

Var conv2d(Var input, Var kernel, Var bias, kernels::ConvGeometry geom) {
  Tensor out =
      kernels::conv2d(input.value(), kernel.value(), bias.value(), geom);
  return input.tape().record(
      std::move(out), {input, kernel, bias},
      [input, kernel, bias, geom](Tape& t, const Tensor& g) {
        kernels::conv2d_backward(t.value(input), t.value(kernel), geom, g,
                                 t.grad_buffer(input), t.grad_buffer(kernel),
                                 t.grad_buffer(bias));
      });
}

Var global_avg_pool(Var input) {
  const Tensor& x = input.value();
  if (x.rank() != 3) {
    throw std::invalid_argument("global_avg_pool: expected C x H x W, got " +
                                shape_str(x.shape()));
  }
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor out({c});
  for (std::size_t i = 0; i < c; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < plane; ++j) s += x[i * plane + j];
    out[i] = s / static_cast<double>(plane);
  }
  return input.tape().record(
      std::move(out), {input}, [input, c, plane](Tape& t, const Tensor& g) {
        Tensor* gi = t.grad_buffer(input);
        for (std::size_t i = 0; i < c; ++i) {
          const double v = g[i] / static_cast<double>(plane);
          for (std::size_t j = 0; j < plane; ++j) (*gi)[i * plane + j] += v;
        }
      });
}

Var concat(const std::vector<Var>& parts) {
  std::size_t n = 0;
  for (const Var& p : parts) n += p.size();
  return concat(parts, Shape{n});
}

Var concat(const std::vector<Var>& parts, Shape shape) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  std::vector<double> data;
  data.reserve(shape_numel(shape));
  for (const Var& p : parts) {
    const auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  Tensor out(std::move(shape), std::move(data));
  return parts.front().tape().record(
      std::move(out), parts, [parts](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (const Var& p : parts) {
          const std::size_t n = t.value(p).size();
          if (Tensor* gp = t.grad_buffer(p)) {
            for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g[offset + i];
          }
          offset += n;
        }
      });
}

Var slice(Var a, std::size_t offset, Shape shape) {
  const std::size_t n = shape_numel(shape);
  if (offset + n > a.size()) {
    throw std::invalid_argument("slice: range exceeds input of " +
                                std::to_string(a.size()) + " elements");
  }
  const auto src = a.value().data().subspan(offset, n);
  Tensor out(std::move(shape), std::vector<double>(src.begin(), src.end()));
  return a.tape().record(std::move(out), {a},
                         [a, offset, n](Tape& t, const Tensor& g) {
                           Tensor* ga = t.grad_buffer(a);
                           for (std::size_t i = 0; i < n; ++i) {
                             (*ga)[offset + i] += g[i];
                           }
                         });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

Var softmax(Var a) {
  Tensor out = kernels::softmax(a.value());
  const std::size_t self = a.tape().size();
  return a.tape().record(std::move(out), {a}, [a, self](Tape& t, const Tensor& g) {
    const Tensor& s = t.value(Var(&t, self));
    double dot = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) dot += g[i] * s[i];
    Tensor* ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < s.size(); ++i) (*ga)[i] += s[i] * (g[i] - dot);
  });
}

Var cross_entropy(Var logits, std::size_t label) {
  const Tensor& z = logits.value();
  if (label >= z.size()) {
    throw std::invalid_argument("cross_entropy: label " +
                                std::to_string(label) + " out of range for " +
                                std::to_string(z.size()) + " classes");
  }
  const Tensor logp = kernels::log_softmax(z);
  Tensor out({1}, -logp[label]);
  return logits.tape().record(
      std::move(out), {logits}, [logits, label](Tape& t, const Tensor& g) {
        const Tensor p = kernels::softmax(t.value(logits));
        Tensor* gl = t.grad_buffer(logits);
        for (std::size_t i = 0; i < p.size(); ++i) {
          (*gl)[i] += g[0] * (p[i] - (i == label ? 1.0 : 0.0));
        }
      });
}

Var straight_through_onehot(Var soft) {
  const Tensor& s = soft.value();
  if (s.empty()) throw std::invalid_argument("straight_through_onehot: empty");
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (s[i] > s[best]) best = i;
  }
  Tensor out(s.shape());
  out[best] = 1.0;
  return soft.tape().record(std::move(out), {soft},
                            [soft](Tape& t, const Tensor& g) {
                              t.accumulate(soft, g);
                            });
}

}  // namespace ops
}  // namespace saccade
