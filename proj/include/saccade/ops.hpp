#pragma once

#include <cstddef>
#include <vector>

#include "saccade/autograd.hpp"
#include "saccade/tensor.hpp"

namespace saccade {

// Plain forward kernels. The tape ops below reuse them.
namespace kernels {

struct ConvGeometry {
  std::size_t padding = 0;
  std::size_t stride = 1;
};

// Cross-correlation of a C_in x H x W input with a C_out x C_in x K x K
// kernel. Rejects shape mismatches with a dimension report.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              ConvGeometry geom);
std::size_t conv_out_extent(std::size_t in, std::size_t k, ConvGeometry geom);

// Max-shifted softmax over a flat vector.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

// y = W x for W: rows x cols, x: cols.
Tensor matvec(const Tensor& w, const Tensor& x);

double sigmoid(double x);

}  // namespace kernels

namespace ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
// g * a + (1 - g) * b for a scalar gate g.
Var blend(Var g, Var a, Var b);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);

Var sum(Var a);
Var mean(Var a);

Var matvec(Var w, Var x);
// w x + b
Var affine(Var w, Var b, Var x);

Var conv2d(Var input, Var kernel, Var bias, kernels::ConvGeometry geom);
// C x H x W -> C
Var global_avg_pool(Var input);

// Flat concatenation; the result is 1-D unless `shape` is given.
Var concat(const std::vector<Var>& parts);
Var concat(const std::vector<Var>& parts, Shape shape);
// `length` contiguous elements starting at `offset`, reshaped to `shape`.
Var slice(Var a, std::size_t offset, Shape shape);
Var reshape(Var a, Shape shape);

Var softmax(Var a);
// Cross-entropy of a logit vector against a class index.
Var cross_entropy(Var logits, std::size_t label);

// Forward emits the one-hot argmax of `soft` (ties to the smaller index);
// backward passes the gradient through unchanged.
Var straight_through_onehot(Var soft);

}  // namespace ops
}  // namespace saccade
