#pragma once

// Differentiable operations on Tape variables. Each records its forward value
// and a backward rule; every rule here is covered by the finite-difference
// suite in grad_check / gradcheck_suite.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "pcnn/tape.hpp"

namespace pcnn {

enum class Mode { Train, Eval };

class BatchSizeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Elementwise, operands of identical shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_scalar(Var x, double c);
Var scale(Var x, double c);
/// x[..., C] + bias[C], broadcast over all leading axes.
Var add_bias(Var x, Var bias);

/// a[m x k] * b[k x n].
Var matmul(Var a, Var b);

/// max(x, slope * x); the derivative at exactly 0 is taken as `slope`.
Var leaky_relu(Var x, double slope);

struct BatchNormState {
  explicit BatchNormState(std::size_t channels = 0)
      : running_mean({channels ? channels : 1}, 0.0), running_var({channels ? channels : 1}, 1.0) {}
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalisation over axis 1; all other axes are reduced.
/// Train mode uses batch statistics (biased variance) and updates the running
/// estimates (unbiased variance); eval mode uses the running estimates.
Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode);

struct MaxResult {
  Var values;
  /// Position along the reduced axis for every output element; ties resolve
  /// to the lowest index.
  std::vector<std::size_t> argmax;
};
/// Reduces `axis`; the output drops that axis (a rank-1 input gives shape {1}).
MaxResult max_over_axis(Var x, std::size_t axis);
Var sum_over_axis(Var x, std::size_t axis);
Var mean_over_axis(Var x, std::size_t axis);
Var sum(Var x);
Var dot(Var a, Var b);

/// Softmax along the last axis.
Var softmax(Var x);
/// Per-row -log softmax(logits)[label]; logits[B x C] -> [B].
Var cross_entropy_rows(Var logits, std::span<const std::size_t> labels);
/// Batch mean of cross_entropy_rows, shape {1}.
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels);

/// Row-wise cosine similarity with norms floored at eps.
/// [D] x [D] -> [1], or [R x D] x [R x D] -> [R].
Var cosine_similarity(Var a, Var b, double eps = 1e-8);

/// Kernel-3 convolution along the view axis with wrap-around.
/// x[N x C] or [B x N x C]; weight[Cout x C x 3] where tap 0 reads view n-1,
/// tap 1 view n, tap 2 view n+1; bias[Cout].
Var conv1d_circular(Var x, Var weight, Var bias);

/// 3x3 convolution, zero padding 1. x[B x Cin x H x W], weight[Cout x Cin x 3 x 3].
/// Bias is optional (pass an invalid Var to omit it).
Var conv2d(Var x, Var weight, Var bias, std::size_t stride = 2);
/// Non-overlapping window x window mean pooling on [B x C x H x W].
Var avg_pool_2d(Var x, std::size_t window);

Var concat(std::span<const Var> parts, std::size_t axis);
/// Sum_j w_j x_j. w[N], x[N x D] -> [D]; or batched w[B x N], x[B x N x D] -> [B x D].
Var weighted_sum(Var weights, Var x);
/// Selects rows (first-axis slices) of x; repeats are allowed.
Var gather_rows(Var x, std::vector<std::size_t> rows);
/// Multiplies each first-axis slice of x by s[row].
Var scale_rows(Var x, Var s);
Var reshape(Var x, Shape shape);
/// Output axis i is input axis perm[i].
Var permute(Var x, std::vector<std::size_t> perm);

}  // namespace pcnn
