#include "pcnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "pcnn/error.hpp"
#include "pcnn/kernels.hpp"

namespace pcnn {
namespace {

void same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape())
    throw std::logic_error(std::string(op) + ": operands must live on the same tape");
}

void same_shape(Var a, Var b, const char* op) {
  same_tape(a, b, op);
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

// View of a shape as (outer, axis, inner) around one axis.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
  Shape reduced;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size())
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                         shape_string(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) r.reduced.push_back(s[i]);
  if (r.reduced.empty()) r.reduced.push_back(1);
  return r;
}

void accumulate(Tape& t, std::size_t id, std::span<const double> g) {
  auto dst = t.grad_accumulator(id).data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

}  // namespace

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("add", {ia, ib}, std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    if (t.requires_grad(ia)) accumulate(t, ia, g);
    if (t.requires_grad(ib)) accumulate(t, ib, g);
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("sub", {ia, ib}, std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    if (t.requires_grad(ia)) accumulate(t, ia, g);
    if (t.requires_grad(ib)) {
      auto d = t.grad_accumulator(ib).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("mul", {ia, ib}, std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const auto av = t.value(ia).data();
    const auto bv = t.value(ib).data();
    if (t.requires_grad(ia)) {
      auto d = t.grad_accumulator(ia).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto d = t.grad_accumulator(ib).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

Var add_scalar(Var x, double c) {
  Tensor out = x.value();
  for (double& v : out.data()) v += c;
  const std::size_t ix = x.id();
  return x.tape().record("add_scalar", {ix}, std::move(out),
                         [ix](Tape& t, std::size_t self) { accumulate(t, ix, t.grad(self).data()); });
}

Var scale(Var x, double c) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= c;
  const std::size_t ix = x.id();
  return x.tape().record("scale", {ix}, std::move(out), [ix, c](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    auto d = t.grad_accumulator(ix).data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += c * g[i];
  });
}

Var add_bias(Var x, Var bias) {
  same_tape(x, bias, "add_bias");
  const std::size_t c = x.shape().back();
  if (bias.shape() != Shape{c})
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match input " +
                         shape_string(x.shape()));
  Tensor out = x.value();
  auto o = out.data();
  auto b = bias.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += b[i % c];
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape().record("add_bias", {ix, ib}, std::move(out), [ix, ib, c](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    if (t.requires_grad(ix)) accumulate(t, ix, g);
    if (t.requires_grad(ib)) {
      auto d = t.grad_accumulator(ib).data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i % c] += g[i];
    }
  });
}

Var matmul(Var a, Var b) {
  same_tape(a, b, "matmul");
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n}, 0.0);
  kernels::gemm(false, false, m, n, k, a.value().data().data(), b.value().data().data(), out.data().data(),
                false);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", {ia, ib}, std::move(out), [=](Tape& t, std::size_t self) {
    const double* g = t.grad(self).data().data();
    if (t.requires_grad(ia))  // dA += G * B^T
      kernels::gemm(false, true, m, k, n, g, t.value(ib).data().data(), t.grad_accumulator(ia).data().data(),
                    true);
    if (t.requires_grad(ib))  // dB += A^T * G
      kernels::gemm(true, false, k, n, m, t.value(ia).data().data(), g, t.grad_accumulator(ib).data().data(),
                    true);
  });
}

Var leaky_relu(Var x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw std::invalid_argument("leaky_relu: slope must lie in (0, 1)");
  Tensor out = x.value();
  double margin = std::numeric_limits<double>::infinity();
  for (double& v : out.data()) {
    margin = std::min(margin, std::abs(v));
    v = v > 0.0 ? v : slope * v;
  }
  x.tape().note_margin(margin);
  const std::size_t ix = x.id();
  return x.tape().record("leaky_relu", {ix}, std::move(out), [ix, slope](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const auto xv = t.value(ix).data();
    auto d = t.grad_accumulator(ix).data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += xv[i] > 0.0 ? g[i] : slope * g[i];
  });
}

Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode) {
  same_tape(x, gamma, "batch_norm");
  same_tape(x, beta, "batch_norm");
  if (x.value().rank() < 2) throw DimensionError("batch_norm: input needs a channel axis");
  const AxisSplit sp = split_axis(x.shape(), 1, "batch_norm");
  const std::size_t C = sp.extent;
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C} || state.running_mean.shape() != Shape{C})
    throw DimensionError("batch_norm: parameter shape does not match " + std::to_string(C) + " channels");
  const std::size_t n = sp.outer * sp.inner;
  if (mode == Mode::Train && n < 2)
    throw BatchSizeError("batch_norm: training needs at least 2 values per channel, got " + std::to_string(n));

  const auto xv = x.value().data();
  auto at = [&](std::size_t o, std::size_t c, std::size_t i) { return (o * C + c) * sp.inner + i; };

  std::vector<double> mean(C), invstd(C);
  if (mode == Mode::Train) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) s += xv[at(o, c, i)];
      const double mu = s / static_cast<double>(n);
      double v = 0.0;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const double d = xv[at(o, c, i)] - mu;
          v += d * d;
        }
      v /= static_cast<double>(n);
      mean[c] = mu;
      invstd[c] = 1.0 / std::sqrt(v + state.eps);
      const double m = state.momentum;
      state.running_mean[c] = (1.0 - m) * state.running_mean[c] + m * mu;
      state.running_var[c] =
          (1.0 - m) * state.running_var[c] + m * v * static_cast<double>(n) / static_cast<double>(n - 1);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      invstd[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  Tensor xhat(x.shape(), 0.0);
  Tensor out(x.shape(), 0.0);
  const auto gv = gamma.value().data();
  const auto bv = beta.value().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t k = at(o, c, i);
        xhat[k] = (xv[k] - mean[c]) * invstd[c];
        out[k] = gv[c] * xhat[k] + bv[c];
      }

  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool train = mode == Mode::Train;
  return x.tape().record(
      "batch_norm", {ix, ig, ib}, std::move(out),
      [=, xhat = std::move(xhat), invstd = std::move(invstd)](Tape& t, std::size_t self) {
        const auto g = t.grad(self).data();
        const auto gam = t.value(ig).data();
        auto idx = [&](std::size_t o, std::size_t c, std::size_t i) { return (o * C + c) * sp.inner + i; };
        std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < sp.inner; ++i) {
              const std::size_t k = idx(o, c, i);
              sum_g[c] += g[k];
              sum_gx[c] += g[k] * xhat[k];
            }
        if (t.requires_grad(ig)) {
          auto d = t.grad_accumulator(ig).data();
          for (std::size_t c = 0; c < C; ++c) d[c] += sum_gx[c];
        }
        if (t.requires_grad(ib)) {
          auto d = t.grad_accumulator(ib).data();
          for (std::size_t c = 0; c < C; ++c) d[c] += sum_g[c];
        }
        if (!t.requires_grad(ix)) return;
        auto d = t.grad_accumulator(ix).data();
        const double nn = static_cast<double>(n);
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < sp.inner; ++i) {
              const std::size_t k = idx(o, c, i);
              if (train)
                d[k] += gam[c] * invstd[c] * (g[k] - sum_g[c] / nn - xhat[k] * sum_gx[c] / nn);
              else
                d[k] += gam[c] * invstd[c] * g[k];
            }
      });
}

MaxResult max_over_axis(Var x, std::size_t axis) {
  const AxisSplit sp = split_axis(x.shape(), axis, "max_over_axis");
  const auto xv = x.value().data();
  Tensor out(sp.reduced, 0.0);
  std::vector<std::size_t> arg(sp.outer * sp.inner, 0);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = 0;
      double bv = xv[o * sp.extent * sp.inner + i];
      double second = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 1; a < sp.extent; ++a) {
        const double v = xv[(o * sp.extent + a) * sp.inner + i];
        if (v > bv) {
          second = bv;
          bv = v;
          best = a;
        } else {
          second = std::max(second, v);
        }
      }
      margin = std::min(margin, bv - second);
      out[o * sp.inner + i] = bv;
      arg[o * sp.inner + i] = best;
    }
  x.tape().note_margin(margin);
  const std::size_t ix = x.id();
  Var v = x.tape().record("max_over_axis", {ix}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    auto d = t.grad_accumulator(ix).data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i)
        d[(o * sp.extent + arg[o * sp.inner + i]) * sp.inner + i] += g[o * sp.inner + i];
  });
  return {v, std::move(arg)};
}

Var sum_over_axis(Var x, std::size_t axis) {
  const AxisSplit sp = split_axis(x.shape(), axis, "sum_over_axis");
  const auto xv = x.value().data();
  Tensor out(sp.reduced, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t a = 0; a < sp.extent; ++a)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += xv[(o * sp.extent + a) * sp.inner + i];
  const std::size_t ix = x.id();
  return x.tape().record("sum_over_axis", {ix}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    auto d = t.grad_accumulator(ix).data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t a = 0; a < sp.extent; ++a)
        for (std::size_t i = 0; i < sp.inner; ++i) d[(o * sp.extent + a) * sp.inner + i] += g[o * sp.inner + i];
  });
}

Var mean_over_axis(Var x, std::size_t axis) {
  const std::size_t extent = x.dim(axis);
  return scale(sum_over_axis(x, axis), 1.0 / static_cast<double>(extent));
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t ix = x.id();
  return x.tape().record("sum", {ix}, Tensor::scalar(s), [ix](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& d : t.grad_accumulator(ix).data()) d += g;
  });
}

Var dot(Var a, Var b) { return sum(mul(a, b)); }

Var softmax(Var x) {
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.size() / c;
  Tensor out = x.value();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = o.data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) row[j] /= z;
  }
  const std::size_t ix = x.id();
  Var y = x.tape().record("softmax", {ix}, std::move(out), [ix, c, rows](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const auto s = t.value(self).data();
    auto d = t.grad_accumulator(ix).data();
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += g[r * c + j] * s[r * c + j];
      for (std::size_t j = 0; j < c; ++j) d[r * c + j] += s[r * c + j] * (g[r * c + j] - gs);
    }
  });
  return y;
}

namespace {

// Per-row softmax probabilities and losses for logits[B x C].
void cross_entropy_forward(const Tensor& logits, std::span<const std::size_t> labels, std::vector<double>& prob,
                           std::vector<double>& loss) {
  if (logits.rank() != 2) throw DimensionError("cross entropy: logits must be [B x C]");
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (labels.size() != B)
    throw DimensionError("cross entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(B) +
                         " rows");
  prob.assign(B * C, 0.0);
  loss.assign(B, 0.0);
  const auto lv = logits.data();
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= C)
      throw std::out_of_range("cross entropy: label " + std::to_string(labels[b]) + " outside [0, " +
                              std::to_string(C) + ")");
    const double* row = lv.data() + b * C;
    const double mx = *std::max_element(row, row + C);
    double z = 0.0;
    for (std::size_t j = 0; j < C; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < C; ++j) prob[b * C + j] = std::exp(row[j] - lse);
    loss[b] = lse - row[labels[b]];
  }
}

}  // namespace

Var cross_entropy_rows(Var logits, std::span<const std::size_t> labels) {
  std::vector<double> prob, loss;
  cross_entropy_forward(logits.value(), labels, prob, loss);
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  const std::size_t il = logits.id();
  return logits.tape().record(
      "cross_entropy_rows", {il}, Tensor({B}, std::move(loss)),
      [=, prob = std::move(prob), lab = std::move(lab)](Tape& t, std::size_t self) {
        const auto g = t.grad(self).data();
        auto d = t.grad_accumulator(il).data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t j = 0; j < C; ++j)
            d[b * C + j] += g[b] * (prob[b * C + j] - (j == lab[b] ? 1.0 : 0.0));
      });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
  std::vector<double> prob, loss;
  cross_entropy_forward(logits.value(), labels, prob, loss);
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  double mean = 0.0;
  for (double l : loss) mean += l;
  mean /= static_cast<double>(B);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  const std::size_t il = logits.id();
  return logits.tape().record(
      "softmax_cross_entropy", {il}, Tensor::scalar(mean),
      [=, prob = std::move(prob), lab = std::move(lab)](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0] / static_cast<double>(B);
        auto d = t.grad_accumulator(il).data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t j = 0; j < C; ++j) d[b * C + j] += g * (prob[b * C + j] - (j == lab[b] ? 1.0 : 0.0));
      });
}

Var cosine_similarity(Var a, Var b, double eps) {
  same_shape(a, b, "cosine_similarity");
  const std::size_t rank = a.value().rank();
  if (rank != 1 && rank != 2) throw DimensionError("cosine_similarity: expects [D] or [R x D]");
  const std::size_t D = a.shape().back();
  const std::size_t R = rank == 1 ? 1 : a.dim(0);
  const auto& kt = kernels::active();
  const double* av = a.value().data().data();
  const double* bv = b.value().data().data();
  std::vector<double> na(R), nb(R), ab(R);
  Tensor out({R}, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    ab[r] = kt.dot(av + r * D, bv + r * D, D);
    na[r] = std::sqrt(kt.dot(av + r * D, av + r * D, D));
    nb[r] = std::sqrt(kt.dot(bv + r * D, bv + r * D, D));
    out[r] = ab[r] / (std::max(na[r], eps) * std::max(nb[r], eps));
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      "cosine_similarity", {ia, ib}, std::move(out),
      [=, na = std::move(na), nb = std::move(nb)](Tape& t, std::size_t self) {
        const auto g = t.grad(self).data();
        const auto c = t.value(self).data();
        const auto av = t.value(ia).data();
        const auto bv = t.value(ib).data();
        // d cos / d a = b / (|a|'|b|') - [|a| > eps] * cos * a / |a|^2
        auto push = [&](std::size_t into, std::span<const double> self_v, std::span<const double> other_v,
                        const std::vector<double>& n_self, const std::vector<double>& n_other) {
          auto d = t.grad_accumulator(into).data();
          for (std::size_t r = 0; r < R; ++r) {
            const double ns = std::max(n_self[r], eps), no = std::max(n_other[r], eps);
            const double k1 = g[r] / (ns * no);
            const double k2 = n_self[r] > eps ? g[r] * c[r] / (n_self[r] * n_self[r]) : 0.0;
            for (std::size_t j = 0; j < D; ++j) d[r * D + j] += k1 * other_v[r * D + j] - k2 * self_v[r * D + j];
          }
        };
        if (t.requires_grad(ia)) push(ia, av, bv, na, nb);
        if (t.requires_grad(ib)) push(ib, bv, av, nb, na);
      });
}

Var conv1d_circular(Var x, Var weight, Var bias) {
  same_tape(x, weight, "conv1d_circular");
  same_tape(x, bias, "conv1d_circular");
  const std::size_t rank = x.value().rank();
  if (rank != 2 && rank != 3) throw DimensionError("conv1d_circular: input must be [N x C] or [B x N x C]");
  const std::size_t B = rank == 3 ? x.dim(0) : 1;
  const std::size_t N = x.dim(rank - 2), C = x.dim(rank - 1);
  if (N < 3) throw DimensionError("conv1d_circular: needs at least 3 views, got " + std::to_string(N));
  if (weight.value().rank() != 3 || weight.dim(1) != C || weight.dim(2) != 3)
    throw DimensionError("conv1d_circular: weight " + shape_string(weight.shape()) + " incompatible with " +
                         std::to_string(C) + " input channels");
  const std::size_t Co = weight.dim(0);
  if (bias.shape() != Shape{Co}) throw DimensionError("conv1d_circular: bias must have " + std::to_string(Co) + " entries");

  Shape out_shape = x.shape();
  out_shape.back() = Co;
  Tensor out(out_shape, 0.0);
  const auto xv = x.value().data();
  const auto wv = weight.value().data();
  const auto bv = bias.value().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t co = 0; co < Co; ++co) {
        double s = bv[co];
        for (std::size_t tap = 0; tap < 3; ++tap) {
          const std::size_t src = (n + N + tap - 1) % N;
          const double* xr = xv.data() + (b * N + src) * C;
          for (std::size_t ci = 0; ci < C; ++ci) s += wv[(co * C + ci) * 3 + tap] * xr[ci];
        }
        out[(b * N + n) * Co + co] = s;
      }
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape().record("conv1d_circular", {ix, iw, ib}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const auto xv = t.value(ix).data();
    const auto wv = t.value(iw).data();
    const bool gx = t.requires_grad(ix), gw = t.requires_grad(iw), gb = t.requires_grad(ib);
    double* dx = gx ? t.grad_accumulator(ix).data().data() : nullptr;
    double* dw = gw ? t.grad_accumulator(iw).data().data() : nullptr;
    double* db = gb ? t.grad_accumulator(ib).data().data() : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Co; ++co) {
          const double go = g[(b * N + n) * Co + co];
          if (db) db[co] += go;
          for (std::size_t tap = 0; tap < 3; ++tap) {
            const std::size_t src = (n + N + tap - 1) % N;
            for (std::size_t ci = 0; ci < C; ++ci) {
              const std::size_t wi = (co * C + ci) * 3 + tap;
              if (dw) dw[wi] += go * xv[(b * N + src) * C + ci];
              if (dx) dx[(b * N + src) * C + ci] += go * wv[wi];
            }
          }
        }
  });
}

namespace {

struct Conv2dGeom {
  std::size_t B, Ci, H, W, Co, Ho, Wo, stride;
  std::size_t patch() const { return Ci * 9; }
  std::size_t rows() const { return B * Ho * Wo; }
};

// cols[(b, oy, ox) x (ci, ky, kx)]
void im2col(const Conv2dGeom& g, const double* x, double* cols) {
  for (std::size_t b = 0; b < g.B; ++b)
    for (std::size_t oy = 0; oy < g.Ho; ++oy)
      for (std::size_t ox = 0; ox < g.Wo; ++ox) {
        double* row = cols + ((b * g.Ho + oy) * g.Wo + ox) * g.patch();
        for (std::size_t ci = 0; ci < g.Ci; ++ci)
          for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const long iy = static_cast<long>(oy * g.stride + ky) - 1;
              const long ix = static_cast<long>(ox * g.stride + kx) - 1;
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.H) && ix < static_cast<long>(g.W);
              row[(ci * 3 + ky) * 3 + kx] =
                  inside ? x[((b * g.Ci + ci) * g.H + static_cast<std::size_t>(iy)) * g.W + static_cast<std::size_t>(ix)]
                         : 0.0;
            }
      }
}

void col2im_add(const Conv2dGeom& g, const double* cols, double* dx) {
  for (std::size_t b = 0; b < g.B; ++b)
    for (std::size_t oy = 0; oy < g.Ho; ++oy)
      for (std::size_t ox = 0; ox < g.Wo; ++ox) {
        const double* row = cols + ((b * g.Ho + oy) * g.Wo + ox) * g.patch();
        for (std::size_t ci = 0; ci < g.Ci; ++ci)
          for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const long iy = static_cast<long>(oy * g.stride + ky) - 1;
              const long ix = static_cast<long>(ox * g.stride + kx) - 1;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.H) || ix >= static_cast<long>(g.W)) continue;
              dx[((b * g.Ci + ci) * g.H + static_cast<std::size_t>(iy)) * g.W + static_cast<std::size_t>(ix)] +=
                  row[(ci * 3 + ky) * 3 + kx];
            }
      }
}

}  // namespace

Var conv2d(Var x, Var weight, Var bias, std::size_t stride) {
  same_tape(x, weight, "conv2d");
  if (x.value().rank() != 4) throw DimensionError("conv2d: input must be [B x C x H x W], got " + shape_string(x.shape()));
  if (weight.value().rank() != 4 || weight.dim(1) != x.dim(1) || weight.dim(2) != 3 || weight.dim(3) != 3)
    throw DimensionError("conv2d: weight " + shape_string(weight.shape()) + " incompatible with input " +
                         shape_string(x.shape()));
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  Conv2dGeom geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), 0, 0, stride};
  geo.Ho = (geo.H - 1) / stride + 1;
  geo.Wo = (geo.W - 1) / stride + 1;
  const bool has_bias = bias.valid();
  if (has_bias) {
    same_tape(x, bias, "conv2d");
    if (bias.shape() != Shape{geo.Co}) throw DimensionError("conv2d: bias must have one entry per output channel");
  }

  std::vector<double> cols(geo.rows() * geo.patch());
  im2col(geo, x.value().data().data(), cols.data());
  // rows[(b,oy,ox) x Co] = cols * W^T
  std::vector<double> rows(geo.rows() * geo.Co);
  kernels::gemm(false, true, geo.rows(), geo.Co, geo.patch(), cols.data(), weight.value().data().data(), rows.data(),
                false);
  Tensor out({geo.B, geo.Co, geo.Ho, geo.Wo}, 0.0);
  const std::size_t plane = geo.Ho * geo.Wo;
  const double* bv = has_bias ? bias.value().data().data() : nullptr;
  for (std::size_t b = 0; b < geo.B; ++b)
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t co = 0; co < geo.Co; ++co)
        out[(b * geo.Co + co) * plane + p] = rows[(b * plane + p) * geo.Co + co] + (bv ? bv[co] : 0.0);

  std::vector<std::size_t> inputs{x.id(), weight.id()};
  if (has_bias) inputs.push_back(bias.id());
  const std::size_t ix = x.id(), iw = weight.id(), ib = has_bias ? bias.id() : 0;
  return x.tape().record(
      "conv2d", std::move(inputs), std::move(out),
      [=, cols = std::move(cols)](Tape& t, std::size_t self) {
        const auto g = t.grad(self).data();
        std::vector<double> grows(geo.rows() * geo.Co);
        for (std::size_t b = 0; b < geo.B; ++b)
          for (std::size_t p = 0; p < plane; ++p)
            for (std::size_t co = 0; co < geo.Co; ++co)
              grows[(b * plane + p) * geo.Co + co] = g[(b * geo.Co + co) * plane + p];
        if (has_bias && t.requires_grad(ib)) {
          auto db = t.grad_accumulator(ib).data();
          for (std::size_t r = 0; r < geo.rows(); ++r)
            for (std::size_t co = 0; co < geo.Co; ++co) db[co] += grows[r * geo.Co + co];
        }
        if (t.requires_grad(iw))  // dW[Co x patch] += G^T * cols
          kernels::gemm(true, false, geo.Co, geo.patch(), geo.rows(), grows.data(), cols.data(),
                        t.grad_accumulator(iw).data().data(), true);
        if (t.requires_grad(ix)) {
          std::vector<double> dcols(geo.rows() * geo.patch());
          kernels::gemm(false, false, geo.rows(), geo.patch(), geo.Co, grows.data(), t.value(iw).data().data(),
                        dcols.data(), false);
          col2im_add(geo, dcols.data(), t.grad_accumulator(ix).data().data());
        }
      });
}

Var avg_pool_2d(Var x, std::size_t window) {
  if (x.value().rank() != 4) throw DimensionError("avg_pool_2d: input must be [B x C x H x W]");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (window == 0 || H % window || W % window)
    throw DimensionError("avg_pool_2d: window " + std::to_string(window) + " does not tile " + shape_string(x.shape()));
  const std::size_t Ho = H / window, Wo = W / window;
  const double inv = 1.0 / static_cast<double>(window * window);
  Tensor out({B, C, Ho, Wo}, 0.0);
  const auto xv = x.value().data();
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) out[(bc * Ho + y / window) * Wo + xx / window] += inv * xv[(bc * H + y) * W + xx];
  const std::size_t ix = x.id();
  return x.tape().record("avg_pool_2d", {ix}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    auto d = t.grad_accumulator(ix).data();
    for (std::size_t bc = 0; bc < B * C; ++bc)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) d[(bc * H + y) * W + xx] += inv * g[(bc * Ho + y / window) * Wo + xx / window];
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> ids, extents;
  for (const Var& p : parts) {
    same_tape(parts[0], p, "concat");
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != first[i])
        throw DimensionError("concat: shape mismatch " + shape_string(first) + " vs " + shape_string(s));
    out_shape[axis] += s[axis];
    ids.push_back(p.id());
    extents.push_back(s[axis]);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t total = out_shape[axis];
  Tensor out(out_shape, 0.0);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].value().data();
    const std::size_t chunk = extents[k] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.data() + o * chunk, chunk, out.data().data() + (o * total + offset) * inner);
    offset += extents[k];
  }
  return parts[0].tape().record("concat", ids, std::move(out), [=](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t chunk = extents[k] * inner;
      if (t.requires_grad(ids[k])) {
        auto d = t.grad_accumulator(ids[k]).data();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < chunk; ++j) d[o * chunk + j] += g[(o * total + off) * inner + j];
      }
      off += extents[k];
    }
  });
}

Var weighted_sum(Var weights, Var x) {
  same_tape(weights, x, "weighted_sum");
  const std::size_t wr = weights.value().rank();
  if (!((wr == 1 && x.value().rank() == 2) || (wr == 2 && x.value().rank() == 3)))
    throw DimensionError("weighted_sum: expects w[N], x[N x D] or w[B x N], x[B x N x D]");
  const std::size_t B = wr == 2 ? weights.dim(0) : 1;
  const std::size_t N = weights.shape().back();
  const std::size_t D = x.shape().back();
  if (x.size() != B * N * D)
    throw DimensionError("weighted_sum: weights " + shape_string(weights.shape()) + " vs features " +
                         shape_string(x.shape()));
  Tensor out(wr == 2 ? Shape{B, D} : Shape{D}, 0.0);
  const auto& kt = kernels::active();
  const auto wv = weights.value().data();
  const auto xv = x.value().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n) kt.axpy(wv[b * N + n], xv.data() + (b * N + n) * D, out.data().data() + b * D, D);
  const std::size_t iw = weights.id(), ix = x.id();
  return weights.tape().record("weighted_sum", {iw, ix}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const auto& kt = kernels::active();
    const auto wv = t.value(iw).data();
    const auto xv = t.value(ix).data();
    if (t.requires_grad(iw)) {
      auto d = t.grad_accumulator(iw).data();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n) d[b * N + n] += kt.dot(g.data() + b * D, xv.data() + (b * N + n) * D, D);
    }
    if (t.requires_grad(ix)) {
      auto d = t.grad_accumulator(ix).data();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n) kt.axpy(wv[b * N + n], g.data() + b * D, d.data() + (b * N + n) * D, D);
    }
  });
}

Var gather_rows(Var x, std::vector<std::size_t> rows) {
  const std::size_t R = x.dim(0);
  const std::size_t width = x.size() / R;
  for (std::size_t r : rows)
    if (r >= R) throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range " + std::to_string(R));
  if (rows.empty()) throw DimensionError("gather_rows: empty selection");
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  Tensor out(out_shape, 0.0);
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xv.data() + rows[i] * width, width, out.data().data() + i * width);
  const std::size_t ix = x.id();
  return x.tape().record("gather_rows", {ix}, std::move(out), [=, rows = std::move(rows)](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    auto d = t.grad_accumulator(ix).data();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < width; ++j) d[rows[i] * width + j] += g[i * width + j];
  });
}

Var scale_rows(Var x, Var s) {
  same_tape(x, s, "scale_rows");
  const std::size_t R = x.dim(0);
  if (s.size() != R) throw DimensionError("scale_rows: " + std::to_string(s.size()) + " scales for " + std::to_string(R) + " rows");
  const std::size_t width = x.size() / R;
  Tensor out = x.value();
  const auto sv = s.value().data();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] *= sv[r];
  const std::size_t ix = x.id(), is = s.id();
  return x.tape().record("scale_rows", {ix, is}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const auto xv = t.value(ix).data();
    const auto sv = t.value(is).data();
    const auto& kt = kernels::active();
    if (t.requires_grad(ix)) {
      auto d = t.grad_accumulator(ix).data();
      for (std::size_t r = 0; r < R; ++r) kt.axpy(sv[r], g.data() + r * width, d.data() + r * width, width);
    }
    if (t.requires_grad(is)) {
      auto d = t.grad_accumulator(is).data();
      for (std::size_t r = 0; r < R; ++r) d[r] += kt.dot(g.data() + r * width, xv.data() + r * width, width);
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.tape().record("reshape", {ix}, std::move(out),
                         [ix](Tape& t, std::size_t self) { accumulate(t, ix, t.grad(self).data()); });
}

Var permute(Var x, std::vector<std::size_t> perm) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  if (perm.size() != r) throw DimensionError("permute: permutation rank mismatch");
  std::vector<bool> seen(r, false);
  for (std::size_t p : perm) {
    if (p >= r || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i > 0; --i) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[perm[i]];
  // src[k] = input flat index feeding output flat index k
  const std::size_t n = x.size();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_stride[perm[i]];
    src[k] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out(out_shape, 0.0);
  const auto xv = x.value().data();
  for (std::size_t k = 0; k < n; ++k) out[k] = xv[src[k]];
  const std::size_t ix = x.id();
  return x.tape().record("permute", {ix}, std::move(out), [ix, src = std::move(src)](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    auto d = t.grad_accumulator(ix).data();
    for (std::size_t k = 0; k < src.size(); ++k) d[src[k]] += g[k];
  });
}

}  // namespace pcnn
