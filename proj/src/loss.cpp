#include "pcnn/loss.hpp"

#include <cmath>

#include "pcnn/error.hpp"

namespace pcnn {

ViewLossMode parse_view_loss_mode(const std::string& name) {
  if (name == "none") return ViewLossMode::None;
  if (name == "avl") return ViewLossMode::Average;
  if (name == "wvl") return ViewLossMode::Weighted;
  throw ConfigError("unknown view loss mode '" + name + "' (expected none, avl or wvl)");
}

std::string view_loss_mode_name(ViewLossMode mode) {
  switch (mode) {
    case ViewLossMode::None:
      return "none";
    case ViewLossMode::Average:
      return "avl";
    case ViewLossMode::Weighted:
      return "wvl";
  }
  return "?";
}

void LossConfig::validate() const {
  if (!(beta >= 0.0) || !(gamma >= 0.0) || !(beta + gamma > 0.0))
    throw ConfigError("loss: beta and gamma must be non-negative with a positive sum");
}

Linear::Linear(std::string name, std::size_t in, std::size_t out, std::mt19937_64& init) {
  Tensor w({in, out}, 0.0);
  std::normal_distribution<double> normal(0.0, std::sqrt(1.0 / static_cast<double>(in)));
  for (double& v : w.data()) v = normal(init);
  weight = Param(name + "/weight", std::move(w));
  bias = Param(name + "/bias", Tensor({out}, 0.0));
}

Var Linear::forward(Tape& tape, Var x) { return add_bias(matmul(x, tape.param(weight)), tape.param(bias)); }

void Linear::collect_state(StateList& out) {
  out.emplace_back(weight.name, &weight.value);
  out.emplace_back(bias.name, &bias.value);
}

Var fusion_loss(Tape& tape, Var fused, std::span<const std::size_t> labels, Linear& classifier) {
  return softmax_cross_entropy(classifier.forward(tape, fused), labels);
}

Var view_losses(Tape& tape, Var weighted, std::span<const std::size_t> labels, std::size_t views, Linear& classifier) {
  const std::size_t B = labels.size();
  if (weighted.value().rank() != 2 || weighted.dim(0) != B * views)
    throw DimensionError("view_losses: expected " + std::to_string(B * views) + " weighted view rows");
  std::vector<std::size_t> view_labels(B * views);
  for (std::size_t i = 0; i < view_labels.size(); ++i) view_labels[i] = labels[i / views];
  Var rows = cross_entropy_rows(classifier.forward(tape, weighted), view_labels);
  return reshape(rows, {B, views});
}

LossTerms combine(Var l_model, Var per_view, Var alpha, const LossConfig& cfg) {
  cfg.validate();
  Tape& tape = l_model.tape();
  LossTerms t;
  t.l_model = l_model;
  if (cfg.view_mode == ViewLossMode::None) {
    t.l_views = tape.constant(Tensor::scalar(0.0));
    t.l_dis = scale(l_model, cfg.beta);
    return t;
  }
  if (per_view.value().rank() != 2) throw DimensionError("combine: per-view losses must be [B x N]");
  const std::size_t B = per_view.dim(0), N = per_view.dim(1);
  t.per_view = per_view;
  if (cfg.view_mode == ViewLossMode::Average) {
    t.loss_weights = tape.constant(Tensor({B, N}, 1.0 / static_cast<double>(N)));
  } else {
    if (alpha.shape() != per_view.shape()) throw DimensionError("combine: alpha must match per-view losses");
    t.loss_weights = add_scalar(scale(alpha, -1.0), 2.0 / static_cast<double>(N));
  }
  t.l_views = scale(sum(mul(t.loss_weights, per_view)), 1.0 / static_cast<double>(B));
  t.l_dis = add(scale(l_model, cfg.beta), scale(t.l_views, cfg.gamma));
  return t;
}

LossBreakdown breakdown(const LossTerms& t) {
  LossBreakdown b;
  b.l_model = t.l_model.value().item();
  b.l_views = t.l_views.value().item();
  b.l_dis = t.l_dis.value().item();
  if (t.per_view.valid()) {
    const auto pv = t.per_view.value().data();
    const auto w = t.loss_weights.value().data();
    b.per_view.assign(pv.begin(), pv.end());
    b.loss_weights.assign(w.begin(), w.end());
    for (double v : w)
      if (v < 0.0) ++b.negative_weights;
  }
  return b;
}

}  // namespace pcnn
