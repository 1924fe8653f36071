#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pcnn/backbone.hpp"

namespace pcnn {

enum class ViewLossMode { None, Average, Weighted };

ViewLossMode parse_view_loss_mode(const std::string& name);  // none | avl | wvl
std::string view_loss_mode_name(ViewLossMode mode);

/// L_dis = beta * L_model + gamma * L_views.
struct LossConfig {
  double beta = 0.5;
  double gamma = 0.5;
  ViewLossMode view_mode = ViewLossMode::Weighted;

  void validate() const;
};

/// Affine classifier x W + b.
class Linear {
public:
  Linear(std::string name, std::size_t in, std::size_t out, std::mt19937_64& init);

  Var forward(Tape& tape, Var x);
  std::size_t in_dim() const { return weight.value.dim(0); }
  std::size_t out_dim() const { return weight.value.dim(1); }

  std::vector<Param*> params() { return {&weight, &bias}; }
  void collect_state(StateList& out);

  Param weight;
  Param bias;
};

/// Mean softmax cross-entropy of the fusion classifier on g' [B x Dv].
Var fusion_loss(Tape& tape, Var fused, std::span<const std::size_t> labels, Linear& classifier);

/// Per-view losses of the shared specific classifier on f'_j [(B*N) x Dv];
/// every view carries its model's label. Returns [B x N].
Var view_losses(Tape& tape, Var weighted, std::span<const std::size_t> labels, std::size_t views, Linear& classifier);

struct LossTerms {
  Var l_model;       // {1}
  Var l_views;       // {1}, batch mean of sum_j w_j L_views^j
  Var l_dis;         // {1}
  Var per_view;      // [B x N], invalid in mode None
  Var loss_weights;  // [B x N], invalid in mode None
};

/// avl: w_j = 1/N. wvl: w_j = 2/N - alpha_j, differentiated through alpha.
/// none: the view term is dropped (l_views is a zero constant).
LossTerms combine(Var l_model, Var per_view, Var alpha, const LossConfig& config);

struct LossBreakdown {
  double l_model = 0.0;
  double l_views = 0.0;
  double l_dis = 0.0;
  std::vector<double> per_view;      // B*N, model-major
  std::vector<double> loss_weights;  // B*N
  std::size_t negative_weights = 0;  // wvl weights below zero
};

LossBreakdown breakdown(const LossTerms& terms);

}  // namespace pcnn
