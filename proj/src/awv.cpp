#include "pcnn/awv.hpp"

#include <cmath>

#include "pcnn/error.hpp"

namespace pcnn {

Var pool_views(const PatchBatch& patches) {
  const PatchLayout& L = patches.layout;
  const std::size_t per_view = L.grid * L.grid;
  Var f = reshape(patches.features, {patches.batch * L.views, per_view, L.dim});
  f = mean_over_axis(f, 1);
  return reshape(f, {patches.batch, L.views, L.dim});
}

AdjacentMix::AdjacentMix(std::size_t channels, std::mt19937_64& init) {
  // Identity centre tap plus a small random perturbation.
  Tensor w({channels, channels, 3}, 0.0);
  std::normal_distribution<double> normal(0.0, 0.1 / std::sqrt(3.0 * static_cast<double>(channels)));
  for (double& v : w.data()) v = normal(init);
  for (std::size_t c = 0; c < channels; ++c) w[(c * channels + c) * 3 + 1] += 1.0;
  weight = Param("awv/conv1d_weight", std::move(w));
  bias = Param("awv/conv1d_bias", Tensor({channels}, 0.0));
}

Var AdjacentMix::forward(Tape& tape, Var f) { return conv1d_circular(f, tape.param(weight), tape.param(bias)); }

void AdjacentMix::collect_state(StateList& out) {
  out.emplace_back(weight.name, &weight.value);
  out.emplace_back(bias.name, &bias.value);
}

void fuse_with_weights(FusionState& st, Var f, Var alpha) {
  const std::size_t B = f.dim(0), N = f.dim(1), D = f.dim(2);
  if (alpha.shape() != Shape{B, N}) throw DimensionError("fuse_with_weights: alpha must be [B x N]");
  st.alpha = alpha;
  Var rows = reshape(f, {B * N, D});
  st.weighted = scale_rows(rows, reshape(alpha, {B * N}));
  st.fused = weighted_sum(alpha, f);
}

FusionState attention_weights(Var f) {
  if (f.value().rank() != 3) throw DimensionError("attention_weights: expects [B x N x Dv]");
  const std::size_t B = f.dim(0), N = f.dim(1), D = f.dim(2);
  FusionState st;
  st.pooled = max_over_axis(f, 1).values;
  std::vector<std::size_t> owner(B * N);
  for (std::size_t i = 0; i < owner.size(); ++i) owner[i] = i / N;
  Var g_rows = gather_rows(st.pooled, std::move(owner));
  Var s = cosine_similarity(reshape(f, {B * N, D}), g_rows);
  st.similarity = reshape(s, {B, N});
  fuse_with_weights(st, f, softmax(st.similarity));
  return st;
}

FusionState max_pool_fusion(Var f) {
  if (f.value().rank() != 3) throw DimensionError("max_pool_fusion: expects [B x N x Dv]");
  const std::size_t B = f.dim(0), N = f.dim(1), D = f.dim(2);
  FusionState st;
  st.attentive = false;
  st.pooled = max_over_axis(f, 1).values;
  st.fused = st.pooled;
  st.alpha = f.tape().constant(Tensor({B, N}, 1.0 / static_cast<double>(N)));
  st.weighted = reshape(f, {B * N, D});
  return st;
}

}  // namespace pcnn
