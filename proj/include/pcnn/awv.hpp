#pragma once

#include <cstddef>
#include <random>

#include "pcnn/backbone.hpp"

namespace pcnn {

/// Mean of the P x P patches of each view: [(B*M) x Dv] -> [B x N x Dv].
Var pool_views(const PatchBatch& patches);

/// Circular kernel-3 convolution across the view ring, channel preserving.
class AdjacentMix {
public:
  AdjacentMix(std::size_t channels, std::mt19937_64& init);

  /// f: [B x N x Dv] (or [N x Dv]).
  Var forward(Tape& tape, Var f);

  std::vector<Param*> params() { return {&weight, &bias}; }
  void collect_state(StateList& out);

  Param weight;  // Dv x Dv x 3
  Param bias;    // Dv
};

/// View fusion for a batch of models.
struct FusionState {
  Var pooled;      // g: channel-wise max over views, [B x Dv]
  Var similarity;  // s_j = cos(f_j, g), [B x N]
  Var alpha;       // softmax of s over views, [B x N]
  Var weighted;    // f'_j = alpha_j f_j, [(B*N) x Dv]
  Var fused;       // g' = sum_j alpha_j f_j, [B x Dv]
  bool attentive = true;
};

/// Self-attention weighting of view features f: [B x N x Dv].
FusionState attention_weights(Var f);

/// g' = sum_j alpha_j f_j and f'_j = alpha_j f_j for given weights alpha [B x N].
void fuse_with_weights(FusionState& state, Var f, Var alpha);

/// Plain view max-pooling (AWV disabled): fused = g, alpha uniform (a
/// constant), weighted views = the unscaled view features.
FusionState max_pool_fusion(Var f);

}  // namespace pcnn
