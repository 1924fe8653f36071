#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcnn/dataset.hpp"
#include "pcnn/formats.hpp"
#include "pcnn/ops.hpp"

namespace pcnn {

/// Geometry of one model's patch grid: P x P patches per view, D channels, N views.
struct PatchLayout {
  std::size_t grid = 0;
  std::size_t dim = 0;
  std::size_t views = 0;

  std::size_t patches() const { return grid * grid * views; }
  bool operator==(const PatchLayout&) const = default;
};

/// Patch position: row x, column y of view z.
struct PatchCoord {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  std::uint32_t view = 0;
  bool operator==(const PatchCoord&) const = default;
};

/// Canonical ordering j = z*P*P + x*P + y.
std::size_t canonical_index(const PatchLayout& layout, const PatchCoord& c);
PatchCoord canonical_coord(const PatchLayout& layout, std::size_t j);
std::vector<PatchCoord> canonical_coords(const PatchLayout& layout);

/// Patch features of one model, rows in canonical order.
struct PatchSet {
  Tensor features;  // M x D
  std::vector<PatchCoord> coords;
  PatchLayout layout;
};

/// Patch features of a batch of models on a tape: [(B*M) x D], model-major,
/// canonical order within each model.
struct PatchBatch {
  Var features;
  PatchLayout layout;
  std::size_t batch = 0;
  std::vector<PatchCoord> coords;  // per model row (size M), shared across the batch
};

/// Names of state tensors (params and running statistics) for checkpoints.
using StateList = std::vector<std::pair<std::string, Tensor*>>;

struct BackboneConfig {
  std::size_t blocks = 3;  // stride-2 blocks; P = H / 2^blocks
  std::size_t dim = 32;    // D, channels of the last block
  std::size_t width = 8;   // channels of the first block, doubling up to D
  double leaky_slope = 0.2;
};

/// Stack of (3x3 conv stride 2, batch norm, LeakyReLU) blocks applied with
/// shared weights to every view.
class Backbone {
public:
  Backbone(const BackboneConfig& config, std::mt19937_64& init);

  const BackboneConfig& config() const { return config_; }
  /// P for input resolution H; throws ConfigError when H is not divisible by 2^blocks.
  std::size_t grid_for(std::size_t resolution) const;

  /// Runs all views of the given samples; samples must share N and H.
  PatchBatch forward(Tape& tape, std::span<const MultiViewSample* const> samples, Mode mode);

  std::vector<Param*> params();
  void collect_state(StateList& out);

private:
  struct Block {
    Param weight;
    Param gamma;
    Param beta;
    BatchNormState bn;
  };
  BackboneConfig config_;
  std::vector<Block> blocks_;
};

/// Patch grid of a single sample (evaluated on a private tape).
PatchSet extract_patches(Backbone& backbone, const MultiViewSample& sample, Mode mode);

/// Rearranges an N x P x P x D grid into canonical patch order; no learnable computation.
PatchSet patches_from_pvf(const PatchGridEntry& entry);
/// Batched variant placing the grids on a tape as constants.
PatchBatch patch_batch_from_pvf(Tape& tape, std::span<const PatchGridEntry* const> entries);

}  // namespace pcnn
