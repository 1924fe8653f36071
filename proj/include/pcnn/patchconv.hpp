#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "pcnn/backbone.hpp"

namespace pcnn {

enum class KnnMetric { Euclidean, Cosine };

/// k nearest patches of every patch in feature space. Row i excludes i, is
/// sorted by ascending distance and breaks ties by ascending index.
struct NeighborGraph {
  std::size_t k = 0;
  std::size_t count = 0;
  std::vector<std::uint32_t> neighbors;  // count x k
  /// Smallest gap between a row's k-th and (k+1)-th distance (+inf when k = count - 1).
  double margin = std::numeric_limits<double>::infinity();

  std::span<const std::uint32_t> row(std::size_t i) const { return {neighbors.data() + i * k, k}; }
};

/// features: rows x dim, row-major. Requires 1 <= k <= rows - 1.
NeighborGraph knn_graph(std::span<const double> features, std::size_t rows, std::size_t dim, std::size_t k,
                        KnnMetric metric = KnnMetric::Euclidean);
NeighborGraph knn_graph(const Tensor& features, std::size_t k, KnnMetric metric = KnnMetric::Euclidean);

/// Edge rows for every (i, j in N(i)): concat(p_i, p_j - p_i, c_i, c_j - c_i),
/// or concat(p_i, p_j - p_i) without coordinates. `graphs` holds one graph per
/// model of the batch, indices local to that model; `coords` gives the
/// position of each of the M rows of a model. Output [(B*M*k) x width].
Var edge_features(Var features, const PatchLayout& layout, std::span<const PatchCoord> coords, std::size_t batch,
                  std::span<const NeighborGraph> graphs, bool use_coords);

struct PatchConvConfig {
  std::size_t k = 12;
  bool use_coords = true;  // false: EdgeConv ablation
  double leaky_slope = 0.2;
  KnnMetric metric = KnnMetric::Euclidean;
  // Test hooks: bypass normalisation / activation in h.
  bool batch_norm = true;
  bool activation = true;
};

/// p'_i = max over j in N(i) of h(edge(i, j)), with h = 1x1 transform ->
/// batch norm over all edges -> LeakyReLU. Maps D to D + 3 (D in EdgeConv mode).
class PatchConvLayer {
public:
  PatchConvLayer(std::size_t patch_dim, const PatchConvConfig& config, std::mt19937_64& init);

  std::size_t input_width() const { return weight.value.dim(0); }
  std::size_t output_dim() const { return weight.value.dim(1); }
  const PatchConvConfig& config() const { return config_; }

  /// Graphs are built per model from the current feature values.
  PatchBatch forward(Tape& tape, const PatchBatch& in, Mode mode, std::vector<NeighborGraph>* graphs = nullptr);

  std::vector<Param*> params() { return {&weight, &gamma, &beta}; }
  void collect_state(StateList& out);

  Param weight;  // input_width x output_dim
  Param gamma;
  Param beta;
  BatchNormState bn;

private:
  PatchConvConfig config_;
};

/// Single-model convenience on a private tape; coordinates and layout carry forward.
PatchSet patchconv_forward(const PatchSet& patches, PatchConvLayer& layer, Mode mode);

}  // namespace pcnn
