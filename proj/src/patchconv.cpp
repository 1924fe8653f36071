#include "pcnn/patchconv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pcnn/error.hpp"
#include "pcnn/kernels.hpp"

namespace pcnn {

NeighborGraph knn_graph(std::span<const double> features, std::size_t rows, std::size_t dim, std::size_t k,
                        KnnMetric metric) {
  if (features.size() != rows * dim) throw DimensionError("knn_graph: feature buffer does not match rows x dim");
  if (k < 1 || k >= rows)
    throw std::invalid_argument("knn_graph: k = " + std::to_string(k) + " must lie in [1, " +
                                std::to_string(rows > 0 ? rows - 1 : 0) + "]");
  const auto& kt = kernels::active();
  const double* f = features.data();
  std::vector<double> norms;
  if (metric == KnnMetric::Cosine) {
    norms.resize(rows);
    for (std::size_t i = 0; i < rows; ++i) norms[i] = std::max(std::sqrt(kt.dot(f + i * dim, f + i * dim, dim)), 1e-8);
  }
  NeighborGraph g;
  g.k = k;
  g.count = rows;
  g.neighbors.resize(rows * k);
  std::vector<std::pair<double, std::uint32_t>> cand(rows - 1);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < rows; ++j) {
      if (j == i) continue;
      const double d = metric == KnnMetric::Euclidean
                           ? kt.squared_distance(f + i * dim, f + j * dim, dim)
                           : 1.0 - kt.dot(f + i * dim, f + j * dim, dim) / (norms[i] * norms[j]);
      cand[n++] = {d, static_cast<std::uint32_t>(j)};
    }
    // pair ordering: distance, then index
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t t = 0; t < k; ++t) g.neighbors[i * k + t] = cand[t].second;
    if (k + 1 < rows) {
      const double next = std::min_element(cand.begin() + static_cast<std::ptrdiff_t>(k), cand.begin() + static_cast<std::ptrdiff_t>(n))->first;
      g.margin = std::min(g.margin, next - cand[k - 1].first);
    }
  }
  return g;
}

NeighborGraph knn_graph(const Tensor& features, std::size_t k, KnnMetric metric) {
  if (features.rank() != 2) throw DimensionError("knn_graph: features must be M x D");
  return knn_graph(features.data(), features.dim(0), features.dim(1), k, metric);
}

Var edge_features(Var features, const PatchLayout& layout, std::span<const PatchCoord> coords, std::size_t batch,
                  std::span<const NeighborGraph> graphs, bool use_coords) {
  const std::size_t M = layout.patches();
  if (coords.size() != M) throw DimensionError("edge_features: need one coordinate per patch");
  if (features.value().rank() != 2 || features.dim(0) != batch * M)
    throw DimensionError("edge_features: expected " + std::to_string(batch * M) + " patch rows, got " +
                         shape_string(features.shape()));
  if (graphs.size() != batch) throw DimensionError("edge_features: one neighbor graph per model required");
  const std::size_t k = graphs.empty() ? 0 : graphs[0].k;
  std::vector<std::size_t> centre, neighbor;
  centre.reserve(batch * M * k);
  neighbor.reserve(batch * M * k);
  for (std::size_t b = 0; b < batch; ++b) {
    if (graphs[b].count != M || graphs[b].k != k) throw DimensionError("edge_features: graph inconsistent with patches");
    for (std::size_t i = 0; i < M; ++i)
      for (std::uint32_t j : graphs[b].row(i)) {
        centre.push_back(b * M + i);
        neighbor.push_back(b * M + j);
      }
  }
  Tape& tape = features.tape();
  Var pi = gather_rows(features, centre);
  Var pj = gather_rows(features, neighbor);
  std::vector<Var> parts{pi, sub(pj, pi)};
  if (use_coords) {
    const std::size_t E = centre.size();
    Tensor ci({E, 3}, 0.0), dc({E, 3}, 0.0);
    for (std::size_t e = 0; e < E; ++e) {
      const PatchCoord a = coords[centre[e] % M];
      const PatchCoord c = coords[neighbor[e] % M];
      const double av[3] = {double(a.row), double(a.col), double(a.view)};
      const double cv[3] = {double(c.row), double(c.col), double(c.view)};
      for (int t = 0; t < 3; ++t) {
        ci[e * 3 + t] = av[t];
        dc[e * 3 + t] = cv[t] - av[t];
      }
    }
    parts.push_back(tape.constant(std::move(ci)));
    parts.push_back(tape.constant(std::move(dc)));
  }
  return concat(parts, 1);
}

PatchConvLayer::PatchConvLayer(std::size_t patch_dim, const PatchConvConfig& config, std::mt19937_64& init)
    : config_(config) {
  if (patch_dim == 0) throw ConfigError("patchconv: patch dimension must be positive");
  if (config.k == 0) throw ConfigError("patchconv: k must be positive");
  const std::size_t node_dim = config.use_coords ? patch_dim + 3 : patch_dim;
  const std::size_t in = 2 * node_dim;
  Tensor w({in, node_dim}, 0.0);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in)));
  for (double& v : w.data()) v = normal(init);
  weight = Param("patchconv/weight", std::move(w));
  gamma = Param("patchconv/bn_gamma", Tensor({node_dim}, 1.0));
  beta = Param("patchconv/bn_beta", Tensor({node_dim}, 0.0));
  bn = BatchNormState(node_dim);
}

PatchBatch PatchConvLayer::forward(Tape& tape, const PatchBatch& in, Mode mode, std::vector<NeighborGraph>* graphs_out) {
  const PatchLayout& L = in.layout;
  const std::size_t M = L.patches();
  const std::size_t expected_in = 2 * (config_.use_coords ? L.dim + 3 : L.dim);
  if (expected_in != input_width())
    throw DimensionError("patchconv: layer expects edge width " + std::to_string(input_width()) + ", input gives " +
                         std::to_string(expected_in));
  std::vector<NeighborGraph> graphs;
  graphs.reserve(in.batch);
  const auto values = in.features.value().data();
  for (std::size_t b = 0; b < in.batch; ++b)
    graphs.push_back(knn_graph(values.subspan(b * M * L.dim, M * L.dim), M, L.dim, config_.k, config_.metric));

  for (const NeighborGraph& g : graphs) tape.note_margin(g.margin);
  Var e = edge_features(in.features, L, in.coords, in.batch, graphs, config_.use_coords);
  Var h = matmul(e, tape.param(weight));
  if (config_.batch_norm) h = batch_norm(h, tape.param(gamma), tape.param(beta), bn, mode);
  if (config_.activation) h = leaky_relu(h, config_.leaky_slope);
  const std::size_t out_dim = output_dim();
  h = reshape(h, {in.batch * M, config_.k, out_dim});
  Var out = max_over_axis(h, 1).values;
  if (graphs_out) *graphs_out = std::move(graphs);
  return {out, PatchLayout{L.grid, out_dim, L.views}, in.batch, in.coords};
}

void PatchConvLayer::collect_state(StateList& out) {
  out.emplace_back(weight.name, &weight.value);
  out.emplace_back(gamma.name, &gamma.value);
  out.emplace_back(beta.name, &beta.value);
  out.emplace_back("patchconv/bn_running_mean", &bn.running_mean);
  out.emplace_back("patchconv/bn_running_var", &bn.running_var);
}

PatchSet patchconv_forward(const PatchSet& patches, PatchConvLayer& layer, Mode mode) {
  Tape tape;
  PatchBatch in{tape.constant(patches.features), patches.layout, 1, patches.coords};
  PatchBatch out = layer.forward(tape, in, mode);
  return {out.features.value(), patches.coords, out.layout};
}

}  // namespace pcnn
