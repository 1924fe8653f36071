#include "pcnn/backbone.hpp"

#include <cmath>

#include "pcnn/error.hpp"

namespace pcnn {

std::size_t canonical_index(const PatchLayout& l, const PatchCoord& c) {
  return (static_cast<std::size_t>(c.view) * l.grid + c.row) * l.grid + c.col;
}

PatchCoord canonical_coord(const PatchLayout& l, std::size_t j) {
  const std::size_t per_view = l.grid * l.grid;
  return {static_cast<std::uint32_t>((j % per_view) / l.grid), static_cast<std::uint32_t>(j % l.grid),
          static_cast<std::uint32_t>(j / per_view)};
}

std::vector<PatchCoord> canonical_coords(const PatchLayout& l) {
  std::vector<PatchCoord> out(l.patches());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = canonical_coord(l, j);
  return out;
}

Backbone::Backbone(const BackboneConfig& config, std::mt19937_64& init) : config_(config) {
  if (config.blocks == 0 || config.dim == 0 || config.width == 0)
    throw ConfigError("backbone: blocks, dim and width must be positive");
  std::size_t in = 1;
  for (std::size_t l = 0; l < config.blocks; ++l) {
    const std::size_t out =
        l + 1 == config.blocks ? config.dim : std::min(config.dim, config.width << std::min<std::size_t>(l, 16));
    const std::string prefix = "backbone/block" + std::to_string(l) + "/";
    Tensor w({out, in, 3, 3}, 0.0);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in * 9)));
    for (double& v : w.data()) v = normal(init);
    Block b{Param(prefix + "conv_weight", std::move(w)), Param(prefix + "bn_gamma", Tensor({out}, 1.0)),
            Param(prefix + "bn_beta", Tensor({out}, 0.0)), BatchNormState(out)};
    blocks_.push_back(std::move(b));
    in = out;
  }
}

std::size_t Backbone::grid_for(std::size_t resolution) const {
  const std::size_t factor = std::size_t{1} << config_.blocks;
  if (resolution == 0 || resolution % factor != 0)
    throw ConfigError("backbone: resolution " + std::to_string(resolution) + " is not divisible by 2^" +
                      std::to_string(config_.blocks));
  return resolution / factor;
}

PatchBatch Backbone::forward(Tape& tape, std::span<const MultiViewSample* const> samples, Mode mode) {
  if (samples.empty()) throw std::invalid_argument("backbone: empty batch");
  const std::size_t N = samples[0]->views, H = samples[0]->height;
  if (samples[0]->width != H) throw ConfigError("backbone: views must be square");
  const std::size_t P = grid_for(H);
  std::vector<double> pixels;
  pixels.reserve(samples.size() * N * H * H);
  for (const MultiViewSample* s : samples) {
    if (s->views != N || s->height != H || s->width != H)
      throw ConfigError("backbone: samples in a batch must share view count and resolution");
    pixels.insert(pixels.end(), s->pixels.begin(), s->pixels.end());
  }
  Var x = tape.constant(Tensor({samples.size() * N, 1, H, H}, std::move(pixels)));
  for (Block& b : blocks_) {
    x = conv2d(x, tape.param(b.weight), Var{}, 2);
    x = batch_norm(x, tape.param(b.gamma), tape.param(b.beta), b.bn, mode);
    x = leaky_relu(x, config_.leaky_slope);
  }
  // [B*N x D x P x P] -> [B*N x P x P x D] -> [(B*M) x D]
  x = permute(x, {0, 2, 3, 1});
  x = reshape(x, {samples.size() * N * P * P, config_.dim});
  const PatchLayout layout{P, config_.dim, N};
  return {x, layout, samples.size(), canonical_coords(layout)};
}

std::vector<Param*> Backbone::params() {
  std::vector<Param*> out;
  for (Block& b : blocks_) {
    out.push_back(&b.weight);
    out.push_back(&b.gamma);
    out.push_back(&b.beta);
  }
  return out;
}

void Backbone::collect_state(StateList& out) {
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    Block& b = blocks_[l];
    out.emplace_back(b.weight.name, &b.weight.value);
    out.emplace_back(b.gamma.name, &b.gamma.value);
    out.emplace_back(b.beta.name, &b.beta.value);
    const std::string prefix = "backbone/block" + std::to_string(l) + "/";
    out.emplace_back(prefix + "bn_running_mean", &b.bn.running_mean);
    out.emplace_back(prefix + "bn_running_var", &b.bn.running_var);
  }
}

PatchSet extract_patches(Backbone& backbone, const MultiViewSample& sample, Mode mode) {
  Tape tape;
  const MultiViewSample* one[] = {&sample};
  PatchBatch pb = backbone.forward(tape, one, mode);
  return {pb.features.value(), canonical_coords(pb.layout), pb.layout};
}

PatchSet patches_from_pvf(const PatchGridEntry& e) {
  const PatchLayout layout{e.grid, e.dim, e.views};
  if (e.grid == 0 || e.dim == 0 || e.views == 0 || e.values.size() != layout.patches() * e.dim)
    throw DimensionError("patches_from_pvf: entry dimensions do not match its payload");
  // The file stores (view, row, col, channel), which already is canonical order.
  std::vector<double> data(e.values.begin(), e.values.end());
  return {Tensor({layout.patches(), e.dim}, std::move(data)), canonical_coords(layout), layout};
}

PatchBatch patch_batch_from_pvf(Tape& tape, std::span<const PatchGridEntry* const> entries) {
  if (entries.empty()) throw std::invalid_argument("patch_batch_from_pvf: empty batch");
  const PatchLayout layout{entries[0]->grid, entries[0]->dim, entries[0]->views};
  std::vector<double> data;
  data.reserve(entries.size() * layout.patches() * layout.dim);
  for (const PatchGridEntry* e : entries) {
    PatchSet ps = patches_from_pvf(*e);
    if (ps.layout != layout) throw DimensionError("patch_batch_from_pvf: entries have different geometry");
    data.insert(data.end(), ps.features.data().begin(), ps.features.data().end());
  }
  Var f = tape.constant(Tensor({entries.size() * layout.patches(), layout.dim}, std::move(data)));
  return {f, layout, entries.size(), canonical_coords(layout)};
}

}  // namespace pcnn
