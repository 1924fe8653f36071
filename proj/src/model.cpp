#include "pcnn/model.hpp"

#include <algorithm>
#include <map>

#include "pcnn/error.hpp"

namespace pcnn {

Dataset Dataset::from_images(std::vector<MultiViewSample> samples) {
  Dataset d;
  d.kind = InputKind::Images;
  d.images = std::move(samples);
  return d;
}

Dataset Dataset::from_grids(std::vector<PatchGridEntry> entries) {
  Dataset d;
  d.kind = InputKind::PatchGrids;
  d.grids = std::move(entries);
  return d;
}

Dataset Dataset::load(const std::string& path) {
  const std::string magic = sniff_magic(path);
  if (magic == "PVF1") return from_grids(load_pvf(path));
  if (magic == "MVI1") return from_images(load_mvi(path));
  if (magic.empty()) throw std::runtime_error("cannot read dataset '" + path + "'");
  throw FormatError("unrecognised dataset magic '" + magic + "' in " + path, 0);
}

std::uint32_t Dataset::label(std::size_t i) const { return kind == InputKind::Images ? images.at(i).label : grids.at(i).label; }

std::uint32_t Dataset::model_id(std::size_t i) const {
  return kind == InputKind::Images ? images.at(i).model_id : grids.at(i).model_id;
}

std::size_t Dataset::views() const {
  if (empty()) return 0;
  return kind == InputKind::Images ? images[0].views : grids[0].views;
}

std::size_t Dataset::num_classes() const {
  std::size_t c = 0;
  for (std::size_t i = 0; i < size(); ++i) c = std::max<std::size_t>(c, label(i) + 1);
  return c;
}

void ModelConfig::validate() const {
  if (num_classes < 1) throw ConfigError("model: num_classes must be positive");
  if (input == InputKind::Images) {
    if (backbone.blocks < 1 || backbone.dim < 1 || backbone.width < 1)
      throw ConfigError("backbone: blocks, dim and width must be positive");
    if (!(backbone.leaky_slope > 0.0 && backbone.leaky_slope < 1.0))
      throw ConfigError("backbone: leaky slope must lie in (0, 1)");
  } else if (input_dim < 1) {
    throw ConfigError("model: patch-grid input needs a positive feature dimension");
  }
  if (use_patchconv) {
    if (patchconv.k < 1) throw ConfigError("patchconv: k must be positive");
    if (!(patchconv.leaky_slope > 0.0 && patchconv.leaky_slope < 1.0))
      throw ConfigError("patchconv: leaky slope must lie in (0, 1)");
  }
}

std::size_t ModelConfig::view_dim() const {
  const std::size_t d = input == InputKind::Images ? backbone.dim : input_dim;
  return use_patchconv && patchconv.use_coords ? d + 3 : d;
}

PcnnModel::PcnnModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  // Each component draws from its own stream so toggling one leaves the others' init unchanged.
  std::mt19937_64 backbone_rng(derive_seed(config_.init_seed, 1));
  std::mt19937_64 patchconv_rng(derive_seed(config_.init_seed, 2));
  std::mt19937_64 mix_rng(derive_seed(config_.init_seed, 3));
  std::mt19937_64 head_rng(derive_seed(config_.init_seed, 4));
  const std::size_t d = config_.input == InputKind::Images ? config_.backbone.dim : config_.input_dim;
  if (config_.input == InputKind::Images) backbone_.emplace(config_.backbone, backbone_rng);
  if (config_.use_patchconv) patchconv_.emplace(d, config_.patchconv, patchconv_rng);
  const std::size_t dv = config_.view_dim();
  if (config_.use_awv) mix_.emplace(dv, mix_rng);
  fusion_.emplace("classifier/fusion", dv, config_.num_classes, head_rng);
  specific_.emplace("classifier/specific", dv, config_.num_classes, head_rng);
}

ForwardResult PcnnModel::forward(Tape& tape, const Dataset& data, std::span<const std::size_t> indices, Mode mode) {
  if (indices.empty()) throw std::invalid_argument("forward: empty batch");
  if (data.kind != config_.input) throw ConfigError("forward: dataset kind does not match the model input");
  ForwardResult r;
  if (data.kind == InputKind::Images) {
    std::vector<const MultiViewSample*> batch;
    for (std::size_t i : indices) batch.push_back(&data.images.at(i));
    r.patches = backbone_->forward(tape, batch, mode);
  } else {
    std::vector<const PatchGridEntry*> batch;
    for (std::size_t i : indices) batch.push_back(&data.grids.at(i));
    r.patches = patch_batch_from_pvf(tape, batch);
    if (r.patches.layout.dim != config_.input_dim)
      throw DimensionError("forward: patch grids have D=" + std::to_string(r.patches.layout.dim) + ", model expects " +
                           std::to_string(config_.input_dim));
  }
  if (patchconv_) r.patches = patchconv_->forward(tape, r.patches, mode);
  r.views = pool_views(r.patches);
  if (mix_) {
    r.views = mix_->forward(tape, r.views);
    r.fusion = attention_weights(r.views);
  } else {
    r.fusion = max_pool_fusion(r.views);
  }
  r.fusion_logits = fusion_->forward(tape, r.fusion.fused);
  return r;
}

LossTerms PcnnModel::loss(Tape& tape, const ForwardResult& fwd, std::span<const std::size_t> labels, const LossConfig& cfg) {
  for (std::size_t y : labels)
    if (y >= config_.num_classes)
      throw ConfigError("label " + std::to_string(y) + " outside the classifier's " + std::to_string(config_.num_classes) +
                        " classes");
  Var l_model = softmax_cross_entropy(fwd.fusion_logits, labels);
  Var per_view;
  if (cfg.view_mode != ViewLossMode::None)
    per_view = view_losses(tape, fwd.fusion.weighted, labels, fwd.patches.layout.views, *specific_);
  return combine(l_model, per_view, fwd.fusion.alpha, cfg);
}

std::vector<PcnnModel::Embedding> PcnnModel::embed(const Dataset& data, std::size_t batch_size) {
  std::vector<Embedding> out;
  out.reserve(data.size());
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    Tape tape;
    ForwardResult r = forward(tape, data, idx, Mode::Eval);
    const Tensor& g = r.fusion.fused.value();
    const Tensor& logits = r.fusion_logits.value();
    const std::size_t dv = g.dim(1), C = logits.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      Embedding e;
      e.descriptor.assign(g.data().begin() + b * dv, g.data().begin() + (b + 1) * dv);
      const auto row = logits.data().subspan(b * C, C);
      e.predicted_class = static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin());
      out.push_back(std::move(e));
    }
  }
  return out;
}

std::vector<Param*> PcnnModel::params() {
  std::vector<Param*> out;
  auto append = [&out](std::vector<Param*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
  if (backbone_) append(backbone_->params());
  if (patchconv_) append(patchconv_->params());
  if (mix_) append(mix_->params());
  append(fusion_->params());
  append(specific_->params());
  return out;
}

StateList PcnnModel::state() {
  StateList out;
  if (backbone_) backbone_->collect_state(out);
  if (patchconv_) patchconv_->collect_state(out);
  if (mix_) mix_->collect_state(out);
  fusion_->collect_state(out);
  specific_->collect_state(out);
  return out;
}

std::vector<NamedTensor> PcnnModel::snapshot() {
  std::vector<NamedTensor> out;
  for (auto& [name, t] : state()) out.push_back({name, *t});
  return out;
}

void PcnnModel::restore(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const NamedTensor& nt : tensors) by_name[nt.name] = &nt.value;
  StateList st = state();
  for (auto& [name, t] : st) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DimensionError("checkpoint lacks tensor '" + name + "'");
    if (it->second->shape() != t->shape())
      throw DimensionError("checkpoint tensor '" + name + "' has shape " + shape_string(it->second->shape()) +
                           ", model expects " + shape_string(t->shape()));
  }
  if (by_name.size() != st.size()) throw DimensionError("checkpoint holds tensors this model does not have");
  for (auto& [name, t] : st) *t = *by_name.at(name);
}

void PcnnModel::save(const std::string& path) { save_checkpoint(path, snapshot()); }

void PcnnModel::load(const std::string& path) { restore(load_checkpoint(path)); }

}  // namespace pcnn
