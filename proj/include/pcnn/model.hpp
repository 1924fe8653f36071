#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcnn/awv.hpp"
#include "pcnn/backbone.hpp"
#include "pcnn/checkpoint.hpp"
#include "pcnn/loss.hpp"
#include "pcnn/patchconv.hpp"

namespace pcnn {

enum class InputKind { Images, PatchGrids };

/// Training or evaluation data: rendered views or precomputed patch grids.
struct Dataset {
  InputKind kind = InputKind::Images;
  std::vector<MultiViewSample> images;
  std::vector<PatchGridEntry> grids;

  static Dataset from_images(std::vector<MultiViewSample> samples);
  static Dataset from_grids(std::vector<PatchGridEntry> entries);
  /// Loads an MVI or PVF file, chosen by its magic.
  static Dataset load(const std::string& path);

  std::size_t size() const { return kind == InputKind::Images ? images.size() : grids.size(); }
  bool empty() const { return size() == 0; }
  std::uint32_t label(std::size_t i) const;
  std::uint32_t model_id(std::size_t i) const;
  std::size_t views() const;
  std::size_t num_classes() const;  // 1 + largest label
};

struct ModelConfig {
  InputKind input = InputKind::Images;
  BackboneConfig backbone;
  std::size_t input_dim = 0;  // patch dim D of grid input; ignored for images
  bool use_patchconv = true;
  PatchConvConfig patchconv;
  bool use_awv = true;
  std::size_t num_classes = 4;
  std::uint64_t init_seed = 1;

  void validate() const;
  /// Dimension of view features and of the retrieval embedding.
  std::size_t view_dim() const;
};

struct ForwardResult {
  PatchBatch patches;    // after PatchConv when enabled
  Var views;             // [B x N x Dv], after the adjacent-view convolution when AWV is on
  FusionState fusion;
  Var fusion_logits;     // [B x C]
};

class PcnnModel {
public:
  explicit PcnnModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::size_t embedding_dim() const { return config_.view_dim(); }

  ForwardResult forward(Tape& tape, const Dataset& data, std::span<const std::size_t> indices, Mode mode);
  LossTerms loss(Tape& tape, const ForwardResult& fwd, std::span<const std::size_t> labels, const LossConfig& cfg);

  struct Embedding {
    std::vector<double> descriptor;
    std::uint32_t predicted_class = 0;
  };
  /// Eval-mode descriptor g' (g without AWV) and fusion classifier argmax.
  std::vector<Embedding> embed(const Dataset& data, std::size_t batch_size = 16);

  std::vector<Param*> params();
  /// Params and batch-norm running statistics, by checkpoint name.
  StateList state();
  std::vector<NamedTensor> snapshot();
  /// Every tensor of the model must be present with a matching shape.
  void restore(const std::vector<NamedTensor>& tensors);
  void save(const std::string& path);
  void load(const std::string& path);

  Backbone* backbone() { return backbone_ ? &*backbone_ : nullptr; }
  PatchConvLayer* patchconv() { return patchconv_ ? &*patchconv_ : nullptr; }
  AdjacentMix* mix() { return mix_ ? &*mix_ : nullptr; }
  Linear& fusion_classifier() { return *fusion_; }
  Linear& specific_classifier() { return *specific_; }

private:
  ModelConfig config_;
  std::optional<Backbone> backbone_;
  std::optional<PatchConvLayer> patchconv_;
  std::optional<AdjacentMix> mix_;
  std::optional<Linear> fusion_;
  std::optional<Linear> specific_;
};

}  // namespace pcnn
