#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pcnn/model.hpp"
#include "pcnn/retrieval.hpp"
#include "pcnn/trainer.hpp"

namespace pcnn {

/// Everything a run needs, read from a flat `key = value` file. Every key
/// has a default; `profile` (desk | paper) selects the defaults and is
/// applied before any other key regardless of its position in the file.
struct RunConfig {
  std::string profile = "desk";

  std::string train_data = "data/train.mvi";
  std::string test_data = "data/test.mvi";
  std::string checkpoint = "run/model.pck";
  std::string output_dir = "run";

  // Used by gen-data when flags do not override them.
  std::size_t views = 6;
  std::size_t resolution = 32;

  BackboneConfig backbone;
  bool patchconv_enabled = true;
  PatchConvConfig patchconv;
  bool awv_enabled = true;
  std::size_t num_classes = 0;  // 0: one more than the largest training label

  TrainConfig train;

  DistanceMetric metric = DistanceMetric::Cosine;
  bool rerank = false;

  static RunConfig desk();
  static RunConfig paper();
  static RunConfig for_profile(const std::string& name);

  /// Throws ConfigError for an unknown key or an unparsable value.
  void set(const std::string& key, const std::string& value);
  /// Keys in a fixed order with their current values.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string to_text() const;
  void validate() const;

  ModelConfig model_config(InputKind input, std::size_t input_dim, std::size_t classes) const;
};

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
/// Errors carry the 1-based line number.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::vector<std::string> config_keys();

/// mvcnn-baseline | patchconv-only | awv-only | edgeconv-awv | full
void apply_ablation(RunConfig& config, const std::string& name);
/// ml (gamma = 0, no view term) | ml-avl | discrimination (wvl)
void apply_loss_mode(RunConfig& config, const std::string& name);

}  // namespace pcnn
