#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pcnn/tape.hpp"

namespace pcnn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Clamps every gradient component to [-clip, clip]; returns how many were clamped.
std::size_t clip_gradients(std::span<Param* const> params, double clip);

/// Adam with bias correction. Moments live alongside the bound params.
class Adam {
public:
  Adam(std::vector<Param*> params, const AdamConfig& config);

  /// Applies one update from the params' current gradients. Throws
  /// NumericError naming the param when a gradient is not finite.
  void step();
  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

private:
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig config_;
  std::size_t t_ = 0;
};

}  // namespace pcnn
