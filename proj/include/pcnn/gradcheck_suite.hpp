#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pcnn/grad_check.hpp"

namespace pcnn {

/// One random instance: a scalar loss over owned parameters.
struct GradCase {
  std::vector<std::unique_ptr<Param>> owned;
  std::shared_ptr<void> keep_alive;  // model or layer state the loss refers to
  std::vector<Param*> params;
  LossBuilder loss;

  Param& add(std::string name, Tensor value);
};

struct GradSuiteEntry {
  std::string name;
  std::function<GradCase(std::uint64_t seed)> make;
};

/// Every differentiable op plus the end-to-end discrimination loss on a tiny
/// instance (N=4, P=2, D=4, k=2, C=3).
const std::vector<GradSuiteEntry>& gradcheck_entries();

struct GradSuiteOptions {
  std::size_t seeds = 100;
  std::string only;  // restrict to one entry
  double tolerance = 1e-5;
  double h = 1e-5;
  std::string corrupt;  // fault injection: perturb this entry's analytic gradient
};

struct GradSuiteRow {
  std::string op;
  std::size_t seeds = 0;
  double max_rel_error = 0.0;
  std::uint64_t worst_seed = 0;
  std::string worst_param;
  std::size_t redrawn = 0;  // instances replaced for lying too close to a kink
  bool passed = true;
};

/// Throws std::invalid_argument when `only` names no entry.
std::vector<GradSuiteRow> run_gradcheck_suite(const GradSuiteOptions& options);

}  // namespace pcnn
