#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pcnn/tape.hpp"

namespace pcnn {

/// Builds a scalar loss on a fresh tape. Parameters must enter the graph via
/// Tape::param so that perturbing Param::value changes the result.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares tape gradients with central differences (f(t+h) - f(t-h)) / 2h
/// for every coordinate of every param. Relative error uses the denominator
/// max(|analytic|, |numeric|, 1e-8). `tamper`, when set, may alter the
/// analytic gradients before comparison (fault injection in tests).
GradCheckResult grad_check(const LossBuilder& loss, std::span<Param* const> params, double h = 1e-5,
                           const std::function<void(std::vector<Tensor>&)>& tamper = {});

}  // namespace pcnn
