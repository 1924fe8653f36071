#include "pcnn/adam.hpp"

#include <algorithm>
#include <cmath>

#include "pcnn/error.hpp"

namespace pcnn {

void AdamConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("adam: lr must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("adam: beta1 and beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
}

std::size_t clip_gradients(std::span<Param* const> params, double clip) {
  if (!(clip > 0.0)) throw ConfigError("clip must be positive");
  std::size_t clipped = 0;
  for (Param* p : params)
    for (double& g : p->grad.data()) {
      const double c = std::clamp(g, -clip, clip);
      if (c != g) ++clipped;
      g = c;
    }
  return clipped;
}

Adam::Adam(std::vector<Param*> params, const AdamConfig& config) : params_(std::move(params)), config_(config) {
  config_.validate();
  for (Param* p : params_) {
    m_.emplace_back(p->value.shape(), 0.0);
    v_.emplace_back(p->value.shape(), 0.0);
  }
}

void Adam::step() {
  for (Param* p : params_)
    if (!p->grad.all_finite()) throw NumericError("adam: non-finite gradient in '" + p->name + "'");
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i]->value.data();
    auto g = params_[i]->grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      w[j] -= config_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
}

}  // namespace pcnn
