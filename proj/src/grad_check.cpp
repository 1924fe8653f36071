#include "pcnn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pcnn/error.hpp"

namespace pcnn {
namespace {

double evaluate(const LossBuilder& loss) {
  Tape tape;
  const double v = loss(tape).value().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
  return v;
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& loss, std::span<Param* const> params, double h,
                           const std::function<void(std::vector<Tensor>&)>& tamper) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step h must be positive");
  for (Param* p : params) p->grad = Tensor(p->value.shape(), 0.0);
  {
    Tape tape;
    Var l = loss(tape);
    if (!std::isfinite(l.value().item())) throw NumericError("grad_check: loss is not finite");
    tape.backward(l);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);
  if (tamper) tamper(analytic);

  GradCheckResult result;
  result.max_rel_error = -1.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = evaluate(loss);
      p.value[i] = saved - h;
      const double down = evaluate(loss);
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.coordinates;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p.name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  if (result.max_rel_error < 0.0) result.max_rel_error = 0.0;
  return result;
}

}  // namespace pcnn
