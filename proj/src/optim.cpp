#include "caql/optim.hpp"

#include <cmath>

#include "caql/errors.hpp"

namespace caql {

void adam_step(const std::vector<ParamBlock*>& params, double lr,
               double weight_decay, const AdamConfig& cfg) {
  for (ParamBlock* p : params) {
    if (!p->grad.all_finite())
      throw NumericError("adam_step: non-finite gradient in block '" +
                         p->name + "'");
    p->step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step));
    for (std::size_t i = 0; i < p->value.data.size(); ++i) {
      const double g = p->grad.data[i];
      double& m = p->m1.data[i];
      double& v = p->m2.data[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p->value.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
      if (weight_decay > 0.0) p->value.data[i] *= 1.0 - lr * weight_decay;
    }
    p->zero_grad();
  }
}

double finite_diff_check(const std::function<double()>& loss_fn,
                         const std::vector<ParamBlock*>& params,
                         double perturbation) {
  if (!(perturbation > 0.0))
    throw DomainError("finite_diff_check: perturbation must be > 0");
  double worst = 0.0;
  for (ParamBlock* p : params) {
    for (std::size_t i = 0; i < p->value.data.size(); ++i) {
      const double saved = p->value.data[i];
      p->value.data[i] = saved + perturbation;
      const double up = loss_fn();
      p->value.data[i] = saved - perturbation;
      const double down = loss_fn();
      p->value.data[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("finite_diff_check: non-finite loss while probing '" +
                           p->name + "'");
      const double numeric = (up - down) / (2.0 * perturbation);
      const double analytic = p->grad.data[i];
      const double denom =
          std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace caql
