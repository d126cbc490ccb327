// SPDX-License-Identifier: Apache-2.0
#include "s3vdc/schedule.hpp"

#include <cmath>

#include "s3vdc/types.hpp"

namespace s3vdc {

void TrainingSchedule::validate() const {
  require(gamma > 0 && gamma < 0.1, "schedule: gamma must lie in (0, 0.1)");
  require(t_gamma >= 1, "schedule: t_gamma must be positive");
  require(t_beta >= 1, "schedule: t_beta must be positive");
  require(t_static >= 1, "schedule: t_static must be positive");
  require(periods >= 1, "schedule: periods must be positive");
  require(exponent >= 1, "schedule: u must be a positive integer");
  require(lambda > 0, "schedule: lambda must be positive");
}

std::string phase_name(PhaseKind kind) {
  switch (kind) {
    case PhaseKind::GammaTraining: return "gamma";
    case PhaseKind::GmmInit: return "gmm_init";
    case PhaseKind::BetaAnnealing: return "anneal";
    case PhaseKind::Static: return "static";
    case PhaseKind::Done: return "done";
  }
  return "unknown";
}

Phase phase_at(std::int64_t t, const TrainingSchedule& s) {
  require(t >= 1, "phase_at: step index is 1-based");
  if (t <= s.t_gamma) return {PhaseKind::GammaTraining, 0};
  if (t > s.total_steps()) return {PhaseKind::Done, 0};
  const std::int64_t period_len = s.t_beta + s.t_static;
  const std::int64_t off = t - s.t_gamma - 1;
  const int m = static_cast<int>(off / period_len) + 1;
  const std::int64_t r = off % period_len;
  if (r < s.t_beta) return {PhaseKind::BetaAnnealing, m};
  return {PhaseKind::Static, m};
}

double beta_at(std::int64_t t, const TrainingSchedule& s) {
  const Phase p = phase_at(t, s);
  require(p.kind == PhaseKind::BetaAnnealing, "beta_at: step is not in an annealing phase");
  const std::int64_t offset =
      t - s.t_gamma - static_cast<std::int64_t>(p.period - 1) * (s.t_beta + s.t_static);
  const double ratio = static_cast<double>(offset) / static_cast<double>(s.t_beta);
  double poly = 1.0;
  for (int i = 0; i < s.exponent; ++i) poly *= ratio;
  return s.gamma + poly;
}

double regularizer_weight_at(std::int64_t t, const TrainingSchedule& s) {
  const Phase p = phase_at(t, s);
  switch (p.kind) {
    case PhaseKind::GammaTraining: return s.gamma;
    case PhaseKind::BetaAnnealing: return beta_at(t, s);
    case PhaseKind::Static: return 1.0;
    default: break;
  }
  throw ContractError("regularizer_weight_at: step is past the end of the schedule");
}

}  // namespace s3vdc
