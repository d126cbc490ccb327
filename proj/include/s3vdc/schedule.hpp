// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

namespace s3vdc {

// Phase parameters of the training controller: gamma-training for t_gamma
// steps, then `periods` repetitions of t_beta annealing steps followed by
// t_static steps at weight 1.
struct TrainingSchedule {
  double gamma = 5e-4;
  std::int64_t t_gamma = 0;
  std::int64_t t_beta = 0;
  std::int64_t t_static = 0;
  int periods = 1;     // M
  int exponent = 3;    // u
  double lambda = 50;  // inverse min-max scale

  std::int64_t total_steps() const { return t_gamma + periods * (t_beta + t_static); }
  void validate() const;
};

enum class PhaseKind { GammaTraining, GmmInit, BetaAnnealing, Static, Done };

struct Phase {
  PhaseKind kind = PhaseKind::GammaTraining;
  int period = 0;  // m >= 1 for BetaAnnealing/Static, 0 otherwise

  bool operator==(const Phase&) const = default;
};

std::string phase_name(PhaseKind kind);

// Step indices are 1-based. t in [1, t_gamma] is GammaTraining; each period m
// contributes t_beta annealing steps then t_static static steps; past
// total_steps the phase is Done. GmmInit is not a step phase: it is the
// one-shot event between steps t_gamma and t_gamma + 1.
Phase phase_at(std::int64_t t, const TrainingSchedule& s);

// beta = gamma + ((t - t_gamma - (m-1)(t_beta + t_static)) / t_beta)^u.
// Only defined while phase_at(t) is BetaAnnealing.
double beta_at(std::int64_t t, const TrainingSchedule& s);

// gamma during gamma-training, beta_at(t) while annealing, 1 in static phases.
double regularizer_weight_at(std::int64_t t, const TrainingSchedule& s);

}  // namespace s3vdc
