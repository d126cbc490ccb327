// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <sstream>

#include "s3vdc/types.hpp"

namespace s3vdc {

inline constexpr double kVarFloor = 1e-6;   // lower bound on any variance
inline constexpr double kPiFloor = 1e-10;   // lower bound on any cluster weight
inline constexpr double kRangeEpsilon = 1e-12;  // degenerate min-max range cutoff
inline constexpr double kSimplexTol = 1e-6;

// GMM prior over latent space: weights pi, per-cluster diagonal Gaussians.
template <class T>
struct MixturePrior {
  Vec<T> weights;     // C, on the simplex
  Mat<T> means;       // C x d_z
  Mat<T> variances;   // C x d_z, >= var_floor

  Eigen::Index clusters() const { return weights.size(); }
  Eigen::Index latent_dim() const { return means.cols(); }

  void validate() const {
    require(clusters() >= 2, "MixturePrior: C >= 2 required");
    require(latent_dim() >= 1, "MixturePrior: d_z >= 1 required");
    require(means.rows() == clusters() && variances.rows() == clusters() &&
                variances.cols() == latent_dim(),
            "MixturePrior: inconsistent shapes");
    const double sum = weights.template cast<double>().sum();
    require(std::abs(sum - 1.0) <= kSimplexTol, "MixturePrior: weights must sum to 1");
    require((weights.array() >= static_cast<T>(kPiFloor)).all(),
            "MixturePrior: weight below pi_floor");
    require((variances.array() >= static_cast<T>(kVarFloor * 0.999)).all(),
            "MixturePrior: variance below var_floor");
    require(weights.allFinite() && means.allFinite() && variances.allFinite(),
            "MixturePrior: non-finite parameter");
  }

  // Floors then renormalizes weights; floors variances. Keeps invariants
  // satisfiable after arbitrary parameter updates.
  void apply_floors() {
    weights = weights.array().max(static_cast<T>(kPiFloor)).matrix();
    weights /= weights.sum();
    variances = variances.array().max(static_cast<T>(kVarFloor)).matrix();
  }

  template <class U>
  MixturePrior<U> cast() const {
    MixturePrior<U> out;
    out.weights = weights.template cast<U>();
    out.means = means.template cast<U>();
    out.variances = variances.template cast<U>();
    return out;
  }
};

// Per-sample encoder output: q(z|x) = N(mean, exp(log_variance)).
template <class T>
struct LatentPosterior {
  Mat<T> mean;          // L x d_z
  Mat<T> log_variance;  // L x d_z

  void validate() const {
    require(mean.rows() == log_variance.rows() && mean.cols() == log_variance.cols(),
            "LatentPosterior: shape mismatch between mean and log_variance");
    if (!mean.allFinite() || !log_variance.allFinite())
      throw NumericsError("LatentPosterior: non-finite entries");
  }
};

// q(c|x): L x C, rows on the probability simplex.
template <class T>
struct Responsibilities {
  Mat<T> values;  // L x C

  void validate() const {
    require(values.allFinite(), "Responsibilities: non-finite entries");
    for (Eigen::Index l = 0; l < values.rows(); ++l) {
      const double s = values.row(l).template cast<double>().sum();
      if (std::abs(s - 1.0) > kSimplexTol) {
        std::ostringstream msg;
        msg << "Responsibilities: row " << l << " sums to " << s;
        throw ContractError(msg.str());
      }
    }
    require((values.array() >= T(0)).all() && (values.array() <= T(1) + T(1e-6)).all(),
            "Responsibilities: entries outside [0,1]");
  }
};

// V: C x L matrix of per-cluster log densities ln p(z|c).
template <class T>
struct LogDensityMatrix {
  Mat<T> values;  // C x L

  void validate() const {
    if (!values.allFinite()) throw NumericsError("LogDensityMatrix: non-finite entries");
  }
};

}  // namespace s3vdc
