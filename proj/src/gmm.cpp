// SPDX-License-Identifier: Apache-2.0
#include "s3vdc/gmm.hpp"

#include <cassert>
#include <cmath>
#include <cstdio>
#include <limits>

namespace s3vdc {

namespace {

// Farthest-point seeding: random first center, then repeatedly the point with
// the largest squared distance to its nearest chosen center.
MatD seed_means(const MatD& z, int components, std::mt19937_64& eng) {
  const Eigen::Index n = z.rows();
  MatD means(components, z.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  means.row(0) = z.row(pick(eng));
  VecD min_dist = (z.rowwise() - means.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < components; ++c) {
    Eigen::Index far;
    min_dist.maxCoeff(&far);
    means.row(c) = z.row(far);
    VecD d = (z.rowwise() - means.row(c)).rowwise().squaredNorm();
    min_dist = min_dist.cwiseMin(d);
  }
  return means;
}

}  // namespace

GmmFitResult fit_gmm_detailed(const MatD& z, const GmmFitConfig& cfg) {
  require(z.allFinite(), "fit_gmm: latent matrix contains non-finite values");
  const Eigen::Index n = z.rows();
  const Eigen::Index d = z.cols();
  const int C = cfg.components;
  require(C >= 1 && cfg.max_em_steps >= 1 && cfg.convergence_tol > 0, "fit_gmm: bad config");
  require(n >= C, "fit_gmm: need at least one sample per component");

  GmmFitResult res;
  ArrRow<double> global_mean = z.colwise().mean().array();
  ArrRow<double> global_var =
      ((z.rowwise() - global_mean.matrix()).array().square().colwise().sum() /
       static_cast<double>(std::max<Eigen::Index>(n - 1, 1)))
          .max(kVarFloor);

  if (C == 1) {
    // closed form: single Gaussian at the empirical moments
    res.prior.weights = VecD::Ones(1);
    res.prior.means = global_mean.matrix();
    res.prior.variances =
        ((z.rowwise() - global_mean.matrix()).array().square().colwise().sum() /
         static_cast<double>(n))
            .max(kVarFloor)
            .matrix();
    res.iterations = 0;
    return res;
  }

  auto eng = SeedStream(cfg.seed).engine();
  MatD means = seed_means(z, C, eng);
  MatD variances = global_var.matrix().replicate(C, 1);
  VecD weights = VecD::Constant(C, 1.0 / C);

  MatD log_resp(n, C);
  double prev_ll = -std::numeric_limits<double>::infinity();
  int reseeds = 0;
  bool prev_reseeded = false;
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);

  for (int iter = 0; iter < cfg.max_em_steps; ++iter) {
    // E-step in log space
    for (int c = 0; c < C; ++c) {
      ArrRow<double> var = variances.row(c).array();
      const double log_norm =
          -0.5 * (static_cast<double>(d) * kLnTwoPi + var.log().sum()) + std::log(weights(c));
      Arr<double> diff = z.array().rowwise() - means.row(c).array();
      log_resp.col(c) =
          ((diff.square().rowwise() / (2.0 * var)).rowwise().sum() * -1.0 + log_norm).matrix();
    }
    VecD lse(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = log_resp.row(i).maxCoeff();
      lse(i) = mx + std::log((log_resp.row(i).array() - mx).exp().sum());
    }
    const double ll = lse.mean();
    // the defining EM property; a reseed restarts the sequence
    assert(prev_reseeded || res.log_likelihood.empty() ||
           ll >= res.log_likelihood.back() - 1e-8);
    res.log_likelihood.push_back(ll);
    for (Eigen::Index i = 0; i < n; ++i)
      log_resp.row(i) = (log_resp.row(i).array() - lse(i)).matrix();

    // M-step
    MatD resp = log_resp.array().exp().matrix();  // n x C
    VecD counts = resp.colwise().sum().transpose();
    bool reseeded = false;
    for (int c = 0; c < C; ++c) {
      if (counts(c) / static_cast<double>(n) < kPiFloor) {
        if (++reseeds > 10)
          throw InitFailureError("fit_gmm: component collapsed more than 10 times");
        std::fprintf(stderr, "[gmm] component %d collapsed; reseeding at a data point\n", c);
        means.row(c) = z.row(pick(eng));
        variances.row(c) = global_var.matrix();
        weights(c) = 1.0 / C;
        reseeded = true;
        continue;
      }
      means.row(c) = (resp.col(c).transpose() * z) / counts(c);
      Arr<double> diff = z.array().rowwise() - means.row(c).array();
      variances.row(c) =
          ((diff.square().colwise() * resp.col(c).array()).colwise().sum() / counts(c))
              .max(kVarFloor)
              .matrix();
      weights(c) = counts(c) / static_cast<double>(n);
    }
    weights = weights.cwiseMax(kPiFloor);
    weights /= weights.sum();
    res.iterations = iter + 1;

    if (!reseeded && !prev_reseeded && std::abs(ll - prev_ll) < cfg.convergence_tol) break;
    prev_ll = ll;
    prev_reseeded = reseeded;
  }

  res.prior.weights = weights;
  res.prior.means = means;
  res.prior.variances = variances;
  res.reseeds = reseeds;
  if (C >= 2) res.prior.validate();
  return res;
}

MixturePrior<double> fit_gmm(const MatD& z, const GmmFitConfig& cfg) {
  return fit_gmm_detailed(z, cfg).prior;
}

}  // namespace s3vdc
