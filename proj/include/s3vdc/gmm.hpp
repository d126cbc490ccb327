// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "s3vdc/mixture.hpp"
#include "s3vdc/model.hpp"
#include "s3vdc/rng.hpp"
#include "s3vdc/types.hpp"

namespace s3vdc {

struct GmmFitConfig {
  int components = 2;
  int max_em_steps = 10000;
  double convergence_tol = 1e-3;  // on mean log-likelihood change
  Eigen::Index subsample_size = 0;  // k*L latent samples for initialization
  std::uint64_t seed = 0;

  void validate(Eigen::Index latent_dim) const {
    require(components >= 1, "gmm: components must be >= 1");
    require(max_em_steps >= 1, "gmm: max_em_steps must be >= 1");
    require(convergence_tol > 0, "gmm: tol must be positive");
    require(subsample_size >= static_cast<Eigen::Index>(components) * latent_dim,
            "gmm: subsample_size must be at least C * d_z");
  }
};

struct GmmFitResult {
  MixturePrior<double> prior;
  std::vector<double> log_likelihood;  // mean per-sample, one entry per EM iteration
  int iterations = 0;
  int reseeds = 0;
};

// Diagonal-covariance EM with farthest-point seeding. Components whose weight
// collapses below pi_floor are reseeded at a random data point; more than 10
// reseeds raise InitFailureError.
GmmFitResult fit_gmm_detailed(const MatD& z, const GmmFitConfig& cfg);

MixturePrior<double> fit_gmm(const MatD& z, const GmmFitConfig& cfg);

// Posterior means of a seeded uniform subsample (without replacement when the
// subsample fits). A subsample larger than the dataset is clamped with a
// warning on stderr. Only the subsample is ever gathered or encoded, so cost
// scales with subsample_size, not the dataset size.
template <class T>
MatD collect_latents(const S3vdcModel<T>& model, const MatF& samples,
                     Eigen::Index subsample_size, std::uint64_t seed) {
  require(subsample_size >= 1, "collect_latents: subsample_size must be positive");
  const Eigen::Index n = samples.rows();
  if (subsample_size > n) {
    std::fprintf(stderr, "[gmm] subsample %lld exceeds dataset size %lld; clamping\n",
                 static_cast<long long>(subsample_size), static_cast<long long>(n));
    subsample_size = n;
  }
  auto eng = SeedStream(seed).engine();
  std::vector<Eigen::Index> idx = sample_without_replacement(n, subsample_size, eng);
  Mat<T> sub(subsample_size, samples.cols());
  for (Eigen::Index i = 0; i < subsample_size; ++i)
    sub.row(i) = samples.row(idx[static_cast<std::size_t>(i)]).template cast<T>();
  // encode in slices to bound peak memory on wide inputs
  const Eigen::Index chunk = 4096;
  MatD out(subsample_size, model.latent_dim);
  for (Eigen::Index start = 0; start < subsample_size; start += chunk) {
    const Eigen::Index len = std::min(chunk, subsample_size - start);
    LatentPosterior<T> post = model.encode(sub.middleRows(start, len));
    out.middleRows(start, len) = post.mean.template cast<double>();
  }
  return out;
}

}  // namespace s3vdc
