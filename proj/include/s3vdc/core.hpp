// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "s3vdc/mixture.hpp"
#include "s3vdc/types.hpp"

namespace s3vdc {

inline constexpr double kLnTwoPi = 1.8378770664093454836;

// z = mean + exp(0.5 * log_variance) .* noise
template <class T>
Mat<T> reparameterize(const LatentPosterior<T>& posterior, const Mat<T>& noise) {
  require(noise.rows() == posterior.mean.rows() && noise.cols() == posterior.mean.cols(),
          "reparameterize: noise shape must match posterior shape");
  return posterior.mean.array() +
         (posterior.log_variance.array() * T(0.5)).exp() * noise.array();
}

// V[c][l] = ln N(z_l | mu_c, diag(sigma_c^2))
template <class T>
LogDensityMatrix<T> gaussian_log_density(const Mat<T>& z, const MixturePrior<T>& prior) {
  prior.validate();
  require(z.cols() == prior.latent_dim(), "gaussian_log_density: z latent dim mismatch");
  for (Eigen::Index l = 0; l < z.rows(); ++l) {
    if (!z.row(l).allFinite()) {
      std::ostringstream msg;
      msg << "gaussian_log_density: non-finite z at batch index " << l;
      throw NumericsError(msg.str());
    }
  }
  const Eigen::Index C = prior.clusters();
  const Eigen::Index L = z.rows();
  LogDensityMatrix<T> out;
  out.values.resize(C, L);
  for (Eigen::Index c = 0; c < C; ++c) {
    ArrRow<T> var = prior.variances.row(c).array();
    ArrRow<T> twice_var = T(2) * var;
    const T log_norm = T(-0.5) * (T(z.cols()) * T(kLnTwoPi) + var.log().sum());
    Arr<T> diff = z.array().rowwise() - prior.means.row(c).array();
    // sum over d of diff^2 / (2 var), per sample
    Vec<T> quad = (diff.square().rowwise() / twice_var).rowwise().sum().matrix();
    out.values.row(c) = (-quad.array() + log_norm).transpose();
  }
  out.validate();
  return out;
}

// V~ = lambda * (V - min V) / (max V - min V), min/max over all entries.
// A constant V carries no cluster signal: the zero matrix is returned so the
// downstream softmax reduces to the prior weights.
template <class T>
LogDensityMatrix<T> inverse_min_max(const LogDensityMatrix<T>& v, double lambda) {
  require(lambda > 0, "inverse_min_max: lambda must be positive");
  v.validate();
  const T lo = v.values.minCoeff();
  const T hi = v.values.maxCoeff();
  LogDensityMatrix<T> out;
  if (static_cast<double>(hi - lo) < kRangeEpsilon) {
    out.values = Mat<T>::Zero(v.values.rows(), v.values.cols());
    return out;
  }
  out.values = ((v.values.array() - lo) * (T(lambda) / (hi - lo))).matrix();
  return out;
}

// q[l][c] = pi_c exp(V~[c][l]) / sum_c' pi_c' exp(V~[c'][l]), via max-shifted
// exponentiation over each column.
template <class T>
Responsibilities<T> cluster_responsibilities(const LogDensityMatrix<T>& v_tilde,
                                             const Vec<T>& weights) {
  v_tilde.validate();
  require(weights.size() == v_tilde.values.rows(),
          "cluster_responsibilities: weight count must match rows of V");
  require((weights.array() > T(0)).all(), "cluster_responsibilities: weights must be positive");
  const Eigen::Index C = v_tilde.values.rows();
  const Eigen::Index L = v_tilde.values.cols();
  Vec<T> log_pi = weights.array().log().matrix();
  Responsibilities<T> out;
  out.values.resize(L, C);
  for (Eigen::Index l = 0; l < L; ++l) {
    Vec<T> a = v_tilde.values.col(l) + log_pi;
    const T shift = a.maxCoeff();
    Vec<T> e = (a.array() - shift).exp().matrix();
    out.values.row(l) = (e / e.sum()).transpose();
  }
  out.validate();
  return out;
}

template <class T>
struct GeneratedBatch {
  Mat<T> samples;              // count x D (decoder output layout)
  std::vector<int> clusters;   // length count
};

// Draw c ~ Cat(pi) (or use the fixed cluster), z ~ N(mu_c, sigma_c^2 I), and
// decode deterministically to the distribution parameter mu_x.
template <class T, class Decoder>
GeneratedBatch<T> sample_generative(const MixturePrior<T>& prior, Decoder&& decode_mean,
                                    Eigen::Index count, std::mt19937_64& eng,
                                    int cluster = -1) {
  prior.validate();
  require(count >= 0, "sample_generative: count must be non-negative");
  if (cluster >= 0)
    require(cluster < prior.clusters(), "sample_generative: cluster index out of range");
  GeneratedBatch<T> out;
  out.clusters.resize(static_cast<std::size_t>(count));
  if (count == 0) {
    out.samples.resize(0, 0);
    return out;
  }
  std::vector<double> w(static_cast<std::size_t>(prior.clusters()));
  for (Eigen::Index c = 0; c < prior.clusters(); ++c)
    w[static_cast<std::size_t>(c)] = static_cast<double>(prior.weights(c));
  std::discrete_distribution<int> cat(w.begin(), w.end());
  std::normal_distribution<double> normal(0.0, 1.0);

  Mat<T> z(count, prior.latent_dim());
  for (Eigen::Index i = 0; i < count; ++i) {
    const int c = (cluster >= 0) ? cluster : cat(eng);
    out.clusters[static_cast<std::size_t>(i)] = c;
    for (Eigen::Index d = 0; d < prior.latent_dim(); ++d) {
      const double sigma = std::sqrt(static_cast<double>(prior.variances(c, d)));
      z(i, d) = static_cast<T>(static_cast<double>(prior.means(c, d)) + sigma * normal(eng));
    }
  }
  out.samples = decode_mean(z);
  require(out.samples.rows() == count, "sample_generative: decoder returned wrong batch size");
  return out;
}

}  // namespace s3vdc
