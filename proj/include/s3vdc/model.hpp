// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "s3vdc/core.hpp"
#include "s3vdc/mixture.hpp"
#include "s3vdc/network.hpp"
#include "s3vdc/rng.hpp"

namespace s3vdc {

enum class ObservationModel { Bernoulli, Gaussian };

inline std::string observation_model_name(ObservationModel m) {
  return m == ObservationModel::Bernoulli ? "bernoulli" : "gaussian";
}

inline constexpr double kBernoulliClamp = 1e-7;

// Encoder/decoder pair plus the trainable mixture prior. pi is stored as
// unconstrained logits so a softmax keeps it on the simplex by construction.
template <class T>
struct S3vdcModel {
  ArchSpec arch;
  SampleShape input_shape;
  int latent_dim = 0;
  int clusters = 0;
  ObservationModel obs = ObservationModel::Bernoulli;
  double lambda = 50.0;

  Stack<T> encoder_trunk;
  DenseLayer<T> mu_head;
  DenseLayer<T> logvar_head;
  Stack<T> decoder;

  Mat<T> pi_logits;      // C x 1
  Mat<T> prior_means;    // C x d_z
  Mat<T> prior_logvars;  // C x d_z

  static S3vdcModel build(const ArchSpec& arch, const SampleShape& shape, int latent_dim,
                          int clusters, ObservationModel obs, double lambda,
                          std::uint64_t seed) {
    require(latent_dim >= 1, "model: latent_dim must be >= 1");
    require(clusters >= 2, "model: clusters must be >= 2");
    S3vdcModel m;
    m.arch = arch;
    m.input_shape = shape;
    m.latent_dim = latent_dim;
    m.clusters = clusters;
    m.obs = obs;
    m.lambda = lambda;
    SeedStream root(seed);
    auto enc_eng = root.fork(1).engine();
    auto head_eng = root.fork(2).engine();
    auto dec_eng = root.fork(3).engine();
    auto prior_eng = root.fork(4).engine();
    m.encoder_trunk = build_encoder_trunk<T>(arch, shape, enc_eng);
    const int trunk_dim = encoder_trunk_dim<T>(arch, shape);
    m.mu_head = make_dense<T>(trunk_dim, latent_dim, Activation::None, head_eng);
    m.logvar_head = make_dense<T>(trunk_dim, latent_dim, Activation::None, head_eng);
    m.decoder = build_decoder<T>(arch, shape, latent_dim, dec_eng);
    m.pi_logits = Mat<T>::Zero(clusters, 1);
    m.prior_means = gaussian_matrix<T>(clusters, latent_dim, prior_eng, 0.1);
    m.prior_logvars = Mat<T>::Zero(clusters, latent_dim);
    return m;
  }

  // Stable order; checkpoints and the optimizer key off it.
  std::vector<std::pair<std::string, Mat<T>*>> parameters() {
    std::vector<std::pair<std::string, Mat<T>*>> out;
    encoder_trunk.collect_parameters("enc", out);
    out.emplace_back("mu_head.w", &mu_head.w);
    out.emplace_back("mu_head.b", &mu_head.b);
    out.emplace_back("logvar_head.w", &logvar_head.w);
    out.emplace_back("logvar_head.b", &logvar_head.b);
    decoder.collect_parameters("dec", out);
    out.emplace_back("prior.pi_logits", &pi_logits);
    out.emplace_back("prior.means", &prior_means);
    out.emplace_back("prior.logvars", &prior_logvars);
    return out;
  }

  Vec<T> prior_weights() const {
    Arr<T> a = pi_logits.col(0).array();
    Arr<T> e = (a - a.maxCoeff()).exp();
    return (e / e.sum()).matrix();
  }

  MixturePrior<T> prior() const {
    MixturePrior<T> p;
    p.weights = prior_weights();
    p.means = prior_means;
    p.variances = prior_logvars.array().exp().matrix();
    p.apply_floors();
    return p;
  }

  void install_prior(const MixturePrior<T>& p) {
    require(p.clusters() == clusters && p.latent_dim() == latent_dim,
            "install_prior: shape mismatch");
    pi_logits = p.weights.array().log().matrix();
    prior_means = p.means;
    prior_logvars = p.variances.array().log().matrix();
  }

  // ---- evaluation paths (sample-rows convention, no tape) ----

  LatentPosterior<T> encode(const Mat<T>& x_rows) const {
    require(x_rows.cols() == input_shape.size(), "encode: sample width mismatch");
    Mat<T> h = stack_apply(encoder_trunk, Mat<T>(x_rows.transpose()));
    LatentPosterior<T> post;
    post.mean = ((mu_head.w * h).colwise() + mu_head.b.col(0)).transpose();
    post.log_variance = ((logvar_head.w * h).colwise() + logvar_head.b.col(0)).transpose();
    return post;
  }

  // Distribution parameter mu_x: sigmoid of the logits in Bernoulli mode, raw
  // decoder output in Gaussian mode.
  Mat<T> decode_mean(const Mat<T>& z_rows) const {
    require(z_rows.cols() == latent_dim, "decode_mean: latent width mismatch");
    Mat<T> out = stack_apply(decoder, Mat<T>(z_rows.transpose()));
    if (obs == ObservationModel::Bernoulli)
      out = (T(1) / (T(1) + (-out.array()).exp())).matrix();
    return out.transpose();
  }

  // q(c|x) from posterior means, through the same inverse min-max transform
  // the training objective uses. min/max are taken over the whole matrix, so
  // the result is independent of any batching of x_rows.
  Responsibilities<T> responsibilities(const Mat<T>& x_rows) const {
    LatentPosterior<T> post = encode(x_rows);
    LogDensityMatrix<T> v = gaussian_log_density(post.mean, prior());
    LogDensityMatrix<T> vt = inverse_min_max(v, lambda);
    return cluster_responsibilities(vt, prior().weights);
  }

  std::vector<int> predict_clusters(const Mat<T>& x_rows) const {
    Responsibilities<T> q = responsibilities(x_rows);
    std::vector<int> out(static_cast<std::size_t>(q.values.rows()));
    for (Eigen::Index l = 0; l < q.values.rows(); ++l) {
      Eigen::Index c;
      q.values.row(l).maxCoeff(&c);
      out[static_cast<std::size_t>(l)] = static_cast<int>(c);
    }
    return out;
  }
};

}  // namespace s3vdc
