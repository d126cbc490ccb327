// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <sstream>

#include "s3vdc/autograd.hpp"
#include "s3vdc/model.hpp"

namespace s3vdc {

// One optimization step's loss terms. `reconstruction` is the mean
// log-likelihood (nats, usually negative); the minimized total is
// -reconstruction + regularizer_weight * (kl_categorical + kl_gaussian).
struct LossBreakdown {
  double reconstruction = 0;
  double kl_categorical = 0;
  double kl_gaussian = 0;
  double regularizer_weight = 1;
  double total = 0;

  bool finite() const {
    return std::isfinite(reconstruction) && std::isfinite(kl_categorical) &&
           std::isfinite(kl_gaussian) && std::isfinite(total);
  }
};

// ---- plain objective terms (evaluation/oracle path) -------------------------

// Mean over the batch of the per-sample log-likelihood of x under the decoded
// distribution parameters. Bernoulli mode clamps the parameters away from
// {0,1} before taking logs.
template <class T>
double reconstruction_term(const Mat<T>& x_rows, const Mat<T>& decoded_rows,
                           ObservationModel obs) {
  require(x_rows.rows() == decoded_rows.rows() && x_rows.cols() == decoded_rows.cols(),
          "reconstruction_term: shape mismatch");
  if (obs == ObservationModel::Bernoulli) {
    if (!((x_rows.array() >= T(0)).all() && (x_rows.array() <= T(1)).all()))
      throw ContractError("reconstruction_term: x entries must lie in [0,1] in Bernoulli mode");
    Arr<double> mu = decoded_rows.template cast<double>()
                         .array()
                         .max(kBernoulliClamp)
                         .min(1.0 - kBernoulliClamp);
    Arr<double> x = x_rows.template cast<double>().array();
    return (x * mu.log() + (1.0 - x) * (1.0 - mu).log()).sum() /
           static_cast<double>(x_rows.rows());
  }
  Arr<double> diff =
      x_rows.template cast<double>().array() - decoded_rows.template cast<double>().array();
  return (-0.5 * (diff.square() + kLnTwoPi)).sum() / static_cast<double>(x_rows.rows());
}

// Mean over the batch of sum_c q_c ln(q_c / pi_c), with 0 ln 0 := 0.
template <class T>
double kl_categorical(const Responsibilities<T>& q, const Vec<T>& weights) {
  q.validate();
  require(weights.size() == q.values.cols(), "kl_categorical: weight count mismatch");
  require((weights.array() > T(0)).all(), "kl_categorical: weights must be positive");
  const double sum_w = weights.template cast<double>().sum();
  require(std::abs(sum_w - 1.0) <= kSimplexTol, "kl_categorical: weights must sum to 1");
  double total = 0;
  for (Eigen::Index l = 0; l < q.values.rows(); ++l)
    for (Eigen::Index c = 0; c < q.values.cols(); ++c) {
      const double qc = static_cast<double>(q.values(l, c));
      if (qc > 0) total += qc * (std::log(qc) - std::log(static_cast<double>(weights(c))));
    }
  return total / static_cast<double>(q.values.rows());
}

// Mean over the batch of sum_c q_c KL(N(mu_z, sigma_z^2) || N(mu_c, sigma_c^2)),
// closed form per dimension.
template <class T>
double kl_gaussian_mixture(const LatentPosterior<T>& posterior, const MixturePrior<T>& prior,
                           const Responsibilities<T>& q) {
  posterior.validate();
  prior.validate();
  q.validate();
  const Eigen::Index L = posterior.mean.rows();
  const Eigen::Index C = prior.clusters();
  require(q.values.rows() == L && q.values.cols() == C, "kl_gaussian_mixture: q shape");
  require(posterior.mean.cols() == prior.latent_dim(), "kl_gaussian_mixture: latent dim");
  double total = 0;
  Arr<double> mu_z = posterior.mean.template cast<double>().array();
  Arr<double> logvar_z = posterior.log_variance.template cast<double>().array();
  Arr<double> var_z = logvar_z.exp();
  for (Eigen::Index c = 0; c < C; ++c) {
    ArrRow<double> var_c = prior.variances.row(c).template cast<double>().array();
    ArrRow<double> log_var_c_m1 = var_c.log() - 1.0;
    ArrRow<double> mean_c = prior.means.row(c).template cast<double>().array();
    Arr<double> diff = mu_z.rowwise() - mean_c;
    // 0.5 [ln(var_c/var_z) + var_z/var_c + diff^2/var_c - 1], summed over dims
    Arr<double> per_dim =
        0.5 * ((((var_z + diff.square()).rowwise() / var_c) - logvar_z).rowwise() + log_var_c_m1);
    Vec<double> per_sample = per_dim.rowwise().sum().matrix();
    total += (q.values.col(c).template cast<double>().array() * per_sample.array()).sum();
  }
  return total / static_cast<double>(L);
}

// ---- full objective on the tape ---------------------------------------------

// Node ids of everything the trainer needs after one graph build. param_nodes
// is aligned with S3vdcModel::parameters().
template <class T>
struct LossGraph {
  Tape<T> tape;
  int total = -1;
  int recon = -1;
  int kl_cat = -1;
  int kl_gauss = -1;
  int z = -1;
  int responsibilities = -1;  // C x L on the tape
  std::vector<int> param_nodes;

  LossBreakdown breakdown(double weight) const {
    LossBreakdown b;
    b.reconstruction = static_cast<double>(tape.val(recon)(0, 0));
    b.kl_categorical = static_cast<double>(tape.val(kl_cat)(0, 0));
    b.kl_gaussian = static_cast<double>(tape.val(kl_gauss)(0, 0));
    b.regularizer_weight = weight;
    b.total = static_cast<double>(tape.val(total)(0, 0));
    return b;
  }
};

// Builds the full denoising objective: encode x_hat, reparameterize, decode,
// compute responsibilities through the inverse min-max transform, and combine
// -recon + weight * (kl_cat + kl_gauss). All matrices are feature-major
// (one sample per column).
template <class T>
LossGraph<T> build_loss_graph(S3vdcModel<T>& model, const Mat<T>& x_cols,
                              const Mat<T>& xhat_cols, const Mat<T>& noise_cols,
                              double weight) {
  require(weight > 0, "s3vdc_loss: regularizer weight must be positive");
  require(x_cols.rows() == model.input_shape.size() &&
              xhat_cols.rows() == x_cols.rows() && xhat_cols.cols() == x_cols.cols(),
          "s3vdc_loss: batch shapes");
  require(noise_cols.rows() == model.latent_dim && noise_cols.cols() == x_cols.cols(),
          "s3vdc_loss: noise shape");

  LossGraph<T> g;
  Tape<T>& t = g.tape;
  t.reserve(128);

  const int xhat = t.constant(xhat_cols);

  // encoder
  std::vector<int> enc_params;
  const int trunk = stack_forward(t, model.encoder_trunk, xhat, &enc_params);
  const int mu_w = t.leaf(model.mu_head.w, true);
  const int mu_b = t.leaf(model.mu_head.b, true);
  const int mu_z = t.add_colvec(t.matmul(mu_w, trunk), mu_b);
  const int lv_w = t.leaf(model.logvar_head.w, true);
  const int lv_b = t.leaf(model.logvar_head.b, true);
  const int logvar_z = t.add_colvec(t.matmul(lv_w, trunk), lv_b);

  // z = mu + exp(0.5 logvar) .* eps
  const int eps = t.constant(noise_cols);
  g.z = t.add(mu_z, t.mul(t.exp(t.scale(logvar_z, 0.5)), eps));

  // decoder + reconstruction against the clean x
  std::vector<int> dec_params;
  const int dec_out = stack_forward(t, model.decoder, g.z, &dec_params);
  g.recon = (model.obs == ObservationModel::Bernoulli)
                ? t.bernoulli_loglik(x_cols, dec_out, kBernoulliClamp)
                : t.gaussian_loglik_unit(x_cols, dec_out);

  // responsibilities from the transformed log densities
  const int pi_logits = t.leaf(model.pi_logits, true);
  const int means = t.leaf(model.prior_means, true);
  const int logvars = t.leaf(model.prior_logvars, true);
  const int v = t.gaussian_logdensity(g.z, means, logvars);
  const int v_tilde = t.inverse_min_max(v, model.lambda);
  const int log_pi = t.log_softmax_cols(pi_logits);  // C x 1
  const int logits_cl = t.add_colvec(v_tilde, log_pi);
  const int log_q = t.log_softmax_cols(logits_cl);  // over clusters, per sample
  const int q = t.exp(log_q);
  g.responsibilities = q;

  const Eigen::Index batch = x_cols.cols();
  // mean_l sum_c q (log q - log pi)
  g.kl_cat = t.scale(t.sum_all(t.mul(q, t.sub_colvec(log_q, log_pi))),
                     1.0 / static_cast<double>(batch));
  const int k = t.gaussian_kl_matrix(mu_z, logvar_z, means, logvars);
  g.kl_gauss = t.scale(t.sum_all(t.mul(q, k)), 1.0 / static_cast<double>(batch));

  g.total = t.add(t.scale(g.recon, -1.0),
                  t.scale(t.add(g.kl_cat, g.kl_gauss), weight));

  g.param_nodes = std::move(enc_params);
  g.param_nodes.push_back(mu_w);
  g.param_nodes.push_back(mu_b);
  g.param_nodes.push_back(lv_w);
  g.param_nodes.push_back(lv_b);
  g.param_nodes.insert(g.param_nodes.end(), dec_params.begin(), dec_params.end());
  g.param_nodes.push_back(pi_logits);
  g.param_nodes.push_back(means);
  g.param_nodes.push_back(logvars);
  return g;
}

// Spec-facing wrapper (sample-rows convention). Throws NumericsError on a
// non-finite total; the trainer adds phase/step context.
template <class T>
LossBreakdown s3vdc_loss(S3vdcModel<T>& model, const Mat<T>& x_rows, const Mat<T>& xhat_rows,
                         const Mat<T>& noise_rows, double weight) {
  LossGraph<T> g = build_loss_graph<T>(model, x_rows.transpose(), xhat_rows.transpose(),
                                       noise_rows.transpose(), weight);
  LossBreakdown b = g.breakdown(weight);
  if (!b.finite()) {
    std::ostringstream msg;
    msg << "s3vdc_loss: non-finite loss (recon=" << b.reconstruction
        << ", kl_cat=" << b.kl_categorical << ", kl_gauss=" << b.kl_gaussian << ")";
    throw NumericsError(msg.str());
  }
  return b;
}

}  // namespace s3vdc
