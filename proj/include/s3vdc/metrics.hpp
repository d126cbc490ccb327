// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "s3vdc/core.hpp"
#include "s3vdc/data.hpp"
#include "s3vdc/model.hpp"
#include "s3vdc/rng.hpp"
#include "s3vdc/types.hpp"

namespace s3vdc {

inline constexpr int kSilhouetteCap = 10000;

struct MetricsReport {
  std::optional<double> accuracy;  // present only when labels exist
  std::optional<double> nmi;
  std::optional<double> silhouette;
  std::optional<double> calinski_harabasz;
  std::optional<double> neg_log_px;  // nats per sample / nll_normalization
  std::vector<std::int64_t> cluster_sizes;
  std::vector<double> pi;
  bool ch_degenerate = false;       // within-cluster scatter collapsed; CH is a sentinel
  int silhouette_subsample = 0;     // points the silhouette was computed on
  double nll_normalization = 1.0;

  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
};

// Hungarian-matched accuracy: the best one-to-one mapping between cluster ids
// and class ids on the confusion matrix (zero-padded to square).
double clustering_accuracy(const std::vector<int>& pred, const std::vector<int>& labels);

// Test oracle: exhaustive search over all mappings; feasible for small id counts.
double clustering_accuracy_bruteforce(const std::vector<int>& pred,
                                      const std::vector<int>& labels);

// Mutual information normalized by the arithmetic mean of the two entropies.
double nmi(const std::vector<int>& pred, const std::vector<int>& labels);

struct SilhouetteResult {
  double value = 0;
  int used = 0;  // points after the seeded subsample cap
};

SilhouetteResult silhouette(const MatD& embeddings, const std::vector<int>& pred,
                            int cap = kSilhouetteCap, std::uint64_t seed = 0);

double calinski_harabasz(const MatD& embeddings, const std::vector<int>& pred,
                         bool* degenerate = nullptr);

struct MetricStats {
  double mean = 0;
  double stddev = 0;  // sample standard deviation, n-1 denominator
};

// Mean/STD per metric over >= 2 runs; a metric is aggregated only when every
// run reports it.
std::map<std::string, MetricStats> stability_report(const std::vector<MetricsReport>& runs);

// ---- model-level evaluation ---------------------------------------------------

struct EmbeddingTable {
  MatD z;                    // n x d_z posterior means
  std::vector<int> cluster;  // argmax responsibility
  VecD resp_max;
};

// Encodes in chunks, then computes responsibilities once over the full
// matrix so results do not depend on any batching.
template <class T>
EmbeddingTable embed_samples(const S3vdcModel<T>& model, const MatF& samples) {
  const Eigen::Index n = samples.rows();
  require(n >= 1, "embed_samples: empty input");
  EmbeddingTable out;
  out.z.resize(n, model.latent_dim);
  const Eigen::Index chunk = 4096;
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index len = std::min(chunk, n - start);
    Mat<T> x = samples.middleRows(start, len).template cast<T>();
    out.z.middleRows(start, len) = model.encode(x).mean.template cast<double>();
  }
  MixturePrior<double> prior = model.prior().template cast<double>();
  LogDensityMatrix<double> v = gaussian_log_density(MatD(out.z), prior);
  LogDensityMatrix<double> vt = inverse_min_max(v, model.lambda);
  Responsibilities<double> q = cluster_responsibilities(vt, prior.weights);
  out.cluster.resize(static_cast<std::size_t>(n));
  out.resp_max.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index c;
    out.resp_max(i) = q.values.row(i).maxCoeff(&c);
    out.cluster[static_cast<std::size_t>(i)] = static_cast<int>(c);
  }
  return out;
}

// ---- marginal likelihood ------------------------------------------------------

// -ln p(x) per sample by importance sampling from q(z|x):
// -ln[(1/S) sum_s p(x|z_s) p(z_s) / q(z_s|x)], log-space accumulation.
template <class T>
double marginal_nll(const S3vdcModel<T>& model, const MatF& x_rows, int importance_samples,
                    std::uint64_t seed) {
  require(importance_samples >= 1, "marginal_nll: importance_samples must be >= 1");
  require(x_rows.rows() >= 1, "marginal_nll: empty evaluation set");
  const Eigen::Index n = x_rows.rows();
  const int S = importance_samples;
  MixturePrior<double> prior = model.prior().template cast<double>();

  auto eng = SeedStream(seed).engine();
  VecD total = VecD::Zero(n);

  const Eigen::Index chunk = 2048;
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index len = std::min(chunk, n - start);
    Mat<T> x = x_rows.middleRows(start, len).template cast<T>();
    LatentPosterior<T> post = model.encode(x);
    Arr<double> mu = post.mean.template cast<double>();
    Arr<double> logvar = post.log_variance.template cast<double>();
    Arr<double> sigma = (0.5 * logvar).exp();

    MatD logw(len, S);
    for (int s = 0; s < S; ++s) {
      Mat<double> epsd = gaussian_matrix<double>(len, model.latent_dim, eng);
      Arr<double> z = mu + sigma * epsd.array();
      // ln q(z|x)
      VecD log_q =
          (-0.5 * (epsd.array().square() + kLnTwoPi) - 0.5 * logvar).rowwise().sum().matrix();
      // ln p(z) under the mixture
      MatD zd = z.matrix();
      LogDensityMatrix<double> v = gaussian_log_density(zd, prior);
      VecD log_pz(len);
      for (Eigen::Index i = 0; i < len; ++i) {
        ArrCol<double> a = v.values.col(i).array() + prior.weights.array().log();
        const double mx = a.maxCoeff();
        log_pz(i) = mx + std::log((a - mx).exp().sum());
      }
      // ln p(x|z)
      Mat<T> decoded = model.decode_mean(zd.cast<T>());
      Arr<double> dec = decoded.template cast<double>();
      Arr<double> xd = x.template cast<double>();
      VecD log_px_z(len);
      if (model.obs == ObservationModel::Bernoulli) {
        Arr<double> m = dec.max(kBernoulliClamp).min(1.0 - kBernoulliClamp);
        log_px_z = (xd * m.log() + (1.0 - xd) * (1.0 - m).log()).rowwise().sum().matrix();
      } else {
        log_px_z = (-0.5 * ((xd - dec).square() + kLnTwoPi)).rowwise().sum().matrix();
      }
      logw.col(s) = log_px_z + log_pz - log_q;
    }
    for (Eigen::Index i = 0; i < len; ++i) {
      const double mx = logw.row(i).maxCoeff();
      total(start + i) =
          mx + std::log((logw.row(i).array() - mx).exp().sum()) - std::log(double(S));
    }
  }
  return -total.mean();
}

// Full report on one dataset slice. Label metrics appear only when labels
// exist; neg_log_px is skipped when importance_samples == 0.
template <class T>
MetricsReport evaluate_model(const S3vdcModel<T>& model, const Dataset& data,
                             int importance_samples, std::uint64_t seed) {
  EmbeddingTable emb = embed_samples(model, data.samples);
  MetricsReport report;
  if (data.labeled()) {
    report.accuracy = clustering_accuracy(emb.cluster, data.labels);
    report.nmi = nmi(emb.cluster, data.labels);
  }
  int present = 0;
  std::vector<std::int64_t> sizes(static_cast<std::size_t>(model.clusters), 0);
  for (int c : emb.cluster) ++sizes[static_cast<std::size_t>(c)];
  for (auto s : sizes)
    if (s > 0) ++present;
  if (present >= 2) {
    SilhouetteResult sil = silhouette(emb.z, emb.cluster, kSilhouetteCap, seed);
    report.silhouette = sil.value;
    report.silhouette_subsample = sil.used;
    bool degenerate = false;
    report.calinski_harabasz = calinski_harabasz(emb.z, emb.cluster, &degenerate);
    report.ch_degenerate = degenerate;
  }
  if (importance_samples > 0)
    report.neg_log_px =
        marginal_nll(model, data.samples, importance_samples, seed) / report.nll_normalization;
  report.cluster_sizes = sizes;
  VecD pi = model.prior().weights.template cast<double>();
  report.pi.assign(pi.data(), pi.data() + pi.size());
  return report;
}

}  // namespace s3vdc
