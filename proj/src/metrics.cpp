// SPDX-License-Identifier: Apache-2.0
#include "s3vdc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "s3vdc/hungarian.hpp"

namespace s3vdc {

namespace {

int max_id(const std::vector<int>& ids) {
  int m = -1;
  for (int v : ids) {
    require(v >= 0, "metrics: ids must be non-negative");
    m = std::max(m, v);
  }
  return m;
}

MatD confusion(const std::vector<int>& pred, const std::vector<int>& labels, int k) {
  MatD conf = MatD::Zero(k, k);
  for (std::size_t i = 0; i < pred.size(); ++i) conf(pred[i], labels[i]) += 1.0;
  return conf;
}

}  // namespace

double clustering_accuracy(const std::vector<int>& pred, const std::vector<int>& labels) {
  require(pred.size() == labels.size(), "clustering_accuracy: length mismatch");
  require(!pred.empty(), "clustering_accuracy: empty input");
  const int k = std::max(max_id(pred), max_id(labels)) + 1;
  MatD conf = confusion(pred, labels, k);
  const double top = conf.maxCoeff();
  MatD cost = MatD::Constant(k, k, top) - conf;
  std::vector<int> assign = min_cost_assignment(cost);
  double matched = 0;
  for (int r = 0; r < k; ++r) matched += conf(r, assign[static_cast<std::size_t>(r)]);
  return matched / static_cast<double>(pred.size());
}

double clustering_accuracy_bruteforce(const std::vector<int>& pred,
                                      const std::vector<int>& labels) {
  require(pred.size() == labels.size(), "clustering_accuracy: length mismatch");
  const int k = std::max(max_id(pred), max_id(labels)) + 1;
  require(k <= 8, "clustering_accuracy_bruteforce: too many ids");
  MatD conf = confusion(pred, labels, k);
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0;
  do {
    double matched = 0;
    for (int r = 0; r < k; ++r) matched += conf(r, perm[static_cast<std::size_t>(r)]);
    best = std::max(best, matched);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(pred.size());
}

double nmi(const std::vector<int>& pred, const std::vector<int>& labels) {
  require(pred.size() == labels.size(), "nmi: length mismatch");
  require(!pred.empty(), "nmi: empty input");
  const double n = static_cast<double>(pred.size());
  const int kp = max_id(pred) + 1;
  const int kl = max_id(labels) + 1;
  MatD joint = MatD::Zero(kp, kl);
  for (std::size_t i = 0; i < pred.size(); ++i) joint(pred[i], labels[i]) += 1.0;
  joint /= n;
  VecD pp = joint.rowwise().sum();
  VecD pl = joint.colwise().sum().transpose();

  double mi = 0;
  for (int i = 0; i < kp; ++i)
    for (int j = 0; j < kl; ++j) {
      const double p = joint(i, j);
      if (p > 0) mi += p * std::log(p / (pp(i) * pl(j)));
    }
  auto entropy = [](const VecD& p) {
    double h = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (p(i) > 0) h -= p(i) * std::log(p(i));
    return h;
  };
  const double denom = 0.5 * (entropy(pp) + entropy(pl));
  if (denom < 1e-15) return 0.0;
  return std::clamp(mi / denom, 0.0, 1.0);
}

SilhouetteResult silhouette(const MatD& embeddings, const std::vector<int>& pred, int cap,
                            std::uint64_t seed) {
  require(embeddings.rows() == static_cast<Eigen::Index>(pred.size()),
          "silhouette: embedding/prediction length mismatch");
  require(cap >= 2, "silhouette: cap must be >= 2");

  std::vector<Eigen::Index> idx;
  const Eigen::Index n_all = embeddings.rows();
  if (n_all > cap) {
    auto eng = SeedStream(seed).engine();
    idx = sample_without_replacement(n_all, cap, eng);
  } else {
    idx.resize(static_cast<std::size_t>(n_all));
    std::iota(idx.begin(), idx.end(), 0);
  }
  const Eigen::Index n = static_cast<Eigen::Index>(idx.size());

  std::vector<int> ids(static_cast<std::size_t>(n));
  MatD x(n, embeddings.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = embeddings.row(idx[static_cast<std::size_t>(i)]);
    ids[static_cast<std::size_t>(i)] = pred[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
  }
  const int k = max_id(ids) + 1;
  std::vector<Eigen::Index> sizes(static_cast<std::size_t>(k), 0);
  for (int c : ids) ++sizes[static_cast<std::size_t>(c)];
  int clusters_present = 0;
  for (auto s : sizes)
    if (s > 0) ++clusters_present;
  require(clusters_present >= 2, "silhouette: undefined for a single cluster");

  double total = 0;
  MatD dist_to_cluster(n, k);
  // O(n^2 d) pass, accumulating per-cluster distance sums row by row
  for (Eigen::Index i = 0; i < n; ++i) {
    VecD sums = VecD::Zero(k);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = (x.row(i) - x.row(j)).norm();
      sums(ids[static_cast<std::size_t>(j)]) += d;
    }
    dist_to_cluster.row(i) = sums.transpose();
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const int own = ids[static_cast<std::size_t>(i)];
    const Eigen::Index own_size = sizes[static_cast<std::size_t>(own)];
    if (own_size <= 1) continue;  // convention: singleton silhouette is 0
    const double a = dist_to_cluster(i, own) / static_cast<double>(own_size - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c == own || sizes[static_cast<std::size_t>(c)] == 0) continue;
      b = std::min(b, dist_to_cluster(i, c) / static_cast<double>(sizes[static_cast<std::size_t>(c)]));
    }
    const double m = std::max(a, b);
    total += (m > 0) ? (b - a) / m : 0.0;
  }
  return {total / static_cast<double>(n), static_cast<int>(n)};
}

double calinski_harabasz(const MatD& embeddings, const std::vector<int>& pred,
                         bool* degenerate) {
  const Eigen::Index n = embeddings.rows();
  require(n == static_cast<Eigen::Index>(pred.size()), "calinski_harabasz: length mismatch");
  const int k = max_id(pred) + 1;
  std::vector<Eigen::Index> sizes(static_cast<std::size_t>(k), 0);
  for (int c : pred) ++sizes[static_cast<std::size_t>(c)];
  int present = 0;
  for (auto s : sizes)
    if (s > 0) ++present;
  require(present >= 2, "calinski_harabasz: undefined for a single cluster");
  require(n > present, "calinski_harabasz: need more samples than clusters");

  Eigen::RowVectorXd global = embeddings.colwise().mean();
  MatD centroids = MatD::Zero(k, embeddings.cols());
  for (Eigen::Index i = 0; i < n; ++i)
    centroids.row(pred[static_cast<std::size_t>(i)]) += embeddings.row(i);
  double between = 0;
  for (int c = 0; c < k; ++c) {
    if (sizes[static_cast<std::size_t>(c)] == 0) continue;
    centroids.row(c) /= static_cast<double>(sizes[static_cast<std::size_t>(c)]);
    between += static_cast<double>(sizes[static_cast<std::size_t>(c)]) *
               (centroids.row(c) - global).squaredNorm();
  }
  double within = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    within += (embeddings.row(i) - centroids.row(pred[static_cast<std::size_t>(i)])).squaredNorm();

  if (degenerate) *degenerate = false;
  const double denom = within / static_cast<double>(n - present);
  if (denom < 1e-15) {
    if (degenerate) *degenerate = true;
    return 1e12;
  }
  return (between / static_cast<double>(present - 1)) / denom;
}

std::map<std::string, MetricStats> stability_report(const std::vector<MetricsReport>& runs) {
  require(runs.size() >= 2, "stability_report: need at least 2 runs");
  std::map<std::string, std::vector<double>> series;
  auto collect = [&](const std::string& key, const std::optional<double>& v) {
    if (v) series[key].push_back(*v);
  };
  for (const MetricsReport& r : runs) {
    collect("accuracy", r.accuracy);
    collect("nmi", r.nmi);
    collect("silhouette", r.silhouette);
    collect("calinski_harabasz", r.calinski_harabasz);
    collect("neg_log_px", r.neg_log_px);
  }
  std::map<std::string, MetricStats> out;
  for (auto& [key, xs] : series) {
    if (xs.size() != runs.size()) continue;  // only metrics present in every run
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    double ss = 0;
    for (double v : xs) ss += (v - mean) * (v - mean);
    out[key] = {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
  }
  return out;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  if (accuracy) j["accuracy"] = *accuracy;
  if (nmi) j["nmi"] = *nmi;
  if (silhouette) j["silhouette"] = *silhouette;
  if (calinski_harabasz) j["calinski_harabasz"] = *calinski_harabasz;
  if (neg_log_px) j["neg_log_px"] = *neg_log_px;
  j["cluster_sizes"] = cluster_sizes;
  j["pi"] = pi;
  j["ch_degenerate"] = ch_degenerate;
  j["silhouette_subsample"] = silhouette_subsample;
  j["nll_normalization"] = nll_normalization;
  return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  MetricsReport r;
  if (j.contains("accuracy")) r.accuracy = j["accuracy"].get<double>();
  if (j.contains("nmi")) r.nmi = j["nmi"].get<double>();
  if (j.contains("silhouette")) r.silhouette = j["silhouette"].get<double>();
  if (j.contains("calinski_harabasz"))
    r.calinski_harabasz = j["calinski_harabasz"].get<double>();
  if (j.contains("neg_log_px")) r.neg_log_px = j["neg_log_px"].get<double>();
  if (j.contains("cluster_sizes"))
    r.cluster_sizes = j["cluster_sizes"].get<std::vector<std::int64_t>>();
  if (j.contains("pi")) r.pi = j["pi"].get<std::vector<double>>();
  if (j.contains("ch_degenerate")) r.ch_degenerate = j["ch_degenerate"].get<bool>();
  if (j.contains("silhouette_subsample"))
    r.silhouette_subsample = j["silhouette_subsample"].get<int>();
  if (j.contains("nll_normalization"))
    r.nll_normalization = j["nll_normalization"].get<double>();
  return r;
}

}  // namespace s3vdc
