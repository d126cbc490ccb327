// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <random>

#include "s3vdc/metrics.hpp"
#include "s3vdc/rng.hpp"

using namespace s3vdc;

namespace {

std::vector<int> random_ids(std::size_t n, int k, std::mt19937_64& eng) {
  std::uniform_int_distribution<int> pick(0, k - 1);
  std::vector<int> out(n);
  for (auto& v : out) v = pick(eng);
  return out;
}

}  // namespace

TEST_CASE("clustering_accuracy: relabeling invariance and random baseline") {
  std::mt19937_64 eng(3);
  std::vector<int> labels = random_ids(500, 4, eng);
  std::vector<int> relabeled(labels.size());
  const int perm[4] = {2, 3, 1, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) relabeled[i] = perm[labels[i]];
  CHECK(clustering_accuracy(relabeled, labels) == doctest::Approx(1.0));

  // uniform random predictions over C clusters on balanced labels: ~1/C
  const int C = 5;
  std::vector<int> balanced(10000);
  for (std::size_t i = 0; i < balanced.size(); ++i) balanced[i] = static_cast<int>(i % C);
  std::vector<int> random_pred = random_ids(balanced.size(), C, eng);
  CHECK(clustering_accuracy(random_pred, balanced) == doctest::Approx(1.0 / C).epsilon(0.12));

  CHECK_THROWS_AS(clustering_accuracy({0, 1}, {0}), ContractError);
}

TEST_CASE("clustering_accuracy equals brute force over all mappings") {
  std::mt19937_64 eng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(eng() % 4);  // C <= 5
    const std::size_t n = 20 + eng() % 100;
    std::vector<int> pred = random_ids(n, k, eng);
    std::vector<int> labels = random_ids(n, k, eng);
    CHECK(clustering_accuracy(pred, labels) ==
          doctest::Approx(clustering_accuracy_bruteforce(pred, labels)).epsilon(1e-12));
  }
}

TEST_CASE("nmi: identical, constant, independent partitions") {
  std::mt19937_64 eng(11);
  std::vector<int> labels = random_ids(2000, 3, eng);
  CHECK(nmi(labels, labels) == doctest::Approx(1.0));

  std::vector<int> constant(labels.size(), 0);
  CHECK(nmi(constant, labels) == doctest::Approx(0.0));

  // two interleaved halves: joint distribution factorizes exactly
  std::vector<int> pred(4000), truth(4000);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred[i] = i < 2000 ? 0 : 1;
    truth[i] = static_cast<int>(i % 2);
  }
  CHECK(nmi(pred, truth) == doctest::Approx(0.0).epsilon(0.01));
}

TEST_CASE("nmi is invariant under relabeling of predictions") {
  std::mt19937_64 eng(13);
  std::vector<int> labels = random_ids(800, 4, eng);
  std::vector<int> pred = random_ids(800, 4, eng);
  std::vector<int> relabeled(pred.size());
  const int perm[4] = {3, 0, 2, 1};
  for (std::size_t i = 0; i < pred.size(); ++i) relabeled[i] = perm[pred[i]];
  CHECK(nmi(pred, labels) == doctest::Approx(nmi(relabeled, labels)).epsilon(1e-12));
  CHECK(clustering_accuracy(pred, labels) ==
        doctest::Approx(clustering_accuracy(relabeled, labels)).epsilon(1e-12));
}

TEST_CASE("silhouette: separated blobs, swapped labels, degenerate blobs") {
  std::mt19937_64 eng(17);
  const int n_half = 150;
  MatD emb(2 * n_half, 2);
  std::vector<int> pred(2 * n_half);
  for (int i = 0; i < n_half; ++i) {
    emb.row(i) = Eigen::RowVector2d(0, 0) + 0.05 * Eigen::RowVector2d::Random();
    emb.row(n_half + i) = Eigen::RowVector2d(10, 10) + 0.05 * Eigen::RowVector2d::Random();
    pred[i] = 0;
    pred[n_half + i] = 1;
  }
  CHECK(silhouette(emb, pred).value >= 0.9);

  // silhouette depends only on the partition: swapping the two cluster ids
  // between the blobs is a relabeling and scores identically
  std::vector<int> relabeled(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) relabeled[i] = 1 - pred[i];
  CHECK(silhouette(emb, relabeled).value ==
        doctest::Approx(silhouette(emb, pred).value).epsilon(1e-12));

  // worst-case partition: pair each location with a far one (derangement of
  // one-hot locations); every point scores (D/2 - D)/D = -1/2 exactly
  const int k = 12;
  MatD ring = MatD::Zero(2 * k, k);
  std::vector<int> deranged(2 * k);
  for (int i = 0; i < k; ++i) {
    ring(2 * i, i) = 1.0;      // first point at location i, cluster i
    ring(2 * i + 1, (i + 1) % k) = 1.0;  // second point at the next location
    deranged[2 * i] = i;
    deranged[2 * i + 1] = i;
  }
  CHECK(silhouette(ring, deranged).value == doctest::Approx(-0.5).epsilon(1e-9));

  // identical points within each cluster: a = 0, silhouette exactly 1
  MatD degenerate(6, 1);
  degenerate << 0, 0, 0, 5, 5, 5;
  std::vector<int> dp = {0, 0, 0, 1, 1, 1};
  CHECK(silhouette(degenerate, dp).value == doctest::Approx(1.0));

  std::vector<int> lone(6, 0);
  CHECK_THROWS_AS(silhouette(degenerate, lone), ContractError);
}

TEST_CASE("silhouette subsample cap is seeded and recorded") {
  std::mt19937_64 eng(23);
  MatD emb = gaussian_matrix<double>(300, 2, eng);
  std::vector<int> pred = random_ids(300, 2, eng);
  SilhouetteResult a = silhouette(emb, pred, 100, 5);
  SilhouetteResult b = silhouette(emb, pred, 100, 5);
  CHECK(a.used == 100);
  CHECK(a.value == b.value);
  SilhouetteResult c = silhouette(emb, pred, 100, 6);
  CHECK(c.value != a.value);
}

TEST_CASE("calinski_harabasz: separation helps, degenerate guard, random baseline") {
  std::mt19937_64 eng(29);
  const int n_half = 200;
  MatD emb(2 * n_half, 3);
  std::vector<int> good(2 * n_half);
  for (int i = 0; i < n_half; ++i) {
    emb.row(i) = Eigen::RowVector3d(0, 0, 0) + Eigen::RowVector3d::Random();
    emb.row(n_half + i) = Eigen::RowVector3d(8, 8, 8) + Eigen::RowVector3d::Random();
    good[i] = 0;
    good[n_half + i] = 1;
  }
  std::vector<int> shuffled = good;
  std::shuffle(shuffled.begin(), shuffled.end(), eng);
  CHECK(calinski_harabasz(emb, good) > calinski_harabasz(emb, shuffled));

  MatD degenerate(4, 1);
  degenerate << 0, 0, 1, 1;
  std::vector<int> dp = {0, 0, 1, 1};
  bool flag = false;
  CHECK(calinski_harabasz(degenerate, dp, &flag) == doctest::Approx(1e12));
  CHECK(flag);

  // random assignment on isotropic data: expectation region around 1
  MatD iso = gaussian_matrix<double>(10000, 2, eng);
  std::vector<int> rnd = random_ids(10000, 3, eng);
  const double score = calinski_harabasz(iso, rnd);
  CHECK(score > 0.2);
  CHECK(score < 3.0);

  std::vector<int> lone(4, 0);
  CHECK_THROWS_AS(calinski_harabasz(degenerate, lone), ContractError);
}

TEST_CASE("stability_report: zero spread, hand arithmetic, input validation") {
  MetricsReport a;
  a.accuracy = 0.92;
  MetricsReport b = a, c = a;
  auto same = stability_report({a, b, c});
  CHECK(same["accuracy"].mean == doctest::Approx(0.92));
  CHECK(same["accuracy"].stddev == doctest::Approx(0.0));

  b.accuracy = 0.94;
  c.accuracy = 0.96;
  auto stats = stability_report({a, b, c});
  CHECK(stats["accuracy"].mean == doctest::Approx(0.94).epsilon(1e-12));
  CHECK(stats["accuracy"].stddev == doctest::Approx(0.02).epsilon(1e-9));

  CHECK_THROWS_AS(stability_report({a}), ContractError);

  // metrics missing from one run are not aggregated
  MetricsReport d;
  d.nmi = 0.5;
  auto partial = stability_report({a, d});
  CHECK(partial.count("accuracy") == 0);
  CHECK(partial.count("nmi") == 0);
}

TEST_CASE("metrics report JSON round-trip keeps keys and omits absent metrics") {
  MetricsReport r;
  r.silhouette = 0.4;
  r.calinski_harabasz = 12.5;
  r.cluster_sizes = {10, 20};
  r.pi = {0.3, 0.7};
  const std::string text = r.to_json();
  CHECK(text.find("accuracy") == std::string::npos);  // omitted, not zero-filled
  MetricsReport back = MetricsReport::from_json(text);
  CHECK(!back.accuracy.has_value());
  CHECK(back.silhouette == doctest::Approx(0.4));
  CHECK(back.cluster_sizes == std::vector<std::int64_t>{10, 20});
}

TEST_CASE("marginal_nll: estimator contract and variance shrinkage") {
  auto model = S3vdcModel<float>::build(ArchSpec::parse("mlp:12"), SampleShape{1, 1, 8}, 2, 2,
                                        ObservationModel::Gaussian, 50.0, 3);
  std::mt19937_64 eng(31);
  MatF x = gaussian_matrix<float>(64, 8, eng);

  CHECK_THROWS_AS(marginal_nll(model, x, 0, 1), ContractError);

  // repeated estimates: more importance samples, less spread
  auto spread = [&](int s_count) {
    std::vector<double> vals;
    for (int rep = 0; rep < 30; ++rep)
      vals.push_back(marginal_nll(model, x, s_count, 1000 + rep));
    const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
    double ss = 0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    return std::pair<double, double>(mean, ss / (vals.size() - 1));
  };
  auto [mean4, var4] = spread(4);
  auto [mean64, var64] = spread(64);
  CHECK(var64 < var4);
  // Jensen gap: the estimate improves (decreases) in expectation with more samples
  CHECK(mean64 < mean4);

  // determinism under a fixed seed
  CHECK(marginal_nll(model, x, 8, 5) == marginal_nll(model, x, 8, 5));
}
