// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "s3vdc/objectives.hpp"
#include "s3vdc/rng.hpp"

using namespace s3vdc;

namespace {

S3vdcModel<double> tiny_model(int input_dim, int latent, int clusters, std::uint64_t seed,
                              ObservationModel obs = ObservationModel::Bernoulli) {
  return S3vdcModel<double>::build(ArchSpec::parse("mlp:16"), SampleShape{1, 1, input_dim},
                                   latent, clusters, obs, 50.0, seed);
}

}  // namespace

TEST_CASE("reconstruction_term: uniform prediction, clamp limit, hand value") {
  const int D = 7;
  MatD x = MatD::Constant(3, D, 0.5);
  MatD mu = MatD::Constant(3, D, 0.5);
  CHECK(reconstruction_term(x, mu, ObservationModel::Bernoulli) ==
        doctest::Approx(D * std::log(0.5)).epsilon(1e-12));

  // matching values at the clamp edges: ~0 per dimension
  MatD edges(1, 2), mu_edges(1, 2);
  edges << 1e-7, 1.0 - 1e-7;
  mu_edges = edges;
  CHECK(std::abs(reconstruction_term(edges, mu_edges, ObservationModel::Bernoulli)) < 1e-5);

  MatD x2(1, 2), mu2(1, 2);
  x2 << 1, 0;
  mu2 << 0.8, 0.3;
  const double expected = std::log(0.8) + std::log(0.7);
  CHECK(reconstruction_term(x2, mu2, ObservationModel::Bernoulli) ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(reconstruction_term(x2, mu2, ObservationModel::Bernoulli) ==
        doctest::Approx(-0.5798).epsilon(1e-3));

  MatD bad(1, 2);
  bad << 1.5, 0.0;
  CHECK_THROWS_AS(reconstruction_term(bad, mu2, ObservationModel::Bernoulli), ContractError);

  // gaussian mode at the mean: -D/2 ln(2pi)
  MatD g = MatD::Constant(2, 3, 0.7);
  CHECK(reconstruction_term(g, g, ObservationModel::Gaussian) ==
        doctest::Approx(-1.5 * std::log(2 * M_PI)).epsilon(1e-12));
}

TEST_CASE("kl_categorical: identical, certain, and skewed distributions") {
  VecD pi(2);
  pi << 0.5, 0.5;
  Responsibilities<double> q;
  q.values.resize(1, 2);
  q.values << 0.5, 0.5;
  CHECK(kl_categorical(q, pi) == doctest::Approx(0.0));

  q.values << 1.0, 0.0;  // 0 ln 0 := 0
  CHECK(kl_categorical(q, pi) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  VecD pi2(2);
  pi2 << 0.9, 0.1;
  q.values << 0.5, 0.5;
  const double expected = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  CHECK(kl_categorical(q, pi2) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(kl_categorical(q, pi2) == doctest::Approx(0.5108).epsilon(1e-3));
}

TEST_CASE("kl_gaussian_mixture: zero, closed form, symmetric clusters") {
  MixturePrior<double> prior;
  prior.weights = VecD::Constant(2, 0.5);
  prior.means = MatD::Zero(2, 1);
  prior.variances = MatD::Ones(2, 1);
  prior.validate();

  LatentPosterior<double> post;
  post.mean = MatD::Zero(3, 1);
  post.log_variance = MatD::Zero(3, 1);
  Responsibilities<double> q;
  q.values = MatD::Constant(3, 2, 0.5);
  CHECK(kl_gaussian_mixture(post, prior, q) == doctest::Approx(0.0));

  // all responsibility on a cluster at distance 1: KL(N(0,1) || N(1,1)) = 1/2
  MixturePrior<double> prior2 = prior;
  prior2.means << 1, -9;
  Responsibilities<double> q2;
  q2.values.resize(1, 2);
  q2.values << 1.0, 0.0;
  LatentPosterior<double> post2;
  post2.mean = MatD::Zero(1, 1);
  post2.log_variance = MatD::Zero(1, 1);
  CHECK(kl_gaussian_mixture(post2, prior2, q2) == doctest::Approx(0.5).epsilon(1e-12));

  // clusters symmetric about the posterior mean: total equals either component
  MixturePrior<double> prior3 = prior;
  prior3.means << 2, -2;
  Responsibilities<double> q3;
  q3.values.resize(1, 2);
  q3.values << 0.5, 0.5;
  const double either = 0.5 * 4.0;  // KL(N(0,1)||N(±2,1)) = 2
  CHECK(kl_gaussian_mixture(post2, prior3, q3) == doctest::Approx(either).epsilon(1e-12));
}

TEST_CASE("property: both KL terms stay above -1e-6 on randomized inputs") {
  std::mt19937_64 eng(41);
  for (int trial = 0; trial < 10000; ++trial) {
    const int c = 2 + static_cast<int>(eng() % 4);
    const int d = 1 + static_cast<int>(eng() % 3);
    const int l = 1 + static_cast<int>(eng() % 4);
    VecD pi = uniform_matrix<double>(c, 1, eng, 1e-3, 1.0);
    pi /= pi.sum();
    MatD raw = uniform_matrix<double>(l, c, eng, 1e-6, 1.0);
    Responsibilities<double> q;
    q.values = raw.array().colwise() / raw.rowwise().sum().array();
    CHECK(kl_categorical(q, pi) >= -1e-6);

    MixturePrior<double> prior;
    prior.weights = pi;
    prior.means = gaussian_matrix<double>(c, d, eng, 2.0);
    prior.variances = uniform_matrix<double>(c, d, eng, 0.05, 4.0);
    LatentPosterior<double> post;
    post.mean = gaussian_matrix<double>(l, d, eng, 2.0);
    post.log_variance = uniform_matrix<double>(l, d, eng, -3.0, 3.0);
    CHECK(kl_gaussian_mixture(post, prior, q) >= -1e-6);
  }
}

TEST_CASE("s3vdc_loss: breakdown identity, scaling, determinism") {
  auto model = tiny_model(6, 2, 3, 17);
  std::mt19937_64 eng(5);
  MatD x = uniform_matrix<double>(4, 6, eng, 0.0, 1.0);
  MatD xhat = x + gaussian_matrix<double>(4, 6, eng, 0.01);
  MatD noise = gaussian_matrix<double>(4, 2, eng);

  LossBreakdown unit = s3vdc_loss(model, x, xhat, noise, 1.0);
  CHECK(unit.total ==
        doctest::Approx(-unit.reconstruction + unit.kl_categorical + unit.kl_gaussian)
            .epsilon(1e-6));

  LossBreakdown gamma = s3vdc_loss(model, x, xhat, noise, 5e-4);
  CHECK(gamma.reconstruction == doctest::Approx(unit.reconstruction).epsilon(1e-12));
  CHECK(gamma.total ==
        doctest::Approx(-gamma.reconstruction +
                        5e-4 * (gamma.kl_categorical + gamma.kl_gaussian))
            .epsilon(1e-9));

  LossBreakdown again = s3vdc_loss(model, x, xhat, noise, 5e-4);
  CHECK(again.total == gamma.total);
  CHECK_THROWS_AS(s3vdc_loss(model, x, xhat, noise, 0.0), ContractError);
}

TEST_CASE("s3vdc_loss graph terms equal the independently computed objective terms") {
  auto model = tiny_model(5, 2, 4, 23);
  std::mt19937_64 eng(29);
  MatD x = uniform_matrix<double>(6, 5, eng, 0.0, 1.0);
  MatD xhat = x;
  MatD noise = gaussian_matrix<double>(6, 2, eng);

  LossGraph<double> g =
      build_loss_graph(model, MatD(x.transpose()), MatD(xhat.transpose()),
                       MatD(noise.transpose()), 1.0);

  // recompute every term through the plain evaluation path from the graph's z
  MatD z = g.tape.val(g.z).transpose();
  MatD decoded = model.decode_mean(z);
  CHECK(g.tape.val(g.recon)(0, 0) ==
        doctest::Approx(reconstruction_term(x, decoded, model.obs)).epsilon(1e-9));

  MixturePrior<double> prior = model.prior();
  auto v = gaussian_log_density(z, prior);
  auto vt = inverse_min_max(v, model.lambda);
  auto q = cluster_responsibilities(vt, prior.weights);
  CHECK((g.tape.val(g.responsibilities).transpose() - q.values).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(g.tape.val(g.kl_cat)(0, 0) == doctest::Approx(kl_categorical(q, prior.weights)).epsilon(1e-9));

  LatentPosterior<double> post = model.encode(xhat);
  CHECK(g.tape.val(g.kl_gauss)(0, 0) ==
        doctest::Approx(kl_gaussian_mixture(post, prior, q)).epsilon(1e-9));
}

TEST_CASE("gradient check: full loss versus central differences on prior parameters") {
  auto model = tiny_model(6, 2, 2, 31);
  std::mt19937_64 eng(37);
  MatD x = uniform_matrix<double>(5, 6, eng, 0.05, 0.95);
  MatD xhat = x + gaussian_matrix<double>(5, 6, eng, 0.01);
  MatD noise = gaussian_matrix<double>(5, 2, eng);
  const double weight = 0.7;

  LossGraph<double> g =
      build_loss_graph(model, MatD(x.transpose()), MatD(xhat.transpose()),
                       MatD(noise.transpose()), weight);
  g.tape.backward(g.total);

  auto params = model.parameters();
  const double h = 1e-5;
  // every parameter tensor, prior parameters included (the last three)
  for (std::size_t p = 0; p < params.size(); ++p) {
    MatD analytic = g.tape.grad_of(g.param_nodes[p]);
    Mat<double>& tensor = *params[p].second;
    std::mt19937_64 probe_eng(1000 + p);
    const int probes = std::min<int>(6, static_cast<int>(tensor.size()));
    for (int probe = 0; probe < probes; ++probe) {
      const Eigen::Index r = static_cast<Eigen::Index>(probe_eng() % tensor.rows());
      const Eigen::Index c = static_cast<Eigen::Index>(probe_eng() % tensor.cols());
      const double saved = tensor(r, c);
      auto eval = [&](double delta) {
        tensor(r, c) = saved + delta;
        LossGraph<double> g2 =
            build_loss_graph(model, MatD(x.transpose()), MatD(xhat.transpose()),
                             MatD(noise.transpose()), weight);
        tensor(r, c) = saved;
        return g2.tape.val(g2.total)(0, 0);
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double denom = std::max({std::abs(numeric), std::abs(analytic(r, c)), 1e-8});
      CHECK(std::abs(numeric - analytic(r, c)) / denom <= 1e-3);
    }
  }
}

TEST_CASE("loss stays finite for extreme inputs") {
  auto model = tiny_model(4, 2, 3, 43);
  std::mt19937_64 eng(47);
  MatD x = uniform_matrix<double>(4, 4, eng, 0.0, 1.0);
  MatD xhat = gaussian_matrix<double>(4, 4, eng, 1.0) * 1e3;  // wildly corrupted input
  MatD noise = gaussian_matrix<double>(4, 2, eng);
  LossBreakdown b = s3vdc_loss(model, x, xhat, noise, 1.0);
  CHECK(b.finite());

  // posterior log-variance forced to the stated extremes
  for (double lv : {-30.0, 30.0}) {
    auto m2 = tiny_model(4, 2, 3, 53);
    m2.logvar_head.w.setZero();
    m2.logvar_head.b.setConstant(lv);
    LossBreakdown b2 = s3vdc_loss(m2, x, MatD(x), noise, 1.0);
    CHECK(b2.finite());
  }
}
