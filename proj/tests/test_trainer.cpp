// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "s3vdc/metrics.hpp"
#include "s3vdc/trainer.hpp"

using namespace s3vdc;
namespace fs = std::filesystem;

namespace {

RunConfig smoke_config(std::int64_t seed = 1) {
  RunConfig cfg;
  cfg.dataset = "synthetic";
  cfg.mode = ObservationModel::Gaussian;
  cfg.arch = "mlp:16";
  cfg.batch_size = 32;
  cfg.latent_dim = 2;
  cfg.clusters = 2;
  cfg.initial_lr = 2e-3;
  cfg.terminal_lr = 1e-6;
  cfg.noise_std = 5e-9;
  cfg.seed = seed;
  cfg.schedule.gamma = 5e-4;
  cfg.schedule.t_gamma = 60;
  cfg.schedule.t_beta = 30;
  cfg.schedule.t_static = 10;
  cfg.schedule.periods = 2;
  cfg.gmm_k = 8;
  cfg.synthetic = SyntheticParams{512, 2, 0.35, 99};
  cfg.validate();
  return cfg;
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("s3vdc-train-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("corrupt: zero noise, tiny noise bound, determinism") {
  std::mt19937_64 eng(3);
  Mat<float> x = gaussian_matrix<float>(16, 8, eng);
  auto e0 = SeedStream(1).engine();
  CHECK(corrupt(x, 0.0, e0) == x);

  auto e1 = SeedStream(2).engine();
  Mat<float> xh = corrupt(x, 5e-9, e1);
  CHECK((xh - x).cwiseAbs().maxCoeff() < 1e-7f);  // a 20-sigma event would be needed

  auto e2 = SeedStream(7).engine();
  auto e3 = SeedStream(7).engine();
  CHECK(corrupt(x, 0.1, e2) == corrupt(x, 0.1, e3));
  auto e4 = SeedStream(8).engine();
  CHECK_THROWS_AS(corrupt(x, -1.0, e4), ContractError);
}

TEST_CASE("learning_rate_at: endpoints and geometric midpoint") {
  const std::int64_t total = 20001;
  CHECK(learning_rate_at(1, total, 2e-3, 1e-6) == doctest::Approx(2e-3).epsilon(1e-15));
  CHECK(learning_rate_at(total, total, 2e-3, 1e-6) == doctest::Approx(1e-6).epsilon(1e-12));
  const double mid = learning_rate_at((total + 1) / 2, total, 2e-3, 1e-6);
  CHECK(mid == doctest::Approx(std::sqrt(2e-3 * 1e-6)).epsilon(1e-9));
  CHECK(mid == doctest::Approx(4.47e-5).epsilon(1e-3));
  CHECK_THROWS_AS(learning_rate_at(0, total, 2e-3, 1e-6), ContractError);
}

TEST_CASE("train: phase sequence matches the schedule and gmm runs once in place") {
  RunConfig cfg = smoke_config();
  Dataset data = standardize(
      synthetic_behavior(cfg.synthetic.n, cfg.synthetic.archetypes, cfg.synthetic.seed,
                         cfg.synthetic.noise));
  std::vector<StepRecord> records;
  TrainOutput<float> out =
      train<float>(cfg, data, "", [&](const StepRecord& r) { records.push_back(r); });

  REQUIRE(static_cast<std::int64_t>(records.size()) == cfg.schedule.total_steps());
  for (const StepRecord& r : records) {
    CHECK(r.phase == phase_at(r.step, cfg.schedule));
    CHECK(r.weight == doctest::Approx(regularizer_weight_at(r.step, cfg.schedule)));
    CHECK(r.lr == doctest::Approx(learning_rate_at(r.step, cfg.schedule.total_steps(),
                                                   cfg.initial_lr, cfg.terminal_lr)));
    CHECK(r.loss.finite());
  }
  CHECK(out.gmm_init_step == cfg.schedule.t_gamma);
  CHECK(out.gmm_init.iterations >= 1);
  out.bundle.model.prior().validate();
}

TEST_CASE("train: identical seeds give identical losses and parameters") {
  RunConfig cfg = smoke_config(5);
  Dataset data = standardize(synthetic_behavior(cfg.synthetic.n, cfg.synthetic.archetypes,
                                                cfg.synthetic.seed, cfg.synthetic.noise));
  std::vector<double> first, second;
  auto out_a = train<float>(cfg, data, "",
                            [&](const StepRecord& r) { first.push_back(r.loss.total); });
  auto out_b = train<float>(cfg, data, "",
                            [&](const StepRecord& r) { second.push_back(r.loss.total); });
  CHECK(first == second);
  auto pa = out_a.bundle.model.parameters();
  auto pb = out_b.bundle.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i].second == *pb[i].second);

  RunConfig other = smoke_config(6);
  std::vector<double> third;
  train<float>(other, data, "", [&](const StepRecord& r) { third.push_back(r.loss.total); });
  CHECK(first != third);
}

TEST_CASE("train: checkpoints at phase boundaries, manifest, history") {
  RunConfig cfg = smoke_config(7);
  Dataset data = standardize(synthetic_behavior(cfg.synthetic.n, cfg.synthetic.archetypes,
                                                cfg.synthetic.seed, cfg.synthetic.noise));
  TempDir tmp;
  const std::string run_dir = tmp.path.string();
  TrainOutput<float> out = train<float>(cfg, data, run_dir);

  // boundaries: 60 (gamma end), 90, 100, 130, 140
  for (std::int64_t step : {60, 90, 100, 130, 140})
    CHECK(fs::exists(run_dir + "/step-" + std::to_string(step) + "/params.bin"));

  std::ifstream hist(run_dir + "/history.csv");
  REQUIRE(hist.good());
  std::string line;
  std::getline(hist, line);
  CHECK(line == "step,phase,weight,recon,kl_cat,kl_gauss,total,lr");
  std::int64_t rows = 0;
  while (std::getline(hist, line))
    if (!line.empty()) ++rows;
  CHECK(rows == cfg.schedule.total_steps());

  std::ifstream mf(run_dir + "/manifest.json");
  REQUIRE(mf.good());
  std::stringstream ss;
  ss << mf.rdbuf();
  auto manifest = nlohmann::json::parse(ss.str());
  CHECK(manifest["status"] == "completed");
  CHECK(manifest["final_step"] == cfg.schedule.total_steps());
  CHECK(manifest["checkpoints"].size() == 5);
  CHECK(manifest["run_id"] == cfg.run_id());

  // round-trip: the reloaded model gives identical assignments and parameters
  CheckpointBundle<float> loaded = load_run<float>(run_dir);
  auto pa = out.bundle.model.parameters();
  auto pb = loaded.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i].second == *pb[i].second);
  Mat<float> held_out = data.samples.topRows(64).cast<float>();
  CHECK(out.bundle.model.predict_clusters(held_out) == loaded.model.predict_clusters(held_out));
}

TEST_CASE("train rejects a dataset whose mode mismatches the config") {
  RunConfig cfg = smoke_config();
  Dataset data = synthetic_behavior(128, 2, 1);
  data.mode = ObservationModel::Bernoulli;
  CHECK_THROWS_AS(train<float>(cfg, data, ""), ContractError);
}

TEST_CASE("adam save/load restores optimizer state bit-exactly") {
  auto model = S3vdcModel<float>::build(ArchSpec::parse("mlp:6"), SampleShape{1, 1, 4}, 2, 2,
                                        ObservationModel::Gaussian, 50.0, 1);
  auto params = model.parameters();
  Adam<float> opt;
  opt.init(params);
  std::mt19937_64 eng(9);
  std::vector<Mat<float>> grads;
  for (auto& [name, p] : params) grads.push_back(gaussian_matrix<float>(p->rows(), p->cols(), eng));
  opt.step(params, grads, 1e-3);
  opt.step(params, grads, 1e-3);

  TempDir tmp;
  fs::create_directories(tmp.path);
  const std::string path = (tmp.path / "adam.bin").string();
  opt.save(path, params);

  auto model2 = S3vdcModel<float>::build(ArchSpec::parse("mlp:6"), SampleShape{1, 1, 4}, 2, 2,
                                         ObservationModel::Gaussian, 50.0, 1);
  auto params2 = model2.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) *params2[i].second = *params[i].second;
  Adam<float> opt2;
  opt2.load(path, params2);
  CHECK(opt2.steps() == 2);

  // one more identical step produces identical parameters
  opt.step(params, grads, 1e-3);
  opt2.step(params2, grads, 1e-3);
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(*params[i].second == *params2[i].second);
}
