// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "s3vdc/config.hpp"
#include "s3vdc/data.hpp"
#include "s3vdc/gmm.hpp"
#include "s3vdc/objectives.hpp"
#include "s3vdc/schedule.hpp"
#include "s3vdc/tensor_io.hpp"

namespace s3vdc {

inline double learning_rate_at(std::int64_t t, std::int64_t total_steps, double initial_lr,
                               double terminal_lr) {
  require(t >= 1 && t <= total_steps, "learning_rate_at: step outside the schedule");
  if (total_steps == 1) return initial_lr;
  const double frac = static_cast<double>(t - 1) / static_cast<double>(total_steps - 1);
  return initial_lr * std::pow(terminal_lr / initial_lr, frac);
}

// x_hat = x + N(0, noise_std^2); x itself stays the reconstruction target.
template <class T>
Mat<T> corrupt(const Mat<T>& x, double noise_std, std::mt19937_64& eng) {
  require(noise_std >= 0, "corrupt: noise_std must be non-negative");
  if (noise_std == 0) return x;
  return x + gaussian_matrix<T>(x.rows(), x.cols(), eng, noise_std);
}

template <class T>
class Adam {
 public:
  void init(const std::vector<std::pair<std::string, Mat<T>*>>& params) {
    m_.clear();
    v_.clear();
    t_ = 0;
    for (const auto& [name, p] : params) {
      m_.push_back(Mat<T>::Zero(p->rows(), p->cols()));
      v_.push_back(Mat<T>::Zero(p->rows(), p->cols()));
    }
  }

  void step(const std::vector<std::pair<std::string, Mat<T>*>>& params,
            const std::vector<Mat<T>>& grads, double lr) {
    require(params.size() == grads.size() && params.size() == m_.size(),
            "adam: parameter/gradient count mismatch");
    ++t_;
    const T b1 = T(beta1), b2 = T(beta2);
    const T corr1 = T(1) - static_cast<T>(std::pow(beta1, static_cast<double>(t_)));
    const T corr2 = T(1) - static_cast<T>(std::pow(beta2, static_cast<double>(t_)));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Mat<T>& p = *params[i].second;
      const Mat<T>& g = grads[i];
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = (b2 * v_[i]).array() + (T(1) - b2) * g.array().square();
      Arr<T> m_hat = m_[i].array() / corr1;
      Arr<T> v_hat = v_[i].array() / corr2;
      p.array() -= T(lr) * m_hat / (v_hat.sqrt() + T(epsilon));
    }
  }

  std::int64_t steps() const { return t_; }

  void save(const std::string& path,
            const std::vector<std::pair<std::string, Mat<T>*>>& params) {
    std::vector<std::pair<std::string, Mat<T>*>> blobs;
    Mat<T> tmat(1, 1);
    tmat(0, 0) = static_cast<T>(t_);
    blobs.emplace_back("adam.t", &tmat);
    for (std::size_t i = 0; i < params.size(); ++i) {
      blobs.emplace_back(params[i].first + ".m", &m_[i]);
      blobs.emplace_back(params[i].first + ".v", &v_[i]);
    }
    save_named_params(path, blobs);
  }

  void load(const std::string& path,
            const std::vector<std::pair<std::string, Mat<T>*>>& params) {
    init(params);
    std::vector<std::pair<std::string, Mat<T>*>> blobs;
    Mat<T> tmat(1, 1);
    blobs.emplace_back("adam.t", &tmat);
    for (std::size_t i = 0; i < params.size(); ++i) {
      blobs.emplace_back(params[i].first + ".m", &m_[i]);
      blobs.emplace_back(params[i].first + ".v", &v_[i]);
    }
    load_named_params(path, blobs);
    t_ = static_cast<std::int64_t>(tmat(0, 0));
  }

  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

 private:
  std::int64_t t_ = 0;
  std::vector<Mat<T>> m_, v_;
};

// Shuffled epochs, exact batch width: when an epoch runs out mid-batch, the
// next epoch's order continues filling, so batch shapes never change.
template <class T>
class Batcher {
 public:
  Batcher(const MatF& samples, int batch, std::mt19937_64 eng)
      : data_(&samples), batch_(batch), eng_(std::move(eng)) {
    require(batch_ >= 1, "batcher: batch size must be positive");
    order_.resize(static_cast<std::size_t>(samples.rows()));
    std::iota(order_.begin(), order_.end(), 0);
    reshuffle();
  }

  Mat<T> next() {
    Mat<T> out(data_->cols(), batch_);
    for (int l = 0; l < batch_; ++l) {
      if (cursor_ >= order_.size()) reshuffle();
      out.col(l) = data_->row(order_[cursor_++]).transpose().template cast<T>();
    }
    return out;
  }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), eng_);
    cursor_ = 0;
  }

  const MatF* data_;
  int batch_;
  std::vector<Eigen::Index> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64 eng_;
};

struct StepRecord {
  std::int64_t step = 0;
  Phase phase;
  double weight = 0;
  double lr = 0;
  LossBreakdown loss;
};

using StepHook = std::function<void(const StepRecord&)>;

template <class T>
struct CheckpointBundle {
  S3vdcModel<T> model;
  Adam<T> optimizer;
  std::int64_t step = 0;
  RunConfig config;
};

template <class T>
struct TrainOutput {
  CheckpointBundle<T> bundle;
  GmmFitResult gmm_init;
  std::int64_t gmm_init_step = 0;  // the step the one-shot initialization ran after
  std::string run_dir;             // empty when the run was not persisted
};

template <class T>
void save_checkpoint_dir(CheckpointBundle<T>& b, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto params = b.model.parameters();
  save_named_params(dir + "/params.bin", params);
  b.optimizer.save(dir + "/adam.bin", params);
  nlohmann::json meta;
  meta["step"] = b.step;
  std::ofstream(dir + "/meta.json") << meta.dump(2) << "\n";
}

namespace detail_train {

inline nlohmann::json dataset_info(const Dataset& data) {
  nlohmann::json j;
  j["name"] = data.name;
  j["n"] = data.size();
  j["channels"] = data.shape.channels;
  j["height"] = data.shape.height;
  j["width"] = data.shape.width;
  j["mode"] = observation_model_name(data.mode);
  j["labeled"] = data.labeled();
  return j;
}

}  // namespace detail_train

// Runs the full schedule: gamma-training, the one-shot mini-batch GMM
// initialization after step t_gamma, then `periods` annealing + static phases.
// Checkpoints land at every phase boundary and at completion when run_dir is
// non-empty. A non-finite loss aborts with phase/step context.
template <class T>
TrainOutput<T> train(const RunConfig& cfg, const Dataset& data, const std::string& run_dir,
                     const StepHook& hook = {}, bool verbose = false) {
  cfg.validate();
  data.validate();
  require(data.size() >= 1, "train: dataset is empty");
  require(data.mode == cfg.mode, "train: dataset mode does not match config mode");

  const ArchSpec arch = ArchSpec::parse(cfg.arch);
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.seed);
  TrainOutput<T> out;
  out.run_dir = run_dir;
  out.bundle.config = cfg;
  out.bundle.model =
      S3vdcModel<T>::build(arch, data.shape, cfg.latent_dim, cfg.clusters, cfg.mode,
                           cfg.schedule.lambda, derive_seed(seed, 101));
  S3vdcModel<T>& model = out.bundle.model;
  auto params = model.parameters();
  Adam<T>& opt = out.bundle.optimizer;
  opt.init(params);

  Batcher<T> batcher(data.samples, cfg.batch_size,
                     std::mt19937_64(derive_seed(seed, 102)));
  auto corrupt_eng = std::mt19937_64(derive_seed(seed, 103));
  auto reparam_eng = std::mt19937_64(derive_seed(seed, 104));
  const std::uint64_t gmm_seed =
      cfg.gmm_seed != 0 ? static_cast<std::uint64_t>(cfg.gmm_seed) : derive_seed(seed, 105);

  const std::int64_t total = cfg.schedule.total_steps();
  const T logvar_lo = static_cast<T>(std::log(kVarFloor));
  const T logvar_hi = T(30);

  std::ofstream history;
  nlohmann::json manifest;
  std::vector<nlohmann::json> checkpoints;
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    history.open(run_dir + "/history.csv");
    if (!history) throw IoError("cannot open history file in " + run_dir);
    history << "step,phase,weight,recon,kl_cat,kl_gauss,total,lr\n";
    manifest["run_id"] = cfg.run_id();
    manifest["config"] = nlohmann::json::parse(cfg.to_json());
    manifest["dataset"] = detail_train::dataset_info(data);
    manifest["status"] = "running";
    std::ofstream(run_dir + "/manifest.json") << manifest.dump(2) << "\n";
  }

  auto write_manifest = [&](const std::string& status, std::int64_t final_step) {
    if (run_dir.empty()) return;
    manifest["status"] = status;
    manifest["final_step"] = final_step;
    manifest["checkpoints"] = checkpoints;
    std::ofstream(run_dir + "/manifest.json") << manifest.dump(2) << "\n";
  };

  const std::int64_t report_every = std::max<std::int64_t>(total / 20, 1);

  for (std::int64_t t = 1; t <= total; ++t) {
    const Phase phase = phase_at(t, cfg.schedule);
    const double weight = regularizer_weight_at(t, cfg.schedule);
    const double lr = learning_rate_at(t, total, cfg.initial_lr, cfg.terminal_lr);

    Mat<T> x = batcher.next();
    Mat<T> x_hat = corrupt(x, cfg.noise_std, corrupt_eng);
    Mat<T> eps = gaussian_matrix<T>(cfg.latent_dim, cfg.batch_size, reparam_eng);

    LossGraph<T> graph = build_loss_graph(model, x, x_hat, eps, weight);
    LossBreakdown loss = graph.breakdown(weight);
    if (!loss.finite()) {
      write_manifest("nan_abort", t);
      std::ostringstream msg;
      msg << "NaN loss at step " << t << " (phase " << phase_name(phase.kind)
          << ", weight " << weight << "): recon=" << loss.reconstruction
          << " kl_cat=" << loss.kl_categorical << " kl_gauss=" << loss.kl_gaussian;
      throw NanLossError(msg.str());
    }

    graph.tape.backward(graph.total);
    std::vector<Mat<T>> grads;
    grads.reserve(graph.param_nodes.size());
    for (int node : graph.param_nodes) grads.push_back(graph.tape.grad_of(node));
    opt.step(params, grads, lr);
    model.prior_logvars = model.prior_logvars.cwiseMax(logvar_lo).cwiseMin(logvar_hi);

    if (hook) hook(StepRecord{t, phase, weight, lr, loss});
    if (history.is_open()) {
      history << t << ',' << phase_name(phase.kind) << ',' << weight << ','
              << loss.reconstruction << ',' << loss.kl_categorical << ','
              << loss.kl_gaussian << ',' << loss.total << ',' << lr << '\n';
    }
    if (verbose && (t % report_every == 0 || t == 1))
      std::fprintf(stderr, "[train] step %lld/%lld phase=%s weight=%.3g total=%.4f\n",
                   static_cast<long long>(t), static_cast<long long>(total),
                   phase_name(phase.kind).c_str(), weight, loss.total);

    // one-shot GMM initialization between steps t_gamma and t_gamma + 1
    if (t == cfg.schedule.t_gamma) {
      const Eigen::Index subsample =
          static_cast<Eigen::Index>(cfg.gmm_k) * static_cast<Eigen::Index>(cfg.batch_size);
      MatD latents = collect_latents(model, data.samples, subsample, gmm_seed);
      GmmFitConfig gc;
      gc.components = cfg.clusters;
      gc.max_em_steps = static_cast<int>(cfg.gmm_max_em_steps);
      gc.convergence_tol = cfg.gmm_tol;
      gc.subsample_size = latents.rows();
      gc.seed = gmm_seed;
      gc.validate(model.latent_dim);
      out.gmm_init = fit_gmm_detailed(latents, gc);
      out.gmm_init_step = t;
      model.install_prior(out.gmm_init.prior.template cast<T>());
      if (verbose)
        std::fprintf(stderr, "[train] gmm init at step %lld: %d EM iterations on %lld points\n",
                     static_cast<long long>(t), out.gmm_init.iterations,
                     static_cast<long long>(latents.rows()));
    }

    const bool boundary = (t == total) || (phase_at(t + 1, cfg.schedule) != phase);
    if (boundary && !run_dir.empty()) {
      out.bundle.step = t;
      const std::string dir = run_dir + "/step-" + std::to_string(t);
      save_checkpoint_dir(out.bundle, dir);
      nlohmann::json c;
      c["step"] = t;
      c["phase"] = phase_name(phase.kind);
      checkpoints.push_back(c);
    }
  }

  out.bundle.step = total;
  write_manifest("completed", total);
  if (history.is_open()) history.close();
  return out;
}

// Rebuilds the model recorded in a run directory and loads its final weights.
template <class T>
CheckpointBundle<T> load_run(const std::string& run_dir) {
  std::ifstream in(run_dir + "/manifest.json");
  if (!in) throw IoError("no manifest.json in " + run_dir);
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json manifest = nlohmann::json::parse(ss.str());
  if (manifest.value("status", "") != "completed")
    throw IoError("run " + run_dir + " is not a completed run (status=" +
                  manifest.value("status", "missing") + ")");
  CheckpointBundle<T> b;
  b.config = RunConfig::from_json(manifest["config"].dump());
  b.step = manifest["final_step"].get<std::int64_t>();
  SampleShape shape{manifest["dataset"]["channels"].get<int>(),
                    manifest["dataset"]["height"].get<int>(),
                    manifest["dataset"]["width"].get<int>()};
  b.model = S3vdcModel<T>::build(ArchSpec::parse(b.config.arch), shape, b.config.latent_dim,
                                 b.config.clusters, b.config.mode, b.config.schedule.lambda,
                                 derive_seed(static_cast<std::uint64_t>(b.config.seed), 101));
  auto params = b.model.parameters();
  const std::string dir = run_dir + "/step-" + std::to_string(b.step);
  load_named_params(dir + "/params.bin", params);
  b.optimizer.init(params);
  b.optimizer.load(dir + "/adam.bin", params);
  return b;
}

}  // namespace s3vdc
