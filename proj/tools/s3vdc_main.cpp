// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: train, eval, select-k, generate, embed, stability.

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <thread>

#include "s3vdc/config.hpp"
#include "s3vdc/metrics.hpp"
#include "s3vdc/plot.hpp"
#include "s3vdc/trainer.hpp"

namespace fs = std::filesystem;
using namespace s3vdc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNanAbort = 3;

RunConfig load_config(const std::string& path, std::int64_t seed_override) {
  RunConfig cfg = RunConfig::from_toml_file(path);
  if (seed_override >= 0) {
    cfg.seed = seed_override;
    cfg.validate();
  }
  return cfg;
}

std::string run_dir_for(const RunConfig& cfg, const std::string& out_root) {
  return out_root + "/run-" + cfg.run_id();
}

Dataset eval_slice(const Dataset& full, const RunConfig& cfg, const std::string& split_name) {
  if (split_name == "all") return full;
  auto [train_part, test_part] = split(full, cfg.test_fraction, static_cast<std::uint64_t>(cfg.seed));
  if (split_name == "train") return train_part;
  if (split_name == "test") return test_part;
  throw ConfigError("config: --split: must be one of test/train/all (got \"" + split_name + "\")");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!text.empty() && text.back() != '\n') out << "\n";
}

int cmd_train(const std::string& config_path, std::int64_t seed, const std::string& out_root,
              bool verbose) {
  RunConfig cfg = load_config(config_path, seed);
  Dataset full = load_for_run(cfg);
  auto [train_part, test_part] = split(full, cfg.test_fraction, static_cast<std::uint64_t>(cfg.seed));
  const std::string run_dir = run_dir_for(cfg, out_root);
  TrainOutput<float> out = train<float>(cfg, train_part, run_dir, {}, verbose);
  std::cout << out.run_dir << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& run_dir, const std::string& split_name, int importance_samples,
             const std::string& out_path) {
  CheckpointBundle<float> bundle = load_run<float>(run_dir);
  Dataset full = load_for_run(bundle.config);
  Dataset slice = eval_slice(full, bundle.config, split_name);
  MetricsReport report =
      evaluate_model(bundle.model, slice, importance_samples,
                     derive_seed(static_cast<std::uint64_t>(bundle.config.seed), 301));
  const std::string text = report.to_json();
  if (out_path.empty())
    std::cout << text << "\n";
  else
    write_text(out_path, text);
  return kExitOk;
}

int cmd_select_k(const std::string& config_path, const std::string& range, std::int64_t seed,
                 const std::string& out_path, bool verbose) {
  RunConfig base = load_config(config_path, seed);
  const auto sep = range.find("..");
  if (sep == std::string::npos)
    throw ConfigError("config: --k-range: expected a..b (got \"" + range + "\")");
  const int lo = std::stoi(range.substr(0, sep));
  const int hi = std::stoi(range.substr(sep + 2));
  if (lo < 2 || hi < lo) throw ConfigError("config: --k-range: need 2 <= a <= b");

  Dataset full = load_for_run(base);
  auto [train_part, test_part] =
      split(full, base.test_fraction, static_cast<std::uint64_t>(base.seed));

  struct Row {
    int c;
    double nll;
  };
  std::vector<Row> rows;
  std::mutex mu;
  std::vector<int> cs;
  for (int c = lo; c <= hi; ++c) cs.push_back(c);
  const unsigned workers =
      std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), 2));
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cs.size()) return;
      RunConfig cfg = base;
      cfg.clusters = cs[i];
      TrainOutput<float> out = train<float>(cfg, train_part, "", {}, false);
      const double nll =
          marginal_nll(out.bundle.model, test_part.samples, 128,
                       derive_seed(static_cast<std::uint64_t>(cfg.seed), 301));
      std::lock_guard<std::mutex> lock(mu);
      rows.push_back({cs[i], nll});
      if (verbose)
        std::fprintf(stderr, "[select-k] C=%d -ln p(x)=%.4f\n", cs[i], nll);
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.c < b.c; });

  int best = rows.front().c;
  double best_nll = rows.front().nll;
  for (const Row& r : rows)
    if (r.nll < best_nll) {
      best_nll = r.nll;
      best = r.c;
    }
  nlohmann::json j;
  j["sweep"] = nlohmann::json::array();
  for (const Row& r : rows) j["sweep"].push_back({{"clusters", r.c}, {"neg_log_px", r.nll}});
  j["argmin"] = best;
  std::cout << "C     -ln p(x)\n";
  for (const Row& r : rows)
    std::printf("%-5d %.4f%s\n", r.c, r.nll, r.c == best ? "  <- argmin" : "");
  if (!out_path.empty()) write_text(out_path, j.dump(2));
  return kExitOk;
}

int cmd_generate(const std::string& run_dir, int count, int cluster, std::int64_t seed,
                 const std::string& out_path) {
  CheckpointBundle<float> bundle = load_run<float>(run_dir);
  auto eng = SeedStream(seed >= 0 ? static_cast<std::uint64_t>(seed)
                                  : derive_seed(static_cast<std::uint64_t>(bundle.config.seed), 302))
                 .engine();
  MixturePrior<float> prior = bundle.model.prior();
  auto decode = [&](const MatF& z) { return bundle.model.decode_mean(z); };
  GeneratedBatch<float> batch = sample_generative(prior, decode, count, eng, cluster);
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot open for writing: " + out_path);
  out << "cluster";
  for (Eigen::Index j = 0; j < bundle.model.input_shape.size(); ++j) out << ",v" << j;
  out << "\n";
  for (Eigen::Index i = 0; i < batch.samples.rows(); ++i) {
    out << batch.clusters[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < batch.samples.cols(); ++j) out << ',' << batch.samples(i, j);
    out << "\n";
  }
  std::cout << out_path << "\n";
  return kExitOk;
}

int cmd_embed(const std::string& run_dir, const std::string& out_path, bool project,
              const std::string& plot_path) {
  CheckpointBundle<float> bundle = load_run<float>(run_dir);
  Dataset full = load_for_run(bundle.config);
  EmbeddingTable emb = embed_samples(bundle.model, full.samples);

  MatD proj;
  if (project) {
    // PCA to 2-D; a 1-D latent gets a zero second axis
    MatD centered = emb.z.rowwise() - emb.z.colwise().mean();
    proj.resize(emb.z.rows(), 2);
    if (emb.z.cols() == 1) {
      proj.col(0) = centered.col(0);
      proj.col(1).setZero();
    } else {
      MatD cov = centered.transpose() * centered / double(std::max<Eigen::Index>(emb.z.rows() - 1, 1));
      Eigen::SelfAdjointEigenSolver<MatD> eig(cov);
      MatD basis(emb.z.cols(), 2);
      basis.col(0) = eig.eigenvectors().col(emb.z.cols() - 1);
      basis.col(1) = eig.eigenvectors().col(emb.z.cols() - 2);
      proj = centered * basis;
    }
  }

  std::ofstream out(out_path);
  if (!out) throw IoError("cannot open for writing: " + out_path);
  out << "id";
  for (Eigen::Index j = 0; j < emb.z.cols(); ++j) out << ",z" << j;
  out << ",cluster,resp_max";
  if (project) out << ",p0,p1";
  out << "\n";
  for (Eigen::Index i = 0; i < emb.z.rows(); ++i) {
    out << i;
    for (Eigen::Index j = 0; j < emb.z.cols(); ++j) out << ',' << emb.z(i, j);
    out << ',' << emb.cluster[static_cast<std::size_t>(i)] << ',' << emb.resp_max(i);
    if (project) out << ',' << proj(i, 0) << ',' << proj(i, 1);
    out << "\n";
  }
  out.close();
  if (!plot_path.empty()) {
    require(project, "embed: --plot requires --project");
    write_scatter_png(plot_path, proj, emb.cluster);
  }
  std::cout << out_path << "\n";
  return kExitOk;
}

int cmd_stability(const std::string& config_path, int trials, std::int64_t seed,
                  std::int64_t seed_stride, const std::string& out_root,
                  const std::string& out_path, bool verbose) {
  require(trials >= 2, "stability: need at least 2 trials");
  RunConfig base = load_config(config_path, seed);
  Dataset full = load_for_run(base);
  auto [train_part, test_part] =
      split(full, base.test_fraction, static_cast<std::uint64_t>(base.seed));

  std::vector<MetricsReport> reports(static_cast<std::size_t>(trials));
  std::vector<std::string> failures(static_cast<std::size_t>(trials));
  std::atomic<int> next{0};
  const unsigned workers =
      std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), 2));
  auto worker = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= trials) return;
      RunConfig cfg = base;
      cfg.seed = base.seed + seed_stride * i;
      try {
        std::string dir;
        if (!out_root.empty()) dir = out_root + "/trial-" + std::to_string(i);
        TrainOutput<float> out = train<float>(cfg, train_part, dir, {}, false);
        // accuracy on the full dataset, the usual deep-clustering protocol
        MetricsReport r = evaluate_model(out.bundle.model, full, 0, 0);
        r.neg_log_px = marginal_nll(out.bundle.model, test_part.samples, 64,
                                    derive_seed(static_cast<std::uint64_t>(cfg.seed), 301));
        reports[static_cast<std::size_t>(i)] = r;
        if (verbose && r.accuracy)
          std::fprintf(stderr, "[stability] trial %d accuracy=%.4f\n", i, *r.accuracy);
      } catch (const NanLossError& e) {
        failures[static_cast<std::size_t>(i)] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  for (int i = 0; i < trials; ++i)
    if (!failures[static_cast<std::size_t>(i)].empty()) {
      std::cerr << "trial " << i << " aborted with NaN loss: "
                << failures[static_cast<std::size_t>(i)] << "\n";
      return kExitNanAbort;
    }

  auto stats = stability_report(reports);
  nlohmann::json j;
  j["trials"] = trials;
  for (const auto& [name, st] : stats) j[name] = {{"mean", st.mean}, {"std", st.stddev}};
  std::cout << "metric              mean      std\n";
  for (const auto& [name, st] : stats)
    std::printf("%-18s %.4f  %.4f\n", name.c_str(), st.mean, st.stddev);
  if (!out_path.empty()) write_text(out_path, j.dump(2));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"S3VDC: variational deep clustering with gamma-training, periodic "
               "beta-annealing, mini-batch GMM initialization, and the inverse "
               "min-max transform"};
  app.require_subcommand(1);

  std::string config_path, run_dir, out_path, out_root = "runs", split_name = "test";
  std::string range = "2..8", plot_path, stab_root;
  std::int64_t seed = -1, seed_stride = 1;
  int importance_samples = 128, count = 0, cluster = -1, trials = 5;
  bool verbose = false, project = false;

  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", config_path, "TOML config file")->required();
  train_cmd->add_option("--seed", seed, "override the config seed");
  train_cmd->add_option("--out", out_root, "directory for run outputs");
  train_cmd->add_flag("--verbose", verbose, "progress on stderr");

  auto* eval_cmd = app.add_subcommand("eval", "metrics report for a trained run");
  eval_cmd->add_option("--run", run_dir, "run directory")->required();
  eval_cmd->add_option("--split", split_name, "test|train|all (default test)");
  eval_cmd->add_option("--importance-samples", importance_samples,
                       "importance samples for -ln p(x)");
  eval_cmd->add_option("--out", out_path, "write the JSON report here");

  auto* select_cmd = app.add_subcommand("select-k", "sweep cluster counts by -ln p(x)");
  select_cmd->add_option("--config", config_path, "TOML config file")->required();
  select_cmd->add_option("--k-range", range, "cluster range a..b")->required();
  select_cmd->add_option("--seed", seed, "override the config seed");
  select_cmd->add_option("--out", out_path, "write the JSON sweep here");
  select_cmd->add_flag("--verbose", verbose, "progress on stderr");

  auto* gen_cmd = app.add_subcommand("generate", "sample from the generative model");
  gen_cmd->add_option("--run", run_dir, "run directory")->required();
  gen_cmd->add_option("--count", count, "number of samples")->required();
  gen_cmd->add_option("--cluster", cluster, "fix the cluster (default: sample from pi)");
  gen_cmd->add_option("--seed", seed, "sampling seed");
  gen_cmd->add_option("--out", out_path, "output CSV")->required();

  auto* embed_cmd = app.add_subcommand("embed", "export latent embeddings");
  embed_cmd->add_option("--run", run_dir, "run directory")->required();
  embed_cmd->add_option("--out", out_path, "output CSV")->required();
  embed_cmd->add_flag("--project", project, "append a PCA 2-D projection");
  embed_cmd->add_option("--plot", plot_path, "scatter PNG (requires --project)");

  auto* stab_cmd = app.add_subcommand("stability", "multi-seed stability report");
  stab_cmd->add_option("--config", config_path, "TOML config file")->required();
  stab_cmd->add_option("--trials", trials, "number of seeded trials");
  stab_cmd->add_option("--seed", seed, "base seed (trial i uses seed + stride * i)");
  stab_cmd->add_option("--seed-stride", seed_stride,
                       "spacing between trial seeds (0 repeats one seed)");
  stab_cmd->add_option("--out", out_path, "write the JSON report here");
  stab_cmd->add_option("--run-root", stab_root, "persist each trial under this directory");
  stab_cmd->add_flag("--verbose", verbose, "progress on stderr");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, seed, out_root, verbose);
    if (eval_cmd->parsed()) return cmd_eval(run_dir, split_name, importance_samples, out_path);
    if (select_cmd->parsed()) return cmd_select_k(config_path, range, seed, out_path, verbose);
    if (gen_cmd->parsed()) return cmd_generate(run_dir, count, cluster, seed, out_path);
    if (embed_cmd->parsed()) return cmd_embed(run_dir, out_path, project, plot_path);
    if (stab_cmd->parsed())
      return cmd_stability(config_path, trials, seed, seed_stride, stab_root, out_path,
                           verbose);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const NanLossError& e) {
    std::cerr << e.what() << "\n";
    return kExitNanAbort;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
