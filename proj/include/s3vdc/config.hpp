// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>

#include "s3vdc/data.hpp"
#include "s3vdc/model.hpp"
#include "s3vdc/schedule.hpp"

namespace s3vdc {

// One hierarchical key-value document holds every run parameter; unknown keys
// are rejected so a typo in a sweep cannot silently fall back to a default.
struct RunConfig {
  std::string dataset;            // "mnist" | "fashion" | "synthetic" | *.s3t | *.csv
  std::string data_root = "data";
  ObservationModel mode = ObservationModel::Bernoulli;
  std::string arch = "mlp:256,128";
  int batch_size = 0;
  int latent_dim = 0;
  int clusters = 0;
  double initial_lr = 0;
  double terminal_lr = 1e-6;
  double noise_std = 5e-9;
  std::int64_t seed = 1;
  double test_fraction = 0.1;
  TrainingSchedule schedule;

  std::int64_t gmm_k = 0;             // subsample = gmm_k * batch_size
  std::int64_t gmm_max_em_steps = 10000;
  double gmm_tol = 1e-3;
  std::int64_t gmm_seed = 0;          // 0: derived from the run seed

  SyntheticParams synthetic;          // used when dataset == "synthetic"
  int csv_channels = 0, csv_steps = 0;

  void validate() const;

  std::string to_toml() const;  // canonical serialization
  std::string to_json() const;  // manifest embedding
  static RunConfig from_toml_text(const std::string& text);
  static RunConfig from_toml_file(const std::string& path);
  static RunConfig from_json(const std::string& text);

  // FNV-1a of the canonical serialization: a stable content-derived run id.
  std::string run_id() const;
};

// Loads the configured dataset and applies the model-facing preprocessing:
// Gaussian-mode standardization and, for the cnn architecture, the
// pad-and-resize to the 28x28 input grid.
Dataset load_for_run(const RunConfig& cfg);

using TomlValue = std::variant<std::int64_t, double, bool, std::string>;

// Minimal TOML subset: comments, [section] headers, dotted keys, strings,
// integers, floats, booleans.
std::map<std::string, TomlValue> parse_toml(const std::string& text);

}  // namespace s3vdc
