// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "s3vdc/model.hpp"
#include "s3vdc/network.hpp"
#include "s3vdc/types.hpp"

namespace s3vdc {

// Immutable after load; rows are flattened channel-major samples.
struct Dataset {
  MatF samples;  // N x D
  SampleShape shape;
  std::vector<int> labels;  // empty when unlabeled
  ObservationModel mode = ObservationModel::Bernoulli;
  std::string name;

  Eigen::Index size() const { return samples.rows(); }
  bool labeled() const { return !labels.empty(); }
  int label_count() const;
  void validate() const;
};

// IDX (big-endian) image/label files, the MNIST/Fashion container format.
MatF load_idx_images(const std::string& path);        // N x (rows*cols), scaled to [0,1]
std::vector<int> load_idx_labels(const std::string& path);

// name: "mnist" / "fashion" (IDX files under <data_root>/<name>/), a .s3t
// cache, or a .csv numeric file. CSV may carry a trailing "label" column;
// csv_shape fixes the per-sample (channels x steps) layout.
Dataset load_dataset(const std::string& name_or_path, ObservationModel mode,
                     const std::string& data_root = "data",
                     SampleShape csv_shape = SampleShape{});

// Cached preprocessed tensors: <path> holds the sample tensor,
// <path>.labels the labels when present.
void save_dataset_cache(const Dataset& ds, const std::string& path);
Dataset load_dataset_cache(const std::string& path, ObservationModel mode);

struct SyntheticParams {
  Eigen::Index n = 10000;
  int archetypes = 4;   // C*
  double noise = 0.4;   // multiplicative log-normal noise STD
  std::uint64_t seed = 0;
};

// King10M stand-in: 8-channel x 30-step non-negative count series drawn from
// per-archetype intensity profiles with multiplicative noise. Labeled, with
// archetype weights from a seeded Dirichlet.
Dataset synthetic_behavior(Eigen::Index n, int archetypes, std::uint64_t seed,
                           double noise = 0.4);

// The Dirichlet weights the generator would draw for this seed (oracle use).
VecD synthetic_behavior_weights(int archetypes, std::uint64_t seed);

// Disjoint seeded split; label-stratified when labels exist.
std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction,
                                  std::uint64_t seed);

// Bilinear resize of a single-channel plane.
MatF resize_bilinear(const MatF& plane, int out_h, int out_w);

// Per-channel zero-pad to a square grid and bilinear-resize to the model's
// 28x28 input grid; used when a timeseries dataset feeds the cnn architecture.
Dataset to_model_grid(const Dataset& ds);

// Gaussian-mode training preprocessing: per-feature zero-center and unit
// variance, matching the unit-variance observation model.
Dataset standardize(const Dataset& ds);

}  // namespace s3vdc
