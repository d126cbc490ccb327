// SPDX-License-Identifier: Apache-2.0
#include "s3vdc/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "s3vdc/rng.hpp"
#include "s3vdc/tensor_io.hpp"

namespace s3vdc {

namespace fs = std::filesystem;

int Dataset::label_count() const {
  int m = -1;
  for (int v : labels) m = std::max(m, v);
  return m + 1;
}

void Dataset::validate() const {
  require(samples.rows() >= 1, "dataset: empty");
  require(samples.cols() == shape.size(), "dataset: sample width does not match shape");
  if (!samples.allFinite()) throw NumericsError("dataset: non-finite sample values");
  if (mode == ObservationModel::Bernoulli)
    require((samples.array() >= 0.0f).all() && (samples.array() <= 1.0f).all(),
            "dataset: Bernoulli-mode values must lie in [0,1]");
  if (labeled()) {
    require(static_cast<Eigen::Index>(labels.size()) == samples.rows(),
            "dataset: label count does not match sample count");
    for (int v : labels) require(v >= 0, "dataset: negative label");
  }
}

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated IDX file: " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

MatF load_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open IDX file: " + path);
  const std::uint32_t magic = read_be32(in, path);
  if (magic != 0x00000803u)
    throw IoError("not an IDX image file (bad magic): " + path);
  const std::uint32_t n = read_be32(in, path);
  const std::uint32_t rows = read_be32(in, path);
  const std::uint32_t cols = read_be32(in, path);
  const std::size_t d = static_cast<std::size_t>(rows) * cols;
  std::vector<unsigned char> buf(d);
  MatF out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::uint32_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(d));
    if (!in) {
      std::ostringstream msg;
      msg << "truncated IDX payload at record " << i << ": " << path;
      throw IoError(msg.str());
    }
    for (std::size_t j = 0; j < d; ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<float>(buf[j]) / 255.0f;
  }
  return out;
}

std::vector<int> load_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open IDX file: " + path);
  const std::uint32_t magic = read_be32(in, path);
  if (magic != 0x00000801u)
    throw IoError("not an IDX label file (bad magic): " + path);
  const std::uint32_t n = read_be32(in, path);
  std::vector<unsigned char> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (!in) throw IoError("truncated IDX label payload: " + path);
  std::vector<int> out(n);
  for (std::uint32_t i = 0; i < n; ++i) out[i] = static_cast<int>(buf[i]);
  return out;
}

namespace {

Dataset load_idx_pair(const std::string& dir, const std::string& name) {
  // standard file names; train and test halves are concatenated
  const std::string train_x = dir + "/train-images-idx3-ubyte";
  const std::string train_y = dir + "/train-labels-idx1-ubyte";
  const std::string test_x = dir + "/t10k-images-idx3-ubyte";
  const std::string test_y = dir + "/t10k-labels-idx1-ubyte";
  if (!fs::exists(train_x))
    throw IoError("dataset \"" + name + "\" not found: missing " + train_x);
  MatF xa = load_idx_images(train_x);
  std::vector<int> ya = load_idx_labels(train_y);
  Dataset ds;
  ds.name = name;
  ds.mode = ObservationModel::Bernoulli;
  if (fs::exists(test_x)) {
    MatF xb = load_idx_images(test_x);
    std::vector<int> yb = load_idx_labels(test_y);
    require(xa.cols() == xb.cols(), "IDX train/test sample width mismatch");
    ds.samples.resize(xa.rows() + xb.rows(), xa.cols());
    ds.samples << xa, xb;
    ds.labels = std::move(ya);
    ds.labels.insert(ds.labels.end(), yb.begin(), yb.end());
  } else {
    ds.samples = std::move(xa);
    ds.labels = std::move(ya);
  }
  const int side = static_cast<int>(std::lround(std::sqrt(double(ds.samples.cols()))));
  require(side * side == ds.samples.cols(), "IDX images are not square");
  ds.shape = SampleShape{1, side, side};
  ds.validate();
  return ds;
}

Dataset load_csv(const std::string& path, ObservationModel mode, SampleShape shape) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open CSV file: " + path);
  std::vector<std::vector<float>> rows;
  std::vector<int> labels;
  bool has_label = false;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header.empty() && !cells.empty() &&
        !std::isdigit(static_cast<unsigned char>(cells[0][0])) && cells[0][0] != '-' &&
        cells[0][0] != '+' && cells[0][0] != '.') {
      header = cells;
      has_label = !header.empty() && header.back() == "label";
      continue;
    }
    std::vector<float> vals;
    vals.reserve(cells.size());
    for (const std::string& c : cells) {
      try {
        vals.push_back(std::stof(c));
      } catch (...) {
        std::ostringstream msg;
        msg << "CSV parse error at line " << line_no << " (\"" << c << "\"): " << path;
        throw IoError(msg.str());
      }
    }
    if (has_label) {
      labels.push_back(static_cast<int>(std::lround(vals.back())));
      vals.pop_back();
    }
    if (!rows.empty() && vals.size() != rows.front().size()) {
      std::ostringstream msg;
      msg << "CSV row width mismatch at line " << line_no << ": " << path;
      throw IoError(msg.str());
    }
    rows.push_back(std::move(vals));
  }
  require(!rows.empty(), "CSV file has no data rows: " + path);
  Dataset ds;
  ds.name = fs::path(path).stem().string();
  ds.mode = mode;
  ds.samples.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      ds.samples(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  ds.labels = std::move(labels);
  if (shape.size() > 1) {
    require(shape.size() == ds.samples.cols(), "csv: configured shape does not match row width");
    ds.shape = shape;
  } else {
    ds.shape = SampleShape{1, 1, static_cast<int>(ds.samples.cols())};
  }
  ds.validate();
  return ds;
}

}  // namespace

Dataset load_dataset(const std::string& name_or_path, ObservationModel mode,
                     const std::string& data_root, SampleShape csv_shape) {
  if (name_or_path == "mnist" || name_or_path == "fashion")
    return load_idx_pair(data_root + "/" + name_or_path, name_or_path);
  if (name_or_path.size() > 4 && name_or_path.ends_with(".s3t"))
    return load_dataset_cache(name_or_path, mode);
  if (name_or_path.size() > 4 && name_or_path.ends_with(".csv"))
    return load_csv(name_or_path, mode, csv_shape);
  throw IoError("unrecognized dataset layout: " + name_or_path +
                " (expected \"mnist\", \"fashion\", \"synthetic\", *.s3t or *.csv)");
}

void save_dataset_cache(const Dataset& ds, const std::string& path) {
  write_tensor<float>(path, ds.samples,
                      {static_cast<std::uint64_t>(ds.samples.rows()),
                       static_cast<std::uint64_t>(ds.shape.channels),
                       static_cast<std::uint64_t>(ds.shape.height),
                       static_cast<std::uint64_t>(ds.shape.width)});
  if (ds.labeled()) write_labels(path + ".labels", ds.labels);
}

Dataset load_dataset_cache(const std::string& path, ObservationModel mode) {
  Dataset ds;
  std::vector<std::uint64_t> dims;
  ds.samples = read_tensor<float>(path, &dims);
  require(dims.size() == 4, "dataset cache must be a rank-4 tensor");
  ds.shape = SampleShape{static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                         static_cast<int>(dims[3])};
  ds.mode = mode;
  ds.name = fs::path(path).stem().string();
  if (fs::exists(path + ".labels")) ds.labels = read_labels(path + ".labels");
  ds.validate();
  return ds;
}

VecD synthetic_behavior_weights(int archetypes, std::uint64_t seed) {
  auto eng = SeedStream(seed).fork(11).engine();
  std::gamma_distribution<double> gamma(5.0, 1.0);
  VecD w(archetypes);
  for (int a = 0; a < archetypes; ++a) w(a) = gamma(eng);
  return w / w.sum();
}

Dataset synthetic_behavior(Eigen::Index n, int archetypes, std::uint64_t seed, double noise) {
  require(archetypes >= 1, "synthetic_behavior: need at least one archetype");
  require(n >= archetypes, "synthetic_behavior: n must be at least the archetype count");
  constexpr int kChannels = 8;
  constexpr int kSteps = 30;

  SeedStream root(seed);
  VecD weights = synthetic_behavior_weights(archetypes, seed);

  // per-archetype channel intensities and temporal profiles; intensity
  // signatures are redrawn until all pairs are well separated in log space
  auto proto_eng = root.fork(12).engine();
  std::uniform_real_distribution<double> log_rate(std::log(1.0), std::log(30.0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  MatD log_base(archetypes, kChannels);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    for (int a = 0; a < archetypes; ++a)
      for (int ch = 0; ch < kChannels; ++ch) log_base(a, ch) = log_rate(proto_eng);
    double min_sep = std::numeric_limits<double>::infinity();
    for (int a = 0; a < archetypes; ++a)
      for (int b = a + 1; b < archetypes; ++b)
        min_sep = std::min(min_sep, (log_base.row(a) - log_base.row(b)).norm());
    if (archetypes == 1 || min_sep >= 2.5) break;
  }
  MatD base = log_base.array().exp().matrix();
  MatD phase(archetypes, kChannels), period(archetypes, kChannels);
  for (int a = 0; a < archetypes; ++a)
    for (int ch = 0; ch < kChannels; ++ch) {
      phase(a, ch) = unit(proto_eng) * 2.0 * M_PI;
      period(a, ch) = 7.0 + 21.0 * unit(proto_eng);
    }

  auto draw_eng = root.fork(13).engine();
  std::discrete_distribution<int> cat(weights.data(), weights.data() + archetypes);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::lognormal_distribution<double> activity(0.0, 0.15);

  Dataset ds;
  ds.name = "synthetic";
  ds.mode = ObservationModel::Gaussian;
  ds.shape = SampleShape{kChannels, 1, kSteps};
  ds.samples.resize(n, kChannels * kSteps);
  ds.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = cat(draw_eng);
    ds.labels[static_cast<std::size_t>(i)] = a;
    const double user_level = activity(draw_eng);
    for (int ch = 0; ch < kChannels; ++ch) {
      const double b = base(a, ch) * user_level;
      for (int t = 0; t < kSteps; ++t) {
        const double seasonal =
            1.0 + 0.45 * std::sin(2.0 * M_PI * t / period(a, ch) + phase(a, ch));
        const double intensity = b * seasonal * std::exp(noise * gauss(draw_eng));
        ds.samples(i, ch * kSteps + t) =
            static_cast<float>(std::max(0.0, std::round(intensity)));
      }
    }
  }
  ds.validate();
  return ds;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction,
                                  std::uint64_t seed) {
  require(test_fraction > 0 && test_fraction < 1, "split: test_fraction must lie in (0,1)");
  const Eigen::Index n = ds.size();
  auto eng = SeedStream(seed).fork(21).engine();

  std::vector<Eigen::Index> test_idx;
  if (ds.labeled()) {
    // per-class shuffles keep the split stratified
    const int k = ds.label_count();
    std::vector<std::vector<Eigen::Index>> by_class(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < n; ++i)
      by_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
    for (auto& members : by_class) {
      std::shuffle(members.begin(), members.end(), eng);
      const auto take = static_cast<std::size_t>(
          std::llround(test_fraction * static_cast<double>(members.size())));
      test_idx.insert(test_idx.end(), members.begin(), members.begin() + take);
    }
  } else {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), eng);
    const auto take =
        static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    test_idx.assign(order.begin(), order.begin() + take);
  }
  std::vector<char> in_test(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i : test_idx) in_test[static_cast<std::size_t>(i)] = 1;

  auto gather = [&](bool test_side) {
    Dataset out;
    out.shape = ds.shape;
    out.mode = ds.mode;
    out.name = ds.name + (test_side ? "/test" : "/train");
    Eigen::Index count = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (static_cast<bool>(in_test[static_cast<std::size_t>(i)]) == test_side) ++count;
    out.samples.resize(count, ds.samples.cols());
    if (ds.labeled()) out.labels.reserve(static_cast<std::size_t>(count));
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (static_cast<bool>(in_test[static_cast<std::size_t>(i)]) != test_side) continue;
      out.samples.row(r++) = ds.samples.row(i);
      if (ds.labeled()) out.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
    }
    return out;
  };
  return {gather(false), gather(true)};
}

MatF resize_bilinear(const MatF& plane, int out_h, int out_w) {
  const int in_h = static_cast<int>(plane.rows());
  const int in_w = static_cast<int>(plane.cols());
  require(in_h >= 1 && in_w >= 1 && out_h >= 1 && out_w >= 1, "resize_bilinear: bad sizes");
  MatF out(out_h, out_w);
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = std::max(0.0, (oy + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), in_h - 1);
    const int y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = std::max(0.0, (ox + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), in_w - 1);
      const int x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - x0;
      const double v = (1 - wy) * ((1 - wx) * plane(y0, x0) + wx * plane(y0, x1)) +
                       wy * ((1 - wx) * plane(y1, x0) + wx * plane(y1, x1));
      out(oy, ox) = static_cast<float>(v);
    }
  }
  return out;
}

Dataset to_model_grid(const Dataset& ds) {
  if (ds.shape.height == kCnnGrid && ds.shape.width == kCnnGrid) return ds;
  const int steps = ds.shape.height * ds.shape.width;
  const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(steps))));
  Dataset out;
  out.name = ds.name;
  out.mode = ds.mode;
  out.labels = ds.labels;
  out.shape = SampleShape{ds.shape.channels, kCnnGrid, kCnnGrid};
  out.samples.resize(ds.size(), out.shape.size());
  MatF padded = MatF::Zero(side, side);
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    for (int ch = 0; ch < ds.shape.channels; ++ch) {
      padded.setZero();
      for (int t = 0; t < steps; ++t)
        padded(t / side, t % side) = ds.samples(i, ch * steps + t);
      MatF grid = resize_bilinear(padded, kCnnGrid, kCnnGrid);
      for (int y = 0; y < kCnnGrid; ++y)
        for (int x = 0; x < kCnnGrid; ++x)
          out.samples(i, (ch * kCnnGrid + y) * kCnnGrid + x) = grid(y, x);
    }
  }
  out.validate();
  return out;
}

Dataset standardize(const Dataset& ds) {
  Dataset out = ds;
  Eigen::RowVectorXf mean = ds.samples.colwise().mean();
  Eigen::RowVectorXf stddev =
      ((ds.samples.rowwise() - mean).array().square().colwise().sum() /
       static_cast<float>(std::max<Eigen::Index>(ds.size() - 1, 1)))
          .sqrt()
          .matrix();
  stddev = stddev.cwiseMax(1e-6f);
  out.samples = (ds.samples.rowwise() - mean).array().rowwise() / stddev.array();
  out.mode = ObservationModel::Gaussian;
  return out;
}

}  // namespace s3vdc
