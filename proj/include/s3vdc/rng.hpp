// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "s3vdc/types.hpp"

namespace s3vdc {

// splitmix64; used to derive independent per-purpose seeds from one run seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Independent seed for a named purpose; decouples e.g. data shuffling from
// weight init so changing one consumer never shifts another's draws.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t state = seed ^ (tag * 0x9e3779b97f4a7c15ULL);
  return splitmix64(state);
}

// Named seed streams so that e.g. data shuffling and weight init stay
// decoupled: changing one consumer never shifts another's draws.
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() { return splitmix64(state_); }

  std::mt19937_64 engine() { return std::mt19937_64(next()); }

  // stable sub-stream for a named purpose
  SeedStream fork(std::uint64_t tag) const {
    std::uint64_t s = state_;
    std::uint64_t a = splitmix64(s);
    return SeedStream(a ^ (tag * 0x9e3779b97f4a7c15ULL));
  }

 private:
  std::uint64_t state_;
};

template <class T>
Mat<T> gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& eng,
                       double stddev = 1.0, double mean = 0.0) {
  std::normal_distribution<double> dist(mean, stddev);
  Mat<T> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<T>(dist(eng));
  return m;
}

template <class T>
Mat<T> uniform_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& eng,
                      double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Mat<T> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<T>(dist(eng));
  return m;
}

// Fisher-Yates prefix: first `count` entries of a random permutation of [0, n).
inline std::vector<Eigen::Index> sample_without_replacement(Eigen::Index n, Eigen::Index count,
                                                            std::mt19937_64& eng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (Eigen::Index i = 0; i < count && i < n - 1; ++i) {
    std::uniform_int_distribution<Eigen::Index> pick(i, n - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(eng))]);
  }
  idx.resize(static_cast<std::size_t>(std::min(count, n)));
  return idx;
}

}  // namespace s3vdc
