// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "s3vdc/types.hpp"

namespace s3vdc {

// Little-endian binary tensor: magic, dtype byte, rank, dims, row-major
// payload. dims[0] is the leading (sample) axis; a rank-k tensor is stored as
// a dims[0] x prod(dims[1:]) matrix.
inline constexpr char kTensorMagic[8] = {'S', '3', 'T', 'E', 'N', 'S', 'R', '1'};
inline constexpr char kParamMagic[8] = {'S', '3', 'P', 'A', 'R', 'M', '1', '\0'};

namespace detail {

template <class T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated file: " + path);
  return v;
}

inline std::uint8_t dtype_code_f32() { return 0; }
inline std::uint8_t dtype_code_f64() { return 1; }
inline std::uint8_t dtype_code_i32() { return 2; }

template <class T>
std::uint8_t dtype_code() {
  if constexpr (std::is_same_v<T, float>) return 0;
  else if constexpr (std::is_same_v<T, double>) return 1;
  else return 2;
}

}  // namespace detail

template <class T>
void write_tensor(const std::string& path, const Mat<T>& m,
                  std::vector<std::uint64_t> dims = {}) {
  if (dims.empty())
    dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  std::uint64_t flat = 1;
  for (std::size_t i = 1; i < dims.size(); ++i) flat *= dims[i];
  require(dims[0] == static_cast<std::uint64_t>(m.rows()) &&
              flat == static_cast<std::uint64_t>(m.cols()),
          "write_tensor: dims do not match matrix layout");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kTensorMagic, 8);
  detail::write_pod(out, detail::dtype_code<T>());
  detail::write_pod(out, static_cast<std::uint32_t>(dims.size()));
  for (std::uint64_t d : dims) detail::write_pod(out, d);
  // row-major payload
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const T v = m(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
  if (!out) throw IoError("write failed: " + path);
}

template <class T>
Mat<T> read_tensor(const std::string& path, std::vector<std::uint64_t>* dims_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kTensorMagic, 8) != 0)
    throw IoError("not a tensor file: " + path);
  const auto dtype = detail::read_pod<std::uint8_t>(in, path);
  if (dtype != detail::dtype_code<T>())
    throw IoError("tensor dtype mismatch in " + path);
  const auto rank = detail::read_pod<std::uint32_t>(in, path);
  require(rank >= 1 && rank <= 8, "read_tensor: unreasonable rank in " + path);
  std::vector<std::uint64_t> dims(rank);
  for (auto& d : dims) d = detail::read_pod<std::uint64_t>(in, path);
  std::uint64_t flat = 1;
  for (std::size_t i = 1; i < dims.size(); ++i) flat *= dims[i];
  Mat<T> m(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(rank == 1 ? 1 : flat));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      T v;
      in.read(reinterpret_cast<char*>(&v), sizeof(T));
      if (!in) throw IoError("truncated tensor payload: " + path);
      m(r, c) = v;
    }
  if (dims_out) *dims_out = std::move(dims);
  return m;
}

inline void write_labels(const std::string& path, const std::vector<int>& labels) {
  Mat<int> m(static_cast<Eigen::Index>(labels.size()), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = labels[i];
  write_tensor<int>(path, m, {static_cast<std::uint64_t>(labels.size())});
}

inline std::vector<int> read_labels(const std::string& path) {
  Mat<int> m = read_tensor<int>(path);
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, 0);
  return out;
}

// ---- named parameter blobs (checkpoints) ------------------------------------

template <class T>
void save_named_params(const std::string& path,
                       const std::vector<std::pair<std::string, Mat<T>*>>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kParamMagic, 8);
  detail::write_pod(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, mat] : params) {
    detail::write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod(out, detail::dtype_code<T>());
    detail::write_pod(out, static_cast<std::uint64_t>(mat->rows()));
    detail::write_pod(out, static_cast<std::uint64_t>(mat->cols()));
    for (Eigen::Index r = 0; r < mat->rows(); ++r)
      for (Eigen::Index c = 0; c < mat->cols(); ++c) {
        const T v = (*mat)(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof(T));
      }
  }
  if (!out) throw IoError("write failed: " + path);
}

// Loads into the given registry; every name must be present with matching
// shape, making silent architecture drift impossible.
template <class T>
void load_named_params(const std::string& path,
                       const std::vector<std::pair<std::string, Mat<T>*>>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kParamMagic, 8) != 0)
    throw IoError("not a parameter file: " + path);
  const auto count = detail::read_pod<std::uint32_t>(in, path);
  require(count == params.size(), "load_named_params: parameter count mismatch in " + path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError("truncated file: " + path);
    const auto dtype = detail::read_pod<std::uint8_t>(in, path);
    if (dtype != detail::dtype_code<T>()) throw IoError("param dtype mismatch in " + path);
    const auto rows = detail::read_pod<std::uint64_t>(in, path);
    const auto cols = detail::read_pod<std::uint64_t>(in, path);
    const auto& entry = params[i];
    if (entry.first != name)
      throw IoError("parameter order mismatch: expected " + entry.first + ", found " + name);
    require(entry.second->rows() == static_cast<Eigen::Index>(rows) &&
                entry.second->cols() == static_cast<Eigen::Index>(cols),
            "load_named_params: shape mismatch for " + name);
    for (Eigen::Index r = 0; r < entry.second->rows(); ++r)
      for (Eigen::Index c = 0; c < entry.second->cols(); ++c) {
        T v;
        in.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in) throw IoError("truncated param payload: " + path);
        (*entry.second)(r, c) = v;
      }
  }
}

}  // namespace s3vdc
