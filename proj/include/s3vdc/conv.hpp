// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>

#include "s3vdc/types.hpp"

namespace s3vdc {

// 2-D convolution geometry. Samples are flat columns with channel-major
// planes: index = c*H*W + y*W + x.
struct ConvGeom {
  int in_ch = 0, out_ch = 0;
  int in_h = 0, in_w = 0;
  int kernel = 1, stride = 1;
  bool same_padding = true;
  int out_h = 0, out_w = 0;
  int pad_top = 0, pad_left = 0;

  int input_size() const { return in_ch * in_h * in_w; }
  int output_size() const { return out_ch * out_h * out_w; }
  int patch_size() const { return in_ch * kernel * kernel; }

  static ConvGeom make(int in_ch, int out_ch, int in_h, int in_w, int kernel, int stride,
                       bool same_padding) {
    ConvGeom g;
    g.in_ch = in_ch;
    g.out_ch = out_ch;
    g.in_h = in_h;
    g.in_w = in_w;
    g.kernel = kernel;
    g.stride = stride;
    g.same_padding = same_padding;
    if (same_padding) {
      g.out_h = (in_h + stride - 1) / stride;
      g.out_w = (in_w + stride - 1) / stride;
      const int pad_h = std::max((g.out_h - 1) * stride + kernel - in_h, 0);
      const int pad_w = std::max((g.out_w - 1) * stride + kernel - in_w, 0);
      g.pad_top = pad_h / 2;
      g.pad_left = pad_w / 2;
    } else {
      require(in_h >= kernel && in_w >= kernel, "conv: kernel larger than input");
      g.out_h = (in_h - kernel) / stride + 1;
      g.out_w = (in_w - kernel) / stride + 1;
    }
    return g;
  }
};

// Patches of all samples side by side: rows enumerate (ic, ky, kx), columns
// enumerate (sample, oy, ox). Out-of-bounds taps read zero.
template <class T>
Mat<T> im2col(const Mat<T>& x, const ConvGeom& g) {
  const Eigen::Index samples = x.cols();
  const int plane = g.in_h * g.in_w;
  const int out_plane = g.out_h * g.out_w;
  Mat<T> cols = Mat<T>::Zero(g.patch_size(), samples * out_plane);
  for (Eigen::Index s = 0; s < samples; ++s) {
    const T* xp = x.col(s).data();
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        const Eigen::Index col = s * out_plane + oy * g.out_w + ox;
        T* cp = cols.col(col).data();
        for (int ic = 0; ic < g.in_ch; ++ic) {
          for (int ky = 0; ky < g.kernel; ++ky) {
            const int iy = oy * g.stride - g.pad_top + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            for (int kx = 0; kx < g.kernel; ++kx) {
              const int ix = ox * g.stride - g.pad_left + kx;
              if (ix < 0 || ix >= g.in_w) continue;
              cp[(ic * g.kernel + ky) * g.kernel + kx] = xp[ic * plane + iy * g.in_w + ix];
            }
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-add patch columns back into images.
template <class T>
Mat<T> col2im(const Mat<T>& cols, const ConvGeom& g, Eigen::Index samples) {
  const int plane = g.in_h * g.in_w;
  const int out_plane = g.out_h * g.out_w;
  Mat<T> x = Mat<T>::Zero(g.input_size(), samples);
  for (Eigen::Index s = 0; s < samples; ++s) {
    T* xp = x.col(s).data();
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        const Eigen::Index col = s * out_plane + oy * g.out_w + ox;
        const T* cp = cols.col(col).data();
        for (int ic = 0; ic < g.in_ch; ++ic) {
          for (int ky = 0; ky < g.kernel; ++ky) {
            const int iy = oy * g.stride - g.pad_top + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            for (int kx = 0; kx < g.kernel; ++kx) {
              const int ix = ox * g.stride - g.pad_left + kx;
              if (ix < 0 || ix >= g.in_w) continue;
              xp[ic * plane + iy * g.in_w + ix] += cp[(ic * g.kernel + ky) * g.kernel + kx];
            }
          }
        }
      }
    }
  }
  return x;
}

// out[c*ohw + p, s] = y(c, s*ohw + p): regroup GEMM output into flat samples.
template <class T>
Mat<T> conv_regroup_to_samples(const Mat<T>& y, int out_ch, int out_plane,
                               Eigen::Index samples) {
  Mat<T> out(static_cast<Eigen::Index>(out_ch) * out_plane, samples);
  for (Eigen::Index s = 0; s < samples; ++s)
    for (int c = 0; c < out_ch; ++c)
      out.col(s).segment(static_cast<Eigen::Index>(c) * out_plane, out_plane) =
          y.row(c).segment(s * out_plane, out_plane).transpose();
  return out;
}

// inverse of conv_regroup_to_samples
template <class T>
Mat<T> conv_regroup_to_gemm(const Mat<T>& out, int out_ch, int out_plane,
                            Eigen::Index samples) {
  Mat<T> y(out_ch, samples * out_plane);
  for (Eigen::Index s = 0; s < samples; ++s)
    for (int c = 0; c < out_ch; ++c)
      y.row(c).segment(s * out_plane, out_plane) =
          out.col(s).segment(static_cast<Eigen::Index>(c) * out_plane, out_plane).transpose();
  return y;
}

// y = W * im2col(x) + bias, batched over samples.
// W: out_ch x (in_ch k^2), bias: out_ch x 1, x: input_size x L.
template <class T>
Mat<T> conv2d_forward(const Mat<T>& w, const Mat<T>& bias, const Mat<T>& x, const ConvGeom& g,
                      Mat<T>* cols_out = nullptr) {
  require(x.rows() == g.input_size(), "conv2d: input size mismatch");
  require(w.rows() == g.out_ch && w.cols() == g.patch_size(), "conv2d: weight shape");
  Mat<T> cols = im2col(x, g);
  Mat<T> y = w * cols;  // out_ch x (L * out_plane)
  y.colwise() += bias.col(0);
  if (cols_out) *cols_out = std::move(cols);
  return conv_regroup_to_samples(y, g.out_ch, g.out_h * g.out_w, x.cols());
}

// Transposed convolution described by its mirror conv geometry `g`, which maps
// (g.in_*) -> (g.out_*). The transposed layer maps g.output_size() ->
// g.input_size(); its weight reuses the mirror conv's shape.
template <class T>
Mat<T> conv2d_transpose_forward(const Mat<T>& w, const Mat<T>& bias, const Mat<T>& x,
                                const ConvGeom& g) {
  require(x.rows() == g.output_size(), "conv2d_transpose: input size mismatch");
  Mat<T> y = conv_regroup_to_gemm(x, g.out_ch, g.out_h * g.out_w, x.cols());
  Mat<T> out = col2im<T>(w.transpose() * y, g, x.cols());
  for (int c = 0; c < g.in_ch; ++c)
    out.middleRows(static_cast<Eigen::Index>(c) * g.in_h * g.in_w, g.in_h * g.in_w).array() +=
        bias(c, 0);
  return out;
}

}  // namespace s3vdc
