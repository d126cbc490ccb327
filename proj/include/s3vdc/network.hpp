// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "s3vdc/autograd.hpp"
#include "s3vdc/conv.hpp"
#include "s3vdc/rng.hpp"
#include "s3vdc/types.hpp"

namespace s3vdc {

enum class Activation { None, Relu };

struct SampleShape {
  int channels = 1;
  int height = 1;
  int width = 1;  // for plain timeseries, width holds the step count

  int size() const { return channels * height * width; }
  bool operator==(const SampleShape&) const = default;
};

template <class T>
struct DenseLayer {
  Mat<T> w;  // out x in
  Mat<T> b;  // out x 1
  Activation act = Activation::None;
};

template <class T>
struct ConvLayer {
  ConvGeom geom;
  Mat<T> w;  // out_ch x (in_ch k^2)
  Mat<T> b;  // out_ch x 1
  Activation act = Activation::None;
};

// Transposed conv, described by the geometry of its mirror convolution; maps
// mirror.output_size() -> mirror.input_size().
template <class T>
struct ConvTransposeLayer {
  ConvGeom mirror;
  Mat<T> w;  // mirror.out_ch x (mirror.in_ch k^2)
  Mat<T> b;  // mirror.in_ch x 1
  Activation act = Activation::None;
};

template <class T>
using Layer = std::variant<DenseLayer<T>, ConvLayer<T>, ConvTransposeLayer<T>>;

template <class T>
struct Stack {
  std::vector<Layer<T>> layers;

  void collect_parameters(const std::string& prefix,
                          std::vector<std::pair<std::string, Mat<T>*>>& out) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string base = prefix + "." + std::to_string(i);
      std::visit(
          [&](auto& l) {
            out.emplace_back(base + ".w", &l.w);
            out.emplace_back(base + ".b", &l.b);
          },
          layers[i]);
    }
  }
};

// ---- tape nodes for conv layers --------------------------------------------

template <class T>
int conv2d_node(Tape<T>& t, const ConvGeom& g, int w, int b, int x) {
  auto cols = std::make_shared<Mat<T>>();
  Mat<T> out = conv2d_forward(t.val(w), t.val(b), t.val(x), g, cols.get());
  return t.custom(std::move(out), {w, b, x}, [g, w, b, x, cols](Tape<T>& t, int self) {
    const Mat<T>& gout = t.node(self).grad;
    const Eigen::Index samples = gout.cols();
    const int out_plane = g.out_h * g.out_w;
    Mat<T> dy = conv_regroup_to_gemm(gout, g.out_ch, out_plane, samples);
    t.acc(b, dy.rowwise().sum());
    if (t.requires_grad(w)) t.acc(w, dy * cols->transpose());
    if (t.requires_grad(x))
      t.acc(x, col2im<T>(Mat<T>(t.val(w).transpose() * dy), g, samples));
  });
}

template <class T>
int conv2d_transpose_node(Tape<T>& t, const ConvGeom& g, int w, int b, int x) {
  Mat<T> out = conv2d_transpose_forward(t.val(w), t.val(b), t.val(x), g);
  return t.custom(std::move(out), {w, b, x}, [g, w, b, x](Tape<T>& t, int self) {
    const Mat<T>& gout = t.node(self).grad;  // lives on the mirror-conv input side
    const Eigen::Index samples = gout.cols();
    const int out_plane = g.out_h * g.out_w;
    const int in_plane = g.in_h * g.in_w;
    Mat<T> db(g.in_ch, 1);
    for (int c = 0; c < g.in_ch; ++c)
      db(c, 0) = gout.middleRows(static_cast<Eigen::Index>(c) * in_plane, in_plane).sum();
    t.acc(b, db);
    Mat<T> dcols = im2col(gout, g);
    if (t.requires_grad(w))
      t.acc(w, conv_regroup_to_gemm(t.val(x), g.out_ch, out_plane, samples) *
                   dcols.transpose());
    if (t.requires_grad(x))
      t.acc(x, conv_regroup_to_samples(Mat<T>(t.val(w) * dcols), g.out_ch, out_plane, samples));
  });
}

template <class T>
int apply_activation(Tape<T>& t, Activation act, int x) {
  return act == Activation::Relu ? t.relu(x) : x;
}

// Runs the stack on the tape; creates one parameter leaf per tensor in
// collect_parameters order and appends the node ids to param_nodes.
template <class T>
int stack_forward(Tape<T>& t, const Stack<T>& stack, int x,
                  std::vector<int>* param_nodes = nullptr) {
  int h = x;
  for (const Layer<T>& layer : stack.layers) {
    if (const auto* d = std::get_if<DenseLayer<T>>(&layer)) {
      const int w = t.leaf(d->w, true);
      const int b = t.leaf(d->b, true);
      if (param_nodes) {
        param_nodes->push_back(w);
        param_nodes->push_back(b);
      }
      h = apply_activation(t, d->act, t.add_colvec(t.matmul(w, h), b));
    } else if (const auto* c = std::get_if<ConvLayer<T>>(&layer)) {
      const int w = t.leaf(c->w, true);
      const int b = t.leaf(c->b, true);
      if (param_nodes) {
        param_nodes->push_back(w);
        param_nodes->push_back(b);
      }
      h = apply_activation(t, c->act, conv2d_node(t, c->geom, w, b, h));
    } else {
      const auto* ct = std::get_if<ConvTransposeLayer<T>>(&layer);
      const int w = t.leaf(ct->w, true);
      const int b = t.leaf(ct->b, true);
      if (param_nodes) {
        param_nodes->push_back(w);
        param_nodes->push_back(b);
      }
      h = apply_activation(t, ct->act, conv2d_transpose_node(t, ct->mirror, w, b, h));
    }
  }
  return h;
}

// Plain forward pass without a tape (evaluation path).
template <class T>
Mat<T> stack_apply(const Stack<T>& stack, Mat<T> h) {
  for (const Layer<T>& layer : stack.layers) {
    if (const auto* d = std::get_if<DenseLayer<T>>(&layer)) {
      h = (d->w * h).colwise() + d->b.col(0);
      if (d->act == Activation::Relu) h = h.cwiseMax(T(0));
    } else if (const auto* c = std::get_if<ConvLayer<T>>(&layer)) {
      h = conv2d_forward(c->w, c->b, h, c->geom);
      if (c->act == Activation::Relu) h = h.cwiseMax(T(0));
    } else {
      const auto* ct = std::get_if<ConvTransposeLayer<T>>(&layer);
      h = conv2d_transpose_forward(ct->w, ct->b, h, ct->mirror);
      if (ct->act == Activation::Relu) h = h.cwiseMax(T(0));
    }
  }
  return h;
}

// ---- construction -----------------------------------------------------------

template <class T>
DenseLayer<T> make_dense(int in, int out, Activation act, std::mt19937_64& eng) {
  const double limit = std::sqrt(6.0 / (in + out));
  DenseLayer<T> l;
  l.w = uniform_matrix<T>(out, in, eng, -limit, limit);
  l.b = Mat<T>::Zero(out, 1);
  l.act = act;
  return l;
}

template <class T>
ConvLayer<T> make_conv(const ConvGeom& g, Activation act, std::mt19937_64& eng) {
  const double fan_in = g.patch_size();
  const double fan_out = g.out_ch * g.kernel * g.kernel;
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  ConvLayer<T> l;
  l.geom = g;
  l.w = uniform_matrix<T>(g.out_ch, g.patch_size(), eng, -limit, limit);
  l.b = Mat<T>::Zero(g.out_ch, 1);
  l.act = act;
  return l;
}

template <class T>
ConvTransposeLayer<T> make_conv_transpose(const ConvGeom& mirror, Activation act,
                                          std::mt19937_64& eng) {
  const double fan_in = mirror.out_ch * mirror.kernel * mirror.kernel;
  const double fan_out = mirror.patch_size();
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  ConvTransposeLayer<T> l;
  l.mirror = mirror;
  l.w = uniform_matrix<T>(mirror.out_ch, mirror.patch_size(), eng, -limit, limit);
  l.b = Mat<T>::Zero(mirror.in_ch, 1);
  l.act = act;
  return l;
}

// ---- architecture descriptors ----------------------------------------------

struct ArchSpec {
  enum class Kind { Mlp, Cnn };
  Kind kind = Kind::Mlp;
  std::vector<int> hidden;  // MLP hidden widths, encoder order

  static ArchSpec parse(const std::string& descriptor);
  std::string to_string() const;
};

inline ArchSpec ArchSpec::parse(const std::string& descriptor) {
  ArchSpec spec;
  if (descriptor == "cnn") {
    spec.kind = Kind::Cnn;
    return spec;
  }
  const std::string prefix = "mlp:";
  if (descriptor.rfind(prefix, 0) != 0)
    throw ConfigError("arch: expected \"cnn\" or \"mlp:h1,h2,...\", got \"" + descriptor + "\"");
  std::string rest = descriptor.substr(prefix.size());
  std::size_t pos = 0;
  while (pos < rest.size()) {
    std::size_t comma = rest.find(',', pos);
    if (comma == std::string::npos) comma = rest.size();
    const std::string tok = rest.substr(pos, comma - pos);
    try {
      const int width = std::stoi(tok);
      require(width >= 1, "");
      spec.hidden.push_back(width);
    } catch (...) {
      throw ConfigError("arch: bad hidden width \"" + tok + "\" in \"" + descriptor + "\"");
    }
    pos = comma + 1;
  }
  if (spec.hidden.empty())
    throw ConfigError("arch: mlp descriptor needs at least one hidden width");
  return spec;
}

inline std::string ArchSpec::to_string() const {
  if (kind == Kind::Cnn) return "cnn";
  std::string s = "mlp:";
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(hidden[i]);
  }
  return s;
}

// DCEC-style conv stack; fixed 28x28 input grid.
inline constexpr int kCnnGrid = 28;

inline std::vector<ConvGeom> cnn_encoder_geometry(const SampleShape& shape) {
  require(shape.height == kCnnGrid && shape.width == kCnnGrid,
          "cnn architecture requires a 28x28 input grid (resize the dataset)");
  std::vector<ConvGeom> gs;
  gs.push_back(ConvGeom::make(shape.channels, 32, 28, 28, 5, 2, true));   // -> 32@14x14
  gs.push_back(ConvGeom::make(32, 64, 14, 14, 5, 2, true));               // -> 64@7x7
  gs.push_back(ConvGeom::make(64, 128, 7, 7, 3, 2, false));               // -> 128@3x3
  return gs;
}

template <class T>
int encoder_trunk_dim(const ArchSpec& arch, const SampleShape& shape) {
  if (arch.kind == ArchSpec::Kind::Cnn) {
    auto gs = cnn_encoder_geometry(shape);
    return gs.back().output_size();
  }
  return arch.hidden.back();
}

template <class T>
Stack<T> build_encoder_trunk(const ArchSpec& arch, const SampleShape& shape,
                             std::mt19937_64& eng) {
  Stack<T> s;
  if (arch.kind == ArchSpec::Kind::Cnn) {
    for (const ConvGeom& g : cnn_encoder_geometry(shape))
      s.layers.push_back(make_conv<T>(g, Activation::Relu, eng));
    return s;
  }
  int in = shape.size();
  for (int width : arch.hidden) {
    s.layers.push_back(make_dense<T>(in, width, Activation::Relu, eng));
    in = width;
  }
  return s;
}

template <class T>
Stack<T> build_decoder(const ArchSpec& arch, const SampleShape& shape, int latent_dim,
                       std::mt19937_64& eng) {
  Stack<T> s;
  if (arch.kind == ArchSpec::Kind::Cnn) {
    auto gs = cnn_encoder_geometry(shape);
    s.layers.push_back(
        make_dense<T>(latent_dim, gs.back().output_size(), Activation::Relu, eng));
    s.layers.push_back(make_conv_transpose<T>(gs[2], Activation::Relu, eng));  // -> 64@7x7
    s.layers.push_back(make_conv_transpose<T>(gs[1], Activation::Relu, eng));  // -> 32@14x14
    s.layers.push_back(make_conv_transpose<T>(gs[0], Activation::None, eng));  // -> ch@28x28
    return s;
  }
  int in = latent_dim;
  for (auto it = arch.hidden.rbegin(); it != arch.hidden.rend(); ++it) {
    s.layers.push_back(make_dense<T>(in, *it, Activation::Relu, eng));
    in = *it;
  }
  s.layers.push_back(make_dense<T>(in, shape.size(), Activation::None, eng));
  return s;
}

}  // namespace s3vdc
