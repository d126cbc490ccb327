// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "s3vdc/core.hpp"
#include "s3vdc/mixture.hpp"
#include "s3vdc/types.hpp"

namespace s3vdc {

// Reverse-mode tape over Eigen matrices. Nodes are created in topological
// order by construction; backward() walks them in reverse. Convention for
// network activations: feature-major, one sample per column.
template <class T>
class Tape {
 public:
  using M = Mat<T>;

  struct Node {
    M val;
    M grad;  // empty until first accumulation
    std::function<void(Tape&, int)> back;
    bool requires_grad = false;
  };

  void reserve(std::size_t n) { nodes_.reserve(n); }
  std::size_t size() const { return nodes_.size(); }

  int leaf(M v, bool requires_grad = false) {
    Node n;
    n.val = std::move(v);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }
  int constant(M v) { return leaf(std::move(v), false); }

  const M& val(int id) const { return nodes_[static_cast<std::size_t>(id)].val; }
  bool requires_grad(int id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }

  // Gradient of the last backward() root w.r.t. node `id`; zeros if the node
  // was never reached.
  M grad_of(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) return M::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }

  void backward(int root) {
    Node& r = nodes_[static_cast<std::size_t>(root)];
    require(r.val.rows() == 1 && r.val.cols() == 1, "backward: root must be a scalar node");
    r.grad = M::Ones(1, 1);
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back && n.requires_grad && n.grad.size() != 0) n.back(*this, i);
    }
  }

  // ---- primitive ops -------------------------------------------------------

  int matmul(int a, int b) {
    require(val(a).cols() == val(b).rows(), "matmul: inner dimensions differ");
    return make(val(a) * val(b), {a, b}, [a, b](Tape& t, int self) {
      const M& g = t.node(self).grad;
      t.acc(a, g * t.val(b).transpose());
      t.acc(b, t.val(a).transpose() * g);
    });
  }

  int transpose(int a) {
    return make(val(a).transpose(), {a}, [a](Tape& t, int self) {
      t.acc(a, t.node(self).grad.transpose());
    });
  }

  int add(int a, int b) {
    require(same_shape(a, b), "add: shape mismatch");
    return make(val(a) + val(b), {a, b}, [a, b](Tape& t, int self) {
      const M& g = t.node(self).grad;
      t.acc(a, g);
      t.acc(b, g);
    });
  }

  int sub(int a, int b) {
    require(same_shape(a, b), "sub: shape mismatch");
    return make(val(a) - val(b), {a, b}, [a, b](Tape& t, int self) {
      const M& g = t.node(self).grad;
      t.acc(a, g);
      t.acc(b, -g);
    });
  }

  int mul(int a, int b) {
    require(same_shape(a, b), "mul: shape mismatch");
    return make(val(a).cwiseProduct(val(b)), {a, b}, [a, b](Tape& t, int self) {
      const M& g = t.node(self).grad;
      t.acc(a, g.cwiseProduct(t.val(b)));
      t.acc(b, g.cwiseProduct(t.val(a)));
    });
  }

  // a + v, v broadcast across columns (bias); v is rows(a) x 1
  int add_colvec(int a, int v) {
    require(val(v).cols() == 1 && val(v).rows() == val(a).rows(),
            "add_colvec: v must be a column vector matching rows of a");
    return make(val(a).colwise() + val(v).col(0), {a, v}, [a, v](Tape& t, int self) {
      const M& g = t.node(self).grad;
      t.acc(a, g);
      t.acc(v, g.rowwise().sum());
    });
  }

  int sub_colvec(int a, int v) {
    require(val(v).cols() == 1 && val(v).rows() == val(a).rows(),
            "sub_colvec: v must be a column vector matching rows of a");
    return make(val(a).colwise() - val(v).col(0), {a, v}, [a, v](Tape& t, int self) {
      const M& g = t.node(self).grad;
      t.acc(a, g);
      t.acc(v, -g.rowwise().sum());
    });
  }

  int scale(int a, double c) {
    return make(val(a) * T(c), {a}, [a, c](Tape& t, int self) {
      t.acc(a, t.node(self).grad * T(c));
    });
  }

  int exp(int a) {
    return make(val(a).array().exp().matrix(), {a}, [a](Tape& t, int self) {
      t.acc(a, t.node(self).grad.cwiseProduct(t.node(self).val));
    });
  }

  int log(int a) {
    return make(val(a).array().log().matrix(), {a}, [a](Tape& t, int self) {
      t.acc(a, t.node(self).grad.cwiseQuotient(t.val(a)));
    });
  }

  int relu(int a) {
    return make(val(a).cwiseMax(T(0)), {a}, [a](Tape& t, int self) {
      M mask = (t.val(a).array() > T(0)).template cast<T>();
      t.acc(a, t.node(self).grad.cwiseProduct(mask));
    });
  }

  int sigmoid(int a) {
    M s = (T(1) / (T(1) + (-val(a).array()).exp())).matrix();
    return make(std::move(s), {a}, [a](Tape& t, int self) {
      const M& s_ = t.node(self).val;
      M ds = s_.array() * (T(1) - s_.array());
      t.acc(a, t.node(self).grad.cwiseProduct(ds));
    });
  }

  // Gradient is zero where the input was clamped.
  int clamp(int a, double lo, double hi) {
    return make(val(a).cwiseMax(T(lo)).cwiseMin(T(hi)), {a}, [a, lo, hi](Tape& t, int self) {
      M mask = ((t.val(a).array() > T(lo)) && (t.val(a).array() < T(hi))).template cast<T>();
      t.acc(a, t.node(self).grad.cwiseProduct(mask));
    });
  }

  int sum_all(int a) {
    M s(1, 1);
    s(0, 0) = val(a).sum();
    return make(std::move(s), {a}, [a](Tape& t, int self) {
      const T g = t.node(self).grad(0, 0);
      t.acc(a, M::Constant(t.val(a).rows(), t.val(a).cols(), g));
    });
  }

  int mean_all(int a) { return scale(sum_all(a), 1.0 / static_cast<double>(val(a).size())); }

  // a - s and a / s with s a 1x1 node
  int sub_scalar(int a, int s) {
    require(val(s).size() == 1, "sub_scalar: s must be 1x1");
    return make((val(a).array() - val(s)(0, 0)).matrix(), {a, s}, [a, s](Tape& t, int self) {
      const M& g = t.node(self).grad;
      t.acc(a, g);
      M gs(1, 1);
      gs(0, 0) = -g.sum();
      t.acc(s, gs);
    });
  }

  int div_scalar(int a, int s) {
    require(val(s).size() == 1, "div_scalar: s must be 1x1");
    const T sv = val(s)(0, 0);
    return make(val(a) / sv, {a, s}, [a, s](Tape& t, int self) {
      const M& g = t.node(self).grad;
      const T sv_ = t.val(s)(0, 0);
      t.acc(a, g / sv_);
      M gs(1, 1);
      gs(0, 0) = -g.cwiseProduct(t.node(self).val).sum() / sv_;
      t.acc(s, gs);
    });
  }

  int reduce_min(int a) {
    Eigen::Index r, c;
    const T m = val(a).minCoeff(&r, &c);
    M s(1, 1);
    s(0, 0) = m;
    return make(std::move(s), {a}, [a, r, c](Tape& t, int self) {
      t.ensure_grad(a);
      if (t.node(a).requires_grad) t.node(a).grad(r, c) += t.node(self).grad(0, 0);
    });
  }

  int reduce_max(int a) {
    Eigen::Index r, c;
    const T m = val(a).maxCoeff(&r, &c);
    M s(1, 1);
    s(0, 0) = m;
    return make(std::move(s), {a}, [a, r, c](Tape& t, int self) {
      t.ensure_grad(a);
      if (t.node(a).requires_grad) t.node(a).grad(r, c) += t.node(self).grad(0, 0);
    });
  }

  // log-softmax independently over each column
  int log_softmax_cols(int a) {
    M ls = val(a);
    for (Eigen::Index j = 0; j < ls.cols(); ++j) {
      const T mx = ls.col(j).maxCoeff();
      const T lse = mx + std::log((ls.col(j).array() - mx).exp().sum());
      ls.col(j).array() -= lse;
    }
    return make(std::move(ls), {a}, [a](Tape& t, int self) {
      const M& g = t.node(self).grad;
      const M& ls_ = t.node(self).val;
      Arr<T> p = ls_.array().exp();
      ArrRow<T> colsum = g.colwise().sum().array();  // 1 x L
      t.acc(a, (g.array() - (p.rowwise() * colsum)).matrix());
    });
  }

  // ---- fused domain ops ----------------------------------------------------

  // V[c][l] = ln N(z_l | mu_c, diag(exp(logvar_c))).
  // z: d x L (feature-major), means/logvars: C x d. Output C x L.
  int gaussian_logdensity(int z, int means, int logvars) {
    const Eigen::Index d = val(z).rows();
    const Eigen::Index L = val(z).cols();
    const Eigen::Index C = val(means).rows();
    require(val(means).cols() == d && same_shape(means, logvars),
            "gaussian_logdensity: parameter shapes");
    M v(C, L);
    for (Eigen::Index c = 0; c < C; ++c) {
      ArrCol<T> inv_var = (-val(logvars).row(c).transpose().array()).exp();  // d x 1
      ArrCol<T> mu_c = val(means).row(c).transpose().array();
      const T log_norm = T(-0.5) * (T(d) * T(kLnTwoPi) + val(logvars).row(c).sum());
      Arr<T> diff = val(z).array().colwise() - mu_c;                          // d x L
      ArrRow<T> quad = (diff.square().colwise() * inv_var).colwise().sum();   // 1 x L
      v.row(c) = (quad * T(-0.5) + log_norm).matrix();
    }
    return make(std::move(v), {z, means, logvars}, [z, means, logvars](Tape& t, int self) {
      const M& g = t.node(self).grad;  // C x L
      const Eigen::Index C = t.val(means).rows();
      M dz = M::Zero(t.val(z).rows(), t.val(z).cols());
      M dmu = M::Zero(t.val(means).rows(), t.val(means).cols());
      M dlv = M::Zero(t.val(logvars).rows(), t.val(logvars).cols());
      for (Eigen::Index c = 0; c < C; ++c) {
        ArrCol<T> inv_var = (-t.val(logvars).row(c).transpose().array()).exp();  // d x 1
        ArrCol<T> mu_c = t.val(means).row(c).transpose().array();
        Arr<T> diff = t.val(z).array().colwise() - mu_c;  // d x L
        Arr<T> scaled = diff.colwise() * inv_var;         // d x L
        ArrRow<T> grow = g.row(c).array();                // 1 x L
        // dV/dz = -(z - mu)/var ; dV/dmu = +(z - mu)/var
        Arr<T> weighted = scaled.rowwise() * grow;
        dz.array() -= weighted;
        dmu.row(c) += weighted.rowwise().sum().transpose().matrix();
        // dV/dlogvar = -1/2 + diff^2/(2 var)
        Arr<T> dv = (diff * scaled * T(0.5)).rowwise() * grow;
        dlv.row(c) += (dv.rowwise().sum().transpose() - T(0.5) * grow.sum()).matrix();
      }
      t.acc(z, dz);
      t.acc(means, dmu);
      t.acc(logvars, dlv);
    });
  }

  // V~ = lambda (V - min V) / (max V - min V); the zero matrix (constant
  // gradient) when the range is degenerate. min/max are differentiated through
  // their attaining elements, matching what the value function computes.
  int inverse_min_max(int v, double lambda) {
    Eigen::Index rmin, cmin, rmax, cmax;
    const T lo = val(v).minCoeff(&rmin, &cmin);
    const T hi = val(v).maxCoeff(&rmax, &cmax);
    const bool degenerate = static_cast<double>(hi - lo) < kRangeEpsilon;
    M out = degenerate
                ? M::Zero(val(v).rows(), val(v).cols())
                : M(((val(v).array() - lo) * (T(lambda) / (hi - lo))).matrix());
    return make(std::move(out), {v},
                [v, lambda, degenerate, lo, hi, rmin, cmin, rmax, cmax](Tape& t, int self) {
                  if (degenerate) return;
                  const M& g = t.node(self).grad;
                  const T range = hi - lo;
                  const T k = T(lambda) / range;
                  const T gsum = g.sum();
                  const T gv = g.cwiseProduct(t.node(self).val).sum() / range;
                  M dv = g * k;
                  dv(rmin, cmin) += -k * gsum + gv;
                  dv(rmax, cmax) += -gv;
                  t.acc(v, dv);
                });
  }

  // K[l -> column, c -> row? No: output C x L] of per-sample KL(q(z|x) || N(mu_c, var_c)).
  // mu_z/logvar_z: d x L; means/logvars: C x d. Output C x L.
  int gaussian_kl_matrix(int mu_z, int logvar_z, int means, int logvars) {
    const Eigen::Index d = val(mu_z).rows();
    const Eigen::Index C = val(means).rows();
    const Eigen::Index L = val(mu_z).cols();
    require(same_shape(mu_z, logvar_z) && val(means).cols() == d && same_shape(means, logvars),
            "gaussian_kl_matrix: shapes");
    M k(C, L);
    Arr<T> var_z = val(logvar_z).array().exp();  // d x L
    for (Eigen::Index c = 0; c < C; ++c) {
      ArrCol<T> inv_var_c = (-val(logvars).row(c).transpose().array()).exp();  // d x 1
      ArrCol<T> mu_c = val(means).row(c).transpose().array();
      ArrCol<T> shift = val(logvars).row(c).transpose().array() - T(1);
      Arr<T> diff = val(mu_z).array().colwise() - mu_c;
      Arr<T> per_dim = (((var_z + diff.square()).colwise() * inv_var_c)  //
                        - val(logvar_z).array())
                           .colwise() +
                       shift;
      k.row(c) = (per_dim.colwise().sum() * T(0.5)).matrix();
    }
    return make(std::move(k), {mu_z, logvar_z, means, logvars},
                [mu_z, logvar_z, means, logvars](Tape& t, int self) {
                  const M& g = t.node(self).grad;  // C x L
                  const Eigen::Index C = t.val(means).rows();
                  Arr<T> var_z = t.val(logvar_z).array().exp();
                  M dmu_z = M::Zero(t.val(mu_z).rows(), t.val(mu_z).cols());
                  M dlv_z = M::Zero(t.val(logvar_z).rows(), t.val(logvar_z).cols());
                  M dmu_c = M::Zero(C, t.val(means).cols());
                  M dlv_c = M::Zero(C, t.val(logvars).cols());
                  for (Eigen::Index c = 0; c < C; ++c) {
                    ArrCol<T> inv_var_c = (-t.val(logvars).row(c).transpose().array()).exp();
                    ArrCol<T> mu_c = t.val(means).row(c).transpose().array();
                    Arr<T> diff = t.val(mu_z).array().colwise() - mu_c;
                    ArrRow<T> grow = g.row(c).array();  // 1 x L
                    Arr<T> dscaled = diff.colwise() * inv_var_c;
                    Arr<T> weighted = dscaled.rowwise() * grow;
                    dmu_z.array() += weighted;
                    dmu_c.row(c) -= weighted.rowwise().sum().transpose().matrix();
                    Arr<T> dlvz = (var_z.colwise() * inv_var_c - T(1)) * T(0.5);
                    dlv_z.array() += dlvz.rowwise() * grow;
                    Arr<T> dlvc =
                        (((var_z + diff.square()).colwise() * inv_var_c) * T(-1) + T(1)) * T(0.5);
                    dlv_c.row(c) += ((dlvc.rowwise() * grow).rowwise().sum()).transpose().matrix();
                  }
                  t.acc(mu_z, dmu_z);
                  t.acc(logvar_z, dlv_z);
                  t.acc(means, dmu_c);
                  t.acc(logvars, dlv_c);
                });
  }

  // Mean over columns (samples) of sum over rows of
  // x ln mu + (1 - x) ln(1 - mu), mu = clamp(sigmoid(logits), eps, 1-eps).
  int bernoulli_loglik(const M& x, int logits, double clamp_eps = 1e-7) {
    require(x.rows() == val(logits).rows() && x.cols() == val(logits).cols(),
            "bernoulli_loglik: x and logits shapes differ");
    require((x.array() >= T(0)).all() && (x.array() <= T(1)).all(),
            "bernoulli_loglik: x entries must lie in [0,1]");
    const T lo = T(clamp_eps);
    const T hi = T(1) - T(clamp_eps);
    Arr<T> mu = (T(1) / (T(1) + (-val(logits).array()).exp())).max(lo).min(hi);
    const Eigen::Index L = x.cols();
    M out(1, 1);
    out(0, 0) = (x.array() * mu.log() + (T(1) - x.array()) * (T(1) - mu).log()).sum() / T(L);
    M xc = x;  // keep target alive for backward
    return make(std::move(out), {logits},
                [logits, xc = std::move(xc), lo, hi](Tape& t, int self) {
                  const T g = t.node(self).grad(0, 0);
                  Arr<T> s = T(1) / (T(1) + (-t.val(logits).array()).exp());
                  Arr<T> mask = ((s > lo) && (s < hi)).template cast<T>();
                  const Eigen::Index L = xc.cols();
                  // d/dlogit [x ln mu + (1-x) ln(1-mu)] = x - sigmoid(logit) inside the clamp
                  t.acc(logits, ((xc.array() - s) * mask * (g / T(L))).matrix());
                });
  }

  // Mean over columns of sum over rows of ln N(x | mean, I).
  int gaussian_loglik_unit(const M& x, int mean) {
    require(x.rows() == val(mean).rows() && x.cols() == val(mean).cols(),
            "gaussian_loglik_unit: x and mean shapes differ");
    const Eigen::Index L = x.cols();
    Arr<T> diff = x.array() - val(mean).array();
    M out(1, 1);
    out(0, 0) =
        (T(-0.5) * (diff.square() + T(kLnTwoPi))).sum() / T(L);
    M xc = x;
    return make(std::move(out), {mean}, [mean, xc = std::move(xc)](Tape& t, int self) {
      const T g = t.node(self).grad(0, 0);
      const Eigen::Index L = xc.cols();
      t.acc(mean, ((xc.array() - t.val(mean).array()) * (g / T(L))).matrix());
    });
  }

  // Custom fused node; `back` must accumulate into the listed parents.
  int custom(M value, std::initializer_list<int> parents,
             std::function<void(Tape&, int)> back) {
    return make(std::move(value), parents, std::move(back));
  }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

  void acc(int id, const M& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

 private:
  void ensure_grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.requires_grad && n.grad.size() == 0) n.grad = M::Zero(n.val.rows(), n.val.cols());
  }

  bool same_shape(int a, int b) const {
    return val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols();
  }

  int make(M v, std::initializer_list<int> parents, std::function<void(Tape&, int)> back) {
    Node n;
    n.val = std::move(v);
    for (int p : parents)
      if (nodes_[static_cast<std::size_t>(p)].requires_grad) n.requires_grad = true;
    if (n.requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
};

}  // namespace s3vdc
