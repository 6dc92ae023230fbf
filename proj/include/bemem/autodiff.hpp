#pragma once

// Reverse-mode gradient tape over dense matrices.
//
// Every op appends one node holding its value and a closure that pushes the
// node's gradient into its inputs. The denoiser topology is static, so a
// linear tape walked backwards is all that is needed. Nodes whose inputs are
// all constants carry no gradient and are skipped during the walk.

#include "bemem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace bemem {

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<Scalar>& value() const { return tape->value(id); }
  const Matrix<Scalar>& grad() const { return tape->grad(id); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(Tape&, std::size_t)>;

  Var<Scalar> constant(Mat v) { return push(std::move(v), false, "const", nullptr); }
  Var<Scalar> variable(Mat v) { return push(std::move(v), true, "leaf", nullptr); }

  Var<Scalar> push(Mat v, bool needs_grad, const char* op, Backward back) {
    nodes_.push_back(Node{std::move(v), Mat(), needs_grad, op, std::move(back)});
    return Var<Scalar>{this, nodes_.size() - 1};
  }

  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }
  Mat& grad_mut(std::size_t id) { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  const char* op(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  /// Populates the gradient of every node reachable from a 1x1 root.
  void backward(const Var<Scalar>& root) {
    const Mat& rv = value(root.id);
    if (rv.rows() != 1 || rv.cols() != 1)
      throw ShapeError("backward: root must be scalar, got " + shape_str(rv.rows(), rv.cols()));
    for (std::size_t i = 0; i <= root.id; ++i) {
      Node& n = nodes_[i];
      if (n.needs_grad) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    }
    if (!nodes_[root.id].needs_grad) return;
    nodes_[root.id].grad(0, 0) = Scalar(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.backward) n.backward(*this, i);
    }
    for (std::size_t i = 0; i <= root.id; ++i)
      if (nodes_[i].needs_grad) require_finite(nodes_[i].grad, std::string("gradient of ") + nodes_[i].op);
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad;
    const char* op;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
bool any_grad(std::initializer_list<Var<Scalar>> vs) {
  for (const auto& v : vs)
    if (v.tape->needs_grad(v.id)) return true;
  return false;
}

template <typename Scalar>
void accumulate(Tape<Scalar>& t, std::size_t id, const Matrix<Scalar>& g) {
  if (t.needs_grad(id)) t.grad_mut(id) += g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and broadcast arithmetic

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.value(), b.value(), "add");
  auto& t = *a.tape;
  return t.push(a.value() + b.value(), detail::any_grad({a, b}), "add",
                [ia = a.id, ib = b.id](Tape<Scalar>& t, std::size_t self) {
                  detail::accumulate(t, ia, t.grad(self));
                  detail::accumulate(t, ib, t.grad(self));
                });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  auto& t = *a.tape;
  return t.push(a.value() - b.value(), detail::any_grad({a, b}), "sub",
                [ia = a.id, ib = b.id](Tape<Scalar>& t, std::size_t self) {
                  detail::accumulate(t, ia, t.grad(self));
                  if (t.needs_grad(ib)) t.grad_mut(ib) -= t.grad(self);
                });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  auto& t = *a.tape;
  return t.push(a.value() * s, detail::any_grad({a}), "scale",
                [ia = a.id, s](Tape<Scalar>& t, std::size_t self) {
                  if (t.needs_grad(ia)) t.grad_mut(ia) += t.grad(self) * s;
                });
}

/// Elementwise product with a constant (non-differentiated) weight matrix.
template <typename Scalar>
Var<Scalar> mul_const(const Var<Scalar>& a, const Matrix<Scalar>& w) {
  require_same_shape(a.value(), w, "mul_const");
  auto& t = *a.tape;
  return t.push(a.value().cwiseProduct(w), detail::any_grad({a}), "mul_const",
                [ia = a.id, w](Tape<Scalar>& t, std::size_t self) {
                  if (t.needs_grad(ia)) t.grad_mut(ia) += t.grad(self).cwiseProduct(w);
                });
}

/// a[i,:] + row[0,:] for every row i.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw ShapeError("add_row: expected [1x" + std::to_string(a.cols()) + "], got " +
                     shape_str(row.rows(), row.cols()));
  auto& t = *a.tape;
  Matrix<Scalar> out = a.value();
  out.rowwise() += row.value().row(0);
  return t.push(std::move(out), detail::any_grad({a, row}), "add_row",
                [ia = a.id, ir = row.id](Tape<Scalar>& t, std::size_t self) {
                  const auto& g = t.grad(self);
                  detail::accumulate(t, ia, g);
                  if (t.needs_grad(ir)) t.grad_mut(ir) += g.colwise().sum();
                });
}

/// a[i,:] + tile[i % P,:] where tile has P rows. Used for positional tables
/// repeated across a batch of stacked items.
template <typename Scalar>
Var<Scalar> add_tiled(const Var<Scalar>& a, const Var<Scalar>& tile) {
  const Index p = tile.rows();
  if (p == 0 || a.rows() % p != 0 || tile.cols() != a.cols())
    throw ShapeError("add_tiled: " + shape_str(a.rows(), a.cols()) + " vs tile " +
                     shape_str(tile.rows(), tile.cols()));
  auto& t = *a.tape;
  Matrix<Scalar> out = a.value();
  for (Index g = 0; g < a.rows() / p; ++g) out.middleRows(g * p, p) += tile.value();
  return t.push(std::move(out), detail::any_grad({a, tile}), "add_tiled",
                [ia = a.id, it = tile.id, p](Tape<Scalar>& t, std::size_t self) {
                  const auto& g = t.grad(self);
                  detail::accumulate(t, ia, g);
                  if (t.needs_grad(it)) {
                    auto& gt = t.grad_mut(it);
                    for (Index k = 0; k < g.rows() / p; ++k) gt += g.middleRows(k * p, p);
                  }
                });
}

/// a[i,:] + per_group[i / rows_per_group,:].
template <typename Scalar>
Var<Scalar> add_group(const Var<Scalar>& a, const Var<Scalar>& per_group) {
  const Index groups = per_group.rows();
  if (groups == 0 || a.rows() % groups != 0 || per_group.cols() != a.cols())
    throw ShapeError("add_group: " + shape_str(a.rows(), a.cols()) + " vs " +
                     shape_str(per_group.rows(), per_group.cols()));
  const Index rpg = a.rows() / groups;
  auto& t = *a.tape;
  Matrix<Scalar> out = a.value();
  for (Index g = 0; g < groups; ++g)
    out.middleRows(g * rpg, rpg).rowwise() += per_group.value().row(g);
  return t.push(std::move(out), detail::any_grad({a, per_group}), "add_group",
                [ia = a.id, ip = per_group.id, rpg, groups](Tape<Scalar>& t, std::size_t self) {
                  const auto& g = t.grad(self);
                  detail::accumulate(t, ia, g);
                  if (t.needs_grad(ip)) {
                    auto& gp = t.grad_mut(ip);
                    for (Index k = 0; k < groups; ++k)
                      gp.row(k) += g.middleRows(k * rpg, rpg).colwise().sum();
                  }
                });
}

// ---------------------------------------------------------------------------
// products

/// With row_block > 0 the forward product is evaluated one block of rows at a
/// time, so each block's result does not depend on how many blocks are stacked.
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b, Index row_block = 0) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner extents differ " + shape_str(a.rows(), a.cols()) + " x " +
                     shape_str(b.rows(), b.cols()));
  if (row_block > 0 && a.rows() % row_block != 0)
    throw ShapeError("matmul: " + std::to_string(a.rows()) + " rows not divisible into blocks of " +
                     std::to_string(row_block));
  auto& t = *a.tape;
  Matrix<Scalar> out(a.rows(), b.cols());
  if (row_block > 0) {
    for (Index r = 0; r < a.rows(); r += row_block)
      out.middleRows(r, row_block).noalias() = a.value().middleRows(r, row_block) * b.value();
  } else {
    out.noalias() = a.value() * b.value();
  }
  return t.push(std::move(out), detail::any_grad({a, b}), "matmul",
                [ia = a.id, ib = b.id](Tape<Scalar>& t, std::size_t self) {
                  const auto& g = t.grad(self);
                  if (t.needs_grad(ia)) t.grad_mut(ia).noalias() += g * t.value(ib).transpose();
                  if (t.needs_grad(ib)) t.grad_mut(ib).noalias() += t.value(ia).transpose() * g;
                });
}

template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return matmul(a, b); }

/// x * w + b with w stored [in x out] and b [1 x out].
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& b, Index row_block = 0) {
  return add_row(matmul(x, w, row_block), b);
}

/// Sparse row mixing: out[r,:] = sum of coef * x[in,:] over terms with out == r.
struct RowTerm {
  Index out;
  Index in;
  double coef;
};

template <typename Scalar>
Var<Scalar> combine_rows(const Var<Scalar>& x, std::vector<RowTerm> terms, Index out_rows) {
  auto& t = *x.tape;
  Matrix<Scalar> out = Matrix<Scalar>::Zero(out_rows, x.cols());
  for (const auto& term : terms) {
    if (term.out < 0 || term.out >= out_rows || term.in < 0 || term.in >= x.rows())
      throw ShapeError("combine_rows: term index out of range");
    out.row(term.out) += x.value().row(term.in) * static_cast<Scalar>(term.coef);
  }
  return t.push(std::move(out), detail::any_grad({x}), "combine_rows",
                [ix = x.id, terms = std::move(terms)](Tape<Scalar>& t, std::size_t self) {
                  if (!t.needs_grad(ix)) return;
                  const auto& g = t.grad(self);
                  auto& gx = t.grad_mut(ix);
                  for (const auto& term : terms)
                    gx.row(term.in) += g.row(term.out) * static_cast<Scalar>(term.coef);
                });
}

// ---------------------------------------------------------------------------
// nonlinearities and normalization

template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  auto& t = *a.tape;
  const auto& x = a.value();
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = static_cast<Scalar>(0.5 * v * (1.0 + std::tanh(k * (v + 0.044715 * v * v * v))));
  }
  return t.push(std::move(out), detail::any_grad({a}), "gelu",
                [ia = a.id](Tape<Scalar>& t, std::size_t self) {
                  if (!t.needs_grad(ia)) return;
                  const auto& x = t.value(ia);
                  const auto& g = t.grad(self);
                  auto& gx = t.grad_mut(ia);
                  for (Index i = 0; i < x.size(); ++i) {
                    const double v = x.data()[i];
                    const double u = k * (v + 0.044715 * v * v * v);
                    const double th = std::tanh(u);
                    const double du = k * (1.0 + 3.0 * 0.044715 * v * v);
                    const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
                    gx.data()[i] += static_cast<Scalar>(g.data()[i] * d);
                  }
                });
}

template <typename Scalar>
Var<Scalar> silu(const Var<Scalar>& a) {
  auto& t = *a.tape;
  const auto& x = a.value();
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = static_cast<Scalar>(v / (1.0 + std::exp(-v)));
  }
  return t.push(std::move(out), detail::any_grad({a}), "silu",
                [ia = a.id](Tape<Scalar>& t, std::size_t self) {
                  if (!t.needs_grad(ia)) return;
                  const auto& x = t.value(ia);
                  const auto& g = t.grad(self);
                  auto& gx = t.grad_mut(ia);
                  for (Index i = 0; i < x.size(); ++i) {
                    const double v = x.data()[i];
                    const double s = 1.0 / (1.0 + std::exp(-v));
                    gx.data()[i] += static_cast<Scalar>(g.data()[i] * s * (1.0 + v * (1.0 - s)));
                  }
                });
}

/// Row softmax stabilised by the row maximum; denominators accumulate in double.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax_rows_value(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mx = static_cast<double>(x.row(i).maxCoeff());
    double z = 0.0;
    for (Index j = 0; j < x.cols(); ++j) {
      const double e = std::exp(static_cast<double>(x(i, j)) - mx);
      out(i, j) = static_cast<Scalar>(e);
      z += e;
    }
    for (Index j = 0; j < x.cols(); ++j) out(i, j) = static_cast<Scalar>(out(i, j) / z);
  }
  return out;
}

namespace detail {

// dS = W o (dW - rowsum(dW o W))
template <typename Scalar>
Matrix<Scalar> softmax_rows_backward(const Matrix<Scalar>& w, const Matrix<Scalar>& dw) {
  Matrix<Scalar> ds(w.rows(), w.cols());
  for (Index i = 0; i < w.rows(); ++i) {
    double dot = 0.0;
    for (Index j = 0; j < w.cols(); ++j) dot += static_cast<double>(dw(i, j)) * w(i, j);
    for (Index j = 0; j < w.cols(); ++j)
      ds(i, j) = static_cast<Scalar>(w(i, j) * (static_cast<double>(dw(i, j)) - dot));
  }
  return ds;
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
  auto& t = *a.tape;
  return t.push(softmax_rows_value(a.value()), detail::any_grad({a}), "softmax_rows",
                [ia = a.id](Tape<Scalar>& t, std::size_t self) {
                  if (t.needs_grad(ia))
                    t.grad_mut(ia) += detail::softmax_rows_backward(t.value(self), t.grad(self));
                });
}

template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& a, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       double eps = 1e-5) {
  const Index n = a.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n)
    throw ShapeError("layer_norm: affine parameters must be [1x" + std::to_string(n) + "]");
  auto& t = *a.tape;
  const auto& x = a.value();
  Matrix<Scalar> xhat(x.rows(), n);
  std::vector<double> inv_std(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) {
    double mu = 0.0;
    for (Index j = 0; j < n; ++j) mu += x(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (Index j = 0; j < n; ++j) {
      const double d = x(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (Index j = 0; j < n; ++j) xhat(i, j) = static_cast<Scalar>((x(i, j) - mu) * is);
  }
  Matrix<Scalar> out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return t.push(std::move(out), detail::any_grad({a, gamma, beta}), "layer_norm",
                [ia = a.id, ig = gamma.id, ib = beta.id, xhat = std::move(xhat),
                 inv_std = std::move(inv_std), n](Tape<Scalar>& t, std::size_t self) {
                  const auto& g = t.grad(self);
                  if (t.needs_grad(ig)) t.grad_mut(ig) += g.cwiseProduct(xhat).colwise().sum();
                  if (t.needs_grad(ib)) t.grad_mut(ib) += g.colwise().sum();
                  if (!t.needs_grad(ia)) return;
                  const auto& gam = t.value(ig);
                  auto& gx = t.grad_mut(ia);
                  for (Index i = 0; i < g.rows(); ++i) {
                    double m1 = 0.0, m2 = 0.0;
                    for (Index j = 0; j < n; ++j) {
                      const double dxh = static_cast<double>(g(i, j)) * gam(0, j);
                      m1 += dxh;
                      m2 += dxh * xhat(i, j);
                    }
                    m1 /= static_cast<double>(n);
                    m2 /= static_cast<double>(n);
                    const double is = inv_std[static_cast<std::size_t>(i)];
                    for (Index j = 0; j < n; ++j) {
                      const double dxh = static_cast<double>(g(i, j)) * gam(0, j);
                      gx(i, j) += static_cast<Scalar>(is * (dxh - m1 - xhat(i, j) * m2));
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// attention

/// Output of a batched multi-head attention. `weights` stacks every
/// [queries x keys] probability block, row index ((group * heads + head) *
/// queries + query).
template <typename Scalar>
struct AttentionOutput {
  Var<Scalar> out;
  Matrix<Scalar> weights;
};

/// Multi-head scaled dot-product attention over `groups` independent items
/// stacked along rows. q: [groups*P x D], k and v: [groups*L x D]. Heads split
/// the D columns evenly.
template <typename Scalar>
AttentionOutput<Scalar> attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                                  Index groups, Index heads) {
  const Index d = q.cols();
  if (groups <= 0 || heads <= 0 || d % heads != 0 || k.cols() != d || v.cols() != d ||
      q.rows() % groups != 0 || k.rows() % groups != 0 || k.rows() != v.rows())
    throw ShapeError("attention: incompatible shapes q" + shape_str(q.rows(), q.cols()) + " k" +
                     shape_str(k.rows(), k.cols()) + " v" + shape_str(v.rows(), v.cols()));
  const Index p = q.rows() / groups;
  const Index l = k.rows() / groups;
  const Index dh = d / heads;
  const Scalar sc = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  Matrix<Scalar> weights(groups * heads * p, l);
  Matrix<Scalar> out(q.rows(), d);
  for (Index g = 0; g < groups; ++g)
    for (Index h = 0; h < heads; ++h) {
      Matrix<Scalar> s = qv.block(g * p, h * dh, p, dh) * kv.block(g * l, h * dh, l, dh).transpose();
      s *= sc;
      Matrix<Scalar> w = softmax_rows_value(s);
      out.block(g * p, h * dh, p, dh).noalias() = w * vv.block(g * l, h * dh, l, dh);
      weights.middleRows((g * heads + h) * p, p) = w;
    }
  auto& t = *q.tape;
  Var<Scalar> o = t.push(
      std::move(out), detail::any_grad({q, k, v}), "attention",
      [iq = q.id, ik = k.id, iv = v.id, w = weights, groups, heads, p, l, dh, sc](
          Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& qv = t.value(iq);
        const auto& kv = t.value(ik);
        const auto& vv = t.value(iv);
        const bool gq = t.needs_grad(iq), gk = t.needs_grad(ik), gv = t.needs_grad(iv);
        for (Index gi = 0; gi < groups; ++gi)
          for (Index h = 0; h < heads; ++h) {
            const auto wb = w.middleRows((gi * heads + h) * p, p);
            const auto dout = g.block(gi * p, h * dh, p, dh);
            if (gv) t.grad_mut(iv).block(gi * l, h * dh, l, dh).noalias() += wb.transpose() * dout;
            if (!gq && !gk) continue;
            Matrix<Scalar> dw = dout * vv.block(gi * l, h * dh, l, dh).transpose();
            Matrix<Scalar> ds = detail::softmax_rows_backward(Matrix<Scalar>(wb), dw);
            ds *= sc;
            if (gq) t.grad_mut(iq).block(gi * p, h * dh, p, dh).noalias() += ds * kv.block(gi * l, h * dh, l, dh);
            if (gk) t.grad_mut(ik).block(gi * l, h * dh, l, dh).noalias() += ds.transpose() * qv.block(gi * p, h * dh, p, dh);
          }
      });
  return {o, std::move(weights)};
}

/// Single-head cross attention: out = softmax(q k^T / sqrt(d)) v.
template <typename Scalar>
AttentionOutput<Scalar> cross_attention(const Var<Scalar>& q, const Var<Scalar>& k,
                                        const Var<Scalar>& v) {
  return attention(q, k, v, 1, 1);
}

// ---------------------------------------------------------------------------
// scalar reductions

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  auto& t = *a.tape;
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(sum_of(a.value()));
  return t.push(std::move(out), detail::any_grad({a}), "sum",
                [ia = a.id](Tape<Scalar>& t, std::size_t self) {
                  if (t.needs_grad(ia)) t.grad_mut(ia).array() += t.grad(self)(0, 0);
                });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  return scale(sum(a), static_cast<Scalar>(1.0 / static_cast<double>(a.value().size())));
}

/// mean((a - target)^2) against a constant target.
template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& a, const Matrix<Scalar>& target) {
  require_same_shape(a.value(), target, "mse");
  auto& t = *a.tape;
  const double n = static_cast<double>(target.size());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(squared_norm(a.value() - target) / n);
  return t.push(std::move(out), detail::any_grad({a}), "mse",
                [ia = a.id, target, n](Tape<Scalar>& t, std::size_t self) {
                  if (!t.needs_grad(ia)) return;
                  const Scalar c = static_cast<Scalar>(2.0 / n) * t.grad(self)(0, 0);
                  t.grad_mut(ia) += (t.value(ia) - target) * c;
                });
}

/// Euclidean norm of all entries. The gradient at the origin is taken as zero.
template <typename Scalar>
Var<Scalar> l2_norm(const Var<Scalar>& a) {
  auto& t = *a.tape;
  const double nrm = std::sqrt(squared_norm(a.value()));
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(nrm);
  return t.push(std::move(out), detail::any_grad({a}), "l2_norm",
                [ia = a.id, nrm](Tape<Scalar>& t, std::size_t self) {
                  if (!t.needs_grad(ia) || nrm == 0.0) return;
                  const Scalar c = static_cast<Scalar>(t.grad(self)(0, 0) / nrm);
                  t.grad_mut(ia) += t.value(ia) * c;
                });
}

}  // namespace bemem
