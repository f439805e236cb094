#include "xrdattn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "xrdattn/errors.hpp"

namespace xrdattn::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;

using detail::Node;

ConstMatMap cmat(const Buffer& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return ConstMatMap(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MatMap mmat(Buffer& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MatMap(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstArrMap carr(const Buffer& v) {
  return ConstArrMap(v.data(), static_cast<Eigen::Index>(v.size()));
}
ArrMap marr(Buffer& v) { return ArrMap(v.data(), static_cast<Eigen::Index>(v.size())); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

void require_scalar(const Tensor& t, const char* op) {
  if (t.numel() != 1) throw ShapeError(std::string(op) + ": expected a scalar, got " + shape_str(t.shape()));
}

bool wants_grad(const std::shared_ptr<Node>& n) { return n && n->requires_grad; }

std::size_t normalize_axis(int axis, std::size_t rank) {
  int r = static_cast<int>(rank);
  int k = axis < 0 ? r + axis : axis;
  if (k < 0 || k >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(k);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.numel());
  marr(out) = carr(a.node()->value) + carr(b.node()->value);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (wants_grad(p)) marr(p->ensure_grad()) += carr(self.grad);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.numel());
  marr(out) = carr(a.node()->value) - carr(b.node()->value);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (wants_grad(self.parents[0])) marr(self.parents[0]->ensure_grad()) += carr(self.grad);
    if (wants_grad(self.parents[1])) marr(self.parents[1]->ensure_grad()) -= carr(self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.numel());
  marr(out) = carr(a.node()->value) * carr(b.node()->value);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    // Read both values before writing: a and b may be the same node.
    if (wants_grad(pa)) marr(pa->ensure_grad()) += carr(self.grad) * carr(pb->value);
    if (wants_grad(pb)) marr(pb->ensure_grad()) += carr(self.grad) * carr(pa->value);
  });
}

Tensor scale(const Tensor& a, double factor) {
  Buffer out(a.numel());
  marr(out) = carr(a.node()->value) * factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    marr(self.parents[0]->ensure_grad()) += carr(self.grad) * factor;
  });
}

Tensor sum(const Tensor& a) {
  double s = carr(a.node()->value).sum();
  return make_result({}, {s}, {a}, [](Node& self) { marr(self.parents[0]->ensure_grad()) += self.grad[0]; });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  return scale(sum(a), 1.0 / n);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make_result(std::move(shape), a.node()->value, {a}, [](Node& self) {
    marr(self.parents[0]->ensure_grad()) += carr(self.grad);
  });
}

Tensor relu(const Tensor& x) {
  Buffer out(x.numel());
  marr(out) = carr(x.node()->value).max(0.0);
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    auto& p = self.parents[0];
    marr(p->ensure_grad()) += (carr(p->value) > 0.0).select(carr(self.grad), 0.0);
  });
}

Tensor tanh(const Tensor& x) {
  Buffer out(x.numel());
  // Eigen's double tanh is scalar; this form vectorizes through exp().
  auto xa = carr(x.node()->value);
  auto e = (-2.0 * xa.abs()).exp();
  marr(out) = xa.sign() * (1.0 - e) / (1.0 + e);
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    auto y = carr(self.value);
    marr(self.parents[0]->ensure_grad()) += carr(self.grad) * (1.0 - y * y);
  });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 3, "conv1d", "input");
  require_rank(w, 3, "conv1d", "kernel");
  require_rank(b, 1, "conv1d", "bias");
  const std::size_t batch = x.dim(0), len = x.dim(1), cin = x.dim(2);
  const std::size_t k = w.dim(0), cout = w.dim(2);
  if (w.dim(1) != cin) {
    throw ShapeError("conv1d: kernel expects " + std::to_string(w.dim(1)) + " input channels, input has " +
                     std::to_string(cin));
  }
  if (b.dim(0) != cout) throw ShapeError("conv1d: bias length does not match output channels");
  if (k == 0) throw ShapeError("conv1d: empty kernel");
  const std::ptrdiff_t pad_left = static_cast<std::ptrdiff_t>((k - 1) / 2);
  const std::size_t rows = batch * len;
  const std::size_t width = k * cin;

  // im2col: row (b, l) holds the k taps x[b, l + j - pad_left, :] side by side.
  Buffer cols(rows * width, 0.0);
  const auto& xv = x.node()->value;
  for (std::size_t bi = 0; bi < batch; ++bi) {
    for (std::size_t l = 0; l < len; ++l) {
      double* dst = cols.data() + (bi * len + l) * width;
      for (std::size_t j = 0; j < k; ++j) {
        std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + j) - pad_left;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
        const double* s = xv.data() + (bi * len + static_cast<std::size_t>(src)) * cin;
        std::copy(s, s + cin, dst + j * cin);
      }
    }
  }

  Buffer out(rows * cout);
  auto out_m = mmat(out, rows, cout);
  out_m.noalias() = cmat(cols, rows, width) * cmat(w.node()->value, width, cout);
  out_m.rowwise() += ConstVecMap(b.node()->value.data(), static_cast<Eigen::Index>(cout)).transpose();

  return make_result(
      {batch, len, cout}, std::move(out), {x, w, b},
      [cols = std::move(cols), batch, len, cin, k, cout, pad_left, rows, width](Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        auto dout = cmat(self.grad, rows, cout);
        if (wants_grad(pw)) mmat(pw->ensure_grad(), width, cout).noalias() += cmat(cols, rows, width).transpose() * dout;
        if (wants_grad(pb)) {
          VecMap(pb->ensure_grad().data(), static_cast<Eigen::Index>(cout)) += dout.colwise().sum().transpose();
        }
        if (wants_grad(px)) {
          RowMat dcols = dout * cmat(pw->value, width, cout).transpose();
          auto& gx = px->ensure_grad();
          for (std::size_t bi = 0; bi < batch; ++bi) {
            for (std::size_t l = 0; l < len; ++l) {
              const double* src_row = dcols.data() + (bi * len + l) * width;
              for (std::size_t j = 0; j < k; ++j) {
                std::ptrdiff_t dst = static_cast<std::ptrdiff_t>(l + j) - pad_left;
                if (dst < 0 || dst >= static_cast<std::ptrdiff_t>(len)) continue;
                double* g = gx.data() + (bi * len + static_cast<std::size_t>(dst)) * cin;
                const double* s = src_row + j * cin;
                for (std::size_t c = 0; c < cin; ++c) g[c] += s[c];
              }
            }
          }
        }
      });
}

Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, BnMode mode,
                   double momentum) {
  if (x.rank() < 2) throw ShapeError("batchnorm1d: input needs a channel axis, got " + shape_str(x.shape()));
  const std::size_t channels = x.dim(-1);
  const std::size_t rows = x.numel() / channels;
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw ShapeError("batchnorm1d: gamma/beta must have " + std::to_string(channels) + " entries");
  }
  if (state.running_mean.size() != channels || state.running_var.size() != channels) {
    throw ShapeError("batchnorm1d: running statistics have the wrong channel count");
  }
  auto xm = cmat(x.node()->value, rows, channels);
  Eigen::RowVectorXd mu(channels), var(channels);
  if (mode == BnMode::Train) {
    if (rows <= 1) throw DegenerateBatch("batchnorm1d: train mode needs more than one value per channel");
    mu = xm.colwise().mean();
    var = (xm.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(rows);
    const double unbias = static_cast<double>(rows) / static_cast<double>(rows - 1);
    for (std::size_t c = 0; c < channels; ++c) {
      state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * mu[c];
      state.running_var[c] = (1.0 - momentum) * state.running_var[c] + momentum * var[c] * unbias;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = state.running_mean[c];
      var[c] = state.running_var[c];
    }
  }
  Eigen::RowVectorXd inv_std = (var.array() + kBatchNormEps).rsqrt();
  Buffer xhat(x.numel());
  auto xh = mmat(xhat, rows, channels);
  xh = (xm.rowwise() - mu).array().rowwise() * inv_std.array();
  Buffer out(x.numel());
  auto g = ConstVecMap(gamma.node()->value.data(), static_cast<Eigen::Index>(channels)).transpose();
  auto bt = ConstVecMap(beta.node()->value.data(), static_cast<Eigen::Index>(channels)).transpose();
  mmat(out, rows, channels) = (xh.array().rowwise() * g.array()).rowwise() + bt.array();

  const bool train = mode == BnMode::Train;
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std, rows, channels, train](Node& self) {
                       auto& px = self.parents[0];
                       auto& pg = self.parents[1];
                       auto& pb = self.parents[2];
                       auto dy = cmat(self.grad, rows, channels);
                       auto xh = cmat(xhat, rows, channels);
                       Eigen::RowVectorXd dgamma = (dy.array() * xh.array()).colwise().sum();
                       Eigen::RowVectorXd dbeta = dy.colwise().sum();
                       if (wants_grad(pg)) VecMap(pg->ensure_grad().data(), channels) += dgamma.transpose();
                       if (wants_grad(pb)) VecMap(pb->ensure_grad().data(), channels) += dbeta.transpose();
                       if (!wants_grad(px)) return;
                       Eigen::RowVectorXd scale_c =
                           ConstVecMap(pg->value.data(), channels).transpose().array() * inv_std.array();
                       auto gx = mmat(px->ensure_grad(), rows, channels);
                       if (train) {
                         const double n = static_cast<double>(rows);
                         Eigen::RowVectorXd mean_dy = dbeta / n;
                         Eigen::RowVectorXd mean_dy_xh = dgamma / n;
                         gx.array() += ((dy.rowwise() - mean_dy).array() -
                                        xh.array().rowwise() * mean_dy_xh.array())
                                           .rowwise() *
                                       scale_c.array();
                       } else {
                         gx.array() += dy.array().rowwise() * scale_c.array();
                       }
                     });
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "dense", "input");
  require_rank(w, 2, "dense", "weight");
  require_rank(b, 1, "dense", "bias");
  const std::size_t batch = x.dim(0), n = x.dim(1), m = w.dim(1);
  if (w.dim(0) != n) throw ShapeError("dense: weight rows do not match input width");
  if (b.dim(0) != m) throw ShapeError("dense: bias length does not match output width");
  Buffer out(batch * m);
  auto om = mmat(out, batch, m);
  om.noalias() = cmat(x.node()->value, batch, n) * cmat(w.node()->value, n, m);
  om.rowwise() += ConstVecMap(b.node()->value.data(), static_cast<Eigen::Index>(m)).transpose();
  return make_result({batch, m}, std::move(out), {x, w, b}, [batch, n, m](Node& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    auto dy = cmat(self.grad, batch, m);
    if (wants_grad(pw)) mmat(pw->ensure_grad(), n, m).noalias() += cmat(px->value, batch, n).transpose() * dy;
    if (wants_grad(pb)) VecMap(pb->ensure_grad().data(), static_cast<Eigen::Index>(m)) += dy.colwise().sum().transpose();
    if (wants_grad(px)) mmat(px->ensure_grad(), batch, n).noalias() += dy * cmat(pw->value, n, m).transpose();
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands need rank >= 2");
  const std::size_t p = a.dim(-2), q = a.dim(-1), r = b.dim(-1);
  if (b.dim(-2) != q) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  // Right-aligned broadcast of the leading (batch) axes.
  const std::size_t la = a.rank() - 2, lb = b.rank() - 2, lead = std::max(la, lb);
  Shape batch_shape(lead, 1), a_lead(lead, 1), b_lead(lead, 1);
  for (std::size_t i = 0; i < la; ++i) a_lead[lead - la + i] = a.shape()[i];
  for (std::size_t i = 0; i < lb; ++i) b_lead[lead - lb + i] = b.shape()[i];
  for (std::size_t i = 0; i < lead; ++i) {
    if (a_lead[i] != b_lead[i] && a_lead[i] != 1 && b_lead[i] != 1) {
      throw ShapeError("matmul: batch axes do not broadcast, " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    }
    batch_shape[i] = std::max(a_lead[i], b_lead[i]);
  }
  const std::size_t nbatch = shape_numel(batch_shape);
  std::vector<std::size_t> a_off(nbatch), b_off(nbatch);
  for (std::size_t idx = 0; idx < nbatch; ++idx) {
    std::size_t rem = idx, ai = 0, bi = 0, astride = 1, bstride = 1;
    for (std::size_t d = lead; d-- > 0;) {
      std::size_t coord = rem % batch_shape[d];
      rem /= batch_shape[d];
      if (a_lead[d] != 1) ai += coord * astride;
      if (b_lead[d] != 1) bi += coord * bstride;
      astride *= a_lead[d];
      bstride *= b_lead[d];
    }
    a_off[idx] = ai * p * q;
    b_off[idx] = bi * q * r;
  }
  Buffer out(nbatch * p * r);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < nbatch; ++i) {
    mmat(out, p, r, i * p * r).noalias() = cmat(av, p, q, a_off[i]) * cmat(bv, q, r, b_off[i]);
  }
  Shape out_shape = batch_shape;
  out_shape.push_back(p);
  out_shape.push_back(r);
  return make_result(std::move(out_shape), std::move(out), {a, b},
                     [a_off = std::move(a_off), b_off = std::move(b_off), nbatch, p, q, r](Node& self) {
                       auto& pa = self.parents[0];
                       auto& pb = self.parents[1];
                       for (std::size_t i = 0; i < nbatch; ++i) {
                         auto dc = cmat(self.grad, p, r, i * p * r);
                         if (wants_grad(pa)) {
                           mmat(pa->ensure_grad(), p, q, a_off[i]).noalias() +=
                               dc * cmat(pb->value, q, r, b_off[i]).transpose();
                         }
                         if (wants_grad(pb)) {
                           mmat(pb->ensure_grad(), q, r, b_off[i]).noalias() +=
                               cmat(pa->value, p, q, a_off[i]).transpose() * dc;
                         }
                       }
                     });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2: rank must be >= 2");
  const std::size_t p = x.dim(-2), q = x.dim(-1);
  const std::size_t nbatch = x.numel() / (p * q);
  Buffer out(x.numel());
  for (std::size_t i = 0; i < nbatch; ++i) {
    mmat(out, q, p, i * p * q) = cmat(x.node()->value, p, q, i * p * q).transpose();
  }
  Shape s = x.shape();
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  return make_result(std::move(s), std::move(out), {x}, [nbatch, p, q](Node& self) {
    auto& px = self.parents[0];
    for (std::size_t i = 0; i < nbatch; ++i) {
      mmat(px->ensure_grad(), p, q, i * p * q) += cmat(self.grad, q, p, i * p * q).transpose();
    }
  });
}

Tensor softmax(const Tensor& x, int axis) {
  if (x.rank() == 0) throw ShapeError("softmax: scalar input");
  const std::size_t ax = normalize_axis(axis, x.rank());
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[ax];
  const auto& xv = x.node()->value;
  Buffer out(x.numel());
  if (inner == 1) {
    // Contiguous rows: vectorized path.
    for (std::size_t o = 0; o < outer; ++o) {
      ConstArrMap row(xv.data() + o * n, static_cast<Eigen::Index>(n));
      ArrMap y(out.data() + o * n, static_cast<Eigen::Index>(n));
      y = (row - row.maxCoeff()).exp();
      y /= y.sum();
    }
  } else {
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double mx = xv[base];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          double e = std::exp(xv[base + j * inner] - mx);
          out[base + j * inner] = e;
          total += e;
        }
        for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
      }
    }
  }
  return make_result(s, std::move(out), {x}, [outer, inner, n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = self.value;
    const auto& dy = self.grad;
    if (inner == 1) {
      for (std::size_t o = 0; o < outer; ++o) {
        const auto off = static_cast<Eigen::Index>(o * n);
        const auto len = static_cast<Eigen::Index>(n);
        ConstArrMap yr(y.data() + off, len), dyr(dy.data() + off, len);
        const double dot = (yr * dyr).sum();
        ArrMap(g.data() + off, len) += yr * (dyr - dot);
      }
      return;
    }
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[base + j * inner] * dy[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          g[base + j * inner] += y[base + j * inner] * (dy[base + j * inner] - dot);
        }
      }
    }
  });
}

namespace {

// Shared plumbing for the elementwise regression losses: value(e) and d/de.
template <class Value, class Deriv>
Tensor regression_loss(const Tensor& pred, const Tensor& target, const char* name, Value value, Deriv deriv) {
  require_same_shape(pred, target, name);
  const auto& p = pred.node()->value;
  const auto& t = target.node()->value;
  const double n = static_cast<double>(p.size());
  if (p.empty()) throw ShapeError(std::string(name) + ": empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += value(p[i] - t[i]);
  return make_result({}, {total / n}, {pred, target}, [n, deriv](Node& self) {
    auto& pp = self.parents[0];
    auto& pt = self.parents[1];
    const double upstream = self.grad[0] / n;
    const auto& pv = pp->value;
    const auto& tv = pt->value;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double d = upstream * deriv(pv[i] - tv[i]);
      if (wants_grad(pp)) pp->ensure_grad()[i] += d;
      if (wants_grad(pt)) pt->ensure_grad()[i] -= d;
    }
  });
}

}  // namespace

Tensor acosh_loss(const Tensor& pred, const Tensor& target) {
  // acosh(1 + e^2) = log1p(e^2 + |e| sqrt(e^2 + 2)), free of cancellation near 0.
  return regression_loss(
      pred, target, "acosh_loss",
      [](double e) {
        const double a = std::abs(e);
        return std::log1p(e * e + a * std::sqrt(e * e + 2.0));
      },
      [](double e) {
        if (e == 0.0) return 0.0;
        return std::copysign(2.0, e) / std::sqrt(e * e + 2.0);
      });
}

Tensor log_cosh_loss(const Tensor& pred, const Tensor& target) {
  return regression_loss(
      pred, target, "log_cosh_loss",
      [](double e) {
        const double a = std::abs(e);
        return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
      },
      [](double e) { return std::tanh(e); });
}

Tensor cross_entropy(const Tensor& logits, const Tensor& onehot) {
  require_rank(logits, 2, "cross_entropy", "logits");
  require_same_shape(logits, onehot, "cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (batch == 0 || classes == 0) throw ShapeError("cross_entropy: empty logits");
  const auto& z = logits.node()->value;
  const auto& t = onehot.node()->value;
  Buffer logp(z.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = z.data() + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(row[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < classes; ++c) {
      logp[b * classes + c] = row[c] - lse;
      total -= t[b * classes + c] * logp[b * classes + c];
    }
  }
  const double n = static_cast<double>(batch);
  return make_result({}, {total / n}, {logits, onehot}, [logp = std::move(logp), batch, classes, n](Node& self) {
    auto& pz = self.parents[0];
    auto& pt = self.parents[1];
    const double upstream = self.grad[0] / n;
    const auto& tv = pt->value;
    for (std::size_t b = 0; b < batch; ++b) {
      double mass = 0.0;
      for (std::size_t c = 0; c < classes; ++c) mass += tv[b * classes + c];
      for (std::size_t c = 0; c < classes; ++c) {
        const std::size_t i = b * classes + c;
        if (wants_grad(pz)) pz->ensure_grad()[i] += upstream * (std::exp(logp[i]) * mass - tv[i]);
        if (wants_grad(pt)) pt->ensure_grad()[i] -= upstream * logp[i];
      }
    }
  });
}

Tensor weighted_sum_loss(const std::vector<Tensor>& losses, const std::vector<double>& weights) {
  if (losses.size() != weights.size()) {
    throw LengthError("weighted_sum_loss: " + std::to_string(losses.size()) + " losses but " +
                      std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    require_scalar(losses[i], "weighted_sum_loss");
    total += weights[i] * losses[i].item();
  }
  return make_result({}, {total}, losses, [weights](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (wants_grad(self.parents[i])) self.parents[i]->ensure_grad()[0] += weights[i] * self.grad[0];
    }
  });
}

}  // namespace xrdattn::ad
