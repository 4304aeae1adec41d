#include "gquant/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "gquant/error.hpp"
#include "gquant/kernels.hpp"

namespace gquant {

const Tensor& Var::value() const { return tape_->value(id_); }

std::span<const double> Var::grad() const { return std::as_const(*tape_).grad(id_); }

bool Var::requires_grad() const { return tape_->needs_grad(id_); }

Var Tape::input(Tensor value) {
  value.set_requires_grad(false);
  nodes_.push_back(Node{std::move(value), nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Tensor value) {
  value.set_requires_grad(true);
  nodes_.push_back(Node{std::move(value), nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(Var v) const {
  if (v.tape_ != this || v.id() >= nodes_.size()) {
    throw Error("variable does not belong to this tape");
  }
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
  bool grad = false;
  for (Var p : parents) {
    check_owned(p);
    grad = grad || needs_grad(p.id());
  }
  value.set_requires_grad(grad);
  nodes_.push_back(Node{std::move(value), grad ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
  check_owned(root);
  if (nodes_[root.id()].value.size() != 1) {
    throw ShapeError("backward() needs a one-element root, got " +
                     shape_str(nodes_[root.id()].value.shape()));
  }
  for (auto& n : nodes_) n.value.zero_grad();
  if (!needs_grad(root.id())) return;
  nodes_[root.id()].value.grad()[0] = 1.0;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    if (nodes_[id].backward) nodes_[id].backward(*this, id);
  }
}

namespace ops {
namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

/// Elementwise op whose local derivative is computed in the forward pass.
template <typename F>
Var elementwise(Var a, F&& value_and_deriv) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  std::vector<double> deriv(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto [y, dy] = value_and_deriv(x[i]);
    out[i] = y;
    deriv[i] = dy;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, deriv = std::move(deriv)](Tape& t, std::size_t self) {
    const auto go = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * deriv[i];
  });
}

}  // namespace

Var add(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  Tensor out(a.value());
  out.set_requires_grad(false);
  if (sa == sb) {
    const auto& vb = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
    return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
      const auto go = t.grad(self);
      if (t.needs_grad(ia)) kernels::active().axpy(1.0, go.data(), t.grad(ia).data(), go.size());
      if (t.needs_grad(ib)) kernels::active().axpy(1.0, go.data(), t.grad(ib).data(), go.size());
    });
  }
  if (sb.size() != 1 || sa.empty() || sa.back() != sb[0]) shape_mismatch("add", sa, sb);
  const std::size_t m = sb[0];
  const std::size_t rows = out.size() / m;
  const auto& vb = b.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] += vb[j];
  }
  return a.tape().record(std::move(out), {a, b}, [ia, ib, m, rows](Tape& t, std::size_t self) {
    const auto go = t.grad(self);
    if (t.needs_grad(ia)) kernels::active().axpy(1.0, go.data(), t.grad(ia).data(), go.size());
    if (t.needs_grad(ib)) {
      auto gb = t.grad(ib);
      for (std::size_t r = 0; r < rows; ++r) kernels::active().axpy(1.0, go.data() + r * m, gb.data(), m);
    }
  });
}

Var mul(Var a, Var b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  const auto& va = a.value();
  const auto& vb = b.value();
  Tensor out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const auto go = t.grad(self);
    const auto& xa = t.value(ia);
    const auto& xb = t.value(ib);
    if (t.needs_grad(ia)) {
      auto g = t.grad(ia);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * xb[i];
    }
    if (t.needs_grad(ib)) {
      auto g = t.grad(ib);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * xa[i];
    }
  });
}

Var scale(Var a, double s) {
  return elementwise(a, [s](double x) { return std::pair{x * s, s}; });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(total), {a}, [ia](Tape& t, std::size_t self) {
    const double go = t.grad(self)[0];
    for (double& g : t.grad(ia)) g += go;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var matmul(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) shape_mismatch("matmul", sa, sb);
  const std::size_t n = sa[0], k = sa[1], m = sb[1];
  const auto& va = a.value();
  const auto& vb = b.value();
  const auto& kern = kernels::active();
  Tensor out(Shape{n, m});
  kern.gemm(n, m, k, va.data().data(), k, 1, vb.data().data(), m, out.data().data(), m);
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, n, k, m](Tape& t, std::size_t self) {
    const auto& kern = kernels::active();
    const auto go = t.grad(self);
    const auto& xa = t.value(ia);
    const auto& xb = t.value(ib);
    if (t.needs_grad(ia)) {
      auto ga = t.grad(ia);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += kern.dot(&go[i * m], &xb[p * m], m);
      }
    }
    if (t.needs_grad(ib)) {
      kern.gemm(k, m, n, xa.data().data(), 1, k, go.data(), m, t.grad(ib).data(), m);
    }
  });
}

namespace {

// Unrolls x [batch, cin, len] into a [batch * lout, cin * ks] matrix so the
// convolution becomes plain matrix products. Column (c, j) of row (b, l)
// holds x[b, c, l + j].
std::vector<double> im2row(const Tensor& x, std::size_t batch, std::size_t cin, std::size_t len,
                           std::size_t ks, std::size_t lout) {
  const std::size_t rows = cin * ks;
  std::vector<double> out(batch * lout * rows);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < cin; ++c) {
      const double* src = &x[(b * cin + c) * len];
      for (std::size_t l = 0; l < lout; ++l) {
        std::copy_n(src + l, ks, &out[(b * lout + l) * rows + c * ks]);
      }
    }
  }
  return out;
}

// Row (c, j) of the transpose, contiguous over (b, l).
std::vector<double> transpose(const std::vector<double>& m, std::size_t r, std::size_t c) {
  std::vector<double> t(m.size());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = m[i * c + j];
  }
  return t;
}

}  // namespace

Var conv1d(Var x, Var w, Var bias) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  require_rank("conv1d input", sx, 3);
  require_rank("conv1d weight", sw, 3);
  if (sx[1] != sw[1]) shape_mismatch("conv1d", sx, sw);
  if (bias.shape() != Shape{sw[0]}) shape_mismatch("conv1d bias", sw, bias.shape());
  const std::size_t batch = sx[0], cin = sx[1], len = sx[2];
  const std::size_t cout = sw[0], ks = sw[2];
  if (ks == 0 || len < ks) shape_mismatch("conv1d (kernel longer than input)", sx, sw);
  const std::size_t lout = len - ks + 1;
  const std::size_t n = batch * lout, rows = cin * ks;

  const auto& vb = bias.value();
  const auto& kern = kernels::active();
  const auto col = transpose(im2row(x.value(), batch, cin, len, ks, lout), n, rows);
  std::vector<double> y(cout * n);
  for (std::size_t o = 0; o < cout; ++o) std::fill_n(&y[o * n], n, vb[o]);
  kern.gemm(cout, n, rows, w.value().data().data(), rows, 1, col.data(), n, y.data(), n);
  Tensor out(Shape{batch, cout, lout});
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(&y[o * n + b * lout], lout, &out[(b * cout + o) * lout]);
    }
  }
  const std::size_t ix = x.id(), iw = w.id(), ib = bias.id();
  return x.tape().record(
      std::move(out), {x, w, bias},
      [ix, iw, ib, batch, cin, len, cout, ks, lout, n, rows](Tape& t, std::size_t self) {
        const auto& kern = kernels::active();
        const auto go = t.grad(self);
        std::vector<double> g(cout * n);
        for (std::size_t o = 0; o < cout; ++o) {
          for (std::size_t b = 0; b < batch; ++b) {
            std::copy_n(&go[(b * cout + o) * lout], lout, &g[o * n + b * lout]);
          }
        }
        if (t.needs_grad(ib)) {
          auto gb = t.grad(ib);
          for (std::size_t o = 0; o < cout; ++o) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += g[o * n + i];
            gb[o] += s;
          }
        }
        if (t.needs_grad(iw)) {
          const auto patches = im2row(t.value(ix), batch, cin, len, ks, lout);
          kern.gemm(cout, rows, n, g.data(), n, 1, patches.data(), rows, t.grad(iw).data(), rows);
        }
        if (t.needs_grad(ix)) {
          std::vector<double> dcol(rows * n, 0.0);
          kern.gemm(rows, n, cout, t.value(iw).data().data(), 1, rows, g.data(), n, dcol.data(), n);
          auto gx = t.grad(ix);
          for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t j = 0; j < ks; ++j) {
              const double* src = &dcol[(c * ks + j) * n];
              for (std::size_t b = 0; b < batch; ++b) {
                double* dst = &gx[(b * cin + c) * len + j];
                for (std::size_t l = 0; l < lout; ++l) dst[l] += src[b * lout + l];
              }
            }
          }
        }
      });
}

Var relu(Var a) {
  const auto& x = a.value();
  Tensor out(x.shape());
  kernels::active().relu(x.data().data(), out.data().data(), x.size());
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const auto go = t.grad(self);
    const auto& xv = t.value(ia);
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (xv[i] > 0.0) ga[i] += go[i];
    }
  });
}

Var max_pool1d(Var x, std::size_t k) {
  const Shape& s = x.shape();
  require_rank("max_pool1d", s, 3);
  if (k == 0 || s[2] < k) {
    throw ShapeError("max_pool1d: window " + std::to_string(k) + " does not fit " + shape_str(s));
  }
  const std::size_t rows = s[0] * s[1], len = s[2], lout = len / k;
  const auto& v = x.value();
  Tensor out(Shape{s[0], s[1], lout});
  std::vector<std::size_t> argmax(rows * lout);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < lout; ++j) {
      std::size_t best = r * len + j * k;
      for (std::size_t q = 1; q < k; ++q) {
        if (v[r * len + j * k + q] > v[best]) best = r * len + j * k + q;
      }
      argmax[r * lout + j] = best;
      out[r * lout + j] = v[best];
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, argmax = std::move(argmax)](Tape& t, std::size_t self) {
    const auto go = t.grad(self);
    auto gx = t.grad(ix);
    for (std::size_t i = 0; i < go.size(); ++i) gx[argmax[i]] += go[i];
  });
}

Var global_avg_pool(Var x) {
  const Shape& s = x.shape();
  require_rank("global_avg_pool", s, 3);
  if (s[2] == 0) throw ShapeError("global_avg_pool over an empty axis");
  const std::size_t rows = s[0] * s[1], len = s[2];
  const auto& v = x.value();
  Tensor out(Shape{s[0], s[1]});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t l = 0; l < len; ++l) acc += v[r * len + l];
    out[r] = acc / static_cast<double>(len);
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, rows, len](Tape& t, std::size_t self) {
    const auto go = t.grad(self);
    auto gx = t.grad(ix);
    const double inv = 1.0 / static_cast<double>(len);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t l = 0; l < len; ++l) gx[r * len + l] += go[r] * inv;
    }
  });
}

namespace {

void softmax_rows(std::span<const double> z, std::span<double> p, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = &z[r * cols];
    double* pr = &p[r * cols];
    const double mx = *std::max_element(zr, zr + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      pr[c] = std::exp(zr[c] - mx);
      total += pr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) pr[c] /= total;
  }
}

}  // namespace

Var softmax(Var logits) {
  const Shape& s = logits.shape();
  require_rank("softmax", s, 2);
  const std::size_t rows = s[0], cols = s[1];
  Tensor out(s);
  softmax_rows(logits.value().data(), out.data(), rows, cols);
  const std::size_t ix = logits.id();
  return logits.tape().record(std::move(out), {logits}, [ix, rows, cols](Tape& t, std::size_t self) {
    const auto go = t.grad(self);
    const auto& y = t.value(self);
    auto gx = t.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double inner = 0.0;
      for (std::size_t c = 0; c < cols; ++c) inner += go[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        gx[r * cols + c] += y[r * cols + c] * (go[r * cols + c] - inner);
      }
    }
  });
}

Var softplus(Var a) {
  return elementwise(a, [](double x) {
    const double y = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    const double sig = 1.0 / (1.0 + std::exp(-x));
    return std::pair{y, sig};
  });
}

Var tanh(Var a) {
  return elementwise(a, [](double x) {
    const double y = std::tanh(x);
    return std::pair{y, 1.0 - y * y};
  });
}

Var weighted_cross_entropy(Var logits, std::span<const int> labels, std::span<const double> class_weights) {
  const Shape& s = logits.shape();
  require_rank("weighted_cross_entropy", s, 2);
  const std::size_t rows = s[0], cols = s[1];
  if (labels.size() != rows) {
    throw ShapeError("weighted_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  if (class_weights.size() != cols) {
    throw ShapeError("weighted_cross_entropy: " + std::to_string(class_weights.size()) +
                     " class weights for " + std::to_string(cols) + " classes");
  }
  if (rows == 0) throw ShapeError("weighted_cross_entropy of an empty batch");
  for (double w : class_weights) {
    if (!(w > 0.0)) throw ConfigError("class weights must be positive");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= cols) {
      throw DataError("label " + std::to_string(y) + " out of range for " + std::to_string(cols) + " classes");
    }
  }

  std::vector<double> probs(rows * cols);
  softmax_rows(logits.value().data(), probs, rows, cols);
  const auto& z = logits.value();
  double weighted = 0.0;
  double total_w = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = &z[r * cols];
    const double mx = *std::max_element(zr, zr + cols);
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += std::exp(zr[c] - mx);
    const double nll = mx + std::log(acc) - zr[labels[r]];
    const double w = class_weights[labels[r]];
    weighted += w * nll;
    total_w += w;
  }

  std::vector<int> y(labels.begin(), labels.end());
  std::vector<double> w(class_weights.begin(), class_weights.end());
  const std::size_t ix = logits.id();
  return logits.tape().record(
      Tensor::scalar(weighted / total_w), {logits},
      [ix, rows, cols, total_w, probs = std::move(probs), y = std::move(y), w = std::move(w)](Tape& t,
                                                                                          std::size_t self) {
        const double go = t.grad(self)[0];
        auto gx = t.grad(ix);
        for (std::size_t r = 0; r < rows; ++r) {
          const double coeff = go * w[y[r]] / total_w;
          for (std::size_t c = 0; c < cols; ++c) {
            const double target = static_cast<int>(c) == y[r] ? 1.0 : 0.0;
            gx[r * cols + c] += coeff * (probs[r * cols + c] - target);
          }
        }
      });
}

}  // namespace ops
}  // namespace gquant
