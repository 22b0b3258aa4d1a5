#include "nukes/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>

#include "nukes/spline.hpp"

namespace nukes {

// ---------------- tape core ----------------

Var Tape::leaf(const Tensor& t, bool requires_grad) {
  Node n;
  n.val = t;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

int Tape::push(Tensor val, std::vector<int> parents, std::function<void(Tape&, int)> bw) {
  Node n;
  n.val = std::move(val);
  n.parents = std::move(parents);
  for (int p : n.parents)
    if (nodes_[static_cast<size_t>(p)].requires_grad) n.requires_grad = true;
  if (n.requires_grad) n.backward = std::move(bw);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

double* Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.val.data.size(), 0.0);
  return n.grad.data();
}

Tensor Tape::grad(Var v) const {
  const Node& n = node(v.id);
  Tensor g(n.val.shape);
  if (!n.grad.empty()) g.data = n.grad;
  return g;
}

void Tape::backward(Var scalar_loss) {
  if (backward_done_) fail(ErrCode::InvalidParam, "tape already backpropagated once");
  const Node& loss = node(scalar_loss.id);
  if (loss.val.numel() != 1) fail(ErrCode::NonScalarOutput, "backward target must be scalar");
  backward_done_ = true;
  if (!loss.requires_grad) return;
  double* seed = grad_buf(scalar_loss.id);
  seed[0] = 1.0;
  for (int i = scalar_loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

// ---------------- helpers ----------------

namespace {

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) fail(ErrCode::InvalidParam, "operands live on different tapes");
}

int reflect_idx(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

void axpy(double* dst, const double* src, int64_t n, double a = 1.0) {
  for (int64_t i = 0; i < n; ++i) dst[i] += a * src[i];
}

// elementwise binary with single-element broadcast on either side
Var binary_op(Var a, Var b, const char* name, double (*fwd)(double, double),
              void (*bwd)(double x, double y, double out, double gy, double* gx, double* gyy)) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  const Tensor& tb = t.value(b);
  bool a_scalar = ta.numel() == 1;
  bool b_scalar = tb.numel() == 1;
  if (!a_scalar && !b_scalar && !ta.same_shape(tb))
    fail(ErrCode::ShapeMismatch, std::string(name) + ": " + shape_str(ta.shape) + " vs " +
                                     shape_str(tb.shape));
  const Tensor& big = a_scalar ? tb : ta;
  Tensor out(big.shape);
  int64_t n = big.numel();
  for (int64_t i = 0; i < n; ++i)
    out[i] = fwd(ta[a_scalar ? 0 : i], tb[b_scalar ? 0 : i]);

  int pa = a.id, pb = b.id;
  int id = t.push(std::move(out), {pa, pb}, [pa, pb, a_scalar, b_scalar, bwd](Tape& tp, int self) {
    const auto& sn = tp.node(self);
    const double* gy = sn.grad.data();
    const Tensor& xa = tp.node(pa).val;
    const Tensor& xb = tp.node(pb).val;
    double* ga = tp.grad_buf(pa);
    double* gb = tp.grad_buf(pb);
    int64_t n = sn.val.numel();
    for (int64_t i = 0; i < n; ++i) {
      double gx = 0, gyy = 0;
      bwd(xa[a_scalar ? 0 : i], xb[b_scalar ? 0 : i], sn.val[i], gy[i], &gx, &gyy);
      if (ga) ga[a_scalar ? 0 : i] += gx;
      if (gb) gb[b_scalar ? 0 : i] += gyy;
    }
  });
  return Var{&t, id};
}

Var unary_op(Var a, const char* name, double (*fwd)(double), double (*dfdx)(double x, double out)) {
  (void)name;
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out[i] = fwd(ta[i]);
  int pa = a.id;
  int id = t.push(std::move(out), {pa}, [pa, dfdx](Tape& tp, int self) {
    const auto& sn = tp.node(self);
    const double* gy = sn.grad.data();
    double* ga = tp.grad_buf(pa);
    if (!ga) return;
    const Tensor& xa = tp.node(pa).val;
    for (int64_t i = 0; i < sn.val.numel(); ++i) ga[i] += gy[i] * dfdx(xa[i], sn.val[i]);
  });
  return Var{&t, id};
}

}  // namespace

// ---------------- elementwise ----------------

Var add(Var a, Var b) {
  return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                   [](double, double, double, double gy, double* gx, double* gyy) {
                     *gx = gy;
                     *gyy = gy;
                   });
}

Var sub(Var a, Var b) {
  return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                   [](double, double, double, double gy, double* gx, double* gyy) {
                     *gx = gy;
                     *gyy = -gy;
                   });
}

Var mul(Var a, Var b) {
  return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                   [](double x, double y, double, double gy, double* gx, double* gyy) {
                     *gx = gy * y;
                     *gyy = gy * x;
                   });
}

Var divide(Var a, Var b) {
  return binary_op(a, b, "div", [](double x, double y) { return x / y; },
                   [](double x, double y, double, double gy, double* gx, double* gyy) {
                     *gx = gy / y;
                     *gyy = -gy * x / (y * y);
                   });
}

Var scale(Var a, double c) {
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out[i] = c * ta[i];
  int pa = a.id;
  int id = t.push(std::move(out), {pa}, [pa, c](Tape& tp, int self) {
    const auto& sn = tp.node(self);
    double* ga = tp.grad_buf(pa);
    if (ga) axpy(ga, sn.grad.data(), sn.val.numel(), c);
  });
  return Var{&t, id};
}

Var add_const(Var a, double c) {
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] + c;
  int pa = a.id;
  int id = t.push(std::move(out), {pa}, [pa](Tape& tp, int self) {
    const auto& sn = tp.node(self);
    double* ga = tp.grad_buf(pa);
    if (ga) axpy(ga, sn.grad.data(), sn.val.numel());
  });
  return Var{&t, id};
}

Var sigmoid(Var a) {
  return unary_op(a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double, double y) { return y * (1.0 - y); });
}

Var softplus_op(Var a) {
  return unary_op(a, "softplus", [](double x) { return softplus(x); },
                  [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var gelu(Var a) {
  return unary_op(a, "gelu",
                  [](double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); },
                  [](double x, double) {
                    double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
                    double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
                    return cdf + x * pdf;
                  });
}

Var exp_op(Var a) {
  return unary_op(a, "exp", [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Var log_op(Var a) {
  return unary_op(a, "log", [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Var sin_op(Var a) {
  return unary_op(a, "sin", [](double x) { return std::sin(x); },
                  [](double x, double) { return std::cos(x); });
}

Var cos_op(Var a) {
  return unary_op(a, "cos", [](double x) { return std::cos(x); },
                  [](double x, double) { return -std::sin(x); });
}

Var acos_op(Var a) {
  return unary_op(a, "acos", [](double x) { return std::acos(x); },
                  [](double x, double) { return -1.0 / std::sqrt(1.0 - x * x); });
}

Var power(Var a, double e) {
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out[i] = std::pow(ta[i], e);
  int pa = a.id;
  int id = t.push(std::move(out), {pa}, [pa, e](Tape& tp, int self) {
    const auto& sn = tp.node(self);
    const double* gy = sn.grad.data();
    double* ga = tp.grad_buf(pa);
    if (!ga) return;
    const Tensor& xa = tp.node(pa).val;
    for (int64_t i = 0; i < sn.val.numel(); ++i)
      ga[i] += gy[i] * e * std::pow(xa[i], e - 1.0);
  });
  return Var{&t, id};
}

Var clamp_op(Var a, double lo, double hi) {
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out[i] = std::min(hi, std::max(lo, ta[i]));
  int pa = a.id;
  int id = t.push(std::move(out), {pa}, [pa, lo, hi](Tape& tp, int self) {
    const auto& sn = tp.node(self);
    const double* gy = sn.grad.data();
    double* ga = tp.grad_buf(pa);
    if (!ga) return;
    const Tensor& xa = tp.node(pa).val;
    for (int64_t i = 0; i < sn.val.numel(); ++i)
      if (xa[i] > lo && xa[i] < hi) ga[i] += gy[i];
  });
  return Var{&t, id};
}

// ---------------- linear algebra ----------------

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  const Tensor& tb = t.value(b);
  if (ta.ndim() != 2 || tb.ndim() != 2 || ta.dim(1) != tb.dim(0))
    fail(ErrCode::ShapeMismatch,
         "matmul: " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
  const int m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int l = 0; l < k; ++l) {
      double av = ta[int64_t(i) * k + l];
      if (av == 0.0) continue;
      const double* brow = tb.data.data() + int64_t(l) * n;
      double* orow = out.data.data() + int64_t(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  int pa = a.id, pb = b.id;
  int id = t.push(std::move(out), {pa, pb}, [pa, pb, m, k, n](Tape& tp, int self) {
    const double* gy = tp.node(self).grad.data();
    const Tensor& xa = tp.node(pa).val;
    const Tensor& xb = tp.node(pb).val;
    double* ga = tp.grad_buf(pa);
    double* gb = tp.grad_buf(pb);
    if (ga) {  // dA = dC * B^T
      for (int i = 0; i < m; ++i)
        for (int l = 0; l < k; ++l) {
          double s = 0;
          const double* gyr = gy + int64_t(i) * n;
          const double* br = xb.data.data() + int64_t(l) * n;
          for (int j = 0; j < n; ++j) s += gyr[j] * br[j];
          ga[int64_t(i) * k + l] += s;
        }
    }
    if (gb) {  // dB = A^T * dC
      for (int l = 0; l < k; ++l)
        for (int i = 0; i < m; ++i) {
          double av = xa[int64_t(i) * k + l];
          if (av == 0.0) continue;
          const double* gyr = gy + int64_t(i) * n;
          double* gbr = gb + int64_t(l) * n;
          for (int j = 0; j < n; ++j) gbr[j] += av * gyr[j];
        }
    }
  });
  return Var{&t, id};
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  if (ta.ndim() != 2) fail(ErrCode::ShapeMismatch, "transpose needs a matrix");
  const int m = ta.dim(0), n = ta.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[int64_t(j) * m + i] = ta[int64_t(i) * n + j];
  int pa = a.id;
  int id = t.push(std::move(out), {pa}, [pa, m, n](Tape& tp, int self) {
    const double* gy = tp.node(self).grad.data();
    double* ga = tp.grad_buf(pa);
    if (!ga) return;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga[int64_t(i) * n + j] += gy[int64_t(j) * m + i];
  });
  return Var{&t, id};
}

Var linear(Var x, Var w, Var b) {
  check_same_tape(x, w);
  Tape& t = *x.tape;
  const Tensor& tx = t.value(x);
  const Tensor& tw = t.value(w);
  if (tw.ndim() != 2) fail(ErrCode::ShapeMismatch, "linear: weight must be [Cin,Cout]");
  const int cin = tw.dim(0), cout = tw.dim(1);
  if (tx.ndim() < 1 || tx.shape.back() != cin)
    fail(ErrCode::ShapeMismatch, "linear: input last dim " + shape_str(tx.shape) +
                                     " does not match weight " + shape_str(tw.shape));
  const bool has_bias = b.valid();
  if (has_bias) {
    const Tensor& tb = t.value(b);
    if (tb.numel() != cout) fail(ErrCode::ShapeMismatch, "linear: bias size mismatch");
  }
  const int64_t rows = tx.numel() / cin;
  std::vector<int> oshape = tx.shape;
  oshape.back() = cout;
  Tensor out(oshape);
  const Tensor* tbp = has_bias ? &t.value(b) : nullptr;
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = tx.data.data() + r * cin;
    double* orow = out.data.data() + r * cout;
    if (has_bias)
      for (int j = 0; j < cout; ++j) orow[j] = tbp->data[static_cast<size_t>(j)];
    for (int i = 0; i < cin; ++i) {
      double xv = xr[i];
      if (xv == 0.0) continue;
      const double* wr = tw.data.data() + int64_t(i) * cout;
      for (int j = 0; j < cout; ++j) orow[j] += xv * wr[j];
    }
  }
  std::vector<int> parents = {x.id, w.id};
  if (has_bias) parents.push_back(b.id);
  int px = x.id, pw = w.id, pb = has_bias ? b.id : -1;
  int id = t.push(std::move(out), parents, [px, pw, pb, rows, cin, cout](Tape& tp, int self) {
    const double* gy = tp.node(self).grad.data();
    const Tensor& tx = tp.node(px).val;
    const Tensor& tw = tp.node(pw).val;
    double* gx = tp.grad_buf(px);
    double* gw = tp.grad_buf(pw);
    double* gb = (pb >= 0) ? tp.grad_buf(pb) : nullptr;
    for (int64_t r = 0; r < rows; ++r) {
      const double* gyr = gy + r * cout;
      const double* xr = tx.data.data() + r * cin;
      if (gx) {
        double* gxr = gx + r * cin;
        for (int i = 0; i < cin; ++i) {
          const double* wr = tw.data.data() + int64_t(i) * cout;
          double s = 0;
          for (int j = 0; j < cout; ++j) s += wr[j] * gyr[j];
          gxr[i] += s;
        }
      }
      if (gw) {
        for (int i = 0; i < cin; ++i) {
          double xv = xr[i];
          if (xv == 0.0) continue;
          double* gwr = gw + int64_t(i) * cout;
          for (int j = 0; j < cout; ++j) gwr[j] += xv * gyr[j];
        }
      }
      if (gb)
        for (int j = 0; j < cout; ++j) gb[j] += gyr[j];
    }
  });
  return Var{&t, id};
}

// ---------------- convolutions ----------------

namespace {

Var depthwise_impl(Var x, Var kernel, bool shared) {
  check_same_tape(x, kernel);
  Tape& t = *x.tape;
  const Tensor& tx = t.value(x);
  const Tensor& tk = t.value(kernel);
  if (tx.ndim() != 3) fail(ErrCode::ShapeMismatch, "depthwise conv expects [H,W,C]");
  const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
  int kh, kw;
  if (shared) {
    if (tk.ndim() != 2) fail(ErrCode::ShapeMismatch, "shared kernel must be [kh,kw]");
    kh = tk.dim(0);
    kw = tk.dim(1);
  } else {
    if (tk.ndim() != 3 || tk.dim(0) != C)
      fail(ErrCode::ShapeMismatch, "per-channel kernel must be [C,kh,kw]");
    kh = tk.dim(1);
    kw = tk.dim(2);
  }
  if (kh % 2 == 0 || kw % 2 == 0) fail(ErrCode::InvalidParam, "kernel size must be odd");
  const int rh = kh / 2, rw = kw / 2;

  // reflected index tables
  auto make_table = [](int n, int r) {
    std::vector<int> tab(size_t(n) * (2 * r + 1));
    for (int i = 0; i < n; ++i)
      for (int o = -r; o <= r; ++o) tab[size_t(i) * (2 * r + 1) + (o + r)] = reflect_idx(i + o, n);
    return tab;
  };
  auto htab = std::make_shared<std::vector<int>>(make_table(H, rh));
  auto wtab = std::make_shared<std::vector<int>>(make_table(W, rw));

  Tensor out({H, W, C});
  {
    const double* xd = tx.data.data();
    const double* kd = tk.data.data();
    double* od = out.data.data();
    parallel_for(H, [&](int64_t h0, int64_t h1) {
      for (int64_t h = h0; h < h1; ++h) {
        for (int w = 0; w < W; ++w) {
          double* op = od + (h * W + w) * C;
          for (int a = 0; a < kh; ++a) {
            int ih = (*htab)[size_t(h) * kh + a];
            for (int b = 0; b < kw; ++b) {
              int iw = (*wtab)[size_t(w) * kw + b];
              const double* xp = xd + (int64_t(ih) * W + iw) * C;
              if (shared) {
                double kv = kd[a * kw + b];
                for (int c = 0; c < C; ++c) op[c] += kv * xp[c];
              } else {
                for (int c = 0; c < C; ++c) op[c] += kd[(int64_t(c) * kh + a) * kw + b] * xp[c];
              }
            }
          }
        }
      }
    });
  }

  int px = x.id, pk = kernel.id;
  int id = t.push(std::move(out), {px, pk},
                  [px, pk, H, W, C, kh, kw, shared, htab, wtab](Tape& tp, int self) {
                    const double* gy = tp.node(self).grad.data();
                    const Tensor& tx = tp.node(px).val;
                    const Tensor& tk = tp.node(pk).val;
                    double* gx = tp.grad_buf(px);
                    double* gk = tp.grad_buf(pk);
                    for (int h = 0; h < H; ++h)
                      for (int w = 0; w < W; ++w) {
                        const double* gp = gy + (int64_t(h) * W + w) * C;
                        for (int a = 0; a < kh; ++a) {
                          int ih = (*htab)[size_t(h) * kh + a];
                          for (int b = 0; b < kw; ++b) {
                            int iw = (*wtab)[size_t(w) * kw + b];
                            int64_t xoff = (int64_t(ih) * W + iw) * C;
                            if (shared) {
                              double kv = tk[a * kw + b];
                              for (int c = 0; c < C; ++c) {
                                if (gx) gx[xoff + c] += kv * gp[c];
                                if (gk) gk[a * kw + b] += tx[xoff + c] * gp[c];
                              }
                            } else {
                              for (int c = 0; c < C; ++c) {
                                int64_t koff = (int64_t(c) * kh + a) * kw + b;
                                if (gx) gx[xoff + c] += tk[koff] * gp[c];
                                if (gk) gk[koff] += tx[xoff + c] * gp[c];
                              }
                            }
                          }
                        }
                      }
                  });
  return Var{&t, id};
}

}  // namespace

Var depthwise_conv_shared(Var x, Var kernel) { return depthwise_impl(x, kernel, true); }
Var depthwise_conv(Var x, Var kernel) { return depthwise_impl(x, kernel, false); }

Var spectral_conv(Var x, Var w, Var b) {
  check_same_tape(x, w);
  check_same_tape(x, b);
  Tape& t = *x.tape;
  const Tensor& tx = t.value(x);
  const Tensor& tw = t.value(w);
  const Tensor& tb = t.value(b);
  if (tx.ndim() != 3) fail(ErrCode::ShapeMismatch, "spectral_conv expects [H,W,C]");
  if (tw.ndim() != 2) fail(ErrCode::ShapeMismatch, "spectral_conv weight must be [O,k]");
  const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
  const int O = tw.dim(0), k = tw.dim(1);
  if (k % 2 == 0) fail(ErrCode::InvalidParam, "spectral kernel size must be odd");
  if (tb.numel() != O) fail(ErrCode::ShapeMismatch, "spectral_conv bias size mismatch");
  const int r = k / 2;
  const int64_t hw = int64_t(H) * W;

  Tensor out({H, W, O * C});
  for (int64_t p = 0; p < hw; ++p) {
    const double* xp = tx.data.data() + p * C;
    double* op = out.data.data() + p * O * C;
    for (int o = 0; o < O; ++o) {
      const double* wo = tw.data.data() + int64_t(o) * k;
      double bias = tb[o];
      for (int c = 0; c < C; ++c) {
        double s = bias;
        for (int tapi = 0; tapi < k; ++tapi) {
          int cc = c + tapi - r;
          if (cc >= 0 && cc < C) s += wo[tapi] * xp[cc];
        }
        op[o * C + c] = s;
      }
    }
  }
  int px = x.id, pw = w.id, pb = b.id;
  int id = t.push(std::move(out), {px, pw, pb}, [px, pw, pb, hw, C, O, k, r](Tape& tp, int self) {
    const double* gy = tp.node(self).grad.data();
    const Tensor& tx = tp.node(px).val;
    const Tensor& tw = tp.node(pw).val;
    double* gx = tp.grad_buf(px);
    double* gw = tp.grad_buf(pw);
    double* gb = tp.grad_buf(pb);
    for (int64_t p = 0; p < hw; ++p) {
      const double* xp = tx.data.data() + p * C;
      const double* gp = gy + p * O * C;
      for (int o = 0; o < O; ++o) {
        const double* wo = tw.data.data() + int64_t(o) * k;
        for (int c = 0; c < C; ++c) {
          double g = gp[o * C + c];
          if (g == 0.0) continue;
          if (gb) gb[o] += g;
          for (int tapi = 0; tapi < k; ++tapi) {
            int cc = c + tapi - r;
            if (cc < 0 || cc >= C) continue;
            if (gx) gx[p * C + cc] += wo[tapi] * g;
            if (gw) gw[int64_t(o) * k + tapi] += xp[cc] * g;
          }
        }
      }
    }
  });
  return Var{&t, id};
}

// ---------------- softmax, norms, reductions ----------------

Var softmax_cols(Var s) {
  Tape& t = *s.tape;
  const Tensor& ts = t.value(s);
  if (ts.ndim() != 2) fail(ErrCode::ShapeMismatch, "softmax_cols expects a matrix");
  const int m = ts.dim(0), n = ts.dim(1);
  Tensor out({m, n});
  for (int j = 0; j < n; ++j) {
    double mx = -1e300;
    for (int i = 0; i < m; ++i) mx = std::max(mx, ts[int64_t(i) * n + j]);
    double z = 0;
    for (int i = 0; i < m; ++i) {
      double e = std::exp(ts[int64_t(i) * n + j] - mx);
      out[int64_t(i) * n + j] = e;
      z += e;
    }
    for (int i = 0; i < m; ++i) out[int64_t(i) * n + j] /= z;
  }
  int ps = s.id;
  int id = t.push(std::move(out), {ps}, [ps, m, n](Tape& tp, int self) {
    const auto& sn = tp.node(self);
    const double* gy = sn.grad.data();
    const double* y = sn.val.data.data();
    double* gs = tp.grad_buf(ps);
    if (!gs) return;
    for (int j = 0; j < n; ++j) {
      double dot = 0;
      for (int i = 0; i < m; ++i) dot += y[int64_t(i) * n + j] * gy[int64_t(i) * n + j];
      for (int i = 0; i < m; ++i)
        gs[int64_t(i) * n + j] += y[int64_t(i) * n + j] * (gy[int64_t(i) * n + j] - dot);
    }
  });
  return Var{&t, id};
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  Tape& t = *x.tape;
  const Tensor& tx = t.value(x);
  const int C = tx.shape.back();
  if (t.value(gamma).numel() != C || t.value(beta).numel() != C)
    fail(ErrCode::ShapeMismatch, "layer_norm: gamma/beta must have C entries");
  const int64_t rows = tx.numel() / C;
  Tensor out(tx.shape);
  auto xhat = std::make_shared<std::vector<double>>(tx.data.size());
  auto inv_sd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  const Tensor& tg = t.value(gamma);
  const Tensor& tb = t.value(beta);
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = tx.data.data() + r * C;
    double mu = 0;
    for (int c = 0; c < C; ++c) mu += xr[c];
    mu /= C;
    double var = 0;
    for (int c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= C;
    double isd = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[static_cast<size_t>(r)] = isd;
    for (int c = 0; c < C; ++c) {
      double xh = (xr[c] - mu) * isd;
      (*xhat)[static_cast<size_t>(r * C + c)] = xh;
      out[r * C + c] = tg[c] * xh + tb[c];
    }
  }
  int px = x.id, pg = gamma.id, pb = beta.id;
  int id = t.push(std::move(out), {px, pg, pb},
                  [px, pg, pb, rows, C, xhat, inv_sd](Tape& tp, int self) {
                    const double* gy = tp.node(self).grad.data();
                    const Tensor& tg = tp.node(pg).val;
                    double* gx = tp.grad_buf(px);
                    double* gg = tp.grad_buf(pg);
                    double* gb = tp.grad_buf(pb);
                    for (int64_t r = 0; r < rows; ++r) {
                      const double* gyr = gy + r * C;
                      const double* xh = xhat->data() + r * C;
                      double isd = (*inv_sd)[static_cast<size_t>(r)];
                      double sum_dxh = 0, sum_dxh_xh = 0;
                      for (int c = 0; c < C; ++c) {
                        double dxh = gyr[c] * tg[c];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[c];
                        if (gg) gg[c] += gyr[c] * xh[c];
                        if (gb) gb[c] += gyr[c];
                      }
                      if (gx) {
                        for (int c = 0; c < C; ++c) {
                          double dxh = gyr[c] * tg[c];
                          gx[r * C + c] +=
                              isd * (dxh - sum_dxh / C - xh[c] * sum_dxh_xh / C);
                        }
                      }
                    }
                  });
  return Var{&t, id};
}

Var reduce_sum(Var a) {
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  double s = 0;
  for (int64_t i = 0; i < ta.numel(); ++i) s += ta[i];
  int pa = a.id;
  int id = t.push(Tensor::scalar(s), {pa}, [pa](Tape& tp, int self) {
    double g = tp.node(self).grad[0];
    double* ga = tp.grad_buf(pa);
    if (!ga) return;
    int64_t n = tp.node(pa).val.numel();
    for (int64_t i = 0; i < n; ++i) ga[i] += g;
  });
  return Var{&t, id};
}

Var reduce_mean(Var a) {
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  const int64_t n = ta.numel();
  double s = 0;
  for (int64_t i = 0; i < n; ++i) s += ta[i];
  s /= static_cast<double>(n);
  int pa = a.id;
  int id = t.push(Tensor::scalar(s), {pa}, [pa, n](Tape& tp, int self) {
    double g = tp.node(self).grad[0] / static_cast<double>(n);
    double* ga = tp.grad_buf(pa);
    if (!ga) return;
    for (int64_t i = 0; i < n; ++i) ga[i] += g;
  });
  return Var{&t, id};
}

// ---------------- shape ops ----------------

Var slice_channels(Var x, int c0, int c1) {
  Tape& t = *x.tape;
  const Tensor& tx = t.value(x);
  const int C = tx.shape.back();
  if (c0 < 0 || c1 > C || c0 >= c1) fail(ErrCode::IndexOutOfRange, "bad channel slice");
  const int w = c1 - c0;
  std::vector<int> oshape = tx.shape;
  oshape.back() = w;
  const int64_t rows = tx.numel() / C;
  Tensor out(oshape);
  for (int64_t r = 0; r < rows; ++r)
    std::memcpy(out.data.data() + r * w, tx.data.data() + r * C + c0, sizeof(double) * size_t(w));
  int px = x.id;
  int id = t.push(std::move(out), {px}, [px, c0, w, C, rows](Tape& tp, int self) {
    const double* gy = tp.node(self).grad.data();
    double* gx = tp.grad_buf(px);
    if (!gx) return;
    for (int64_t r = 0; r < rows; ++r) axpy(gx + r * C + c0, gy + r * w, w);
  });
  return Var{&t, id};
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) fail(ErrCode::InvalidParam, "concat of nothing");
  Tape& t = *xs[0].tape;
  std::vector<int> base = t.value(xs[0]).shape;
  int ctotal = 0;
  for (const Var& v : xs) {
    check_same_tape(xs[0], v);
    const Tensor& tv = t.value(v);
    if (tv.ndim() != static_cast<int>(base.size()))
      fail(ErrCode::ShapeMismatch, "concat rank mismatch");
    for (size_t d = 0; d + 1 < base.size(); ++d)
      if (tv.shape[d] != base[d]) fail(ErrCode::ShapeMismatch, "concat leading dims differ");
    ctotal += tv.shape.back();
  }
  std::vector<int> oshape = base;
  oshape.back() = ctotal;
  const int64_t rows = numel_of(oshape) / ctotal;
  Tensor out(oshape);
  std::vector<int> parents;
  std::vector<int> widths;
  for (const Var& v : xs) {
    parents.push_back(v.id);
    widths.push_back(t.value(v).shape.back());
  }
  {
    int off = 0;
    for (size_t k = 0; k < xs.size(); ++k) {
      const Tensor& tv = t.value(xs[k]);
      int w = widths[k];
      for (int64_t r = 0; r < rows; ++r)
        std::memcpy(out.data.data() + r * ctotal + off, tv.data.data() + r * w,
                    sizeof(double) * size_t(w));
      off += w;
    }
  }
  auto widths_sp = std::make_shared<std::vector<int>>(widths);
  auto parents_sp = std::make_shared<std::vector<int>>(parents);
  int id = t.push(std::move(out), parents, [widths_sp, parents_sp, rows, ctotal](Tape& tp, int self) {
    const double* gy = tp.node(self).grad.data();
    int off = 0;
    for (size_t k = 0; k < parents_sp->size(); ++k) {
      int w = (*widths_sp)[k];
      double* gx = tp.grad_buf((*parents_sp)[k]);
      if (gx)
        for (int64_t r = 0; r < rows; ++r) axpy(gx + r * w, gy + r * ctotal + off, w);
      off += w;
    }
  });
  return Var{&t, id};
}

Var reshape(Var x, std::vector<int> new_shape) {
  Tape& t = *x.tape;
  const Tensor& tx = t.value(x);
  if (numel_of(new_shape) != tx.numel())
    fail(ErrCode::ShapeMismatch, "reshape to incompatible size");
  Tensor out(new_shape, tx.data);
  int px = x.id;
  int id = t.push(std::move(out), {px}, [px](Tape& tp, int self) {
    const auto& sn = tp.node(self);
    double* gx = tp.grad_buf(px);
    if (gx) axpy(gx, sn.grad.data(), sn.val.numel());
  });
  return Var{&t, id};
}

Var avg_pool2(Var x) {
  Tape& t = *x.tape;
  const Tensor& tx = t.value(x);
  if (tx.ndim() != 3) fail(ErrCode::ShapeMismatch, "avg_pool2 expects [H,W,C]");
  const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
  if (H % 2 || W % 2) fail(ErrCode::OddSpatialSize, "avg_pool2 needs even H and W");
  const int Ho = H / 2, Wo = W / 2;
  Tensor out({Ho, Wo, C});
  for (int i = 0; i < Ho; ++i)
    for (int j = 0; j < Wo; ++j)
      for (int c = 0; c < C; ++c) {
        double s = tx[(int64_t(2 * i) * W + 2 * j) * C + c] +
                   tx[(int64_t(2 * i) * W + 2 * j + 1) * C + c] +
                   tx[(int64_t(2 * i + 1) * W + 2 * j) * C + c] +
                   tx[(int64_t(2 * i + 1) * W + 2 * j + 1) * C + c];
        out[(int64_t(i) * Wo + j) * C + c] = 0.25 * s;
      }
  int px = x.id;
  int id = t.push(std::move(out), {px}, [px, Ho, Wo, W, C](Tape& tp, int self) {
    const double* gy = tp.node(self).grad.data();
    double* gx = tp.grad_buf(px);
    if (!gx) return;
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j)
        for (int c = 0; c < C; ++c) {
          double g = 0.25 * gy[(int64_t(i) * Wo + j) * C + c];
          gx[(int64_t(2 * i) * W + 2 * j) * C + c] += g;
          gx[(int64_t(2 * i) * W + 2 * j + 1) * C + c] += g;
          gx[(int64_t(2 * i + 1) * W + 2 * j) * C + c] += g;
          gx[(int64_t(2 * i + 1) * W + 2 * j + 1) * C + c] += g;
        }
  });
  return Var{&t, id};
}

Var upsample2(Var x) {
  Tape& t = *x.tape;
  const Tensor& tx = t.value(x);
  if (tx.ndim() != 3) fail(ErrCode::ShapeMismatch, "upsample2 expects [H,W,C]");
  const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
  Tensor out({2 * H, 2 * W, C});
  for (int i = 0; i < 2 * H; ++i)
    for (int j = 0; j < 2 * W; ++j)
      for (int c = 0; c < C; ++c)
        out[(int64_t(i) * 2 * W + j) * C + c] = tx[(int64_t(i / 2) * W + j / 2) * C + c];
  int px = x.id;
  int id = t.push(std::move(out), {px}, [px, H, W, C](Tape& tp, int self) {
    const double* gy = tp.node(self).grad.data();
    double* gx = tp.grad_buf(px);
    if (!gx) return;
    for (int i = 0; i < 2 * H; ++i)
      for (int j = 0; j < 2 * W; ++j)
        for (int c = 0; c < C; ++c)
          gx[(int64_t(i / 2) * W + j / 2) * C + c] += gy[(int64_t(i) * 2 * W + j) * C + c];
  });
  return Var{&t, id};
}

Var mean_spatial(Var x) {
  Tape& t = *x.tape;
  const Tensor& tx = t.value(x);
  if (tx.ndim() != 3) fail(ErrCode::ShapeMismatch, "mean_spatial expects [H,W,C]");
  const int64_t hw = int64_t(tx.dim(0)) * tx.dim(1);
  const int C = tx.dim(2);
  Tensor out({C});
  for (int64_t p = 0; p < hw; ++p)
    for (int c = 0; c < C; ++c) out[c] += tx[p * C + c];
  for (int c = 0; c < C; ++c) out[c] /= static_cast<double>(hw);
  int px = x.id;
  int id = t.push(std::move(out), {px}, [px, hw, C](Tape& tp, int self) {
    const double* gy = tp.node(self).grad.data();
    double* gx = tp.grad_buf(px);
    if (!gx) return;
    for (int64_t p = 0; p < hw; ++p)
      for (int c = 0; c < C; ++c) gx[p * C + c] += gy[c] / static_cast<double>(hw);
  });
  return Var{&t, id};
}

Var cumsum(Var x) {
  Tape& t = *x.tape;
  const Tensor& tx = t.value(x);
  if (tx.ndim() != 1) fail(ErrCode::ShapeMismatch, "cumsum expects a vector");
  const int64_t n = tx.numel();
  Tensor out(tx.shape);
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    acc += tx[i];
    out[i] = acc;
  }
  int px = x.id;
  int id = t.push(std::move(out), {px}, [px, n](Tape& tp, int self) {
    const double* gy = tp.node(self).grad.data();
    double* gx = tp.grad_buf(px);
    if (!gx) return;
    double acc = 0;
    for (int64_t i = n - 1; i >= 0; --i) {
      acc += gy[i];
      gx[i] += acc;
    }
  });
  return Var{&t, id};
}

Var gather_pixels(Var x, const std::vector<std::pair<int, int>>& idx) {
  Tape& t = *x.tape;
  const Tensor& tx = t.value(x);
  if (tx.ndim() != 3) fail(ErrCode::ShapeMismatch, "gather_pixels expects [H,W,C]");
  const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
  const int n = static_cast<int>(idx.size());
  Tensor out({n, C});
  auto flat = std::make_shared<std::vector<int64_t>>();
  flat->reserve(idx.size());
  for (int i = 0; i < n; ++i) {
    auto [r, c] = idx[static_cast<size_t>(i)];
    if (r < 0 || r >= H || c < 0 || c >= W) fail(ErrCode::IndexOutOfRange, "pixel index");
    int64_t off = (int64_t(r) * W + c) * C;
    flat->push_back(off);
    std::memcpy(out.data.data() + int64_t(i) * C, tx.data.data() + off, sizeof(double) * size_t(C));
  }
  int px = x.id;
  int id = t.push(std::move(out), {px}, [px, flat, C, n](Tape& tp, int self) {
    const double* gy = tp.node(self).grad.data();
    double* gx = tp.grad_buf(px);
    if (!gx) return;
    for (int i = 0; i < n; ++i) axpy(gx + (*flat)[static_cast<size_t>(i)], gy + int64_t(i) * C, C);
  });
  return Var{&t, id};
}

// ---------------- rational spline ----------------

namespace {

// Cox-de Boor with value, d/dx and d/dknot over the active window.
// Slots s = 0..p map to basis index (span - p + s); window w = 0..2p+1 maps to
// knot index (span - p + w). Indicator boundaries are treated as constants,
// which matches the a.e. derivative for p >= 1.
struct BasisDerivs {
  int first = 0;  // span - p
  double n[kMaxSplineDegree + 1];
  double dx[kMaxSplineDegree + 1];
  double dt[kMaxSplineDegree + 1][2 * kMaxSplineDegree + 2];
};

void basis_with_derivs(const std::vector<double>& knots, int p, double x, BasisDerivs& out) {
  const int j = find_span(knots, p, x);
  out.first = j - p;
  const int nw = 2 * p + 2;

  double val[kMaxSplineDegree + 2] = {0};
  double vdx[kMaxSplineDegree + 2] = {0};
  double vdt[kMaxSplineDegree + 2][2 * kMaxSplineDegree + 2] = {{0}};
  val[p] = 1.0;

  double nval[kMaxSplineDegree + 2];
  double ndx[kMaxSplineDegree + 2];
  double ndt[kMaxSplineDegree + 2][2 * kMaxSplineDegree + 2];

  for (int q = 1; q <= p; ++q) {
    for (int s = 0; s <= p; ++s) {
      nval[s] = 0;
      ndx[s] = 0;
      std::memset(ndt[s], 0, sizeof(double) * size_t(nw));
    }
    for (int i = j - q; i <= j; ++i) {
      int s = i - (j - p);
      if (s < 0) continue;
      double acc = 0, accx = 0;
      double acct[2 * kMaxSplineDegree + 2] = {0};

      double dl = knots[size_t(i + q)] - knots[size_t(i)];
      if (dl > 0 && val[s] != 0.0) {
        double a = (x - knots[size_t(i)]) / dl;
        double da_dx = 1.0 / dl;
        double da_dti = (x - knots[size_t(i + q)]) / (dl * dl);
        double da_dtiq = -(x - knots[size_t(i)]) / (dl * dl);
        acc += a * val[s];
        accx += da_dx * val[s] + a * vdx[s];
        for (int w = 0; w < nw; ++w) acct[w] += a * vdt[s][w];
        acct[i - (j - p)] += da_dti * val[s];
        acct[i + q - (j - p)] += da_dtiq * val[s];
      } else if (dl > 0) {
        // value is zero but derivative chain may carry through
        double a = (x - knots[size_t(i)]) / dl;
        accx += a * vdx[s];
        for (int w = 0; w < nw; ++w) acct[w] += a * vdt[s][w];
      }

      if (s + 1 <= p) {
        double dr = knots[size_t(i + q + 1)] - knots[size_t(i) + 1];
        if (dr > 0) {
          double b = (knots[size_t(i + q + 1)] - x) / dr;
          double db_dx = -1.0 / dr;
          double db_dtiq1 = (x - knots[size_t(i) + 1]) / (dr * dr);
          double db_dti1 = (knots[size_t(i + q + 1)] - x) / (dr * dr);
          acc += b * val[s + 1];
          accx += db_dx * val[s + 1] + b * vdx[s + 1];
          for (int w = 0; w < nw; ++w) acct[w] += b * vdt[s + 1][w];
          acct[i + q + 1 - (j - p)] += db_dtiq1 * val[s + 1];
          acct[i + 1 - (j - p)] += db_dti1 * val[s + 1];
        }
      }
      nval[s] = acc;
      ndx[s] = accx;
      std::memcpy(ndt[s], acct, sizeof(double) * size_t(nw));
    }
    for (int s = 0; s <= p; ++s) {
      val[s] = nval[s];
      vdx[s] = ndx[s];
      std::memcpy(vdt[s], ndt[s], sizeof(double) * size_t(nw));
    }
  }
  for (int s = 0; s <= p; ++s) {
    out.n[s] = val[s];
    out.dx[s] = vdx[s];
    std::memcpy(out.dt[s], vdt[s], sizeof(double) * size_t(nw));
  }
}

}  // namespace

Var spline_rational(Var x, Var knots, Var ctrl, Var wts, int degree) {
  check_same_tape(x, knots);
  check_same_tape(x, ctrl);
  check_same_tape(x, wts);
  Tape& t = *x.tape;
  const Tensor& tx = t.value(x);
  const Tensor& tk = t.value(knots);
  const Tensor& tc = t.value(ctrl);
  const Tensor& tw = t.value(wts);
  const int p = degree;
  if (p < 0 || p > kMaxSplineDegree) fail(ErrCode::DegreeUnsupported, std::to_string(p));
  const int K = static_cast<int>(tk.numel());
  const int nb = K - p - 1;
  if (nb < 1) fail(ErrCode::InvalidParam, "too few knots for degree");
  if (tc.numel() != nb || tw.numel() != nb)
    fail(ErrCode::ShapeMismatch, "spline control/weight count must be knots - degree - 1");

  // forward through the matrix form (production path); backward uses the
  // derivative recursion
  BasisMatrix bm(p, tk.data);
  Tensor out(tx.shape);
  double vals[kMaxSplineDegree + 1];
  for (int64_t i = 0; i < tx.numel(); ++i) {
    int first = bm.active(tx[i], vals);
    double num = 0, den = 0;
    for (int s = 0; s <= p; ++s) {
      double nw = vals[s] * tw[first + s];
      num += nw * tc[first + s];
      den += nw;
    }
    if (!(den > 0)) fail(ErrCode::ZeroDenominator, "rational denominator vanished");
    out[i] = num / den;
  }

  int px = x.id, pk = knots.id, pc = ctrl.id, pw = wts.id;
  int id = t.push(std::move(out), {px, pk, pc, pw}, [px, pk, pc, pw, p](Tape& tp, int self) {
    const auto& sn = tp.node(self);
    const double* gy = sn.grad.data();
    const Tensor& tx = tp.node(px).val;
    const Tensor& tk = tp.node(pk).val;
    const Tensor& tc = tp.node(pc).val;
    const Tensor& tw = tp.node(pw).val;
    double* gx = tp.grad_buf(px);
    double* gk = tp.grad_buf(pk);
    double* gc = tp.grad_buf(pc);
    double* gw = tp.grad_buf(pw);
    const int nwin = 2 * p + 2;
    const int K = static_cast<int>(tk.numel());
    BasisDerivs bd;
    for (int64_t i = 0; i < tx.numel(); ++i) {
      double g = gy[i];
      if (g == 0.0) continue;
      basis_with_derivs(tk.data, p, tx[i], bd);
      double num = 0, den = 0, numx = 0, denx = 0;
      for (int s = 0; s <= p; ++s) {
        int bi = bd.first + s;
        double w = tw[bi], c = tc[bi];
        num += bd.n[s] * w * c;
        den += bd.n[s] * w;
        numx += bd.dx[s] * w * c;
        denx += bd.dx[s] * w;
      }
      double y = num / den;
      if (gx) gx[i] += g * (numx - y * denx) / den;
      for (int s = 0; s <= p; ++s) {
        int bi = bd.first + s;
        double w = tw[bi], c = tc[bi];
        if (gc) gc[bi] += g * bd.n[s] * w / den;
        if (gw) gw[bi] += g * bd.n[s] * (c - y) / den;
      }
      if (gk) {
        for (int wdx = 0; wdx < nwin; ++wdx) {
          int ki = bd.first + wdx;
          if (ki < 0 || ki >= K) continue;
          double dnum = 0, dden = 0;
          for (int s = 0; s <= p; ++s) {
            int bi = bd.first + s;
            dnum += bd.dt[s][wdx] * tw[bi] * tc[bi];
            dden += bd.dt[s][wdx] * tw[bi];
          }
          gk[ki] += g * (dnum - y * dden) / den;
        }
      }
    }
  });
  return Var{&t, id};
}

Var ncpg_knots_on_tape(Tape& t, Var raw_increments, int degree, double radius) {
  const Tensor& tr = t.value(raw_increments);
  if (tr.ndim() != 1 || tr.numel() < 1)
    fail(ErrCode::InvalidParam, "raw increments must be a non-empty vector");
  const int intervals = static_cast<int>(tr.numel());
  Var ends_lo = t.leaf(Tensor({degree + 1}, std::vector<double>(size_t(degree) + 1, -radius)));
  Var ends_hi = t.leaf(Tensor({degree + 1}, std::vector<double>(size_t(degree) + 1, radius)));
  if (intervals == 1) return concat_channels({ends_lo, ends_hi});
  Var s = cumsum(softplus_op(raw_increments));
  Var total = slice_channels(s, intervals - 1, intervals);
  Var head = slice_channels(s, 0, intervals - 1);
  Var interior = add_const(scale(divide(head, total), 2.0 * radius), -radius);
  return concat_channels({ends_lo, interior, ends_hi});
}

// ---------------- gradient checking ----------------

GradCheckReport grad_check(const TapeFn& f, const std::vector<Tensor>& inputs, double h,
                           double tol) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& in : inputs) vars.push_back(tape.leaf(in, true));
    Var out = f(tape, vars);
    if (tape.value(out).numel() != 1)
      fail(ErrCode::NonScalarOutput, "grad_check target must be scalar");
    tape.backward(out);
    for (Var v : vars) analytic.push_back(tape.grad(v));
  }

  auto eval = [&](const std::vector<Tensor>& pts) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(pts.size());
    for (const Tensor& in : pts) vars.push_back(tape.leaf(in, false));
    Var out = f(tape, vars);
    return tape.value(out)[0];
  };

  GradCheckReport rep;
  std::vector<Tensor> work = inputs;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (int64_t k = 0; k < inputs[i].numel(); ++k) {
      double orig = work[i][k];
      work[i][k] = orig + h;
      double fp = eval(work);
      work[i][k] = orig - h;
      double fm = eval(work);
      work[i][k] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      double a = analytic[i][k];
      double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++rep.coords_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_input = static_cast<int>(i);
        rep.worst_coord = k;
        rep.analytic_at_worst = a;
        rep.numeric_at_worst = numeric;
      }
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

// ---------------- op self-check registry ----------------

namespace {

std::vector<OpCheck>& registry_mut() {
  static std::vector<OpCheck> reg;
  return reg;
}

Tensor rnd(std::vector<int> shape, Rng& rng, double lo, double hi) {
  return Tensor::random_uniform(std::move(shape), rng, lo, hi);
}

// wraps a tensor-valued op into a scalar via a fixed random weighting
GradCheckReport check_scalarized(const std::function<Var(Tape&, const std::vector<Var>&)>& op,
                                 const std::vector<Tensor>& inputs, uint64_t seed,
                                 double tol = 1e-6) {
  Rng rng(seed ^ 0xabcdef);
  std::shared_ptr<Tensor> wts;  // created after first forward so the shape fits
  auto f = [op, &wts, &rng](Tape& tp, const std::vector<Var>& vs) {
    Var y = op(tp, vs);
    if (!wts) {
      wts = std::make_shared<Tensor>(tp.value(y).shape);
      for (auto& v : wts->data) v = rng.uniform(-1.0, 1.0);
    }
    Var w = tp.leaf(*wts, false);
    return reduce_sum(mul(y, w));
  };
  return grad_check(f, inputs, 1e-5, tol);
}

void register_builtin_checks() {
  auto reg = [](const std::string& name, std::function<GradCheckReport(uint64_t)> fn) {
    register_op_check(name, std::move(fn));
  };

  reg("add", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); },
                            {rnd({3, 4}, r, -1, 1), rnd({3, 4}, r, -1, 1)}, s);
  });
  reg("sub", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return sub(v[0], v[1]); },
                            {rnd({3, 4}, r, -1, 1), rnd({3, 4}, r, -1, 1)}, s);
  });
  reg("mul", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); },
                            {rnd({3, 4}, r, -1, 1), rnd({3, 4}, r, -1, 1)}, s);
  });
  reg("mul_broadcast", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); },
                            {rnd({1}, r, 0.5, 2), rnd({3, 4}, r, -1, 1)}, s);
  });
  reg("div", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return divide(v[0], v[1]); },
                            {rnd({3, 4}, r, -1, 1), rnd({3, 4}, r, 0.5, 2)}, s);
  });
  reg("scale", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return scale(v[0], -1.7); },
                            {rnd({3, 4}, r, -1, 1)}, s);
  });
  reg("matmul", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); },
                            {rnd({3, 4}, r, -1, 1), rnd({4, 2}, r, -1, 1)}, s);
  });
  reg("transpose", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return transpose(v[0]); },
                            {rnd({3, 4}, r, -1, 1)}, s);
  });
  reg("linear", [](uint64_t s) {
    Rng r(s);
    return check_scalarized(
        [](Tape&, const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); },
        {rnd({2, 3, 4}, r, -1, 1), rnd({4, 3}, r, -1, 1), rnd({3}, r, -1, 1)}, s);
  });
  reg("depthwise_conv_shared", [](uint64_t s) {
    Rng r(s);
    return check_scalarized(
        [](Tape&, const std::vector<Var>& v) { return depthwise_conv_shared(v[0], v[1]); },
        {rnd({5, 4, 2}, r, -1, 1), rnd({3, 3}, r, -1, 1)}, s);
  });
  reg("depthwise_conv", [](uint64_t s) {
    Rng r(s);
    return check_scalarized(
        [](Tape&, const std::vector<Var>& v) { return depthwise_conv(v[0], v[1]); },
        {rnd({5, 4, 2}, r, -1, 1), rnd({2, 3, 3}, r, -1, 1)}, s);
  });
  reg("spectral_conv", [](uint64_t s) {
    Rng r(s);
    return check_scalarized(
        [](Tape&, const std::vector<Var>& v) { return spectral_conv(v[0], v[1], v[2]); },
        {rnd({3, 3, 5}, r, -1, 1), rnd({2, 3}, r, -1, 1), rnd({2}, r, -1, 1)}, s);
  });
  reg("softmax_cols", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return softmax_cols(v[0]); },
                            {rnd({4, 3}, r, -2, 2)}, s);
  });
  reg("sigmoid", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return sigmoid(v[0]); },
                            {rnd({3, 4}, r, -2, 2)}, s);
  });
  reg("softplus", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return softplus_op(v[0]); },
                            {rnd({3, 4}, r, -2, 2)}, s);
  });
  reg("gelu", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return gelu(v[0]); },
                            {rnd({3, 4}, r, -2, 2)}, s);
  });
  reg("exp", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return exp_op(v[0]); },
                            {rnd({3, 4}, r, -1, 1)}, s);
  });
  reg("log", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return log_op(v[0]); },
                            {rnd({3, 4}, r, 0.5, 2)}, s);
  });
  reg("sin", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return sin_op(v[0]); },
                            {rnd({3, 4}, r, -3, 3)}, s);
  });
  reg("cos", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return cos_op(v[0]); },
                            {rnd({3, 4}, r, -3, 3)}, s);
  });
  reg("acos", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return acos_op(v[0]); },
                            {rnd({3, 4}, r, -0.8, 0.8)}, s);
  });
  reg("power", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return power(v[0], 1.7); },
                            {rnd({3, 4}, r, 0.5, 2)}, s);
  });
  reg("clamp", [](uint64_t s) {
    Rng r(s);
    return check_scalarized(
        [](Tape&, const std::vector<Var>& v) { return clamp_op(v[0], -1.0, 1.0); },
        {rnd({3, 4}, r, -2, 2)}, s);
  });
  reg("reduce_sum", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return reduce_sum(v[0]); },
                            {rnd({3, 4}, r, -1, 1)}, s);
  });
  reg("reduce_mean", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return reduce_mean(v[0]); },
                            {rnd({3, 4}, r, -1, 1)}, s);
  });
  reg("slice_channels", [](uint64_t s) {
    Rng r(s);
    return check_scalarized(
        [](Tape&, const std::vector<Var>& v) { return slice_channels(v[0], 1, 4); },
        {rnd({2, 3, 6}, r, -1, 1)}, s);
  });
  reg("concat_channels", [](uint64_t s) {
    Rng r(s);
    return check_scalarized(
        [](Tape&, const std::vector<Var>& v) {
          return concat_channels({v[0], v[1]});
        },
        {rnd({2, 3, 2}, r, -1, 1), rnd({2, 3, 3}, r, -1, 1)}, s);
  });
  reg("layer_norm", [](uint64_t s) {
    Rng r(s);
    return check_scalarized(
        [](Tape&, const std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2]); },
        {rnd({2, 2, 5}, r, -1, 1), rnd({5}, r, 0.5, 1.5), rnd({5}, r, -0.5, 0.5)}, s, 1e-5);
  });
  reg("avg_pool2", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return avg_pool2(v[0]); },
                            {rnd({4, 4, 3}, r, -1, 1)}, s);
  });
  reg("upsample2", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return upsample2(v[0]); },
                            {rnd({2, 3, 2}, r, -1, 1)}, s);
  });
  reg("mean_spatial", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return mean_spatial(v[0]); },
                            {rnd({3, 4, 2}, r, -1, 1)}, s);
  });
  reg("reshape", [](uint64_t s) {
    Rng r(s);
    return check_scalarized(
        [](Tape&, const std::vector<Var>& v) { return reshape(v[0], {3, 4}); },
        {rnd({2, 6}, r, -1, 1)}, s);
  });
  reg("cumsum", [](uint64_t s) {
    Rng r(s);
    return check_scalarized([](Tape&, const std::vector<Var>& v) { return cumsum(v[0]); },
                            {rnd({7}, r, -1, 1)}, s);
  });
  reg("gather_pixels", [](uint64_t s) {
    Rng r(s);
    return check_scalarized(
        [](Tape&, const std::vector<Var>& v) {
          return gather_pixels(v[0], {{0, 1}, {2, 3}, {0, 1}});
        },
        {rnd({3, 4, 2}, r, -1, 1)}, s);
  });
  reg("spline_rational", [](uint64_t s) {
    Rng r(s);
    const int p = 3;
    const int intervals = 9;  // 8 interior knots
    const int nb = p + intervals;
    const double radius = 4.0;
    return check_scalarized(
        [p, intervals, radius](Tape& tp, const std::vector<Var>& v) {
          Var knots = ncpg_knots_on_tape(tp, v[1], p, radius);
          (void)intervals;
          return spline_rational(v[0], knots, v[2], v[3], p);
        },
        {rnd({2, 3}, r, -0.8 * radius, 0.8 * radius), rnd({intervals}, r, -1, 1),
         rnd({nb}, r, -1, 1), rnd({nb}, r, 0.5, 1.5)},
        s, 1e-5);
  });
}

}  // namespace

void register_op_check(const std::string& name, std::function<GradCheckReport(uint64_t)> run) {
  registry_mut().push_back(OpCheck{name, std::move(run)});
}

const std::vector<OpCheck>& op_registry() {
  static bool built = [] {
    register_builtin_checks();
    return true;
  }();
  (void)built;
  return registry_mut();
}

// ---------------- parameters and Adam ----------------

Param* ParamGroup::add(const std::string& name, Tensor init) {
  params_.push_back(std::make_unique<Param>(Param{name, std::move(init)}));
  return params_.back().get();
}

int64_t ParamGroup::count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

Param* ParamGroup::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

Var Binder::operator()(Param* p) {
  for (const auto& [q, v] : overrides_)
    if (q == p) return v;
  for (const auto& [q, v] : bound_)
    if (q == p) return v;
  Var v = tape_->leaf(p->value, requires_grad_);
  bound_.push_back({p, v});
  return v;
}

double cosine_lr(double lr_init, int64_t t, int64_t horizon) {
  if (horizon < 1) horizon = 1;
  double frac = static_cast<double>(t) / static_cast<double>(horizon);
  return lr_init * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

void AdamState::attach(const std::vector<ParamGroup*>& groups) {
  order_.clear();
  m.clear();
  v.clear();
  for (ParamGroup* g : groups)
    for (const auto& p : g->params()) {
      order_.push_back(p.get());
      m.emplace_back(p->value.data.size(), 0.0);
      v.emplace_back(p->value.data.size(), 0.0);
    }
}

void AdamState::step(const Tape& tape, const Binder& binder) {
  std::unordered_map<Param*, size_t> index;
  index.reserve(order_.size());
  for (size_t i = 0; i < order_.size(); ++i) index[order_[i]] = i;

  ++step_count;
  const double lr = cosine_lr(lr_init, step_count - 1, horizon);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));

  for (const auto& [param, var] : binder.bound()) {
    auto it = index.find(param);
    if (it == index.end()) continue;  // not owned by this optimizer
    size_t pi = it->second;
    const auto& node = tape.node(var.id);
    auto& mi = m[pi];
    auto& vi = v[pi];
    auto& vals = param->value.data;
    const double* g = node.grad.empty() ? nullptr : node.grad.data();
    for (size_t k = 0; k < vals.size(); ++k) {
      double gk = g ? g[k] : 0.0;
      mi[k] = beta1 * mi[k] + (1.0 - beta1) * gk;
      vi[k] = beta2 * vi[k] + (1.0 - beta2) * gk * gk;
      double mhat = mi[k] / bc1;
      double vhat = vi[k] / bc2;
      vals[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace nukes
