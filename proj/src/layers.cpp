#include "nukes/layers.hpp"

#include <cmath>

#include "nukes/spline.hpp"

namespace nukes {

Tensor init_normal(std::vector<int> shape, Rng& rng, double stddev) {
  return Tensor::random_normal(std::move(shape), rng, stddev);
}

Tensor init_const(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  for (auto& e : t.data) e = v;
  return t;
}

namespace {

// softplus(x) = 1 at this raw value, used to initialize weight/frequency params
constexpr double kSoftplusInvOne = 0.5413248546129181;

}  // namespace

// ---------------- Gabor kernels ----------------

Tensor gabor_kernel(double f, double theta, double sigma, int k, bool alt_form) {
  if (!(f > 0) || !(sigma > 0) || k < 1 || k % 2 == 0)
    fail(ErrCode::InvalidParam, "gabor kernel needs f>0, sigma>0, odd k");
  Tensor ker({k, k});
  const int r = k / 2;
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int yi = -r; yi <= r; ++yi)
    for (int xi = -r; xi <= r; ++xi) {
      double xt = xi * ct + yi * st;
      double yt = -xi * st + yi * ct;
      double t2 = alt_form ? (yt / f) * (yt / f) : (yt * yt / f) * (yt * yt / f);
      ker[int64_t(yi + r) * k + (xi + r)] = std::exp(-(xt * xt + t2) / (2.0 * sigma * sigma));
    }
  return ker;
}

Var gabor_kernel_on_tape(Tape& t, Var f, Var theta, double sigma, int k, bool alt_form) {
  if (k < 1 || k % 2 == 0) fail(ErrCode::InvalidParam, "kernel size must be odd");
  if (t.value(f).numel() != 1 || t.value(theta).numel() != 1)
    fail(ErrCode::ShapeMismatch, "f and theta must be scalars");
  if (!(t.value(f)[0] > 0)) fail(ErrCode::InvalidParam, "frequency must be positive");
  const int r = k / 2;
  Tensor gx({k, k}), gy({k, k});
  for (int yi = -r; yi <= r; ++yi)
    for (int xi = -r; xi <= r; ++xi) {
      gx[int64_t(yi + r) * k + (xi + r)] = xi;
      gy[int64_t(yi + r) * k + (xi + r)] = yi;
    }
  Var xg = t.leaf(gx), yg = t.leaf(gy);
  Var ct = cos_op(theta), st = sin_op(theta);
  Var xt = add(mul(ct, xg), mul(st, yg));
  Var yt = add(mul(scale(st, -1.0), xg), mul(ct, yg));
  Var t2 = alt_form ? power(divide(yt, f), 2.0) : power(divide(power(yt, 2.0), f), 2.0);
  return exp_op(scale(add(power(xt, 2.0), t2), -1.0 / (2.0 * sigma * sigma)));
}

// ---------------- Nukes FFN ----------------

NukesFfn::NukesFfn(ParamGroup& pg, const std::string& prefix, const BlockConfig& cfg,
                   Rng& rng)
    : cfg_(cfg) {
  const int C = cfg.channels;
  const int nb = cfg.basis_count();

  // control points start on the Greville abscissae of a uniform clamped knot
  // vector, so each spline begins close to the identity curve
  NcpgRaw uni;
  uni.knot_increments.assign(static_cast<size_t>(cfg.knot_intervals()), 0.0);
  NcpgResult uniform = ncpg_generate(uni, cfg.degree, cfg.radius);
  std::vector<double> greville(static_cast<size_t>(nb), 0.0);
  for (int i = 0; i < nb; ++i) {
    double s = 0;
    for (int j = 1; j <= cfg.degree; ++j) s += uniform.knots[static_cast<size_t>(i + j)];
    greville[static_cast<size_t>(i)] = cfg.degree > 0 ? s / cfg.degree : uniform.knots[static_cast<size_t>(i)];
  }

  for (int c = 0; c < C; ++c) {
    std::string cs = prefix + ".ch" + std::to_string(c);
    if (!cfg.traditional_kan) {
      knot_raw_.push_back(pg.add(cs + ".knot_raw", init_const({cfg.knot_intervals()}, 0.0)));
      wts_raw_.push_back(pg.add(cs + ".wts_raw", init_const({nb}, kSoftplusInvOne)));
    }
    Tensor ctrl({nb});
    for (int i = 0; i < nb; ++i)
      ctrl[i] = greville[static_cast<size_t>(i)] + 0.05 * rng.normal();
    ctrl_.push_back(pg.add(cs + ".ctrl", std::move(ctrl)));
  }
  alpha_ = pg.add(prefix + ".alpha", init_const({1}, 0.1));
  mix_w_ = pg.add(prefix + ".mix_w", init_normal({C, C}, rng, 1.0 / std::sqrt(double(C))));
  mix_b_ = pg.add(prefix + ".mix_b", init_const({C}, 0.0));
  spec_w_ = pg.add(prefix + ".spec_w", init_normal({2, 3}, rng, 0.3));
  spec_b_ = pg.add(prefix + ".spec_b", init_const({2}, 0.0));
}

Var NukesFfn::forward(Tape& t, Binder& bind, Var x) const {
  const Tensor& tx = t.value(x);
  if (tx.ndim() != 3 || tx.dim(2) != cfg_.channels)
    fail(ErrCode::ShapeMismatch, "ffn expects [H,W," + std::to_string(cfg_.channels) + "]");
  const int C = cfg_.channels;

  Var xc = clamp_op(x, -cfg_.radius, cfg_.radius);
  std::vector<Var> parts;
  parts.reserve(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) {
    Var xs = slice_channels(xc, c, c + 1);
    Var knots, wts;
    if (cfg_.traditional_kan) {
      NcpgRaw uni;
      uni.knot_increments.assign(static_cast<size_t>(cfg_.knot_intervals()), 0.0);
      NcpgResult g = ncpg_generate(uni, cfg_.degree, cfg_.radius);
      knots = t.leaf(Tensor({static_cast<int>(g.knots.size())}, g.knots));
      wts = t.leaf(init_const({cfg_.basis_count()}, 1.0));
    } else {
      knots = ncpg_knots_on_tape(t, bind(knot_raw_[static_cast<size_t>(c)]), cfg_.degree,
                                 cfg_.radius);
      wts = softplus_op(bind(wts_raw_[static_cast<size_t>(c)]));
    }
    parts.push_back(spline_rational(xs, knots, bind(ctrl_[static_cast<size_t>(c)]), wts,
                                    cfg_.degree));
  }
  Var nuk = mul(bind(alpha_), linear(concat_channels(parts), bind(mix_w_), bind(mix_b_)));

  Var sc = spectral_conv(x, bind(spec_w_), bind(spec_b_));
  Var up = slice_channels(sc, 0, C);
  Var dw = slice_channels(sc, C, 2 * C);
  return add(nuk, mul(up, sigmoid(dw)));
}

// ---------------- G-MSA ----------------

Gmsa::Gmsa(ParamGroup& pg, const std::string& prefix, const BlockConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  const int C = cfg.channels;
  if (cfg.heads < 1 || C % cfg.heads != 0)
    fail(ErrCode::InvalidParam, "channel dim must be divisible by head count");
  const double ws = 1.0 / std::sqrt(double(C));
  wq_ = pg.add(prefix + ".wq", init_normal({C, C}, rng, ws));
  wk_ = pg.add(prefix + ".wk", init_normal({C, C}, rng, ws));
  wv_ = pg.add(prefix + ".wv", init_normal({C, C}, rng, ws));
  if (cfg.use_gabor) {
    const int M = cfg.gabor_kernels;
    freq_w_ = pg.add(prefix + ".freq_w", init_normal({C, M}, rng, 0.1 * ws));
    freq_b_ = pg.add(prefix + ".freq_b", init_const({M}, kSoftplusInvOne));
    Tensor th({M});
    for (int m = 0; m < M; ++m) th[m] = 3.14159265358979323846 * m / M;
    theta_ = pg.add(prefix + ".theta", std::move(th));
    out_w_ = pg.add(prefix + ".out_w", init_normal({C * M, C}, rng, 1.0 / std::sqrt(double(C * M))));
    out_b_ = pg.add(prefix + ".out_b", init_const({C}, 0.0));
  }
}

Var Gmsa::msa_branch(Tape& t, Binder& bind, Var x) const {
  const Tensor& tx = t.value(x);
  const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
  Var xf = reshape(x, {H * W, C});
  Var q = matmul(xf, bind(wq_));
  Var k = matmul(xf, bind(wk_));
  Var v = matmul(xf, bind(wv_));
  const int d = C / cfg_.heads;
  std::vector<Var> outs;
  outs.reserve(static_cast<size_t>(cfg_.heads));
  for (int h = 0; h < cfg_.heads; ++h) {
    Var qh = cfg_.heads == 1 ? q : slice_channels(q, h * d, (h + 1) * d);
    Var kh = cfg_.heads == 1 ? k : slice_channels(k, h * d, (h + 1) * d);
    Var vh = cfg_.heads == 1 ? v : slice_channels(v, h * d, (h + 1) * d);
    Var a = softmax_cols(matmul(transpose(kh), qh));
    outs.push_back(matmul(vh, a));
  }
  Var msa = cfg_.heads == 1 ? outs[0] : concat_channels(outs);
  return reshape(msa, {H, W, C});
}

Var Gmsa::gabor_branch(Tape& t, Binder& bind, Var v, Var context) const {
  if (!cfg_.use_gabor) fail(ErrCode::InvalidParam, "gabor branch disabled");
  const Tensor& tv = t.value(v);
  const int C = tv.dim(2);
  const int M = cfg_.gabor_kernels;

  // dynamic frequencies from spatially pooled context
  Var ctx = mean_spatial(context);                       // [C]
  Var f = softplus_op(add(reshape(matmul(reshape(ctx, {1, C}), bind(freq_w_)), {M}),
                          bind(freq_b_)));               // [M]
  Var th = bind(theta_);

  std::vector<Var> taps;
  taps.reserve(static_cast<size_t>(M));
  for (int m = 0; m < M; ++m) {
    Var fm = slice_channels(f, m, m + 1);
    Var tm = slice_channels(th, m, m + 1);
    Var ker = gabor_kernel_on_tape(t, fm, tm, cfg_.gabor_sigma, cfg_.gabor_size,
                                   cfg_.gabor_alt_form);
    taps.push_back(depthwise_conv_shared(v, ker));
  }
  Var vf = concat_channels(taps);  // [H,W,C*M]
  return linear(gelu(vf), bind(out_w_), bind(out_b_));
}

Var Gmsa::forward(Tape& t, Binder& bind, Var x) const {
  const Tensor& tx = t.value(x);
  if (tx.ndim() != 3 || tx.dim(2) != cfg_.channels)
    fail(ErrCode::ShapeMismatch, "gmsa expects [H,W," + std::to_string(cfg_.channels) + "]");
  const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);

  Var xf = reshape(x, {H * W, C});
  Var v = matmul(xf, bind(wv_));
  Var q = matmul(xf, bind(wq_));
  Var k = matmul(xf, bind(wk_));
  const int d = C / cfg_.heads;
  std::vector<Var> outs;
  outs.reserve(static_cast<size_t>(cfg_.heads));
  for (int h = 0; h < cfg_.heads; ++h) {
    Var qh = cfg_.heads == 1 ? q : slice_channels(q, h * d, (h + 1) * d);
    Var kh = cfg_.heads == 1 ? k : slice_channels(k, h * d, (h + 1) * d);
    Var vh = cfg_.heads == 1 ? v : slice_channels(v, h * d, (h + 1) * d);
    Var a = softmax_cols(matmul(transpose(kh), qh));
    outs.push_back(matmul(vh, a));
  }
  Var msa = reshape(cfg_.heads == 1 ? outs[0] : concat_channels(outs), {H, W, C});
  if (!cfg_.use_gabor) return msa;
  Var fry = gabor_branch(t, bind, reshape(v, {H, W, C}), x);
  return add(msa, fry);
}

// ---------------- Nuk-MSA block ----------------

NukMsaBlock::NukMsaBlock(ParamGroup& pg, const std::string& prefix, const BlockConfig& cfg,
                         Rng& rng)
    : gmsa_(pg, prefix + ".gmsa", cfg, rng), ffn_(pg, prefix + ".ffn", cfg, rng) {
  const int C = cfg.channels;
  ln1_g_ = pg.add(prefix + ".ln1_g", init_const({C}, 1.0));
  ln1_b_ = pg.add(prefix + ".ln1_b", init_const({C}, 0.0));
  ln2_g_ = pg.add(prefix + ".ln2_g", init_const({C}, 1.0));
  ln2_b_ = pg.add(prefix + ".ln2_b", init_const({C}, 0.0));
}

Var NukMsaBlock::forward(Tape& t, Binder& bind, Var x) const {
  Var y = add(x, gmsa_.forward(t, bind, layer_norm(x, bind(ln1_g_), bind(ln1_b_))));
  Var z = add(y, ffn_.forward(t, bind, layer_norm(y, bind(ln2_g_), bind(ln2_b_))));
  return z;
}

}  // namespace nukes
