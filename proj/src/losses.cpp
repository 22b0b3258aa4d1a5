#include "nukes/losses.hpp"

#include <cmath>

namespace nukes {

void LossWeights::validate() const {
  if (cycle < 0 || non_degraded < 0 || adversarial < 0 || spectral < 0 || geometric < 0)
    fail(ErrCode::ConfigInvalid, "loss weights must be non-negative");
}

Var mse(Var a, Var b) { return reduce_mean(power(sub(a, b), 2.0)); }

Var cycle_loss(Var x, Var y_hat, Var x_r, Var y_hat_r) {
  return add(mse(x_r, x), mse(y_hat_r, y_hat));
}

namespace {

constexpr double kCosClamp = 1.0 - 1e-7;

Var norm_of(Var v) {
  double n2 = 0;
  const Tensor& tv = v.tape->value(v);
  for (int64_t i = 0; i < tv.numel(); ++i) n2 += tv[i] * tv[i];
  if (n2 <= 0) fail(ErrCode::ZeroVector, "contrastive code has zero norm");
  return power(reduce_sum(power(v, 2.0)), 0.5);
}

Var cosine_of(Var u, Var v) {
  Var dot = reduce_sum(mul(u, v));
  Var cosv = divide(dot, mul(norm_of(u), norm_of(v)));
  return clamp_op(cosv, -kCosClamp, kCosClamp);
}

// shared InfoNCE skeleton: -log(s+ / (s+ + sum s-))
Var info_nce(Var s_pos, const std::vector<Var>& s_negs) {
  Var total = s_pos;
  for (Var s : s_negs) total = add(total, s);
  return sub(log_op(total), log_op(s_pos));
}

}  // namespace

Var spectral_contrastive(const PatchCodes& codes) {
  const double inv_tau = 1.0 / codes.tau_spectral;
  auto sim = [&](Var u, Var v) { return exp_op(scale(acos_op(cosine_of(u, v)), -inv_tau)); };
  Var s_pos = sim(codes.query, codes.positive);
  std::vector<Var> s_negs;
  s_negs.reserve(codes.negatives.size());
  for (Var n : codes.negatives) s_negs.push_back(sim(codes.query, n));
  return info_nce(s_pos, s_negs);
}

Var geometric_contrastive(const PatchCodes& codes) {
  const double inv_tau = 1.0 / codes.tau_geometric;
  auto sim = [&](Var u, Var v) { return exp_op(scale(cosine_of(u, v), inv_tau)); };
  Var s_pos = sim(codes.query, codes.positive);
  std::vector<Var> s_negs;
  s_negs.reserve(codes.negatives.size());
  for (Var n : codes.negatives) s_negs.push_back(sim(codes.query, n));
  return info_nce(s_pos, s_negs);
}

std::vector<PatchCodes> dcpm_sample(Tape& t, Var codes_a, Var codes_b, int n_patches,
                                    int n_negatives, uint64_t seed) {
  const Tensor& ta = t.value(codes_a);
  const Tensor& tb = t.value(codes_b);
  if (ta.ndim() != 3 || !ta.same_shape(tb))
    fail(ErrCode::ShapeMismatch, "code maps must be [H,W,C] with equal shapes");
  const int H = ta.dim(0), W = ta.dim(1), Cf = ta.dim(2);
  const int64_t hw = int64_t(H) * W;
  if (hw < n_patches || (n_negatives > 0 && hw < 2))
    fail(ErrCode::TooFewPatches, "feature map too small for the requested patches");

  Rng rng(seed);
  // distinct query positions via partial Fisher-Yates
  std::vector<int64_t> perm(static_cast<size_t>(hw));
  for (int64_t i = 0; i < hw; ++i) perm[static_cast<size_t>(i)] = i;
  for (int i = 0; i < n_patches; ++i) {
    int64_t j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(hw - i)));
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }

  struct NegRef {
    int domain;  // 0 = A, 1 = B
    int64_t pos;
  };
  std::vector<int64_t> q_idx(static_cast<size_t>(n_patches));
  std::vector<std::vector<NegRef>> negs(static_cast<size_t>(n_patches));
  std::vector<std::pair<int, int>> gather_a, gather_b;
  std::vector<int> row_a(static_cast<size_t>(n_patches)), row_b(static_cast<size_t>(n_patches));

  auto rc = [&](int64_t p) { return std::make_pair(int(p / W), int(p % W)); };

  for (int i = 0; i < n_patches; ++i) {
    int64_t q = perm[static_cast<size_t>(i)];
    q_idx[static_cast<size_t>(i)] = q;
    row_a[static_cast<size_t>(i)] = static_cast<int>(gather_a.size());
    gather_a.push_back(rc(q));
    row_b[static_cast<size_t>(i)] = static_cast<int>(gather_b.size());
    gather_b.push_back(rc(q));
  }
  std::vector<std::vector<int>> neg_rows(static_cast<size_t>(n_patches));
  std::vector<std::vector<int>> neg_dom(static_cast<size_t>(n_patches));
  for (int i = 0; i < n_patches; ++i) {
    int64_t q = q_idx[static_cast<size_t>(i)];
    for (int k = 0; k < n_negatives; ++k) {
      int dom = static_cast<int>(rng.below(2));
      int64_t p = static_cast<int64_t>(rng.below(static_cast<uint64_t>(hw - 1)));
      if (p >= q) ++p;  // never the query index
      auto& gv = dom == 0 ? gather_a : gather_b;
      neg_dom[static_cast<size_t>(i)].push_back(dom);
      neg_rows[static_cast<size_t>(i)].push_back(static_cast<int>(gv.size()));
      gv.push_back(rc(p));
    }
  }

  // two gathers, then per-code column slices
  Var ga = gather_pixels(codes_a, gather_a);  // [na, Cf]
  Var gb = gather_pixels(codes_b, gather_b);
  Var gat = transpose(ga);  // [Cf, na]
  Var gbt = transpose(gb);
  auto code_at = [&](int domain, int row) {
    Var src = domain == 0 ? gat : gbt;
    return reshape(slice_channels(src, row, row + 1), {Cf});
  };

  std::vector<PatchCodes> out;
  out.reserve(static_cast<size_t>(n_patches));
  for (int i = 0; i < n_patches; ++i) {
    PatchCodes pc;
    pc.query = code_at(0, row_a[static_cast<size_t>(i)]);
    pc.positive = code_at(1, row_b[static_cast<size_t>(i)]);
    for (int k = 0; k < n_negatives; ++k)
      pc.negatives.push_back(code_at(neg_dom[static_cast<size_t>(i)][static_cast<size_t>(k)],
                                     neg_rows[static_cast<size_t>(i)][static_cast<size_t>(k)]));
    out.push_back(std::move(pc));
  }
  return out;
}

Var mean_loss(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) return t.constant(0.0);
  Var acc = parts[0];
  for (size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
  return scale(acc, 1.0 / static_cast<double>(parts.size()));
}

namespace {

constexpr double kScoreEps = 1e-7;

Var mean_log(Var scores) { return reduce_mean(log_op(clamp_op(scores, kScoreEps, 1.0 - kScoreEps))); }

Var mean_log_one_minus(Var scores) {
  Var flipped = add_const(scale(scores, -1.0), 1.0);
  return reduce_mean(log_op(clamp_op(flipped, kScoreEps, 1.0 - kScoreEps)));
}

}  // namespace

AdvLoss adversarial_loss(Tape& t, Binder& disc_bind, const Discriminator& d_h,
                         const Discriminator& d_r, Var real_x, Var real_y_hat, Var fake_x_hat_f,
                         Var fake_y_f) {
  Var dh_real = d_h.forward(t, disc_bind, real_x);
  Var dh_fake = d_h.forward(t, disc_bind, fake_x_hat_f);
  Var dr_real = d_r.forward(t, disc_bind, real_y_hat);
  Var dr_fake = d_r.forward(t, disc_bind, fake_y_f);

  AdvLoss out;
  out.disc_term = add(add(mean_log(dh_real), mean_log_one_minus(dh_fake)),
                      add(mean_log(dr_real), mean_log_one_minus(dr_fake)));
  out.gen_term = scale(add(mean_log(dh_fake), mean_log(dr_fake)), -1.0);
  return out;
}

Var non_degraded_loss(Tape& t, Binder& bind, const Generator& g_rh, const Generator& g_hr,
                      Var x, Var y_hat) {
  Var xr = g_rh.bypass_forward(t, bind, x);
  Var yr = g_hr.bypass_forward(t, bind, y_hat);
  return add(mse(xr, x), mse(yr, y_hat));
}

Var total_loss(Tape& t, const LossParts& parts, const LossWeights& w) {
  w.validate();
  (void)t;
  Var acc = scale(parts.cycle, w.cycle);
  acc = add(acc, scale(parts.non_degraded, w.non_degraded));
  acc = add(acc, scale(parts.adversarial, w.adversarial));
  acc = add(acc, scale(parts.spectral, w.spectral));
  acc = add(acc, scale(parts.geometric, w.geometric));
  return acc;
}

}  // namespace nukes
