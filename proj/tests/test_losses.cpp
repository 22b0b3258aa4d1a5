#include <cmath>

#include "doctest.h"
#include "nukes/losses.hpp"

using namespace nukes;

namespace {

Var leafv(Tape& t, std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return t.leaf(Tensor({n}, std::move(v)));
}

}  // namespace

TEST_CASE("cycle loss anchors") {
  Rng rng(1);
  Tensor x = Tensor::random_uniform({3, 3, 4}, rng, 0, 1);
  Tensor y = Tensor::random_uniform({3, 3, 2}, rng, 0, 1);

  // identity round trip gives zero
  {
    Tape t;
    Var l = cycle_loss(t.leaf(x), t.leaf(y), t.leaf(x), t.leaf(y));
    CHECK(t.value(l)[0] == 0.0);
  }
  // X_r = X + 1 contributes exactly 1 per element
  {
    Tensor xr = x;
    for (auto& v : xr.data) v += 1.0;
    Tape t;
    Var l = cycle_loss(t.leaf(x), t.leaf(y), t.leaf(xr), t.leaf(y));
    CHECK(t.value(l)[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  // invariant under a common permutation of both tensors in a term
  {
    Tensor xr = Tensor::random_uniform({3, 3, 4}, rng, 0, 1);
    Tensor xp = x, xrp = xr;
    std::reverse(xp.data.begin(), xp.data.end());
    std::reverse(xrp.data.begin(), xrp.data.end());
    Tape t;
    Var a = cycle_loss(t.leaf(x), t.leaf(y), t.leaf(xr), t.leaf(y));
    Var b = cycle_loss(t.leaf(xp), t.leaf(y), t.leaf(xrp), t.leaf(y));
    CHECK(t.value(a)[0] == doctest::Approx(t.value(b)[0]).epsilon(1e-12));
  }
}

TEST_CASE("spectral contrastive scalar anchors") {
  // no negatives: -log(1) = 0
  {
    Tape t;
    PatchCodes pc;
    pc.query = leafv(t, {1, 2, 3});
    pc.positive = leafv(t, {2, 4, 6});
    Var l = spectral_contrastive(pc);
    CHECK(std::abs(t.value(l)[0]) < 1e-12);
  }
  // parallel positive, orthogonal negative, tau 1:
  // loss = -log(1 / (1 + e^{-pi/2})) = log(1 + e^{-pi/2})
  {
    Tape t;
    PatchCodes pc;
    pc.tau_spectral = 1.0;
    pc.query = leafv(t, {1, 0});
    pc.positive = leafv(t, {2, 0});
    pc.negatives = {leafv(t, {0, 1})};
    Var l = spectral_contrastive(pc);
    double expect = std::log(1.0 + std::exp(-3.14159265358979323846 / 2.0));
    // the arccos argument clamp shifts the parallel-pair angle by ~4.5e-4 rad
    CHECK(t.value(l)[0] == doctest::Approx(expect).epsilon(1e-3));
    CHECK(expect == doctest::Approx(0.1889).epsilon(1e-3));
  }
  // equal similarity everywhere: log(N+1)
  {
    Tape t;
    PatchCodes pc;
    pc.query = leafv(t, {1, 1});
    pc.positive = leafv(t, {1, 1});
    pc.negatives = {leafv(t, {2, 2}), leafv(t, {3, 3}), leafv(t, {0.5, 0.5})};
    Var l = spectral_contrastive(pc);
    CHECK(t.value(l)[0] == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  }
  // zero codes are rejected
  {
    Tape t;
    PatchCodes pc;
    pc.query = leafv(t, {0, 0});
    pc.positive = leafv(t, {1, 1});
    CHECK_THROWS_AS(spectral_contrastive(pc), Error);
  }
}

TEST_CASE("geometric contrastive scalar anchors") {
  // no negatives
  {
    Tape t;
    PatchCodes pc;
    pc.query = leafv(t, {1, 2});
    pc.positive = leafv(t, {1, 2});
    Var l = geometric_contrastive(pc);
    CHECK(std::abs(t.value(l)[0]) < 1e-12);
  }
  // f+ = f, negative = -f, tau = 1: -log(e / (e + 1/e)) = log(1 + e^{-2})
  {
    Tape t;
    PatchCodes pc;
    pc.tau_geometric = 1.0;
    pc.query = leafv(t, {0.5, -1.5, 2.0});
    pc.positive = leafv(t, {0.5, -1.5, 2.0});
    Tensor neg({3}, std::vector<double>{-0.5, 1.5, -2.0});
    pc.negatives = {t.leaf(neg)};
    Var l = geometric_contrastive(pc);
    double expect = std::log(1.0 + std::exp(-2.0));
    CHECK(t.value(l)[0] == doctest::Approx(expect).epsilon(1e-4));
    CHECK(expect == doctest::Approx(0.1269).epsilon(1e-3));
  }
  // invariant to positive rescaling of any code
  {
    Rng rng(5);
    Tape t;
    std::vector<double> q, p, n;
    for (int i = 0; i < 6; ++i) {
      q.push_back(rng.uniform(-1, 1));
      p.push_back(rng.uniform(-1, 1));
      n.push_back(rng.uniform(-1, 1));
    }
    PatchCodes a, b;
    a.query = leafv(t, q);
    a.positive = leafv(t, p);
    a.negatives = {leafv(t, n)};
    std::vector<double> q2 = q, p2 = p, n2 = n;
    for (auto& v : q2) v *= 7.0;
    for (auto& v : p2) v *= 0.03;
    for (auto& v : n2) v *= 12.5;
    b.query = leafv(t, q2);
    b.positive = leafv(t, p2);
    b.negatives = {leafv(t, n2)};
    CHECK(t.value(geometric_contrastive(a))[0] ==
          doctest::Approx(t.value(geometric_contrastive(b))[0]).epsilon(1e-10));
  }
}

TEST_CASE("contrastive losses are monotone in similarities") {
  // moving the positive closer lowers the loss; moving a negative closer
  // raises it (both kernels)
  auto loss_at = [&](double pos_angle, double neg_angle, bool spectral) {
    Tape t;
    PatchCodes pc;
    pc.query = leafv(t, {1, 0});
    pc.positive = leafv(t, {std::cos(pos_angle), std::sin(pos_angle)});
    pc.negatives = {leafv(t, {std::cos(neg_angle), std::sin(neg_angle)})};
    Var l = spectral ? spectral_contrastive(pc) : geometric_contrastive(pc);
    return t.value(l)[0];
  };
  for (bool spectral : {true, false}) {
    CHECK(loss_at(0.2, 1.2, spectral) < loss_at(0.5, 1.2, spectral));
    CHECK(loss_at(0.5, 0.8, spectral) > loss_at(0.5, 1.4, spectral));
  }
}

TEST_CASE("dcpm sampler contracts") {
  Rng rng(7);
  Tape t;
  // encode the flat pixel index into the first code channel
  const int H = 4, W = 4, Cf = 2;
  Tensor fa({H, W, Cf}), fb({H, W, Cf});
  for (int p = 0; p < H * W; ++p) {
    fa[int64_t(p) * Cf] = p;
    fa[int64_t(p) * Cf + 1] = 100 + p;
    fb[int64_t(p) * Cf] = p;
    fb[int64_t(p) * Cf + 1] = 200 + p;
  }
  Var a = t.leaf(fa), b = t.leaf(fb);

  auto sets = dcpm_sample(t, a, b, 6, 4, 99);
  CHECK(sets.size() == 6);
  for (const auto& pc : sets) {
    double qidx = t.value(pc.query)[0];
    CHECK(t.value(pc.positive)[0] == qidx);  // positive shares the index
    CHECK(t.value(pc.positive)[1] == doctest::Approx(200 + qidx));
    CHECK(pc.negatives.size() == 4);
    for (const Var& n : pc.negatives) CHECK(t.value(n)[0] != qidx);
  }

  // determinism
  auto sets2 = dcpm_sample(t, a, b, 6, 4, 99);
  for (size_t i = 0; i < sets.size(); ++i) {
    CHECK(t.value(sets[i].query).data == t.value(sets2[i].query).data);
    for (size_t k = 0; k < sets[i].negatives.size(); ++k)
      CHECK(t.value(sets[i].negatives[k]).data == t.value(sets2[i].negatives[k]).data);
  }

  // empty negative lists
  auto sets3 = dcpm_sample(t, a, b, 3, 0, 1);
  for (const auto& pc : sets3) CHECK(pc.negatives.empty());

  // too few patches
  CHECK_THROWS_AS(dcpm_sample(t, a, b, 17, 2, 1), Error);
}

TEST_CASE("adversarial loss anchors") {
  Rng rng(11);
  Discriminator d_h("dh", 4, 4, rng);
  Discriminator d_r("dr", 3, 4, rng);
  Rng xr(12);
  Tensor real_x = Tensor::random_uniform({8, 8, 4}, xr, 0, 1);
  Tensor real_y = Tensor::random_uniform({8, 8, 3}, xr, 0, 1);
  Tensor fake_x = Tensor::random_uniform({8, 8, 4}, xr, 0, 1);
  Tensor fake_y = Tensor::random_uniform({8, 8, 3}, xr, 0, 1);

  // constant 0.5 scores: disc term is 4 log(1/2), gen term is -2 log(1/2)
  for (Discriminator* d : {&d_h, &d_r})
    for (const auto& p : d->group().params())
      for (double& v : p->value.data) v = 0.0;
  {
    Tape t;
    Binder bind(t);
    AdvLoss adv = adversarial_loss(t, bind, d_h, d_r, t.leaf(real_x), t.leaf(real_y),
                                   t.leaf(fake_x), t.leaf(fake_y));
    CHECK(t.value(adv.disc_term)[0] == doctest::Approx(4.0 * std::log(0.5)).epsilon(1e-12));
    CHECK(t.value(adv.gen_term)[0] == doctest::Approx(-2.0 * std::log(0.5)).epsilon(1e-12));
    // per-domain share: log 0.5 + log 0.5 = -1.3863
    CHECK(2.0 * std::log(0.5) == doctest::Approx(-1.3863).epsilon(1e-4));
  }

  // pushing D(fake) toward 1 decreases the generator term
  Rng r2(13);
  Discriminator d_h2("dh2", 4, 4, r2), d_r2("dr2", 3, 4, r2);
  auto gen_term_with_bias = [&](double bias) {
    for (Discriminator* d : {&d_h2, &d_r2}) {
      for (const auto& p : d->group().params())
        for (double& v : p->value.data) v = 0.0;
      d->group().find("head_b")->value.data[0] = bias;
    }
    Tape t;
    Binder bind(t);
    AdvLoss adv = adversarial_loss(t, bind, d_h2, d_r2, t.leaf(real_x), t.leaf(real_y),
                                   t.leaf(fake_x), t.leaf(fake_y));
    return t.value(adv.gen_term)[0];
  };
  CHECK(gen_term_with_bias(3.0) < gen_term_with_bias(0.0));
  CHECK(gen_term_with_bias(0.0) < gen_term_with_bias(-3.0));

  // disc term never exceeds zero
  Rng r3(14);
  Discriminator d_h3("dh3", 4, 4, r3), d_r3("dr3", 3, 4, r3);
  Tape t;
  Binder bind(t);
  AdvLoss adv = adversarial_loss(t, bind, d_h3, d_r3, t.leaf(real_x), t.leaf(real_y),
                                 t.leaf(fake_x), t.leaf(fake_y));
  CHECK(t.value(adv.disc_term)[0] <= 0.0);
}

TEST_CASE("non-degraded loss anchors") {
  GeneratorConfig cfg;
  cfg.stage_blocks = {1, 1, 1};
  cfg.base_channels = 4;
  cfg.in_channels = 3;
  cfg.out_channels = 4;
  cfg.bypass_blocks = 1;
  cfg.block.gabor_kernels = 1;
  cfg.block.gabor_size = 3;
  cfg.block.interior_knots = 4;
  GeneratorConfig hcfg = cfg;
  std::swap(hcfg.in_channels, hcfg.out_channels);
  Rng rng(15);
  Generator g_rh("rh", cfg, rng), g_hr("hr", hcfg, rng);

  Rng xr(16);
  Tensor x = Tensor::random_uniform({8, 8, 4}, xr, 0, 1);
  Tensor y = Tensor::random_uniform({8, 8, 3}, xr, 0, 1);

  // zero-trunk bypass is the identity: loss 0
  {
    for (Generator* g : {&g_rh, &g_hr})
      for (const auto& p : g->bypass_group().params())
        for (double& v : p->value.data) v = 0.0;
    Tape t;
    Binder bind(t);
    Var l = non_degraded_loss(t, bind, g_rh, g_hr, t.leaf(x), t.leaf(y));
    CHECK(t.value(l)[0] == 0.0);
  }

  // force bypass(x) = 2x on G_RH: zeroed trunk blocks pass x through, identity
  // final map adds it again; with unit input the first term contributes 1
  {
    for (const auto& p : g_rh.bypass_group().params())
      for (double& v : p->value.data) v = 0.0;
    auto& fw = g_rh.bypass_group().find("byp_final_w")->value;
    for (int i = 0; i < 4; ++i) fw.data[size_t(i) * 4 + i] = 1.0;
    Tensor ones({8, 8, 4}, std::vector<double>(8 * 8 * 4, 1.0));
    Tape t;
    Binder bind(t);
    Var l = non_degraded_loss(t, bind, g_rh, g_hr, t.leaf(ones), t.leaf(y));
    CHECK(t.value(l)[0] == doctest::Approx(1.0).epsilon(1e-12));
  }

  // sum of two independent single-generator terms
  {
    Tape t;
    Binder bind(t);
    Var both = non_degraded_loss(t, bind, g_rh, g_hr, t.leaf(x), t.leaf(y));
    Var left = mse(g_rh.bypass_forward(t, bind, t.leaf(x)), t.leaf(x));
    Var right = mse(g_hr.bypass_forward(t, bind, t.leaf(y)), t.leaf(y));
    CHECK(t.value(both)[0] ==
          doctest::Approx(t.value(left)[0] + t.value(right)[0]).epsilon(1e-12));
  }
}

TEST_CASE("total loss weighting") {
  Tape t;
  LossParts p;
  p.cycle = t.constant(1.0);
  p.non_degraded = t.constant(1.0);
  p.adversarial = t.constant(1.0);
  p.spectral = t.constant(1.0);
  p.geometric = t.constant(1.0);
  CHECK(t.value(total_loss(t, p, LossWeights{}))[0] == doctest::Approx(3.0).epsilon(1e-15));

  LossWeights zero;
  zero.cycle = zero.non_degraded = zero.adversarial = zero.spectral = zero.geometric = 0.0;
  CHECK(t.value(total_loss(t, p, zero))[0] == 0.0);

  LossWeights neg;
  neg.cycle = -1.0;
  CHECK_THROWS_AS(total_loss(t, p, neg), Error);
}

TEST_CASE("total loss is linear in the weights and parts") {
  Rng rng(17);
  Tensor a = Tensor::random_uniform({4}, rng, 0, 1);

  auto part_grads = [&](const LossWeights& w) {
    Tape t;
    Var av = t.leaf(a, true);
    LossParts p;
    p.cycle = reduce_mean(power(av, 2.0));
    p.non_degraded = reduce_sum(av);
    p.adversarial = reduce_mean(sin_op(av));
    p.spectral = reduce_sum(power(av, 3.0));
    p.geometric = reduce_mean(av);
    Var tot = total_loss(t, p, w);
    t.backward(tot);
    return t.grad(av).data;
  };
  LossWeights w;
  auto g = part_grads(w);

  // gradient equals the weighted sum of per-part gradients
  auto single = [&](int which) {
    LossWeights only;
    only.cycle = which == 0 ? 1.0 : 0.0;
    only.non_degraded = which == 1 ? 1.0 : 0.0;
    only.adversarial = which == 2 ? 1.0 : 0.0;
    only.spectral = which == 3 ? 1.0 : 0.0;
    only.geometric = which == 4 ? 1.0 : 0.0;
    return part_grads(only);
  };
  double ws[5] = {w.cycle, w.non_degraded, w.adversarial, w.spectral, w.geometric};
  std::vector<std::vector<double>> gs;
  for (int i = 0; i < 5; ++i) gs.push_back(single(i));
  for (size_t k = 0; k < g.size(); ++k) {
    double expect = 0;
    for (int i = 0; i < 5; ++i) expect += ws[i] * gs[static_cast<size_t>(i)][k];
    CHECK(g[k] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("losses are non-negative where required") {
  Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    Tape t;
    Tensor x = Tensor::random_uniform({2, 2, 3}, rng, -1, 1);
    Tensor y = Tensor::random_uniform({2, 2, 3}, rng, -1, 1);
    CHECK(t.value(cycle_loss(t.leaf(x), t.leaf(y), t.leaf(y), t.leaf(x)))[0] >= 0.0);

    PatchCodes pc;
    pc.query = leafv(t, {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    pc.positive = leafv(t, {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    pc.negatives = {leafv(t, {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)})};
    CHECK(t.value(spectral_contrastive(pc))[0] >= 0.0);
    CHECK(t.value(geometric_contrastive(pc))[0] >= 0.0);
  }
}
