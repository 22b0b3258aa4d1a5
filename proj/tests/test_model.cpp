#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "nukes/losses.hpp"
#include "nukes/model.hpp"

using namespace nukes;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& name) {
  std::string d = (fs::temp_directory_path() / ("nukes_model_" + name)).string();
  fs::remove_all(d);
  return d;
}

GeneratorConfig small_cfg(int in_ch, int out_ch) {
  GeneratorConfig g;
  g.stage_blocks = {1, 1, 1, 1, 1};
  g.base_channels = 4;
  g.in_channels = in_ch;
  g.out_channels = out_ch;
  g.bypass_blocks = 1;
  g.block.gabor_kernels = 2;
  g.block.gabor_size = 5;
  g.block.interior_knots = 4;
  return g;
}

void zero_group(ParamGroup& pg) {
  for (const auto& p : pg.params())
    for (double& v : p->value.data) v = 0.0;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

}  // namespace

TEST_CASE("generator maps 16x16x3 to 16x16x31") {
  GeneratorConfig cfg = small_cfg(3, 31);
  Rng rng(1);
  Generator gen("g", cfg, rng);
  Rng xr(2);
  Tensor x = Tensor::random_uniform({16, 16, 3}, xr, 0, 1);
  Tape t;
  Binder bind(t);
  Var out = gen.forward(t, bind, t.leaf(x));
  CHECK(t.shape(out) == std::vector<int>{16, 16, 31});
  CHECK(t.value(out).all_finite());
}

TEST_CASE("zero-initialized final mapping passes only the stem skip") {
  GeneratorConfig cfg = small_cfg(3, 5);
  Rng rng(3);
  Generator gen("g", cfg, rng);
  // final_w/final_b start at zero, so out = out_map(in_map(x))
  Rng xr(4);
  Tensor x = Tensor::random_uniform({8, 8, 3}, xr, -1, 1);
  Tape t;
  Binder bind(t);
  Var out = gen.forward(t, bind, t.leaf(x));

  const auto& in_w = gen.main_group().find("in_w")->value;
  const auto& in_b = gen.main_group().find("in_b")->value;
  const auto& out_w = gen.main_group().find("out_w")->value;
  const auto& out_b = gen.main_group().find("out_b")->value;
  const int B = cfg.base_channels;
  for (int p = 0; p < 64; ++p)
    for (int co = 0; co < 5; ++co) {
      double stem[8];
      for (int b = 0; b < B; ++b) {
        double s = in_b[b];
        for (int ci = 0; ci < 3; ++ci) s += x[int64_t(p) * 3 + ci] * in_w[int64_t(ci) * B + b];
        stem[b] = s;
      }
      double expect = out_b[co];
      for (int b = 0; b < B; ++b) expect += stem[b] * out_w[int64_t(b) * 5 + co];
      CHECK(t.value(out)[int64_t(p) * 5 + co] == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("generator rejects bad spatial and channel shapes") {
  GeneratorConfig cfg = small_cfg(3, 8);
  Rng rng(5);
  Generator gen("g", cfg, rng);
  Tape t;
  Binder bind(t);
  Tensor odd({10, 10, 3});
  try {
    gen.forward(t, bind, t.leaf(odd));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrCode::OddSpatialSize);
  }
  Tensor wrong({8, 8, 4});
  CHECK_THROWS_AS(gen.forward(t, bind, t.leaf(wrong)), Error);
}

TEST_CASE("stage_blocks must have odd length") {
  GeneratorConfig cfg = small_cfg(3, 8);
  cfg.stage_blocks = {1, 2};
  Rng rng(6);
  CHECK_THROWS_AS(Generator("g", cfg, rng), Error);
}

TEST_CASE("cycle pass with identity generators reproduces inputs") {
  // in == out channels and identity stem/output maps make the generator exact
  // identity because the trunk fusion starts at zero
  GeneratorConfig cfg = small_cfg(4, 4);
  Rng rng(7);
  Generator g_rh("rh", cfg, rng), g_hr("hr", cfg, rng);
  for (Generator* g : {&g_rh, &g_hr}) {
    auto& iw = g->main_group().find("in_w")->value;
    auto& ow = g->main_group().find("out_w")->value;
    for (double& v : iw.data) v = 0.0;
    for (double& v : ow.data) v = 0.0;
    for (int i = 0; i < 4; ++i) {
      iw.data[size_t(i) * 4 + i] = 1.0;
      ow.data[size_t(i) * 4 + i] = 1.0;
    }
    for (double& v : g->main_group().find("in_b")->value.data) v = 0.0;
    for (double& v : g->main_group().find("out_b")->value.data) v = 0.0;
  }
  Rng xr(8);
  Tensor x = Tensor::random_uniform({8, 8, 4}, xr, 0, 1);
  Tensor y = Tensor::random_uniform({8, 8, 4}, xr, 0, 1);
  Tape t;
  Binder bind(t);
  CyclePass cp = cycle_pass(t, bind, t.leaf(x), t.leaf(y), g_rh, g_hr);
  CHECK(t.value(cp.x_r).data == x.data);
  CHECK(t.value(cp.y_hat_r).data == y.data);
}

TEST_CASE("cycle pass shares parameters between phases") {
  GeneratorConfig cfg = small_cfg(3, 6);
  GeneratorConfig hcfg = small_cfg(6, 3);
  Rng rng(9);
  Generator g_rh("rh", cfg, rng), g_hr("hr", hcfg, rng);
  Rng xr(10);
  Tensor x = Tensor::random_uniform({8, 8, 6}, xr, 0, 1);
  Tensor y = Tensor::random_uniform({8, 8, 3}, xr, 0, 1);

  auto run = [&] {
    Tape t;
    Binder bind(t);
    CyclePass cp = cycle_pass(t, bind, t.leaf(x), t.leaf(y), g_rh, g_hr);
    return std::make_pair(t.value(cp.y_f).data, t.value(cp.y_hat_r).data);
  };
  auto [yf0, yr0] = run();
  // perturb one parameter of G_HR; both its uses must change
  g_hr.main_group().find("out_w")->value.data[0] += 0.1;
  auto [yf1, yr1] = run();
  CHECK(yf0 != yf1);
  CHECK(yr0 != yr1);

  // outputs stay finite on random init
  for (double v : yf1) CHECK(std::isfinite(v));
  for (double v : yr1) CHECK(std::isfinite(v));
}

TEST_CASE("bypass with zero trunk weights is the identity") {
  GeneratorConfig cfg = small_cfg(3, 6);
  Rng rng(11);
  Generator gen("g", cfg, rng);
  zero_group(gen.bypass_group());
  Rng xr(12);
  Tensor x = Tensor::random_uniform({8, 8, 6}, xr, 0, 1);
  Tape t;
  Binder bind(t);
  Var out = gen.bypass_forward(t, bind, t.leaf(x));
  CHECK(t.value(out).data == x.data);

  Tensor wrong({8, 8, 3});
  try {
    gen.bypass_forward(t, bind, t.leaf(wrong));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrCode::ChannelMismatch);
  }
}

TEST_CASE("optimizing the non-degraded loss alone shrinks the bypass error") {
  GeneratorConfig cfg = small_cfg(3, 4);
  GeneratorConfig hcfg = small_cfg(4, 3);
  Rng rng(13);
  Generator g_rh("rh", cfg, rng), g_hr("hr", hcfg, rng);
  // knock the bypass away from the identity so there is something to learn
  Rng pr(14);
  for (Generator* g : {&g_rh, &g_hr})
    for (const auto& p : g->bypass_group().params())
      for (double& v : p->value.data) v += 0.12 * pr.normal();

  Rng xr(15);
  Tensor x = Tensor::random_uniform({8, 8, 4}, xr, 0, 1);
  Tensor y = Tensor::random_uniform({8, 8, 3}, xr, 0, 1);

  AdamState opt;
  opt.lr_init = 2e-3;
  opt.horizon = 1000;
  std::vector<ParamGroup*> groups = {&g_rh.bypass_group(), &g_hr.bypass_group()};
  opt.attach(groups);

  double first = 0, last = 0;
  for (int step = 0; step < 40; ++step) {
    Tape t;
    Binder bind(t);
    Var loss = non_degraded_loss(t, bind, g_rh, g_hr, t.leaf(x), t.leaf(y));
    double v = t.value(loss)[0];
    if (step == 0) first = v;
    last = v;
    t.backward(loss);
    opt.step(t, bind);
  }
  CHECK(last < first);
  CHECK(last < 0.5 * first);
}

TEST_CASE("discriminator outputs probabilities") {
  Rng rng(17);
  Discriminator d("d", 5, 4, rng);
  Rng xr(18);
  Tensor x = Tensor::random_uniform({16, 16, 5}, xr, 0, 1);
  Tape t;
  Binder bind(t);
  Var s = d.forward(t, bind, t.leaf(x));
  CHECK(t.shape(s) == std::vector<int>{2, 2, 1});
  for (int64_t i = 0; i < t.value(s).numel(); ++i) {
    CHECK(t.value(s)[i] > 0.0);
    CHECK(t.value(s)[i] < 1.0);
  }

  // constant-zero logits score one half
  zero_group(d.group());
  Tape t2;
  Binder bind2(t2);
  Var s2 = d.forward(t2, bind2, t2.leaf(x));
  for (int64_t i = 0; i < t2.value(s2).numel(); ++i)
    CHECK(t2.value(s2)[i] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("parameter counts: infer strictly below train, monotone in width") {
  GeneratorConfig cfg = small_cfg(3, 31);
  ModelSet ms = ModelSet::build(cfg, 4, 16, 123);
  int64_t train = ms.count_params_train();
  int64_t infer = ms.count_params_infer();
  CHECK(infer < train);

  GeneratorConfig wide = cfg;
  wide.base_channels *= 2;
  ModelSet ms2 = ModelSet::build(wide, 4, 16, 123);
  CHECK(ms2.count_params_train() > train);
  CHECK(ms2.count_params_infer() > infer);

  // independent walk over every parameter array
  int64_t walk = 0;
  for (const ParamGroup* g : ms.all_groups())
    for (const auto& p : g->params()) {
      int64_t n = 1;
      for (int d : p->value.shape) n *= d;
      walk += n;
    }
  CHECK(walk == train);
}

TEST_CASE("checkpoint round trip is byte identical and restores values") {
  GeneratorConfig cfg = small_cfg(3, 6);
  ModelSet ms = ModelSet::build(cfg, 4, 8, 7);
  std::string d1 = tmp_dir("ck1"), d2 = tmp_dir("ck2");
  std::vector<const ParamGroup*> cgroups;
  for (ParamGroup* g : ms.all_groups()) cgroups.push_back(g);
  save_checkpoint(d1, cgroups);

  ModelSet ms2 = ModelSet::build(cfg, 4, 8, 99);  // different init
  std::vector<ParamGroup*> groups2 = ms2.all_groups();
  load_checkpoint(d1, groups2);
  // load -> save reproduces the same bytes for every group file
  std::vector<const ParamGroup*> cgroups2;
  for (ParamGroup* g : groups2) cgroups2.push_back(g);
  save_checkpoint(d2, cgroups2);
  for (const ParamGroup* g : cgroups) {
    std::string f1 = d1 + "/" + g->name() + ".bin";
    std::string f2 = d2 + "/" + g->name() + ".bin";
    CHECK(slurp(f1) == slurp(f2));
  }

  // values restored exactly (f32 quantization is idempotent)
  for (size_t gi = 0; gi < cgroups.size(); ++gi) {
    const auto& pa = cgroups[gi]->params();
    const auto& pb = cgroups2[gi]->params();
    for (size_t i = 0; i < pa.size(); ++i) {
      for (size_t k = 0; k < pa[i]->value.data.size(); ++k) {
        float a = static_cast<float>(pa[i]->value.data[k]);
        CHECK(static_cast<double>(a) == pb[i]->value.data[k]);
      }
    }
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  GeneratorConfig cfg = small_cfg(3, 6);
  ModelSet ms = ModelSet::build(cfg, 4, 8, 7);
  std::string dir = tmp_dir("ck3");
  std::vector<const ParamGroup*> cgroups;
  for (ParamGroup* g : ms.all_groups()) cgroups.push_back(g);
  save_checkpoint(dir, cgroups);

  // truncate one blob
  std::string blob = dir + "/gen_rh_main.bin";
  std::string content = slurp(blob);
  {
    std::ofstream out(blob, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size() / 2));
  }
  std::vector<ParamGroup*> groups = ms.all_groups();
  try {
    load_checkpoint(dir, groups);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrCode::CorruptCheckpoint);
  }

  CHECK_THROWS_AS(load_checkpoint(tmp_dir("nonexistent"), groups), Error);
}
