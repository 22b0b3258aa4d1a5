#include "nukes/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "nukes/spline.hpp"

namespace nukes {

namespace fs = std::filesystem;

// ---------------- config ----------------

void TrainConfig::validate() const {
  if (image_size < 8 || image_size % 8 != 0)
    fail(ErrCode::ConfigInvalid,
         "image_size must be a positive multiple of 8 (generator and discriminator strides)");
  if (steps < 1) fail(ErrCode::ConfigInvalid, "steps must be >= 1");
  if (cosine_horizon < 0) fail(ErrCode::ConfigInvalid, "cosine_horizon must be >= 0");
  if (bands <= 3) fail(ErrCode::ConfigInvalid, "bands must exceed 3");
  if (n_hsi_scenes < 1 || n_rgb_scenes < 1 || n_val_scenes < 1)
    fail(ErrCode::ConfigInvalid, "scene counts must be positive");
  if (n_patches < 1) fail(ErrCode::ConfigInvalid, "n_patches must be positive");
  if (n_negatives < 0) fail(ErrCode::ConfigInvalid, "n_negatives must be non-negative");
  weights.validate();
  GeneratorConfig g = generator_config();
  g.validate();
}

GeneratorConfig TrainConfig::generator_config() const {
  GeneratorConfig g;
  g.stage_blocks = stage_blocks;
  g.base_channels = base_channels;
  g.in_channels = 3;
  g.out_channels = bands;
  g.bypass_blocks = bypass_blocks;
  g.block.use_gabor = use_gabor;
  g.block.traditional_kan = traditional_kan;
  g.block.gabor_alt_form = gabor_alt_form;
  return g;
}

namespace {

const char* kConfigKeys[] = {
    "n_hsi_scenes", "n_rgb_scenes", "n_val_scenes", "image_size",   "bands",
    "stage_blocks", "base_channels", "disc_base",   "code_dim",     "bypass_blocks",
    "n_patches",    "n_negatives",   "n_endmembers", "scene_smoothness",
    "weights",      "beta1",         "beta2",       "lr",           "steps",
    "cosine_horizon",
    "seed",         "f32_params",    "use_gabor",   "traditional_kan", "gabor_alt_form"};

const char* kWeightKeys[] = {"cycle", "non_degraded", "adversarial", "spectral", "geometric"};

}  // namespace

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrCode::ConfigInvalid, std::string("bad config json: ") + e.what());
  }
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* k : kConfigKeys)
      if (key == k) known = true;
    if (!known) fail(ErrCode::ConfigInvalid, "unknown config key: " + key);
  }
  TrainConfig c;
  auto get = [&](const char* k, auto& dst) {
    if (j.contains(k)) dst = j[k].get<std::decay_t<decltype(dst)>>();
  };
  get("n_hsi_scenes", c.n_hsi_scenes);
  get("n_rgb_scenes", c.n_rgb_scenes);
  get("n_val_scenes", c.n_val_scenes);
  get("image_size", c.image_size);
  get("bands", c.bands);
  get("stage_blocks", c.stage_blocks);
  get("base_channels", c.base_channels);
  get("disc_base", c.disc_base);
  get("code_dim", c.code_dim);
  get("bypass_blocks", c.bypass_blocks);
  get("n_patches", c.n_patches);
  get("n_negatives", c.n_negatives);
  get("n_endmembers", c.n_endmembers);
  get("scene_smoothness", c.scene_smoothness);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("lr", c.lr);
  get("steps", c.steps);
  get("cosine_horizon", c.cosine_horizon);
  get("seed", c.seed);
  get("f32_params", c.f32_params);
  get("use_gabor", c.use_gabor);
  get("traditional_kan", c.traditional_kan);
  get("gabor_alt_form", c.gabor_alt_form);
  if (j.contains("weights")) {
    for (const auto& [key, _] : j["weights"].items()) {
      bool known = false;
      for (const char* k : kWeightKeys)
        if (key == k) known = true;
      if (!known) fail(ErrCode::ConfigInvalid, "unknown weight key: " + key);
    }
    auto& w = j["weights"];
    if (w.contains("cycle")) c.weights.cycle = w["cycle"].get<double>();
    if (w.contains("non_degraded")) c.weights.non_degraded = w["non_degraded"].get<double>();
    if (w.contains("adversarial")) c.weights.adversarial = w["adversarial"].get<double>();
    if (w.contains("spectral")) c.weights.spectral = w["spectral"].get<double>();
    if (w.contains("geometric")) c.weights.geometric = w["geometric"].get<double>();
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrCode::MissingFile, path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

std::string TrainConfig::to_json_text() const {
  nlohmann::json j;
  j["n_hsi_scenes"] = n_hsi_scenes;
  j["n_rgb_scenes"] = n_rgb_scenes;
  j["n_val_scenes"] = n_val_scenes;
  j["image_size"] = image_size;
  j["bands"] = bands;
  j["stage_blocks"] = stage_blocks;
  j["base_channels"] = base_channels;
  j["disc_base"] = disc_base;
  j["code_dim"] = code_dim;
  j["bypass_blocks"] = bypass_blocks;
  j["n_patches"] = n_patches;
  j["n_negatives"] = n_negatives;
  j["n_endmembers"] = n_endmembers;
  j["scene_smoothness"] = scene_smoothness;
  j["weights"] = {{"cycle", weights.cycle},
                  {"non_degraded", weights.non_degraded},
                  {"adversarial", weights.adversarial},
                  {"spectral", weights.spectral},
                  {"geometric", weights.geometric}};
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["lr"] = lr;
  j["steps"] = steps;
  j["cosine_horizon"] = cosine_horizon;
  j["seed"] = seed;
  j["f32_params"] = f32_params;
  j["use_gabor"] = use_gabor;
  j["traditional_kan"] = traditional_kan;
  j["gabor_alt_form"] = gabor_alt_form;
  return j.dump(2);
}

std::string fnv1a_hex(const std::string& text) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------- tensor bridges ----------------

namespace {

Tensor cube_to_tensor(const HsiCube& c) {
  Tensor t({c.height, c.width, c.bands});
  const int64_t hw = c.plane();
  for (int b = 0; b < c.bands; ++b)
    for (int64_t p = 0; p < hw; ++p) t[p * c.bands + b] = c.data[size_t(b) * hw + p];
  return t;
}

HsiCube tensor_to_cube(const Tensor& t) {
  HsiCube c(t.dim(1), t.dim(0), t.dim(2));
  const int64_t hw = c.plane();
  for (int b = 0; b < c.bands; ++b)
    for (int64_t p = 0; p < hw; ++p) c.data[size_t(b) * hw + p] = t[p * c.bands + b];
  return c;
}

Tensor rgb_to_tensor(const RgbImage& img) {
  Tensor t({img.height, img.width, 3});
  const int64_t hw = img.plane();
  for (int ch = 0; ch < 3; ++ch)
    for (int64_t p = 0; p < hw; ++p) t[p * 3 + ch] = img.data[size_t(ch) * hw + p];
  return t;
}

struct SceneSet {
  std::vector<HsiCube> hsi;       // unpaired HSI domain
  std::vector<RgbImage> rgb;      // unpaired RGB domain (degraded other scenes)
  std::vector<HsiCube> val_hsi;   // held-out paired validation
  std::vector<RgbImage> val_rgb;
};

SceneSet build_scenes(const TrainConfig& cfg) {
  SceneSet s;
  Rng master(cfg.seed);
  Rng hsi_rng = master.fork(2);
  Rng rgb_rng = master.fork(3);
  Rng val_rng = master.fork(4);
  SrfOperator srf = default_srf(cfg.bands);
  auto scene = [&](uint64_t seed) {
    SceneSpec sp;
    sp.seed = seed;
    sp.bands = cfg.bands;
    sp.width = cfg.image_size;
    sp.height = cfg.image_size;
    sp.n_endmembers = cfg.n_endmembers;
    sp.spatial_smoothness = cfg.scene_smoothness;
    return synth_scene(sp);
  };
  for (int i = 0; i < cfg.n_hsi_scenes; ++i) s.hsi.push_back(scene(hsi_rng.next_u64()));
  for (int i = 0; i < cfg.n_rgb_scenes; ++i)
    s.rgb.push_back(degrade(scene(rgb_rng.next_u64()), srf, false, 0));
  for (int i = 0; i < cfg.n_val_scenes; ++i) {
    HsiCube v = scene(val_rng.next_u64());
    s.val_rgb.push_back(degrade(v, srf, false, 0));
    s.val_hsi.push_back(std::move(v));
  }
  return s;
}

ModelSet build_models(const TrainConfig& cfg) {
  Rng master(cfg.seed);
  uint64_t init_seed = master.fork(1).next_u64();
  return ModelSet::build(cfg.generator_config(), cfg.disc_base, cfg.code_dim, init_seed);
}

void round_params_f32(std::vector<ParamGroup*> groups) {
  for (ParamGroup* g : groups)
    for (const auto& p : g->params())
      for (double& v : p->value.data) v = static_cast<double>(static_cast<float>(v));
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

HsiCube infer_rgb_to_hsi(ModelSet& models, const RgbImage& rgb) {
  Tape t;
  Binder frozen(t, false);
  Var in = t.leaf(rgb_to_tensor(rgb), false);
  Var out = models.g_rh->forward(t, frozen, in);
  return tensor_to_cube(t.value(out));
}

double validate_psnr(const TrainConfig& cfg, ModelSet& models) {
  SceneSet s = build_scenes(cfg);
  double sum = 0;
  for (size_t i = 0; i < s.val_hsi.size(); ++i) {
    HsiCube rec = infer_rgb_to_hsi(models, s.val_rgb[i]);
    sum += psnr(s.val_hsi[i], rec);
  }
  return sum / static_cast<double>(s.val_hsi.size());
}

std::vector<std::string> load_infer_checkpoint(const std::string& dir, ModelSet& models) {
  std::vector<ParamGroup*> target = {&models.g_rh->main_group()};
  return load_checkpoint(dir, target, {models.g_rh->main_group().name()});
}

// ---------------- training ----------------

void RunManifest::save(const std::string& path) const {
  nlohmann::json j;
  j["config"] = nlohmann::json::parse(config_json);
  j["config_hash"] = config_hash;
  j["loss_csv"] = loss_csv;
  j["checkpoint_dir"] = checkpoint_dir;
  j["init_checkpoint_dir"] = init_checkpoint_dir;
  j["val_psnr_init"] = val_psnr_init;
  j["val_psnr_final"] = val_psnr_final;
  j["total_at_step1"] = first_logged_total;
  j["total_at_step10"] = total_at_step10;
  j["total_at_last"] = total_at_last;
  j["final_metrics"] = {{"rmse", final_metrics.rmse},
                        {"mrae", final_metrics.mrae},
                        {"psnr_db", final_metrics.psnr_db},
                        {"ssim", final_metrics.ssim_mean},
                        {"sam_deg", final_metrics.sam_deg}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrCode::IoFailure, "cannot write " + path);
  out << j.dump(2) << "\n";
}

RunManifest train_run(const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);

  SceneSet scenes = build_scenes(cfg);
  ModelSet models = build_models(cfg);
  Rng master(cfg.seed);
  Rng data_rng = master.fork(5);
  Rng sampler_rng = master.fork(6);

  RunManifest mf;
  mf.config_json = cfg.to_json_text();
  mf.config_hash = fnv1a_hex(mf.config_json);
  mf.loss_csv = out_dir + "/loss.csv";
  mf.checkpoint_dir = out_dir + "/ckpt";
  mf.init_checkpoint_dir = out_dir + "/ckpt_init";

  {
    std::vector<const ParamGroup*> cg;
    for (ParamGroup* g : models.all_groups()) cg.push_back(g);
    save_checkpoint(mf.init_checkpoint_dir, cg);
  }
  mf.val_psnr_init = validate_psnr(cfg, models);

  AdamState gen_opt, disc_opt;
  gen_opt.beta1 = disc_opt.beta1 = cfg.beta1;
  gen_opt.beta2 = disc_opt.beta2 = cfg.beta2;
  gen_opt.lr_init = disc_opt.lr_init = cfg.lr;
  gen_opt.horizon = disc_opt.horizon = cfg.cosine_horizon > 0 ? cfg.cosine_horizon : cfg.steps;
  gen_opt.attach(models.generator_groups());
  disc_opt.attach(models.discriminator_groups());

  std::ofstream csv(mf.loss_csv, std::ios::trunc);
  if (!csv) fail(ErrCode::IoFailure, "cannot write " + mf.loss_csv);
  csv << "step,L_cyc,L_nde,L_adv_g,L_adv_d,L_spec,L_geo,total\n";
  char row[512];

  std::vector<Tensor> hsi_t, rgb_t;
  for (const auto& c : scenes.hsi) hsi_t.push_back(cube_to_tensor(c));
  for (const auto& r : scenes.rgb) rgb_t.push_back(rgb_to_tensor(r));

  for (int step = 1; step <= cfg.steps; ++step) {
    const Tensor& x = hsi_t[data_rng.below(hsi_t.size())];
    const Tensor& y = rgb_t[data_rng.below(rgb_t.size())];

    // discriminator update (fakes from frozen generators)
    double l_adv_d;
    {
      Tape t;
      Binder gen_frozen(t, false);
      Var xv = t.leaf(x), yv = t.leaf(y);
      Var y_f = models.g_hr->forward(t, gen_frozen, xv);
      Var x_hat_f = models.g_rh->forward(t, gen_frozen, yv);
      Binder dbind(t);
      AdvLoss adv =
          adversarial_loss(t, dbind, *models.d_h, *models.d_r, xv, yv, x_hat_f, y_f);
      l_adv_d = t.value(adv.disc_term)[0];
      t.backward(scale(adv.disc_term, -1.0));
      disc_opt.step(t, dbind);
      if (cfg.f32_params) round_params_f32(models.discriminator_groups());
    }

    // generator update (all five terms, discriminators frozen)
    double l_cyc, l_nde, l_adv_g, l_spec, l_geo, total;
    {
      Tape t;
      Binder gbind(t);
      Binder disc_frozen(t, false);
      Var xv = t.leaf(x), yv = t.leaf(y);
      CyclePass cp = cycle_pass(t, gbind, xv, yv, *models.g_rh, *models.g_hr);
      LossParts parts;
      parts.cycle = cycle_loss(xv, yv, cp.x_r, cp.y_hat_r);
      parts.non_degraded =
          non_degraded_loss(t, gbind, *models.g_rh, *models.g_hr, xv, yv);
      AdvLoss adv = adversarial_loss(t, disc_frozen, *models.d_h, *models.d_r, xv, yv,
                                     cp.x_hat_f, cp.y_f);
      parts.adversarial = adv.gen_term;

      // spectral prior from the degradation phase, geometric from reconstruction
      Var codes_da = models.enc_a->forward(t, gbind, cp.feats_deg_a);
      Var codes_db = models.enc_b->forward(t, gbind, cp.feats_deg_b);
      auto sets_s = dcpm_sample(t, codes_da, codes_db, cfg.n_patches, cfg.n_negatives,
                                sampler_rng.next_u64());
      std::vector<Var> spec_parts;
      for (auto& pcs : sets_s) spec_parts.push_back(spectral_contrastive(pcs));
      parts.spectral = mean_loss(t, spec_parts);

      Var codes_ra = models.enc_b->forward(t, gbind, cp.feats_rec_a);
      Var codes_rb = models.enc_a->forward(t, gbind, cp.feats_rec_b);
      auto sets_g = dcpm_sample(t, codes_ra, codes_rb, cfg.n_patches, cfg.n_negatives,
                                sampler_rng.next_u64());
      std::vector<Var> geo_parts;
      for (auto& pcs : sets_g) geo_parts.push_back(geometric_contrastive(pcs));
      parts.geometric = mean_loss(t, geo_parts);

      Var tot = total_loss(t, parts, cfg.weights);
      l_cyc = t.value(parts.cycle)[0];
      l_nde = t.value(parts.non_degraded)[0];
      l_adv_g = t.value(parts.adversarial)[0];
      l_spec = t.value(parts.spectral)[0];
      l_geo = t.value(parts.geometric)[0];
      total = t.value(tot)[0];
      t.backward(tot);
      gen_opt.step(t, gbind);
      if (cfg.f32_params) round_params_f32(models.generator_groups());
    }

    std::snprintf(row, sizeof(row), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", step,
                  l_cyc, l_nde, l_adv_g, l_adv_d, l_spec, l_geo, total);
    csv << row;
    if (step == 1) mf.first_logged_total = total;
    if (step == 10) mf.total_at_step10 = total;
    if (step == cfg.steps) mf.total_at_last = total;
  }
  csv.close();

  {
    std::vector<const ParamGroup*> cg;
    for (ParamGroup* g : models.all_groups()) cg.push_back(g);
    save_checkpoint(mf.checkpoint_dir, cg);
  }
  mf.val_psnr_final = validate_psnr(cfg, models);

  // averaged validation metrics
  {
    SceneSet s = build_scenes(cfg);
    MetricReport acc;
    for (size_t i = 0; i < s.val_hsi.size(); ++i) {
      HsiCube rec = infer_rgb_to_hsi(models, s.val_rgb[i]);
      MetricReport r = metric_report(s.val_hsi[i], rec);
      acc.rmse += r.rmse;
      acc.mrae += r.mrae;
      acc.psnr_db += r.psnr_db;
      acc.ssim_mean += r.ssim_mean;
      acc.sam_deg += r.sam_deg;
    }
    double n = static_cast<double>(s.val_hsi.size());
    acc.rmse /= n;
    acc.mrae /= n;
    acc.psnr_db /= n;
    acc.ssim_mean /= n;
    acc.sam_deg /= n;
    mf.final_metrics = acc;
  }
  mf.save(out_dir + "/manifest.json");
  return mf;
}

// ---------------- gradient-check suite ----------------

namespace {

GradCheckLine line_from(const std::string& name, const GradCheckReport& rep) {
  GradCheckLine l;
  l.name = name;
  l.pass = rep.pass;
  l.max_rel_err = rep.max_rel_err;
  l.coords = rep.coords_checked;
  return l;
}

// FD over the input and every parameter of one Nuk-MSA block
GradCheckLine check_block(uint64_t seed) {
  BlockConfig bc;
  bc.channels = 4;
  bc.gabor_kernels = 2;
  bc.gabor_size = 5;
  bc.interior_knots = 4;
  ParamGroup pg("block_check");
  Rng init(seed ^ 0x1234);
  NukMsaBlock block(pg, "blk", bc, init);

  Rng r(seed);
  std::vector<Tensor> inputs;
  inputs.push_back(Tensor::random_uniform({4, 4, 4}, r, -1.5, 1.5));
  std::vector<Param*> plist;
  for (const auto& p : pg.params()) {
    plist.push_back(p.get());
    inputs.push_back(p->value);
  }
  auto f = [&](Tape& t, const std::vector<Var>& vs) {
    Binder bind(t);
    for (size_t i = 0; i < plist.size(); ++i) bind.set_override(plist[i], vs[i + 1]);
    Var y = block.forward(t, bind, vs[0]);
    Rng wr(seed ^ 0x77);
    Tensor w = Tensor::random_uniform(t.value(y).shape, wr, -1, 1);
    return reduce_sum(mul(y, t.leaf(w)));
  };
  return line_from("nuk_msa_block", grad_check(f, inputs, 1e-5, 1e-4));
}

GradCheckLine check_generator(uint64_t seed) {
  GeneratorConfig gc;
  gc.stage_blocks = {1, 1, 2, 1, 1};
  gc.base_channels = 8;
  gc.in_channels = 3;
  gc.out_channels = 5;
  Rng init(seed ^ 0x4321);
  Generator gen("gen_check", gc, init);

  Rng r(seed);
  std::vector<Tensor> inputs;
  inputs.push_back(Tensor::random_uniform({8, 8, 3}, r, -1, 1));
  // one representative parameter per role
  const char* picks[] = {"in_w",          "enc0.b0.gmsa.wq", "enc0.b0.gmsa.theta",
                         "enc0.b0.gmsa.freq_w", "enc0.b0.gmsa.out_w", "enc0.b0.ffn.ch0.knot_raw",
                         "enc0.b0.ffn.ch0.ctrl", "enc0.b0.ffn.ch0.wts_raw", "enc0.b0.ffn.alpha",
                         "enc0.b0.ffn.mix_w", "enc0.b0.ffn.spec_w", "enc0.b0.ln1_g",
                         "down0_w",       "up0_w",           "skip0_w",
                         "mid.b0.gmsa.wk", "dec1.b0.ffn.mix_b", "final_w", "out_w"};
  std::vector<Param*> plist;
  for (const char* name : picks) {
    Param* p = gen.main_group().find(name);
    if (!p) fail(ErrCode::InvalidParam, std::string("missing parameter ") + name);
    plist.push_back(p);
    inputs.push_back(p->value);
  }
  auto f = [&](Tape& t, const std::vector<Var>& vs) {
    Binder bind(t);
    for (size_t i = 0; i < plist.size(); ++i) bind.set_override(plist[i], vs[i + 1]);
    Var y = gen.forward(t, bind, vs[0]);
    Rng wr(seed ^ 0x78);
    Tensor w = Tensor::random_uniform(t.value(y).shape, wr, -1, 1);
    return reduce_sum(mul(y, t.leaf(w)));
  };
  return line_from("generator_8x8", grad_check(f, inputs, 1e-5, 1e-4));
}

GradCheckLine check_cycle_loss(uint64_t seed) {
  Rng r(seed);
  std::vector<Tensor> inputs = {
      Tensor::random_uniform({3, 3, 4}, r, 0, 1), Tensor::random_uniform({3, 3, 2}, r, 0, 1),
      Tensor::random_uniform({3, 3, 4}, r, 0, 1), Tensor::random_uniform({3, 3, 2}, r, 0, 1)};
  auto f = [](Tape&, const std::vector<Var>& vs) {
    return cycle_loss(vs[0], vs[1], vs[2], vs[3]);
  };
  return line_from("cycle_loss", grad_check(f, inputs, 1e-5, 1e-4));
}

GradCheckLine check_nde_loss(uint64_t seed) {
  GeneratorConfig gc;
  gc.stage_blocks = {1, 1, 1};
  gc.base_channels = 4;
  gc.in_channels = 3;
  gc.out_channels = 5;
  gc.bypass_blocks = 1;
  Rng init(seed ^ 0x999);
  Generator g_rh("nde_rh", gc, init);
  GeneratorConfig hc = gc;
  std::swap(hc.in_channels, hc.out_channels);
  Generator g_hr("nde_hr", hc, init);
  // bypass final maps are zero-initialized; perturb so gradients are non-trivial
  Rng pr(seed ^ 0x888);
  for (ParamGroup* pg : {&g_rh.bypass_group(), &g_hr.bypass_group()})
    for (const auto& p : pg->params())
      for (double& v : p->value.data) v += 0.05 * pr.normal();

  Rng r(seed);
  std::vector<Tensor> inputs = {Tensor::random_uniform({4, 4, 5}, r, 0, 1),
                                Tensor::random_uniform({4, 4, 3}, r, 0, 1)};
  auto f = [&](Tape& t, const std::vector<Var>& vs) {
    Binder frozen(t, false);
    return non_degraded_loss(t, frozen, g_rh, g_hr, vs[0], vs[1]);
  };
  return line_from("non_degraded_loss", grad_check(f, inputs, 1e-5, 1e-4));
}

std::pair<GradCheckLine, GradCheckLine> check_adv_loss(uint64_t seed) {
  Rng init(seed ^ 0x555);
  Discriminator d_h("adv_dh", 5, 4, init);
  Discriminator d_r("adv_dr", 3, 4, init);
  Rng r(seed);
  std::vector<Tensor> inputs = {
      Tensor::random_uniform({8, 8, 5}, r, 0, 1), Tensor::random_uniform({8, 8, 3}, r, 0, 1),
      Tensor::random_uniform({8, 8, 5}, r, 0, 1), Tensor::random_uniform({8, 8, 3}, r, 0, 1)};
  auto make = [&](bool gen_side) {
    return [&, gen_side](Tape& t, const std::vector<Var>& vs) {
      Binder frozen(t, false);
      AdvLoss adv = adversarial_loss(t, frozen, d_h, d_r, vs[0], vs[1], vs[2], vs[3]);
      return gen_side ? adv.gen_term : adv.disc_term;
    };
  };
  return {line_from("adversarial_loss_disc", grad_check(make(false), inputs, 1e-5, 1e-4)),
          line_from("adversarial_loss_gen", grad_check(make(true), inputs, 1e-5, 1e-4))};
}

GradCheckLine check_contrastive(uint64_t seed, bool spectral) {
  Rng r(seed);
  std::vector<Tensor> inputs;
  for (int i = 0; i < 5; ++i) inputs.push_back(Tensor::random_uniform({8}, r, -1, 1));
  auto f = [spectral](Tape&, const std::vector<Var>& vs) {
    PatchCodes pc;
    pc.query = vs[0];
    pc.positive = vs[1];
    pc.negatives = {vs[2], vs[3], vs[4]};
    return spectral ? spectral_contrastive(pc) : geometric_contrastive(pc);
  };
  return line_from(spectral ? "spectral_contrastive" : "geometric_contrastive",
                   grad_check(f, inputs, 1e-5, 1e-4));
}

GradCheckLine check_total_loss(uint64_t seed) {
  Rng r(seed);
  std::vector<Tensor> inputs;
  for (int i = 0; i < 5; ++i) inputs.push_back(Tensor::random_uniform({1}, r, 0, 2));
  auto f = [](Tape& t, const std::vector<Var>& vs) {
    LossParts p{vs[0], vs[1], vs[2], vs[3], vs[4]};
    return total_loss(t, p, LossWeights{});
  };
  return line_from("total_loss", grad_check(f, inputs, 1e-5, 1e-4));
}

}  // namespace

std::vector<GradCheckLine> run_gradcheck_suite(uint64_t seed) {
  std::vector<GradCheckLine> lines;
  for (const OpCheck& oc : op_registry()) lines.push_back(line_from(oc.name, oc.run(seed)));
  lines.push_back(check_block(seed));
  lines.push_back(check_generator(seed));
  lines.push_back(check_cycle_loss(seed));
  lines.push_back(check_nde_loss(seed));
  auto [adv_d, adv_g] = check_adv_loss(seed);
  lines.push_back(adv_d);
  lines.push_back(adv_g);
  lines.push_back(check_contrastive(seed, true));
  lines.push_back(check_contrastive(seed, false));
  lines.push_back(check_total_loss(seed));
  return lines;
}

// ---------------- ablation ----------------

TrainConfig apply_variant(const TrainConfig& base, const std::string& variant) {
  TrainConfig c = base;
  if (variant == "base") return c;
  if (variant == "no-nukes") {
    c.traditional_kan = true;
    return c;
  }
  if (variant == "no-gmsa") {
    c.use_gabor = false;
    return c;
  }
  if (variant == "no-dcpm-g") {
    c.weights.geometric = 0.0;
    return c;
  }
  if (variant == "no-dcpm-s") {
    c.weights.spectral = 0.0;
    return c;
  }
  fail(ErrCode::ConfigInvalid, "unknown ablation variant: " + variant);
}

std::vector<AblationRow> run_ablation(const TrainConfig& base_cfg,
                                      const std::vector<uint64_t>& seeds,
                                      const std::string& out_dir,
                                      const std::vector<std::string>& variants) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::vector<AblationRow> rows;
  for (const std::string& v : variants) {
    AblationRow row;
    row.variant = v;
    std::vector<double> rmses, sams;
    for (uint64_t seed : seeds) {
      TrainConfig cfg = apply_variant(base_cfg, v);
      cfg.seed = seed;
      std::string run_dir = out_dir + "/" + v + "_s" + std::to_string(seed);
      RunManifest mf = train_run(cfg, run_dir);
      row.psnr_per_seed.push_back(mf.val_psnr_final);
      rmses.push_back(mf.final_metrics.rmse);
      sams.push_back(mf.final_metrics.sam_deg);
    }
    row.psnr_median = median_of(row.psnr_per_seed);
    row.rmse_median = median_of(rmses);
    row.sam_median = median_of(sams);
    rows.push_back(std::move(row));
  }
  write_ablation_csv(rows, out_dir + "/ablation.csv");
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrCode::IoFailure, "cannot write " + path);
  out << "variant";
  if (!rows.empty())
    for (size_t i = 0; i < rows[0].psnr_per_seed.size(); ++i) out << ",psnr_seed" << i;
  out << ",psnr_median,rmse_median,sam_median\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.variant;
    for (double v : r.psnr_per_seed) {
      std::snprintf(buf, sizeof(buf), ",%.6f", v);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f\n", r.psnr_median, r.rmse_median,
                  r.sam_median);
    out << buf;
  }
}

}  // namespace nukes
