#include "nukes/model.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace nukes {

void GeneratorConfig::validate() const {
  if (stage_blocks.empty() || stage_blocks.size() % 2 == 0)
    fail(ErrCode::ConfigInvalid, "stage_blocks must have odd length");
  for (int n : stage_blocks)
    if (n < 1) fail(ErrCode::ConfigInvalid, "every stage needs at least one block");
  if (base_channels < 1 || in_channels < 1 || out_channels < 1)
    fail(ErrCode::ConfigInvalid, "channel counts must be positive");
  if (bypass_blocks < 1) fail(ErrCode::ConfigInvalid, "bypass needs at least one block");
}

Generator::Generator(const std::string& name, const GeneratorConfig& cfg, Rng& rng)
    : cfg_(cfg), main_(name + "_main"), bypass_(name + "_bypass") {
  cfg_.validate();
  const int depth = cfg_.depth();
  const int B = cfg_.base_channels;

  auto block_cfg = [&](int channels) {
    BlockConfig bc = cfg_.block;
    bc.channels = channels;
    return bc;
  };

  in_w_ = main_.add("in_w", init_normal({cfg_.in_channels, B}, rng,
                                        1.0 / std::sqrt(double(cfg_.in_channels))));
  in_b_ = main_.add("in_b", init_const({B}, 0.0));

  int stage = 0;
  for (int s = 0; s < depth; ++s, ++stage) {
    int width = B << s;
    std::vector<NukMsaBlock> blocks;
    for (int i = 0; i < cfg_.stage_blocks[static_cast<size_t>(stage)]; ++i)
      blocks.emplace_back(main_, "enc" + std::to_string(s) + ".b" + std::to_string(i),
                          block_cfg(width), rng);
    enc_stages_.push_back(std::move(blocks));
    down_w_.push_back(main_.add("down" + std::to_string(s) + "_w",
                                init_normal({width, width * 2}, rng, 1.0 / std::sqrt(double(width)))));
    down_b_.push_back(main_.add("down" + std::to_string(s) + "_b", init_const({width * 2}, 0.0)));
  }
  {
    int width = B << depth;
    for (int i = 0; i < cfg_.stage_blocks[static_cast<size_t>(stage)]; ++i)
      bottleneck_.emplace_back(main_, "mid.b" + std::to_string(i), block_cfg(width), rng);
    ++stage;
  }
  for (int s = 0; s < depth; ++s, ++stage) {
    int wide = B << (depth - s);
    int width = wide / 2;
    up_w_.push_back(main_.add("up" + std::to_string(s) + "_w",
                              init_normal({wide, width}, rng, 1.0 / std::sqrt(double(wide)))));
    up_b_.push_back(main_.add("up" + std::to_string(s) + "_b", init_const({width}, 0.0)));
    skip_w_.push_back(main_.add("skip" + std::to_string(s) + "_w",
                                init_normal({2 * width, width}, rng,
                                            1.0 / std::sqrt(double(2 * width)))));
    skip_b_.push_back(main_.add("skip" + std::to_string(s) + "_b", init_const({width}, 0.0)));
    std::vector<NukMsaBlock> blocks;
    for (int i = 0; i < cfg_.stage_blocks[static_cast<size_t>(stage)]; ++i)
      blocks.emplace_back(main_, "dec" + std::to_string(s) + ".b" + std::to_string(i),
                          block_cfg(width), rng);
    dec_stages_.push_back(std::move(blocks));
  }
  final_w_ = main_.add("final_w", init_const({B, B}, 0.0));
  final_b_ = main_.add("final_b", init_const({B}, 0.0));
  out_w_ = main_.add("out_w", init_normal({B, cfg_.out_channels}, rng, 1.0 / std::sqrt(double(B))));
  // both image domains are nominally [0,1]; start the head at mid-range
  out_b_ = main_.add("out_b", init_const({cfg_.out_channels}, 0.5));

  // bypass trunk runs at the preserved-domain width (the generator's output
  // domain), no spatial resampling, first projection replaced by identity
  const int D = cfg_.out_channels;
  for (int i = 0; i < cfg_.bypass_blocks; ++i)
    bypass_trunk_.emplace_back(bypass_, "byp.b" + std::to_string(i), block_cfg(D), rng);
  bypass_final_w_ = bypass_.add("byp_final_w", init_normal({D, D}, rng, 0.02));
  bypass_final_b_ = bypass_.add("byp_final_b", init_const({D}, 0.0));
}

GenOut Generator::forward_with_features(Tape& t, Binder& bind, Var img) const {
  const Tensor& ti = t.value(img);
  if (ti.ndim() != 3 || ti.dim(2) != cfg_.in_channels)
    fail(ErrCode::ShapeMismatch, "generator expects [H,W," + std::to_string(cfg_.in_channels) +
                                     "], got " + shape_str(ti.shape));
  const int depth = cfg_.depth();
  const int div = 1 << depth;
  if (ti.dim(0) % div || ti.dim(1) % div)
    fail(ErrCode::OddSpatialSize, "spatial dims must be divisible by " + std::to_string(div));

  Var x1 = linear(img, bind(in_w_), bind(in_b_));
  Var cur = x1;
  std::vector<Var> skips;
  for (int s = 0; s < depth; ++s) {
    for (const auto& b : enc_stages_[static_cast<size_t>(s)]) cur = b.forward(t, bind, cur);
    skips.push_back(cur);
    cur = linear(avg_pool2(cur), bind(down_w_[static_cast<size_t>(s)]),
                 bind(down_b_[static_cast<size_t>(s)]));
  }
  for (const auto& b : bottleneck_) cur = b.forward(t, bind, cur);
  for (int s = 0; s < depth; ++s) {
    cur = linear(upsample2(cur), bind(up_w_[static_cast<size_t>(s)]),
                 bind(up_b_[static_cast<size_t>(s)]));
    cur = linear(concat_channels({cur, skips[static_cast<size_t>(depth - 1 - s)]}),
                 bind(skip_w_[static_cast<size_t>(s)]), bind(skip_b_[static_cast<size_t>(s)]));
    for (const auto& b : dec_stages_[static_cast<size_t>(s)]) cur = b.forward(t, bind, cur);
  }
  GenOut out;
  out.last_features = cur;
  Var fused = add(linear(cur, bind(final_w_), bind(final_b_)), x1);
  out.out = linear(fused, bind(out_w_), bind(out_b_));
  return out;
}

Var Generator::bypass_forward(Tape& t, Binder& bind, Var img) const {
  const Tensor& ti = t.value(img);
  if (ti.ndim() != 3 || ti.dim(2) != cfg_.out_channels)
    fail(ErrCode::ChannelMismatch, "bypass preserves the " + std::to_string(cfg_.out_channels) +
                                       "-channel domain, got " + shape_str(ti.shape));
  Var cur = img;
  for (const auto& b : bypass_trunk_) cur = b.forward(t, bind, cur);
  return add(img, linear(cur, bind(bypass_final_w_), bind(bypass_final_b_)));
}

// ---------------- discriminator ----------------

Discriminator::Discriminator(const std::string& name, int in_channels, int base, Rng& rng)
    : in_channels_(in_channels), group_(name) {
  int widths[4] = {in_channels, base, 2 * base, 4 * base};
  for (int s = 0; s < 3; ++s) {
    int ci = widths[s], co = widths[s + 1];
    dw_k_.push_back(group_.add("s" + std::to_string(s) + "_dw",
                               init_normal({ci, 3, 3}, rng, 1.0 / 3.0)));
    pw_w_.push_back(group_.add("s" + std::to_string(s) + "_pw",
                               init_normal({ci, co}, rng, 1.0 / std::sqrt(double(ci)))));
    pw_b_.push_back(group_.add("s" + std::to_string(s) + "_pb", init_const({co}, 0.0)));
  }
  head_w_ = group_.add("head_w", init_normal({widths[3], 1}, rng, 1.0 / std::sqrt(double(widths[3]))));
  head_b_ = group_.add("head_b", init_const({1}, 0.0));
}

Var Discriminator::forward(Tape& t, Binder& bind, Var img) const {
  const Tensor& ti = t.value(img);
  if (ti.ndim() != 3 || ti.dim(2) != in_channels_)
    fail(ErrCode::ShapeMismatch, "discriminator expects " + std::to_string(in_channels_) +
                                     " channels, got " + shape_str(ti.shape));
  Var cur = img;
  for (size_t s = 0; s < 3; ++s) {
    cur = depthwise_conv(cur, bind(dw_k_[s]));
    cur = gelu(linear(cur, bind(pw_w_[s]), bind(pw_b_[s])));
    cur = avg_pool2(cur);
  }
  return sigmoid(linear(cur, bind(head_w_), bind(head_b_)));
}

// ---------------- projection head ----------------

ProjectionHead::ProjectionHead(const std::string& name, int in_channels, int code_dim, Rng& rng)
    : code_dim_(code_dim), group_(name) {
  w1_ = group_.add("w1", init_normal({in_channels, code_dim}, rng,
                                     1.0 / std::sqrt(double(in_channels))));
  b1_ = group_.add("b1", init_const({code_dim}, 0.0));
  w2_ = group_.add("w2", init_normal({code_dim, code_dim}, rng, 1.0 / std::sqrt(double(code_dim))));
  b2_ = group_.add("b2", init_const({code_dim}, 0.0));
}

Var ProjectionHead::forward(Tape& t, Binder& bind, Var feats) const {
  (void)t;
  return linear(gelu(linear(feats, bind(w1_), bind(b1_))), bind(w2_), bind(b2_));
}

// ---------------- cycle pass ----------------

CyclePass cycle_pass(Tape& t, Binder& bind, Var x_hsi, Var y_rgb, const Generator& g_rh,
                     const Generator& g_hr) {
  CyclePass cp;
  // degradation phase: X -> Y_f -> X_r
  GenOut deg = g_hr.forward_with_features(t, bind, x_hsi);
  cp.y_f = deg.out;
  cp.feats_deg_a = deg.last_features;
  GenOut rec1 = g_rh.forward_with_features(t, bind, cp.y_f);
  cp.x_r = rec1.out;
  cp.feats_deg_b = rec1.last_features;
  // reconstruction phase: Y_hat -> X_hat_f -> Y_hat_r
  GenOut rec2 = g_rh.forward_with_features(t, bind, y_rgb);
  cp.x_hat_f = rec2.out;
  cp.feats_rec_a = rec2.last_features;
  GenOut deg2 = g_hr.forward_with_features(t, bind, cp.x_hat_f);
  cp.y_hat_r = deg2.out;
  cp.feats_rec_b = deg2.last_features;
  return cp;
}

// ---------------- model set ----------------

ModelSet ModelSet::build(const GeneratorConfig& rh_cfg, int disc_base, int code_dim,
                         uint64_t init_seed) {
  Rng rng(init_seed);
  ModelSet ms;
  GeneratorConfig hr_cfg = rh_cfg;
  std::swap(hr_cfg.in_channels, hr_cfg.out_channels);
  ms.g_rh = std::make_unique<Generator>("gen_rh", rh_cfg, rng);
  ms.g_hr = std::make_unique<Generator>("gen_hr", hr_cfg, rng);
  ms.d_h = std::make_unique<Discriminator>("disc_h", rh_cfg.out_channels, disc_base, rng);
  ms.d_r = std::make_unique<Discriminator>("disc_r", rh_cfg.in_channels, disc_base, rng);
  ms.enc_a = std::make_unique<ProjectionHead>("enc_a", rh_cfg.base_channels, code_dim, rng);
  ms.enc_b = std::make_unique<ProjectionHead>("enc_b", rh_cfg.base_channels, code_dim, rng);
  return ms;
}

int64_t ModelSet::count_params_train() const {
  int64_t n = 0;
  for (const ParamGroup* g : all_groups()) n += g->count();
  return n;
}

int64_t ModelSet::count_params_infer() const { return g_rh->main_group().count(); }

std::vector<ParamGroup*> ModelSet::generator_groups() {
  return {&g_rh->main_group(), &g_rh->bypass_group(), &g_hr->main_group(), &g_hr->bypass_group(),
          &enc_a->group(), &enc_b->group()};
}

std::vector<ParamGroup*> ModelSet::discriminator_groups() {
  return {&d_h->group(), &d_r->group()};
}

std::vector<ParamGroup*> ModelSet::all_groups() {
  auto v = generator_groups();
  for (ParamGroup* g : discriminator_groups()) v.push_back(g);
  return v;
}

std::vector<const ParamGroup*> ModelSet::all_groups() const {
  return {&g_rh->main_group(), &g_rh->bypass_group(), &g_hr->main_group(), &g_hr->bypass_group(),
          &enc_a->group(),     &enc_b->group(),       &d_h->group(),       &d_r->group()};
}

// ---------------- checkpoints ----------------

void save_checkpoint(const std::string& dir, const std::vector<const ParamGroup*>& groups) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  nlohmann::json manifest;
  manifest["format"] = "nukes-ckpt-v1";
  manifest["groups"] = nlohmann::json::array();
  for (const ParamGroup* g : groups) {
    nlohmann::json jg;
    jg["name"] = g->name();
    jg["file"] = g->name() + ".bin";
    jg["params"] = nlohmann::json::array();
    std::ofstream blob(dir + "/" + g->name() + ".bin", std::ios::binary | std::ios::trunc);
    if (!blob) fail(ErrCode::IoFailure, "cannot write " + dir + "/" + g->name() + ".bin");
    for (const auto& p : g->params()) {
      nlohmann::json jp;
      jp["name"] = p->name;
      jp["shape"] = p->value.shape;
      jg["params"].push_back(jp);
      std::vector<float> f32(p->value.data.size());
      for (size_t i = 0; i < f32.size(); ++i) f32[i] = static_cast<float>(p->value.data[i]);
      blob.write(reinterpret_cast<const char*>(f32.data()),
                 static_cast<std::streamsize>(f32.size() * 4));
    }
    if (!blob) fail(ErrCode::IoFailure, "write failed for group " + g->name());
    manifest["groups"].push_back(jg);
  }
  std::ofstream mf(dir + "/manifest.json", std::ios::trunc);
  if (!mf) fail(ErrCode::IoFailure, "cannot write manifest in " + dir);
  mf << manifest.dump(2) << "\n";
}

std::vector<std::string> load_checkpoint(const std::string& dir,
                                         const std::vector<ParamGroup*>& groups,
                                         const std::vector<std::string>& only) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) fail(ErrCode::CorruptCheckpoint, "missing manifest in " + dir);
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrCode::CorruptCheckpoint, std::string("bad manifest: ") + e.what());
  }
  if (manifest.value("format", "") != std::string("nukes-ckpt-v1"))
    fail(ErrCode::CorruptCheckpoint, "unknown checkpoint format");

  auto want = [&](const std::string& name) {
    if (only.empty()) return true;
    for (const auto& n : only)
      if (n == name) return true;
    return false;
  };

  std::vector<std::string> loaded;
  for (const auto& jg : manifest["groups"]) {
    std::string name = jg.value("name", "");
    if (!want(name)) continue;
    ParamGroup* target = nullptr;
    for (ParamGroup* g : groups)
      if (g->name() == name) target = g;
    if (!target) fail(ErrCode::CorruptCheckpoint, "checkpoint group " + name + " has no target");

    std::ifstream blob(dir + "/" + jg.value("file", ""), std::ios::binary);
    if (!blob) fail(ErrCode::CorruptCheckpoint, "missing blob for group " + name);
    const auto& jparams = jg["params"];
    if (jparams.size() != target->params().size())
      fail(ErrCode::CorruptCheckpoint, "parameter count mismatch in group " + name);
    for (size_t i = 0; i < jparams.size(); ++i) {
      const auto& jp = jparams[i];
      Param* p = target->params()[i].get();
      if (jp.value("name", "") != p->name)
        fail(ErrCode::CorruptCheckpoint, "parameter order mismatch at " + p->name);
      std::vector<int> shape = jp["shape"].get<std::vector<int>>();
      if (shape != p->value.shape)
        fail(ErrCode::CorruptCheckpoint, "shape mismatch for " + p->name);
      std::vector<float> f32(p->value.data.size());
      blob.read(reinterpret_cast<char*>(f32.data()),
                static_cast<std::streamsize>(f32.size() * 4));
      if (blob.gcount() != static_cast<std::streamsize>(f32.size() * 4))
        fail(ErrCode::CorruptCheckpoint, "blob too short for " + p->name);
      for (size_t k = 0; k < f32.size(); ++k) {
        if (!std::isfinite(f32[k]))
          fail(ErrCode::CorruptCheckpoint, "non-finite value in " + p->name);
        p->value.data[k] = static_cast<double>(f32[k]);
      }
    }
    char extra;
    if (blob.read(&extra, 1))
      fail(ErrCode::CorruptCheckpoint, "blob longer than manifest for group " + name);
    loaded.push_back(name);
  }
  if (!only.empty() && loaded.size() != only.size())
    fail(ErrCode::CorruptCheckpoint, "checkpoint lacks a requested group");
  return loaded;
}

}  // namespace nukes
