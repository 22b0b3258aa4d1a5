#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nukes/layers.hpp"

namespace nukes {

struct GeneratorConfig {
  std::vector<int> stage_blocks = {1, 1, 2, 1, 1};  // must have odd length
  int base_channels = 8;
  int in_channels = 3;
  int out_channels = 31;
  int bypass_blocks = 2;  // depth of the domain-preserving trunk used by L_nde
  BlockConfig block;      // per-stage copies get their channel width filled in

  int depth() const { return static_cast<int>(stage_blocks.size()) / 2; }
  void validate() const;
};

struct GenOut {
  Var out;
  Var last_features;  // final-stage Nuk-MSA output, feeds the DCPM encoders
};

// U-shaped encoder-decoder of cascaded Nuk-MSA blocks with a long skip from
// the stem, plus a separate domain-preserving bypass trunk for the
// non-degraded loss.
class Generator {
 public:
  Generator(const std::string& name, const GeneratorConfig& cfg, Rng& rng);

  GenOut forward_with_features(Tape& t, Binder& bind, Var img) const;
  Var forward(Tape& t, Binder& bind, Var img) const {
    return forward_with_features(t, bind, img).out;
  }
  // trunk at out_channels width, no resampling, residual; identity when the
  // final map is zero
  Var bypass_forward(Tape& t, Binder& bind, Var img) const;

  const GeneratorConfig& config() const { return cfg_; }
  ParamGroup& main_group() { return main_; }
  ParamGroup& bypass_group() { return bypass_; }
  const ParamGroup& main_group() const { return main_; }
  const ParamGroup& bypass_group() const { return bypass_; }

 private:
  GeneratorConfig cfg_;
  ParamGroup main_;
  ParamGroup bypass_;

  Param* in_w_ = nullptr;
  Param* in_b_ = nullptr;
  std::vector<std::vector<NukMsaBlock>> enc_stages_;
  std::vector<Param*> down_w_, down_b_;
  std::vector<NukMsaBlock> bottleneck_;
  std::vector<Param*> up_w_, up_b_;
  std::vector<Param*> skip_w_, skip_b_;
  std::vector<std::vector<NukMsaBlock>> dec_stages_;
  Param* final_w_ = nullptr;  // zero-init trunk fusion
  Param* final_b_ = nullptr;
  Param* out_w_ = nullptr;
  Param* out_b_ = nullptr;

  std::vector<NukMsaBlock> bypass_trunk_;
  Param* bypass_final_w_ = nullptr;  // zero-init
  Param* bypass_final_b_ = nullptr;
};

// Patch classifier: three strided separable conv stages and a sigmoid head,
// scores strictly in (0,1).
class Discriminator {
 public:
  Discriminator(const std::string& name, int in_channels, int base, Rng& rng);
  Var forward(Tape& t, Binder& bind, Var img) const;  // [H,W,C] -> [H/8,W/8,1]
  ParamGroup& group() { return group_; }
  const ParamGroup& group() const { return group_; }
  int in_channels() const { return in_channels_; }

 private:
  int in_channels_;
  ParamGroup group_;
  std::vector<Param*> dw_k_, pw_w_, pw_b_;
  Param* head_w_ = nullptr;
  Param* head_b_ = nullptr;
};

// DCPM auxiliary encoder: 2-layer MLP over channel codes.
class ProjectionHead {
 public:
  ProjectionHead(const std::string& name, int in_channels, int code_dim, Rng& rng);
  Var forward(Tape& t, Binder& bind, Var feats) const;  // [H,W,Cin] -> [H,W,code]
  ParamGroup& group() { return group_; }
  const ParamGroup& group() const { return group_; }
  int code_dim() const { return code_dim_; }

 private:
  int code_dim_;
  ParamGroup group_;
  Param *w1_, *b1_, *w2_, *b2_;
};

struct CyclePass {
  Var y_f;      // G_HR(X)
  Var x_r;      // G_RH(Y_f)
  Var x_hat_f;  // G_RH(Y_hat)
  Var y_hat_r;  // G_HR(X_hat_f)
  // final-stage features per phase, inputs to the DCPM encoders
  Var feats_deg_a, feats_deg_b;
  Var feats_rec_a, feats_rec_b;
};

// Both phases share one binder so each generator's parameters are bound once.
CyclePass cycle_pass(Tape& t, Binder& bind, Var x_hsi, Var y_rgb, const Generator& g_rh,
                     const Generator& g_hr);

// The whole trainable system.
struct ModelSet {
  std::unique_ptr<Generator> g_rh, g_hr;
  std::unique_ptr<Discriminator> d_h, d_r;
  std::unique_ptr<ProjectionHead> enc_a, enc_b;

  static ModelSet build(const GeneratorConfig& rh_cfg, int disc_base, int code_dim,
                        uint64_t init_seed);

  int64_t count_params_train() const;
  int64_t count_params_infer() const;  // main path of G_RH only

  std::vector<ParamGroup*> generator_groups();    // generators + bypasses + encoders
  std::vector<ParamGroup*> discriminator_groups();
  std::vector<ParamGroup*> all_groups();
  std::vector<const ParamGroup*> all_groups() const;
};

// JSON manifest + one little-endian f32 blob per parameter group.
void save_checkpoint(const std::string& dir, const std::vector<const ParamGroup*>& groups);
// Loads the named groups (all manifest groups when `only` is empty); returns
// the group names actually read.
std::vector<std::string> load_checkpoint(const std::string& dir,
                                         const std::vector<ParamGroup*>& groups,
                                         const std::vector<std::string>& only = {});

}  // namespace nukes
