#pragma once

#include <string>
#include <vector>

#include "nukes/hsicube.hpp"
#include "nukes/losses.hpp"
#include "nukes/metrics.hpp"

namespace nukes {

struct TrainConfig {
  int n_hsi_scenes = 12;
  int n_rgb_scenes = 12;
  int n_val_scenes = 2;
  int image_size = 32;
  int bands = 31;
  std::vector<int> stage_blocks = {1, 1, 2, 1, 1};
  int base_channels = 8;
  int disc_base = 32;
  int code_dim = 64;
  int bypass_blocks = 2;
  int n_patches = 64;
  int n_negatives = 15;
  int n_endmembers = 3;
  double scene_smoothness = 3.0;
  LossWeights weights;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lr = 2e-4;
  int steps = 500;
  int cosine_horizon = 0;  // 0 means equal to steps
  uint64_t seed = 1;
  bool f32_params = false;  // round parameters to f32 after each update
  // block toggles (ablations)
  bool use_gabor = true;
  bool traditional_kan = false;
  bool gabor_alt_form = false;

  void validate() const;
  static TrainConfig from_json_file(const std::string& path);
  static TrainConfig from_json_text(const std::string& text);
  std::string to_json_text() const;

  GeneratorConfig generator_config() const;  // RGB -> HSI direction
};

struct RunManifest {
  std::string config_json;
  std::string config_hash;  // fnv-1a of the canonical config text
  std::string loss_csv;
  std::string checkpoint_dir;
  std::string init_checkpoint_dir;
  double val_psnr_init = 0;
  double val_psnr_final = 0;
  double first_logged_total = 0;   // generator total at step 1
  double total_at_step10 = 0;
  double total_at_last = 0;
  MetricReport final_metrics;  // averaged scalars over validation scenes

  void save(const std::string& path) const;
};

std::string fnv1a_hex(const std::string& text);

RunManifest train_run(const TrainConfig& cfg, const std::string& out_dir);

// validation PSNR of G_RH on held-out paired synthetic scenes
double validate_psnr(const TrainConfig& cfg, ModelSet& models);

HsiCube infer_rgb_to_hsi(ModelSet& models, const RgbImage& rgb);

// loads only the gen_rh_main group; returns the loaded group names
std::vector<std::string> load_infer_checkpoint(const std::string& dir, ModelSet& models);

struct GradCheckLine {
  std::string name;
  bool pass = false;
  double max_rel_err = 0;
  int64_t coords = 0;
};

// every registered primitive, the Nuk-MSA block, the full generator on an
// 8x8 input, and the five losses
std::vector<GradCheckLine> run_gradcheck_suite(uint64_t seed);

struct AblationRow {
  std::string variant;
  std::vector<double> psnr_per_seed;
  double psnr_median = 0;
  double rmse_median = 0;
  double sam_median = 0;
};

std::vector<AblationRow> run_ablation(const TrainConfig& base_cfg,
                                      const std::vector<uint64_t>& seeds,
                                      const std::string& out_dir,
                                      const std::vector<std::string>& variants = {
                                          "base", "no-nukes", "no-gmsa", "no-dcpm-g",
                                          "no-dcpm-s"});

TrainConfig apply_variant(const TrainConfig& base, const std::string& variant);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path);

}  // namespace nukes
