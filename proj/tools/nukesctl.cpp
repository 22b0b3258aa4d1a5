#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "nukes/layers.hpp"
#include "nukes/metrics.hpp"
#include "nukes/spline.hpp"
#include "nukes/train.hpp"

namespace {

using namespace nukes;

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrCode::ConfigInvalid:
    case ErrCode::InvalidParam:
      return 1;
    default:
      return 2;
  }
}

std::pair<int, int> parse_size(const std::string& s) {
  auto x = s.find('x');
  if (x == std::string::npos) fail(ErrCode::ConfigInvalid, "size must look like WxH");
  return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
}

TrainConfig load_config(const std::string& path) {
  if (path.empty()) return TrainConfig{};
  return TrainConfig::from_json_file(path);
}

int cmd_synth(uint64_t seed, int bands, const std::string& size, int endmembers,
              double smoothness, const std::string& out) {
  auto [w, h] = parse_size(size);
  SceneSpec spec;
  spec.seed = seed;
  spec.bands = bands;
  spec.width = w;
  spec.height = h;
  spec.n_endmembers = endmembers;
  spec.spatial_smoothness = smoothness;
  save_cube(synth_scene(spec), out);
  std::printf("wrote %dx%dx%d cube to %s\n", w, h, bands, out.c_str());
  return 0;
}

int cmd_rnd(const std::string& srf_path, const std::string& in, const std::string& out_range,
            const std::string& out_null) {
  HsiCube cube = load_cube(in);
  SrfOperator srf = srf_path.empty() ? default_srf(cube.bands) : load_srf_csv(srf_path);
  if (!out_range.empty()) save_cube(range_component(cube, srf), out_range);
  if (!out_null.empty()) save_cube(null_component(cube, srf), out_null);
  std::printf("decomposed %s (C=%d)\n", in.c_str(), cube.bands);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, int steps_override,
              int64_t seed_override) {
  TrainConfig cfg = load_config(config_path);
  if (steps_override > 0) cfg.steps = steps_override;
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  RunManifest mf = train_run(cfg, out_dir);
  std::printf("trained %d steps; val PSNR %.3f dB -> %.3f dB; artifacts in %s\n", cfg.steps,
              mf.val_psnr_init, mf.val_psnr_final, out_dir.c_str());
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& config_path, const std::string& in,
              const std::string& out) {
  TrainConfig cfg = load_config(config_path);
  ModelSet models = ModelSet::build(cfg.generator_config(), cfg.disc_base, cfg.code_dim, 0);
  auto loaded = load_infer_checkpoint(ckpt, models);
  HsiCube rgb_cube = load_cube(in);
  if (rgb_cube.bands != 3) fail(ErrCode::DimensionMismatch, "inference input must have 3 bands");
  RgbImage rgb(rgb_cube.width, rgb_cube.height);
  rgb.data = rgb_cube.data;
  save_cube(infer_rgb_to_hsi(models, rgb), out);
  std::printf("loaded groups:");
  for (const auto& g : loaded) std::printf(" %s", g.c_str());
  std::printf("\nwrote %s\n", out.c_str());
  return 0;
}

int cmd_metrics(const std::string& ref, const std::string& rec, const std::string& json_out,
                const std::string& sam_mode, const std::string& errmap) {
  HsiCube a = load_cube(ref);
  HsiCube b = load_cube(rec);
  SamMode mode = sam_mode == "pixel" ? SamMode::PerPixel : SamMode::PerBand;
  MetricReport r = metric_report(a, b, mode);
  std::printf("RMSE %.6f  MRAE %.6f  PSNR %s  SSIM %.6f  SAM %.4f deg\n", r.rmse, r.mrae,
              r.psnr_infinite ? "inf" : std::to_string(r.psnr_db).c_str(), r.ssim_mean,
              r.sam_deg);
  if (!json_out.empty()) write_report_json(r, json_out);
  if (!errmap.empty()) error_map(a, b, -1, errmap);
  return 0;
}

int cmd_gradcheck(uint64_t seed) {
  auto lines = run_gradcheck_suite(seed);
  bool all = true;
  for (const auto& l : lines) {
    std::printf("[%s] %-24s max_rel_err %.3e  (%lld coords)\n", l.pass ? "PASS" : "FAIL",
                l.name.c_str(), l.max_rel_err, static_cast<long long>(l.coords));
    all = all && l.pass;
  }
  std::printf("%zu checks, %s\n", lines.size(), all ? "all passed" : "FAILURES present");
  return all ? 0 : 3;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir,
               const std::string& seeds_csv, int steps_override) {
  TrainConfig cfg = load_config(config_path);
  if (steps_override > 0) cfg.steps = steps_override;
  std::vector<uint64_t> seeds;
  {
    std::stringstream ss(seeds_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
  }
  if (seeds.empty()) fail(ErrCode::ConfigInvalid, "need at least one seed");
  auto rows = run_ablation(cfg, seeds, out_dir);
  for (const auto& r : rows)
    std::printf("%-10s median val PSNR %.3f dB (rmse %.4f, sam %.3f)\n", r.variant.c_str(),
                r.psnr_median, r.rmse_median, r.sam_median);
  std::printf("table: %s/ablation.csv\n", out_dir.c_str());
  return 0;
}

int cmd_gabor_bank(double sigma, int k, int m_count, const std::string& out) {
  std::ofstream f(out, std::ios::trunc);
  if (!f) fail(ErrCode::IoFailure, "cannot write " + out);
  f.precision(17);
  for (int m = 0; m < m_count; ++m) {
    double freq = 1.0 + m;
    double theta = 3.14159265358979323846 * m / m_count;
    Tensor ker = gabor_kernel(freq, theta, sigma, k);
    f << "# kernel " << m << " f=" << freq << " theta=" << theta << "\n";
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) f << (j ? "," : "") << ker[int64_t(i) * k + j];
      f << "\n";
    }
  }
  std::printf("wrote %d kernels to %s\n", m_count, out.c_str());
  return 0;
}

int cmd_spline(int degree, int interior, double radius, int samples, const std::string& out) {
  NcpgRaw raw;
  raw.knot_increments.assign(static_cast<size_t>(interior) + 1, 0.0);
  NcpgResult g = ncpg_generate(raw, degree, radius);
  BasisMatrix bm(degree, g.knots);
  std::ofstream f(out, std::ios::trunc);
  if (!f) fail(ErrCode::IoFailure, "cannot write " + out);
  f.precision(17);
  f << "x";
  for (int i = 0; i < bm.basis_count(); ++i) f << ",N" << i;
  f << "\n";
  for (int s = 0; s < samples; ++s) {
    double x = -radius + 2 * radius * s / (samples - 1.0);
    auto row = bm.row(x);
    f << x;
    for (double v : row) f << "," << v;
    f << "\n";
  }
  std::printf("wrote %d basis samples to %s\n", samples, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NukesFormer unpaired hyperspectral generation toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic hyperspectral scene");
  uint64_t seed = 0;
  int bands = 31, endmembers = 4;
  double smoothness = 3.0;
  std::string size = "32x32", out_file = "scene.hsc";
  synth->add_option("--seed", seed);
  synth->add_option("--bands", bands);
  synth->add_option("--size", size, "WxH");
  synth->add_option("--endmembers", endmembers);
  synth->add_option("--smoothness", smoothness);
  synth->add_option("-o,--out", out_file)->required();

  // rnd
  auto* rnd = app.add_subcommand("rnd", "range/null-space decomposition of a cube");
  std::string srf_path, in_file, out_range, out_null;
  rnd->add_option("--srf", srf_path, "SRF csv (3 rows x C); default synthetic SRF");
  rnd->add_option("--in", in_file)->required();
  rnd->add_option("--range", out_range);
  rnd->add_option("--null", out_null);

  // train
  auto* train = app.add_subcommand("train", "toy unpaired training run");
  std::string config_path, out_dir = "run";
  int steps_override = 0;
  int64_t seed_override = -1;
  train->add_option("--config", config_path, "json config; defaults otherwise");
  train->add_option("--out", out_dir);
  train->add_option("--steps", steps_override);
  train->add_option("--seed", seed_override);

  // infer
  auto* infer = app.add_subcommand("infer", "RGB -> HSI with the reconstruction generator only");
  std::string ckpt, infer_in, infer_out = "out.hsc", infer_config;
  infer->add_option("--ckpt", ckpt)->required();
  infer->add_option("--config", infer_config);
  infer->add_option("--in", infer_in)->required();
  infer->add_option("--out", infer_out);

  // metrics
  auto* met = app.add_subcommand("metrics", "evaluation suite for a cube pair");
  std::string ref, rec, json_out, sam_mode = "band", errmap;
  met->add_option("--ref", ref)->required();
  met->add_option("--rec", rec)->required();
  met->add_option("--json", json_out);
  met->add_option("--sam-mode", sam_mode)->check(CLI::IsMember({"band", "pixel"}));
  met->add_option("--errmap", errmap);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks for all layers");
  uint64_t gc_seed = 20240817;
  gc->add_option("--seed", gc_seed);

  // ablate
  auto* abl = app.add_subcommand("ablate", "train ablation variants and compare");
  std::string abl_config, abl_out = "ablation", abl_seeds = "1,2,3";
  int abl_steps = 0;
  abl->add_option("--config", abl_config);
  abl->add_option("--out", abl_out);
  abl->add_option("--seeds", abl_seeds, "comma-separated");
  abl->add_option("--steps", abl_steps);

  // gabor-bank
  auto* gb = app.add_subcommand("gabor-bank", "dump Gabor kernels as csv grids");
  double gb_sigma = 2.0;
  int gb_k = 7, gb_m = 4;
  std::string gb_out = "gabor.csv";
  gb->add_option("--sigma", gb_sigma);
  gb->add_option("--ksize", gb_k);
  gb->add_option("--kernels", gb_m);
  gb->add_option("--dump,-o", gb_out);

  // spline
  auto* sp = app.add_subcommand("spline", "dump B-spline basis values as csv");
  int sp_degree = 3, sp_interior = 8, sp_samples = 201;
  double sp_radius = 4.0;
  std::string sp_out = "spline.csv";
  sp->add_option("--degree", sp_degree);
  sp->add_option("--interior", sp_interior);
  sp->add_option("--radius", sp_radius);
  sp->add_option("--samples", sp_samples);
  sp->add_option("--eval,-o", sp_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help and friends
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*synth) return cmd_synth(seed, bands, size, endmembers, smoothness, out_file);
    if (*rnd) return cmd_rnd(srf_path, in_file, out_range, out_null);
    if (*train) return cmd_train(config_path, out_dir, steps_override, seed_override);
    if (*infer) return cmd_infer(ckpt, infer_config, infer_in, infer_out);
    if (*met) return cmd_metrics(ref, rec, json_out, sam_mode, errmap);
    if (*gc) return cmd_gradcheck(gc_seed);
    if (*abl) return cmd_ablate(abl_config, abl_out, abl_seeds, abl_steps);
    if (*gb) return cmd_gabor_bank(gb_sigma, gb_k, gb_m, gb_out);
    if (*sp) return cmd_spline(sp_degree, sp_interior, sp_radius, sp_samples, sp_out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
