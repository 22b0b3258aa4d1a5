#pragma once

#include <string>
#include <vector>

#include "nukes/hsicube.hpp"

namespace nukes {

enum class SamMode { PerBand, PerPixel };

struct MetricReport {
  double rmse = 0;
  double mrae = 0;
  double psnr_db = 0;
  double ssim_mean = 0;
  double sam_deg = 0;
  bool psnr_infinite = false;  // identical inputs
  std::vector<double> rmse_per_band;
  std::vector<double> mrae_per_band;
  std::vector<double> ssim_per_band;
  std::vector<double> sam_per_band;  // only in per-band mode
};

double rmse(const HsiCube& x, const HsiCube& x_rec);

// elements with |x| < 1e-6 are excluded from the mean
double mrae(const HsiCube& x, const HsiCube& x_rec);

// both cubes rescaled to [0,255] by the ground-truth min/max before the MSE
double psnr(const HsiCube& x, const HsiCube& x_rec);

// per-band global-statistics SSIM, averaged over bands; c1=1e-4, c2=9e-4
double ssim(const HsiCube& x, const HsiCube& x_rec);

double sam(const HsiCube& x, const HsiCube& x_rec, SamMode mode);

// per-pixel RMSE across the selected bands (band < 0 means all), min-max
// normalized, written as binary 8-bit PGM
void error_map(const HsiCube& x, const HsiCube& x_rec, int band, const std::string& path);

MetricReport metric_report(const HsiCube& x, const HsiCube& x_rec,
                           SamMode sam_mode = SamMode::PerBand);
void write_report_json(const MetricReport& r, const std::string& path);

}  // namespace nukes
