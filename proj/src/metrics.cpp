#include "nukes/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace nukes {

namespace {

constexpr double kRadToDeg = 57.295779513082320877;
constexpr double kMraeGuard = 1e-6;

void check_pair(const HsiCube& a, const HsiCube& b) {
  if (a.width != b.width || a.height != b.height || a.bands != b.bands)
    fail(ErrCode::ShapeMismatch, "cube shapes differ");
}

double band_rmse(const HsiCube& x, const HsiCube& r, int b) {
  const int64_t hw = x.plane();
  const double* xp = x.data.data() + int64_t(b) * hw;
  const double* rp = r.data.data() + int64_t(b) * hw;
  double s = 0;
  for (int64_t p = 0; p < hw; ++p) {
    double d = xp[p] - rp[p];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(hw));
}

}  // namespace

double rmse(const HsiCube& x, const HsiCube& x_rec) {
  check_pair(x, x_rec);
  double s = 0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    double d = x.data[i] - x_rec.data[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(x.data.size()));
}

double mrae(const HsiCube& x, const HsiCube& x_rec) {
  check_pair(x, x_rec);
  double s = 0;
  int64_t kept = 0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    if (std::abs(x.data[i]) < kMraeGuard) continue;
    s += std::abs(x.data[i] - x_rec.data[i]) / std::abs(x.data[i]);
    ++kept;
  }
  if (kept == 0) fail(ErrCode::AllElementsGuarded, "every reference element is below the guard");
  return s / static_cast<double>(kept);
}

double psnr(const HsiCube& x, const HsiCube& x_rec) {
  check_pair(x, x_rec);
  double mn = x.data[0], mx = x.data[0];
  for (double v : x.data) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  if (!(mx > mn)) fail(ErrCode::ConstantReference, "reference cube has no value range");
  const double k = 255.0 / (mx - mn);
  double mse = 0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    double d = k * (x.data[i] - mn) - k * (x_rec.data[i] - mn);
    mse += d * d;
  }
  mse /= static_cast<double>(x.data.size());
  if (mse == 0.0) fail(ErrCode::IdenticalImages, "PSNR is infinite for identical cubes");
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

namespace {

double band_ssim(const HsiCube& x, const HsiCube& r, int b) {
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // L = 1
  const int64_t hw = x.plane();
  const double* xp = x.data.data() + int64_t(b) * hw;
  const double* rp = r.data.data() + int64_t(b) * hw;
  double mx = 0, mr = 0;
  for (int64_t p = 0; p < hw; ++p) {
    mx += xp[p];
    mr += rp[p];
  }
  mx /= static_cast<double>(hw);
  mr /= static_cast<double>(hw);
  double vx = 0, vr = 0, cov = 0;
  for (int64_t p = 0; p < hw; ++p) {
    vx += (xp[p] - mx) * (xp[p] - mx);
    vr += (rp[p] - mr) * (rp[p] - mr);
    cov += (xp[p] - mx) * (rp[p] - mr);
  }
  vx /= static_cast<double>(hw);
  vr /= static_cast<double>(hw);
  cov /= static_cast<double>(hw);
  return ((2 * mx * mr + c1) * (2 * cov + c2)) / ((mx * mx + mr * mr + c1) * (vx + vr + c2));
}

double angle_deg(const double* u, const double* v, int64_t n, int64_t stride) {
  double dot = 0, nu = 0, nv = 0;
  for (int64_t i = 0; i < n; ++i) {
    double a = u[i * stride], b = v[i * stride];
    dot += a * b;
    nu += a * a;
    nv += b * b;
  }
  if (nu <= 0 || nv <= 0) fail(ErrCode::ZeroVector, "SAM is undefined for a zero vector");
  double c = dot / (std::sqrt(nu) * std::sqrt(nv));
  c = std::min(1.0, std::max(-1.0, c));
  return kRadToDeg * std::acos(c);
}

}  // namespace

double ssim(const HsiCube& x, const HsiCube& x_rec) {
  check_pair(x, x_rec);
  double s = 0;
  for (int b = 0; b < x.bands; ++b) s += band_ssim(x, x_rec, b);
  return s / x.bands;
}

double sam(const HsiCube& x, const HsiCube& x_rec, SamMode mode) {
  check_pair(x, x_rec);
  const int64_t hw = x.plane();
  double s = 0;
  if (mode == SamMode::PerBand) {
    for (int b = 0; b < x.bands; ++b)
      s += angle_deg(x.data.data() + int64_t(b) * hw, x_rec.data.data() + int64_t(b) * hw, hw, 1);
    return s / x.bands;
  }
  for (int64_t p = 0; p < hw; ++p)
    s += angle_deg(x.data.data() + p, x_rec.data.data() + p, x.bands, hw);
  return s / static_cast<double>(hw);
}

void error_map(const HsiCube& x, const HsiCube& x_rec, int band, const std::string& path) {
  check_pair(x, x_rec);
  if (band >= x.bands) fail(ErrCode::IndexOutOfRange, "band index");
  const int64_t hw = x.plane();
  const int b0 = band < 0 ? 0 : band;
  const int b1 = band < 0 ? x.bands : band + 1;
  std::vector<double> map(static_cast<size_t>(hw), 0.0);
  for (int64_t p = 0; p < hw; ++p) {
    double s = 0;
    for (int b = b0; b < b1; ++b) {
      double d = x.data[size_t(b) * hw + p] - x_rec.data[size_t(b) * hw + p];
      s += d * d;
    }
    map[static_cast<size_t>(p)] = std::sqrt(s / (b1 - b0));
  }
  double mn = map[0], mx = map[0];
  for (double v : map) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrCode::IoFailure, "cannot open " + path);
  out << "P5\n" << x.width << " " << x.height << "\n255\n";
  const double span = mx > mn ? mx - mn : 1.0;
  for (int64_t p = 0; p < hw; ++p) {
    double v = (map[static_cast<size_t>(p)] - mn) / span;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
  }
  if (!out) fail(ErrCode::IoFailure, "write failed for " + path);
}

MetricReport metric_report(const HsiCube& x, const HsiCube& x_rec, SamMode sam_mode) {
  check_pair(x, x_rec);
  MetricReport r;
  r.rmse = rmse(x, x_rec);
  r.mrae = mrae(x, x_rec);
  try {
    r.psnr_db = psnr(x, x_rec);
  } catch (const Error& e) {
    if (e.code() != ErrCode::IdenticalImages) throw;
    r.psnr_infinite = true;
    r.psnr_db = std::numeric_limits<double>::infinity();
  }
  r.ssim_mean = ssim(x, x_rec);
  r.sam_deg = sam(x, x_rec, sam_mode);

  const int64_t hw = x.plane();
  for (int b = 0; b < x.bands; ++b) {
    r.rmse_per_band.push_back(band_rmse(x, x_rec, b));
    r.ssim_per_band.push_back(band_ssim(x, x_rec, b));
    double s = 0;
    int64_t kept = 0;
    for (int64_t p = 0; p < hw; ++p) {
      double xv = x.data[size_t(b) * hw + p];
      if (std::abs(xv) < kMraeGuard) continue;
      s += std::abs(xv - x_rec.data[size_t(b) * hw + p]) / std::abs(xv);
      ++kept;
    }
    r.mrae_per_band.push_back(kept ? s / static_cast<double>(kept) : 0.0);
    if (sam_mode == SamMode::PerBand)
      r.sam_per_band.push_back(
          angle_deg(x.data.data() + int64_t(b) * hw, x_rec.data.data() + int64_t(b) * hw, hw, 1));
  }
  return r;
}

void write_report_json(const MetricReport& r, const std::string& path) {
  nlohmann::json j;
  j["rmse"] = r.rmse;
  j["mrae"] = r.mrae;
  if (r.psnr_infinite)
    j["psnr_db"] = "inf";
  else
    j["psnr_db"] = r.psnr_db;
  j["ssim"] = r.ssim_mean;
  j["sam_deg"] = r.sam_deg;
  j["rmse_per_band"] = r.rmse_per_band;
  j["mrae_per_band"] = r.mrae_per_band;
  j["ssim_per_band"] = r.ssim_per_band;
  if (!r.sam_per_band.empty()) j["sam_per_band"] = r.sam_per_band;
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrCode::IoFailure, "cannot open " + path);
  out << j.dump(2) << "\n";
}

}  // namespace nukes
