#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "nukes/metrics.hpp"

using namespace nukes;
namespace fs = std::filesystem;

namespace {

HsiCube cube_of(int w, int h, int c, std::vector<double> v) {
  HsiCube out(w, h, c);
  out.data = std::move(v);
  return out;
}

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("nukes_metrics_" + name)).string();
}

}  // namespace

TEST_CASE("rmse anchors") {
  HsiCube x = cube_of(1, 1, 2, {1.0, 2.0});
  CHECK(rmse(x, x) == 0.0);

  // two 1-pixel bands with diffs (1,2): sqrt((1+4)/2) = sqrt(2.5)
  HsiCube rec = cube_of(1, 1, 2, {2.0, 4.0});
  CHECK(rmse(x, rec) == doctest::Approx(std::sqrt(2.5)).epsilon(1e-12));
  CHECK(rmse(x, rec) == doctest::Approx(1.5811).epsilon(1e-4));
  CHECK(rmse(rec, x) == rmse(x, rec));

  // invariant under a common spatial permutation
  Rng rng(1);
  HsiCube a(3, 2, 4), b(3, 2, 4);
  for (auto& v : a.data) v = rng.uniform(0, 1);
  for (auto& v : b.data) v = rng.uniform(0, 1);
  HsiCube ap = a, bp = b;
  const int64_t hw = a.plane();
  for (int band = 0; band < 4; ++band)
    for (int64_t p = 0; p < hw; ++p) {
      ap.data[size_t(band) * hw + p] = a.data[size_t(band) * hw + (hw - 1 - p)];
      bp.data[size_t(band) * hw + p] = b.data[size_t(band) * hw + (hw - 1 - p)];
    }
  CHECK(rmse(a, b) == doctest::Approx(rmse(ap, bp)).epsilon(1e-15));

  HsiCube wrong(2, 2, 2);
  CHECK_THROWS_AS(rmse(x, wrong), Error);
}

TEST_CASE("mrae anchors") {
  HsiCube x = cube_of(1, 1, 2, {1.0, 2.0});
  CHECK(mrae(x, x) == 0.0);
  HsiCube rec = cube_of(1, 1, 2, {1.1, 1.8});
  CHECK(mrae(x, rec) == doctest::Approx(0.1).epsilon(1e-12));

  HsiCube zeros = cube_of(1, 1, 2, {0.0, 0.0});
  try {
    mrae(zeros, rec);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrCode::AllElementsGuarded);
  }

  // guarded elements are excluded, not clamped
  HsiCube mixed = cube_of(1, 1, 2, {0.0, 2.0});
  HsiCube mrec = cube_of(1, 1, 2, {5.0, 1.0});
  CHECK(mrae(mixed, mrec) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("psnr anchors") {
  // reference spans [0,1]; both diffs scale to exactly 1 on the 255 range
  HsiCube x = cube_of(2, 1, 1, {0.0, 1.0});
  HsiCube rec = cube_of(2, 1, 1, {1.0 / 255.0, 1.0 - 1.0 / 255.0});
  double expect = 10.0 * std::log10(255.0 * 255.0);
  CHECK(psnr(x, rec) == doctest::Approx(expect).epsilon(1e-9));
  CHECK(expect == doctest::Approx(48.1308).epsilon(1e-5));

  try {
    psnr(x, x);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrCode::IdenticalImages);
  }

  HsiCube flat = cube_of(2, 1, 1, {0.7, 0.7});
  try {
    psnr(flat, rec);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrCode::ConstantReference);
  }

  // monotone: a larger disturbance lowers PSNR
  HsiCube worse = cube_of(2, 1, 1, {3.0 / 255.0, 1.0 - 3.0 / 255.0});
  CHECK(psnr(x, worse) < psnr(x, rec));
}

TEST_CASE("ssim anchors") {
  Rng rng(3);
  HsiCube x(2, 2, 3);
  for (auto& v : x.data) v = rng.uniform(0.1, 0.9);
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));

  // anti-correlated band with equal stats: covariance flips sign, SSIM < 1
  HsiCube rec = x;
  const int64_t hw = x.plane();
  for (int band = 0; band < 3; ++band) {
    double mu = 0;
    for (int64_t p = 0; p < hw; ++p) mu += x.data[size_t(band) * hw + p];
    mu /= static_cast<double>(hw);
    for (int64_t p = 0; p < hw; ++p)
      rec.data[size_t(band) * hw + p] = -x.data[size_t(band) * hw + p] + 2.0 * mu;
  }
  double s = ssim(x, rec);
  CHECK(s < 1.0);
  // direct 4-element evaluation of the formula for band 0
  {
    const double c1 = 1e-4, c2 = 9e-4;
    double mu = 0, mur = 0;
    for (int64_t p = 0; p < hw; ++p) {
      mu += x.data[static_cast<size_t>(p)];
      mur += rec.data[static_cast<size_t>(p)];
    }
    mu /= 4;
    mur /= 4;
    double vx = 0, vr = 0, cov = 0;
    for (int64_t p = 0; p < hw; ++p) {
      vx += (x.data[static_cast<size_t>(p)] - mu) * (x.data[static_cast<size_t>(p)] - mu);
      vr += (rec.data[static_cast<size_t>(p)] - mur) * (rec.data[static_cast<size_t>(p)] - mur);
      cov += (x.data[static_cast<size_t>(p)] - mu) * (rec.data[static_cast<size_t>(p)] - mur);
    }
    vx /= 4;
    vr /= 4;
    cov /= 4;
    double band0 = ((2 * mu * mur + c1) * (2 * cov + c2)) /
                   ((mu * mu + mur * mur + c1) * (vx + vr + c2));
    MetricReport r = metric_report(x, rec);
    CHECK(r.ssim_per_band[0] == doctest::Approx(band0).epsilon(1e-12));
    CHECK(band0 < 1.0);
  }
  // bounded
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);
}

TEST_CASE("sam anchors") {
  Rng rng(5);
  HsiCube x(2, 2, 3);
  for (auto& v : x.data) v = rng.uniform(0.1, 1.0);

  // positive scaling of either argument gives zero angle (arccos turns ~1e-13
  // of rounding in the cosine into ~1e-6 degrees)
  HsiCube scaled = x;
  for (auto& v : scaled.data) v *= 3.7;
  CHECK(sam(x, scaled, SamMode::PerBand) < 1e-4);
  CHECK(sam(x, scaled, SamMode::PerPixel) < 1e-4);

  // orthogonal band pair reads 90 degrees
  HsiCube a = cube_of(2, 1, 1, {1.0, 0.0});
  HsiCube b = cube_of(2, 1, 1, {0.0, 1.0});
  CHECK(sam(a, b, SamMode::PerBand) == doctest::Approx(90.0).epsilon(1e-12));

  // per-pixel mode matches a brute-force oracle
  HsiCube rec(2, 2, 3);
  for (auto& v : rec.data) v = rng.uniform(0.1, 1.0);
  const int64_t hw = x.plane();
  double acc = 0;
  for (int64_t p = 0; p < hw; ++p) {
    double dot = 0, nu = 0, nv = 0;
    for (int band = 0; band < 3; ++band) {
      double u = x.data[size_t(band) * hw + p];
      double v = rec.data[size_t(band) * hw + p];
      dot += u * v;
      nu += u * u;
      nv += v * v;
    }
    acc += std::acos(std::min(1.0, std::max(-1.0, dot / std::sqrt(nu * nv)))) * 180.0 /
           3.14159265358979323846;
  }
  acc /= static_cast<double>(hw);
  CHECK(std::abs(sam(x, rec, SamMode::PerPixel) - acc) < 1e-9);

  // symmetry in both modes
  CHECK(sam(x, rec, SamMode::PerBand) == doctest::Approx(sam(rec, x, SamMode::PerBand)).epsilon(1e-12));
  CHECK(sam(x, rec, SamMode::PerPixel) ==
        doctest::Approx(sam(rec, x, SamMode::PerPixel)).epsilon(1e-12));

  HsiCube zero(2, 2, 3);
  try {
    sam(x, zero, SamMode::PerPixel);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrCode::ZeroVector);
  }
}

TEST_CASE("error map output") {
  HsiCube x(4, 3, 2);
  for (auto& v : x.data) v = 0.25;
  HsiCube rec = x;

  std::string path = tmp_path("zero.pgm");
  error_map(x, rec, -1, path);
  {
    std::ifstream in(path, std::ios::binary);
    std::string magic, dims;
    std::getline(in, magic);
    CHECK(magic == "P5");
    std::getline(in, dims);
    CHECK(dims == "4 3");
    std::getline(in, dims);  // maxval
    std::string rest((std::istreambuf_iterator<char>(in)), {});
    CHECK(rest.size() == 12);
    for (char c : rest) CHECK(c == 0);
  }

  // one differing pixel becomes the single bright spot
  rec.at(1, 2, 3) += 0.5;
  std::string path2 = tmp_path("spot.pgm");
  error_map(x, rec, -1, path2);
  {
    std::ifstream in(path2, std::ios::binary);
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    std::getline(in, line);
    std::string rest((std::istreambuf_iterator<char>(in)), {});
    for (size_t i = 0; i < rest.size(); ++i) {
      unsigned char v = static_cast<unsigned char>(rest[i]);
      if (i == size_t(2) * 4 + 3)
        CHECK(v == 255);
      else
        CHECK(v == 0);
    }
  }
}

TEST_CASE("metric report json") {
  Rng rng(7);
  HsiCube x(3, 3, 4), rec(3, 3, 4);
  for (auto& v : x.data) v = rng.uniform(0.1, 1.0);
  for (auto& v : rec.data) v = rng.uniform(0.1, 1.0);
  MetricReport r = metric_report(x, rec, SamMode::PerBand);
  CHECK(r.rmse > 0);
  CHECK(r.sam_per_band.size() == 4);
  CHECK(r.rmse_per_band.size() == 4);
  std::string path = tmp_path("report.json");
  write_report_json(r, path);
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), {});
  CHECK(text.find("\"rmse\"") != std::string::npos);
  CHECK(text.find("\"sam_deg\"") != std::string::npos);
}
