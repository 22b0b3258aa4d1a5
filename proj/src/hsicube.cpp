#include "nukes/hsicube.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace nukes {

void HsiCube::validate() const {
  if (bands < 1) fail(ErrCode::DimensionMismatch, "cube needs at least one band");
  if (static_cast<int64_t>(data.size()) != int64_t(width) * height * bands)
    fail(ErrCode::DimensionMismatch, "cube data length does not match dimensions");
  for (double v : data)
    if (!std::isfinite(v)) fail(ErrCode::NonFiniteData, "cube contains NaN or Inf");
}

// ---------------- HSC1 file format ----------------
// One UTF-8 JSON header line terminated by '\n', then W*H*C little-endian f32.

HsiCube load_cube(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrCode::MissingFile, path);

  std::string header;
  if (!std::getline(in, header)) fail(ErrCode::HeaderMismatch, "missing header line in " + path);

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrCode::HeaderMismatch, std::string("bad header json: ") + e.what());
  }
  if (!j.contains("magic") || j["magic"] != "HSC1")
    fail(ErrCode::HeaderMismatch, "magic is not HSC1");
  if (j.value("dtype", "") != std::string("f32"))
    fail(ErrCode::HeaderMismatch, "dtype must be f32");
  if (j.value("order", "") != std::string("band-major"))
    fail(ErrCode::HeaderMismatch, "order must be band-major");

  int w = j.value("width", 0);
  int h = j.value("height", 0);
  int c = j.value("bands", 0);
  if (w < 1 || h < 1 || c < 1) fail(ErrCode::HeaderMismatch, "non-positive dimensions");

  int64_t n = int64_t(w) * h * c;
  std::vector<float> payload(static_cast<size_t>(n));
  in.read(reinterpret_cast<char*>(payload.data()), n * 4);
  if (in.gcount() != n * 4)
    fail(ErrCode::HeaderMismatch, "declared " + std::to_string(n) + " floats, payload shorter");
  char extra;
  if (in.read(&extra, 1))
    fail(ErrCode::HeaderMismatch, "payload longer than declared size");

  HsiCube cube(w, h, c);
  for (int64_t i = 0; i < n; ++i) {
    float v = payload[static_cast<size_t>(i)];
    if (!std::isfinite(v)) fail(ErrCode::NonFiniteData, "payload contains NaN or Inf");
    cube.data[static_cast<size_t>(i)] = static_cast<double>(v);
  }
  return cube;
}

void save_cube(const HsiCube& cube, const std::string& path) {
  cube.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrCode::IoFailure, "cannot open " + path + " for writing");

  char header[256];
  std::snprintf(header, sizeof(header),
                "{\"magic\":\"HSC1\",\"width\":%d,\"height\":%d,\"bands\":%d,"
                "\"dtype\":\"f32\",\"order\":\"band-major\"}\n",
                cube.width, cube.height, cube.bands);
  out << header;

  std::vector<float> payload(cube.data.size());
  for (size_t i = 0; i < cube.data.size(); ++i) payload[i] = static_cast<float>(cube.data[i]);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * 4));
  if (!out) fail(ErrCode::IoFailure, "write failed for " + path);
}

// ---------------- SRF and projectors ----------------

namespace {

// Eigendecomposition of a symmetric 3x3 by cyclic Jacobi rotations.
void jacobi_eig3(const double a_in[9], double eigval[3], double eigvec[9]) {
  double a[9];
  std::memcpy(a, a_in, sizeof(a));
  double v[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = std::abs(a[1]) + std::abs(a[2]) + std::abs(a[5]);
    if (off < 1e-300) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        double apq = a[p * 3 + q];
        if (std::abs(apq) < 1e-300) continue;
        double app = a[p * 3 + p], aqq = a[q * 3 + q];
        double phi = 0.5 * std::atan2(2.0 * apq, aqq - app);
        double c = std::cos(phi), s = std::sin(phi);
        for (int k = 0; k < 3; ++k) {
          double akp = a[k * 3 + p], akq = a[k * 3 + q];
          a[k * 3 + p] = c * akp - s * akq;
          a[k * 3 + q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          double apk = a[p * 3 + k], aqk = a[q * 3 + k];
          a[p * 3 + k] = c * apk - s * aqk;
          a[q * 3 + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          double vkp = v[k * 3 + p], vkq = v[k * 3 + q];
          v[k * 3 + p] = c * vkp - s * vkq;
          v[k * 3 + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  for (int i = 0; i < 3; ++i) eigval[i] = a[i * 3 + i];
  std::memcpy(eigvec, v, sizeof(v));
}

}  // namespace

SrfOperator build_srf_from_matrix(const std::vector<double>& d_3xC, int bands,
                                  double noise_sigma) {
  if (bands <= 3) fail(ErrCode::RankDeficient, "need C > 3 bands");
  if (static_cast<int>(d_3xC.size()) != 3 * bands)
    fail(ErrCode::DimensionMismatch, "SRF matrix must be 3 x bands");

  SrfOperator srf;
  srf.bands = bands;
  srf.d = d_3xC;
  srf.noise_sigma = noise_sigma;
  const int C = bands;

  // SVD of the wide 3xC matrix through the 3x3 Gram matrix D D^T = U S^2 U^T.
  double g[9] = {0};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < C; ++k) s += srf.d[size_t(i) * C + k] * srf.d[size_t(j) * C + k];
      g[i * 3 + j] = s;
    }
  double eigval[3], u[9];
  jacobi_eig3(g, eigval, u);

  double sigma[3];
  double sigma_max = 0;
  for (int i = 0; i < 3; ++i) {
    sigma[i] = std::sqrt(std::max(0.0, eigval[i]));
    sigma_max = std::max(sigma_max, sigma[i]);
  }
  const double thresh = 1e-10 * sigma_max;
  int rank = 0;
  for (int i = 0; i < 3; ++i)
    if (sigma[i] > thresh) ++rank;
  if (rank < 3) fail(ErrCode::RankDeficient, "SRF rows are not linearly independent");

  // v_i = D^T u_i / sigma_i; D+ = sum_i v_i u_i^T / sigma_i = D^T U S^-2 U^T
  srf.d_pinv.assign(size_t(C) * 3, 0.0);
  for (int i = 0; i < 3; ++i) {
    double inv2 = 1.0 / (sigma[i] * sigma[i]);
    // w = D^T u_i
    for (int k = 0; k < C; ++k) {
      double w = 0;
      for (int r = 0; r < 3; ++r) w += srf.d[size_t(r) * C + k] * u[r * 3 + i];
      for (int r = 0; r < 3; ++r)
        srf.d_pinv[size_t(k) * 3 + r] += w * inv2 * u[r * 3 + i];
    }
  }

  // range = D+ D, null = I - range
  srf.range_proj.assign(size_t(C) * C, 0.0);
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) {
      double s = 0;
      for (int r = 0; r < 3; ++r) s += srf.d_pinv[size_t(i) * 3 + r] * srf.d[size_t(r) * C + j];
      srf.range_proj[size_t(i) * C + j] = s;
    }
  srf.null_proj.assign(size_t(C) * C, 0.0);
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j)
      srf.null_proj[size_t(i) * C + j] =
          (i == j ? 1.0 : 0.0) - srf.range_proj[size_t(i) * C + j];
  return srf;
}

SrfOperator build_srf(const std::array<SrfCurve, 3>& curves, int bands, double noise_sigma) {
  if (bands <= 3) fail(ErrCode::RankDeficient, "need C > 3 bands");
  std::vector<double> d(size_t(3) * bands, 0.0);
  for (int ch = 0; ch < 3; ++ch) {
    double sum = 0;
    for (int b = 0; b < bands; ++b) {
      double z = (b - curves[size_t(ch)].center) / curves[size_t(ch)].width;
      double v = std::exp(-0.5 * z * z);
      d[size_t(ch) * bands + b] = v;
      sum += v;
    }
    if (sum <= 0) fail(ErrCode::RankDeficient, "degenerate response curve");
    for (int b = 0; b < bands; ++b) d[size_t(ch) * bands + b] /= sum;
  }
  return build_srf_from_matrix(d, bands, noise_sigma);
}

SrfOperator default_srf(int bands) {
  // R/G/B response peaks at roughly 610/550/460 nm over a 400-700 nm axis
  double c = static_cast<double>(bands - 1);
  return build_srf({SrfCurve{0.70 * c, 0.12 * bands}, SrfCurve{0.50 * c, 0.12 * bands},
                    SrfCurve{0.20 * c, 0.12 * bands}},
                   bands);
}

SrfOperator load_srf_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrCode::MissingFile, path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  if (rows.size() != 3) fail(ErrCode::HeaderMismatch, "SRF csv must have exactly 3 rows");
  size_t c = rows[0].size();
  if (rows[1].size() != c || rows[2].size() != c)
    fail(ErrCode::HeaderMismatch, "SRF csv rows have unequal length");
  std::vector<double> d;
  d.reserve(3 * c);
  for (const auto& r : rows) d.insert(d.end(), r.begin(), r.end());
  return build_srf_from_matrix(d, static_cast<int>(c));
}

void save_srf_csv(const SrfOperator& srf, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrCode::IoFailure, "cannot open " + path);
  char buf[64];
  for (int r = 0; r < 3; ++r) {
    for (int b = 0; b < srf.bands; ++b) {
      std::snprintf(buf, sizeof(buf), "%.17g", srf.d[size_t(r) * srf.bands + b]);
      out << (b ? "," : "") << buf;
    }
    out << "\n";
  }
  if (!out) fail(ErrCode::IoFailure, "write failed for " + path);
}

// ---------------- degradation and projections ----------------

RgbImage degrade(const HsiCube& cube, const SrfOperator& srf, bool with_noise, uint64_t seed) {
  if (cube.bands != srf.bands)
    fail(ErrCode::DimensionMismatch, "cube has " + std::to_string(cube.bands) +
                                         " bands, SRF expects " + std::to_string(srf.bands));
  RgbImage rgb(cube.width, cube.height);
  const int64_t hw = cube.plane();
  const int C = cube.bands;
  for (int ch = 0; ch < 3; ++ch) {
    for (int64_t p = 0; p < hw; ++p) {
      double s = 0;
      for (int b = 0; b < C; ++b) s += srf.d[size_t(ch) * C + b] * cube.data[size_t(b) * hw + p];
      rgb.data[size_t(ch) * hw + p] = s;
    }
  }
  if (with_noise && srf.noise_sigma > 0) {
    Rng rng(seed);
    for (auto& v : rgb.data) v += srf.noise_sigma * rng.normal();
  }
  return rgb;
}

namespace {

HsiCube project(const HsiCube& cube, const std::vector<double>& proj, const SrfOperator& srf) {
  if (cube.bands != srf.bands) fail(ErrCode::DimensionMismatch, "cube/SRF band count mismatch");
  HsiCube out(cube.width, cube.height, cube.bands);
  const int64_t hw = cube.plane();
  const int C = cube.bands;
  for (int i = 0; i < C; ++i) {
    for (int64_t p = 0; p < hw; ++p) {
      double s = 0;
      for (int j = 0; j < C; ++j) s += proj[size_t(i) * C + j] * cube.data[size_t(j) * hw + p];
      out.data[size_t(i) * hw + p] = s;
    }
  }
  return out;
}

}  // namespace

HsiCube range_component(const HsiCube& cube, const SrfOperator& srf) {
  return project(cube, srf.range_proj, srf);
}

HsiCube null_component(const HsiCube& cube, const SrfOperator& srf) {
  return project(cube, srf.null_proj, srf);
}

// ---------------- synthetic scenes ----------------

namespace {

// separable Gaussian blur with reflect boundary
void blur_field(std::vector<double>& f, int w, int h, double sigma) {
  if (sigma <= 0) return;
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(size_t(2 * radius + 1));
  double ksum = 0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[size_t(i + radius)] = v;
    ksum += v;
  }
  for (auto& v : kernel) v /= ksum;

  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - i - 1;
    }
    return i;
  };

  std::vector<double> tmp(f.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -radius; i <= radius; ++i)
        s += kernel[size_t(i + radius)] * f[size_t(y) * w + reflect(x + i, w)];
      tmp[size_t(y) * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -radius; i <= radius; ++i)
        s += kernel[size_t(i + radius)] * tmp[size_t(reflect(y + i, h)) * w + x];
      f[size_t(y) * w + x] = s;
    }
}

}  // namespace

HsiCube synth_scene(const SceneSpec& spec, std::vector<double>* abundance_out) {
  if (spec.n_endmembers < 1) fail(ErrCode::InvalidParam, "need at least one endmember");
  if (spec.bands < 1 || spec.width < 1 || spec.height < 1)
    fail(ErrCode::InvalidParam, "bad scene dimensions");

  Rng master(spec.seed);
  Rng field_rng = master.fork(2);

  const int K = spec.n_endmembers;
  const int C = spec.bands;
  const int64_t hw = int64_t(spec.width) * spec.height;

  // smooth endmember spectra: Gaussian bumps over band index, range inside
  // (0,1). The library is shared by every scene (same materials, different
  // spatial layouts); scene seeds only drive the abundance fields.
  Rng em_rng(0x6c1b2a3dull + 131ull * static_cast<uint64_t>(C));
  std::vector<double> endmembers(size_t(K) * C);
  for (int k = 0; k < K; ++k) {
    double center = em_rng.uniform(0.0, C - 1.0);
    double width = em_rng.uniform(0.2 * C, 0.5 * C);
    double amp = em_rng.uniform(0.35, 0.75);
    double base = em_rng.uniform(0.05, 0.2);
    for (int b = 0; b < C; ++b) {
      double z = (b - center) / width;
      endmembers[size_t(k) * C + b] = base + amp * std::exp(-0.5 * z * z);
    }
  }

  // abundance fields: smoothed white noise, per-pixel softmax so sums are exactly 1
  std::vector<std::vector<double>> fields(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k) {
    auto& f = fields[static_cast<size_t>(k)];
    f.resize(static_cast<size_t>(hw));
    for (auto& v : f) v = field_rng.normal();
    blur_field(f, spec.width, spec.height, spec.spatial_smoothness);
    // rescale post-blur so the softmax keeps contrast between regions
    double mx = -1e300, mn = 1e300;
    for (double v : f) {
      mx = std::max(mx, v);
      mn = std::min(mn, v);
    }
    double span = (mx > mn) ? (mx - mn) : 1.0;
    for (auto& v : f) v = 6.0 * (v - mn) / span;
  }

  HsiCube cube(spec.width, spec.height, C);
  if (abundance_out) abundance_out->assign(size_t(K) * static_cast<size_t>(hw), 0.0);
  std::vector<double> a(static_cast<size_t>(K));
  for (int64_t p = 0; p < hw; ++p) {
    double mx = -1e300;
    for (int k = 0; k < K; ++k) mx = std::max(mx, fields[static_cast<size_t>(k)][static_cast<size_t>(p)]);
    double denom = 0;
    for (int k = 0; k < K; ++k) {
      a[static_cast<size_t>(k)] = std::exp(fields[static_cast<size_t>(k)][static_cast<size_t>(p)] - mx);
      denom += a[static_cast<size_t>(k)];
    }
    for (int k = 0; k < K; ++k) a[static_cast<size_t>(k)] /= denom;
    if (abundance_out)
      for (int k = 0; k < K; ++k)
        (*abundance_out)[size_t(k) * static_cast<size_t>(hw) + static_cast<size_t>(p)] =
            a[static_cast<size_t>(k)];
    for (int b = 0; b < C; ++b) {
      double s = 0;
      for (int k = 0; k < K; ++k) s += a[static_cast<size_t>(k)] * endmembers[size_t(k) * C + b];
      // quantize to f32 so HSC1 round-trips are bit-exact
      cube.data[size_t(b) * hw + p] = static_cast<double>(static_cast<float>(s));
    }
  }
  return cube;
}

}  // namespace nukes
