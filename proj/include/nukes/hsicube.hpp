#pragma once

#include <array>
#include <string>
#include <vector>

#include "nukes/common.hpp"

namespace nukes {

// C-band hyperspectral cube, band-major: data[band*H*W + row*W + col], values
// nominally in [0,1].
struct HsiCube {
  int width = 0;
  int height = 0;
  int bands = 0;
  std::vector<double> data;

  HsiCube() = default;
  HsiCube(int w, int h, int c) : width(w), height(h), bands(c), data(size_t(w) * h * c, 0.0) {}

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t plane() const { return int64_t(width) * height; }

  double at(int band, int row, int col) const {
    return data[size_t(band) * plane() + size_t(row) * width + col];
  }
  double& at(int band, int row, int col) {
    return data[size_t(band) * plane() + size_t(row) * width + col];
  }

  void validate() const;
};

// 3-channel image, channel-major like the cube.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(size_t(w) * h * 3, 0.0) {}

  int64_t plane() const { return int64_t(width) * height; }
  double at(int ch, int row, int col) const {
    return data[size_t(ch) * plane() + size_t(row) * width + col];
  }
  double& at(int ch, int row, int col) {
    return data[size_t(ch) * plane() + size_t(row) * width + col];
  }
};

// Spectral response matrix D (3xC) with its SVD pseudo-inverse and the
// range/null projectors D+D and I - D+D.
struct SrfOperator {
  int bands = 0;
  std::vector<double> d;           // 3 x C, row-major
  std::vector<double> d_pinv;      // C x 3
  std::vector<double> range_proj;  // C x C
  std::vector<double> null_proj;   // C x C
  double noise_sigma = 0.0;
};

struct SrfCurve {
  double center = 0.0;  // in band-index units
  double width = 1.0;
};

struct SceneSpec {
  uint64_t seed = 0;
  int n_endmembers = 4;
  double spatial_smoothness = 3.0;
  int bands = 31;
  int width = 32;
  int height = 32;
};

HsiCube load_cube(const std::string& path);
void save_cube(const HsiCube& cube, const std::string& path);

// Three Gaussian response rows over band index, rows normalized to sum 1.
// Pseudo-inverse via SVD, singular values thresholded at 1e-10 * sigma_max.
SrfOperator build_srf(const std::array<SrfCurve, 3>& curves, int bands, double noise_sigma = 0.0);
SrfOperator build_srf_from_matrix(const std::vector<double>& d_3xC, int bands,
                                  double noise_sigma = 0.0);
SrfOperator default_srf(int bands);

SrfOperator load_srf_csv(const std::string& path);
void save_srf_csv(const SrfOperator& srf, const std::string& path);

RgbImage degrade(const HsiCube& cube, const SrfOperator& srf, bool with_noise, uint64_t seed);

HsiCube range_component(const HsiCube& cube, const SrfOperator& srf);
HsiCube null_component(const HsiCube& cube, const SrfOperator& srf);

// Convex mixtures of smooth endmember spectra; abundance fields are smoothed
// noise normalized per pixel to sum 1. Deterministic per spec.seed, values
// quantized to f32 so file round-trips are bit-exact. When abundance_out is
// given it receives the K x (H*W) abundance maps.
HsiCube synth_scene(const SceneSpec& spec, std::vector<double>* abundance_out = nullptr);

}  // namespace nukes
