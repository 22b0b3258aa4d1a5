#include <cmath>

#include "doctest.h"
#include "nukes/spline.hpp"

using namespace nukes;

namespace {

// random knot vector with clamped ends and sorted interior knots, sometimes
// with a repeated interior knot
std::vector<double> random_knots(Rng& rng, int p, int interior, bool clamped = true) {
  std::vector<double> ks;
  std::vector<double> in;
  for (int i = 0; i < interior; ++i) in.push_back(rng.uniform(-3.5, 3.5));
  if (interior > 1 && rng.uniform() < 0.25) in[size_t(rng.below(static_cast<uint64_t>(interior - 1)))] = in.back();
  std::sort(in.begin(), in.end());
  int mult = clamped ? p + 1 : 1;
  for (int i = 0; i < mult; ++i) ks.push_back(-4.0);
  for (double v : in) ks.push_back(v);
  for (int i = 0; i < mult; ++i) ks.push_back(4.0);
  return ks;
}

}  // namespace

TEST_CASE("degree zero indicators") {
  std::vector<double> knots = {0, 1, 2, 3};
  CHECK(bspline_basis_recursive(0, 0, 0.5, knots) == 1.0);
  CHECK(bspline_basis_recursive(1, 0, 0.5, knots) == 0.0);
  CHECK(bspline_basis_recursive(2, 0, 0.5, knots) == 0.0);
}

TEST_CASE("one step of the recursion by hand") {
  std::vector<double> knots = {0, 1, 2};
  // N_{0,1}(0.5) = 0.5 * N_{0,0} + 1.5 * N_{1,0} = 0.5
  CHECK(bspline_basis_recursive(0, 1, 0.5, knots) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("partition of unity for uniform degree-2 basis") {
  std::vector<double> knots;
  for (int i = 0; i <= 8; ++i) knots.push_back(i);
  const int p = 2;
  const int nb = static_cast<int>(knots.size()) - p - 1;
  for (double x = 2.0; x < 6.0; x += 0.1) {
    double s = 0;
    for (int i = 0; i < nb; ++i) s += bspline_basis_recursive(i, p, x, knots);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("matrix form row sums to one") {
  Rng rng(3);
  for (int p = 0; p <= kMaxSplineDegree; ++p) {
    auto knots = random_knots(rng, p, 6);
    BasisMatrix bm(p, knots);
    for (int k = 0; k < 20; ++k) {
      double x = rng.uniform(-4.0, 4.0);
      auto row = bm.row(x);
      double s = 0;
      for (double v : row) s += v;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("matrix form equals recursion") {
  Rng rng(17);
  for (int p = 0; p <= kMaxSplineDegree; ++p) {
    for (int trial = 0; trial < 4; ++trial) {
      auto knots = random_knots(rng, p, 5 + static_cast<int>(rng.below(4)));
      BasisMatrix bm(p, knots);
      const int nb = bm.basis_count();
      for (int k = 0; k < 100; ++k) {
        double x = rng.uniform(-4.0, 4.0);
        auto row = bm.row(x);
        for (int i = 0; i < nb; ++i) {
          double ref = bspline_basis_recursive(i, p, x, knots);
          CHECK(std::abs(row[static_cast<size_t>(i)] - ref) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("degree zero matrix rows are one-hot") {
  std::vector<double> knots = {0, 0.5, 1.2, 2.0, 3.3};
  BasisMatrix bm(0, knots);
  auto row = bm.row(0.7);
  CHECK(row.size() == 4);
  CHECK(row[0] == 0.0);
  CHECK(row[1] == 1.0);
  CHECK(row[2] == 0.0);
  CHECK(row[3] == 0.0);
}

TEST_CASE("local support") {
  Rng rng(23);
  const int p = 3;
  auto knots = random_knots(rng, p, 7);
  const int nb = static_cast<int>(knots.size()) - p - 1;
  for (int i = 0; i < nb; ++i)
    for (int k = 0; k < 50; ++k) {
      double x = rng.uniform(-4.0, 4.0);
      if (x >= knots[size_t(i)] && x < knots[size_t(i + p + 1)]) continue;
      if (x == 4.0) continue;
      CHECK(bspline_basis_recursive(i, p, x, knots) == 0.0);
    }
}

TEST_CASE("basis domain edge is right-closed") {
  std::vector<double> knots = {0, 0, 0, 0, 1, 2, 3, 3, 3, 3};
  const int p = 3;
  double s = 0;
  const int nb = static_cast<int>(knots.size()) - p - 1;
  for (int i = 0; i < nb; ++i) s += bspline_basis_recursive(i, p, 3.0, knots);
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  BasisMatrix bm(p, knots);
  auto row = bm.row(3.0);
  double s2 = 0;
  for (double v : row) s2 += v;
  CHECK(s2 == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("recursive basis index bounds") {
  std::vector<double> knots = {0, 1, 2, 3};
  CHECK_THROWS_AS(bspline_basis_recursive(3, 0, 0.5, knots), Error);
  CHECK_THROWS_AS(bspline_basis_recursive(0, 3, 0.5, knots), Error);
}

TEST_CASE("matrix form errors") {
  std::vector<double> knots = {0, 0, 0, 0, 1, 2, 3, 3, 3, 3};
  CHECK_THROWS_AS(BasisMatrix(6, knots), Error);
  BasisMatrix bm(3, knots);
  CHECK_THROWS_AS(bm.row(-0.5), Error);
  CHECK_THROWS_AS(bm.row(3.5), Error);
}

TEST_CASE("nuk_eval constants and reductions") {
  Rng rng(31);
  NcpgRaw raw;
  raw.knot_increments.resize(9);
  for (auto& v : raw.knot_increments) v = rng.uniform(-1, 1);
  NcpgResult g = ncpg_generate(raw, 3, 4.0);

  SplineSpec spec;
  spec.degree = 3;
  spec.knots = g.knots;
  const int nb = spec.basis_count();
  spec.control_points.assign(static_cast<size_t>(nb), 2.5);
  spec.weights.clear();
  for (int i = 0; i < nb; ++i) spec.weights.push_back(rng.uniform(0.2, 3.0));

  // constant control points give a constant curve regardless of weights
  for (double x = -4.0; x <= 4.0; x += 0.37)
    CHECK(nuk_eval(spec, x) == doctest::Approx(2.5).epsilon(1e-12));

  // equal weights reduce to the plain B-spline curve (recursive oracle)
  for (int i = 0; i < nb; ++i) spec.control_points[static_cast<size_t>(i)] = rng.uniform(-2, 2);
  spec.weights.assign(static_cast<size_t>(nb), 0.7);
  for (double x = -3.9; x <= 3.9; x += 0.53) {
    double ref = 0;
    for (int i = 0; i < nb; ++i)
      ref += bspline_basis_recursive(i, 3, x, spec.knots) * spec.control_points[static_cast<size_t>(i)];
    CHECK(nuk_eval(spec, x) == doctest::Approx(ref).epsilon(1e-10));
  }
}

TEST_CASE("nuk_eval matches the printed rational form with recursive basis") {
  Rng rng(37);
  for (int trial = 0; trial < 3; ++trial) {
    NcpgRaw raw;
    raw.knot_increments.resize(7);
    for (auto& v : raw.knot_increments) v = rng.uniform(-1.5, 1.5);
    NcpgResult g = ncpg_generate(raw, 3, 4.0);
    SplineSpec spec;
    spec.degree = 3;
    spec.knots = g.knots;
    const int nb = spec.basis_count();
    for (int i = 0; i < nb; ++i) {
      spec.control_points.push_back(rng.uniform(-3, 3));
      spec.weights.push_back(rng.uniform(0.3, 2.0));
    }
    for (int k = 0; k < 50; ++k) {
      double x = rng.uniform(-4.0, 4.0);
      double num = 0, den = 0;
      for (int i = 0; i < nb; ++i) {
        double nw = bspline_basis_recursive(i, 3, x, spec.knots) * spec.weights[static_cast<size_t>(i)];
        num += nw * spec.control_points[static_cast<size_t>(i)];
        den += nw;
      }
      CHECK(std::abs(nuk_eval(spec, x) - num / den) < 1e-10);
    }
  }
}

TEST_CASE("nuk_eval weight scale invariance") {
  Rng rng(41);
  NcpgRaw raw;
  raw.knot_increments.assign(6, 0.3);
  NcpgResult g = ncpg_generate(raw, 2, 4.0);
  SplineSpec spec;
  spec.degree = 2;
  spec.knots = g.knots;
  const int nb = spec.basis_count();
  for (int i = 0; i < nb; ++i) {
    spec.control_points.push_back(rng.uniform(-2, 2));
    spec.weights.push_back(rng.uniform(0.2, 2.0));
  }
  SplineSpec scaled = spec;
  for (auto& w : scaled.weights) w *= 17.5;
  for (double x = -3.8; x <= 3.8; x += 0.41)
    CHECK(nuk_eval(spec, x) == doctest::Approx(nuk_eval(scaled, x)).epsilon(1e-12));
}

TEST_CASE("spline spec validation") {
  SplineSpec spec;
  spec.degree = 1;
  spec.knots = {0, 0, 1, 2, 2};
  spec.control_points = {1, 2, 3};
  spec.weights = {1, -1, 1};
  CHECK_THROWS_AS(spec.validate(), Error);  // non-positive weight
  spec.weights = {1, 1, 1};
  CHECK_NOTHROW(spec.validate());
  spec.knots = {0, 2, 1, 2, 2};
  CHECK_THROWS_AS(spec.validate(), Error);  // decreasing knots
}

TEST_CASE("ncpg uniform and monotone") {
  NcpgRaw raw;
  raw.knot_increments.assign(9, 0.7);
  NcpgResult g = ncpg_generate(raw, 3, 4.0);
  // clamped ends
  for (int i = 0; i <= 3; ++i) {
    CHECK(g.knots[static_cast<size_t>(i)] == -4.0);
    CHECK(g.knots[g.knots.size() - 1 - static_cast<size_t>(i)] == 4.0);
  }
  // equal increments give uniform interior knots
  for (int k = 0; k < 8; ++k) {
    double expect = -4.0 + 8.0 * (k + 1) / 9.0;
    CHECK(g.knots[static_cast<size_t>(4 + k)] == doctest::Approx(expect).epsilon(1e-12));
  }

  Rng rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    NcpgRaw r2;
    r2.knot_increments.resize(5 + rng.below(6));
    for (auto& v : r2.knot_increments) v = rng.uniform(-6, 6);
    NcpgResult g2 = ncpg_generate(r2, 3, 4.0);
    for (size_t i = 1; i < g2.knots.size(); ++i) CHECK(g2.knots[i] >= g2.knots[i - 1]);
    // interior knots are strictly increasing
    for (size_t i = 4; i + 4 < g2.knots.size(); ++i) CHECK(g2.knots[i + 1] > g2.knots[i]);
  }
}

TEST_CASE("ncpg locality of the cumulative sum") {
  // the raw cumulative sums before rescaling move only at/after the perturbed
  // index; after the exact-span rescale the affected knots shift while the
  // ends stay pinned
  std::vector<double> raw = {0.3, -0.2, 0.9, 0.1, -0.5, 0.4};
  std::vector<double> s0 = softplus_cumsum(raw);
  std::vector<double> raw2 = raw;
  const size_t k = 3;
  raw2[k] += 0.25;
  std::vector<double> s1 = softplus_cumsum(raw2);
  for (size_t i = 0; i < k; ++i) CHECK(s0[i] == s1[i]);
  for (size_t i = k; i < s0.size(); ++i) CHECK(s1[i] > s0[i]);

  NcpgRaw a{raw, {}}, b{raw2, {}};
  NcpgResult ga = ncpg_generate(a, 3, 4.0);
  NcpgResult gb = ncpg_generate(b, 3, 4.0);
  bool moved = false;
  for (size_t i = 4 + k; i + 4 < ga.knots.size(); ++i)
    if (ga.knots[i] != gb.knots[i]) moved = true;
  CHECK(moved);
  CHECK(ga.knots.front() == gb.knots.front());
  CHECK(ga.knots.back() == gb.knots.back());
}

TEST_CASE("ncpg control points pass through") {
  NcpgRaw raw;
  raw.knot_increments.assign(4, 0.0);
  raw.control = {1.5, -2.0, 0.25};
  NcpgResult g = ncpg_generate(raw, 2, 4.0);
  CHECK(g.control_points == raw.control);
}
