#include "nukes/spline.hpp"

#include <algorithm>
#include <cmath>

namespace nukes {

void SplineSpec::validate() const {
  if (degree < 0 || degree > kMaxSplineDegree)
    fail(ErrCode::DegreeUnsupported, "degree " + std::to_string(degree));
  if (static_cast<int>(knots.size()) < degree + 2)
    fail(ErrCode::InvalidParam, "need at least p+2 knots");
  for (size_t i = 1; i < knots.size(); ++i)
    if (knots[i] < knots[i - 1]) fail(ErrCode::InvalidParam, "knots must be non-decreasing");
  int n1 = basis_count();
  if (n1 < 1) fail(ErrCode::InvalidParam, "no basis functions for this knot/degree combination");
  if (static_cast<int>(control_points.size()) != n1)
    fail(ErrCode::InvalidParam, "control point count must equal knots - degree - 1");
  if (static_cast<int>(weights.size()) != n1)
    fail(ErrCode::InvalidParam, "weight count must equal control point count");
  for (double w : weights)
    if (!(w > 0)) fail(ErrCode::InvalidParam, "weights must be positive");
}

double bspline_basis_recursive(int i, int p, double x, const std::vector<double>& knots) {
  if (i < 0 || p < 0 || static_cast<size_t>(i + p + 1) >= knots.size())
    fail(ErrCode::IndexOutOfRange, "basis N_{" + std::to_string(i) + "," + std::to_string(p) +
                                       "} needs knots up to index " + std::to_string(i + p + 1));
  if (p == 0) {
    if (knots[size_t(i)] <= x && x < knots[size_t(i) + 1]) return 1.0;
    // right-closed last knot so the domain endpoint is reachable
    if (x == knots.back() && knots[size_t(i) + 1] == knots.back() &&
        knots[size_t(i)] < knots[size_t(i) + 1])
      return 1.0;
    return 0.0;
  }
  double left = 0.0;
  double dl = knots[size_t(i + p)] - knots[size_t(i)];
  if (dl > 0) left = (x - knots[size_t(i)]) / dl * bspline_basis_recursive(i, p - 1, x, knots);
  double right = 0.0;
  double dr = knots[size_t(i + p + 1)] - knots[size_t(i) + 1];
  if (dr > 0)
    right = (knots[size_t(i + p + 1)] - x) / dr * bspline_basis_recursive(i + 1, p - 1, x, knots);
  return left + right;
}

int find_span(const std::vector<double>& knots, int p, double x) {
  int n = static_cast<int>(knots.size()) - p - 2;  // last basis index
  if (x >= knots[size_t(n) + 1]) {
    for (int j = n; j >= p; --j)
      if (knots[size_t(j)] < knots[size_t(j) + 1]) return j;
    fail(ErrCode::InvalidParam, "knot vector has no non-empty span");
  }
  int lo = p, hi = n + 1;
  while (hi - lo > 1) {
    int mid = (lo + hi) / 2;
    if (x < knots[size_t(mid)])
      hi = mid;
    else
      lo = mid;
  }
  // skip empty spans leftward (x equal to a repeated knot)
  while (lo > p && knots[size_t(lo)] == knots[size_t(lo) + 1]) --lo;
  return lo;
}

namespace {

// polynomial in ascending coefficients
using Poly = std::vector<double>;

Poly poly_mul_linear(const Poly& a, double c0, double c1) {
  Poly out(a.size() + 1, 0.0);
  for (size_t i = 0; i < a.size(); ++i) {
    out[i] += a[i] * c0;
    out[i + 1] += a[i] * c1;
  }
  return out;
}

void poly_add(Poly& a, const Poly& b) {
  if (b.size() > a.size()) a.resize(b.size(), 0.0);
  for (size_t i = 0; i < b.size(); ++i) a[i] += b[i];
}

}  // namespace

BasisMatrix::BasisMatrix(int degree, std::vector<double> knots)
    : degree_(degree), knots_(std::move(knots)) {
  if (degree_ < 0 || degree_ > kMaxSplineDegree)
    fail(ErrCode::DegreeUnsupported, "degree " + std::to_string(degree_));
  if (static_cast<int>(knots_.size()) < degree_ + 2)
    fail(ErrCode::InvalidParam, "need at least p+2 knots");
  for (size_t i = 1; i < knots_.size(); ++i)
    if (knots_[i] < knots_[i - 1]) fail(ErrCode::InvalidParam, "knots must be non-decreasing");

  const int p = degree_;
  const int n = static_cast<int>(knots_.size()) - p - 2;
  span_of_cell_.assign(knots_.size(), -1);

  for (int j = p; j <= n; ++j) {
    if (!(knots_[size_t(j)] < knots_[size_t(j) + 1])) continue;
    const double tj = knots_[size_t(j)];
    const double dj = knots_[size_t(j) + 1] - tj;

    // expand each active N_{i,p} on this span as a polynomial in u, x = t_j + u*dj
    std::vector<Poly> polys(static_cast<size_t>(p) + 1);
    // level 0: only N_{j,0} is 1 here
    std::vector<Poly> prev(static_cast<size_t>(p) + 1);
    prev[static_cast<size_t>(p)] = Poly{1.0};  // slot for basis index j
    for (int q = 1; q <= p; ++q) {
      // at level q the active indices are j-q .. j; slot s holds index i = j-p+s
      std::vector<Poly> cur(static_cast<size_t>(p) + 1);
      for (int i = j - q; i <= j; ++i) {
        int s = i - (j - p);
        Poly acc;
        double dl = knots_[size_t(i + q)] - knots_[size_t(i)];
        if (dl > 0 && !prev[static_cast<size_t>(s)].empty()) {
          // (x - t_i)/dl = ((t_j - t_i) + u*dj)/dl
          poly_add(acc, poly_mul_linear(prev[static_cast<size_t>(s)], (tj - knots_[size_t(i)]) / dl,
                                        dj / dl));
        }
        double dr = knots_[size_t(i + q + 1)] - knots_[size_t(i) + 1];
        if (dr > 0 && s + 1 <= p && !prev[static_cast<size_t>(s) + 1].empty()) {
          // (t_{i+q+1} - x)/dr = ((t_{i+q+1} - t_j) - u*dj)/dr
          poly_add(acc, poly_mul_linear(prev[static_cast<size_t>(s) + 1],
                                        (knots_[size_t(i + q + 1)] - tj) / dr, -dj / dr));
        }
        cur[static_cast<size_t>(s)] = std::move(acc);
      }
      prev = std::move(cur);
    }

    // pack into (p+1)x(p+1), rows = descending powers u^p..u^0, cols = active basis
    std::vector<double> m(size_t(p + 1) * size_t(p + 1), 0.0);
    for (int s = 0; s <= p; ++s) {
      const Poly& poly = prev[static_cast<size_t>(s)];
      for (size_t d = 0; d < poly.size(); ++d) {
        int row = p - static_cast<int>(d);
        m[size_t(row) * size_t(p + 1) + size_t(s)] = poly[d];
      }
    }
    span_of_cell_[static_cast<size_t>(j)] = static_cast<int>(coeffs_.size());
    span_index_.push_back(j);
    coeffs_.push_back(std::move(m));
  }
  if (coeffs_.empty()) fail(ErrCode::InvalidParam, "knot vector has no non-empty span");
}

const std::vector<double>& BasisMatrix::span_coeffs(int span) const {
  int id = span_of_cell_[static_cast<size_t>(span)];
  if (id < 0) fail(ErrCode::IndexOutOfRange, "empty span " + std::to_string(span));
  return coeffs_[static_cast<size_t>(id)];
}

int BasisMatrix::active(double x, double* values) const {
  const int p = degree_;
  const int n = basis_count() - 1;
  if (x < knots_[size_t(p)] || x > knots_[size_t(n) + 1])
    fail(ErrCode::OutOfDomain, "x outside [" + std::to_string(knots_[size_t(p)]) + ", " +
                                   std::to_string(knots_[size_t(n) + 1]) + "]");
  int j = find_span(knots_, p, x);
  const auto& m = span_coeffs(j);
  double u = (x - knots_[size_t(j)]) / (knots_[size_t(j) + 1] - knots_[size_t(j)]);
  // T_p * M by Horner over rows: row r is the coefficient of u^(p-r)
  for (int s = 0; s <= p; ++s) {
    double acc = 0.0;
    for (int r = 0; r <= p; ++r) acc = acc * u + m[size_t(r) * size_t(p + 1) + size_t(s)];
    values[s] = acc;
  }
  return j - p;
}

std::vector<double> BasisMatrix::row(double x) const {
  std::vector<double> out(static_cast<size_t>(basis_count()), 0.0);
  double vals[kMaxSplineDegree + 1];
  int first = active(x, vals);
  for (int s = 0; s <= degree_; ++s) out[static_cast<size_t>(first + s)] = vals[s];
  return out;
}

std::vector<std::vector<double>> bspline_basis_matrix(int p, const std::vector<double>& x_batch,
                                                      const std::vector<double>& knots) {
  BasisMatrix bm(p, knots);
  std::vector<std::vector<double>> rows;
  rows.reserve(x_batch.size());
  for (double x : x_batch) rows.push_back(bm.row(x));
  return rows;
}

double nuk_eval(const SplineSpec& spec, double x) {
  spec.validate();
  BasisMatrix bm(spec.degree, spec.knots);
  double vals[kMaxSplineDegree + 1];
  int first = bm.active(x, vals);
  double num = 0.0, den = 0.0;
  for (int s = 0; s <= spec.degree; ++s) {
    double nw = vals[s] * spec.weights[static_cast<size_t>(first + s)];
    num += nw * spec.control_points[static_cast<size_t>(first + s)];
    den += nw;
  }
  if (!(den > 0))
    fail(ErrCode::ZeroDenominator, "rational denominator vanished at x=" + std::to_string(x));
  return num / den;
}

std::vector<double> softplus_cumsum(const std::vector<double>& raw) {
  std::vector<double> s(raw.size());
  double acc = 0.0;
  for (size_t i = 0; i < raw.size(); ++i) {
    acc += softplus(raw[i]);
    s[i] = acc;
  }
  return s;
}

NcpgResult ncpg_generate(const NcpgRaw& raw, int degree, double radius) {
  if (degree < 0 || degree > kMaxSplineDegree)
    fail(ErrCode::DegreeUnsupported, "degree " + std::to_string(degree));
  if (raw.knot_increments.empty()) fail(ErrCode::InvalidParam, "need at least one increment");
  for (double v : raw.knot_increments)
    if (!std::isfinite(v)) fail(ErrCode::InvalidParam, "non-finite raw increment");

  const int intervals = static_cast<int>(raw.knot_increments.size());
  const int interior = intervals - 1;
  std::vector<double> s = softplus_cumsum(raw.knot_increments);
  const double total = s.back();

  NcpgResult out;
  out.knots.reserve(static_cast<size_t>(2 * (degree + 1) + interior));
  for (int i = 0; i <= degree; ++i) out.knots.push_back(-radius);
  for (int k = 0; k < interior; ++k)
    out.knots.push_back(-radius + 2.0 * radius * s[static_cast<size_t>(k)] / total);
  for (int i = 0; i <= degree; ++i) out.knots.push_back(radius);
  out.control_points = raw.control;
  return out;
}

}  // namespace nukes
