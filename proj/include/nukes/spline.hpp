#pragma once

#include <vector>

#include "nukes/common.hpp"

namespace nukes {

constexpr int kMaxSplineDegree = 5;

// One rational spline channel: degree p, non-decreasing knots x_0..x_{n+p+1},
// n+1 control points and positive weights.
struct SplineSpec {
  int degree = 3;
  std::vector<double> knots;
  std::vector<double> control_points;
  std::vector<double> weights;

  int basis_count() const { return static_cast<int>(knots.size()) - degree - 1; }
  double domain_min() const { return knots[static_cast<size_t>(degree)]; }
  double domain_max() const { return knots[knots.size() - static_cast<size_t>(degree) - 1]; }
  void validate() const;
};

// Cox-de Boor value of N_{i,p}(x); 0/0 terms are 0. The last knot is treated
// as right-closed so the domain endpoint evaluates to the left limit.
double bspline_basis_recursive(int i, int p, double x, const std::vector<double>& knots);

// index j with x in [x_j, x_{j+1}) among non-empty spans, right-closed at the end
int find_span(const std::vector<double>& knots, int p, double x);

// Power-basis evaluation: per non-empty span a (p+1)x(p+1) coefficient matrix
// M so that the active basis row equals T_p * M with T_p = [u^p, ..., u, 1]
// and u the local span parameter in [0,1].
class BasisMatrix {
 public:
  BasisMatrix(int degree, std::vector<double> knots);

  int degree() const { return degree_; }
  int basis_count() const { return static_cast<int>(knots_.size()) - degree_ - 1; }
  const std::vector<double>& knots() const { return knots_; }

  // all basis values at x (length basis_count, zeros outside the active window)
  std::vector<double> row(double x) const;

  // active window only: fills values[0..degree], returns first active index
  int active(double x, double* values) const;

  // coefficient matrix of a span, row-major (p+1)x(p+1), rows = descending powers
  const std::vector<double>& span_coeffs(int span) const;

 private:
  int degree_;
  std::vector<double> knots_;
  std::vector<int> span_of_cell_;          // per knot cell: dense span id or -1
  std::vector<int> span_index_;            // dense span id -> knot index j
  std::vector<std::vector<double>> coeffs_;  // per dense span
};

std::vector<std::vector<double>> bspline_basis_matrix(int p, const std::vector<double>& x_batch,
                                                      const std::vector<double>& knots);

// Rational curve value sum(N_i w_i P_i) / sum(N_i w_i), matrix-form basis inside.
double nuk_eval(const SplineSpec& spec, double x);

// softplus with the numerically safe branch for large inputs
inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

std::vector<double> softplus_cumsum(const std::vector<double>& raw);

struct NcpgRaw {
  std::vector<double> knot_increments;  // G+1 values -> G interior knots
  std::vector<double> control;          // control points, unconstrained
};

struct NcpgResult {
  std::vector<double> knots;  // clamped: radius repeated p+1 times at both ends
  std::vector<double> control_points;
};

// Interior knots from the softplus-cumsum of raw increments, rescaled so the
// knot vector spans exactly [-radius, radius]; end knots have multiplicity p+1.
NcpgResult ncpg_generate(const NcpgRaw& raw, int degree, double radius);

}  // namespace nukes
