#include "ddm/quadrature.hpp"

#include <algorithm>
#include <vector>

namespace ddm {

namespace {

constexpr std::array<double, 4> kNodes = {0.1834346424956498, 0.5255324099163290,
                                          0.7966664774136267, 0.9602898564975363};
constexpr std::array<double, 4> kWeights = {0.3626837833783620, 0.3137066458778873,
                                            0.2223810344533745, 0.1012285362903763};

double gauss8(const std::function<double(double)>& f, double a, double b) {
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  double sum = 0.0;
  for (std::size_t i = 0; i < kNodes.size(); ++i) {
    sum += kWeights[i] * (f(mid - half * kNodes[i]) + f(mid + half * kNodes[i]));
  }
  return sum * half;
}

double refine(const std::function<double(double)>& f, double a, double b, double whole, double tol,
              int depth) {
  const double mid = 0.5 * (a + b);
  const double left = gauss8(f, a, mid);
  const double right = gauss8(f, mid, b);
  const double split = left + right;
  if (depth <= 0 || std::abs(split - whole) <= tol) return split;
  return refine(f, a, mid, left, 0.5 * tol, depth - 1) + refine(f, mid, b, right, 0.5 * tol, depth - 1);
}

}  // namespace

double integrate_adaptive(const std::function<double(double)>& f, double a, double b, double tol,
                          int max_depth) {
  if (!(b > a)) return 0.0;
  return refine(f, a, b, gauss8(f, a, b), tol, max_depth);
}

double integrate_piecewise(const std::function<double(double)>& f, double a, double b,
                           std::span<const double> breakpoints, double tol) {
  if (!(b > a)) return 0.0;
  std::vector<double> cuts{a};
  for (double p : breakpoints) {
    if (p > a && p < b) cuts.push_back(p);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.push_back(b);
  double total = 0.0;
  const double span = b - a;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double lo = cuts[i];
    const double hi = cuts[i + 1];
    total += integrate_adaptive(f, lo, hi, tol * (hi - lo) / span);
  }
  return total;
}

}  // namespace ddm
