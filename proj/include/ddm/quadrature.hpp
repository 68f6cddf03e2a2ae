#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <span>

namespace ddm {

/// Adaptive Gauss-Legendre quadrature: an 8-point rule on [a, b] is accepted
/// when it agrees with the sum of the rule on both halves to within `tol`
/// (absolute, shared proportionally between halves); otherwise both halves
/// recurse. `max_depth` bounds the recursion.
double integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                          double tol = 1e-10, int max_depth = 40);

/// Same, with the interval first split at the given interior breakpoints
/// (points outside (a, b) are ignored).
double integrate_piecewise(const std::function<double(double)>& f, double a, double b,
                           std::span<const double> breakpoints, double tol = 1e-10);

}  // namespace ddm
