#include "ddm/spectral.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Eigenvalues>

#include "ddm/error.hpp"
#include "ddm/random.hpp"

namespace ddm {

namespace {

void require_symmetric(const RateMatrix& q) {
  if (!q.symmetric()) {
    throw Error(ErrorKind::NotSymmetric, "operation defined for symmetric rate matrices only");
  }
}

Eigen::SelfAdjointEigenSolver<Matrix> laplacian_eigen(const Matrix& laplacian) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(laplacian);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorKind::EigenFailure, "symmetric eigensolver did not converge");
  }
  return solver;
}

struct RatioParts {
  double value = 0.0;
  double entropy = 0.0;
  Vector gradient;
};

// Ratio R(g) = E(e^g, g) / Ent(e^g) and its gradient with respect to g.
RatioParts ratio_with_gradient(const Vector& g, const Vector& pi, const Matrix& laplacian) {
  const Vector f = g.array().exp().matrix();
  const Vector a = laplacian.transpose() * g;  // a(y) = Σ_x L(x,y) g(x)
  const Vector fp = f.cwiseProduct(pi);
  const double num = fp.dot(a);
  const double mass = fp.sum();
  const double ent = fp.dot(g) - mass * std::log(mass);
  RatioParts out;
  out.entropy = ent;
  out.value = num / ent;
  const Vector dnum = fp.cwiseProduct(a) + laplacian * fp;
  const Vector dent = fp.cwiseProduct((g.array() - std::log(mass)).matrix());
  out.gradient = (dnum - out.value * dent) / ent;
  return out;
}

void project(Vector& g, const Vector& pi, double min_entropy) {
  g.array() -= g.mean();
  for (int guard = 0; guard < 200; ++guard) {
    const Vector fp = g.array().exp().matrix().cwiseProduct(pi);
    const double mass = fp.sum();
    const double ent = fp.dot(g) - mass * std::log(mass);
    if (ent > min_entropy) return;
    g *= 1.5;
  }
}

}  // namespace

SpectralGap spectral_gap(const RateMatrix& q) {
  require_symmetric(q);
  const auto solver = laplacian_eigen(-q.entries());
  SpectralGap out;
  out.value = std::max(0.0, solver.eigenvalues()(1));
  out.disconnected = out.value < 1e-10;
  return out;
}

double dirichlet_form(const Vector& f, const Vector& g, const Vector& pi, const RateMatrix& q) {
  const auto n = static_cast<Eigen::Index>(q.size());
  if (f.size() != n || g.size() != n || pi.size() != n) {
    throw Error(ErrorKind::LengthMismatch, "Dirichlet form arguments must have length |X|");
  }
  // Σ_y f(y) π(y) (L^T g)(y) with L = -Q.
  const Vector a = -(q.entries().transpose() * g);
  return f.cwiseProduct(pi).dot(a);
}

double entropy_functional(const Vector& f, const Vector& pi) {
  if (f.size() != pi.size()) {
    throw Error(ErrorKind::LengthMismatch, "entropy arguments differ in length");
  }
  if (!(f.minCoeff() > 0.0)) {
    throw Error(ErrorKind::NonPositiveEntry, "entropy functional needs f > 0");
  }
  const double mean = f.dot(pi);
  const double value = f.cwiseProduct(pi).dot(f.array().log().matrix()) - mean * std::log(mean);
  return std::max(0.0, value);
}

double mls_ratio(const Vector& f, const Vector& pi, const RateMatrix& q) {
  const Vector logf = f.array().log().matrix();
  return dirichlet_form(f, logf, pi, q) / entropy_functional(f, pi);
}

MlsEstimate mls_constant_estimate(const RateMatrix& q, const Vector& pi, const MlsOptions& options) {
  require_symmetric(q);
  const auto n = static_cast<Eigen::Index>(q.size());
  if (pi.size() != n || !(pi.minCoeff() > 0.0)) {
    throw Error(ErrorKind::NonPositiveEntry, "stationary law must be strictly positive");
  }
  const Matrix laplacian = -q.entries();
  const auto solver = laplacian_eigen(laplacian);
  const double gap = std::max(0.0, solver.eigenvalues()(1));
  Vector v2 = solver.eigenvectors().col(1);
  v2 /= v2.cwiseAbs().maxCoeff();

  // Per-restart work is independent; the best result is reduced in restart order.
  const int restarts = std::max(options.restarts, 2);
  std::vector<double> best_value(static_cast<std::size_t>(restarts), std::numeric_limits<double>::infinity());
  std::vector<Vector> best_g(static_cast<std::size_t>(restarts));
  std::vector<double> start_value(static_cast<std::size_t>(restarts), std::numeric_limits<double>::infinity());

  parallel_for(static_cast<std::size_t>(restarts), [&](std::size_t r) {
    Philox rng = Philox::for_path(options.seed, r);
    Vector g(n);
    if (r == 0) {
      g = 0.1 * v2;
    } else if (r == 1) {
      g = 1.0 * v2;
    } else {
      const double scale = 0.05 * std::pow(2.0, static_cast<double>(r % 8));
      std::normal_distribution<double> normal(0.0, scale);
      for (Eigen::Index i = 0; i < n; ++i) g(i) = normal(rng);
    }
    project(g, pi, options.min_entropy);
    RatioParts cur = ratio_with_gradient(g, pi, laplacian);
    start_value[r] = cur.value;
    double step = 0.1;
    Vector best = g;
    double best_val = cur.value;
    for (int it = 0; it < options.iterations; ++it) {
      if (!std::isfinite(cur.value)) break;
      Vector grad = cur.gradient;
      grad.array() -= grad.mean();
      const double gnorm2 = grad.squaredNorm();
      if (gnorm2 < 1e-28) break;
      bool moved = false;
      for (int ls = 0; ls < 40; ++ls) {
        Vector trial = g - step * grad;
        project(trial, pi, options.min_entropy);
        RatioParts next = ratio_with_gradient(trial, pi, laplacian);
        if (std::isfinite(next.value) && next.value <= cur.value - 1e-4 * step * gnorm2) {
          g = std::move(trial);
          cur = std::move(next);
          step *= 1.5;
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (cur.value < best_val) {
        best_val = cur.value;
        best = g;
      }
      if (!moved) break;
    }
    best_value[r] = best_val;
    best_g[r] = best;
  });

  MlsEstimate out;
  out.rho_hat = std::numeric_limits<double>::infinity();
  out.gap_seed_ratio = std::min(start_value[0], start_value[1]);
  bool any_improved = false;
  for (int r = 0; r < restarts; ++r) {
    const auto i = static_cast<std::size_t>(r);
    if (best_value[i] < out.rho_hat) {
      out.rho_hat = best_value[i];
      out.argmin = best_g[i].array().exp().matrix();
    }
    if (best_value[i] < 10.0 * std::max(gap, 1e-12)) any_improved = true;
  }
  if (!any_improved || !std::isfinite(out.rho_hat)) {
    throw Error(ErrorKind::OptimizationDiverged, "no restart reached 10x the spectral gap");
  }
  return out;
}

namespace {

Conductance sweep_conductance(const RateMatrix& q, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(q.size());
  const Matrix& m = q.entries();
  const Vector degree = (-m.diagonal()).eval();
  const double total_volume = degree.sum();
  const auto solver = laplacian_eigen(-m);
  std::vector<Vector> directions;
  directions.push_back(solver.eigenvectors().col(1));
  Philox rng(seed, 0xC0DE);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int k = 0; k < 16; ++k) {
    Vector v = solver.eigenvectors().col(1);
    for (Eigen::Index i = 0; i < n; ++i) v(i) += 0.1 * normal(rng);
    directions.push_back(std::move(v));
  }
  double best = std::numeric_limits<double>::infinity();
  for (const Vector& v : directions) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v(a) < v(b); });
    std::vector<char> in_set(static_cast<std::size_t>(n), 0);
    double cut = 0.0;
    double vol = 0.0;
    for (Eigen::Index k = 0; k + 1 < n; ++k) {
      const Eigen::Index x = order[static_cast<std::size_t>(k)];
      for (Eigen::Index y = 0; y < n; ++y) {
        if (y == x) continue;
        cut += in_set[static_cast<std::size_t>(y)] ? -m(y, x) : m(y, x);
      }
      in_set[static_cast<std::size_t>(x)] = 1;
      vol += degree(x);
      const double denom = std::min(vol, total_volume - vol);
      if (denom > 0.0) best = std::min(best, cut / denom);
    }
  }
  return {best, false};
}

}  // namespace

Conductance conductance(const RateMatrix& q, std::uint64_t seed) {
  require_symmetric(q);
  const std::size_t n = q.size();
  if (n > kExactConductanceLimit) return sweep_conductance(q, seed);
  const Matrix& m = q.entries();
  const Vector degree = (-m.diagonal()).eval();
  const double total_volume = degree.sum();
  // Gray-code walk over subsets containing state n-1 in the complement; each
  // step toggles one state and updates the cut weight and volume in O(n).
  std::vector<char> in_set(n, 0);
  double cut = 0.0;
  double vol = 0.0;
  double best = std::numeric_limits<double>::infinity();
  const std::uint64_t subsets = std::uint64_t{1} << (n - 1);
  for (std::uint64_t i = 1; i < subsets; ++i) {
    const auto x = static_cast<Eigen::Index>(std::countr_zero(i));
    const bool adding = !in_set[static_cast<std::size_t>(x)];
    for (Eigen::Index y = 0; y < static_cast<Eigen::Index>(n); ++y) {
      if (y == x) continue;
      const double w = m(y, x);
      const bool y_in = in_set[static_cast<std::size_t>(y)];
      // Edge (x,y) crosses after the toggle iff membership differs afterwards.
      cut += (adding != y_in) ? w : -w;
    }
    in_set[static_cast<std::size_t>(x)] = adding ? 1 : 0;
    vol += adding ? degree(x) : -degree(x);
    const double denom = std::min(vol, total_volume - vol);
    if (denom > 0.0) best = std::min(best, std::max(0.0, cut) / denom);
  }
  return {best, true};
}

CheegerCheck cheeger_check(const RateMatrix& q, std::uint64_t seed) {
  require_symmetric(q);
  const Vector degree = (-q.entries().diagonal()).eval();
  CheegerCheck out;
  out.constant_degree = (degree.maxCoeff() - degree.minCoeff()) <= kRateTolerance;
  if (!(degree.minCoeff() > 0.0)) {
    throw Error(ErrorKind::Disconnected, "isolated state has zero degree");
  }
  const Vector inv_sqrt = degree.array().rsqrt().matrix();
  const Matrix normalized = inv_sqrt.asDiagonal() * (-q.entries()) * inv_sqrt.asDiagonal();
  const auto solver = laplacian_eigen(normalized);
  out.normalized_gap = std::max(0.0, solver.eigenvalues()(1));
  const Conductance phi = conductance(q, seed);
  out.phi = phi.value;
  out.phi_exact = phi.exact;
  out.lower = out.normalized_gap / 2.0;
  out.upper = std::sqrt(2.0 * out.normalized_gap);
  out.holds = out.lower <= out.phi + 1e-9 && out.phi <= out.upper + 1e-9;
  return out;
}

double mixing_time_bound(double rho_hat, std::size_t size, double epsilon) {
  if (!(rho_hat > 0.0)) {
    throw Error(ErrorKind::NonPositiveRho, "mixing time bound needs rho > 0");
  }
  if (!(epsilon > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "epsilon must be positive");
  }
  const double value =
      (std::log(1.0 / epsilon) + std::log(std::log(static_cast<double>(size)))) / rho_hat;
  return std::max(0.0, value);
}

SpectralReport spectral_report(const RateMatrix& q, const MlsOptions& options, double mixing_epsilon) {
  SpectralReport out;
  const SpectralGap gap = spectral_gap(q);
  out.gap = gap.value;
  out.disconnected = gap.disconnected;
  const Vector pi = Vector::Constant(static_cast<Eigen::Index>(q.size()), 1.0 / static_cast<double>(q.size()));
  if (!gap.disconnected) {
    const MlsEstimate mls = mls_constant_estimate(q, pi, options);
    out.mls_estimate = mls.rho_hat;
    out.mls_exceeds_gap = mls.rho_hat > gap.value + 1e-6;
    out.mixing_time_bound = mixing_time_bound(mls.rho_hat, q.size(), mixing_epsilon);
  }
  const CheegerCheck cheeger = cheeger_check(q, options.seed);
  out.conductance = cheeger.phi;
  out.conductance_exact = cheeger.phi_exact;
  out.cheeger_lo = cheeger.lower;
  out.cheeger_hi = cheeger.upper;
  out.normalization_note =
      "gap = lambda_2(-Q) with unnormalised Laplacian; Dirichlet form "
      "sum_{x,y} f(y) L(x,y) g(x) pi(y) with L = -Q and pi uniform; mls_estimate is the smallest "
      "ratio E(f, log f)/Ent(f) found, an upper bound on rho. Near-constant f drives this ratio to "
      "2 * gap, so mls_estimate can exceed gap. Cheeger bounds use D^{-1/2} L D^{-1/2}; "
      "conductance volumes are sums of |Q(x,x)|.";
  return out;
}

nlohmann::json to_json(const SpectralReport& r) {
  return {{"gap", r.gap},
          {"disconnected", r.disconnected},
          {"mls_estimate", r.mls_estimate},
          {"mls_is_upper_bound", true},
          {"mls_exceeds_gap", r.mls_exceeds_gap},
          {"conductance", r.conductance},
          {"conductance_exact", r.conductance_exact},
          {"cheeger_lo", r.cheeger_lo},
          {"cheeger_hi", r.cheeger_hi},
          {"mixing_time_bound", r.mixing_time_bound},
          {"normalization_note", r.normalization_note}};
}

}  // namespace ddm
