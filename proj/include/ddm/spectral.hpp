#pragma once

#include <cstdint>
#include <string>

#include "ddm/exact.hpp"
#include "ddm/statespace.hpp"

namespace ddm {

struct SpectralGap {
  double value = 0.0;  ///< λ₂ of L = -Q
  bool disconnected = false;
};

/// Second-smallest eigenvalue of L = -Q. Symmetric Q only (NotSymmetric).
SpectralGap spectral_gap(const RateMatrix& q);

/// Σ_{x,y} f(y) L(x,y) g(x) π(y) with L = -Q.
double dirichlet_form(const Vector& f, const Vector& g, const Vector& pi, const RateMatrix& q);

/// E_π[f log f] - E_π[f] log E_π[f] for strictly positive f.
double entropy_functional(const Vector& f, const Vector& pi);

struct MlsOptions {
  int restarts = 64;
  int iterations = 2000;
  std::uint64_t seed = 0;
  /// Feasible set is Ent_π(f) > min_entropy.
  double min_entropy = 1e-6;
};

struct MlsEstimate {
  /// Smallest ratio E(f, log f) / Ent(f) found: an upper bound on ρ(Q).
  double rho_hat = 0.0;
  Vector argmin;
  /// Ratio at the best gap-eigenvector seed f = exp(ζ v₂).
  double gap_seed_ratio = 0.0;
};

/// Multi-restart gradient descent on g = log f (mean-zero, entropy kept above
/// `min_entropy`). Requires symmetric Q and strictly positive π.
MlsEstimate mls_constant_estimate(const RateMatrix& q, const Vector& pi, const MlsOptions& options = {});

/// E(f, log f) / Ent_π(f) at a positive f.
double mls_ratio(const Vector& f, const Vector& pi, const RateMatrix& q);

struct Conductance {
  double value = 0.0;
  /// False when the sweep-cut heuristic was used; the value is then an upper bound.
  bool exact = true;
};

/// Maximum |X| handled by exhaustive cut enumeration.
inline constexpr std::size_t kExactConductanceLimit = 20;

/// min over cuts S of Q(S, S^c) / min(vol S, vol S^c), vol = Σ |Q(x,x)|.
Conductance conductance(const RateMatrix& q, std::uint64_t seed = 0);

struct CheegerCheck {
  double lower = 0.0;  ///< λ₂(L̃) / 2
  double phi = 0.0;
  double upper = 0.0;  ///< sqrt(2 λ₂(L̃))
  double normalized_gap = 0.0;
  bool constant_degree = true;
  bool phi_exact = true;
  bool holds = false;
};

/// Cheeger sandwich with the normalised Laplacian D^{-1/2} L D^{-1/2}.
CheegerCheck cheeger_check(const RateMatrix& q, std::uint64_t seed = 0);

/// (1/ρ) (log(1/ε) + log log |X|), floored at 0.
double mixing_time_bound(double rho_hat, std::size_t size, double epsilon);

struct SpectralReport {
  double gap = 0.0;
  bool disconnected = false;
  double mls_estimate = 0.0;
  bool mls_exceeds_gap = false;
  double conductance = 0.0;
  bool conductance_exact = true;
  double cheeger_lo = 0.0;
  double cheeger_hi = 0.0;
  double mixing_time_bound = 0.0;
  std::string normalization_note;
};

SpectralReport spectral_report(const RateMatrix& q, const MlsOptions& options = {},
                               double mixing_epsilon = 0.36787944117144233);

nlohmann::json to_json(const SpectralReport& report);

}  // namespace ddm
