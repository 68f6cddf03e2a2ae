#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ddm/statespace.hpp"

namespace ddm {

/// A probability vector over the state space. Entries in [-1e-14, 0) are
/// clamped to zero; the total must be 1 within 1e-10.
class Distribution {
 public:
  explicit Distribution(Vector probs);

  static Distribution uniform(std::size_t n);
  static Distribution point_mass(std::size_t n, StateIndex x);
  /// Scales a non-negative vector to unit mass.
  static Distribution normalized(Vector weights);

  const Vector& probs() const noexcept { return probs_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(probs_.size()); }
  double operator[](StateIndex x) const { return probs_(x); }

 private:
  Vector probs_;
};

/// Dense matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant (Higham 2005).
Matrix expm(const Matrix& a);

/// exp(tQ) evaluator. Symmetric generators use a one-time eigendecomposition
/// of L = -Q; everything else (or an eigensolver that fails its
/// reconstruction check) goes through `expm`.
class Propagator {
 public:
  explicit Propagator(RateMatrix q);

  const RateMatrix& rates() const noexcept { return q_; }
  bool spectral() const noexcept { return spectral_; }
  /// Eigenvalues of L = -Q in ascending order (spectral form only).
  const Vector& eigenvalues() const noexcept { return eigenvalues_; }
  /// Orthonormal eigenvectors of L, columns aligned with `eigenvalues()`.
  const Matrix& eigenvectors() const noexcept { return eigenvectors_; }

  /// exp(tQ); column x0 is the law at time t started from x0.
  Matrix transition_kernel(double t) const;
  /// exp(tQ) p0, renormalised after checking the mass drift is below 1e-10.
  Distribution propagate(const Distribution& p0, double t) const;
  /// exp(tQ) v for an arbitrary vector, without any normalisation.
  Vector apply(const Vector& v, double t) const;

 private:
  RateMatrix q_;
  bool spectral_ = false;
  Vector eigenvalues_;
  Matrix eigenvectors_;
};

std::shared_ptr<const Propagator> build_propagator(const RateMatrix& q);

/// Exact forward marginals p_t and their time reversal p̌_s = p_{T-s},
/// queryable at any time. Queries recompute from the spectral form.
class ReversedMarginals {
 public:
  ReversedMarginals(std::shared_ptr<const Propagator> propagator, Distribution p0, double horizon);

  double horizon() const noexcept { return horizon_; }
  const Distribution& initial() const noexcept { return p0_; }
  const Propagator& propagator() const noexcept { return *propagator_; }
  std::shared_ptr<const Propagator> propagator_ptr() const noexcept { return propagator_; }

  /// p_t, forward time t >= 0.
  Vector forward(double t) const;
  /// p̌_s = p_{T-s}, backward time s in [0, T].
  Vector backward(double s) const { return forward(horizon_ - s); }

  /// CSV "s,t,state,prob" for the given backward times.
  std::string to_csv(std::span<const double> backward_times) const;

 private:
  std::shared_ptr<const Propagator> propagator_;
  Distribution p0_;
  double horizon_;
  Vector coefficients_;  // U^T p0 in spectral form
};

ReversedMarginals reversed_marginals(std::shared_ptr<const Propagator> propagator,
                                     const Distribution& p0, double horizon);

/// Probabilities are floored here only to avoid dividing by zero.
inline constexpr double kProbabilityFloor = 1e-300;

/// s(x, y) = p(y) / p(x). Throws ZeroDenominator when p(x) is below the floor
/// and `allow_floor` is false.
Vector score(const Vector& p, StateIndex x, bool allow_floor = true);

/// Q̄(y, x) = (p(y) / p(x)) Q(x, y) off the diagonal, columns closed to zero.
RateMatrix backward_rate_matrix(const RateMatrix& q, const Vector& p);

struct KlResult {
  double value = 0.0;
  bool floored = false;
};

/// KL(p || q) with q floored at `q_floor`; a floor of 0 disables flooring and
/// a true zero of q under positive p then throws SupportMismatch.
KlResult kl_divergence(const Vector& p, const Vector& q, double q_floor = 1e-12);

double tv_distance(const Vector& p, const Vector& q);

/// Propagator metadata as JSON (eigenvalues when spectral).
nlohmann::json propagator_to_json(const Propagator& propagator);

}  // namespace ddm
