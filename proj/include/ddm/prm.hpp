#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddm/exact.hpp"
#include "ddm/random.hpp"
#include "ddm/statespace.hpp"

namespace ddm {

struct JumpEvent {
  double time = 0.0;
  StateIndex state = 0;
};

/// A càdlàg trajectory on [0, horizon]: initial state plus ordered jumps.
struct JumpPath {
  StateIndex x0 = 0;
  std::vector<JumpEvent> events;
  double horizon = 0.0;

  /// Value at time t (right-continuous).
  StateIndex state_at(double t) const;
  /// Left limit x_{t-}.
  StateIndex state_before(double t) const;
  StateIndex terminal() const { return events.empty() ? x0 : events.back().state; }
  /// Strictly increasing times in (0, horizon] and no self-jumps.
  bool valid() const;
};

/// CSV "time,state" preceded by a "# x0=<x0>,T=<horizon>" header row.
std::string to_csv(const JumpPath& path);

/// Majorant of the total intensity valid on [from, valid_until].
struct IntensityBound {
  double rate = 0.0;
  double valid_until = 0.0;
};

/// Intensity λ_t(·) of a Poisson random measure whose targets depend on the
/// current state. Implementations are immutable and safe to query from many
/// threads.
class EvolvingIntensity {
 public:
  virtual ~EvolvingIntensity() = default;

  /// λ_t(y) for every target y; the entry at `state` is zero.
  virtual Vector rates(double t, StateIndex state) const = 0;
  virtual double total(double t, StateIndex state) const { return rates(t, state).sum(); }
  /// A constant rate dominating total(τ, state) for τ in [t, valid_until].
  virtual IntensityBound upper_bound(double t, StateIndex state, double horizon) const = 0;
  /// Times where the intensity may be discontinuous (used to split quadrature).
  virtual std::span<const double> breakpoints() const { return {}; }
};

/// Forward CTMC intensity λ(y) = Q(y, x): constant in time.
class GeneratorIntensity final : public EvolvingIntensity {
 public:
  explicit GeneratorIntensity(RateMatrix q);
  Vector rates(double t, StateIndex state) const override;
  double total(double t, StateIndex state) const override;
  IntensityBound upper_bound(double t, StateIndex state, double horizon) const override;

 private:
  RateMatrix q_;
  Matrix off_;
};

/// True backward intensity μ_s(y) = p_{T-s}(y) / p_{T-s}(x) Q(x, y) from exact
/// marginals. Bounds are precomputed per window from a guard grid with the
/// given headroom factor; windows refine geometrically towards s = T - δ.
class ExactBackwardIntensity final : public EvolvingIntensity {
 public:
  ExactBackwardIntensity(RateMatrix q, std::shared_ptr<const ReversedMarginals> marginals,
                         double delta, double headroom = 1.1);

  Vector rates(double s, StateIndex state) const override;
  IntensityBound upper_bound(double s, StateIndex state, double horizon) const override;

  double delta() const noexcept { return delta_; }
  double headroom() const noexcept { return headroom_; }
  const ReversedMarginals& marginals() const noexcept { return *marginals_; }
  std::shared_ptr<const ReversedMarginals> marginals_ptr() const noexcept { return marginals_; }
  const RateMatrix& rates_matrix() const noexcept { return q_; }
  /// Exact score ratio p_{T-s}(y) / p_{T-s}(x).
  double score(double s, StateIndex x, StateIndex y) const;
  /// End of the bound windows, in increasing order (last is T - δ).
  const std::vector<double>& window_ends() const noexcept { return window_ends_; }

 private:
  RateMatrix q_;
  std::shared_ptr<const ReversedMarginals> marginals_;
  double delta_;
  double headroom_;
  std::vector<double> window_ends_;
  std::vector<double> window_bounds_;
};

/// λ_t(y) h(t, x, y) for a positive tilt bounded by `h_max`.
class TiltedIntensity final : public EvolvingIntensity {
 public:
  using Tilt = std::function<double(double, StateIndex, StateIndex)>;
  TiltedIntensity(std::shared_ptr<const EvolvingIntensity> base, Tilt h, double h_max);

  Vector rates(double t, StateIndex state) const override;
  IntensityBound upper_bound(double t, StateIndex state, double horizon) const override;
  std::span<const double> breakpoints() const override { return base_->breakpoints(); }

 private:
  std::shared_ptr<const EvolvingIntensity> base_;
  Tilt h_;
  double h_max_;
};

/// Draws y with probability weights(y) / Σ weights (non-negative weights).
StateIndex sample_state(const Vector& weights, Philox& rng);

/// Exact forward simulation on [0, T]: Exponential(-Q(x,x)) holding times and
/// jump targets drawn with probability Q(y,x) / -Q(x,x).
JumpPath simulate_ctmc_forward(const RateMatrix& q, StateIndex x0, double horizon, Philox& rng);

/// Next accepted jump after t0 by thinning against `upper_bound`; nullopt if
/// none occurs before `horizon`. Throws BoundViolated when total > bound.
std::optional<JumpEvent> sample_next_jump(const EvolvingIntensity& intensity, double t0,
                                          StateIndex state, double horizon, Philox& rng);

/// Path of the jump process driven by `intensity` on [0, horizon].
JumpPath simulate_path(const EvolvingIntensity& intensity, StateIndex x0, double horizon, Philox& rng);

/// True backward process on [0, T - δ] started at y0. On BoundViolated the
/// headroom is doubled and the path re-simulated, at most 3 times.
JumpPath simulate_backward_exact(const RateMatrix& q,
                                 std::shared_ptr<const ReversedMarginals> marginals, StateIndex y0,
                                 double delta, Philox& rng);

/// Same, reusing a prebuilt intensity for the first attempt.
JumpPath simulate_backward_exact(const ExactBackwardIntensity& intensity, StateIndex y0, Philox& rng);

/// Ratio function (t, x, y) -> positive real, evaluated along a path.
using PathRatio = std::function<double(double, StateIndex, StateIndex)>;

/// log Z_T[h] = Σ_jumps log h(t_n, x_{t_n-}, y_n) - ∫_0^T Σ_y (h - 1) λ_τ(y) dτ,
/// the compensator integrated by adaptive Gauss-Legendre between jumps.
double log_likelihood_ratio(const JumpPath& path, const EvolvingIntensity& base, const PathRatio& h,
                            double tol = 1e-10, std::span<const double> extra_breakpoints = {});

/// K(r) = r - 1 - log r.
inline double k_function(double r) { return r - 1.0 - std::log(r); }

/// ∫_0^T Σ_y K(ratio(τ, x_{τ-}, y)) μ_τ(y) dτ along the path.
double path_score_entropy(const JumpPath& path, const PathRatio& ratio, const EvolvingIntensity& mu,
                          double tol = 1e-10, std::span<const double> extra_breakpoints = {});

}  // namespace ddm
