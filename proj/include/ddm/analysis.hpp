#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ddm/exact.hpp"
#include "ddm/samplers.hpp"
#include "ddm/score.hpp"
#include "ddm/statespace.hpp"

namespace ddm {

/// One sweep point. `exact` points carry no Monte Carlo error (se = 0).
struct ReportPoint {
  double param = 0.0;
  double estimate = 0.0;
  double se = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool exact = false;
  nlohmann::json extra = nlohmann::json::object();
};

struct ReportCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ExperimentReport {
  std::string kind;
  nlohmann::json model = nlohmann::json::object();
  std::string param_name;
  std::vector<ReportPoint> points;
  nlohmann::json fits = nlohmann::json::object();
  std::vector<ReportCheck> checks;
  std::uint64_t seed = 0;
  double wall_clock_seconds = 0.0;

  bool passed() const;
  void check(std::string name, bool ok, std::string detail);
  /// Wall-clock is left out unless requested so reports compare bytewise.
  nlohmann::json to_json(bool include_wall_clock = false) const;
  /// "param,estimate,se,lo,hi", one row per sweep point.
  std::string to_csv() const;
  /// Two whitespace-separated columns "param estimate" for gnuplot.
  std::string plot_data() const;
};

/// A generator together with its initial law.
struct ModelSpec {
  std::string name;
  Model model;
  Distribution p0;
};

nlohmann::json describe(const ModelSpec& spec);

/// 2-state chain with unit rates.
Model two_state_chain();

/// 2-state chain, hypercube d = 2 and 3, grid S = 3 d = 2, asymmetric
/// hypercube d = 2 p = 0.3, each with p0 a point mass at state 0.
std::vector<ModelSpec> model_suite();

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double slope_se = 0.0;
};

/// Ordinary least squares y ≈ intercept + slope x (needs two or more points).
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

/// Exact KL(p_T || uniform) over `horizons`; log KL fitted against T on the
/// tail half. Checks R² >= `min_r2` and KL <= exp(-r̂ T) log|X| at every T.
ExperimentReport truncation_error_curve(const ModelSpec& spec, const std::vector<double>& horizons,
                                        double min_r2 = 0.99);

struct EmpiricalKl {
  double estimate = 0.0;
  double se = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  /// Some reference-supported state has no samples.
  bool missing_support = false;
  /// Fewer than 100 |X| samples.
  bool undersampled = false;
};

/// KL(reference || q̂) with q̂ the add-k smoothed histogram; percentile
/// bootstrap over `resamples` multinomial redraws.
EmpiricalKl empirical_terminal_kl(const std::vector<StateIndex>& samples, const Distribution& reference,
                                  double smoothing = 0.5, int resamples = 1000, std::uint64_t seed = 0);

struct OracleLaw {
  Vector law;
  /// Total mass before the final renormalisation.
  double mass = 1.0;
  /// Expected number of multi-firing steps per path.
  double expected_collisions = 0.0;
};

/// Law of the τ-leaping chain by dynamic programming over enumerated joint
/// Poisson outcomes, truncated where the tail is below `tail_tol`. |X| <= 64.
OracleLaw tau_leaping_exact_law(const StateSpace& space, const RateMatrix& q, const ScoreProvider& score,
                                const TimeGrid& grid, double tail_tol = 1e-12);

/// Terminal law at s = T - δ of dq/ds = Q̂_s q with Q̂_s(y, x) = ŝ_s(x, y) Q(x, y)
/// started from q0, integrated by an adaptive Dormand-Prince scheme.
Vector continuous_backward_law(const RateMatrix& q, const ScoreProvider& score, double horizon,
                               double delta, const Vector& q0);

/// Terminal law of the exact backward process started from q0 instead of p_T:
/// z ↦ Σ_y q0(y) p_δ(z) K_{T-δ}(y | z) / p_T(y).
Vector exact_backward_terminal_law(const ReversedMarginals& marginals, double delta, const Vector& q0);

struct DiscretizationOptions {
  double horizon = 3.0;
  double delta = 0.0;
  std::vector<double> kappas{0.2, 0.1, 0.05, 0.025};
  GridKind kind = GridKind::Uniform;
  double gamma = 0.0;
  double eta = 1.0;
  /// Score clamp M; infinity means the raw exact score.
  double clamp = 2.0;
  /// Paths for the Monte Carlo run (collision counts; KL when |X| > 64).
  std::size_t n_paths = 0;
  /// Paths for the ε̂ estimate used by the bound check (0 skips the check).
  std::size_t epsilon_paths = 0;
  double slope_lo = 0.5;
  double slope_hi = 1.5;
  std::uint64_t seed = 0;
};

/// τ-leaping KL(p_δ || q̂) against κ with the exact (clamped) score, the
/// κ → 0 floor removed before the log-log fit. Also fits the collision
/// fraction and, when epsilon_paths > 0, checks the KL bound direction.
ExperimentReport discretization_sweep(const ModelSpec& spec, const DiscretizationOptions& options);

struct UniformizationOptions {
  double horizon = 2.0;
  double delta = 0.05;
  std::vector<int> blocks{1, 4, 16};
  std::size_t n_paths = 100000;
  double tv_limit = 0.02;
  /// Clamp set to this factor times the exact-score maximum over the horizon.
  double clamp_headroom = 1.1;
  std::uint64_t seed = 0;
};

/// Exact-score uniformization per block count: TV to p_δ, pairwise block
/// invariance, and agreement with thinning-based exact backward paths.
ExperimentReport uniformization_exactness(const ModelSpec& spec, const UniformizationOptions& options);

struct CostOptions {
  double horizon = 2.0;
  std::vector<double> deltas{1e-1, 1e-2, 1e-3};
  /// Block grid s_{k+1} - s_k <= κ min(1, T - s_{k+1}).
  double kappa = 0.1;
  std::size_t n_paths = 20000;
  double headroom = 1.1;
  std::uint64_t seed = 0;
};

/// Realized event counts against log(1/δ): per-block tightened bounds give an
/// affine trend; the global clamp bound must match its Poisson mean.
ExperimentReport uniformization_cost(const ModelSpec& spec, const CostOptions& options);

struct ApproximationOptions {
  double horizon = 2.0;
  double delta = 0.05;
  std::vector<double> factors{0.8, 1.0, 1.25};
  int blocks = 16;
  std::size_t n_paths = 100000;
  std::size_t epsilon_paths = 20000;
  std::uint64_t seed = 0;
};

/// Constant score perturbation ŝ = c s with exact uniformization: terminal KL
/// against ε̂ + truncation floor, plus the shape of ε̂ in c.
ExperimentReport approximation_error_experiment(const ModelSpec& spec, const ApproximationOptions& options);

struct GirsanovOptions {
  double horizon = 1.0;
  std::size_t n_paths = 100000;
  /// Perturbations for the score-entropy identity on backward paths.
  std::vector<double> factors{1.0, 1.1, 1.25};
  double backward_horizon = 2.0;
  double backward_delta = 0.05;
  std::uint64_t seed = 0;
};

/// E[Z] = 1 and tilted-vs-reweighted expectations for a constant and an
/// edge-dependent tilt on forward paths, and mean path score entropy against
/// mean -log Z on true backward paths. Points hold z-scores.
ExperimentReport girsanov_identity_check(const ModelSpec& spec, const GirsanovOptions& options);

}  // namespace ddm
