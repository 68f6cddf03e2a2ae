#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ddm/exact.hpp"
#include "ddm/random.hpp"
#include "ddm/score.hpp"
#include "ddm/statespace.hpp"

namespace ddm {

enum class GridKind { Uniform, Shrinking };

/// Backward-time grid 0 = s_0 < ... < s_N = T - δ.
struct TimeGrid {
  std::vector<double> points;
  GridKind kind = GridKind::Uniform;
  double kappa = 0.0;
  double gamma = 0.0;
  double eta = 0.0;
  double delta = 0.0;
  double horizon = 0.0;

  std::size_t steps() const noexcept { return points.empty() ? 0 : points.size() - 1; }
  double step(std::size_t k) const { return points[k + 1] - points[k]; }
  /// Step bound at s_{k+1}: κ for uniform grids, κ min(1, (T - s_{k+1})^η) for
  /// shrinking grids.
  double step_limit(std::size_t k) const;
  /// Every step within its limit (the final remainder of a δ = 0 shrinking
  /// grid, below 1e-12 T, is exempt).
  bool satisfies_invariant() const;
};

/// Greedy grid from s = 0. Uniform: constant step κ, the last step truncated
/// at T - δ. Shrinking: the largest step with s_{k+1} - s_k = κ min(1, (T -
/// s_{k+1})^η). Throws EmptyGrid (δ >= T), StepUnderflow (step below 1e-12)
/// or InvalidArgument / OutOfRange on bad parameters.
TimeGrid build_time_grid(double horizon, double delta, double kappa, double gamma, double eta,
                         GridKind kind);

std::string to_string(GridKind kind);
GridKind grid_kind_from_string(const std::string& name);
nlohmann::json to_json(const TimeGrid& grid);

/// state + Σ_y counts[y] (y - state) in lattice coordinates, clipped
/// coordinatewise to the lattice. Requires an embedding.
StateIndex resolve_lattice(const StateSpace& space, StateIndex state,
                           const std::vector<std::uint64_t>& counts);

/// One τ-leaping update from `state` with intensities μ(y) frozen over Δ.
/// Multiple firings are resolved by summing lattice displacements and
/// clipping (spaces with an embedding) or by a uniform choice among fired
/// targets; either way `collisions` is incremented.
StateIndex tau_leaping_step(const StateSpace& space, StateIndex state, const Vector& intensity,
                            double dt, Philox& rng, std::uint64_t& collisions);

struct SampleSet {
  std::vector<StateIndex> terminal;
  std::uint64_t collisions = 0;
  std::uint64_t total_jumps = 0;
  std::size_t steps = 0;
  /// Uniformization only: realized event counts per path (self-loops included).
  std::vector<std::uint64_t> events;
  double expected_events = 0.0;

  std::size_t paths() const noexcept { return terminal.size(); }
  /// collisions / (paths · steps).
  double collision_fraction() const;
  Vector histogram(std::size_t size) const;
  double mean_events() const;
  double events_se() const;
};

/// Algorithm 1. Paths start from the uniform law and each path i draws from
/// Philox::for_path(seed, i).
SampleSet run_tau_leaping(const StateSpace& space, const RateMatrix& q, const ScoreProvider& score,
                          const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed);

/// λ̄ = M · D_hi.
double intensity_upper_bound(double clamp, const RateMatrix& q);

/// Block bounds headroom · sup_s max_x Σ_y ŝ_s(x, y) Q(x, y) over a guard grid
/// of each block (the optional tightened bound).
std::vector<double> tightened_block_bounds(const RateMatrix& q, const ScoreProvider& score,
                                           const TimeGrid& blocks, double headroom = 1.1,
                                           int guard_points = 32);

/// Algorithm 2 on the given blocks. `block_bounds` empty means the global
/// bound from the provider's clamp. Throws BoundViolated when the intensity
/// exceeds the bound at an event.
SampleSet run_uniformization(const StateSpace& space, const RateMatrix& q, const ScoreProvider& score,
                             const TimeGrid& blocks, std::size_t n_paths, std::uint64_t seed,
                             const std::vector<double>& block_bounds = {});

/// CSV "path_id,terminal_state".
std::string samples_to_csv(const SampleSet& samples);
/// {"collision_count", "total_jumps", "steps", "realized_N": {...}}.
nlohmann::json diagnostics_to_json(const SampleSet& samples);

}  // namespace ddm
