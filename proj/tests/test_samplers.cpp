#include <doctest.h>

#include <cmath>
#include <memory>

#include "ddm/samplers.hpp"
#include "ddm/score.hpp"
#include "support.hpp"

using namespace ddm;
using ddm::test::throws_kind;

namespace {

struct Problem {
  Model model;
  std::shared_ptr<const ReversedMarginals> marginals;
  Vector p_delta;
};

Problem make(Model model, const Distribution& p0, double horizon, double delta) {
  auto prop = build_propagator(model.rates);
  auto marginals = std::make_shared<const ReversedMarginals>(prop, p0, horizon);
  Vector p_delta = prop->propagate(p0, delta).probs();
  return {std::move(model), std::move(marginals), std::move(p_delta)};
}

}  // namespace

TEST_CASE("uniform grid") {
  const TimeGrid g = build_time_grid(1.0, 0.0, 0.25, 0.0, 1.0, GridKind::Uniform);
  REQUIRE(g.points.size() == 5);
  for (int k = 0; k <= 4; ++k) CHECK(g.points[static_cast<std::size_t>(k)] == doctest::Approx(0.25 * k));
  CHECK(g.points.back() == 1.0);
  CHECK(g.satisfies_invariant());

  const TimeGrid trunc = build_time_grid(1.0, 0.1, 0.25, 0.0, 1.0, GridKind::Uniform);
  CHECK(trunc.points.back() == doctest::Approx(0.9));
  CHECK(trunc.step(trunc.steps() - 1) == doctest::Approx(0.15));
  CHECK(to_json(trunc).at("points").size() == trunc.points.size());
}

TEST_CASE("shrinking grid") {
  // γ = η = 1 with δ = e^{-√T}: step count bounded by (T + √T) / κ.
  for (double horizon : {2.0, 4.0, 9.0}) {
    for (double kappa : {0.2, 0.05}) {
      const TimeGrid g =
          build_time_grid(horizon, std::exp(-std::sqrt(horizon)), kappa, 1.0, 1.0, GridKind::Shrinking);
      CHECK(g.satisfies_invariant());
      CHECK(static_cast<double>(g.steps()) <= (horizon + std::sqrt(horizon)) / kappa);
      for (std::size_t k = 0; k + 1 < g.steps(); ++k) CHECK(g.step(k + 1) <= g.step(k) * (1.0 + 1e-9));
    }
  }
  // η = 0 never shrinks.
  const TimeGrid flat = build_time_grid(2.0, 0.0, 0.5, 0.0, 0.0, GridKind::Shrinking);
  CHECK(flat.steps() == 4);
  // Far from T the step is κ.
  const TimeGrid g = build_time_grid(5.0, 0.01, 0.1, 0.5, 0.5, GridKind::Shrinking);
  CHECK(g.step(0) == doctest::Approx(0.1));
}

TEST_CASE("grid errors") {
  CHECK(throws_kind([] { build_time_grid(1.0, 1.0, 0.1, 0.0, 1.0, GridKind::Uniform); }, ErrorKind::EmptyGrid));
  CHECK(throws_kind([] { build_time_grid(1.0, 2.0, 0.1, 0.0, 1.0, GridKind::Uniform); }, ErrorKind::EmptyGrid));
  CHECK(throws_kind([] { build_time_grid(1.0, 0.0, 0.1, 1.0, 1.0, GridKind::Shrinking); },
                    ErrorKind::StepUnderflow));
  CHECK(throws_kind([] { build_time_grid(1.0, 0.0, 0.1, 0.8, 0.5, GridKind::Shrinking); }, ErrorKind::OutOfRange));
  CHECK(grid_kind_from_string(to_string(GridKind::Shrinking)) == GridKind::Shrinking);
}

TEST_CASE("tau-leaping step probabilities") {
  const Model two = hypercube_rate_matrix(1);
  const Model cube = hypercube_rate_matrix(2);
  std::uint64_t collisions = 0;
  Philox rng(1, 0);
  CHECK(tau_leaping_step(two.space, 0, Vector::Zero(2), 1.0, rng, collisions) == 0);

  const int n = 1000000;
  Vector single(2);
  single << 0.0, 0.1;
  int moved = 0;
  for (int i = 0; i < n; ++i) moved += tau_leaping_step(two.space, 0, single, 1.0, rng, collisions) == 1;
  const double p_move = 1.0 - std::exp(-0.1);
  CHECK(std::abs(moved / double(n) - p_move) < 3.0 * std::sqrt(p_move * (1.0 - p_move) / n));

  // From 00, targets 01 and 10 each at μΔ = 0.05; 11 needs both to fire.
  Vector two_targets = Vector::Zero(4);
  two_targets(1) = 0.05;
  two_targets(2) = 0.05;
  int corner = 0;
  collisions = 0;
  for (int i = 0; i < n; ++i) corner += tau_leaping_step(cube.space, 0, two_targets, 1.0, rng, collisions) == 3;
  const double p_corner = std::pow(1.0 - std::exp(-0.05), 2);
  CHECK(std::abs(corner / double(n) - p_corner) < 3.0 * std::sqrt(p_corner * (1.0 - p_corner) / n));
  CHECK(collisions >= static_cast<std::uint64_t>(corner));

  // Repeated firing on one coordinate clips at the lattice boundary.
  CHECK(cube.space.has_embedding());
  CHECK(resolve_lattice(cube.space, 0, {0, 3, 0, 0}) == 1);
  CHECK(resolve_lattice(cube.space, 0, {0, 1, 1, 0}) == 3);
}

TEST_CASE("tau-leaping with the exact score approaches p_delta") {
  const Problem p = make(hypercube_rate_matrix(1), Distribution::point_mass(2, 0), 2.0, 0.05);
  const ExactScoreProvider score(p.marginals);
  const TimeGrid grid = build_time_grid(2.0, 0.05, 0.01, 0.0, 1.0, GridKind::Uniform);
  const SampleSet s = run_tau_leaping(p.model.space, p.model.rates, score, grid, 100000, 7);
  CHECK(s.paths() == 100000);
  CHECK(s.steps == grid.steps());
  CHECK(tv_distance(s.histogram(2), p.p_delta) <= 0.03);

  const SampleSet again = run_tau_leaping(p.model.space, p.model.rates, score, grid, 2000, 7);
  set_max_threads(1);
  const SampleSet serial = run_tau_leaping(p.model.space, p.model.rates, score, grid, 2000, 7);
  set_max_threads(0);
  CHECK(again.terminal == serial.terminal);
  CHECK(samples_to_csv(again).rfind("path_id,terminal_state\n", 0) == 0);
}

TEST_CASE("tau-leaping TV shrinks with kappa") {
  const Problem p = make(hypercube_rate_matrix(2), Distribution::point_mass(4, 0), 2.0, 0.05);
  const ExactScoreProvider score(p.marginals, 2.0);
  const std::size_t n = 100000;
  const double slack = 3.0 * std::sqrt(4.0 / static_cast<double>(n));
  double previous = INFINITY;
  for (double kappa : {0.4, 0.2, 0.1, 0.05}) {
    const TimeGrid grid = build_time_grid(2.0, 0.05, kappa, 0.0, 1.0, GridKind::Uniform);
    const double tv = tv_distance(run_tau_leaping(p.model.space, p.model.rates, score, grid, n, 11).histogram(4),
                                  p.p_delta);
    CHECK(tv <= previous + slack);
    previous = tv;
  }
}

TEST_CASE("intensity upper bound") {
  const Model cube = hypercube_rate_matrix(3);
  CHECK(intensity_upper_bound(1.0, cube.rates) == 3.0);
  const Problem flat = make(cube, Distribution::uniform(8), 1.0, 0.0);
  const ExactScoreProvider score(flat.marginals, 1.0);
  for (StateIndex x = 0; x < 8; ++x) {
    const Vector row = score.query(0.5, x);
    double total = 0.0;
    for (StateIndex y = 0; y < 8; ++y) {
      if (y != x) total += row(static_cast<Eigen::Index>(y)) * cube.rates(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x));
    }
    CHECK(total <= intensity_upper_bound(1.0, cube.rates));
  }
}

TEST_CASE("uniformization is exact for every block count") {
  const double horizon = 2.0;
  const double delta = 0.05;
  const Problem p = make(hypercube_rate_matrix(1), Distribution::point_mass(2, 0), horizon, delta);
  const ExactScoreProvider exact(p.marginals);
  // Largest exact score on [0, T - δ] is at s = T - δ.
  const double m = 1.1 * exact.query(horizon - delta, 1)(0);
  const ExactScoreProvider clamped(p.marginals, m);
  const std::size_t n = 100000;
  std::vector<Vector> laws;
  for (int blocks : {1, 4, 16}) {
    const TimeGrid g = build_time_grid(horizon, delta, (horizon - delta) / blocks, 0.0, 1.0, GridKind::Uniform);
    const SampleSet s = run_uniformization(p.model.space, p.model.rates, clamped, g, n, 13);
    laws.push_back(s.histogram(2));
    CHECK(tv_distance(laws.back(), p.p_delta) <= 0.02);
    CHECK(s.expected_events == doctest::Approx(m * (horizon - delta)));
    CHECK(std::abs(s.mean_events() - s.expected_events) <= 3.0 * s.events_se());
  }
  CHECK(tv_distance(laws.front(), laws.back()) <= 2.0 * std::sqrt(2.0 / n));

  // A 10x larger clamp only adds self-loops.
  const ExactScoreProvider loose(p.marginals, 10.0 * m);
  const TimeGrid g = build_time_grid(horizon, delta, (horizon - delta) / 4, 0.0, 1.0, GridKind::Uniform);
  const SampleSet s = run_uniformization(p.model.space, p.model.rates, loose, g, n, 14);
  CHECK(tv_distance(s.histogram(2), laws[1]) < 0.01);
  CHECK(diagnostics_to_json(s).contains("realized_N"));

  // Tightened bounds are per block and no larger than the global one.
  const auto tight = tightened_block_bounds(p.model.rates, exact, g);
  CHECK(tight.size() == g.steps());
  for (double b : tight) CHECK(b <= 1.1 * m + 1e-12);
  const SampleSet t = run_uniformization(p.model.space, p.model.rates, exact, g, n, 15, tight);
  CHECK(tv_distance(t.histogram(2), p.p_delta) <= 0.02);
}

TEST_CASE("uniformization rejects a broken clamp") {
  const Problem p = make(hypercube_rate_matrix(1), Distribution::point_mass(2, 0), 2.0, 0.05);
  const ExactScoreProvider exact(p.marginals);
  const TimeGrid g = build_time_grid(2.0, 0.05, 1.95, 0.0, 1.0, GridKind::Uniform);
  CHECK(throws_kind([&] { run_uniformization(p.model.space, p.model.rates, exact, g, 1000, 1, {0.5}); },
                    ErrorKind::BoundViolated));
}
