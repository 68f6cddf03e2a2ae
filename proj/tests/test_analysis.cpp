#include <doctest.h>

#include <cmath>
#include <memory>

#include "ddm/analysis.hpp"
#include "support.hpp"

using namespace ddm;
using ddm::test::throws_kind;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

ModelSpec spec_named(const std::string& name) {
  for (ModelSpec& s : model_suite()) {
    if (s.name == name) return s;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown model " + name);
}

// Inverse-CDF draws at evenly spaced quantiles: an exact sample of `p`.
std::vector<StateIndex> quantile_sample(const Vector& p, std::size_t n) {
  std::vector<StateIndex> out;
  out.reserve(n);
  double cdf = p(0);
  StateIndex x = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    while (u > cdf && x + 1 < static_cast<StateIndex>(p.size())) cdf += p(static_cast<Eigen::Index>(++x));
    out.push_back(x);
  }
  return out;
}

}  // namespace

TEST_CASE("fit_line") {
  const LinearFit f = fit_line({0, 1, 2, 3}, {1, 3, 5, 7});
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.intercept == doctest::Approx(1.0));
  CHECK(f.r2 == doctest::Approx(1.0));
  CHECK(f.slope_se == doctest::Approx(0.0).epsilon(1e-12));
  const LinearFit noisy = fit_line({0, 1, 2, 3}, {0, 1.1, 1.9, 3.2});
  CHECK(noisy.r2 < 1.0);
  CHECK(noisy.slope_se > 0.0);
}

TEST_CASE("model suite") {
  const auto suite = model_suite();
  CHECK(suite.size() == 5);
  for (const ModelSpec& s : suite) {
    CHECK(s.p0[0] == 1.0);
    CHECK(describe(s).contains("name"));
  }
  CHECK(two_state_chain().rates.entries() == hypercube_rate_matrix(1).rates.entries());
}

TEST_CASE("truncation curve") {
  ModelSpec flat = spec_named("hypercube-2");
  flat.p0 = Distribution::uniform(4);
  const ExperimentReport zero = truncation_error_curve(flat, {0.5, 1.0, 2.0});
  for (const ReportPoint& p : zero.points) CHECK(std::abs(p.estimate) <= 1e-15);

  const ExperimentReport two = truncation_error_curve(spec_named("two-state"), {0.5, 1.0, 2.0, 3.0});
  for (const ReportPoint& p : two.points) {
    const double a = 0.5 + 0.5 * std::exp(-2.0 * p.param);
    const double closed = a * std::log(2.0 * a) + (1.0 - a) * std::log(2.0 * (1.0 - a));
    CHECK(p.estimate == doctest::Approx(closed).epsilon(1e-10));
    CHECK(p.exact);
  }

  const ExperimentReport cube = truncation_error_curve(spec_named("hypercube-3"), {1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0},
                                                       0.999);
  CHECK(cube.passed());
  CHECK(cube.fits.at("r2_tail").get<double>() >= 0.999);
  CHECK(cube.to_csv().rfind("param,estimate,se,lo,hi\n", 0) == 0);
}

TEST_CASE("empirical terminal KL") {
  const Vector p = vec({0.1, 0.2, 0.3, 0.4});
  const Distribution ref(p);
  const EmpiricalKl exact_sample = empirical_terminal_kl(quantile_sample(p, 1000000), ref, 0.5, 200, 1);
  CHECK(exact_sample.estimate <= 0.002);
  CHECK(exact_sample.lo <= exact_sample.hi);
  CHECK_FALSE(exact_sample.missing_support);

  const EmpiricalKl gap = empirical_terminal_kl(std::vector<StateIndex>(1000, 0), ref, 0.5, 100, 2);
  CHECK(std::isfinite(gap.estimate));
  CHECK(gap.missing_support);

  const std::vector<StateIndex> one(100000, 2);
  const EmpiricalKl degenerate = empirical_terminal_kl(one, Distribution::uniform(4), 0.5, 100, 3);
  CHECK(std::abs(degenerate.estimate - std::log(4.0)) < 0.25 * std::log(4.0) + 3.0 * std::log(100000.0) / 4.0);
  CHECK(degenerate.estimate > 0.5 * std::log(4.0));
  CHECK(empirical_terminal_kl(std::vector<StateIndex>(10, 1), ref, 0.5, 50, 4).undersampled);
}

TEST_CASE("tau-leaping oracle law") {
  const Model two = two_state_chain();

  // Zero intensity keeps the uniform start.
  ModelSpec idle{"idle", {StateSpace(2), validate_rate_matrix(Matrix::Zero(2, 2))}, Distribution::uniform(2)};
  const ExactScoreProvider flat(std::make_shared<const ReversedMarginals>(build_propagator(idle.model.rates),
                                                                          Distribution::uniform(2), 1.0));
  const TimeGrid g1 = build_time_grid(1.0, 0.0, 0.25, 0.0, 1.0, GridKind::Uniform);
  const OracleLaw still = tau_leaping_exact_law(idle.model.space, idle.model.rates, flat, g1);
  CHECK((still.law - Distribution::uniform(2).probs()).cwiseAbs().maxCoeff() < 1e-15);

  // One step of length 0.1 with unit score: the move probability is P(odd number of firings)
  // after clipping, which on the 2-state lattice is P(N >= 1) = 1 - e^{-0.1}.
  const auto uniform_marginals =
      std::make_shared<const ReversedMarginals>(build_propagator(two.rates), Distribution::uniform(2), 1.0);
  const ExactScoreProvider ones(uniform_marginals);
  const TimeGrid one_step = build_time_grid(1.0, 0.9, 0.1, 0.0, 1.0, GridKind::Uniform);
  const OracleLaw law = tau_leaping_exact_law(two.space, two.rates, ones, one_step);
  CHECK(law.law(0) == doctest::Approx(0.5).epsilon(1e-12));
  const SampleSet mc = run_tau_leaping(two.space, two.rates, ones, one_step, 1000000, 5);
  CHECK(law.expected_collisions == doctest::Approx(1.0 - std::exp(-0.1) * 1.1).epsilon(1e-10));
  const double p_multi = 1.0 - std::exp(-0.1) * 1.1;
  CHECK(std::abs(mc.collision_fraction() - p_multi) < 3.0 * std::sqrt(p_multi / 1e6));

  // Hypercube d = 2, four steps, exact score.
  const Model cube = hypercube_rate_matrix(2);
  const auto cm = std::make_shared<const ReversedMarginals>(build_propagator(cube.rates),
                                                            Distribution::point_mass(4, 0), 1.0);
  const ExactScoreProvider score(cm);
  const TimeGrid four = build_time_grid(1.0, 0.2, 0.2, 0.0, 1.0, GridKind::Uniform);
  REQUIRE(four.steps() == 4);
  const OracleLaw oracle = tau_leaping_exact_law(cube.space, cube.rates, score, four);
  CHECK(oracle.mass <= 1.0);
  CHECK(oracle.mass >= 1.0 - 10.0 * 1e-12 * 4);
  const std::size_t n = 1000000;
  const SampleSet sampled = run_tau_leaping(cube.space, cube.rates, score, four, n, 6);
  CHECK(tv_distance(oracle.law, sampled.histogram(4)) <= 0.005);
  CHECK(tv_distance(oracle.law, sampled.histogram(4)) <= 4.0 * std::sqrt(4.0 / n));

  CHECK(throws_kind([&] {
          const Model big = hypercube_rate_matrix(7);
          const auto bm = std::make_shared<const ReversedMarginals>(build_propagator(big.rates),
                                                                    Distribution::uniform(128), 1.0);
          tau_leaping_exact_law(big.space, big.rates, ExactScoreProvider(bm), four);
        },
        ErrorKind::TooLarge));
}

TEST_CASE("backward law oracles") {
  const Model cube = hypercube_rate_matrix(2);
  const Distribution p0 = Distribution::point_mass(4, 0);
  const auto m = std::make_shared<const ReversedMarginals>(build_propagator(cube.rates), p0, 2.0);
  const ExactScoreProvider exact(m);
  const Vector pt = m->backward(0.0);
  // From p_T itself both oracles land on p_δ.
  const Vector p_delta = m->backward(2.0 - 0.1);
  CHECK((exact_backward_terminal_law(*m, 0.1, pt) - p_delta).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((continuous_backward_law(cube.rates, exact, 2.0, 0.1, pt) - p_delta).cwiseAbs().maxCoeff() < 1e-9);
  // From uniform they agree with each other.
  const Vector u = Distribution::uniform(4).probs();
  CHECK((exact_backward_terminal_law(*m, 0.1, u) - continuous_backward_law(cube.rates, exact, 2.0, 0.1, u))
            .cwiseAbs()
            .maxCoeff() < 1e-9);
}

TEST_CASE("discretization sweep") {
  DiscretizationOptions opts;
  opts.horizon = 3.0;
  opts.delta = std::exp(-std::sqrt(3.0));
  opts.clamp = 2.0;
  const ExperimentReport r = discretization_sweep(spec_named("hypercube-3"), opts);
  CHECK(r.points.size() == 4);
  CHECK(r.passed());
  const double slope = r.fits.at("kl_slope").get<double>();
  CHECK(slope >= 0.5);
  CHECK(slope <= 1.5);
  const ExperimentReport again = discretization_sweep(spec_named("hypercube-3"), opts);
  CHECK(again.to_json().dump() == r.to_json().dump());

  // Shrinking grid without early stopping on a full-support start.
  ModelSpec soft = spec_named("two-state");
  soft.p0 = Distribution(vec({0.7, 0.3}));
  const auto m = std::make_shared<const ReversedMarginals>(build_propagator(soft.model.rates), soft.p0, 2.0);
  const ExactScoreProvider score(m);
  for (GridKind kind : {GridKind::Uniform, GridKind::Shrinking}) {
    const TimeGrid g = build_time_grid(2.0, 0.0, 0.05, 0.0, 0.5, kind);
    const OracleLaw law = tau_leaping_exact_law(soft.model.space, soft.model.rates, score, g);
    const double kl = kl_divergence(soft.p0.probs(), law.law).value;
    CHECK(std::isfinite(kl));
    CHECK(kl < 0.05);
  }
}

TEST_CASE("uniformization experiments") {
  UniformizationOptions u;
  u.n_paths = 20000;
  u.tv_limit = 0.03;
  const ExperimentReport exact = uniformization_exactness(spec_named("two-state"), u);
  CHECK(exact.points.size() == 3);
  CHECK(exact.passed());

  CostOptions c;
  c.n_paths = 4000;
  const ExperimentReport cost = uniformization_cost(spec_named("two-state"), c);
  CHECK(cost.passed());
  CHECK(cost.fits.at("slope").get<double>() > 0.0);
}

TEST_CASE("approximation and Girsanov experiments") {
  ApproximationOptions a;
  a.n_paths = 20000;
  a.epsilon_paths = 4000;
  a.factors = {0.8, 1.0, 1.2, 1.25};
  const ExperimentReport approx = approximation_error_experiment(spec_named("two-state"), a);
  CHECK(approx.passed());

  GirsanovOptions g;
  g.n_paths = 5000;
  const ExperimentReport gir = girsanov_identity_check(spec_named("two-state"), g);
  CHECK(gir.passed());
  // The identity tilt and the unperturbed score give z = 0 exactly.
  CHECK(gir.points.front().estimate == 0.0);
  for (const ReportPoint& p : gir.points) {
    if (p.exact) CHECK(p.estimate == 0.0);
  }
  CHECK(gir.plot_data().rfind("# case estimate", 0) == 0);
}
