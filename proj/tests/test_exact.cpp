#include <doctest.h>

#include <cmath>
#include <random>
#include <unsupported/Eigen/MatrixFunctions>

#include "ddm/exact.hpp"
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

// Random valid generator with rates in [0, 2) on a complete graph.
RateMatrix random_generator(std::mt19937_64& rng, int n, bool symmetric) {
  std::uniform_real_distribution<double> u(0.0, 2.0);
  Matrix m = Matrix::Zero(n, n);
  for (int x = 0; x < n; ++x) {
    for (int y = 0; y < n; ++y) {
      if (x == y) continue;
      if (symmetric && y < x) {
        m(y, x) = m(x, y);
      } else {
        m(y, x) = u(rng);
      }
    }
  }
  for (int x = 0; x < n; ++x) m(x, x) = -(m.col(x).sum() - m(x, x));
  return validate_rate_matrix(m);
}

}  // namespace

TEST_CASE("propagator eigenvalues") {
  const Propagator two(hypercube_rate_matrix(1).rates);
  REQUIRE(two.spectral());
  CHECK(two.eigenvalues()(0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(two.eigenvalues()(1) == doctest::Approx(2.0));

  const Propagator cube(hypercube_rate_matrix(3).rates);
  const std::vector<double> expected{0, 2, 2, 2, 4, 4, 4, 6};
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(std::abs(cube.eigenvalues()(static_cast<Eigen::Index>(i)) - expected[i]) < 1e-10);
  }
}

TEST_CASE("propagate on the 2-state chain matches the closed form") {
  const Propagator p(hypercube_rate_matrix(1).rates);
  const Distribution p0 = Distribution::point_mass(2, 0);
  CHECK(p.propagate(p0, 0.0).probs() == p0.probs());
  for (double t : {0.1, 0.5, 1.0, 2.0, 5.0}) {
    CHECK(std::abs(p.propagate(p0, t)[0] - (0.5 + 0.5 * std::exp(-2.0 * t))) < 1e-12);
  }
  CHECK(throws_kind([&] { p.propagate(p0, -1.0); }, ErrorKind::NegativeTime));
}

TEST_CASE("long-time limit is uniform on a connected symmetric chain") {
  const Propagator p(hypercube_rate_matrix(3).rates);
  const Vector pt = p.propagate(Distribution::point_mass(8, 5), 20.0 / 2.0).probs();
  CHECK((pt.array() - 0.125).abs().maxCoeff() < 1e-8);
}

TEST_CASE("transition kernel") {
  const Propagator p(hypercube_rate_matrix(3).rates);
  CHECK(p.transition_kernel(0.0) == Matrix::Identity(8, 8));
  for (double t : {0.1, 1.0, 10.0}) {
    const Matrix k = p.transition_kernel(t);
    CHECK((k.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-10);
    CHECK((k - k.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((k.col(3) - p.propagate(Distribution::point_mass(8, 3), t).probs()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("expm agrees with Eigen's matrix exponential") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const RateMatrix q = random_generator(rng, 2 + trial % 5, false);
    for (double t : {0.01, 0.7, 3.0, 40.0}) {
      const Matrix a = t * q.entries();
      const Matrix reference = a.exp();
      CHECK((expm(a) - reference).cwiseAbs().maxCoeff() <= 1e-11 * std::max(1.0, reference.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("non-symmetric propagator uses expm and conserves mass") {
  const Model m = asymmetric_hypercube_rate_matrix(2, 0.3);
  const Propagator p(m.rates);
  CHECK_FALSE(p.spectral());
  const Vector pt = p.propagate(Distribution::point_mass(4, 0), 1.5).probs();
  CHECK(std::abs(pt.sum() - 1.0) < 1e-12);
  CHECK((pt - (1.5 * m.rates.entries()).exp().col(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("semigroup property on random generators") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    const RateMatrix q = random_generator(rng, 5, trial % 2 == 0);
    const Propagator p(q);
    const Distribution p0 = Distribution::normalized(Vector::Random(5).cwiseAbs() + Vector::Constant(5, 0.1));
    const double s = u(rng);
    const double t = u(rng);
    const Vector two_steps = p.propagate(p.propagate(p0, s), t).probs();
    CHECK((two_steps - p.propagate(p0, s + t).probs()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("reversed marginals") {
  const auto prop = build_propagator(hypercube_rate_matrix(2).rates);
  const Distribution p0 = Distribution::point_mass(4, 0);
  const ReversedMarginals m(prop, p0, 2.0);
  CHECK((m.backward(0.0) - prop->propagate(p0, 2.0).probs()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((m.backward(2.0) - p0.probs()).cwiseAbs().maxCoeff() < 1e-12);
  for (double s : {0.3, 1.1}) {
    const Vector forward_again = prop->apply(m.backward(s), s);
    CHECK((forward_again - m.backward(0.0)).cwiseAbs().maxCoeff() < 1e-8);
  }
  const std::vector<double> times{0.0, 1.0};
  CHECK(m.to_csv(times).rfind("s,t,state,prob\n", 0) == 0);
}

TEST_CASE("score vectors") {
  CHECK(score(Distribution::uniform(4).probs(), 2) == Vector::Ones(4));
  const Vector s = score(vec({0.75, 0.25}), 0);
  CHECK(s(0) == 1.0);
  CHECK(s(1) == doctest::Approx(1.0 / 3.0));
  CHECK(throws_kind([] { score(vec({0.0, 1.0}), 0, false); }, ErrorKind::ZeroDenominator));

  // Hypercube d = 2 from δ_0: coordinates flip independently with prob (1 - e^{-2t})/2.
  const Propagator p(hypercube_rate_matrix(2).rates);
  const Vector pt = p.propagate(Distribution::point_mass(4, 0), 0.5).probs();
  const double flip = 0.5 * (1.0 - std::exp(-1.0));
  CHECK(score(pt, 0)(1) == doctest::Approx(flip / (1.0 - flip)).epsilon(1e-12));
}

TEST_CASE("backward rate matrix") {
  const RateMatrix q = hypercube_rate_matrix(2).rates;
  CHECK((backward_rate_matrix(q, Distribution::uniform(4).probs()).entries() - q.entries()).cwiseAbs().maxCoeff() <
        1e-15);
  const RateMatrix two = hypercube_rate_matrix(1).rates;
  const Vector p = vec({0.75, 0.25});
  const RateMatrix back = backward_rate_matrix(two, p);
  CHECK(back(1, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(back(0, 1) == doctest::Approx(3.0));
  const Model asym = asymmetric_hypercube_rate_matrix(2, 0.3);
  const Vector law = vec({0.1, 0.2, 0.3, 0.4});
  const RateMatrix rb = backward_rate_matrix(asym.rates, law);
  for (int x = 0; x < 4; ++x) {
    for (int y = 0; y < 4; ++y) {
      if (x != y) CHECK(rb(y, x) * law(x) == doctest::Approx(asym.rates(x, y) * law(y)));
    }
  }
  CHECK(throws_kind([&] { backward_rate_matrix(two, vec({1.0, 0.0})); }, ErrorKind::ZeroDenominator));
}

TEST_CASE("KL divergence and total variation") {
  const Vector half = vec({0.5, 0.5});
  CHECK(kl_divergence(half, half).value == 0.0);
  CHECK(kl_divergence(vec({1.0, 0.0}), half).value == doctest::Approx(std::log(2.0)));
  CHECK(kl_divergence(vec({0.75, 0.25}), half).value ==
        doctest::Approx(0.75 * std::log(1.5) + 0.25 * std::log(0.5)));
  const KlResult floored = kl_divergence(half, vec({1.0, 0.0}));
  CHECK(floored.floored);
  CHECK(std::isfinite(floored.value));
  CHECK(throws_kind([&] { kl_divergence(half, vec({1.0, 0.0}), 0.0); }, ErrorKind::SupportMismatch));

  CHECK(tv_distance(half, half) == 0.0);
  CHECK(tv_distance(vec({1.0, 0.0}), vec({0.0, 1.0})) == 1.0);
  CHECK(tv_distance(vec({0.75, 0.25}), half) == doctest::Approx(0.25));
}

TEST_CASE("KL to uniform decays monotonically on a symmetric chain") {
  const Propagator p(grid_rate_matrix(3, 2).rates);
  const Vector u = Distribution::uniform(9).probs();
  double previous = INFINITY;
  for (int k = 0; k <= 40; ++k) {
    const double kl = kl_divergence(p.propagate(Distribution::point_mass(9, 0), 0.1 * k).probs(), u).value;
    CHECK(kl <= previous + 1e-15);
    previous = kl;
  }
}

TEST_CASE("distribution invariants") {
  CHECK(throws_kind([] { Distribution(vec({0.5, 0.6})); }, ErrorKind::InvalidArgument));
  CHECK(Distribution(vec({1.0 + 1e-15, -1e-15}))[1] == 0.0);
}
