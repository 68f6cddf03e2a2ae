#include <doctest.h>

#include "ddm/statespace.hpp"
#include "support.hpp"

using namespace ddm;
using ddm::test::throws_kind;

namespace {

Matrix two_state() {
  Matrix m(2, 2);
  m << -1, 1, 1, -1;
  return m;
}

}  // namespace

TEST_CASE("validate_rate_matrix records constants of the 2-state chain") {
  const RateMatrix q = validate_rate_matrix(two_state());
  CHECK(q.c_max() == 1.0);
  CHECK(q.d_hi() == 1.0);
  CHECK(q.d_lo() == 1.0);
  CHECK(q.symmetric());
}

TEST_CASE("validate_rate_matrix rejects malformed generators") {
  Matrix bad(2, 2);
  bad << -1, 0, 1, -1;
  CHECK(throws_kind([&] { validate_rate_matrix(bad); }, ErrorKind::ColumnSumNonzero));
  Matrix negative(2, 2);
  negative << 1, -1, -1, 1;
  CHECK(throws_kind([&] { validate_rate_matrix(negative); }, ErrorKind::NegativeOffDiagonal));
  CHECK(throws_kind([&] { validate_rate_matrix(Matrix::Zero(2, 3)); }, ErrorKind::NotSquare));
}

TEST_CASE("off_diagonal zeroes the diagonal only") {
  const RateMatrix q = validate_rate_matrix(two_state());
  Matrix expected(2, 2);
  expected << 0, 1, 1, 0;
  CHECK(off_diagonal(q) == expected);
  CHECK(q.entries() == two_state());
  const Model cube = hypercube_rate_matrix(2);
  const Vector rows = off_diagonal(cube.rates).rowwise().sum();
  for (Eigen::Index i = 0; i < rows.size(); ++i) CHECK(rows(i) == 2.0);
}

TEST_CASE("hypercube constructor") {
  CHECK(hypercube_rate_matrix(1).rates.entries() == two_state());
  const Model cube = hypercube_rate_matrix(3);
  CHECK(cube.rates.size() == 8);
  CHECK(cube.rates.c_max() == 1.0);
  CHECK(cube.rates.d_hi() == 3.0);
  CHECK(cube.rates.d_lo() == 3.0);
  const Matrix off = off_diagonal(cube.rates);
  for (Eigen::Index x = 0; x < 8; ++x) {
    CHECK(off.col(x).sum() == 3.0);
    for (Eigen::Index y = 0; y < 8; ++y) {
      const bool neighbour = __builtin_popcount(static_cast<unsigned>(x ^ y)) == 1;
      CHECK(off(y, x) == (neighbour ? 1.0 : 0.0));
    }
  }
  CHECK(throws_kind([] { hypercube_rate_matrix(21); }, ErrorKind::TooLarge));
  CHECK(throws_kind([] { hypercube_rate_matrix(5, 16); }, ErrorKind::TooLarge));
}

TEST_CASE("asymmetric hypercube") {
  Matrix expected(2, 2);
  expected << -0.3, 0.7, 0.3, -0.7;
  CHECK((asymmetric_hypercube_rate_matrix(1, 0.3).rates.entries() - expected).cwiseAbs().maxCoeff() < 1e-15);
  const Matrix half = asymmetric_hypercube_rate_matrix(3, 0.5).rates.entries();
  CHECK((half - 0.5 * hypercube_rate_matrix(3).rates.entries()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(throws_kind([] { asymmetric_hypercube_rate_matrix(2, 1.0); }, ErrorKind::POutOfRange));

  // Stationary law from the dense null space equals the Bernoulli(p) product.
  const Model m = asymmetric_hypercube_rate_matrix(2, 0.3);
  Eigen::FullPivLU<Matrix> lu(m.rates.entries());
  const Matrix kernel = lu.kernel();
  REQUIRE(kernel.cols() == 1);
  const Vector pi = kernel.col(0) / kernel.col(0).sum();
  for (StateIndex x = 0; x < 4; ++x) {
    const auto c = m.space.coordinates(x);
    double expected_pi = 1.0;
    for (int bit : c) expected_pi *= bit == 1 ? 0.3 : 0.7;
    CHECK(pi(x) == doctest::Approx(expected_pi).epsilon(1e-12));
  }
}

TEST_CASE("grid constructor") {
  Matrix path(3, 3);
  path << -1, 1, 0, 1, -2, 1, 0, 1, -1;
  CHECK(grid_rate_matrix(3, 1).rates.entries() == path);
  for (int d = 1; d <= 3; ++d) {
    CHECK(grid_rate_matrix(2, d).rates.entries() == hypercube_rate_matrix(d).rates.entries());
  }
  const Model g = grid_rate_matrix(3, 2);
  CHECK(g.rates.d_hi() == 4.0);
  CHECK(g.rates.d_lo() == 2.0);
  CHECK(g.rates.exit_rate(g.space.index_of({0, 0})) == 2.0);
  CHECK(throws_kind([] { grid_rate_matrix(10, 7, 1000); }, ErrorKind::TooLarge));
}

TEST_CASE("graph_of lists positive-rate edges") {
  CHECK(graph_of(validate_rate_matrix(two_state())).size() == 2);
  CHECK(graph_of(hypercube_rate_matrix(2).rates).size() == 8);
  const auto edges = graph_of(asymmetric_hypercube_rate_matrix(1, 0.3).rates);
  REQUIRE(edges.size() == 2);
  CHECK(edges[0].src == 0);
  CHECK(edges[0].dst == 1);
  CHECK(edges[0].rate == doctest::Approx(0.3));
  CHECK(edges[1].rate == doctest::Approx(0.7));
  CHECK(edges_to_csv(edges).rfind("src,dst,rate\n", 0) == 0);
}

TEST_CASE("every constructor output has zero column sums and a consistent symmetry flag") {
  for (const Model& m : {hypercube_rate_matrix(3), asymmetric_hypercube_rate_matrix(2, 0.3), grid_rate_matrix(3, 2),
                         grid_rate_matrix(4, 1)}) {
    CHECK(m.rates.entries().colwise().sum().cwiseAbs().maxCoeff() <= 1e-12);
    const bool symmetric = (m.rates.entries() - m.rates.entries().transpose()).cwiseAbs().maxCoeff() <= 1e-12;
    CHECK(symmetric == m.rates.symmetric());
  }
}

TEST_CASE("lattice embedding is row-major and invertible") {
  const StateSpace s = StateSpace::lattice(3, 2);
  CHECK(s.coordinates(5) == std::vector<int>{1, 2});
  for (StateIndex x = 0; x < 9; ++x) CHECK(s.index_of(s.coordinates(x)) == x);
  CHECK(throws_kind([&] { s.index_of({3, 0}); }, ErrorKind::OutOfRange));
  CHECK(throws_kind([] { StateSpace(4).coordinates(0); }, ErrorKind::InvalidArgument));
}

TEST_CASE("rate matrix JSON round trip") {
  const Model g = grid_rate_matrix(3, 2);
  const Model back = rate_matrix_from_json(rate_matrix_to_json(g.rates, &g.space));
  CHECK(back.rates.entries() == g.rates.entries());
  CHECK(back.space == g.space);
  const auto doc = nlohmann::json::parse(R"({"entries": [[-1, 0], [1, -1]]})");
  CHECK(throws_kind([&] { rate_matrix_from_json(doc); }, ErrorKind::ColumnSumNonzero));
}
