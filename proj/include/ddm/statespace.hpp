#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace ddm {

using StateIndex = int;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dense storage cap on |X|; 2^20 by default.
inline constexpr std::size_t kDefaultMaxStates = std::size_t{1} << 20;

/// Absolute tolerance used for the generator column-sum and symmetry checks.
inline constexpr double kRateTolerance = 1e-12;

/// A finite state space. States are 0-based indices; lattice spaces carry a
/// row-major embedding into [0, side-1]^dim (last coordinate fastest).
class StateSpace {
 public:
  explicit StateSpace(std::size_t size, std::vector<std::string> labels = {});
  /// Lattice space [0, side-1]^dim.
  static StateSpace lattice(int side, int dim);

  std::size_t size() const noexcept { return size_; }
  bool has_embedding() const noexcept { return dim_ > 0; }
  int side() const noexcept { return side_; }
  int dim() const noexcept { return dim_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

  /// Lattice coordinates of `x`; requires an embedding.
  std::vector<int> coordinates(StateIndex x) const;
  /// Inverse of `coordinates`; coordinates must lie inside the lattice.
  StateIndex index_of(const std::vector<int>& coords) const;

  friend bool operator==(const StateSpace&, const StateSpace&) = default;

 private:
  std::size_t size_ = 0;
  int side_ = 0;
  int dim_ = 0;
  std::vector<std::string> labels_;
};

/// A validated, time-homogeneous CTMC generator in column convention:
/// entry (y, x) is the jump rate from x to y, so dp/dt = Q p.
class RateMatrix {
 public:
  const Matrix& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(entries_.rows()); }
  double operator()(StateIndex to, StateIndex from) const { return entries_(to, from); }

  bool symmetric() const noexcept { return symmetric_; }
  bool time_homogeneous() const noexcept { return true; }
  /// Largest off-diagonal rate.
  double c_max() const noexcept { return c_max_; }
  /// Largest / smallest total exit rate |Q(x, x)|.
  double d_hi() const noexcept { return d_hi_; }
  double d_lo() const noexcept { return d_lo_; }
  /// Exit rate -Q(x, x) of state x.
  double exit_rate(StateIndex x) const { return -entries_(x, x); }

 private:
  friend RateMatrix validate_rate_matrix(const Matrix& entries);
  Matrix entries_;
  bool symmetric_ = false;
  double c_max_ = 0.0;
  double d_hi_ = 0.0;
  double d_lo_ = 0.0;
};

/// Checks the generator conditions and records C, D_hi, D_lo and symmetry.
/// Throws NotSquare, NegativeOffDiagonal or ColumnSumNonzero.
RateMatrix validate_rate_matrix(const Matrix& entries);

/// Q with its diagonal zeroed.
Matrix off_diagonal(const RateMatrix& q);

struct Model {
  StateSpace space;
  RateMatrix rates;
};

/// {0,1}^d with unit rate between states at Hamming distance one.
Model hypercube_rate_matrix(int d, std::size_t max_states = kDefaultMaxStates);

/// {0,1}^d where flipping a coordinate 0 -> 1 has rate p and 1 -> 0 rate 1 - p.
Model asymmetric_hypercube_rate_matrix(int d, double p,
                                       std::size_t max_states = kDefaultMaxStates);

/// [0, S-1]^d with unit rate between lattice neighbours (Manhattan distance 1).
Model grid_rate_matrix(int side, int d, std::size_t max_states = kDefaultMaxStates);

struct Edge {
  StateIndex src;
  StateIndex dst;
  double rate;
};

/// Directed edges x -> y with positive rate, ordered by (src, dst).
std::vector<Edge> graph_of(const RateMatrix& q);

/// CSV with header "src,dst,rate".
std::string edges_to_csv(const std::vector<Edge>& edges);

/// {"size": n, "entries": [[...]], "embedding": {"side": S, "dim": d}}.
nlohmann::json rate_matrix_to_json(const RateMatrix& q, const StateSpace* space = nullptr);
Model rate_matrix_from_json(const nlohmann::json& doc);

}  // namespace ddm
