#include "ddm/statespace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ddm/error.hpp"

namespace ddm {

StateSpace::StateSpace(std::size_t size, std::vector<std::string> labels)
    : size_(size), labels_(std::move(labels)) {
  if (size_ < 2) {
    throw Error(ErrorKind::InvalidArgument, "state space needs at least 2 states");
  }
  if (!labels_.empty() && labels_.size() != size_) {
    throw Error(ErrorKind::LengthMismatch, "label count differs from state count");
  }
}

StateSpace StateSpace::lattice(int side, int dim) {
  if (side < 2 || dim < 1) {
    throw Error(ErrorKind::InvalidArgument, "lattice needs side >= 2 and dim >= 1");
  }
  std::size_t n = 1;
  for (int i = 0; i < dim; ++i) {
    n *= static_cast<std::size_t>(side);
  }
  StateSpace space(n);
  space.side_ = side;
  space.dim_ = dim;
  return space;
}

std::vector<int> StateSpace::coordinates(StateIndex x) const {
  if (!has_embedding()) {
    throw Error(ErrorKind::InvalidArgument, "state space has no lattice embedding");
  }
  std::vector<int> coords(static_cast<std::size_t>(dim_));
  for (int i = dim_ - 1; i >= 0; --i) {
    coords[static_cast<std::size_t>(i)] = x % side_;
    x /= side_;
  }
  return coords;
}

StateIndex StateSpace::index_of(const std::vector<int>& coords) const {
  if (!has_embedding() || coords.size() != static_cast<std::size_t>(dim_)) {
    throw Error(ErrorKind::LengthMismatch, "coordinate vector does not match embedding");
  }
  StateIndex x = 0;
  for (int c : coords) {
    if (c < 0 || c >= side_) {
      throw Error(ErrorKind::OutOfRange, "coordinate outside lattice");
    }
    x = x * side_ + c;
  }
  return x;
}

RateMatrix validate_rate_matrix(const Matrix& entries) {
  if (entries.rows() != entries.cols()) {
    throw Error(ErrorKind::NotSquare, "rate matrix is " + std::to_string(entries.rows()) + "x" +
                                          std::to_string(entries.cols()));
  }
  const Eigen::Index n = entries.rows();
  if (n < 2) {
    throw Error(ErrorKind::InvalidArgument, "rate matrix needs at least 2 states");
  }
  RateMatrix q;
  q.entries_ = entries;
  q.c_max_ = 0.0;
  q.d_hi_ = 0.0;
  q.d_lo_ = std::numeric_limits<double>::infinity();
  for (Eigen::Index x = 0; x < n; ++x) {
    double off = 0.0;
    for (Eigen::Index y = 0; y < n; ++y) {
      if (y == x) continue;
      const double r = entries(y, x);
      if (!(r >= 0.0)) {
        std::ostringstream msg;
        msg << "entry (" << y << ", " << x << ") = " << r;
        throw Error(ErrorKind::NegativeOffDiagonal, msg.str());
      }
      off += r;
      q.c_max_ = std::max(q.c_max_, r);
    }
    const double col_sum = off + entries(x, x);
    if (!(std::abs(col_sum) <= kRateTolerance)) {
      std::ostringstream msg;
      msg << "column " << x << " sums to " << col_sum;
      throw Error(ErrorKind::ColumnSumNonzero, msg.str());
    }
    const double d = std::abs(entries(x, x));
    q.d_hi_ = std::max(q.d_hi_, d);
    q.d_lo_ = std::min(q.d_lo_, d);
  }
  q.symmetric_ = (entries - entries.transpose()).cwiseAbs().maxCoeff() <= kRateTolerance;
  return q;
}

Matrix off_diagonal(const RateMatrix& q) {
  Matrix out = q.entries();
  out.diagonal().setZero();
  return out;
}

namespace {

std::size_t checked_power(int side, int d, std::size_t max_states) {
  if (d < 1) {
    throw Error(ErrorKind::InvalidArgument, "dimension must be positive");
  }
  std::size_t n = 1;
  for (int i = 0; i < d; ++i) {
    n *= static_cast<std::size_t>(side);
    if (n > max_states) {
      throw Error(ErrorKind::TooLarge, std::to_string(side) + "^" + std::to_string(d) +
                                           " exceeds the state cap " +
                                           std::to_string(max_states));
    }
  }
  return n;
}

void fill_diagonal(Matrix& m) {
  m.diagonal().setZero();
  m.diagonal() = -m.colwise().sum().transpose();
}

}  // namespace

Model hypercube_rate_matrix(int d, std::size_t max_states) {
  if (d > 20) {
    throw Error(ErrorKind::TooLarge, "hypercube dimension above 20");
  }
  return grid_rate_matrix(2, d, max_states);
}

Model asymmetric_hypercube_rate_matrix(int d, double p, std::size_t max_states) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(ErrorKind::POutOfRange, "p must lie in (0, 1)");
  }
  if (d > 20) {
    throw Error(ErrorKind::TooLarge, "hypercube dimension above 20");
  }
  const std::size_t n = checked_power(2, d, max_states);
  StateSpace space = StateSpace::lattice(2, d);
  const double q = 1.0 - p;
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t x = 0; x < n; ++x) {
    for (int bit = 0; bit < d; ++bit) {
      const std::size_t y = x ^ (std::size_t{1} << bit);
      const bool x_has_one = (x >> bit) & 1U;
      m(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) = x_has_one ? q : p;
    }
  }
  fill_diagonal(m);
  return {std::move(space), validate_rate_matrix(m)};
}

Model grid_rate_matrix(int side, int d, std::size_t max_states) {
  if (side < 2) {
    throw Error(ErrorKind::InvalidArgument, "grid side must be at least 2");
  }
  const std::size_t n = checked_power(side, d, max_states);
  StateSpace space = StateSpace::lattice(side, d);
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t x = 0; x < n; ++x) {
    auto coords = space.coordinates(static_cast<StateIndex>(x));
    for (std::size_t i = 0; i < coords.size(); ++i) {
      for (int step : {-1, 1}) {
        const int c = coords[i] + step;
        if (c < 0 || c >= side) continue;
        auto nb = coords;
        nb[i] = c;
        m(space.index_of(nb), static_cast<Eigen::Index>(x)) = 1.0;
      }
    }
  }
  fill_diagonal(m);
  return {std::move(space), validate_rate_matrix(m)};
}

std::vector<Edge> graph_of(const RateMatrix& q) {
  std::vector<Edge> edges;
  const auto n = static_cast<StateIndex>(q.size());
  for (StateIndex x = 0; x < n; ++x) {
    for (StateIndex y = 0; y < n; ++y) {
      if (x != y && q(y, x) > 0.0) {
        edges.push_back({x, y, q(y, x)});
      }
    }
  }
  return edges;
}

std::string edges_to_csv(const std::vector<Edge>& edges) {
  std::ostringstream out;
  out.precision(17);
  out << "src,dst,rate\n";
  for (const auto& e : edges) {
    out << e.src << ',' << e.dst << ',' << e.rate << '\n';
  }
  return out.str();
}

nlohmann::json rate_matrix_to_json(const RateMatrix& q, const StateSpace* space) {
  nlohmann::json doc;
  const auto n = static_cast<Eigen::Index>(q.size());
  doc["size"] = q.size();
  auto rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < n; ++r) {
    auto row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < n; ++c) row.push_back(q.entries()(r, c));
    rows.push_back(std::move(row));
  }
  doc["entries"] = std::move(rows);
  if (space != nullptr && space->has_embedding()) {
    doc["embedding"] = {{"side", space->side()}, {"dim", space->dim()}};
  }
  return doc;
}

Model rate_matrix_from_json(const nlohmann::json& doc) {
  if (!doc.contains("entries") || !doc["entries"].is_array()) {
    throw Error(ErrorKind::InvalidArgument, "rate matrix JSON needs an \"entries\" array");
  }
  const auto& rows = doc["entries"];
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (doc.contains("size") && doc["size"].get<Eigen::Index>() != n) {
    throw Error(ErrorKind::LengthMismatch, "\"size\" disagrees with \"entries\"");
  }
  Matrix m(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)].size()) != n) {
      throw Error(ErrorKind::NotSquare, "row " + std::to_string(r) + " has wrong length");
    }
    for (Eigen::Index c = 0; c < n; ++c) {
      m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
    }
  }
  RateMatrix q = validate_rate_matrix(m);
  if (doc.contains("embedding") && !doc["embedding"].is_null()) {
    const int side = doc["embedding"].at("side").get<int>();
    const int dim = doc["embedding"].at("dim").get<int>();
    StateSpace space = StateSpace::lattice(side, dim);
    if (static_cast<Eigen::Index>(space.size()) != n) {
      throw Error(ErrorKind::LengthMismatch, "embedding does not cover the state space");
    }
    return {std::move(space), std::move(q)};
  }
  return {StateSpace(static_cast<std::size_t>(n)), std::move(q)};
}

}  // namespace ddm
