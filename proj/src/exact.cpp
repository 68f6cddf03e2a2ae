#include "ddm/exact.hpp"

#include <array>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "ddm/error.hpp"

namespace ddm {

namespace {

constexpr double kMassTolerance = 1e-10;
constexpr double kNegativeClamp = -1e-14;

void check_time(double t) {
  if (!(t >= 0.0)) {
    std::ostringstream msg;
    msg << "time " << t;
    throw Error(ErrorKind::NegativeTime, msg.str());
  }
}

}  // namespace

Distribution::Distribution(Vector probs) : probs_(std::move(probs)) {
  if (probs_.size() < 1) {
    throw Error(ErrorKind::InvalidArgument, "empty distribution");
  }
  for (Eigen::Index i = 0; i < probs_.size(); ++i) {
    const double v = probs_(i);
    if (!std::isfinite(v) || v < kNegativeClamp) {
      std::ostringstream msg;
      msg << "entry " << i << " = " << v;
      throw Error(ErrorKind::InvalidArgument, msg.str());
    }
    if (v < 0.0) probs_(i) = 0.0;
  }
  const double total = probs_.sum();
  if (std::abs(total - 1.0) > kMassTolerance) {
    std::ostringstream msg;
    msg << "probabilities sum to " << total;
    throw Error(ErrorKind::InvalidArgument, msg.str());
  }
}

Distribution Distribution::uniform(std::size_t n) {
  return Distribution(Vector::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n)));
}

Distribution Distribution::point_mass(std::size_t n, StateIndex x) {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(n));
  v(x) = 1.0;
  return Distribution(std::move(v));
}

Distribution Distribution::normalized(Vector weights) {
  const double total = weights.sum();
  if (!(total > 0.0) || weights.minCoeff() < 0.0) {
    throw Error(ErrorKind::InvalidArgument, "weights must be non-negative with positive mass");
  }
  return Distribution(weights / total);
}

Matrix expm(const Matrix& a) {
  static constexpr std::array<double, 14> b = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
      129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
      1323241920.0,        40840800.0,          960960.0,           16380.0,
      182.0,               1.0};
  constexpr double theta13 = 5.371920351148152;

  const Eigen::Index n = a.rows();
  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > theta13) {
    squarings = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));
  }
  const Matrix as = a / std::ldexp(1.0, squarings);
  const Matrix ident = Matrix::Identity(n, n);
  const Matrix a2 = as * as;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix u =
      as * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 +
            b[1] * ident);
  const Matrix v =
      a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;
  Matrix r = (v - u).partialPivLu().solve(u + v);
  for (int i = 0; i < squarings; ++i) {
    r = r * r;
  }
  return r;
}

Propagator::Propagator(RateMatrix q) : q_(std::move(q)) {
  if (!q_.symmetric()) return;
  const Matrix laplacian = -q_.entries();
  Eigen::SelfAdjointEigenSolver<Matrix> solver(laplacian);
  if (solver.info() != Eigen::Success) return;
  const Matrix& u = solver.eigenvectors();
  const Vector& lambda = solver.eigenvalues();
  const double reconstruction =
      ((u * lambda.asDiagonal() * u.transpose()) - laplacian).cwiseAbs().maxCoeff();
  if (reconstruction > 1e-8 || std::abs(lambda(0)) > 1e-8) return;
  eigenvalues_ = lambda;
  eigenvectors_ = u;
  spectral_ = true;
}

Matrix Propagator::transition_kernel(double t) const {
  check_time(t);
  if (t == 0.0) {
    return Matrix::Identity(static_cast<Eigen::Index>(q_.size()), static_cast<Eigen::Index>(q_.size()));
  }
  if (spectral_) {
    const Vector decay = (-t * eigenvalues_.array()).exp().matrix();
    return eigenvectors_ * decay.asDiagonal() * eigenvectors_.transpose();
  }
  return expm(t * q_.entries());
}

Vector Propagator::apply(const Vector& v, double t) const {
  check_time(t);
  if (t == 0.0) return v;
  if (spectral_) {
    const Vector coeff = eigenvectors_.transpose() * v;
    return eigenvectors_ * (coeff.array() * (-t * eigenvalues_.array()).exp()).matrix();
  }
  return expm(t * q_.entries()) * v;
}

Distribution Propagator::propagate(const Distribution& p0, double t) const {
  if (t == 0.0) return p0;
  Vector p = apply(p0.probs(), t);
  const double total = p.sum();
  if (std::abs(total - 1.0) > kMassTolerance) {
    std::ostringstream msg;
    msg << "mass drift " << total - 1.0 << " at t = " << t;
    throw Error(ErrorKind::EigenFailure, msg.str());
  }
  p = p.cwiseMax(0.0);
  return Distribution(p / p.sum());
}

std::shared_ptr<const Propagator> build_propagator(const RateMatrix& q) {
  return std::make_shared<const Propagator>(q);
}

ReversedMarginals::ReversedMarginals(std::shared_ptr<const Propagator> propagator,
                                     Distribution p0, double horizon)
    : propagator_(std::move(propagator)), p0_(std::move(p0)), horizon_(horizon) {
  check_time(horizon_);
  if (p0_.size() != propagator_->rates().size()) {
    throw Error(ErrorKind::LengthMismatch, "initial law does not match the rate matrix");
  }
  if (propagator_->spectral()) {
    coefficients_ = propagator_->eigenvectors().transpose() * p0_.probs();
  }
}

Vector ReversedMarginals::forward(double t) const {
  check_time(t);
  Vector p;
  if (propagator_->spectral()) {
    p = propagator_->eigenvectors() *
        (coefficients_.array() * (-t * propagator_->eigenvalues().array()).exp()).matrix();
  } else {
    p = propagator_->apply(p0_.probs(), t);
  }
  return p.cwiseMax(0.0);
}

std::string ReversedMarginals::to_csv(std::span<const double> backward_times) const {
  std::ostringstream out;
  out.precision(17);
  out << "s,t,state,prob\n";
  for (double s : backward_times) {
    if (s < 0.0 || s > horizon_) {
      throw Error(ErrorKind::NegativeTime, "backward time outside [0, T]");
    }
    const Vector p = backward(s);
    for (Eigen::Index x = 0; x < p.size(); ++x) {
      out << s << ',' << horizon_ - s << ',' << x << ',' << p(x) << '\n';
    }
  }
  return out.str();
}

ReversedMarginals reversed_marginals(std::shared_ptr<const Propagator> propagator,
                                     const Distribution& p0, double horizon) {
  return ReversedMarginals(std::move(propagator), p0, horizon);
}

Vector score(const Vector& p, StateIndex x, bool allow_floor) {
  double denom = p(x);
  if (!(denom >= kProbabilityFloor)) {
    if (!allow_floor) {
      throw Error(ErrorKind::ZeroDenominator, "p(" + std::to_string(x) + ") is zero");
    }
    denom = kProbabilityFloor;
  }
  Vector s = p / denom;
  s(x) = 1.0;
  return s;
}

RateMatrix backward_rate_matrix(const RateMatrix& q, const Vector& p) {
  const auto n = static_cast<Eigen::Index>(q.size());
  if (p.size() != n) {
    throw Error(ErrorKind::LengthMismatch, "distribution does not match the rate matrix");
  }
  if (!(p.minCoeff() >= kProbabilityFloor)) {
    throw Error(ErrorKind::ZeroDenominator, "backward rates need a strictly positive law");
  }
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index x = 0; x < n; ++x) {
    for (Eigen::Index y = 0; y < n; ++y) {
      if (y != x) m(y, x) = p(y) / p(x) * q(static_cast<StateIndex>(x), static_cast<StateIndex>(y));
    }
  }
  m.diagonal() = -m.colwise().sum().transpose();
  return validate_rate_matrix(m);
}

KlResult kl_divergence(const Vector& p, const Vector& q, double q_floor) {
  if (p.size() != q.size()) {
    throw Error(ErrorKind::LengthMismatch, "KL arguments differ in length");
  }
  KlResult out;
  for (Eigen::Index x = 0; x < p.size(); ++x) {
    if (p(x) <= 0.0) continue;
    double qx = q(x);
    if (qx < q_floor) {
      qx = q_floor;
      out.floored = true;
    }
    if (!(qx > 0.0)) {
      throw Error(ErrorKind::SupportMismatch, "q(" + std::to_string(x) + ") = 0 where p > 0");
    }
    out.value += p(x) * std::log(p(x) / qx);
  }
  return out;
}

double tv_distance(const Vector& p, const Vector& q) {
  if (p.size() != q.size()) {
    throw Error(ErrorKind::LengthMismatch, "TV arguments differ in length");
  }
  return 0.5 * (p - q).cwiseAbs().sum();
}

nlohmann::json propagator_to_json(const Propagator& propagator) {
  nlohmann::json doc;
  doc["size"] = propagator.rates().size();
  doc["spectral"] = propagator.spectral();
  if (propagator.spectral()) {
    std::vector<double> ev(propagator.eigenvalues().data(),
                           propagator.eigenvalues().data() + propagator.eigenvalues().size());
    doc["eigenvalues"] = ev;
  }
  return doc;
}

}  // namespace ddm
