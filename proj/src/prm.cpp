#include "ddm/prm.hpp"

#include <algorithm>
#include <sstream>

#include "ddm/error.hpp"
#include "ddm/quadrature.hpp"

namespace ddm {

namespace {

constexpr int kUniformWindows = 32;
constexpr int kGuardPoints = 16;
constexpr int kMaxHeadroomRetries = 3;

StateIndex categorical(const Vector& weights, double total, Philox& rng) {
  const double target = rng.uniform() * total;
  double acc = 0.0;
  StateIndex last = -1;
  for (Eigen::Index y = 0; y < weights.size(); ++y) {
    if (weights(y) <= 0.0) continue;
    acc += weights(y);
    last = static_cast<StateIndex>(y);
    if (target < acc) return last;
  }
  return last;
}

void check_state(StateIndex x, std::size_t n) {
  if (x < 0 || static_cast<std::size_t>(x) >= n) {
    throw Error(ErrorKind::OutOfRange, "state " + std::to_string(x) + " outside [0, " +
                                           std::to_string(n) + ")");
  }
}

std::vector<double> merged_breakpoints(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

StateIndex JumpPath::state_at(double t) const {
  StateIndex x = x0;
  for (const auto& e : events) {
    if (e.time > t) break;
    x = e.state;
  }
  return x;
}

StateIndex JumpPath::state_before(double t) const {
  StateIndex x = x0;
  for (const auto& e : events) {
    if (e.time >= t) break;
    x = e.state;
  }
  return x;
}

bool JumpPath::valid() const {
  double prev = 0.0;
  StateIndex x = x0;
  for (const auto& e : events) {
    if (!(e.time > prev) || e.time > horizon || e.state == x) return false;
    prev = e.time;
    x = e.state;
  }
  return true;
}

std::string to_csv(const JumpPath& path) {
  std::ostringstream out;
  out.precision(17);
  out << "# x0=" << path.x0 << ",T=" << path.horizon << "\n";
  out << "time,state\n";
  for (const auto& e : path.events) out << e.time << "," << e.state << "\n";
  return out.str();
}

StateIndex sample_state(const Vector& weights, Philox& rng) {
  return categorical(weights, weights.sum(), rng);
}

GeneratorIntensity::GeneratorIntensity(RateMatrix q) : q_(std::move(q)), off_(off_diagonal(q_)) {}

Vector GeneratorIntensity::rates(double, StateIndex state) const { return off_.col(state); }

double GeneratorIntensity::total(double, StateIndex state) const { return q_.exit_rate(state); }

IntensityBound GeneratorIntensity::upper_bound(double, StateIndex state, double horizon) const {
  return {q_.exit_rate(state), horizon};
}

ExactBackwardIntensity::ExactBackwardIntensity(RateMatrix q,
                                               std::shared_ptr<const ReversedMarginals> marginals,
                                               double delta, double headroom)
    : q_(std::move(q)), marginals_(std::move(marginals)), delta_(delta), headroom_(headroom) {
  const double horizon = marginals_->horizon();
  if (!(delta >= 0.0) || !(delta < horizon)) {
    throw Error(ErrorKind::InvalidArgument, "early-stopping time must lie in [0, T)");
  }
  if (!(headroom >= 1.0)) throw Error(ErrorKind::InvalidArgument, "headroom must be >= 1");
  const double end = horizon - delta;

  std::vector<double> cuts;
  for (int k = 1; k <= kUniformWindows; ++k) cuts.push_back(end * k / kUniformWindows);
  // Scores change fastest as s -> T; add cuts at T - δ 2^k (or T - 2^-k when δ = 0).
  const double base = delta > 0.0 ? delta : end / 1024.0;
  for (double gap = 2.0 * base; horizon - gap > 0.0 && gap < end; gap *= 2.0) {
    cuts.push_back(horizon - gap);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end(),
                         [end](double a, double b) { return std::abs(a - b) <= 1e-12 * end; }),
             cuts.end());
  window_ends_ = cuts;

  const std::size_t n = q_.size();
  const Matrix off = off_diagonal(q_);
  window_bounds_.assign(window_ends_.size() * n, 0.0);
  double start = 0.0;
  for (std::size_t w = 0; w < window_ends_.size(); ++w) {
    const double stop = window_ends_[w];
    for (int g = 0; g <= kGuardPoints; ++g) {
      const double s = start + (stop - start) * g / kGuardPoints;
      const Vector p = marginals_->backward(s).cwiseMax(kProbabilityFloor);
      // total(s, x) = Σ_y p(y) Q(x, y) / p(x)
      const Vector totals = (off * p).cwiseQuotient(p);
      for (std::size_t x = 0; x < n; ++x) {
        double& b = window_bounds_[w * n + x];
        b = std::max(b, totals(static_cast<Eigen::Index>(x)));
      }
    }
    for (std::size_t x = 0; x < n; ++x) window_bounds_[w * n + x] *= headroom_;
    start = stop;
  }
}

double ExactBackwardIntensity::score(double s, StateIndex x, StateIndex y) const {
  const Vector p = marginals_->backward(s);
  return p(y) / std::max(p(x), kProbabilityFloor);
}

Vector ExactBackwardIntensity::rates(double s, StateIndex state) const {
  const Vector p = marginals_->backward(s);
  const double denom = std::max(p(state), kProbabilityFloor);
  Vector out = q_.entries().row(state).transpose().cwiseProduct(p) / denom;
  out(state) = 0.0;
  return out;
}

IntensityBound ExactBackwardIntensity::upper_bound(double s, StateIndex state, double horizon) const {
  const std::size_t n = q_.size();
  auto it = std::upper_bound(window_ends_.begin(), window_ends_.end(), s);
  if (it == window_ends_.end()) --it;
  const auto w = static_cast<std::size_t>(it - window_ends_.begin());
  const double until = *it <= s ? horizon : std::min(*it, horizon);
  return {window_bounds_[w * n + static_cast<std::size_t>(state)], until};
}

TiltedIntensity::TiltedIntensity(std::shared_ptr<const EvolvingIntensity> base, Tilt h, double h_max)
    : base_(std::move(base)), h_(std::move(h)), h_max_(h_max) {
  if (!(h_max > 0.0)) throw Error(ErrorKind::NonPositiveRatio, "tilt bound must be positive");
}

Vector TiltedIntensity::rates(double t, StateIndex state) const {
  Vector r = base_->rates(t, state);
  for (Eigen::Index y = 0; y < r.size(); ++y) {
    if (r(y) > 0.0) r(y) *= h_(t, state, static_cast<StateIndex>(y));
  }
  return r;
}

IntensityBound TiltedIntensity::upper_bound(double t, StateIndex state, double horizon) const {
  IntensityBound b = base_->upper_bound(t, state, horizon);
  b.rate *= h_max_;
  return b;
}

JumpPath simulate_ctmc_forward(const RateMatrix& q, StateIndex x0, double horizon, Philox& rng) {
  if (horizon < 0.0) throw Error(ErrorKind::NegativeTime, "horizon must be non-negative");
  check_state(x0, q.size());
  JumpPath path{x0, {}, horizon};
  const Matrix off = off_diagonal(q);
  StateIndex x = x0;
  double t = 0.0;
  for (;;) {
    const double rate = q.exit_rate(x);
    if (rate <= 0.0) break;
    t += rng.exponential(rate);
    if (t > horizon) break;
    x = categorical(off.col(x), rate, rng);
    path.events.push_back({t, x});
  }
  return path;
}

std::optional<JumpEvent> sample_next_jump(const EvolvingIntensity& intensity, double t0,
                                          StateIndex state, double horizon, Philox& rng) {
  double t = t0;
  while (t < horizon) {
    const IntensityBound bound = intensity.upper_bound(t, state, horizon);
    const double until = bound.valid_until > t ? std::min(bound.valid_until, horizon) : horizon;
    if (!(bound.rate > 0.0)) {
      t = until;
      continue;
    }
    const double candidate = t + rng.exponential(bound.rate);
    if (candidate > until) {
      t = until;
      continue;
    }
    const Vector r = intensity.rates(candidate, state);
    const double total = r.sum();
    if (total > bound.rate * (1.0 + 1e-12)) {
      std::ostringstream msg;
      msg << "intensity " << total << " exceeds bound " << bound.rate << " at t=" << candidate;
      throw Error(ErrorKind::BoundViolated, msg.str());
    }
    if (rng.uniform() * bound.rate < total) {
      return JumpEvent{candidate, categorical(r, total, rng)};
    }
    t = candidate;
  }
  return std::nullopt;
}

JumpPath simulate_path(const EvolvingIntensity& intensity, StateIndex x0, double horizon, Philox& rng) {
  if (horizon < 0.0) throw Error(ErrorKind::NegativeTime, "horizon must be non-negative");
  JumpPath path{x0, {}, horizon};
  StateIndex x = x0;
  double t = 0.0;
  while (auto jump = sample_next_jump(intensity, t, x, horizon, rng)) {
    path.events.push_back(*jump);
    t = jump->time;
    x = jump->state;
  }
  return path;
}

JumpPath simulate_backward_exact(const ExactBackwardIntensity& intensity, StateIndex y0, Philox& rng) {
  check_state(y0, intensity.rates_matrix().size());
  const double horizon = intensity.marginals().horizon() - intensity.delta();
  try {
    return simulate_path(intensity, y0, horizon, rng);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::BoundViolated) throw;
  }
  double headroom = intensity.headroom();
  for (int attempt = 1; attempt <= kMaxHeadroomRetries; ++attempt) {
    headroom *= 2.0;
    ExactBackwardIntensity wider(intensity.rates_matrix(), intensity.marginals_ptr(),
                                 intensity.delta(), headroom);
    try {
      return simulate_path(wider, y0, horizon, rng);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::BoundViolated || attempt == kMaxHeadroomRetries) throw;
    }
  }
  throw Error(ErrorKind::BoundViolated, "backward intensity bound retries exhausted");
}

JumpPath simulate_backward_exact(const RateMatrix& q,
                                 std::shared_ptr<const ReversedMarginals> marginals, StateIndex y0,
                                 double delta, Philox& rng) {
  const ExactBackwardIntensity intensity(q, std::move(marginals), delta);
  return simulate_backward_exact(intensity, y0, rng);
}

double log_likelihood_ratio(const JumpPath& path, const EvolvingIntensity& base, const PathRatio& h,
                            double tol, std::span<const double> extra_breakpoints) {
  const std::vector<double> cuts = merged_breakpoints(base.breakpoints(), extra_breakpoints);
  double jumps = 0.0;
  double compensator = 0.0;
  StateIndex x = path.x0;
  double start = 0.0;
  auto segment = [&](double a, double b, StateIndex state) {
    auto integrand = [&](double t) {
      const Vector r = base.rates(t, state);
      double sum = 0.0;
      for (Eigen::Index y = 0; y < r.size(); ++y) {
        if (r(y) > 0.0) sum += (h(t, state, static_cast<StateIndex>(y)) - 1.0) * r(y);
      }
      return sum;
    };
    return integrate_piecewise(integrand, a, b, cuts, tol);
  };
  for (const auto& e : path.events) {
    const double ratio = h(e.time, x, e.state);
    if (!(ratio > 0.0)) {
      throw Error(ErrorKind::NonPositiveRatio, "tilt must be positive at every jump");
    }
    jumps += std::log(ratio);
    compensator += segment(start, e.time, x);
    start = e.time;
    x = e.state;
  }
  compensator += segment(start, path.horizon, x);
  return jumps - compensator;
}

double path_score_entropy(const JumpPath& path, const PathRatio& ratio, const EvolvingIntensity& mu,
                          double tol, std::span<const double> extra_breakpoints) {
  const std::vector<double> cuts = merged_breakpoints(mu.breakpoints(), extra_breakpoints);
  double total = 0.0;
  StateIndex x = path.x0;
  double start = 0.0;
  auto segment = [&](double a, double b, StateIndex state) {
    auto integrand = [&](double t) {
      const Vector r = mu.rates(t, state);
      double sum = 0.0;
      for (Eigen::Index y = 0; y < r.size(); ++y) {
        if (r(y) <= 0.0) continue;
        const double v = ratio(t, state, static_cast<StateIndex>(y));
        if (!(v > 0.0)) throw Error(ErrorKind::NonPositiveRatio, "ratio must be positive");
        sum += k_function(v) * r(y);
      }
      return sum;
    };
    return integrate_piecewise(integrand, a, b, cuts, tol);
  };
  for (const auto& e : path.events) {
    total += segment(start, e.time, x);
    start = e.time;
    x = e.state;
  }
  total += segment(start, path.horizon, x);
  return total;
}

}  // namespace ddm
