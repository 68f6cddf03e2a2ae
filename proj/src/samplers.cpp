#include "ddm/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ddm/error.hpp"
#include "ddm/prm.hpp"

namespace ddm {

namespace {

constexpr double kMinStep = 1e-12;
constexpr std::size_t kMaxGridSteps = 10'000'000;

double snap_tolerance(double horizon) { return 1e-12 * std::max(1.0, horizon); }

// Largest h with h <= κ min(1, (r - h)^η); the constraint function is increasing in h.
double shrinking_step(double r, double kappa, double eta) {
  if (eta == 0.0 || r - kappa >= 1.0) return kappa;
  auto excess = [&](double h) { return h - kappa * std::min(1.0, std::pow(r - h, eta)); };
  double lo = 0.0;
  double hi = std::min(r, kappa);
  if (excess(hi) <= 0.0) return hi;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * r; ++i) {
    const double mid = 0.5 * (lo + hi);
    (excess(mid) <= 0.0 ? lo : hi) = mid;
  }
  return lo;
}

Vector backward_intensity(const ScoreSlice& slice, const RateMatrix& q, StateIndex x) {
  Vector mu = slice.row(x).cwiseProduct(q.entries().row(x).transpose());
  mu(x) = 0.0;
  return mu;
}

}  // namespace

double TimeGrid::step_limit(std::size_t k) const {
  if (kind == GridKind::Uniform) return kappa;
  return kappa * std::min(1.0, std::pow(std::max(0.0, horizon - points[k + 1]), eta));
}

bool TimeGrid::satisfies_invariant() const {
  if (points.size() < 2 || points.front() != 0.0) return false;
  const double tol = snap_tolerance(horizon);
  for (std::size_t k = 0; k < steps(); ++k) {
    if (!(step(k) > 0.0)) return false;
    const bool remainder = kind == GridKind::Shrinking && delta == 0.0 && k + 1 == steps();
    if (remainder) continue;
    if (step(k) > step_limit(k) * (1.0 + 1e-9) + tol) return false;
  }
  return std::abs(points.back() - (horizon - delta)) <= tol;
}

TimeGrid build_time_grid(double horizon, double delta, double kappa, double gamma, double eta,
                         GridKind kind) {
  if (!(horizon > 0.0)) throw Error(ErrorKind::OutOfRange, "T must be positive");
  if (delta < 0.0) throw Error(ErrorKind::OutOfRange, "delta must be non-negative");
  if (delta >= horizon) throw Error(ErrorKind::EmptyGrid, "delta >= T leaves no time to sample");
  if (!(kappa > 0.0)) throw Error(ErrorKind::OutOfRange, "kappa must be positive");
  if (kind == GridKind::Shrinking && !(gamma >= 0.0 && gamma <= eta && eta <= 1.0)) {
    throw Error(ErrorKind::OutOfRange, "need 0 <= gamma <= eta <= 1");
  }

  TimeGrid grid;
  grid.kind = kind;
  grid.kappa = kappa;
  grid.gamma = gamma;
  grid.eta = eta;
  grid.delta = delta;
  grid.horizon = horizon;
  const double end = horizon - delta;
  const double tol = snap_tolerance(horizon);
  grid.points.push_back(0.0);

  if (kind == GridKind::Uniform) {
    const double count = std::ceil(end / kappa - 1e-9);
    if (count > static_cast<double>(kMaxGridSteps)) throw Error(ErrorKind::TooLarge, "grid too fine");
    for (std::size_t k = 1; static_cast<double>(k) * kappa < end - tol; ++k) {
      grid.points.push_back(static_cast<double>(k) * kappa);
    }
    grid.points.push_back(end);
    return grid;
  }

  // Remainders below tolerance are absorbed when the step still shrinks
  // sub-linearly (η < 1) or early stopping bounds the steps away from zero.
  const bool can_snap = delta > 0.0 || eta < 1.0;
  double s = 0.0;
  while (s < end) {
    const double h = shrinking_step(horizon - s, kappa, eta);
    if (h < kMinStep) {
      std::ostringstream msg;
      msg << "step " << h << " at s=" << s << "; use early stopping (delta > 0) or eta < 1";
      throw Error(ErrorKind::StepUnderflow, msg.str());
    }
    double next = s + h;
    if (next >= end || (can_snap && end - next <= tol)) next = end;
    grid.points.push_back(next);
    s = next;
    if (grid.points.size() > kMaxGridSteps) throw Error(ErrorKind::TooLarge, "grid too fine");
  }
  return grid;
}

std::string to_string(GridKind kind) { return kind == GridKind::Uniform ? "uniform" : "shrinking"; }

GridKind grid_kind_from_string(const std::string& name) {
  if (name == "uniform") return GridKind::Uniform;
  if (name == "shrinking") return GridKind::Shrinking;
  throw Error(ErrorKind::InvalidArgument, "unknown grid kind '" + name + "'");
}

nlohmann::json to_json(const TimeGrid& grid) {
  return {{"kind", to_string(grid.kind)}, {"kappa", grid.kappa}, {"gamma", grid.gamma},
          {"eta", grid.eta},              {"delta", grid.delta}, {"T", grid.horizon},
          {"N", grid.steps()},            {"points", grid.points}};
}

StateIndex resolve_lattice(const StateSpace& space, StateIndex state,
                           const std::vector<std::uint64_t>& counts) {
  const std::vector<int> origin = space.coordinates(state);
  std::vector<long long> moved(origin.begin(), origin.end());
  for (std::size_t y = 0; y < counts.size(); ++y) {
    if (counts[y] == 0) continue;
    const std::vector<int> target = space.coordinates(static_cast<StateIndex>(y));
    for (std::size_t i = 0; i < origin.size(); ++i) {
      moved[i] += static_cast<long long>(counts[y]) * (target[i] - origin[i]);
    }
  }
  std::vector<int> clipped(origin.size());
  for (std::size_t i = 0; i < origin.size(); ++i) {
    clipped[i] = static_cast<int>(std::clamp<long long>(moved[i], 0, space.side() - 1));
  }
  return space.index_of(clipped);
}

StateIndex tau_leaping_step(const StateSpace& space, StateIndex state, const Vector& intensity,
                            double dt, Philox& rng, std::uint64_t& collisions) {
  if (!(dt > 0.0)) throw Error(ErrorKind::InvalidArgument, "tau-leaping step must be positive");
  // Independent Poisson counts per target are drawn as a Poisson total split
  // multinomially, which has the same joint law.
  const double total = intensity.sum();
  if (!(total > 0.0)) return state;
  const std::uint64_t fired = rng.poisson(total * dt);
  if (fired == 0) return state;
  if (fired == 1) return sample_state(intensity, rng);

  ++collisions;
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(intensity.size()), 0);
  for (std::uint64_t i = 0; i < fired; ++i) ++counts[static_cast<std::size_t>(sample_state(intensity, rng))];

  if (space.has_embedding()) return resolve_lattice(space, state, counts);

  std::vector<StateIndex> targets;
  for (std::size_t y = 0; y < counts.size(); ++y) {
    if (counts[y] > 0) targets.push_back(static_cast<StateIndex>(y));
  }
  const auto pick = static_cast<std::size_t>(rng.uniform() * static_cast<double>(targets.size()));
  return targets[std::min(pick, targets.size() - 1)];
}

double SampleSet::collision_fraction() const {
  const double denom = static_cast<double>(paths()) * static_cast<double>(steps);
  return denom > 0.0 ? static_cast<double>(collisions) / denom : 0.0;
}

Vector SampleSet::histogram(std::size_t size) const {
  Vector h = Vector::Zero(static_cast<Eigen::Index>(size));
  for (StateIndex x : terminal) h(x) += 1.0;
  if (!terminal.empty()) h /= static_cast<double>(terminal.size());
  return h;
}

double SampleSet::mean_events() const {
  if (events.empty()) return 0.0;
  double sum = 0.0;
  for (auto e : events) sum += static_cast<double>(e);
  return sum / static_cast<double>(events.size());
}

double SampleSet::events_se() const {
  if (events.size() < 2) return 0.0;
  const double mean = mean_events();
  double ss = 0.0;
  for (auto e : events) ss += (static_cast<double>(e) - mean) * (static_cast<double>(e) - mean);
  const double n = static_cast<double>(events.size());
  return std::sqrt(ss / (n - 1.0) / n);
}

SampleSet run_tau_leaping(const StateSpace& space, const RateMatrix& q, const ScoreProvider& score,
                          const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed) {
  if (space.size() != q.size()) throw Error(ErrorKind::LengthMismatch, "space and Q sizes differ");
  if (grid.steps() == 0) throw Error(ErrorKind::EmptyGrid, "grid has no steps");
  const std::size_t n = q.size();

  std::vector<Philox> rngs;
  rngs.reserve(n_paths);
  SampleSet out;
  out.steps = grid.steps();
  out.terminal.resize(n_paths);
  for (std::size_t i = 0; i < n_paths; ++i) {
    rngs.push_back(Philox::for_path(seed, i));
    const auto pick = static_cast<std::size_t>(rngs[i].uniform() * static_cast<double>(n));
    out.terminal[i] = static_cast<StateIndex>(std::min(pick, n - 1));
  }
  std::vector<std::uint64_t> collisions(n_paths, 0);
  std::vector<std::uint64_t> jumps(n_paths, 0);

  std::vector<Vector> intensity(n);
  std::vector<char> occupied(n);
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const auto slice = score.at(grid.points[k]);
    std::fill(occupied.begin(), occupied.end(), 0);
    for (StateIndex x : out.terminal) occupied[static_cast<std::size_t>(x)] = 1;
    for (std::size_t x = 0; x < n; ++x) {
      if (occupied[x]) intensity[x] = backward_intensity(*slice, q, static_cast<StateIndex>(x));
    }
    const double dt = grid.step(k);
    parallel_for(n_paths, [&](std::size_t i) {
      const StateIndex before = out.terminal[i];
      const StateIndex after = tau_leaping_step(space, before, intensity[static_cast<std::size_t>(before)],
                                                dt, rngs[i], collisions[i]);
      if (after != before) ++jumps[i];
      out.terminal[i] = after;
    });
  }
  for (std::size_t i = 0; i < n_paths; ++i) {
    out.collisions += collisions[i];
    out.total_jumps += jumps[i];
  }
  return out;
}

double intensity_upper_bound(double clamp, const RateMatrix& q) {
  if (!(clamp > 0.0)) throw Error(ErrorKind::InvalidArgument, "score clamp must be positive");
  return clamp * q.d_hi();
}

std::vector<double> tightened_block_bounds(const RateMatrix& q, const ScoreProvider& score,
                                           const TimeGrid& blocks, double headroom, int guard_points) {
  const auto n = static_cast<StateIndex>(q.size());
  std::vector<double> bounds(blocks.steps(), 0.0);
  for (std::size_t b = 0; b < blocks.steps(); ++b) {
    for (int g = 0; g <= guard_points; ++g) {
      const double s = blocks.points[b] + blocks.step(b) * g / guard_points;
      const auto slice = score.at(s);
      for (StateIndex x = 0; x < n; ++x) {
        bounds[b] = std::max(bounds[b], backward_intensity(*slice, q, x).sum());
      }
    }
    bounds[b] *= headroom;
  }
  return bounds;
}

SampleSet run_uniformization(const StateSpace& space, const RateMatrix& q, const ScoreProvider& score,
                             const TimeGrid& blocks, std::size_t n_paths, std::uint64_t seed,
                             const std::vector<double>& block_bounds) {
  if (space.size() != q.size()) throw Error(ErrorKind::LengthMismatch, "space and Q sizes differ");
  if (blocks.steps() == 0) throw Error(ErrorKind::EmptyGrid, "no blocks");
  std::vector<double> bounds = block_bounds;
  if (bounds.empty()) {
    if (!std::isfinite(score.clamp())) {
      throw Error(ErrorKind::InvalidArgument, "an unclamped score needs explicit block bounds");
    }
    bounds.assign(blocks.steps(), intensity_upper_bound(score.clamp(), q));
  }
  if (bounds.size() != blocks.steps()) {
    throw Error(ErrorKind::LengthMismatch, "one bound per block is required");
  }
  const std::size_t n = q.size();

  SampleSet out;
  out.steps = blocks.steps();
  out.terminal.resize(n_paths);
  out.events.resize(n_paths);
  for (std::size_t b = 0; b < blocks.steps(); ++b) out.expected_events += bounds[b] * blocks.step(b);
  std::vector<std::uint64_t> jumps(n_paths, 0);

  parallel_for(n_paths, [&](std::size_t i) {
    Philox rng = Philox::for_path(seed, i);
    const auto pick = static_cast<std::size_t>(rng.uniform() * static_cast<double>(n));
    StateIndex x = static_cast<StateIndex>(std::min(pick, n - 1));
    std::vector<double> times;
    for (std::size_t b = 0; b < blocks.steps(); ++b) {
      const double lambda = bounds[b];
      const double start = blocks.points[b];
      const double width = blocks.step(b);
      const std::uint64_t count = rng.poisson(lambda * width);
      out.events[i] += count;
      times.resize(count);
      for (auto& t : times) t = start + width * rng.uniform();
      std::sort(times.begin(), times.end());
      for (double t : times) {
        const Vector mu = backward_intensity(*score.at(t), q, x);
        const double total = mu.sum();
        if (total > lambda * (1.0 + 1e-9)) {
          std::ostringstream msg;
          msg << "intensity " << total << " exceeds block bound " << lambda << " at s=" << t;
          throw Error(ErrorKind::BoundViolated, msg.str());
        }
        if (rng.uniform() * lambda < total) {
          const StateIndex y = sample_state(mu, rng);
          if (y != x) ++jumps[i];
          x = y;
        }
      }
    }
    out.terminal[i] = x;
  });
  for (auto j : jumps) out.total_jumps += j;
  return out;
}

std::string samples_to_csv(const SampleSet& samples) {
  std::ostringstream out;
  out << "path_id,terminal_state\n";
  for (std::size_t i = 0; i < samples.terminal.size(); ++i) out << i << "," << samples.terminal[i] << "\n";
  return out.str();
}

nlohmann::json diagnostics_to_json(const SampleSet& samples) {
  nlohmann::json doc{{"paths", samples.paths()},
                     {"steps", samples.steps},
                     {"collision_count", samples.collisions},
                     {"collision_fraction", samples.collision_fraction()},
                     {"total_jumps", samples.total_jumps}};
  if (!samples.events.empty()) {
    doc["realized_N"] = {{"mean", samples.mean_events()},
                         {"se", samples.events_se()},
                         {"expected", samples.expected_events}};
  }
  return doc;
}

}  // namespace ddm
