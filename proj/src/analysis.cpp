#include "ddm/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/numeric/odeint.hpp>

#include "ddm/error.hpp"
#include "ddm/prm.hpp"
#include "ddm/random.hpp"
#include "ddm/spectral.hpp"

namespace ddm {

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Independent master seed for sub-experiment `tag` of a run.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) { return splitmix64(seed ^ splitmix64(tag)); }

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& v) {
  MeanSe out;
  if (v.empty()) return out;
  const double n = static_cast<double>(v.size());
  out.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

std::shared_ptr<const ReversedMarginals> make_marginals(const ModelSpec& spec, double horizon) {
  return std::make_shared<const ReversedMarginals>(build_propagator(spec.model.rates), spec.p0, horizon);
}

// max over graph edges and a guard grid of s in [0, T - δ] of p_{T-s}(y) / p_{T-s}(x).
double max_exact_score(const RateMatrix& q, const ReversedMarginals& marginals, double delta,
                       int guard = 512) {
  const double end = marginals.horizon() - delta;
  const auto n = static_cast<Eigen::Index>(q.size());
  double best = 0.0;
  for (int g = 0; g <= guard; ++g) {
    const Vector p = marginals.backward(end * g / guard);
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        if (x == y || q.entries()(x, y) <= 0.0) continue;
        best = std::max(best, std::max(p(y), kProbabilityFloor) / std::max(p(x), kProbabilityFloor));
      }
    }
  }
  return best;
}

double tv_error_scale(std::size_t size, std::size_t n) {
  return std::sqrt(static_cast<double>(size) / static_cast<double>(n));
}

}  // namespace

bool ExperimentReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const ReportCheck& c) { return c.passed; });
}

void ExperimentReport::check(std::string name, bool ok, std::string detail) {
  checks.push_back({std::move(name), ok, std::move(detail)});
}

nlohmann::json ExperimentReport::to_json(bool include_wall_clock) const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points) {
    pts.push_back({{"param", p.param},
                   {"estimate", p.estimate},
                   {"se", p.se},
                   {"lo", p.lo},
                   {"hi", p.hi},
                   {"exact", p.exact},
                   {"extra", p.extra}});
  }
  nlohmann::json chk = nlohmann::json::array();
  for (const auto& c : checks) chk.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  nlohmann::json doc{{"kind", kind},   {"model", model}, {"param", param_name}, {"points", pts},
                     {"fits", fits},   {"checks", chk},  {"seed", seed},        {"passed", passed()}};
  if (include_wall_clock) doc["wall_clock_seconds"] = wall_clock_seconds;
  return doc;
}

std::string ExperimentReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "param,estimate,se,lo,hi\n";
  for (const auto& p : points) {
    out << p.param << "," << p.estimate << "," << p.se << "," << p.lo << "," << p.hi << "\n";
  }
  return out.str();
}

std::string ExperimentReport::plot_data() const {
  std::ostringstream out;
  out.precision(17);
  out << "# " << param_name << " estimate\n";
  for (const auto& p : points) out << p.param << " " << p.estimate << "\n";
  return out.str();
}

nlohmann::json describe(const ModelSpec& spec) {
  std::vector<double> p0(spec.p0.probs().data(), spec.p0.probs().data() + spec.p0.probs().size());
  nlohmann::json doc{{"name", spec.name}, {"size", spec.model.space.size()}, {"p0", p0}};
  if (spec.model.space.has_embedding()) {
    doc["embedding"] = {{"side", spec.model.space.side()}, {"dim", spec.model.space.dim()}};
  }
  return doc;
}

Model two_state_chain() { return hypercube_rate_matrix(1); }

std::vector<ModelSpec> model_suite() {
  std::vector<ModelSpec> suite;
  auto add = [&](std::string name, Model m) {
    const std::size_t n = m.space.size();
    suite.push_back({std::move(name), std::move(m), Distribution::point_mass(n, 0)});
  };
  add("two-state", two_state_chain());
  add("hypercube-2", hypercube_rate_matrix(2));
  add("hypercube-3", hypercube_rate_matrix(3));
  add("grid-3x3", grid_rate_matrix(3, 2));
  add("asymmetric-hypercube-2", asymmetric_hypercube_rate_matrix(2, 0.3));
  return suite;
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error(ErrorKind::LengthMismatch, "fit needs paired samples");
  if (x.size() < 2) throw Error(ErrorKind::InvalidArgument, "fit needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw Error(ErrorKind::InvalidArgument, "fit needs distinct abscissae");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    sse += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  fit.slope_se = x.size() > 2 ? std::sqrt(sse / (n - 2.0) / sxx) : 0.0;
  return fit;
}

ExperimentReport truncation_error_curve(const ModelSpec& spec, const std::vector<double>& horizons,
                                        double min_r2) {
  const auto start = Clock::now();
  const RateMatrix& q = spec.model.rates;
  const SpectralGap gap = spectral_gap(q);
  if (gap.disconnected) throw Error(ErrorKind::Disconnected, "truncation curve needs a connected chain");
  ExperimentReport report;
  report.kind = "truncation";
  report.model = describe(spec);
  report.param_name = "T";
  const auto propagator = build_propagator(q);
  const std::size_t n = q.size();
  const Vector uniform = Distribution::uniform(n).probs();

  std::vector<double> kl;
  for (double t : horizons) {
    const Vector pt = propagator->propagate(spec.p0, t).probs();
    const double value = kl_divergence(pt, uniform, 0.0).value;
    kl.push_back(value);
    ReportPoint point{t, value, 0.0, value, value, true};
    report.points.push_back(point);
  }

  report.fits["lambda2"] = gap.value;
  report.fits["two_lambda2"] = 2.0 * gap.value;
  const bool all_zero = std::all_of(kl.begin(), kl.end(), [](double v) { return v <= 1e-300; });
  if (all_zero) {
    report.fits["r_hat"] = nullptr;
    report.check("all_zero", true, "p0 is stationary; KL vanishes for every T");
    report.wall_clock_seconds = seconds_since(start);
    return report;
  }
  std::vector<double> tx;
  std::vector<double> ty;
  for (std::size_t i = horizons.size() / 2; i < horizons.size(); ++i) {
    if (kl[i] <= 0.0) continue;
    tx.push_back(horizons[i]);
    ty.push_back(std::log(kl[i]));
  }
  if (tx.size() < 2) {
    report.check("log_linear_tail", false, "fewer than two positive tail values");
    report.wall_clock_seconds = seconds_since(start);
    return report;
  }
  const LinearFit fit = fit_line(tx, ty);
  const double r_hat = -fit.slope;
  report.fits["r_hat"] = r_hat;
  report.fits["r2_tail"] = fit.r2;
  report.fits["intercept"] = fit.intercept;
  report.check("log_linear_tail", fit.r2 >= min_r2,
               "R^2 = " + fmt(fit.r2) + " (need >= " + fmt(min_r2) + ")");
  bool bounded = true;
  std::string worst;
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    const double bound = std::exp(-r_hat * horizons[i]) * std::log(static_cast<double>(n));
    if (kl[i] > bound) {
      bounded = false;
      worst = "T = " + fmt(horizons[i]) + ": KL " + fmt(kl[i]) + " > " + fmt(bound);
    }
  }
  report.check("exponential_bound", bounded, bounded ? "KL <= exp(-r T) log|X| at every T" : worst);
  report.wall_clock_seconds = seconds_since(start);
  return report;
}

EmpiricalKl empirical_terminal_kl(const std::vector<StateIndex>& samples, const Distribution& reference,
                                  double smoothing, int resamples, std::uint64_t seed) {
  const std::size_t m = reference.size();
  const auto total = static_cast<double>(samples.size());
  if (samples.empty()) throw Error(ErrorKind::InvalidArgument, "no samples");
  if (smoothing < 0.0) throw Error(ErrorKind::OutOfRange, "smoothing must be non-negative");
  std::vector<double> counts(m, 0.0);
  for (StateIndex x : samples) {
    if (x < 0 || static_cast<std::size_t>(x) >= m) throw Error(ErrorKind::OutOfRange, "sample outside space");
    counts[static_cast<std::size_t>(x)] += 1.0;
  }
  const Vector& p = reference.probs();
  auto estimate = [&](const std::vector<double>& c) {
    Vector qhat(static_cast<Eigen::Index>(m));
    const double denom = total + smoothing * static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) qhat(static_cast<Eigen::Index>(i)) = (c[i] + smoothing) / denom;
    return kl_divergence(p, qhat).value;
  };

  EmpiricalKl out;
  out.estimate = estimate(counts);
  out.undersampled = total < 100.0 * static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (p(static_cast<Eigen::Index>(i)) > 0.0 && counts[i] == 0.0) out.missing_support = true;
  }
  if (resamples <= 0) {
    out.lo = out.hi = out.estimate;
    return out;
  }
  std::vector<double> boot(static_cast<std::size_t>(resamples));
  parallel_for(boot.size(), [&](std::size_t r) {
    Philox rng = Philox::for_path(seed, r);
    std::vector<double> c(m, 0.0);
    auto remaining = static_cast<long long>(samples.size());
    double mass_left = 1.0;
    for (std::size_t i = 0; i < m && remaining > 0; ++i) {
      const double pi = counts[i] / total;
      if (i + 1 == m || mass_left <= pi) {
        c[i] = static_cast<double>(remaining);
        break;
      }
      std::binomial_distribution<long long> draw(remaining, std::clamp(pi / mass_left, 0.0, 1.0));
      const long long k = draw(rng);
      c[i] = static_cast<double>(k);
      remaining -= k;
      mass_left -= pi;
    }
    boot[r] = estimate(c);
  });
  const MeanSe ms = mean_se(boot);
  out.se = ms.se * std::sqrt(static_cast<double>(boot.size()));
  std::sort(boot.begin(), boot.end());
  auto quantile = [&](double u) {
    const double pos = u * static_cast<double>(boot.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, boot.size() - 1);
    return boot[lo] + (pos - static_cast<double>(lo)) * (boot[hi] - boot[lo]);
  };
  out.lo = quantile(0.025);
  out.hi = quantile(0.975);
  return out;
}

namespace {

// Enumerates every split of `total` firings over the targets, calling
// emit(counts, multinomial probability).
void enumerate_splits(const std::vector<double>& probs, std::size_t j, std::uint64_t remaining,
                      double weight, std::vector<std::uint64_t>& counts,
                      const std::function<void(const std::vector<std::uint64_t>&, double)>& emit) {
  if (j + 1 == probs.size()) {
    counts[j] = remaining;
    emit(counts, weight * std::pow(probs[j], static_cast<double>(remaining)) /
                     std::tgamma(static_cast<double>(remaining) + 1.0));
    return;
  }
  double term = weight;
  for (std::uint64_t c = 0; c <= remaining; ++c) {
    if (c > 0) term *= probs[j] / static_cast<double>(c);
    counts[j] = c;
    if (term == 0.0 && c > 0) break;
    enumerate_splits(probs, j + 1, remaining - c, term, counts, emit);
  }
}

}  // namespace

OracleLaw tau_leaping_exact_law(const StateSpace& space, const RateMatrix& q, const ScoreProvider& score,
                                const TimeGrid& grid, double tail_tol) {
  const std::size_t n = q.size();
  if (n > 64) throw Error(ErrorKind::TooLarge, "the tau-leaping oracle enumerates at most 64 states");
  if (space.size() != n) throw Error(ErrorKind::LengthMismatch, "space and Q sizes differ");
  OracleLaw out;
  Vector law = Vector::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n));

  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const auto slice = score.at(grid.points[k]);
    const double dt = grid.step(k);
    Vector next = Vector::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t xi = 0; xi < n; ++xi) {
      const auto x = static_cast<StateIndex>(xi);
      const double px = law(x);
      if (px == 0.0) continue;
      Vector mu = slice->row(x).cwiseProduct(q.entries().row(x).transpose());
      mu(x) = 0.0;
      const double rate = mu.sum();
      const double lambda = rate * dt;
      if (!(lambda > 0.0)) {
        next(x) += px;
        continue;
      }
      std::vector<StateIndex> targets;
      std::vector<double> probs;
      for (std::size_t y = 0; y < n; ++y) {
        if (mu(static_cast<Eigen::Index>(y)) > 0.0) {
          targets.push_back(static_cast<StateIndex>(y));
          probs.push_back(mu(static_cast<Eigen::Index>(y)) / rate);
        }
      }
      double pmf = std::exp(-lambda);
      double kept = pmf;
      next(x) += px * pmf;
      pmf *= lambda;
      kept += pmf;
      for (std::size_t j = 0; j < targets.size(); ++j) next(targets[j]) += px * pmf * probs[j];
      out.expected_collisions += px * std::max(0.0, 1.0 - std::exp(-lambda) * (1.0 + lambda));

      std::vector<std::uint64_t> local(targets.size());
      std::vector<std::uint64_t> full(n, 0);
      for (std::uint64_t fired = 2; 1.0 - kept > tail_tol && fired < 400; ++fired) {
        pmf *= lambda / static_cast<double>(fired);
        kept += pmf;
        // pmf already carries 1/fired!, so the split weight is Π p_j^c_j / c_j! times fired!.
        const double scale = pmf * std::tgamma(static_cast<double>(fired) + 1.0);
        enumerate_splits(probs, 0, fired, 1.0, local,
                         [&](const std::vector<std::uint64_t>& c, double w) {
                           const double mass = px * scale * w;
                           if (mass == 0.0) return;
                           if (space.has_embedding()) {
                             std::fill(full.begin(), full.end(), 0);
                             for (std::size_t j = 0; j < c.size(); ++j) {
                               full[static_cast<std::size_t>(targets[j])] = c[j];
                             }
                             next(resolve_lattice(space, x, full)) += mass;
                           } else {
                             std::size_t distinct = 0;
                             for (auto cj : c) distinct += cj > 0 ? 1 : 0;
                             for (std::size_t j = 0; j < c.size(); ++j) {
                               if (c[j] > 0) next(targets[j]) += mass / static_cast<double>(distinct);
                             }
                           }
                         });
      }
    }
    law = next;
  }
  out.mass = law.sum();
  out.law = law / out.mass;
  return out;
}

Vector continuous_backward_law(const RateMatrix& q, const ScoreProvider& score, double horizon,
                               double delta, const Vector& q0) {
  namespace odeint = boost::numeric::odeint;
  using State = std::vector<double>;
  const std::size_t n = q.size();
  const double end = horizon - delta;
  if (!(end > 0.0)) throw Error(ErrorKind::EmptyGrid, "delta >= T");
  State state(q0.data(), q0.data() + q0.size());
  auto system = [&](const State& v, State& dv, double s) {
    const auto slice = score.at(s);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (std::size_t x = 0; x < n; ++x) {
      if (v[x] == 0.0) continue;
      const Vector r = slice->row(static_cast<StateIndex>(x));
      double out_rate = 0.0;
      for (std::size_t y = 0; y < n; ++y) {
        const double rate = q.entries()(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
        if (y == x || rate <= 0.0) continue;
        const double mu = r(static_cast<Eigen::Index>(y)) * rate;
        dv[y] += mu * v[x];
        out_rate += mu;
      }
      dv[x] -= out_rate * v[x];
    }
  };
  std::vector<double> cuts{0.0};
  for (double b : score.breakpoints()) {
    if (b > 0.0 && b < end) cuts.push_back(b);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.push_back(end);
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    if (!(cuts[i + 1] > cuts[i])) continue;
    auto stepper = odeint::make_controlled(1e-13, 1e-12, odeint::runge_kutta_dopri5<State>());
    odeint::integrate_adaptive(stepper, system, state, cuts[i], cuts[i + 1],
                               std::min(1e-3, cuts[i + 1] - cuts[i]));
  }
  Vector out(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) out(static_cast<Eigen::Index>(i)) = std::max(0.0, state[i]);
  return out / out.sum();
}

Vector exact_backward_terminal_law(const ReversedMarginals& marginals, double delta, const Vector& q0) {
  const double horizon = marginals.horizon();
  const Vector p_delta = marginals.forward(delta);
  const Vector p_end = marginals.forward(horizon);
  const Matrix kernel = marginals.propagator().transition_kernel(horizon - delta);
  Vector weight = q0.cwiseQuotient(p_end.cwiseMax(kProbabilityFloor));
  Vector out = p_delta.cwiseProduct(kernel.transpose() * weight);
  return out / out.sum();
}

ExperimentReport discretization_sweep(const ModelSpec& spec, const DiscretizationOptions& options) {
  const auto start = Clock::now();
  const RateMatrix& q = spec.model.rates;
  const StateSpace& space = spec.model.space;
  const std::size_t n = q.size();
  const auto marginals = make_marginals(spec, options.horizon);
  const auto provider = std::make_shared<ExactScoreProvider>(marginals, options.clamp);
  const Vector p_delta = marginals->forward(options.delta);
  const Vector uniform = Distribution::uniform(n).probs();
  const bool use_oracle = n <= 64;

  ExperimentReport report;
  report.kind = "discretization";
  report.model = describe(spec);
  report.model["T"] = options.horizon;
  report.model["delta"] = options.delta;
  report.model["M"] = std::isfinite(options.clamp) ? nlohmann::json(options.clamp) : nlohmann::json(nullptr);
  report.model["grid"] = to_string(options.kind);
  report.param_name = "kappa";
  report.seed = options.seed;

  const double truncation = kl_divergence(marginals->forward(options.horizon), uniform, 0.0).value;
  const double floor_exact =
      kl_divergence(p_delta, exact_backward_terminal_law(*marginals, options.delta, uniform)).value;
  const double floor_limit =
      kl_divergence(p_delta, continuous_backward_law(q, *provider, options.horizon, options.delta, uniform))
          .value;
  report.fits["truncation_kl"] = truncation;
  report.fits["floor_exact_backward"] = floor_exact;
  report.fits["floor_kappa_to_zero"] = floor_limit;
  const double floor = floor_limit;

  std::vector<double> kappas;
  std::vector<double> kls;
  std::vector<double> kl_ses;
  std::vector<double> excess;
  std::vector<double> fractions;
  std::vector<double> fraction_ses;
  for (std::size_t i = 0; i < options.kappas.size(); ++i) {
    const double kappa = options.kappas[i];
    const TimeGrid grid =
        build_time_grid(options.horizon, options.delta, kappa, options.gamma, options.eta, options.kind);
    ReportPoint point;
    point.param = kappa;
    point.extra["N"] = grid.steps();
    double fraction = 0.0;
    double fraction_se = 0.0;
    if (use_oracle) {
      const OracleLaw oracle = tau_leaping_exact_law(space, q, *provider, grid);
      point.estimate = kl_divergence(p_delta, oracle.law).value;
      point.lo = point.hi = point.estimate;
      point.exact = true;
      point.extra["oracle_mass"] = oracle.mass;
      fraction = oracle.expected_collisions / static_cast<double>(grid.steps());
      point.extra["collisions_per_path"] = oracle.expected_collisions;
    }
    if (options.n_paths > 0) {
      const SampleSet samples =
          run_tau_leaping(space, q, *provider, grid, options.n_paths, derive_seed(options.seed, 100 + i));
      const double f = samples.collision_fraction();
      const double trials = static_cast<double>(samples.paths() * samples.steps);
      point.extra["mc_collision_fraction"] = f;
      point.extra["mc_collision_fraction_se"] = std::sqrt(f * (1.0 - f) / trials);
      point.extra["mc_collisions_per_path"] =
          static_cast<double>(samples.collisions) / static_cast<double>(samples.paths());
      if (!use_oracle) {
        const EmpiricalKl ekl = empirical_terminal_kl(samples.terminal, Distribution(p_delta), 0.5, 1000,
                                                      derive_seed(options.seed, 200 + i));
        point.estimate = ekl.estimate;
        point.se = ekl.se;
        point.lo = ekl.lo;
        point.hi = ekl.hi;
        fraction = f;
        fraction_se = std::sqrt(f * (1.0 - f) / trials);
      }
    }
    point.extra["collision_fraction"] = fraction;
    point.extra["excess"] = point.estimate - floor;
    kappas.push_back(kappa);
    kls.push_back(point.estimate);
    kl_ses.push_back(point.se);
    excess.push_back(point.estimate - floor);
    fractions.push_back(fraction);
    fraction_ses.push_back(fraction_se);
    report.points.push_back(point);
  }

  if (kappas.size() >= 2) {
    const bool positive = std::all_of(excess.begin(), excess.end(), [](double e) { return e > 0.0; });
    if (positive) {
      std::vector<double> lx;
      std::vector<double> ly;
      for (std::size_t i = 0; i < kappas.size(); ++i) {
        lx.push_back(std::log(kappas[i]));
        ly.push_back(std::log(excess[i]));
      }
      const LinearFit fit = fit_line(lx, ly);
      report.fits["kl_slope"] = fit.slope;
      report.fits["kl_slope_r2"] = fit.r2;
      report.check("kl_slope", fit.slope >= options.slope_lo && fit.slope <= options.slope_hi,
                   "log-log slope " + fmt(fit.slope) + " (need [" + fmt(options.slope_lo) + ", " +
                       fmt(options.slope_hi) + "])");
    } else {
      report.check("kl_slope", false, "excess KL over the floor is not positive at every kappa");
    }
    bool monotone = true;
    std::string where;
    for (std::size_t i = 0; i + 1 < kappas.size(); ++i) {
      const std::size_t big = kappas[i] > kappas[i + 1] ? i : i + 1;
      const std::size_t small = big == i ? i + 1 : i;
      const double slack = 3.0 * std::hypot(kl_ses[big], kl_ses[small]) + 1e-12;
      if (excess[small] > excess[big] + slack) {
        monotone = false;
        where = "kappa " + fmt(kappas[small]) + " has larger excess than " + fmt(kappas[big]);
      }
    }
    report.check("kl_monotone", monotone, monotone ? "excess KL non-increasing as kappa shrinks" : where);

    if (std::all_of(fractions.begin(), fractions.end(), [](double f) { return f > 0.0; })) {
      std::vector<double> lx;
      std::vector<double> ly;
      for (std::size_t i = 0; i < kappas.size(); ++i) {
        lx.push_back(std::log(kappas[i]));
        ly.push_back(std::log(fractions[i]));
      }
      const LinearFit fit = fit_line(lx, ly);
      report.fits["collision_slope"] = fit.slope;
      report.check("collision_rate", fit.slope >= 1.0,
                   "collision fraction log-log slope " + fmt(fit.slope) + " (need >= 1)");
    }
  }

  if (options.epsilon_paths > 0) {
    const ExactBackwardIntensity truth(q, marginals, options.delta);
    const EpsilonEstimate eps =
        estimate_epsilon_continuous(*provider, truth, options.epsilon_paths, derive_seed(options.seed, 300));
    report.fits["epsilon_hat"] = eps.value;
    report.fits["epsilon_se"] = eps.se;
    const double dbar = q.d_hi();
    // c from the excess over the κ -> 0 floor, least squares through the origin.
    double sxx = 0.0;
    double sxy = 0.0;
    std::vector<double> xs;
    for (std::size_t i = 0; i < kappas.size(); ++i) {
      const double x = kappas[i] * dbar * dbar * options.horizon;
      xs.push_back(x);
      sxx += x * x;
      sxy += x * excess[i];
    }
    const double c = std::max(0.0, sxy / sxx);
    double sse = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) sse += (excess[i] - c * xs[i]) * (excess[i] - c * xs[i]);
    const double c_se = xs.size() > 1 ? std::sqrt(sse / static_cast<double>(xs.size() - 1) / sxx) : 0.0;
    report.fits["bound_constant"] = c;
    report.fits["bound_constant_se"] = c_se;
    bool holds = true;
    std::string detail = "KL <= truncation + eps + c kappa D^2 T at every kappa";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double bound = truncation + eps.value + c * xs[i];
      const double slack = 3.0 * eps.se + 3.0 * c_se * xs[i] + 3.0 * kl_ses[i];
      report.points[i].extra["bound"] = bound;
      report.points[i].extra["bound_slack"] = slack;
      if (kls[i] > bound + slack) {
        holds = false;
        detail = "kappa " + fmt(kappas[i]) + ": KL " + fmt(kls[i]) + " > " + fmt(bound) + " + " + fmt(slack);
      }
    }
    report.check("kl_bound", holds, detail);
  }
  report.wall_clock_seconds = seconds_since(start);
  return report;
}

ExperimentReport uniformization_exactness(const ModelSpec& spec, const UniformizationOptions& options) {
  const auto start = Clock::now();
  const RateMatrix& q = spec.model.rates;
  const StateSpace& space = spec.model.space;
  const std::size_t n = q.size();
  if (!(options.delta > 0.0)) throw Error(ErrorKind::InvalidArgument, "uniformization needs delta > 0");
  const auto marginals = make_marginals(spec, options.horizon);
  const double clamp = options.clamp_headroom * max_exact_score(q, *marginals, options.delta);
  const ExactScoreProvider provider(marginals, clamp);
  const Vector p_delta = marginals->forward(options.delta);
  const double tol = tv_error_scale(n, options.n_paths);

  ExperimentReport report;
  report.kind = "uniformization-exactness";
  report.model = describe(spec);
  report.model["T"] = options.horizon;
  report.model["delta"] = options.delta;
  report.model["M"] = clamp;
  report.param_name = "blocks";
  report.seed = options.seed;
  report.fits["mc_tolerance"] = tol;

  std::vector<Vector> hists;
  for (std::size_t i = 0; i < options.blocks.size(); ++i) {
    const int b = options.blocks[i];
    const double width = (options.horizon - options.delta) / b;
    const TimeGrid blocks = build_time_grid(options.horizon, options.delta, width, 0.0, 0.0, GridKind::Uniform);
    const SampleSet samples =
        run_uniformization(space, q, provider, blocks, options.n_paths, derive_seed(options.seed, 10 + i));
    const Vector hist = samples.histogram(n);
    const double tv = tv_distance(hist, p_delta);
    ReportPoint point{static_cast<double>(b), tv, 0.5 * tol, tv, tv, false};
    point.extra["mean_events"] = samples.mean_events();
    point.extra["expected_events"] = samples.expected_events;
    report.points.push_back(point);
    report.check("tv_B" + std::to_string(b), tv <= options.tv_limit,
                 "TV " + fmt(tv) + " (limit " + fmt(options.tv_limit) + ")");
    hists.push_back(hist);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < hists.size(); ++i) {
    for (std::size_t j = i + 1; j < hists.size(); ++j) worst = std::max(worst, tv_distance(hists[i], hists[j]));
  }
  report.fits["max_pairwise_tv"] = worst;
  report.check("block_invariance", worst <= 2.0 * tol,
               "max pairwise TV " + fmt(worst) + " (limit " + fmt(2.0 * tol) + ")");

  // Independent exact simulator: thinning against the true backward intensity from uniform.
  const ExactBackwardIntensity truth(q, marginals, options.delta);
  std::vector<StateIndex> terminal(options.n_paths);
  const std::uint64_t prm_seed = derive_seed(options.seed, 99);
  parallel_for(options.n_paths, [&](std::size_t i) {
    Philox rng = Philox::for_path(prm_seed, i);
    const auto pick = static_cast<std::size_t>(rng.uniform() * static_cast<double>(n));
    const auto y0 = static_cast<StateIndex>(std::min(pick, n - 1));
    terminal[i] = simulate_path(truth, y0, options.horizon - options.delta, rng).terminal();
  });
  Vector prm_hist = Vector::Zero(static_cast<Eigen::Index>(n));
  for (StateIndex x : terminal) prm_hist(x) += 1.0;
  prm_hist /= static_cast<double>(options.n_paths);
  const double tv_prm = tv_distance(prm_hist, p_delta);
  const double tv_cross = hists.empty() ? 0.0 : tv_distance(prm_hist, hists.back());
  report.fits["prm_tv"] = tv_prm;
  report.fits["prm_vs_uniformization_tv"] = tv_cross;
  report.check("prm_agreement", tv_cross <= options.tv_limit,
               "TV(uniformization, thinning) " + fmt(tv_cross) + " (limit " + fmt(options.tv_limit) + ")");
  report.wall_clock_seconds = seconds_since(start);
  return report;
}

ExperimentReport uniformization_cost(const ModelSpec& spec, const CostOptions& options) {
  const auto start = Clock::now();
  const RateMatrix& q = spec.model.rates;
  const StateSpace& space = spec.model.space;
  const auto marginals = make_marginals(spec, options.horizon);
  const auto exact = std::make_shared<ExactScoreProvider>(marginals);

  ExperimentReport report;
  report.kind = "uniformization-cost";
  report.model = describe(spec);
  report.model["T"] = options.horizon;
  report.param_name = "log_inv_delta";
  report.seed = options.seed;

  std::vector<double> lx;
  std::vector<double> means;
  for (std::size_t i = 0; i < options.deltas.size(); ++i) {
    const double delta = options.deltas[i];
    const TimeGrid blocks = build_time_grid(options.horizon, delta, options.kappa, 1.0, 1.0, GridKind::Shrinking);
    const std::vector<double> bounds = tightened_block_bounds(q, *exact, blocks, options.headroom);
    const SampleSet tight =
        run_uniformization(space, q, *exact, blocks, options.n_paths, derive_seed(options.seed, 10 + i), bounds);

    const double clamp = options.headroom * max_exact_score(q, *marginals, delta);
    const ExactScoreProvider clamped(marginals, clamp);
    const SampleSet global =
        run_uniformization(space, q, clamped, blocks, options.n_paths, derive_seed(options.seed, 50 + i));
    const double z = global.events_se() > 0.0
                         ? (global.mean_events() - global.expected_events) / global.events_se()
                         : 0.0;

    ReportPoint point{std::log(1.0 / delta), tight.mean_events(), tight.events_se(),
                      tight.mean_events() - 1.96 * tight.events_se(),
                      tight.mean_events() + 1.96 * tight.events_se(), false};
    point.extra["delta"] = delta;
    point.extra["blocks"] = blocks.steps();
    point.extra["expected_events"] = tight.expected_events;
    point.extra["global_mean_events"] = global.mean_events();
    point.extra["global_events_se"] = global.events_se();
    point.extra["global_expected_events"] = global.expected_events;
    point.extra["global_z"] = z;
    report.points.push_back(point);
    report.check("global_mean_delta_" + fmt(delta), std::abs(z) <= 3.0,
                 "mean N " + fmt(global.mean_events()) + " vs " + fmt(global.expected_events) + " (z = " +
                     fmt(z) + ")");
    lx.push_back(point.param);
    means.push_back(point.estimate);
  }
  if (lx.size() >= 2) {
    const LinearFit fit = fit_line(lx, means);
    report.fits["slope"] = fit.slope;
    report.fits["intercept"] = fit.intercept;
    report.fits["r2"] = fit.r2;
    report.fits["d_bar"] = q.d_hi();
    report.check("affine_growth", fit.slope > 0.0 && fit.r2 >= 0.99,
                 "slope " + fmt(fit.slope) + ", R^2 " + fmt(fit.r2) + " (need slope > 0, R^2 >= 0.99)");
  }
  report.wall_clock_seconds = seconds_since(start);
  return report;
}

ExperimentReport approximation_error_experiment(const ModelSpec& spec, const ApproximationOptions& options) {
  const auto start = Clock::now();
  const RateMatrix& q = spec.model.rates;
  const StateSpace& space = spec.model.space;
  const std::size_t n = q.size();
  const auto marginals = make_marginals(spec, options.horizon);
  const auto exact = std::make_shared<ExactScoreProvider>(marginals);
  const Vector p_delta = marginals->forward(options.delta);
  const double truncation =
      kl_divergence(marginals->forward(options.horizon), Distribution::uniform(n).probs(), 0.0).value;
  const ExactBackwardIntensity truth(q, marginals, options.delta);
  const TimeGrid blocks = build_time_grid(options.horizon, options.delta,
                                          (options.horizon - options.delta) / options.blocks, 0.0, 0.0,
                                          GridKind::Uniform);

  ExperimentReport report;
  report.kind = "approximation";
  report.model = describe(spec);
  report.model["T"] = options.horizon;
  report.model["delta"] = options.delta;
  report.param_name = "c";
  report.seed = options.seed;
  report.fits["truncation_kl"] = truncation;

  std::vector<double> cs;
  std::vector<double> eps;
  for (std::size_t i = 0; i < options.factors.size(); ++i) {
    const double c = options.factors[i];
    const PerturbedScoreProvider provider(exact, [c](double, StateIndex, StateIndex) { return c; },
                                          "perturbed(" + fmt(c) + ")");
    const std::vector<double> bounds = tightened_block_bounds(q, provider, blocks);
    const SampleSet samples = run_uniformization(space, q, provider, blocks, options.n_paths,
                                                 derive_seed(options.seed, 10 + i), bounds);
    const EmpiricalKl kl = empirical_terminal_kl(samples.terminal, Distribution(p_delta), 0.5, 1000,
                                                 derive_seed(options.seed, 40 + i));
    const EpsilonEstimate e =
        estimate_epsilon_continuous(provider, truth, options.epsilon_paths, derive_seed(options.seed, 70 + i));
    const double oracle = epsilon_oracle_continuous(provider, *marginals, q, options.delta);

    ReportPoint point{c, kl.estimate, kl.se, kl.lo, kl.hi, false};
    point.extra["epsilon_hat"] = e.value;
    point.extra["epsilon_se"] = e.se;
    point.extra["epsilon_oracle"] = oracle;
    report.points.push_back(point);

    const double slack = 3.0 * std::hypot(kl.se, e.se);
    report.check("kl_bound_c" + fmt(c), kl.estimate <= e.value + truncation + slack,
                 "KL " + fmt(kl.estimate) + " <= eps " + fmt(e.value) + " + trunc " + fmt(truncation) +
                     " + " + fmt(slack));
    report.check("epsilon_oracle_c" + fmt(c), std::abs(e.value - oracle) <= 3.0 * e.se + 1e-12,
                 "eps " + fmt(e.value) + " vs oracle " + fmt(oracle) + " (se " + fmt(e.se) + ")");
    cs.push_back(c);
    eps.push_back(e.value);
  }

  std::vector<std::size_t> order(cs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cs[a] < cs[b]; });
  bool shape = true;
  std::string detail = "eps zero at c = 1, positive elsewhere, convex in c";
  for (std::size_t i : order) {
    const bool ok = cs[i] == 1.0 ? eps[i] == 0.0 : eps[i] > 0.0;
    if (!ok) {
      shape = false;
      detail = "eps(" + fmt(cs[i]) + ") = " + fmt(eps[i]);
    }
  }
  for (std::size_t k = 1; k + 1 < order.size(); ++k) {
    const std::size_t a = order[k - 1];
    const std::size_t m = order[k];
    const std::size_t b = order[k + 1];
    const double w = (cs[b] - cs[m]) / (cs[b] - cs[a]);
    if (eps[m] > w * eps[a] + (1.0 - w) * eps[b] + 1e-12) {
      shape = false;
      detail = "eps not convex at c = " + fmt(cs[m]);
    }
  }
  report.check("epsilon_shape", shape, detail);
  report.wall_clock_seconds = seconds_since(start);
  return report;
}

ExperimentReport girsanov_identity_check(const ModelSpec& spec, const GirsanovOptions& options) {
  const auto start = Clock::now();
  const RateMatrix& q = spec.model.rates;
  const std::size_t n = q.size();
  const auto base = std::make_shared<GeneratorIntensity>(q);
  const double horizon = options.horizon;

  ExperimentReport report;
  report.kind = "girsanov";
  report.model = describe(spec);
  report.param_name = "case";
  report.seed = options.seed;

  struct TiltCase {
    std::string name;
    TiltedIntensity::Tilt h;
    double h_max;
  };
  const std::vector<TiltCase> cases{
      {"identity", [](double, StateIndex, StateIndex) { return 1.0; }, 1.0},
      {"constant", [](double, StateIndex, StateIndex) { return 1.5; }, 1.5},
      {"edge", [horizon](double t, StateIndex x, StateIndex y) { return y > x ? 1.4 : 0.6 + 0.3 * t / horizon; },
       1.4},
  };
  auto uniform_start = [n](Philox& rng) {
    const auto pick = static_cast<std::size_t>(rng.uniform() * static_cast<double>(n));
    return static_cast<StateIndex>(std::min(pick, n - 1));
  };

  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const TiltCase& tilt = cases[ci];
    std::vector<double> z(options.n_paths);
    std::vector<double> fz(options.n_paths);
    std::vector<double> g(options.n_paths);
    const std::uint64_t base_seed = derive_seed(options.seed, 10 + ci);
    const std::uint64_t tilt_seed = derive_seed(options.seed, 20 + ci);
    const TiltedIntensity tilted(base, tilt.h, tilt.h_max);
    parallel_for(options.n_paths, [&](std::size_t i) {
      Philox rng = Philox::for_path(base_seed, i);
      const StateIndex x0 = uniform_start(rng);
      const JumpPath path = simulate_ctmc_forward(q, x0, horizon, rng);
      z[i] = std::exp(log_likelihood_ratio(path, *base, tilt.h));
      fz[i] = (path.terminal() == 0 ? 1.0 : 0.0) * z[i];
      Philox trng = Philox::for_path(tilt_seed, i);
      const StateIndex t0 = uniform_start(trng);
      g[i] = simulate_path(tilted, t0, horizon, trng).terminal() == 0 ? 1.0 : 0.0;
    });
    const MeanSe mz = mean_se(z);
    const MeanSe mfz = mean_se(fz);
    const MeanSe mg = mean_se(g);
    const double z_mean = mz.se > 0.0 ? (mz.mean - 1.0) / mz.se : (mz.mean == 1.0 ? 0.0 : INFINITY);
    const double denom = std::hypot(mfz.se, mg.se);
    const double z_reweight = denom > 0.0 ? (mfz.mean - mg.mean) / denom : 0.0;
    ReportPoint point{static_cast<double>(ci), z_mean, 1.0, z_mean, z_mean, false};
    point.extra["test"] = "E[Z]=1 " + tilt.name;
    point.extra["mean_Z"] = mz.mean;
    point.extra["se_Z"] = mz.se;
    point.extra["z_reweight"] = z_reweight;
    point.extra["reweighted"] = mfz.mean;
    point.extra["tilted"] = mg.mean;
    report.points.push_back(point);
    report.check("martingale_" + tilt.name, std::abs(z_mean) <= 3.0, "z = " + fmt(z_mean));
    report.check("reweight_" + tilt.name, std::abs(z_reweight) <= 3.0, "z = " + fmt(z_reweight));
  }

  // Score-entropy identity on true backward paths.
  const auto marginals = std::make_shared<const ReversedMarginals>(build_propagator(q), spec.p0,
                                                                   options.backward_horizon);
  const ExactBackwardIntensity truth(q, marginals, options.backward_delta);
  const auto exact = std::make_shared<ExactScoreProvider>(marginals);
  const Vector start_law = marginals->backward(0.0);
  for (std::size_t fi = 0; fi < options.factors.size(); ++fi) {
    const double c = options.factors[fi];
    const PerturbedScoreProvider provider(exact, [c](double, StateIndex, StateIndex) { return c; });
    const PathRatio ratio = [&](double s, StateIndex x, StateIndex y) {
      return provider.query(s, x)(y) / exact->query(s, x)(y);
    };
    std::vector<double> entropy(options.n_paths);
    std::vector<double> neg_log_z(options.n_paths);
    std::vector<double> diff(options.n_paths);
    const std::uint64_t seed = derive_seed(options.seed, 40 + fi);
    parallel_for(options.n_paths, [&](std::size_t i) {
      Philox rng = Philox::for_path(seed, i);
      const StateIndex y0 = sample_state(start_law, rng);
      const JumpPath path = simulate_backward_exact(truth, y0, rng);
      entropy[i] = path_score_entropy(path, ratio, truth);
      neg_log_z[i] = -log_likelihood_ratio(path, truth, ratio);
      diff[i] = entropy[i] - neg_log_z[i];
    });
    const MeanSe me = mean_se(entropy);
    const MeanSe ml = mean_se(neg_log_z);
    const MeanSe md = mean_se(diff);
    const bool zero_case = c == 1.0;
    double zval = 0.0;
    bool ok = true;
    std::string detail;
    if (zero_case) {
      const bool identically_zero =
          std::all_of(entropy.begin(), entropy.end(), [](double v) { return v == 0.0; }) &&
          std::all_of(neg_log_z.begin(), neg_log_z.end(), [](double v) { return v == 0.0; });
      ok = identically_zero;
      detail = identically_zero ? "both sides identically 0" : "c = 1 gave a non-zero path value";
    } else {
      zval = md.se > 0.0 ? md.mean / md.se : 0.0;
      ok = std::abs(zval) <= 3.0;
      detail = "entropy " + fmt(me.mean) + " vs -log Z " + fmt(ml.mean) + " (z = " + fmt(zval) + ")";
    }
    ReportPoint point{c, zval, 1.0, zval, zval, zero_case};
    point.extra["test"] = "score entropy identity";
    point.extra["mean_entropy"] = me.mean;
    point.extra["se_entropy"] = me.se;
    point.extra["mean_neg_log_z"] = ml.mean;
    point.extra["se_neg_log_z"] = ml.se;
    report.points.push_back(point);
    report.check("identity_c" + fmt(c), ok, detail);
  }
  report.wall_clock_seconds = seconds_since(start);
  return report;
}

}  // namespace ddm
