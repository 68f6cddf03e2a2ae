#include "ddm/score.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ddm/error.hpp"
#include "ddm/quadrature.hpp"
#include "ddm/random.hpp"

namespace ddm {

namespace {

class ExactSlice final : public ScoreSlice {
 public:
  ExactSlice(Vector p, double clamp) : p_(std::move(p)), clamp_(clamp) {}
  Vector row(StateIndex x) const override {
    const double denom = p_(x);
    if (!(denom > 0.0)) {
      throw Error(ErrorKind::ZeroDenominator, "p(" + std::to_string(x) + ") is zero");
    }
    Vector out(p_.size());
    for (Eigen::Index y = 0; y < p_.size(); ++y) {
      out(y) = std::min(clamp_, std::max(p_(y), kProbabilityFloor) / denom);
    }
    out(x) = 1.0;
    return out;
  }

 private:
  Vector p_;
  double clamp_;
};

class PerturbedSlice final : public ScoreSlice {
 public:
  PerturbedSlice(std::unique_ptr<const ScoreSlice> base, const PerturbedScoreProvider::Factor& factor,
                 double s, double clamp)
      : base_(std::move(base)), factor_(factor), s_(s), clamp_(clamp) {}
  Vector row(StateIndex x) const override {
    Vector out = base_->row(x);
    for (Eigen::Index y = 0; y < out.size(); ++y) {
      if (y == x) continue;
      out(y) = std::min(clamp_, out(y) * factor_(s_, x, static_cast<StateIndex>(y)));
    }
    return out;
  }

 private:
  std::unique_ptr<const ScoreSlice> base_;
  const PerturbedScoreProvider::Factor& factor_;
  double s_;
  double clamp_;
};

class TabularSlice final : public ScoreSlice {
 public:
  TabularSlice(const Matrix& theta, double clamp) : theta_(theta), clamp_(clamp) {}
  Vector row(StateIndex x) const override {
    Vector out = theta_.col(x).array().exp().min(clamp_).matrix();
    out(x) = 1.0;
    return out;
  }

 private:
  const Matrix& theta_;
  double clamp_;
};

Matrix edge_mask(const RateMatrix& q) {
  const auto n = static_cast<Eigen::Index>(q.size());
  Matrix mask = Matrix::Zero(n, n);
  for (Eigen::Index x = 0; x < n; ++x) {
    for (Eigen::Index y = 0; y < n; ++y) {
      if (x != y && q.entries()(x, y) > 0.0) mask(y, x) = 1.0;
    }
  }
  return mask;
}

double psi_at(const LossOptions& options, std::size_t k) {
  if (options.psi.empty()) return 1.0;
  if (options.psi.size() != options.times.size()) {
    throw Error(ErrorKind::LengthMismatch, "psi must have one weight per loss time");
  }
  return options.psi[k];
}

// Minimum over ŝ of Σ_x Σ_y Q(x,y) (p(x) ŝ - p(y) log ŝ), attained at ŝ = p(y)/p(x).
double loss_minimum(const Vector& p, const RateMatrix& q) {
  const auto n = static_cast<Eigen::Index>(q.size());
  double total = 0.0;
  for (Eigen::Index x = 0; x < n; ++x) {
    const double px = std::max(p(x), kProbabilityFloor);
    for (Eigen::Index y = 0; y < n; ++y) {
      const double rate = q.entries()(x, y);
      if (y == x || rate <= 0.0 || p(y) <= 0.0) continue;
      total += rate * (p(y) - p(y) * std::log(p(y) / px));
    }
  }
  return total;
}

double exact_loss_at(const Matrix& theta, const Vector& p, const RateMatrix& q) {
  const auto n = static_cast<Eigen::Index>(q.size());
  double total = 0.0;
  for (Eigen::Index x = 0; x < n; ++x) {
    for (Eigen::Index y = 0; y < n; ++y) {
      const double rate = q.entries()(x, y);
      if (y == x || rate <= 0.0) continue;
      const double th = theta(y, x);
      total += rate * (p(x) * std::exp(th) - p(y) * th);
    }
  }
  return total;
}

struct McTerm {
  double mean = 0.0;
  double se = 0.0;
};

McTerm mc_loss_at(const Matrix& theta, const RateMatrix& q, const ReversedMarginals& marginals, double t,
                  std::size_t n_mc, std::uint64_t seed, std::uint64_t stream) {
  const Matrix kernel = marginals.propagator().transition_kernel(t);
  const Vector& p0 = marginals.initial().probs();
  const auto n = static_cast<Eigen::Index>(q.size());
  Philox rng = Philox::for_path(seed, stream);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < n_mc; ++i) {
    const StateIndex x0 = sample_state(p0, rng);
    const StateIndex x = sample_state(kernel.col(x0), rng);
    const double kx = kernel(x, x0);
    double term = 0.0;
    for (Eigen::Index y = 0; y < n; ++y) {
      const double rate = q.entries()(x, y);
      if (y == x || rate <= 0.0) continue;
      const double th = theta(y, x);
      term += rate * (std::exp(th) - kernel(y, x0) / kx * th);
    }
    sum += term;
    sum_sq += term * term;
  }
  const double count = static_cast<double>(n_mc);
  const double mean = sum / count;
  const double var = std::max(0.0, sum_sq / count - mean * mean);
  return {mean, std::sqrt(var / std::max(1.0, count - 1.0))};
}

void check_times(const LossOptions& options, double horizon) {
  if (options.times.empty()) throw Error(ErrorKind::EmptyGrid, "no loss times");
  for (double s : options.times) {
    if (s < 0.0 || s >= horizon) {
      throw Error(ErrorKind::OutOfRange, "loss times must lie in [0, T)");
    }
  }
}

}  // namespace

ExactScoreProvider::ExactScoreProvider(std::shared_ptr<const ReversedMarginals> marginals, double clamp)
    : marginals_(std::move(marginals)), clamp_(clamp) {
  if (!(clamp > 0.0)) throw Error(ErrorKind::NonPositiveScore, "score clamp must be positive");
}

std::unique_ptr<const ScoreSlice> ExactScoreProvider::at(double s) const {
  return std::make_unique<ExactSlice>(marginals_->backward(s), clamp_);
}

PerturbedScoreProvider::PerturbedScoreProvider(std::shared_ptr<const ScoreProvider> base, Factor factor,
                                               std::string description)
    : base_(std::move(base)), factor_(std::move(factor)), description_(std::move(description)) {}

std::unique_ptr<const ScoreSlice> PerturbedScoreProvider::at(double s) const {
  return std::make_unique<PerturbedSlice>(base_->at(s), factor_, s, base_->clamp());
}

TabularScore::TabularScore(RateMatrix q, std::vector<double> times, double clamp)
    : q_(std::move(q)), times_(std::move(times)), clamp_(clamp), mask_(edge_mask(q_)) {
  if (times_.empty()) throw Error(ErrorKind::EmptyGrid, "tabular score needs at least one time");
  if (!std::is_sorted(times_.begin(), times_.end())) {
    throw Error(ErrorKind::InvalidArgument, "tabular score times must be increasing");
  }
  if (!(clamp > 0.0)) throw Error(ErrorKind::NonPositiveScore, "score clamp must be positive");
  const auto n = static_cast<Eigen::Index>(q_.size());
  theta_.assign(times_.size(), Matrix::Zero(n, n));
}

void TabularScore::set_theta(std::vector<Matrix> theta) {
  if (theta.size() != times_.size()) {
    throw Error(ErrorKind::LengthMismatch, "one θ matrix per time is required");
  }
  for (auto& th : theta) {
    if (th.rows() != mask_.rows() || th.cols() != mask_.cols()) {
      throw Error(ErrorKind::LengthMismatch, "θ matrix has the wrong shape");
    }
    if (!th.allFinite()) throw Error(ErrorKind::Diverged, "θ has non-finite entries");
    th = th.cwiseProduct(mask_);
  }
  theta_ = std::move(theta);
}

std::size_t TabularScore::slab(double s) const {
  const auto it = std::upper_bound(times_.begin(), times_.end(), s);
  return it == times_.begin() ? 0 : static_cast<std::size_t>(it - times_.begin()) - 1;
}

std::unique_ptr<const ScoreSlice> TabularScore::at(double s) const {
  return std::make_unique<TabularSlice>(theta_[slab(s)], clamp_);
}

nlohmann::json to_json(const TabularScore& score) {
  nlohmann::json edges = nlohmann::json::array();
  const auto n = static_cast<Eigen::Index>(score.rates().size());
  for (std::size_t k = 0; k < score.times().size(); ++k) {
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        if (x == y || score.rates().entries()(x, y) <= 0.0) continue;
        edges.push_back({{"k", k}, {"x", x}, {"y", y}, {"theta", score.theta()[k](y, x)}});
      }
    }
  }
  nlohmann::json doc;
  doc["times"] = score.times();
  doc["M"] = std::isfinite(score.clamp()) ? nlohmann::json(score.clamp()) : nlohmann::json(nullptr);
  doc["edges"] = std::move(edges);
  return doc;
}

TabularScore tabular_score_from_json(const RateMatrix& q, const nlohmann::json& doc) {
  const double clamp = doc.at("M").is_null() ? kNoClamp : doc.at("M").get<double>();
  TabularScore score(q, doc.at("times").get<std::vector<double>>(), clamp);
  std::vector<Matrix> theta = score.theta();
  const auto n = static_cast<int>(q.size());
  for (const auto& e : doc.at("edges")) {
    const auto k = e.at("k").get<std::size_t>();
    const int x = e.at("x").get<int>();
    const int y = e.at("y").get<int>();
    if (k >= theta.size() || x < 0 || x >= n || y < 0 || y >= n) {
      throw Error(ErrorKind::OutOfRange, "tabular edge index outside the table");
    }
    theta[k](y, x) = e.at("theta").get<double>();
  }
  score.set_theta(std::move(theta));
  return score;
}

LossValue score_entropy_loss(const std::vector<Matrix>& theta, const RateMatrix& q,
                             const ReversedMarginals& marginals, const LossOptions& options) {
  check_times(options, marginals.horizon());
  if (theta.size() != options.times.size()) {
    throw Error(ErrorKind::LengthMismatch, "one θ matrix per loss time is required");
  }
  LossValue out;
  double var = 0.0;
  for (std::size_t k = 0; k < options.times.size(); ++k) {
    const double psi = psi_at(options, k);
    const Vector p = marginals.backward(options.times[k]);
    out.minimum += psi * loss_minimum(p, q);
    if (options.exact) {
      out.value += psi * exact_loss_at(theta[k], p, q);
    } else {
      const McTerm term = mc_loss_at(theta[k], q, marginals, marginals.horizon() - options.times[k],
                                     options.n_mc, options.seed, k);
      out.value += psi * term.mean;
      var += psi * psi * term.se * term.se;
    }
  }
  out.se = std::sqrt(var);
  out.excess = out.value - out.minimum;
  return out;
}

LossValue score_entropy_loss(const ScoreProvider& provider, const RateMatrix& q,
                             const ReversedMarginals& marginals, const LossOptions& options) {
  const auto n = static_cast<Eigen::Index>(q.size());
  std::vector<Matrix> theta;
  theta.reserve(options.times.size());
  for (double s : options.times) {
    const auto slice = provider.at(s);
    Matrix th = Matrix::Zero(n, n);
    for (Eigen::Index x = 0; x < n; ++x) {
      const Vector r = slice->row(static_cast<StateIndex>(x));
      for (Eigen::Index y = 0; y < n; ++y) {
        if (y == x || q.entries()(x, y) <= 0.0) continue;
        if (!(r(y) > 0.0)) {
          throw Error(ErrorKind::NonPositiveScore, "score estimate must be positive on graph edges");
        }
        th(y, x) = std::log(r(y));
      }
    }
    theta.push_back(std::move(th));
  }
  return score_entropy_loss(theta, q, marginals, options);
}

std::vector<Matrix> loss_gradient(const std::vector<Matrix>& theta, const RateMatrix& q,
                                  const ReversedMarginals& marginals, const LossOptions& options) {
  check_times(options, marginals.horizon());
  if (theta.size() != options.times.size()) {
    throw Error(ErrorKind::LengthMismatch, "one θ matrix per loss time is required");
  }
  const auto n = static_cast<Eigen::Index>(q.size());
  std::vector<Matrix> grad;
  grad.reserve(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double psi = psi_at(options, k);
    const Vector p = marginals.backward(options.times[k]);
    Matrix g = Matrix::Zero(n, n);
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        const double rate = q.entries()(x, y);
        if (y == x || rate <= 0.0) continue;
        g(y, x) = psi * rate * (p(x) * std::exp(theta[k](y, x)) - p(y));
      }
    }
    grad.push_back(std::move(g));
  }
  return grad;
}

TrainResult train_tabular_score(const RateMatrix& q, const ReversedMarginals& marginals,
                                const LossOptions& loss, const TrainOptions& options) {
  LossOptions exact = loss;
  exact.exact = true;
  check_times(exact, marginals.horizon());
  TrainResult result;
  result.score = std::make_shared<TabularScore>(q, exact.times, options.clamp);
  std::vector<Matrix> theta = result.score->theta();
  std::vector<Matrix> velocity(theta.size(), Matrix::Zero(theta[0].rows(), theta[0].cols()));

  auto evaluate = [&](const std::vector<Matrix>& th) {
    const double v = score_entropy_loss(th, q, marginals, exact).value;
    if (!std::isfinite(v)) throw Error(ErrorKind::Diverged, "loss became non-finite");
    return v;
  };

  double current = evaluate(theta);
  result.loss_trace.push_back(current);
  for (int it = 1; it <= options.iterations; ++it) {
    const std::vector<Matrix> grad = loss_gradient(theta, q, marginals, exact);
    double sup = 0.0;
    for (const auto& g : grad) sup = std::max(sup, g.cwiseAbs().maxCoeff());
    if (sup < options.gradient_tolerance) break;

    double step = options.learning_rate;
    bool accepted = false;
    std::vector<Matrix> trial(theta.size());
    std::vector<Matrix> trial_velocity(theta.size());
    for (int h = 0; h <= options.max_halvings; ++h) {
      // Momentum is dropped once the step has had to be cut back.
      const double beta = h == 0 ? options.momentum : 0.0;
      for (std::size_t k = 0; k < theta.size(); ++k) {
        trial_velocity[k] = beta * velocity[k] - step * grad[k];
        trial[k] = theta[k] + trial_velocity[k];
      }
      double candidate = 0.0;
      try {
        candidate = evaluate(trial);
      } catch (const Error&) {
        candidate = std::numeric_limits<double>::infinity();
      }
      if (candidate <= current) {
        current = candidate;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    theta.swap(trial);
    velocity.swap(trial_velocity);
    result.loss_trace.push_back(current);
    result.iterations_run = it;
    if (options.checkpoint_every > 0 && it % options.checkpoint_every == 0) {
      result.checkpoints.push_back(theta);
      result.checkpoint_iterations.push_back(it);
    }
  }
  result.score->set_theta(std::move(theta));
  return result;
}

std::string loss_trace_to_csv(const std::vector<double>& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "iter,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out << i << "," << trace[i] << "\n";
  return out.str();
}

double epsilon_integrand(const ScoreSlice& estimate, const Vector& p_backward, const RateMatrix& q,
                         StateIndex x) {
  const double px = p_backward(x);
  if (!(px > 0.0)) throw Error(ErrorKind::ZeroDenominator, "true score undefined at a null state");
  const Vector est = estimate.row(x);
  double total = 0.0;
  for (Eigen::Index y = 0; y < p_backward.size(); ++y) {
    const double rate = q.entries()(x, y);
    if (y == x || rate <= 0.0) continue;
    const double truth = std::max(p_backward(y), kProbabilityFloor) / px;
    total += k_function(est(y) / truth) * truth * rate;
  }
  return total;
}

namespace {

EpsilonEstimate summarize(const std::vector<double>& values) {
  EpsilonEstimate out;
  out.n_paths = values.size();
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  const double count = static_cast<double>(values.size());
  out.value = sum / count;
  double ss = 0.0;
  for (double v : values) ss += (v - out.value) * (v - out.value);
  out.se = values.size() > 1 ? std::sqrt(ss / (count - 1.0) / count) : 0.0;
  return out;
}

}  // namespace

EpsilonEstimate estimate_epsilon_discrete(const ScoreProvider& provider,
                                          const ExactBackwardIntensity& truth,
                                          const std::vector<double>& grid_points, std::size_t n_paths,
                                          std::uint64_t seed) {
  if (grid_points.size() < 2) throw Error(ErrorKind::EmptyGrid, "grid needs at least one step");
  const ReversedMarginals& marginals = truth.marginals();
  const RateMatrix& q = truth.rates_matrix();
  const std::size_t steps = grid_points.size() - 1;
  std::vector<std::unique_ptr<const ScoreSlice>> slices;
  std::vector<Vector> probs;
  for (std::size_t k = 0; k < steps; ++k) {
    slices.push_back(provider.at(grid_points[k]));
    probs.push_back(marginals.backward(grid_points[k]));
  }
  const Vector start = marginals.backward(0.0);
  std::vector<double> values(n_paths, 0.0);
  parallel_for(n_paths, [&](std::size_t i) {
    Philox rng = Philox::for_path(seed, i);
    const StateIndex y0 = sample_state(start, rng);
    const JumpPath path = simulate_backward_exact(truth, y0, rng);
    double total = 0.0;
    for (std::size_t k = 0; k < steps; ++k) {
      const double dt = grid_points[k + 1] - grid_points[k];
      total += dt * epsilon_integrand(*slices[k], probs[k], q, path.state_at(grid_points[k]));
    }
    values[i] = total;
  });
  return summarize(values);
}

EpsilonEstimate estimate_epsilon_continuous(const ScoreProvider& provider,
                                            const ExactBackwardIntensity& truth, std::size_t n_paths,
                                            std::uint64_t seed, double tol) {
  const ReversedMarginals& marginals = truth.marginals();
  const RateMatrix& q = truth.rates_matrix();
  std::vector<double> cuts = provider.breakpoints();
  std::sort(cuts.begin(), cuts.end());
  const Vector start = marginals.backward(0.0);
  std::vector<double> values(n_paths, 0.0);
  parallel_for(n_paths, [&](std::size_t i) {
    Philox rng = Philox::for_path(seed, i);
    const StateIndex y0 = sample_state(start, rng);
    const JumpPath path = simulate_backward_exact(truth, y0, rng);
    double total = 0.0;
    StateIndex x = path.x0;
    double from = 0.0;
    auto segment = [&](double a, double b, StateIndex state) {
      return integrate_piecewise(
          [&](double s) { return epsilon_integrand(*provider.at(s), marginals.backward(s), q, state); }, a,
          b, cuts, tol);
    };
    for (const auto& e : path.events) {
      total += segment(from, e.time, x);
      from = e.time;
      x = e.state;
    }
    total += segment(from, path.horizon, x);
    values[i] = total;
  });
  return summarize(values);
}

double epsilon_oracle_discrete(const ScoreProvider& provider, const ReversedMarginals& marginals,
                               const RateMatrix& q, const std::vector<double>& grid_points) {
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < grid_points.size(); ++k) {
    const auto slice = provider.at(grid_points[k]);
    const Vector p = marginals.backward(grid_points[k]);
    double inner = 0.0;
    for (Eigen::Index x = 0; x < p.size(); ++x) {
      if (p(x) > 0.0) inner += p(x) * epsilon_integrand(*slice, p, q, static_cast<StateIndex>(x));
    }
    total += (grid_points[k + 1] - grid_points[k]) * inner;
  }
  return total;
}

double epsilon_oracle_continuous(const ScoreProvider& provider, const ReversedMarginals& marginals,
                                 const RateMatrix& q, double delta, double tol) {
  const double end = marginals.horizon() - delta;
  const std::vector<double> cuts = provider.breakpoints();
  return integrate_piecewise(
      [&](double s) {
        const auto slice = provider.at(s);
        const Vector p = marginals.backward(s);
        double inner = 0.0;
        for (Eigen::Index x = 0; x < p.size(); ++x) {
          if (p(x) > 0.0) inner += p(x) * epsilon_integrand(*slice, p, q, static_cast<StateIndex>(x));
        }
        return inner;
      },
      0.0, end, cuts, tol);
}

}  // namespace ddm
