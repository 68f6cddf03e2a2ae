#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "ddm/exact.hpp"
#include "ddm/prm.hpp"
#include "ddm/statespace.hpp"

namespace ddm {

inline constexpr double kNoClamp = std::numeric_limits<double>::infinity();

/// Score estimates frozen at one backward time s. row(x)(y) = ŝ_s(x, y); the
/// entry at y = x and entries off the graph of Q are 1 and never used.
class ScoreSlice {
 public:
  virtual ~ScoreSlice() = default;
  virtual Vector row(StateIndex x) const = 0;
};

/// Backward-time score estimate ŝ_s(x, ·) with values in (0, M]. Providers are
/// immutable; all queries are safe from concurrent threads.
class ScoreProvider {
 public:
  virtual ~ScoreProvider() = default;

  /// Slice at backward time s; reuse it to query many states at the same s.
  virtual std::unique_ptr<const ScoreSlice> at(double s) const = 0;
  Vector query(double s, StateIndex x) const { return at(s)->row(x); }

  virtual double clamp() const = 0;
  /// Times where ŝ is discontinuous in s.
  virtual std::vector<double> breakpoints() const { return {}; }
  virtual std::string provenance() const = 0;
};

/// ŝ_s(x, y) = min(M, p_{T-s}(y) / p_{T-s}(x)) from exact marginals. Throws
/// ZeroDenominator when p_{T-s}(x) is exactly zero.
class ExactScoreProvider final : public ScoreProvider {
 public:
  explicit ExactScoreProvider(std::shared_ptr<const ReversedMarginals> marginals, double clamp = kNoClamp);

  std::unique_ptr<const ScoreSlice> at(double s) const override;
  double clamp() const override { return clamp_; }
  std::string provenance() const override { return "exact"; }
  const ReversedMarginals& marginals() const noexcept { return *marginals_; }

 private:
  std::shared_ptr<const ReversedMarginals> marginals_;
  double clamp_;
};

/// base · factor(s, x, y), clamped again at the base's M.
class PerturbedScoreProvider final : public ScoreProvider {
 public:
  using Factor = std::function<double(double, StateIndex, StateIndex)>;
  PerturbedScoreProvider(std::shared_ptr<const ScoreProvider> base, Factor factor,
                         std::string description = "perturbed");

  std::unique_ptr<const ScoreSlice> at(double s) const override;
  double clamp() const override { return base_->clamp(); }
  std::vector<double> breakpoints() const override { return base_->breakpoints(); }
  std::string provenance() const override { return description_; }

 private:
  std::shared_ptr<const ScoreProvider> base_;
  Factor factor_;
  std::string description_;
};

/// Tabular log-scores θ_k(y, x) = log ŝ(x, y) at backward times s_k, held
/// constant on [s_k, s_{k+1}). Clamping happens at query time only.
class TabularScore final : public ScoreProvider {
 public:
  TabularScore(RateMatrix q, std::vector<double> times, double clamp = kNoClamp);

  std::unique_ptr<const ScoreSlice> at(double s) const override;
  double clamp() const override { return clamp_; }
  std::vector<double> breakpoints() const override { return times_; }
  std::string provenance() const override { return "tabular"; }

  const RateMatrix& rates() const noexcept { return q_; }
  const std::vector<double>& times() const noexcept { return times_; }
  /// θ_k; entries off the graph of Q are kept at zero.
  const std::vector<Matrix>& theta() const noexcept { return theta_; }
  void set_theta(std::vector<Matrix> theta);
  /// Index k of the time slab containing s.
  std::size_t slab(double s) const;

 private:
  RateMatrix q_;
  std::vector<double> times_;
  double clamp_;
  std::vector<Matrix> theta_;
  Matrix mask_;  // 1 where Q(x, y) > 0, stored at (y, x)
};

/// {"times", "M", "edges": [{"k","x","y","theta"}]} for graph edges only.
nlohmann::json to_json(const TabularScore& score);
TabularScore tabular_score_from_json(const RateMatrix& q, const nlohmann::json& doc);

struct LossOptions {
  /// Backward times s_k; the loss uses forward marginals at t = T - s_k.
  std::vector<double> times;
  /// ψ per time; empty means ψ ≡ 1.
  std::vector<double> psi;
  bool exact = true;
  std::size_t n_mc = 10000;
  std::uint64_t seed = 0;
};

struct LossValue {
  /// Σ_k ψ_k Σ_x Σ_{y≠x} Q(x,y) (p(x) ŝ(x,y) - p(y) log ŝ(x,y)).
  double value = 0.0;
  double se = 0.0;
  /// θ-independent optimum of `value`, reached at the true score.
  double minimum = 0.0;
  /// value - minimum; non-negative up to Monte Carlo noise.
  double excess = 0.0;
};

/// Denoising score-entropy loss of any provider (read at the loss times).
LossValue score_entropy_loss(const ScoreProvider& provider, const RateMatrix& q,
                             const ReversedMarginals& marginals, const LossOptions& options);

/// Same for raw tabular parameters (no clamp).
LossValue score_entropy_loss(const std::vector<Matrix>& theta, const RateMatrix& q,
                             const ReversedMarginals& marginals, const LossOptions& options);

/// Analytic gradient ψ_k Q(x,y) (p(x) e^θ - p(y)) in exact mode.
std::vector<Matrix> loss_gradient(const std::vector<Matrix>& theta, const RateMatrix& q,
                                  const ReversedMarginals& marginals, const LossOptions& options);

struct TrainOptions {
  double learning_rate = 1.0;
  double momentum = 0.0;
  int iterations = 5000;
  /// Stop early when the gradient sup-norm falls below this.
  double gradient_tolerance = 1e-12;
  int max_halvings = 30;
  /// Record a θ checkpoint every this many iterations (0 = none).
  int checkpoint_every = 0;
  double clamp = kNoClamp;
};

struct TrainResult {
  std::shared_ptr<TabularScore> score;
  std::vector<double> loss_trace;
  std::vector<std::vector<Matrix>> checkpoints;
  std::vector<int> checkpoint_iterations;
  int iterations_run = 0;
};

/// Gradient descent on the exact loss starting from θ = 0, halving the step
/// whenever the loss would increase. Throws Diverged on a non-finite loss.
TrainResult train_tabular_score(const RateMatrix& q, const ReversedMarginals& marginals,
                                const LossOptions& loss, const TrainOptions& options);

/// CSV "iter,loss".
std::string loss_trace_to_csv(const std::vector<double>& trace);

struct EpsilonEstimate {
  double value = 0.0;
  double se = 0.0;
  std::size_t n_paths = 0;
};

/// Σ_y K(ŝ/s) s Q(x, y) at backward time s, state x. `truth` supplies s.
double epsilon_integrand(const ScoreSlice& estimate, const Vector& p_backward, const RateMatrix& q,
                         StateIndex x);

/// Monte Carlo over true backward paths of Σ_n Δ_n Σ_y K(ŝ/s) s Q at the grid
/// left endpoints. `grid_points` runs from 0 to T - δ.
EpsilonEstimate estimate_epsilon_discrete(const ScoreProvider& provider,
                                          const ExactBackwardIntensity& truth,
                                          const std::vector<double>& grid_points, std::size_t n_paths,
                                          std::uint64_t seed);

/// Same with the time integral over [0, T - δ] taken per path by quadrature.
EpsilonEstimate estimate_epsilon_continuous(const ScoreProvider& provider,
                                            const ExactBackwardIntensity& truth, std::size_t n_paths,
                                            std::uint64_t seed, double tol = 1e-9);

/// Deterministic counterparts: expectations over x under p_{T-s}.
double epsilon_oracle_discrete(const ScoreProvider& provider, const ReversedMarginals& marginals,
                               const RateMatrix& q, const std::vector<double>& grid_points);
double epsilon_oracle_continuous(const ScoreProvider& provider, const ReversedMarginals& marginals,
                                 const RateMatrix& q, double delta, double tol = 1e-10);

}  // namespace ddm
