#include "ddm/cli.hpp"

#include <Eigen/Core>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "ddm/error.hpp"
#include "ddm/prm.hpp"
#include "ddm/random.hpp"
#include "ddm/spectral.hpp"

namespace ddm {

namespace {

constexpr const char* kVersion = "1.0.0";

const std::vector<std::string> kCommands{"simulate-forward", "sample", "spectral", "train-score",
                                         "experiment"};
const std::vector<std::string> kExperiments{"truncation",    "discretization", "uniformization-exactness",
                                            "uniformization-cost", "approximation", "girsanov"};
const std::vector<std::string> kModels{"two-state", "hypercube", "asymmetric-hypercube", "grid", "file"};

[[noreturn]] void out_of_range(const std::string& key, const std::string& why) {
  throw Error(ErrorKind::OutOfRange, "\"" + key + "\" " + why);
}

bool one_of(const std::string& v, const std::vector<std::string>& options) {
  return std::find(options.begin(), options.end(), v) != options.end();
}

std::string joined(const std::vector<std::string>& options) {
  std::string out;
  for (const auto& o : options) out += (out.empty() ? "" : "|") + o;
  return out;
}

double require_number(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number()) out_of_range(key, "must be a number");
  return v.get<double>();
}

std::int64_t require_integer(const nlohmann::json& v, const std::string& key) {
  if (v.is_number_integer() || v.is_number_unsigned()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d && std::abs(d) < 9e15) return static_cast<std::int64_t>(d);
  }
  out_of_range(key, "must be an integer");
}

std::string require_string(const nlohmann::json& v, const std::string& key) {
  if (!v.is_string()) out_of_range(key, "must be a string");
  return v.get<std::string>();
}

void check_list(const nlohmann::json& v, const std::string& key, bool integers,
                const std::function<bool(double)>& ok, const std::string& why) {
  if (!v.is_array() || v.empty()) out_of_range(key, "must be a non-empty array");
  for (const auto& e : v) {
    const double x = integers ? static_cast<double>(require_integer(e, key)) : require_number(e, key);
    if (!ok(x)) out_of_range(key, why);
  }
}

void validate(nlohmann::json& v) {
  const std::string command = require_string(v["command"], "command");
  if (!one_of(command, kCommands)) out_of_range("command", "must be one of " + joined(kCommands));
  const std::string experiment = require_string(v["experiment"], "experiment");
  if (command == "experiment" && !experiment.empty() && !one_of(experiment, kExperiments)) {
    out_of_range("experiment", "must be one of " + joined(kExperiments));
  }
  const std::string algorithm = require_string(v["algorithm"], "algorithm");
  if (algorithm != "tau-leaping" && algorithm != "uniformization") {
    out_of_range("algorithm", "must be tau-leaping|uniformization");
  }
  const std::string model = require_string(v["model"], "model");
  if (!one_of(model, kModels)) out_of_range("model", "must be one of " + joined(kModels));
  const auto d = require_integer(v["d"], "d");
  if (d < 1 || d > 20) out_of_range("d", "must lie in [1, 20]");
  if (require_integer(v["S"], "S") < 2) out_of_range("S", "must be at least 2");
  const double p = require_number(v["p"], "p");
  if (!(p > 0.0 && p < 1.0)) out_of_range("p", "must lie in (0, 1)");
  const std::string file = require_string(v["model_file"], "model_file");
  if (model == "file") {
    if (file.empty()) out_of_range("model_file", "is required when model is \"file\"");
    if (!std::filesystem::exists(file)) throw Error(ErrorKind::MissingFile, "\"model_file\" " + file);
  }
  const auto& p0 = v["p0"];
  if (p0.is_string()) {
    const std::string s = p0.get<std::string>();
    if (s != "point" && s != "uniform") out_of_range("p0", "must be \"point\", \"uniform\" or an array");
  } else {
    check_list(p0, "p0", false, [](double x) { return x >= 0.0 && std::isfinite(x); },
               "entries must be non-negative");
  }

  const double t = require_number(v["T"], "T");
  if (!(t > 0.0) || !std::isfinite(t)) out_of_range("T", "must be positive");
  const double delta = require_number(v["delta"], "delta");
  // δ >= T is left to the grid builder, which reports EmptyGrid.
  if (!(delta >= 0.0)) out_of_range("delta", "must be non-negative");
  if (!(require_number(v["kappa"], "kappa") > 0.0)) out_of_range("kappa", "must be positive");
  const double gamma = require_number(v["gamma"], "gamma");
  const double eta = require_number(v["eta"], "eta");
  if (!(gamma >= 0.0 && gamma <= 1.0)) out_of_range("gamma", "must lie in [0, 1]");
  if (!(eta >= 0.0 && eta <= 1.0)) out_of_range("eta", "must lie in [0, 1]");
  const std::string grid = require_string(v["grid"], "grid");
  if (grid != "uniform" && grid != "shrinking") out_of_range("grid", "must be uniform|shrinking");
  if (grid == "shrinking" && gamma > eta) out_of_range("gamma", "must not exceed eta on a shrinking grid");
  if (!v["M"].is_null() && !(require_number(v["M"], "M") > 0.0)) out_of_range("M", "must be positive or null");
  if (require_integer(v["n_paths"], "n_paths") < 0) out_of_range("n_paths", "must be non-negative");
  if (require_integer(v["blocks"], "blocks") < 1) out_of_range("blocks", "must be at least 1");
  const std::string score = require_string(v["score"], "score");
  if (score != "exact" && score != "perturbed" && score != "tabular") {
    out_of_range("score", "must be exact|perturbed|tabular");
  }
  if (!(require_number(v["c"], "c") > 0.0)) out_of_range("c", "must be positive");
  if (!(require_number(v["learning_rate"], "learning_rate") > 0.0)) out_of_range("learning_rate", "must be positive");
  if (require_integer(v["iterations"], "iterations") < 1) out_of_range("iterations", "must be at least 1");
  if (require_integer(v["train_points"], "train_points") < 1) out_of_range("train_points", "must be at least 1");
  if (require_integer(v["epsilon_paths"], "epsilon_paths") < 0) out_of_range("epsilon_paths", "must be non-negative");
  if (require_integer(v["threads"], "threads") < 0) out_of_range("threads", "must be non-negative");
  if (require_integer(v["seed"], "seed") < 0) out_of_range("seed", "must be non-negative");
  require_string(v["out"], "out");

  check_list(v["kappas"], "kappas", false, [](double x) { return x > 0.0; }, "entries must be positive");
  check_list(v["B"], "B", true, [](double x) { return x >= 1.0; }, "entries must be at least 1");
  check_list(v["deltas"], "deltas", false, [t](double x) { return x > 0.0 && x < t; },
             "entries must lie in (0, T)");
  check_list(v["factors"], "factors", false, [](double x) { return x > 0.0; }, "entries must be positive");
  check_list(v["horizons"], "horizons", false, [](double x) { return x > 0.0; }, "entries must be positive");

  // Integral keys are stored as integers so the resolved config is canonical.
  for (const char* key : {"d", "S", "n_paths", "blocks", "iterations", "train_points", "epsilon_paths",
                          "threads"}) {
    v[key] = require_integer(v[key], key);
  }
  v["seed"] = static_cast<std::uint64_t>(require_integer(v["seed"], "seed"));
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << content;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

std::string dump(const nlohmann::json& doc) { return doc.dump(2) + "\n"; }

std::shared_ptr<const ReversedMarginals> marginals_for(const ModelSpec& spec, double horizon) {
  return std::make_shared<const ReversedMarginals>(build_propagator(spec.model.rates), spec.p0, horizon);
}

std::vector<double> training_times(const RunConfig& config) {
  const auto k = config.values.at("train_points").get<int>();
  const double end = config.number("T") - config.number("delta");
  std::vector<double> times;
  for (int i = 0; i < k; ++i) times.push_back(end * i / k);
  return times;
}

TrainResult train_from_config(const RunConfig& config, const ModelSpec& spec,
                              const ReversedMarginals& marginals) {
  LossOptions loss;
  loss.times = training_times(config);
  loss.seed = config.seed();
  TrainOptions train;
  train.learning_rate = config.number("learning_rate");
  train.iterations = config.values.at("iterations").get<int>();
  train.clamp = config.clamp();
  return train_tabular_score(spec.model.rates, marginals, loss, train);
}

std::shared_ptr<const ScoreProvider> provider_from_config(const RunConfig& config, const ModelSpec& spec,
                                                          std::shared_ptr<const ReversedMarginals> marginals) {
  const std::string kind = config.values.at("score").get<std::string>();
  if (kind == "tabular") return train_from_config(config, spec, *marginals).score;
  auto exact = std::make_shared<const ExactScoreProvider>(marginals, config.clamp());
  if (kind == "exact") return exact;
  const double c = config.number("c");
  std::ostringstream name;
  name << "perturbed(" << c << ")";
  return std::make_shared<const PerturbedScoreProvider>(
      exact, [c](double, StateIndex, StateIndex) { return c; }, name.str());
}

struct Artifacts {
  std::filesystem::path dir;
  std::vector<std::string> files;

  void write(const std::string& name, const std::string& content) {
    write_file(dir / name, content);
    files.push_back(name);
  }
};

int run_simulate_forward(const RunConfig& config, const ModelSpec& spec, Artifacts& out, std::ostream& log) {
  const RateMatrix& q = spec.model.rates;
  const std::size_t n = q.size();
  const double horizon = config.number("T");
  const auto n_paths = config.values.at("n_paths").get<std::size_t>();
  if (n_paths == 0) out_of_range("n_paths", "must be at least 1 for simulate-forward");
  const std::uint64_t seed = config.seed();
  std::vector<StateIndex> terminal(n_paths);
  parallel_for(n_paths, [&](std::size_t i) {
    Philox rng = Philox::for_path(seed, i);
    const StateIndex x0 = sample_state(spec.p0.probs(), rng);
    terminal[i] = simulate_ctmc_forward(q, x0, horizon, rng).terminal();
  });
  Vector empirical = Vector::Zero(static_cast<Eigen::Index>(n));
  for (StateIndex x : terminal) empirical(x) += 1.0;
  empirical /= static_cast<double>(n_paths);
  const Vector exact = build_propagator(q)->propagate(spec.p0, horizon).probs();

  std::ostringstream csv;
  csv.precision(17);
  csv << "state,empirical,exact\n";
  for (std::size_t x = 0; x < n; ++x) {
    csv << x << "," << empirical(static_cast<Eigen::Index>(x)) << "," << exact(static_cast<Eigen::Index>(x))
        << "\n";
  }
  out.write("forward-marginal.csv", csv.str());
  {
    Philox rng = Philox::for_path(seed, 0);
    const StateIndex x0 = sample_state(spec.p0.probs(), rng);
    out.write("forward-path.csv", to_csv(simulate_ctmc_forward(q, x0, horizon, rng)));
  }
  const double tv = tv_distance(empirical, exact);
  const double limit = 4.0 * std::sqrt(static_cast<double>(n) / static_cast<double>(n_paths));
  const bool ok = tv <= limit;
  out.write("summary.json", dump({{"n_paths", n_paths}, {"T", horizon}, {"tv", tv}, {"tv_limit", limit},
                                  {"passed", ok}}));
  log << "forward marginal TV " << tv << " (limit " << limit << ")\n";
  if (!ok) log << "FAILED invariant: forward TV " << tv << " > " << limit << " at T = " << horizon << "\n";
  return ok ? 0 : 1;
}

int run_sample(const RunConfig& config, const ModelSpec& spec, Artifacts& out, std::ostream& log) {
  const RateMatrix& q = spec.model.rates;
  const double horizon = config.number("T");
  const double delta = config.number("delta");
  const auto n_paths = config.values.at("n_paths").get<std::size_t>();
  if (n_paths == 0) out_of_range("n_paths", "must be at least 1 for sample");
  const auto marginals = marginals_for(spec, horizon);
  const auto provider = provider_from_config(config, spec, marginals);
  const TimeGrid grid = build_time_grid(horizon, delta, config.number("kappa"), config.number("gamma"),
                                        config.number("eta"),
                                        grid_kind_from_string(config.values.at("grid").get<std::string>()));
  const std::string algorithm = config.values.at("algorithm").get<std::string>();
  SampleSet samples;
  if (algorithm == "tau-leaping") {
    samples = run_tau_leaping(spec.model.space, q, *provider, grid, n_paths, config.seed());
  } else {
    std::vector<double> bounds;
    if (!std::isfinite(provider->clamp())) bounds = tightened_block_bounds(q, *provider, grid);
    samples = run_uniformization(spec.model.space, q, *provider, grid, n_paths, config.seed(), bounds);
  }
  out.write("samples.csv", samples_to_csv(samples));
  out.write("grid.json", dump(to_json(grid)));
  nlohmann::json diag = diagnostics_to_json(samples);
  const Vector p_delta = marginals->forward(delta);
  diag["algorithm"] = algorithm;
  diag["score"] = provider->provenance();
  diag["tv_vs_p_delta"] = tv_distance(samples.histogram(q.size()), p_delta);
  const EmpiricalKl kl = empirical_terminal_kl(samples.terminal, Distribution(p_delta), 0.5, 1000, config.seed());
  diag["kl_vs_p_delta"] = {{"estimate", kl.estimate}, {"se", kl.se}, {"lo", kl.lo}, {"hi", kl.hi},
                           {"missing_support", kl.missing_support}, {"undersampled", kl.undersampled}};
  out.write("diagnostics.json", dump(diag));
  log << algorithm << ": " << n_paths << " paths, " << grid.steps() << " steps, TV vs p_delta "
      << diag["tv_vs_p_delta"].get<double>() << "\n";
  if (kl.undersampled) log << "warning: fewer than 100 |X| samples; KL estimate is biased\n";
  return 0;
}

int run_spectral(const RunConfig& config, const ModelSpec& spec, Artifacts& out, std::ostream& log) {
  MlsOptions mls;
  mls.seed = config.seed();
  const SpectralReport report = spectral_report(spec.model.rates, mls);
  nlohmann::json doc = to_json(report);
  const CheegerCheck cheeger = cheeger_check(spec.model.rates, config.seed());
  doc["cheeger"] = {{"lower", cheeger.lower}, {"phi", cheeger.phi}, {"upper", cheeger.upper},
                    {"phi_exact", cheeger.phi_exact}, {"holds", cheeger.holds}};
  out.write("spectral.json", dump(doc));
  log << std::left << std::setw(22) << "quantity" << "value\n";
  auto row = [&](const std::string& name, double v) { log << std::setw(22) << name << v << "\n"; };
  row("spectral gap", report.gap);
  row("2 x spectral gap", 2.0 * report.gap);
  row("MLS estimate", report.mls_estimate);
  row("conductance", report.conductance);
  row("cheeger lower", report.cheeger_lo);
  row("cheeger upper", report.cheeger_hi);
  row("mixing time bound", report.mixing_time_bound);
  if (report.disconnected) log << "note: chain is disconnected\n";
  return 0;
}

int run_train(const RunConfig& config, const ModelSpec& spec, Artifacts& out, std::ostream& log) {
  const double horizon = config.number("T");
  const auto marginals = marginals_for(spec, horizon);
  const TrainResult result = train_from_config(config, spec, *marginals);
  out.write("score.json", dump(to_json(*result.score)));
  out.write("loss.csv", loss_trace_to_csv(result.loss_trace));

  const RateMatrix& q = spec.model.rates;
  const auto n = static_cast<Eigen::Index>(q.size());
  double worst = 0.0;
  for (double s : result.score->times()) {
    const Vector p = marginals->backward(s);
    const auto slice = result.score->at(s);
    for (Eigen::Index x = 0; x < n; ++x) {
      if (!(p(x) > 0.0)) continue;
      const Vector row = slice->row(static_cast<StateIndex>(x));
      for (Eigen::Index y = 0; y < n; ++y) {
        if (y == x || q.entries()(x, y) <= 0.0) continue;
        const double truth = p(y) / p(x);
        if (truth > 0.0) worst = std::max(worst, std::abs(row(y) / truth - 1.0));
      }
    }
  }
  LossOptions loss;
  loss.times = training_times(config);
  const LossValue final_loss = score_entropy_loss(*result.score, q, *marginals, loss);
  out.write("summary.json", dump({{"iterations", result.iterations_run},
                                  {"loss", final_loss.value},
                                  {"loss_minimum", final_loss.minimum},
                                  {"loss_excess", final_loss.excess},
                                  {"max_relative_error", worst}}));
  log << "trained " << result.iterations_run << " iterations, excess loss " << final_loss.excess
      << ", max relative score error " << worst << "\n";
  return 0;
}

ExperimentReport run_experiment_kind(const RunConfig& config, const ModelSpec& spec) {
  const auto& v = config.values;
  const std::string kind = v.at("experiment").get<std::string>();
  if (kind.empty()) out_of_range("experiment", "must be one of " + joined(kExperiments));
  const std::uint64_t seed = config.seed();
  if (kind == "truncation") {
    return truncation_error_curve(spec, v.at("horizons").get<std::vector<double>>());
  }
  if (kind == "discretization") {
    DiscretizationOptions o;
    o.horizon = config.number("T");
    o.delta = config.number("delta");
    o.kappas = v.at("kappas").get<std::vector<double>>();
    o.kind = grid_kind_from_string(v.at("grid").get<std::string>());
    o.gamma = config.number("gamma");
    o.eta = config.number("eta");
    o.clamp = config.clamp();
    o.n_paths = v.at("n_paths").get<std::size_t>();
    o.epsilon_paths = v.at("epsilon_paths").get<std::size_t>();
    o.seed = seed;
    return discretization_sweep(spec, o);
  }
  if (kind == "uniformization-exactness") {
    UniformizationOptions o;
    o.horizon = config.number("T");
    o.delta = config.number("delta");
    o.blocks = v.at("B").get<std::vector<int>>();
    o.n_paths = v.at("n_paths").get<std::size_t>();
    o.seed = seed;
    return uniformization_exactness(spec, o);
  }
  if (kind == "uniformization-cost") {
    CostOptions o;
    o.horizon = config.number("T");
    o.deltas = v.at("deltas").get<std::vector<double>>();
    o.kappa = config.number("kappa");
    o.n_paths = v.at("n_paths").get<std::size_t>();
    o.seed = seed;
    return uniformization_cost(spec, o);
  }
  if (kind == "approximation") {
    ApproximationOptions o;
    o.horizon = config.number("T");
    o.delta = config.number("delta");
    o.factors = v.at("factors").get<std::vector<double>>();
    o.blocks = v.at("blocks").get<int>();
    o.n_paths = v.at("n_paths").get<std::size_t>();
    o.epsilon_paths = v.at("epsilon_paths").get<std::size_t>();
    o.seed = seed;
    return approximation_error_experiment(spec, o);
  }
  GirsanovOptions o;
  o.horizon = config.number("T");
  o.n_paths = v.at("n_paths").get<std::size_t>();
  o.factors = v.at("factors").get<std::vector<double>>();
  o.backward_delta = config.number("delta");
  o.seed = seed;
  return girsanov_identity_check(spec, o);
}

int run_experiment(const RunConfig& config, const ModelSpec& spec, const RunOptions& options, Artifacts& out,
                   std::ostream& log) {
  const auto& v = config.values;
  if ((v.at("experiment") == "uniformization-exactness" || v.at("experiment") == "approximation" ||
       v.at("experiment") == "girsanov" || v.at("experiment") == "uniformization-cost") &&
      v.at("n_paths").get<std::size_t>() == 0) {
    out_of_range("n_paths", "must be at least 1 for this experiment");
  }
  const ExperimentReport report = run_experiment_kind(config, spec);
  out.write("report.json", dump(report.to_json()));
  out.write("report.csv", report.to_csv());
  if (options.plot_data) out.write("plot.dat", report.plot_data());
  for (const auto& c : report.checks) {
    log << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
  }
  return report.passed() ? 0 : 1;
}

}  // namespace

double RunConfig::clamp() const {
  const auto& m = values.at("M");
  return m.is_null() ? kNoClamp : m.get<double>();
}

nlohmann::json default_config() {
  return {
      {"command", "experiment"},
      {"experiment", ""},
      {"algorithm", "tau-leaping"},
      {"model", "hypercube"},
      {"d", 2},
      {"S", 3},
      {"p", 0.3},
      {"model_file", ""},
      {"p0", "point"},
      {"T", 2.0},
      {"delta", 0.05},
      {"kappa", 0.1},
      {"gamma", 0.0},
      {"eta", 1.0},
      {"grid", "uniform"},
      {"M", nullptr},
      {"n_paths", 10000},
      {"blocks", 16},
      {"score", "exact"},
      {"c", 1.0},
      {"learning_rate", 1.0},
      {"iterations", 2000},
      {"train_points", 16},
      {"epsilon_paths", 0},
      {"kappas", {0.2, 0.1, 0.05, 0.025}},
      {"B", {1, 4, 16}},
      {"deltas", {0.1, 0.01, 0.001}},
      {"factors", {0.8, 1.0, 1.25}},
      {"horizons", {0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0}},
      {"seed", 0},
      {"threads", 0},
      {"out", "out"},
  };
}

nlohmann::json experiment_defaults(const std::string& experiment) {
  if (experiment == "discretization") {
    return {{"T", 3.0}, {"M", 2.0}, {"n_paths", 0}};
  }
  if (experiment == "uniformization-exactness") return {{"n_paths", 100000}};
  if (experiment == "uniformization-cost") return {{"n_paths", 20000}};
  if (experiment == "approximation") return {{"n_paths", 100000}, {"epsilon_paths", 20000}};
  if (experiment == "girsanov") {
    return {{"T", 1.0}, {"n_paths", 100000}, {"factors", {1.0, 1.1, 1.25}}};
  }
  return nlohmann::json::object();
}

RunConfig parse_config(const nlohmann::json& file, const nlohmann::json& flags,
                       const std::optional<std::string>& env_seed) {
  const nlohmann::json defaults = default_config();
  RunConfig config;
  config.values = defaults;
  nlohmann::json user = nlohmann::json::object();
  auto absorb = [&](const nlohmann::json& source, const char* origin) {
    if (source.is_null()) return;
    if (!source.is_object()) {
      throw Error(ErrorKind::InvalidArgument, std::string(origin) + " must be a JSON object");
    }
    for (const auto& [key, value] : source.items()) {
      if (!defaults.contains(key)) throw Error(ErrorKind::UnknownKey, "\"" + key + "\" (" + origin + ")");
      user[key] = value;
      config.explicit_keys.insert(key);
    }
  };
  if (env_seed && !env_seed->empty()) {
    try {
      std::size_t used = 0;
      const unsigned long long s = std::stoull(*env_seed, &used);
      if (used != env_seed->size()) throw std::invalid_argument("trailing characters");
      config.values["seed"] = static_cast<std::uint64_t>(s);
    } catch (const std::exception&) {
      out_of_range("seed", "from JDL_SEED is not a non-negative integer");
    }
  }
  absorb(file, "config file");
  absorb(flags, "flags");
  const std::string experiment = user.value("experiment", defaults["experiment"].get<std::string>());
  const nlohmann::json specific = experiment_defaults(experiment);
  for (const auto& [key, value] : specific.items()) config.values[key] = value;
  for (const auto& [key, value] : user.items()) config.values[key] = value;
  validate(config.values);
  return config;
}

nlohmann::json read_config_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::MissingFile, "config file " + path.string());
  std::ifstream in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::InvalidArgument, "config file " + path.string() + ": " + e.what());
  }
}

nlohmann::json flag_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    return text;
  }
}

std::string config_hash(const RunConfig& config) {
  nlohmann::json canonical = config.values;
  canonical.erase("out");
  canonical.erase("threads");
  const std::string text = canonical.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

ModelSpec model_from_config(const RunConfig& config) {
  const auto& v = config.values;
  const std::string name = v.at("model").get<std::string>();
  const int d = v.at("d").get<int>();
  Model model = [&] {
    if (name == "two-state") return two_state_chain();
    if (name == "hypercube") return hypercube_rate_matrix(d);
    if (name == "asymmetric-hypercube") return asymmetric_hypercube_rate_matrix(d, v.at("p").get<double>());
    if (name == "grid") return grid_rate_matrix(v.at("S").get<int>(), d);
    return rate_matrix_from_json(read_config_file(v.at("model_file").get<std::string>()));
  }();
  const std::size_t n = model.rates.size();
  nlohmann::json p0 = v.at("p0");
  if (name == "file" && !config.explicit_keys.count("p0")) {
    const nlohmann::json doc = read_config_file(v.at("model_file").get<std::string>());
    if (doc.contains("p0")) p0 = doc["p0"];
  }
  std::string label = name;
  if (name == "hypercube" || name == "asymmetric-hypercube") label += "-" + std::to_string(d);
  if (name == "grid") label += "-" + std::to_string(v.at("S").get<int>()) + "^" + std::to_string(d);
  auto make = [&](Distribution law) { return ModelSpec{label, std::move(model), std::move(law)}; };
  if (p0.is_string()) {
    return make(p0 == "uniform" ? Distribution::uniform(n) : Distribution::point_mass(n, 0));
  }
  if (p0.size() != n) out_of_range("p0", "length differs from the state-space size " + std::to_string(n));
  Vector w(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) w(static_cast<Eigen::Index>(i)) = p0[i].get<double>();
  if (!(w.sum() > 0.0)) out_of_range("p0", "must have positive mass");
  return make(Distribution::normalized(w));
}

int run(const RunConfig& config, const RunOptions& options, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  set_max_threads(config.values.at("threads").get<unsigned>());
  Artifacts out{config.out(), {}};
  std::filesystem::create_directories(out.dir);
  write_file(out.dir / "resolved-config.json", dump(config.values));

  const ModelSpec spec = model_from_config(config);
  const std::string command = config.command();
  int code = 0;
  if (command == "simulate-forward") {
    code = run_simulate_forward(config, spec, out, log);
  } else if (command == "sample") {
    code = run_sample(config, spec, out, log);
  } else if (command == "spectral") {
    code = run_spectral(config, spec, out, log);
  } else if (command == "train-score") {
    code = run_train(config, spec, out, log);
  } else {
    code = run_experiment(config, spec, options, out, log);
  }

  const std::string hash = config_hash(config);
  nlohmann::json artifacts = nlohmann::json::array();
  artifacts.push_back({{"file", "resolved-config.json"}, {"config_hash", hash}});
  for (const auto& f : out.files) artifacts.push_back({{"file", f}, {"config_hash", hash}});
  const nlohmann::json manifest{
      {"command", command},
      {"config_hash", hash},
      {"seed", config.seed()},
      {"exit_code", code},
      {"artifacts", artifacts},
      {"versions",
       {{"ddm", kVersion},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION)},
        {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
        {"compiler", __VERSION__}}},
      {"wall_clock_seconds",
       std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()},
  };
  write_file(out.dir / "manifest.json", dump(manifest));
  return code;
}

}  // namespace ddm
