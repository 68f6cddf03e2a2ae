#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ddm/cli.hpp"
#include "support.hpp"

using namespace ddm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ddm_test_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Message of the ddm::Error thrown by fn, checked against `kind`.
template <class Fn>
std::string error_message(Fn&& fn, ErrorKind kind) {
  try {
    fn();
  } catch (const Error& e) {
    if (e.kind() == kind) return e.what();
    return "wrong kind: " + std::string(e.what());
  }
  return "no error";
}

}  // namespace

TEST_CASE("minimal config parses with defaults") {
  const RunConfig c = parse_config(json{{"command", "spectral"}, {"model", "hypercube"}, {"d", 2}}, json::object());
  CHECK(c.command() == "spectral");
  CHECK(c.values.at("d") == 2);
  CHECK(c.values.at("kappa") == default_config().at("kappa"));
  CHECK(c.seed() == 0);
  CHECK(c.explicit_keys.count("d") == 1);
  CHECK(c.explicit_keys.count("kappa") == 0);
  CHECK(std::isinf(c.clamp()));
  const ModelSpec m = model_from_config(c);
  CHECK(m.model.rates.size() == 4);
  CHECK(m.p0[0] == 1.0);
}

TEST_CASE("validation names the offending key") {
  CHECK(error_message([] { parse_config(json{{"kappa", -1}}, json::object()); }, ErrorKind::OutOfRange)
            .find("kappa") != std::string::npos);
  CHECK(error_message([] { parse_config(json{{"kapa", 0.1}}, json::object()); }, ErrorKind::UnknownKey)
            .find("kapa") != std::string::npos);
  CHECK(error_message([] { parse_config(json::object(), json{{"n_path", 5}}); }, ErrorKind::UnknownKey)
            .find("n_path") != std::string::npos);
  CHECK(error_message([] { parse_config(json{{"model", "file"}, {"model_file", "/nonexistent/q.json"}}, json::object()); },
                      ErrorKind::MissingFile)
            .find("model_file") != std::string::npos);
  CHECK(error_message([] { parse_config(json{{"grid", "shrinking"}, {"gamma", 0.8}, {"eta", 0.5}}, json::object()); }, ErrorKind::OutOfRange)
            .find("gamma") != std::string::npos);
  CHECK(test::throws_kind([] { read_config_file("/nonexistent/config.json"); }, ErrorKind::MissingFile));
}

TEST_CASE("precedence: defaults < JDL_SEED < file < flags") {
  CHECK(parse_config(json{{"seed", 3}}, json{{"seed", 7}}, "11").seed() == 7);
  CHECK(parse_config(json{{"seed", 3}}, json::object(), "11").seed() == 3);
  CHECK(parse_config(json::object(), json::object(), "11").seed() == 11);
  CHECK(parse_config(json{{"kappa", 0.2}}, json{{"kappa", 0.05}}).number("kappa") == 0.05);
  CHECK(flag_value("0.5") == json(0.5));
  CHECK(flag_value("[1, 2]") == json::array({1, 2}));
  CHECK(flag_value("hypercube") == json("hypercube"));
}

TEST_CASE("experiment defaults apply only to unset keys") {
  const RunConfig d = parse_config(json{{"command", "experiment"}, {"experiment", "discretization"}}, json::object());
  CHECK(d.number("T") == experiment_defaults("discretization").at("T").get<double>());
  const RunConfig e =
      parse_config(json{{"command", "experiment"}, {"experiment", "discretization"}, {"T", 5}}, json::object());
  CHECK(e.number("T") == 5.0);
}

TEST_CASE("config hash ignores run-only keys") {
  const RunConfig a = parse_config(json{{"out", "a"}, {"threads", 1}}, json::object());
  const RunConfig b = parse_config(json{{"out", "b"}, {"threads", 4}}, json::object());
  const RunConfig c = parse_config(json{{"seed", 1}}, json::object());
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a) != config_hash(c));
  CHECK(config_hash(a).size() == 16);
}

TEST_CASE("sample with an empty grid reports EmptyGrid") {
  const fs::path out = scratch("empty");
  const RunConfig c = parse_config(
      json{{"command", "sample"}, {"algorithm", "tau-leaping"}, {"T", 1.0}, {"delta", 1.0}, {"out", out.string()}},
      json::object());
  std::ostringstream log;
  CHECK(error_message([&] { run(c, {}, log); }, ErrorKind::EmptyGrid).find("EmptyGrid") != std::string::npos);
}

TEST_CASE("girsanov experiment on the 2-state chain") {
  const fs::path out = scratch("girsanov");
  const RunConfig c = parse_config(json{{"command", "experiment"},
                                        {"experiment", "girsanov"},
                                        {"model", "two-state"},
                                        {"n_paths", 4000},
                                        {"out", out.string()}},
                                   json::object());
  std::ostringstream log;
  CHECK(run(c, {true}, log) == 0);
  for (const char* f : {"report.json", "report.csv", "plot.dat", "resolved-config.json", "manifest.json"}) {
    CHECK(fs::exists(out / f));
  }
  const json manifest = json::parse(slurp(out / "manifest.json"));
  CHECK(manifest.at("config_hash") == config_hash(c));
  CHECK(manifest.at("exit_code") == 0);
  CHECK(json::parse(slurp(out / "resolved-config.json")).at("n_paths") == 4000);
  CHECK(log.str().find("PASS") != std::string::npos);
}

TEST_CASE("identical runs give byte-identical artifacts") {
  std::vector<std::string> csv;
  for (int threads : {1, 3}) {
    const fs::path out = scratch("det" + std::to_string(threads));
    const RunConfig c = parse_config(json{{"command", "sample"},
                                          {"algorithm", "tau-leaping"},
                                          {"model", "hypercube"},
                                          {"d", 2},
                                          {"n_paths", 3000},
                                          {"seed", 5},
                                          {"threads", threads},
                                          {"out", out.string()}},
                                     json::object());
    std::ostringstream log;
    CHECK(run(c, {}, log) == 0);
    csv.push_back(slurp(out / "samples.csv"));
  }
  CHECK(csv[0].size() > 0);
  CHECK(csv[0] == csv[1]);
}

TEST_CASE("other subcommands write their artifacts") {
  std::ostringstream log;
  const fs::path fwd = scratch("forward");
  CHECK(run(parse_config(json{{"command", "simulate-forward"}, {"n_paths", 4000}, {"out", fwd.string()}}, json::object()),
            {}, log) == 0);
  CHECK(fs::exists(fwd / "forward-marginal.csv"));

  const fs::path spec = scratch("spectral");
  CHECK(run(parse_config(json{{"command", "spectral"}, {"out", spec.string()}}, json::object()), {}, log) == 0);
  CHECK(json::parse(slurp(spec / "spectral.json")).at("gap").get<double>() == doctest::Approx(2.0));

  const fs::path train = scratch("train");
  CHECK(run(parse_config(json{{"command", "train-score"}, {"model", "two-state"}, {"iterations", 200}, {"out", train.string()}},
                         json::object()),
            {}, log) == 0);
  CHECK(fs::exists(train / "score.json"));
  CHECK(slurp(train / "loss.csv").rfind("iter,loss\n", 0) == 0);

  const fs::path unif = scratch("unif");
  CHECK(run(parse_config(json{{"command", "sample"}, {"algorithm", "uniformization"}, {"n_paths", 2000}, {"out", unif.string()}},
                         json::object()),
            {}, log) == 0);
  CHECK(json::parse(slurp(unif / "diagnostics.json")).contains("realized_N"));
}
