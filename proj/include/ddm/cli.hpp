#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddm/analysis.hpp"

namespace ddm {

/// Fully resolved run configuration. `values` holds every key with its final
/// value (defaults < JDL_SEED < config file < flags); `explicit_keys` lists
/// the keys set by the file or flags.
struct RunConfig {
  nlohmann::json values = nlohmann::json::object();
  std::set<std::string> explicit_keys;

  std::string command() const { return values.at("command").get<std::string>(); }
  std::uint64_t seed() const { return values.at("seed").get<std::uint64_t>(); }
  std::filesystem::path out() const { return values.at("out").get<std::string>(); }
  double number(const std::string& key) const { return values.at(key).get<double>(); }
  /// M as a double; null means no clamp.
  double clamp() const;
};

/// Every recognised key with its documented default, before experiment-specific
/// defaults are applied.
nlohmann::json default_config();

/// Defaults that replace the generic ones for `experiment` when the user did
/// not set the key.
nlohmann::json experiment_defaults(const std::string& experiment);

/// Merges `file` (may be null) and `flags` over the defaults, with `env_seed`
/// (the JDL_SEED value, if any) below both. Throws UnknownKey, OutOfRange or
/// MissingFile naming the key.
RunConfig parse_config(const nlohmann::json& file, const nlohmann::json& flags,
                       const std::optional<std::string>& env_seed = std::nullopt);

/// Reads the JSON file at `path` (MissingFile if absent, InvalidArgument if malformed).
nlohmann::json read_config_file(const std::filesystem::path& path);

/// Interprets a flag string: JSON when it parses, a bare string otherwise.
nlohmann::json flag_value(const std::string& text);

/// FNV-1a 64 of the canonical resolved config without run-only keys (out, threads).
std::string config_hash(const RunConfig& config);

/// Model and initial law named by the config.
ModelSpec model_from_config(const RunConfig& config);

struct RunOptions {
  bool plot_data = false;
};

/// Executes the configured subcommand, writing artifacts, resolved-config.json
/// and manifest.json under config.out(). Returns 0 on success and 1 when an
/// invariant check failed; library errors propagate as ddm::Error.
int run(const RunConfig& config, const RunOptions& options, std::ostream& log);

}  // namespace ddm
