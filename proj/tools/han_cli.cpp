#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "han/error.hpp"
#include "han/harness.hpp"

namespace {

constexpr int kExitVerifyFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::optional<std::uint64_t> seed_from_environment() {
  const char* text = std::getenv("HAN_SEED");
  if (text == nullptr || *text == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const auto value = std::stoull(text, &used, 0);
    if (used != std::string(text).size()) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    throw han::ConfigError("HAN_SEED", std::string("not an unsigned integer: ") + text);
  }
}

nlohmann::json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw han::ConfigError("config", "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw han::ConfigError("config", path + ": " + e.what());
  }
}

struct RunOptions {
  std::string preset;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replications;
  std::size_t jobs = 1;
  bool full = false;
  std::string out;
};

han::ExperimentConfig resolve_config(const RunOptions& o) {
  nlohmann::json document = nlohmann::json::object();
  if (!o.config_path.empty()) document = read_config_file(o.config_path);
  if (!document.is_object()) throw han::ConfigError("", "the configuration must be a JSON object");
  if (!o.preset.empty()) document["preset"] = o.preset;
  if (o.seed) {
    document["seed"] = *o.seed;
  } else if (!document.contains("seed")) {
    if (const auto env = seed_from_environment()) document["seed"] = *env;
  }
  if (o.full) document["full"] = true;
  if (o.replications) document["replications"] = *o.replications;
  return han::config_from_json(document);
}

int run_command(const RunOptions& o) {
  const auto config = resolve_config(o);
  std::cerr << "han: running preset " << han::to_string(config.preset) << " with " << config.replications
            << " replications, seed " << config.seed << ", " << o.jobs << " job(s)\n";
  const auto result = han::run_preset(config, o.out, o.jobs);
  const auto summary = han::summary_json(result);
  for (const auto& entry : summary["final"]) {
    std::cout << entry["algorithm"].get<std::string>() << " ablated=" << entry["ablated"]
              << " final_mean=" << han::format_number(entry["mean"].get<double>()) << "\n";
  }
  std::cout << "results written to " << o.out << " (config hash " << summary["config_hash"].get<std::string>()
            << ", " << han::format_number(result.seconds) << " s)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hawkes-network classifier: learning, analysis and experiment harness"};
  app.require_subcommand(1);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment preset or configuration file");
  run_cmd->add_option("--preset", run.preset,
                      "figure2, table1_ablation, appendixB_replacement, figure3_perceptron or custom");
  run_cmd->add_option("--config", run.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", run.seed, "Base seed (falls back to the config, then HAN_SEED)");
  run_cmd->add_option("--replications", run.replications, "Number of replications");
  run_cmd->add_option("--jobs", run.jobs, "Worker threads")->check(CLI::PositiveNumber);
  run_cmd->add_flag("--full", run.full, "Use the full 100 replications");
  run_cmd->add_option("--out", run.out, "Output directory")->required();

  std::string battery = "all";
  std::optional<std::uint64_t> verify_seed;
  std::size_t verify_replications = 50;
  std::size_t verify_jobs = 1;
  auto* verify_cmd = app.add_subcommand("verify", "Run an analysis verification battery");
  verify_cmd->add_option("--preset", battery, "theorem2, propositions, kalikow, regret, oracle_inequality or all");
  verify_cmd->add_option("--seed", verify_seed, "Base seed (falls back to HAN_SEED)");
  verify_cmd->add_option("--replications", verify_replications, "Replications for theorem2 and oracle_inequality")
      ->check(CLI::PositiveNumber);
  verify_cmd->add_option("--jobs", verify_jobs, "Worker threads")->check(CLI::PositiveNumber);

  std::string show_preset = "figure2";
  auto* config_cmd = app.add_subcommand("config", "Print the resolved configuration of a preset as JSON");
  config_cmd->add_option("--preset", show_preset, "Preset name");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      if (run.preset.empty() && run.config_path.empty()) {
        throw han::ConfigError("preset", "give --preset or --config");
      }
      return run_command(run);
    }
    if (*verify_cmd) {
      std::uint64_t seed = 0x5eed;
      if (verify_seed) {
        seed = *verify_seed;
      } else if (const auto env = seed_from_environment()) {
        seed = *env;
      }
      const auto reports = han::run_verify(battery, seed, verify_replications, verify_jobs);
      han::print_reports(std::cout, reports);
      for (const auto& r : reports) {
        if (!r.passed()) return kExitVerifyFailed;
      }
      return 0;
    }
    if (*config_cmd) {
      std::cout << han::to_json(han::preset_config(han::preset_from_string(show_preset))).dump(2) << "\n";
      return 0;
    }
  } catch (const han::ConfigError& e) {
    std::cerr << "han: configuration error in '" << e.field() << "': " << e.what() << "\n";
    return kExitConfig;
  } catch (const han::InvalidArgument& e) {
    std::cerr << "han: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "han: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
