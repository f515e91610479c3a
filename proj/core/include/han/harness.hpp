#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "han/learning.hpp"
#include "han/stimuli.hpp"

namespace han {

enum class Preset { Figure2, Table1Ablation, AppendixBReplacement, Figure3Perceptron, Custom };

std::string_view to_string(Preset preset);
Preset preset_from_string(std::string_view text);

/// Learning algorithms the harness can run. Component-Cue is trained once
/// and reported under two ids: sampled softmax choice and argmax choice.
enum class Algorithm { HanEwa, HanPwa, SoloEwa, SoloPwa, ComponentCue, ComponentCueArgmax, Perceptron };

std::string_view to_string(Algorithm algorithm);
Algorithm algorithm_from_string(std::string_view text);
bool is_hawkes(Algorithm algorithm);
Variant variant_of(Algorithm algorithm);

struct ExperimentConfig {
  Preset preset = Preset::Figure2;
  std::vector<Algorithm> algorithms;

  std::size_t rounds = 2502;           // M
  std::size_t steps = 1000;            // N
  std::size_t depth = 1;               // K
  double p = 0.2;
  double q = 0.3;
  double alpha_a = 0.2;
  double alpha_b = 0.0;
  double beta = 2.0;
  LearningRate eta{LearningRate::Kind::Figure2Caption, 0.0};
  GainMode gain_mode = GainMode::Oracle;
  ScheduleMode schedule = ScheduleMode::EpochShuffle;
  int characteristics = 2;
  int features_per_characteristic = 3;
  std::optional<nlohmann::json> universe;  // custom universe document, overrides (c, n, p, q)

  double cc_learning_rate = 0.005;     // lambda_w
  double cc_sharpness = 10.0;          // phi_cc
  double perceptron_rate = 1.0;

  std::size_t replications = 20;
  std::size_t test_size = 500;
  std::uint64_t seed = 1;
  bool evaluate_every_epoch = true;
  std::vector<std::size_t> ablation_counts{0};
  std::size_t weight_trace_stride = 0;  // 0 disables the weight trace
  bool discrepancy_true_rates = false;  // report Disc with p^i_o instead of p-hat^i_m

  /// Number of rounds between evaluations; the number of natures.
  std::size_t epoch_length() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Defaults of a preset: the shared constants of the concrete example plus the preset's
/// algorithms, schedule and ablation rows.
ExperimentConfig preset_config(Preset preset);
/// Applies a JSON document on top of the preset it names (default figure2).
ExperimentConfig config_from_json(const nlohmann::json& document);
nlohmann::json to_json(const ExperimentConfig& config);

/// Builds the concrete or custom universe of a config for one variant.
StimulusUniverse build_universe(const ExperimentConfig& config, Variant variant);

/// One accuracy measurement.
struct ResultRow {
  Algorithm algorithm = Algorithm::HanEwa;
  std::size_t replication = 0;
  std::size_t ablated = 0;
  std::size_t epoch = 0;
  double accuracy = 0.0;
};

/// Extra per-run measurements of the Hawkes algorithms.
struct RunDiagnostics {
  Algorithm algorithm = Algorithm::HanEwa;
  std::size_t replication = 0;
  std::size_t ablated = 0;
  std::vector<int> ablated_features;
  double network_discrepancy = 0.0;
  std::vector<double> regret;
  WeightState final_weights;
  double seconds = 0.0;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<ResultRow> rows;              // sorted by (algorithm, ablated, replication, epoch)
  std::vector<RunDiagnostics> diagnostics;  // sorted the same way
  std::vector<std::string> weight_traces;   // one CSV per Hawkes algorithm, replication 0, no ablation
  std::vector<Algorithm> weight_trace_algorithms;
  double seconds = 0.0;
};

/// Seed of replication i: splitmix of the base seed at index i.
std::uint64_t replication_seed(std::uint64_t base, std::size_t replication);

/// Features ablated in replication `replication` of the k-ablation row. The
/// C(c n, k) subsets are visited in a seeded random order, cycling.
std::vector<int> ablation_subset(const ExperimentConfig& config, std::size_t count, std::size_t replication);

/// Runs every replication in memory with `jobs` worker threads. The result
/// does not depend on `jobs`.
ExperimentResult run_experiment(const ExperimentConfig& config, std::size_t jobs = 1);

/// Writes accuracy.csv, summary.csv, summary.json, config.json, weight
/// traces and timings.json into `out`. Files are staged in a sibling
/// directory and renamed into place only once all of them are written.
void write_results(const ExperimentResult& result, const std::filesystem::path& out);

/// run_experiment followed by write_results.
ExperimentResult run_preset(const ExperimentConfig& config, const std::filesystem::path& out, std::size_t jobs = 1);

std::string accuracy_csv(const ExperimentResult& result);
std::string summary_csv(const ExperimentResult& result);
nlohmann::json summary_json(const ExperimentResult& result);

/// One row per snapshot of the run, one column per connection labelled like
/// "A:Blue-". Keeps snapshot rounds that are multiples of `stride` and the last one.
std::string emit_weight_trace(const RunRecord& record, const Topology& topology, const StimulusUniverse& universe,
                              std::size_t stride);

/// Git blob SHA-1 of `content`, lowercase hex.
std::string git_blob_sha1(std::string_view content);

/// Formats a number with 10 significant digits.
std::string format_number(double value);

/// Quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double level);

struct VerifyCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::string battery;
  std::vector<VerifyCheck> checks;
  bool passed() const;
};

/// Analysis acceptance batteries: "theorem2", "propositions", "kalikow",
/// "regret", "oracle_inequality" or "all".
std::vector<VerifyReport> run_verify(std::string_view battery, std::uint64_t seed, std::size_t replications,
                                     std::size_t jobs = 1);
void print_reports(std::ostream& out, const std::vector<VerifyReport>& reports);

}  // namespace han
