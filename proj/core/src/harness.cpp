#include "han/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "han/analysis.hpp"
#include "han/baselines.hpp"
#include "han/error.hpp"
#include "han/network.hpp"
#include "han/rng.hpp"

namespace han {

namespace {

constexpr std::pair<Preset, std::string_view> kPresetNames[] = {
    {Preset::Figure2, "figure2"},
    {Preset::Table1Ablation, "table1_ablation"},
    {Preset::AppendixBReplacement, "appendixB_replacement"},
    {Preset::Figure3Perceptron, "figure3_perceptron"},
    {Preset::Custom, "custom"},
};

constexpr std::pair<Algorithm, std::string_view> kAlgorithmNames[] = {
    {Algorithm::HanEwa, "han_ewa"},
    {Algorithm::HanPwa, "han_pwa"},
    {Algorithm::SoloEwa, "han_solo_ewa"},
    {Algorithm::SoloPwa, "han_solo_pwa"},
    {Algorithm::ComponentCue, "component_cue"},
    {Algorithm::ComponentCueArgmax, "component_cue_argmax"},
    {Algorithm::Perceptron, "perceptron"},
};

// Stream indices below a replication seed.
constexpr std::uint64_t kScheduleStream = 1;
constexpr std::uint64_t kTestSetStream = 2;
constexpr std::uint64_t kAblationStream = 3;
constexpr std::uint64_t kAlgorithmStreams = 16;

std::uint64_t training_stream(Algorithm a) { return kAlgorithmStreams + 2 * static_cast<std::uint64_t>(a); }
std::uint64_t evaluation_stream(Algorithm a) { return training_stream(a) + 1; }

bool is_ewa(Algorithm a) { return a == Algorithm::HanEwa || a == Algorithm::SoloEwa; }

bool is_component_cue(Algorithm a) { return a == Algorithm::ComponentCue || a == Algorithm::ComponentCueArgmax; }

}  // namespace

std::string_view to_string(Preset preset) {
  for (const auto& [p, name] : kPresetNames) {
    if (p == preset) return name;
  }
  return "custom";
}

Preset preset_from_string(std::string_view text) {
  for (const auto& [p, name] : kPresetNames) {
    if (name == text) return p;
  }
  throw InvalidArgument("unknown preset '" + std::string(text) + "'");
}

std::string_view to_string(Algorithm algorithm) {
  for (const auto& [a, name] : kAlgorithmNames) {
    if (a == algorithm) return name;
  }
  return "unknown";
}

Algorithm algorithm_from_string(std::string_view text) {
  for (const auto& [a, name] : kAlgorithmNames) {
    if (name == text) return a;
  }
  throw InvalidArgument("unknown algorithm '" + std::string(text) + "'");
}

bool is_hawkes(Algorithm a) {
  return a == Algorithm::HanEwa || a == Algorithm::HanPwa || a == Algorithm::SoloEwa || a == Algorithm::SoloPwa;
}

Variant variant_of(Algorithm a) {
  return a == Algorithm::SoloEwa || a == Algorithm::SoloPwa ? Variant::HanSolo : Variant::Han;
}

// ---------------------------------------------------------------------------
// Configuration

StimulusUniverse build_universe(const ExperimentConfig& config, Variant variant) {
  if (config.universe) {
    StimulusUniverse universe;
    try {
      from_json(*config.universe, universe);
      universe.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("universe." + e.field(), e.what());
    } catch (const std::exception& e) {
      throw ConfigError("universe", e.what());
    }
    return universe;
  }
  try {
    return build_concrete_example(config.characteristics, config.features_per_characteristic, config.p, config.q,
                                  variant);
  } catch (const InvalidArgument& e) {
    throw ConfigError("features", e.what());
  }
}

std::size_t ExperimentConfig::epoch_length() const { return build_universe(*this, Variant::Han).nature_count(); }

void ExperimentConfig::validate() const {
  const auto require = [](bool ok, const std::string& field, const std::string& message) {
    if (!ok) throw ConfigError(field, message);
  };
  require(!algorithms.empty(), "algorithms", "at least one algorithm is required");
  const std::set<Algorithm> distinct(algorithms.begin(), algorithms.end());
  require(distinct.size() == algorithms.size(), "algorithms", "duplicate algorithm");
  require(steps >= 1, "N", "must be >= 1");
  require(depth >= 1, "K", "must be >= 1");
  require(depth < steps, "K", "must be smaller than N");
  require(p > 0.0 && p < 1.0, "p", "must lie in (0, 1)");
  require(q > 0.0 && q < 1.0, "q", "must lie in (0, 1)");
  require(alpha_a >= 0.0 && alpha_a <= 1.0, "alpha_A", "must lie in [0, 1]");
  require(alpha_b >= 0.0 && alpha_b <= 1.0, "alpha_B", "must lie in [0, 1]");
  require(std::isfinite(beta) && beta >= 2.0, "beta", "must be >= 2");
  if (eta.kind == LearningRate::Kind::Fixed) {
    require(std::isfinite(eta.value) && eta.value > 0.0, "eta", "must be > 0");
  }
  require(characteristics >= 1, "characteristics", "must be >= 1");
  require(features_per_characteristic >= 1, "features", "must be >= 1");
  require(cc_learning_rate >= 0.0 && std::isfinite(cc_learning_rate), "cc_learning_rate", "must be >= 0");
  require(std::isfinite(cc_sharpness), "cc_sharpness", "must be finite");
  require(perceptron_rate > 0.0 && std::isfinite(perceptron_rate), "perceptron_rate", "must be > 0");
  require(replications >= 1, "replications", "must be >= 1");
  require(test_size >= 1, "test_size", "must be >= 1");
  require(!ablation_counts.empty(), "ablation_counts", "at least one row is required");
  require(schedule != ScheduleMode::Explicit, "schedule", "explicit schedules cannot be configured");

  const StimulusUniverse universe = build_universe(*this, Variant::Han);
  const std::size_t natures = universe.nature_count();
  if (schedule == ScheduleMode::EpochShuffle) {
    require(rounds % natures == 0, "M",
            "must be a multiple of the number of natures (" + std::to_string(natures) + ") for epoch_shuffle");
  }
  const auto feature_count = static_cast<std::size_t>(universe.space.feature_count());
  for (std::size_t i = 0; i < ablation_counts.size(); ++i) {
    require(ablation_counts[i] < feature_count, "ablation_counts[" + std::to_string(i) + "]",
            "must be smaller than the number of features (" + std::to_string(feature_count) + ")");
  }
  const bool has_han = std::any_of(algorithms.begin(), algorithms.end(),
                                   [](Algorithm a) { return is_hawkes(a) && variant_of(a) == Variant::Han; });
  if (gain_mode == GainMode::SoloCounts) {
    require(!has_han, "gain_mode", "solo_counts applies to HAN Solo algorithms only");
  }
  if (distinct.contains(Algorithm::Perceptron)) {
    require(universe.class_count() == 2, "algorithms", "the perceptron needs exactly two classes");
  }
}

ExperimentConfig preset_config(Preset preset) {
  ExperimentConfig config;
  config.preset = preset;
  switch (preset) {
    case Preset::Figure2:
      config.algorithms = {Algorithm::HanEwa,       Algorithm::HanPwa,
                           Algorithm::SoloEwa,      Algorithm::SoloPwa,
                           Algorithm::ComponentCue, Algorithm::ComponentCueArgmax};
      break;
    case Preset::Table1Ablation:
      config.algorithms = {Algorithm::HanEwa, Algorithm::HanPwa, Algorithm::SoloEwa, Algorithm::SoloPwa};
      config.ablation_counts = {0, 1, 2, 3, 4, 5};
      config.evaluate_every_epoch = false;
      break;
    case Preset::AppendixBReplacement:
      config.algorithms = {Algorithm::HanEwa,       Algorithm::HanPwa,
                           Algorithm::SoloEwa,      Algorithm::SoloPwa,
                           Algorithm::ComponentCue, Algorithm::ComponentCueArgmax};
      config.schedule = ScheduleMode::IidReplacement;
      break;
    case Preset::Figure3Perceptron:
      config.algorithms = {Algorithm::HanEwa, Algorithm::HanPwa, Algorithm::Perceptron};
      break;
    case Preset::Custom:
      config.algorithms = {Algorithm::HanEwa};
      break;
  }
  return config;
}

namespace {

using nlohmann::json;

template <typename T>
T field_as(const json& value, const std::string& field, const char* expected) {
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(field, std::string("expected ") + expected);
  }
}

std::size_t field_count(const json& value, const std::string& field) {
  if (!value.is_number_unsigned() && !(value.is_number_integer() && value.get<long long>() >= 0)) {
    throw ConfigError(field, "expected a non-negative integer");
  }
  return value.get<std::size_t>();
}

double field_number(const json& value, const std::string& field) {
  if (!value.is_number()) throw ConfigError(field, "expected a number");
  return value.get<double>();
}

template <typename F>
auto parse_enum(const json& value, const std::string& field, F&& parse) {
  const auto text = field_as<std::string>(value, field, "a string");
  try {
    return parse(text);
  } catch (const InvalidArgument& e) {
    throw ConfigError(field, e.what());
  }
}

}  // namespace

ExperimentConfig config_from_json(const json& document) {
  if (!document.is_object()) throw ConfigError("", "the configuration must be a JSON object");
  Preset preset = Preset::Figure2;
  if (document.contains("preset")) preset = parse_enum(document["preset"], "preset", preset_from_string);
  ExperimentConfig config = preset_config(preset);

  for (const auto& [key, value] : document.items()) {
    if (key == "preset") continue;
    if (key == "algorithms") {
      if (!value.is_array()) throw ConfigError(key, "expected an array of algorithm ids");
      config.algorithms.clear();
      for (std::size_t i = 0; i < value.size(); ++i) {
        config.algorithms.push_back(
            parse_enum(value[i], "algorithms[" + std::to_string(i) + "]", algorithm_from_string));
      }
    } else if (key == "M") {
      config.rounds = field_count(value, key);
    } else if (key == "N") {
      config.steps = field_count(value, key);
    } else if (key == "K") {
      config.depth = field_count(value, key);
    } else if (key == "p") {
      config.p = field_number(value, key);
    } else if (key == "q") {
      config.q = field_number(value, key);
    } else if (key == "alpha_A") {
      config.alpha_a = field_number(value, key);
    } else if (key == "alpha_B") {
      config.alpha_b = field_number(value, key);
    } else if (key == "beta") {
      config.beta = field_number(value, key);
    } else if (key == "eta") {
      if (value.is_number()) {
        config.eta = LearningRate::fixed(value.get<double>());
      } else {
        config.eta = {parse_enum(value, key, learning_rate_kind_from_string), 0.0};
        if (config.eta.kind == LearningRate::Kind::Fixed) throw ConfigError(key, "give a fixed rate as a number");
      }
    } else if (key == "gain_mode") {
      config.gain_mode = parse_enum(value, key, gain_mode_from_string);
    } else if (key == "schedule") {
      config.schedule = parse_enum(value, key, schedule_mode_from_string);
    } else if (key == "characteristics") {
      config.characteristics = static_cast<int>(field_count(value, key));
    } else if (key == "features") {
      config.features_per_characteristic = static_cast<int>(field_count(value, key));
    } else if (key == "universe") {
      if (!value.is_object()) throw ConfigError(key, "expected a universe object");
      config.universe = value;
    } else if (key == "cc_learning_rate") {
      config.cc_learning_rate = field_number(value, key);
    } else if (key == "cc_sharpness") {
      config.cc_sharpness = field_number(value, key);
    } else if (key == "perceptron_rate") {
      config.perceptron_rate = field_number(value, key);
    } else if (key == "replications") {
      config.replications = field_count(value, key);
    } else if (key == "full") {
      if (field_as<bool>(value, key, "a boolean")) config.replications = 100;
    } else if (key == "test_size") {
      config.test_size = field_count(value, key);
    } else if (key == "seed") {
      config.seed = field_count(value, key);
    } else if (key == "evaluate_every_epoch") {
      config.evaluate_every_epoch = field_as<bool>(value, key, "a boolean");
    } else if (key == "ablation_counts") {
      if (!value.is_array()) throw ConfigError(key, "expected an array of counts");
      config.ablation_counts.clear();
      for (std::size_t i = 0; i < value.size(); ++i) {
        config.ablation_counts.push_back(field_count(value[i], key + "[" + std::to_string(i) + "]"));
      }
    } else if (key == "weight_trace_stride") {
      config.weight_trace_stride = field_count(value, key);
    } else if (key == "discrepancy_rates") {
      const auto text = field_as<std::string>(value, key, "\"empirical\" or \"true\"");
      if (text != "empirical" && text != "true") throw ConfigError(key, "expected \"empirical\" or \"true\"");
      config.discrepancy_true_rates = text == "true";
    } else {
      throw ConfigError(key, "unknown field");
    }
  }
  config.validate();
  return config;
}

json to_json(const ExperimentConfig& c) {
  json algorithms = json::array();
  for (Algorithm a : c.algorithms) algorithms.push_back(std::string(to_string(a)));
  json eta = c.eta.kind == LearningRate::Kind::Fixed ? json(c.eta.value) : json(std::string(to_string(c.eta.kind)));
  json document = {
      {"preset", std::string(to_string(c.preset))},
      {"algorithms", algorithms},
      {"M", c.rounds},
      {"N", c.steps},
      {"K", c.depth},
      {"p", c.p},
      {"q", c.q},
      {"alpha_A", c.alpha_a},
      {"alpha_B", c.alpha_b},
      {"beta", c.beta},
      {"eta", eta},
      {"gain_mode", std::string(to_string(c.gain_mode))},
      {"schedule", std::string(to_string(c.schedule))},
      {"characteristics", c.characteristics},
      {"features", c.features_per_characteristic},
      {"cc_learning_rate", c.cc_learning_rate},
      {"cc_sharpness", c.cc_sharpness},
      {"perceptron_rate", c.perceptron_rate},
      {"replications", c.replications},
      {"test_size", c.test_size},
      {"seed", c.seed},
      {"evaluate_every_epoch", c.evaluate_every_epoch},
      {"ablation_counts", c.ablation_counts},
      {"weight_trace_stride", c.weight_trace_stride},
      {"discrepancy_rates", c.discrepancy_true_rates ? "true" : "empirical"},
  };
  if (c.universe) document["universe"] = *c.universe;
  return document;
}

// ---------------------------------------------------------------------------
// Seeds and ablation subsets

std::uint64_t replication_seed(std::uint64_t base, std::size_t replication) {
  return derive_seed(base, replication);
}

std::vector<int> ablation_subset(const ExperimentConfig& config, std::size_t count, std::size_t replication) {
  if (count == 0) return {};
  const StimulusUniverse universe = build_universe(config, Variant::Han);
  const int features = universe.space.feature_count();
  if (count >= static_cast<std::size_t>(features)) throw InvalidArgument("cannot ablate every feature");

  // All k-subsets in lexicographic order.
  std::vector<std::vector<int>> subsets;
  std::vector<int> pick(count);
  std::iota(pick.begin(), pick.end(), 0);
  while (true) {
    subsets.push_back(pick);
    int i = static_cast<int>(count) - 1;
    while (i >= 0 && pick[static_cast<std::size_t>(i)] == features - static_cast<int>(count) + i) --i;
    if (i < 0) break;
    ++pick[static_cast<std::size_t>(i)];
    for (auto k = static_cast<std::size_t>(i) + 1; k < count; ++k) pick[k] = pick[k - 1] + 1;
  }

  // Seeded visiting order, shared by every replication of the row.
  std::vector<std::size_t> order(subsets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(derive_seed(config.seed, count), kAblationStream));
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[static_cast<std::size_t>(rng.below(i + 1))]);
  }
  return subsets[order[replication % order.size()]];
}

// ---------------------------------------------------------------------------
// Running

namespace {

struct Task {
  std::size_t ablated = 0;
  std::size_t replication = 0;
  Algorithm algorithm = Algorithm::HanEwa;  // ComponentCue covers both Component-Cue ids
};

struct TaskOutput {
  std::vector<ResultRow> rows;
  std::optional<RunDiagnostics> diagnostics;
  std::string weight_trace;
};

/// Rounds after which the frozen network is evaluated, with their epoch index.
std::vector<std::pair<std::size_t, std::size_t>> evaluation_points(const ExperimentConfig& config,
                                                                   std::size_t epoch_length) {
  std::vector<std::pair<std::size_t, std::size_t>> points;
  const std::size_t rounds = config.rounds;
  const std::size_t epochs = (rounds + epoch_length - 1) / epoch_length;
  if (config.evaluate_every_epoch) {
    for (std::size_t e = 0; e <= epochs; ++e) points.emplace_back(std::min(e * epoch_length, rounds), e);
  } else {
    points.emplace_back(rounds, epochs);
  }
  return points;
}

struct ReplicationInputs {
  StimulusUniverse universe;
  std::vector<int> ablated_features;
  Schedule schedule;
  std::vector<std::size_t> test_set;
};

ReplicationInputs replication_inputs(const ExperimentConfig& config, const Task& task, Variant variant) {
  ReplicationInputs in;
  const std::uint64_t seed = replication_seed(config.seed, task.replication);
  in.ablated_features = ablation_subset(config, task.ablated, task.replication);
  const StimulusUniverse full = build_universe(config, variant);
  in.universe = in.ablated_features.empty() ? full : ablate_features(full, in.ablated_features);
  in.schedule = make_schedule(in.universe, config.rounds, config.schedule, derive_seed(seed, kScheduleStream));
  Rng test_rng(derive_seed(seed, kTestSetStream));
  in.test_set = make_test_set(in.universe, config.test_size, test_rng);
  return in;
}

double gain_range_of(const Schedule& schedule, std::size_t classes) {
  const double xi = schedule.xi();
  if (!(xi > 0.0) || classes < 2) return 1.0;
  const auto j = static_cast<double>(classes);
  return j / (xi * (j - 1.0));
}

TaskOutput run_hawkes_task(const ExperimentConfig& config, const Task& task) {
  const auto start = std::chrono::steady_clock::now();
  const Variant variant = variant_of(task.algorithm);
  const ReplicationInputs in = replication_inputs(config, task, variant);
  const Topology topology = make_concrete_topology(in.universe, variant, config.alpha_a, config.alpha_b, config.depth);

  std::unique_ptr<Aggregator> aggregator;
  if (is_ewa(task.algorithm)) {
    const LearningContext context{config.rounds, in.universe.nature_count(),
                                  gain_range_of(in.schedule, in.universe.class_count())};
    aggregator = std::make_unique<ExponentiallyWeightedAverage>(config.eta, context);
  } else {
    aggregator = std::make_unique<PolynomiallyWeightedAverage>(config.beta);
  }

  const std::uint64_t seed = replication_seed(config.seed, task.replication);
  Rng train_rng(derive_seed(seed, training_stream(task.algorithm)));
  Rng eval_rng(derive_seed(seed, evaluation_stream(task.algorithm)));
  Evaluator evaluator(topology, in.universe, variant, config.steps);

  TaskOutput out;
  const auto points = evaluation_points(config, in.universe.nature_count());
  std::size_t next_point = 0;
  LearningOptions options;
  options.variant = variant;
  options.gain_mode = config.gain_mode;
  options.steps = config.steps;
  options.weight_snapshot_stride = 1;
  options.on_round = [&](std::size_t completed, const WeightState& weights) {
    while (next_point < points.size() && points[next_point].first == completed) {
      const double accuracy = evaluator.accuracy(weights, in.test_set, eval_rng);
      out.rows.push_back({task.algorithm, task.replication, task.ablated, points[next_point].second, accuracy});
      ++next_point;
    }
  };
  const RunRecord record = run_learning_phase(topology, in.universe, in.schedule, *aggregator, options, train_rng);

  RunDiagnostics diag;
  diag.algorithm = task.algorithm;
  diag.replication = task.replication;
  diag.ablated = task.ablated;
  diag.ablated_features = in.ablated_features;
  diag.final_weights = record.final_weights;
  for (std::size_t j = 0; j < topology.output_count(); ++j) diag.regret.push_back(regret(record.ledger, j));
  diag.network_discrepancy = std::numeric_limits<double>::quiet_NaN();
  const bool every_class_seen = std::all_of(in.schedule.class_counts.begin(), in.schedule.class_counts.end(),
                                            [](std::size_t n) { return n > 0; });
  if (record.rounds() > 0 && every_class_seen && in.universe.class_count() >= 2) {
    const RateTable rates =
        config.discrepancy_true_rates ? true_rates(in.universe, in.schedule) : empirical_rates(record);
    const auto report = discrepancy_report(topology, WeightFamily::from_record(record), rates, in.schedule.classes,
                                           in.universe.class_count());
    diag.network_discrepancy = report.network;
  }
  if (config.weight_trace_stride > 0 && task.replication == 0 && task.ablated == 0) {
    out.weight_trace = emit_weight_trace(record, topology, in.universe, config.weight_trace_stride);
  }
  diag.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.diagnostics = std::move(diag);
  return out;
}

std::vector<std::uint8_t> indicators_without(const StimulusUniverse& universe, std::size_t nature,
                                             const std::vector<int>& ablated) {
  auto present = feature_indicators(universe, nature);
  for (int f : ablated) present[static_cast<std::size_t>(f)] = 0;
  return present;
}

TaskOutput run_component_cue_task(const ExperimentConfig& config, const Task& task) {
  const ReplicationInputs in = replication_inputs(config, task, Variant::Han);
  const std::uint64_t seed = replication_seed(config.seed, task.replication);
  Rng train_rng(derive_seed(seed, training_stream(Algorithm::ComponentCue)));
  Rng eval_rng(derive_seed(seed, evaluation_stream(Algorithm::ComponentCue)));
  const bool sampled = std::find(config.algorithms.begin(), config.algorithms.end(), Algorithm::ComponentCue) !=
                       config.algorithms.end();
  const bool argmax = std::find(config.algorithms.begin(), config.algorithms.end(),
                                Algorithm::ComponentCueArgmax) != config.algorithms.end();

  ComponentCue model(static_cast<std::size_t>(in.universe.space.feature_count()), in.universe.class_count(),
                     config.cc_learning_rate, config.cc_sharpness);
  std::vector<std::vector<std::uint8_t>> present;
  for (std::size_t o = 0; o < in.universe.nature_count(); ++o) {
    present.push_back(indicators_without(in.universe, o, in.ablated_features));
  }

  TaskOutput out;
  const auto evaluate_now = [&](std::size_t epoch) {
    std::size_t correct_sampled = 0;
    std::size_t correct_argmax = 0;
    for (std::size_t o : in.test_set) {
      const ClassId truth = in.universe.natures[o].class_label;
      if (sampled && model.predict_sampled(present[o], eval_rng) == truth) ++correct_sampled;
      if (argmax && model.predict_argmax(present[o], eval_rng) == truth) ++correct_argmax;
    }
    const auto n = static_cast<double>(in.test_set.size());
    if (sampled) {
      out.rows.push_back({Algorithm::ComponentCue, task.replication, task.ablated, epoch, correct_sampled / n});
    }
    if (argmax) {
      out.rows.push_back({Algorithm::ComponentCueArgmax, task.replication, task.ablated, epoch, correct_argmax / n});
    }
  };
  const auto points = evaluation_points(config, in.universe.nature_count());
  std::size_t next_point = 0;
  for (std::size_t m = 0; m <= config.rounds; ++m) {
    while (next_point < points.size() && points[next_point].first == m) evaluate_now(points[next_point++].second);
    if (m == config.rounds) break;
    const std::size_t o = in.schedule.order[m];
    model.step(present[o], in.schedule.classes[m], train_rng);
  }
  return out;
}

TaskOutput run_perceptron_task(const ExperimentConfig& config, const Task& task) {
  const ReplicationInputs in = replication_inputs(config, task, Variant::Han);
  Perceptron model(static_cast<std::size_t>(in.universe.space.feature_count()), config.perceptron_rate);
  std::vector<std::vector<double>> x;
  for (std::size_t o = 0; o < in.universe.nature_count(); ++o) {
    const auto present = indicators_without(in.universe, o, in.ablated_features);
    x.emplace_back(present.begin(), present.end());
  }
  // Class index 1 is the +1 label: class B in the concrete example.
  const auto label = [&](std::size_t o) { return in.universe.natures[o].class_label == 1 ? 1 : -1; };

  TaskOutput out;
  const auto points = evaluation_points(config, in.universe.nature_count());
  std::size_t next_point = 0;
  for (std::size_t m = 0; m <= config.rounds; ++m) {
    while (next_point < points.size() && points[next_point].first == m) {
      std::size_t correct = 0;
      for (std::size_t o : in.test_set) correct += model.predict(x[o]) == label(o) ? 1 : 0;
      out.rows.push_back({Algorithm::Perceptron, task.replication, task.ablated, points[next_point++].second,
                          static_cast<double>(correct) / static_cast<double>(in.test_set.size())});
    }
    if (m == config.rounds) break;
    const std::size_t o = in.schedule.order[m];
    model.step(x[o], label(o));
  }
  return out;
}

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, count));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto work = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        const std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, std::size_t jobs) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();

  std::vector<Algorithm> task_algorithms;
  bool component_cue_added = false;
  for (Algorithm a : config.algorithms) {
    if (is_component_cue(a)) {
      if (component_cue_added) continue;
      component_cue_added = true;
      task_algorithms.push_back(Algorithm::ComponentCue);
    } else {
      task_algorithms.push_back(a);
    }
  }
  std::vector<Task> tasks;
  for (std::size_t ablated : config.ablation_counts) {
    for (std::size_t r = 0; r < config.replications; ++r) {
      for (Algorithm a : task_algorithms) tasks.push_back({ablated, r, a});
    }
  }

  std::vector<TaskOutput> outputs(tasks.size());
  parallel_for(tasks.size(), jobs, [&](std::size_t i) {
    const Task& task = tasks[i];
    try {
      if (is_hawkes(task.algorithm)) {
        outputs[i] = run_hawkes_task(config, task);
      } else if (task.algorithm == Algorithm::Perceptron) {
        outputs[i] = run_perceptron_task(config, task);
      } else {
        outputs[i] = run_component_cue_task(config, task);
      }
    } catch (const std::exception& e) {
      throw Error(std::string(to_string(task.algorithm)) + ", replication " + std::to_string(task.replication) +
                  ", ablated " + std::to_string(task.ablated) + ": " + e.what());
    }
  });

  ExperimentResult result;
  result.config = config;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    auto& o = outputs[i];
    result.rows.insert(result.rows.end(), o.rows.begin(), o.rows.end());
    if (o.diagnostics) result.diagnostics.push_back(std::move(*o.diagnostics));
    if (!o.weight_trace.empty()) {
      result.weight_traces.push_back(std::move(o.weight_trace));
      result.weight_trace_algorithms.push_back(tasks[i].algorithm);
    }
  }
  const auto row_key = [](const ResultRow& r) { return std::tuple(r.algorithm, r.ablated, r.replication, r.epoch); };
  std::sort(result.rows.begin(), result.rows.end(),
            [&](const ResultRow& a, const ResultRow& b) { return row_key(a) < row_key(b); });
  std::sort(result.diagnostics.begin(), result.diagnostics.end(), [](const RunDiagnostics& a, const RunDiagnostics& b) {
    return std::tuple(a.algorithm, a.ablated, a.replication) < std::tuple(b.algorithm, b.ablated, b.replication);
  });
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------------------
// Output

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.10g", value);
  return buffer;
}

double quantile(std::vector<double> values, double level) {
  if (values.empty()) throw InvalidArgument("quantile of an empty sample");
  if (!(level >= 0.0 && level <= 1.0)) throw InvalidArgument("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double position = level * static_cast<double>(values.size() - 1);
  const auto lower = static_cast<std::size_t>(std::floor(position));
  const std::size_t upper = std::min(lower + 1, values.size() - 1);
  const double fraction = position - static_cast<double>(lower);
  return values[lower] + fraction * (values[upper] - values[lower]);
}

std::string accuracy_csv(const ExperimentResult& result) {
  std::string csv = "algorithm,ablated,replication,epoch,accuracy\n";
  for (const auto& r : result.rows) {
    csv += std::string(to_string(r.algorithm)) + ',' + std::to_string(r.ablated) + ',' +
           std::to_string(r.replication) + ',' + std::to_string(r.epoch) + ',' + format_number(r.accuracy) + '\n';
  }
  return csv;
}

namespace {

struct EpochSummary {
  Algorithm algorithm;
  std::size_t ablated;
  std::size_t epoch;
  std::size_t count;
  double mean;
  double sd;
  double q05;
  double median;
  double q95;
  double ci_low;
  double ci_high;
};

std::vector<EpochSummary> summarize(const ExperimentResult& result) {
  std::vector<EpochSummary> out;
  std::vector<std::vector<double>> by_epoch;  // regrouped per (algorithm, ablated)
  std::size_t begin = 0;
  const auto& rows = result.rows;
  while (begin < rows.size()) {
    std::size_t end = begin;
    while (end < rows.size() && rows[end].algorithm == rows[begin].algorithm &&
           rows[end].ablated == rows[begin].ablated) {
      ++end;
    }
    std::size_t max_epoch = 0;
    for (std::size_t i = begin; i < end; ++i) max_epoch = std::max(max_epoch, rows[i].epoch);
    by_epoch.assign(max_epoch + 1, {});
    for (std::size_t i = begin; i < end; ++i) by_epoch[rows[i].epoch].push_back(rows[i].accuracy);
    for (std::size_t e = 0; e <= max_epoch; ++e) {
      const auto& v = by_epoch[e];
      if (v.empty()) continue;
      const auto n = static_cast<double>(v.size());
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      const double half = 1.6448536269514722 * sd / std::sqrt(n);  // two-sided 0.9 normal level
      out.push_back({rows[begin].algorithm, rows[begin].ablated, e, v.size(), mean, sd, quantile(v, 0.05),
                     quantile(v, 0.5), quantile(v, 0.95), mean - half, mean + half});
    }
    begin = end;
  }
  return out;
}

}  // namespace

std::string summary_csv(const ExperimentResult& result) {
  std::string csv = "algorithm,ablated,epoch,replications,mean,sd,q05,median,q95,mean_ci90_low,mean_ci90_high\n";
  for (const auto& s : summarize(result)) {
    csv += std::string(to_string(s.algorithm)) + ',' + std::to_string(s.ablated) + ',' + std::to_string(s.epoch) +
           ',' + std::to_string(s.count) + ',' + format_number(s.mean) + ',' + format_number(s.sd) + ',' +
           format_number(s.q05) + ',' + format_number(s.median) + ',' + format_number(s.q95) + ',' +
           format_number(s.ci_low) + ',' + format_number(s.ci_high) + '\n';
  }
  return csv;
}

nlohmann::json summary_json(const ExperimentResult& result) {
  using nlohmann::json;
  const json config = to_json(result.config);
  const auto summaries = summarize(result);

  json finals = json::array();
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    const auto& s = summaries[i];
    const bool last = i + 1 == summaries.size() || summaries[i + 1].algorithm != s.algorithm ||
                      summaries[i + 1].ablated != s.ablated;
    if (!last) continue;
    json entry = {{"algorithm", std::string(to_string(s.algorithm))},
                  {"ablated", s.ablated},
                  {"epoch", s.epoch},
                  {"mean", s.mean},
                  {"q05", s.q05},
                  {"q95", s.q95}};
    json first_95 = nullptr;
    for (std::size_t k = 0; k <= i; ++k) {
      const auto& t = summaries[k];
      if (t.algorithm == s.algorithm && t.ablated == s.ablated && t.mean >= 0.95) {
        first_95 = t.epoch;
        break;
      }
    }
    entry["first_epoch_mean_at_least_0.95"] = first_95;
    finals.push_back(std::move(entry));
  }

  json diagnostics = json::array();
  std::size_t begin = 0;
  const auto& d = result.diagnostics;
  while (begin < d.size()) {
    std::size_t end = begin;
    double disc = 0.0;
    std::size_t disc_count = 0;
    std::vector<double> regret_sum(d[begin].regret.size(), 0.0);
    while (end < d.size() && d[end].algorithm == d[begin].algorithm && d[end].ablated == d[begin].ablated) {
      if (!std::isnan(d[end].network_discrepancy)) {
        disc += d[end].network_discrepancy;
        ++disc_count;
      }
      for (std::size_t j = 0; j < regret_sum.size() && j < d[end].regret.size(); ++j) regret_sum[j] += d[end].regret[j];
      ++end;
    }
    const auto runs = static_cast<double>(end - begin);
    for (auto& r : regret_sum) r /= runs;
    diagnostics.push_back({{"algorithm", std::string(to_string(d[begin].algorithm))},
                           {"ablated", d[begin].ablated},
                           {"mean_network_discrepancy", disc_count ? json(disc / static_cast<double>(disc_count))
                                                                   : json(nullptr)},
                           {"discrepancy_rates", result.config.discrepancy_true_rates ? "true" : "empirical"},
                           {"mean_regret", regret_sum}});
    begin = end;
  }

  return {{"config", config},
          {"config_hash", git_blob_sha1(config.dump(2) + "\n")},
          {"final", finals},
          {"hawkes_runs", diagnostics}};
}

std::string emit_weight_trace(const RunRecord& record, const Topology& topology, const StimulusUniverse& universe,
                              std::size_t stride) {
  if (stride == 0) throw InvalidArgument("weight trace stride must be >= 1");
  if (record.snapshots.empty()) throw InvalidArgument("the run kept no weight snapshots");
  std::string csv = "round";
  for (std::size_t j = 0; j < topology.output_count(); ++j) {
    for (std::size_t c = 0; c < topology.connection_count(j); ++c) {
      csv += ',' + topology.output(j).name + ':' + topology.connection_label(j, c, universe.encoding);
    }
  }
  csv += '\n';
  const std::size_t last = record.snapshot_rounds.back();
  for (std::size_t s = 0; s < record.snapshots.size(); ++s) {
    const std::size_t round = record.snapshot_rounds[s];
    if (round % stride != 0 && round != last) continue;
    csv += std::to_string(round);
    for (const auto& w : record.snapshots[s].per_output) {
      for (double x : w) csv += ',' + format_number(x);
    }
    csv += '\n';
  }
  return csv;
}

std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw Error("could not allocate a digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &length) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("SHA-1 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xf];
  }
  return hex;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.close();
  if (!out) throw Error("could not write " + path.string());
}

}  // namespace

void write_results(const ExperimentResult& result, const std::filesystem::path& out) {
  namespace fs = std::filesystem;
  if (out.empty()) throw ConfigError("out", "an output directory is required");
  const fs::path target = fs::absolute(out).lexically_normal();
  const fs::path parent = target.has_filename() ? target.parent_path() : target.parent_path().parent_path();
  const fs::path final_dir = target.has_filename() ? target : target.parent_path();
  fs::create_directories(parent);
  if (fs::exists(final_dir)) {
    const bool ours = fs::is_directory(final_dir) &&
                      (fs::is_empty(final_dir) || fs::exists(final_dir / "config.json"));
    if (!ours) throw ConfigError("out", final_dir.string() + " exists and does not hold a previous result");
  }

  const fs::path staging =
      parent / ("." + final_dir.filename().string() + ".partial-" + std::to_string(::getpid()));
  fs::remove_all(staging);
  fs::create_directories(staging);
  try {
    const auto summary = summary_json(result);
    write_file(staging / "config.json", to_json(result.config).dump(2) + "\n");
    write_file(staging / "accuracy.csv", accuracy_csv(result));
    write_file(staging / "summary.csv", summary_csv(result));
    write_file(staging / "summary.json", summary.dump(2) + "\n");
    for (std::size_t i = 0; i < result.weight_traces.size(); ++i) {
      write_file(staging / ("weights_" + std::string(to_string(result.weight_trace_algorithms[i])) + ".csv"),
                 result.weight_traces[i]);
    }
    nlohmann::json timings = {{"total_seconds", result.seconds}, {"runs", nlohmann::json::array()}};
    for (const auto& d : result.diagnostics) {
      timings["runs"].push_back({{"algorithm", std::string(to_string(d.algorithm))},
                                 {"replication", d.replication},
                                 {"ablated", d.ablated},
                                 {"seconds", d.seconds}});
    }
    write_file(staging / "timings.json", timings.dump(2) + "\n");
    if (fs::exists(final_dir)) fs::remove_all(final_dir);
    fs::rename(staging, final_dir);
  } catch (...) {
    std::error_code ignored;
    fs::remove_all(staging, ignored);
    throw;
  }
}

ExperimentResult run_preset(const ExperimentConfig& config, const std::filesystem::path& out, std::size_t jobs) {
  ExperimentResult result = run_experiment(config, jobs);
  write_results(result, out);
  return result;
}

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const VerifyCheck& c) { return c.passed; });
}

void print_reports(std::ostream& out, const std::vector<VerifyReport>& reports) {
  for (const auto& report : reports) {
    out << "[" << (report.passed() ? "PASS" : "FAIL") << "] " << report.battery << "\n";
    for (const auto& check : report.checks) {
      out << "  " << (check.passed ? "ok  " : "FAIL") << " " << check.name;
      if (!check.detail.empty()) out << ": " << check.detail;
      out << "\n";
    }
  }
}

}  // namespace han
