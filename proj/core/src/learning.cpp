#include "han/learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "han/error.hpp"
#include "han/rng.hpp"

namespace han {

WeightState WeightState::uniform(const Topology& topology) {
  WeightState state;
  for (std::size_t j = 0; j < topology.output_count(); ++j) {
    const std::size_t n = topology.connection_count(j);
    state.per_output.emplace_back(n, 1.0 / static_cast<double>(n));
  }
  return state;
}

void WeightState::validate(const Topology& topology) const {
  if (per_output.size() != topology.output_count()) {
    throw InvalidArgument("weight state has " + std::to_string(per_output.size()) + " outputs, topology " +
                          std::to_string(topology.output_count()));
  }
  for (std::size_t j = 0; j < per_output.size(); ++j) {
    check_simplex(per_output[j], topology.connection_count(j), "weights of output " + std::to_string(j));
  }
}

GainLedger GainLedger::zero(const Topology& topology) {
  GainLedger ledger;
  for (std::size_t j = 0; j < topology.output_count(); ++j) {
    ledger.last_gain.emplace_back(topology.connection_count(j), 0.0);
    ledger.cumulative.emplace_back(topology.connection_count(j), 0.0);
  }
  ledger.forecaster.assign(topology.output_count(), 0.0);
  return ledger;
}

void GainLedger::record(std::size_t j, std::span<const double> gains, std::span<const double> weights) {
  auto& last = last_gain.at(j);
  auto& total = cumulative.at(j);
  if (gains.size() != total.size() || weights.size() != total.size()) {
    throw InvalidArgument("gain ledger: size mismatch for output " + std::to_string(j));
  }
  double played = 0.0;
  for (std::size_t c = 0; c < gains.size(); ++c) {
    if (!std::isfinite(gains[c])) throw InvalidArgument("non-finite gain");
    last[c] = gains[c];
    total[c] += gains[c];
    played += weights[c] * gains[c];
    if (rounds == 0 && j == 0 && c == 0) {
      min_gain = max_gain = gains[c];
    } else {
      min_gain = std::min(min_gain, gains[c]);
      max_gain = std::max(max_gain, gains[c]);
    }
  }
  forecaster[j] += played;
}

double empirical_rate(std::span<const std::uint8_t> row) {
  if (row.empty()) throw InvalidArgument("empirical_rate of an empty row");
  std::size_t spikes = 0;
  for (auto x : row) spikes += x;
  return static_cast<double>(spikes) / static_cast<double>(row.size());
}

std::string_view to_string(GainMode mode) {
  switch (mode) {
    case GainMode::Oracle: return "oracle";
    case GainMode::Running: return "running";
    case GainMode::SoloCounts: return "solo_counts";
  }
  return "oracle";
}

GainMode gain_mode_from_string(std::string_view text) {
  if (text == "oracle") return GainMode::Oracle;
  if (text == "running") return GainMode::Running;
  if (text == "solo_counts") return GainMode::SoloCounts;
  throw InvalidArgument("unknown gain mode '" + std::string(text) + "'");
}

double excitatory_gain(double rate, ClassId presented, ClassId target, double factor,
                       std::size_t output_count) {
  if (output_count < 2) throw InvalidArgument("gain needs at least two output neurons");
  if (factor == 0.0 || rate == 0.0) return 0.0;
  if (presented == target) return rate * factor;
  return -rate * factor / static_cast<double>(output_count - 1);
}

double class_factor(GainMode mode, const Schedule& schedule, std::size_t round,
                    std::span<const std::size_t> seen) {
  const ClassId presented = schedule.classes.at(round);
  if (mode == GainMode::Running) {
    const std::size_t count = seen[presented];
    if (count == 0) return 0.0;
    return static_cast<double>(round + 1) / static_cast<double>(count);
  }
  const std::size_t count = schedule.class_counts[presented];
  return static_cast<double>(schedule.size()) / static_cast<double>(count);
}

std::string_view to_string(LearningRate::Kind kind) {
  switch (kind) {
    case LearningRate::Kind::Fixed: return "fixed";
    case LearningRate::Kind::Theorem2: return "theorem2_default";
    case LearningRate::Kind::Figure2Caption: return "figure2_caption";
    case LearningRate::Kind::RegretTuned: return "regret_tuned";
    case LearningRate::Kind::TimeDependent: return "time_dependent";
  }
  return "fixed";
}

LearningRate::Kind learning_rate_kind_from_string(std::string_view text) {
  if (text == "fixed") return LearningRate::Kind::Fixed;
  if (text == "theorem2_default") return LearningRate::Kind::Theorem2;
  if (text == "figure2_caption") return LearningRate::Kind::Figure2Caption;
  if (text == "regret_tuned") return LearningRate::Kind::RegretTuned;
  if (text == "time_dependent") return LearningRate::Kind::TimeDependent;
  throw InvalidArgument("unknown learning rate '" + std::string(text) + "'");
}

ExponentiallyWeightedAverage::ExponentiallyWeightedAverage(LearningRate rate, LearningContext context)
    : rate_(rate), context_(context) {
  if (rate_.kind == LearningRate::Kind::Fixed && !(rate_.value > 0.0)) {
    throw InvalidArgument("EWA learning rate must be > 0");
  }
  const bool needs_horizon = rate_.kind == LearningRate::Kind::Theorem2 ||
                             rate_.kind == LearningRate::Kind::Figure2Caption ||
                             rate_.kind == LearningRate::Kind::RegretTuned;
  if (needs_horizon && context_.rounds == 0) {
    // Nothing will be learned; any positive rate is equivalent.
    rate_ = LearningRate::fixed(1.0);
  }
  if ((rate_.kind == LearningRate::Kind::Theorem2 || rate_.kind == LearningRate::Kind::Figure2Caption) &&
      context_.nature_count == 0) {
    throw InvalidArgument("EWA learning rate needs the number of natures");
  }
  if ((rate_.kind == LearningRate::Kind::RegretTuned || rate_.kind == LearningRate::Kind::TimeDependent) &&
      !(context_.gain_range > 0.0)) {
    throw InvalidArgument("EWA learning rate needs a positive gain range b - a");
  }
}

double ExponentiallyWeightedAverage::eta(std::size_t experts, std::size_t rounds_completed) const {
  const double log_experts = std::log(static_cast<double>(std::max<std::size_t>(experts, 1)));
  const auto horizon = static_cast<double>(context_.rounds);
  const auto natures = static_cast<double>(context_.nature_count);
  switch (rate_.kind) {
    case LearningRate::Kind::Fixed:
      return rate_.value;
    case LearningRate::Kind::Theorem2:
      return std::sqrt(2.0 * log_experts / horizon) / natures;
    case LearningRate::Kind::Figure2Caption:
      if (log_experts == 0.0) return 0.0;
      return 1.0 / (natures * std::sqrt(2.0 * log_experts / horizon));
    case LearningRate::Kind::RegretTuned:
      return std::sqrt(8.0 * log_experts / horizon) / context_.gain_range;
    case LearningRate::Kind::TimeDependent:
      return std::sqrt(8.0 * log_experts / static_cast<double>(rounds_completed + 1)) / context_.gain_range;
  }
  return rate_.value;
}

void softmax_weights(std::span<const double> cumulative, double eta, std::span<double> weights) {
  double top = -std::numeric_limits<double>::infinity();
  for (double g : cumulative) {
    if (!std::isfinite(g)) throw InvalidArgument("EWA: non-finite cumulated gain");
    top = std::max(top, eta * g);
  }
  double total = 0.0;
  for (std::size_t c = 0; c < cumulative.size(); ++c) {
    weights[c] = std::exp(eta * cumulative[c] - top);
    total += weights[c];
  }
  for (auto& w : weights) w /= total;
}

void ExponentiallyWeightedAverage::update(std::size_t /*j*/, std::span<const double> expert_cumulative,
                                          double /*forecaster_cumulative*/, std::size_t rounds_completed,
                                          std::span<double> weights) const {
  softmax_weights(expert_cumulative, eta(expert_cumulative.size(), rounds_completed), weights);
}

PolynomiallyWeightedAverage::PolynomiallyWeightedAverage(double beta) : beta_(beta) {
  if (!(beta_ >= 2.0) || !std::isfinite(beta_)) throw InvalidArgument("PWA needs beta >= 2");
}

void PolynomiallyWeightedAverage::update(std::size_t /*j*/, std::span<const double> expert_cumulative,
                                         double forecaster_cumulative, std::size_t /*rounds_completed*/,
                                         std::span<double> weights) const {
  if (!std::isfinite(forecaster_cumulative)) throw InvalidArgument("PWA: non-finite forecaster gain");
  double top = 0.0;
  for (double g : expert_cumulative) {
    if (!std::isfinite(g)) throw InvalidArgument("PWA: non-finite cumulated gain");
    top = std::max(top, g - forecaster_cumulative);
  }
  if (top <= 0.0) return;  // every expert is weakly outclassed: keep the previous weights
  double total = 0.0;
  std::vector<double> next(expert_cumulative.size());
  for (std::size_t c = 0; c < next.size(); ++c) {
    const double regret = expert_cumulative[c] - forecaster_cumulative;
    next[c] = regret > 0.0 ? std::pow(regret / top, beta_ - 1.0) : 0.0;
    total += next[c];
  }
  for (std::size_t c = 0; c < next.size(); ++c) weights[c] = next[c] / total;
}

ClassId classify(std::span<const std::uint32_t> counts, Rng& rng) {
  if (counts.empty()) throw InvalidArgument("classify needs at least one output neuron");
  const auto top = *std::max_element(counts.begin(), counts.end());
  std::size_t ties = 0;
  for (auto c : counts) ties += c == top;
  if (ties == 1) {
    return static_cast<ClassId>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
  auto pick = rng.below(ties);
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] == top && pick-- == 0) return j;
  }
  return 0;
}

namespace {

void validate_run_inputs(const Topology& topology, const StimulusUniverse& universe, const Schedule& schedule,
                         const LearningOptions& options) {
  if (universe.encoding.neuron_count() != topology.input_count()) {
    throw InvalidArgument("encoding has " + std::to_string(universe.encoding.neuron_count()) +
                          " input neurons, topology " + std::to_string(topology.input_count()));
  }
  if (universe.class_count() != topology.output_count()) {
    throw InvalidArgument("one output neuron per class is required");
  }
  if (topology.output_count() < 2) throw InvalidArgument("learning needs at least two classes");
  if (schedule.classes.size() != schedule.order.size()) throw InvalidArgument("malformed schedule");
  if (options.gain_mode == GainMode::SoloCounts && options.variant != Variant::HanSolo) {
    throw InvalidArgument("the copied-spike gain exists only in solo mode");
  }
  if (schedule.class_counts.size() != universe.class_count()) {
    throw InvalidArgument("schedule was built for another universe");
  }
}

}  // namespace

RunRecord run_learning_phase(const Topology& topology, const StimulusUniverse& universe,
                             const Schedule& schedule, const Aggregator& aggregator,
                             const LearningOptions& options, Rng& rng) {
  validate_run_inputs(topology, universe, schedule, options);
  PresentationSimulator simulator(topology, options.variant, options.steps);

  RunRecord record;
  record.variant = options.variant;
  record.aggregator = aggregator.name();
  record.gain_mode = options.gain_mode;
  record.steps = options.steps;
  record.input_count = topology.input_count();
  record.output_count = topology.output_count();
  const std::size_t rounds = schedule.size();
  record.natures.reserve(rounds);
  record.classes.reserve(rounds);
  record.predictions.reserve(rounds);
  record.input_rates.reserve(rounds * topology.input_count());
  record.output_counts.reserve(rounds * topology.output_count());
  record.gains.reserve(rounds);

  WeightState weights = WeightState::uniform(topology);
  GainLedger ledger = GainLedger::zero(topology);
  const auto keep_snapshot = [&](std::size_t completed) {
    const std::size_t stride = options.weight_snapshot_stride;
    if (stride == 0) return;
    if (completed % stride == 0 || completed == rounds) {
      record.snapshot_rounds.push_back(completed);
      record.snapshots.push_back(weights);
    }
  };
  keep_snapshot(0);
  if (options.on_round) options.on_round(0, weights);

  std::vector<std::size_t> seen(universe.class_count(), 0);
  std::vector<double> input_rates(topology.input_count());
  std::vector<double> gains;
  const bool solo_counts = options.gain_mode == GainMode::SoloCounts;

  for (std::size_t m = 0; m < rounds; ++m) {
    const std::size_t nature = schedule.order[m];
    const ClassId presented = schedule.classes[m];
    std::size_t current_output = 0;
    try {
      ++seen[presented];
      simulator.set_weights(weights.per_output);
      simulator.run(universe.encoding.rates_for(nature), rng, solo_counts);

      for (std::size_t i = 0; i < topology.input_count(); ++i) {
        input_rates[i] = empirical_rate(simulator.inputs().row(i));
      }
      const auto counts = simulator.output_counts();
      record.natures.push_back(nature);
      record.classes.push_back(presented);
      record.predictions.push_back(classify(counts, rng));
      record.input_rates.insert(record.input_rates.end(), input_rates.begin(), input_rates.end());
      record.output_counts.insert(record.output_counts.end(), counts.begin(), counts.end());

      const double factor = class_factor(options.gain_mode, schedule, m, seen);
      std::vector<double> round_gains;
      for (std::size_t j = 0; j < topology.output_count(); ++j) {
        current_output = j;
        const auto& connections = topology.output(j).connections;
        const auto& w = weights.per_output[j];
        gains.assign(connections.size(), 0.0);
        std::vector<std::uint32_t> copied;
        if (solo_counts) copied = simulator.copied_spike_counts(j);
        for (std::size_t c = 0; c < connections.size(); ++c) {
          double rate = input_rates[connections[c].input];
          if (solo_counts) {
            if (w[c] <= 0.0) continue;
            rate = static_cast<double>(copied[c]) / (static_cast<double>(options.steps) * w[c]);
          }
          const double g = excitatory_gain(rate, presented, j, factor, topology.output_count());
          gains[c] = connections[c].sign == Sign::Excitatory ? g : -g;
        }
        ledger.record(j, gains, w);
        round_gains.insert(round_gains.end(), gains.begin(), gains.end());
      }
      ledger.advance();
      record.gains.push_back(std::move(round_gains));

      for (std::size_t j = 0; j < topology.output_count(); ++j) {
        current_output = j;
        aggregator.update(j, ledger.cumulative[j], ledger.forecaster[j], m + 1, weights.per_output[j]);
      }
    } catch (const Error& e) {
      throw Error("learning phase failed at round m=" + std::to_string(m + 1) + ", output j=" +
                  std::to_string(current_output) + ": " + e.what());
    }
    keep_snapshot(m + 1);
    if (options.on_round) options.on_round(m + 1, weights);
  }

  record.final_weights = std::move(weights);
  record.ledger = std::move(ledger);
  return record;
}

Evaluator::Evaluator(const Topology& topology, const StimulusUniverse& universe, Variant variant,
                     std::size_t steps)
    : topology_(topology), universe_(universe), simulator_(topology, variant, steps) {}

double Evaluator::accuracy(const WeightState& weights, std::span<const std::size_t> test_natures, Rng& rng) {
  if (test_natures.empty()) throw InvalidArgument("evaluate: empty test set");
  weights.validate(topology_);
  simulator_.set_weights(weights.per_output);
  std::size_t correct = 0;
  for (std::size_t o : test_natures) {
    simulator_.run(universe_.encoding.rates_for(o), rng);
    const auto counts = simulator_.output_counts();
    if (classify(counts, rng) == universe_.natures.at(o).class_label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_natures.size());
}

double evaluate(const WeightState& weights, const Topology& topology, const StimulusUniverse& universe,
                std::span<const std::size_t> test_natures, std::size_t steps, Variant variant, Rng& rng) {
  Evaluator evaluator(topology, universe, variant, steps);
  return evaluator.accuracy(weights, test_natures, rng);
}

void to_json(nlohmann::json& j, const RunRecord& r) {
  std::size_t correct = 0;
  for (std::size_t m = 0; m < r.rounds(); ++m) correct += r.predictions[m] == r.classes[m];
  j = nlohmann::json{
      {"variant", to_string(r.variant)},
      {"aggregator", r.aggregator},
      {"gain_mode", to_string(r.gain_mode)},
      {"steps", r.steps},
      {"rounds", r.rounds()},
      {"inputs", r.input_count},
      {"outputs", r.output_count},
      {"training_accuracy", r.rounds() ? static_cast<double>(correct) / static_cast<double>(r.rounds()) : 0.0},
      {"final_weights", r.final_weights.per_output},
      {"cumulated_gains", r.ledger.cumulative},
      {"forecaster_gains", r.ledger.forecaster},
      {"gain_range", {r.ledger.min_gain, r.ledger.max_gain}},
  };
}

}  // namespace han
