#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "han/network.hpp"
#include "han/stimuli.hpp"

namespace han {

class Rng;

/// Per-output probability vectors over the output's connections.
struct WeightState {
  std::vector<std::vector<double>> per_output;

  static WeightState uniform(const Topology& topology);
  /// Throws InvalidArgument unless every vector is a simplex point of the right size.
  void validate(const Topology& topology) const;

  bool operator==(const WeightState&) const = default;
};

/// Gains of the last round and cumulated gains G^{i->j}_m and G^j_m.
struct GainLedger {
  std::vector<std::vector<double>> last_gain;
  std::vector<std::vector<double>> cumulative;   // G^{i->j}_m per connection
  std::vector<double> forecaster;                // G^j_m
  std::size_t rounds = 0;
  double min_gain = 0.0;
  double max_gain = 0.0;

  static GainLedger zero(const Topology& topology);

  /// Absorbs the gains of output j for the current round, played with `weights`.
  void record(std::size_t j, std::span<const double> gains, std::span<const double> weights);
  /// Closes the current round.
  void advance() { ++rounds; }
};

/// Mean of a spike row.
double empirical_rate(std::span<const std::uint8_t> row);

/// How M / M^j is obtained in the gain formula.
enum class GainMode {
  Oracle,      // M / M^j from the full schedule
  Running,     // m / m^j counted up to and including the current round
  SoloCounts,  // solo only: N^{i->j} / (N w^{i->j}) replaces the input rate
};

std::string_view to_string(GainMode mode);
GainMode gain_mode_from_string(std::string_view text);

/// Gain of the excitatory connection from an input with empirical rate
/// `rate` to output `target` when an object of class `presented` was shown.
/// The inhibitory gain is its negation. A `class_factor` of 0 (class not yet
/// seen by the running estimator) yields gain 0.
double excitatory_gain(double rate, ClassId presented, ClassId target, double class_factor,
                       std::size_t output_count);

/// Class factor M/M^j (oracle) or m/m^j (running) for the class shown at
/// 0-based round `round`. `seen` holds the running per-class counts
/// including the current round.
double class_factor(GainMode mode, const Schedule& schedule, std::size_t round,
                    std::span<const std::size_t> seen);

/// Learning-rate choice for EWA.
struct LearningRate {
  enum class Kind {
    Fixed,          // `value`
    Theorem2,       // (1/|O|) sqrt(2 ln|I^j| / M)
    Figure2Caption, // (1/|O|) (2 ln|I^j| / M)^{-1/2}
    RegretTuned,    // (1/(b-a)) sqrt(8 ln|I^j| / M)
    TimeDependent,  // (1/(b-a)) sqrt(8 ln|I^j| / m), re-evaluated every round
  };
  Kind kind = Kind::Theorem2;
  double value = 0.0;

  static LearningRate fixed(double eta) { return {Kind::Fixed, eta}; }
};

std::string_view to_string(LearningRate::Kind kind);
LearningRate::Kind learning_rate_kind_from_string(std::string_view text);

/// Sizes needed to resolve a learning rate.
struct LearningContext {
  std::size_t rounds = 0;        // M
  std::size_t nature_count = 0;  // |O|
  double gain_range = 1.0;       // b - a
};

/// Expert aggregation rule f: maps (G^j_m, G^{.->j}_m) to w^j_{m+1}.
class Aggregator {
 public:
  virtual ~Aggregator() = default;
  virtual std::string name() const = 0;
  /// `weights` holds w^j_m on entry and w^j_{m+1} on exit; `rounds_completed` is m.
  virtual void update(std::size_t j, std::span<const double> expert_cumulative,
                      double forecaster_cumulative, std::size_t rounds_completed,
                      std::span<double> weights) const = 0;
};

/// Exponentially weighted average, evaluated as a max-stabilized softmax of
/// eta * G so that shifting every G by a constant leaves the weights unchanged.
class ExponentiallyWeightedAverage final : public Aggregator {
 public:
  ExponentiallyWeightedAverage(LearningRate rate, LearningContext context);

  std::string name() const override { return "ewa"; }
  void update(std::size_t j, std::span<const double> expert_cumulative, double forecaster_cumulative,
              std::size_t rounds_completed, std::span<double> weights) const override;

  /// Learning rate used to produce w_{m+1} for an output with `experts` connections.
  double eta(std::size_t experts, std::size_t rounds_completed) const;

 private:
  LearningRate rate_;
  LearningContext context_;
};

/// Polynomially weighted average with exponent beta - 1 on the clipped
/// regrets (G^{i->j} - G^j)_+. Keeps the previous weights when every
/// clipped regret is zero.
class PolynomiallyWeightedAverage final : public Aggregator {
 public:
  explicit PolynomiallyWeightedAverage(double beta);

  std::string name() const override { return "pwa"; }
  void update(std::size_t j, std::span<const double> expert_cumulative, double forecaster_cumulative,
              std::size_t rounds_completed, std::span<double> weights) const override;

  double beta() const { return beta_; }

 private:
  double beta_;
};

/// Softmax of eta * cumulative with max subtraction, written into `weights`.
void softmax_weights(std::span<const double> cumulative, double eta, std::span<double> weights);

/// Argmax of spike counts; ties are broken uniformly at random with `rng`.
ClassId classify(std::span<const std::uint32_t> counts, Rng& rng);

struct LearningOptions {
  Variant variant = Variant::Han;
  GainMode gain_mode = GainMode::Oracle;
  std::size_t steps = 1000;                 // N
  std::size_t weight_snapshot_stride = 0;   // 0 keeps no snapshot
  /// Called with (rounds completed, weights for the next round) after every
  /// update, and once with 0 before the first round.
  std::function<void(std::size_t, const WeightState&)> on_round;
};

/// Everything a learning phase produced. Immutable once returned.
struct RunRecord {
  Variant variant = Variant::Han;
  std::string aggregator;
  GainMode gain_mode = GainMode::Oracle;
  std::size_t steps = 0;
  std::size_t input_count = 0;
  std::size_t output_count = 0;

  std::vector<std::size_t> natures;        // o(m)
  std::vector<ClassId> classes;            // class of o(m)
  std::vector<ClassId> predictions;        // argmax classification of round m
  std::vector<double> input_rates;         // rounds x inputs, p-hat^i_m
  std::vector<std::uint32_t> output_counts;  // rounds x outputs
  std::vector<std::vector<double>> gains;  // rounds x (flattened connections of every output)

  std::vector<std::size_t> snapshot_rounds;  // m - 1 of each snapshot: 0 is the initial state
  std::vector<WeightState> snapshots;
  WeightState final_weights;
  GainLedger ledger;

  std::size_t rounds() const { return natures.size(); }
  double input_rate(std::size_t m, std::size_t i) const { return input_rates[m * input_count + i]; }
  double output_rate(std::size_t m, std::size_t j) const {
    return static_cast<double>(output_counts[m * output_count + j]) / static_cast<double>(steps);
  }
};

/// Runs the learning phase over `schedule`. Errors are rethrown with the
/// round and output they occurred at.
RunRecord run_learning_phase(const Topology& topology, const StimulusUniverse& universe,
                             const Schedule& schedule, const Aggregator& aggregator,
                             const LearningOptions& options, Rng& rng);

/// Fraction of `test_natures` classified into their own class with frozen weights.
double evaluate(const WeightState& weights, const Topology& topology, const StimulusUniverse& universe,
                std::span<const std::size_t> test_natures, std::size_t steps, Variant variant, Rng& rng);

/// Reusable evaluator: avoids reallocating the simulator across the
/// per-epoch evaluations of one run.
class Evaluator {
 public:
  Evaluator(const Topology& topology, const StimulusUniverse& universe, Variant variant, std::size_t steps);
  double accuracy(const WeightState& weights, std::span<const std::size_t> test_natures, Rng& rng);

 private:
  const Topology& topology_;
  const StimulusUniverse& universe_;
  PresentationSimulator simulator_;
};

void to_json(nlohmann::json& j, const RunRecord& record);

}  // namespace han
