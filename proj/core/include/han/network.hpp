#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "han/stimuli.hpp"

namespace han {

class Rng;

enum class ActivationKind { Identity, ClampedLinear };

/// Activation of the output layer. ClampedLinear is min(max(x, 0), 1).
struct Activation {
  ActivationKind kind = ActivationKind::Identity;
  double lipschitz = 1.0;

  static Activation identity() { return {ActivationKind::Identity, 1.0}; }
  static Activation clamped_linear() { return {ActivationKind::ClampedLinear, 1.0}; }

  double operator()(double x) const {
    if (kind == ActivationKind::Identity) return x;
    return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x);
  }
};

enum class Sign : std::uint8_t { Excitatory, Inhibitory };

struct Connection {
  std::size_t input = 0;
  Sign sign = Sign::Excitatory;
};

struct OutputNeuron {
  std::string name;
  double spontaneous_rate = 0.0;
  std::vector<Connection> connections;
};

/// Two-layer network structure. Immutable after construction.
///
/// Construction checks that the kernels are nonnegative and sum to one, that
/// every output has at least one connection, and that the activation maps
/// every reachable pre-activation (any simplex weights, any binary history)
/// into [0, 1].
class Topology {
 public:
  Topology(std::size_t input_count, std::vector<OutputNeuron> outputs, Activation activation,
           std::vector<double> excitatory_kernel, std::vector<double> inhibitory_kernel);

  /// g(k) = 1/K for k = 1..K.
  static std::vector<double> uniform_kernel(std::size_t depth);

  std::size_t input_count() const { return input_count_; }
  std::size_t output_count() const { return outputs_.size(); }
  std::size_t history_depth() const { return depth_; }
  const OutputNeuron& output(std::size_t j) const { return outputs_[j]; }
  const std::vector<OutputNeuron>& outputs() const { return outputs_; }
  std::size_t connection_count(std::size_t j) const { return outputs_[j].connections.size(); }
  const Activation& activation() const { return activation_; }
  /// g_+ or g_-, indexed by lag - 1.
  std::span<const double> kernel(Sign sign) const {
    return sign == Sign::Excitatory ? std::span<const double>(excitatory_kernel_)
                                    : std::span<const double>(inhibitory_kernel_);
  }

  /// Identity activation with no spontaneous rate and only excitatory connections.
  bool solo_regime() const;

  /// Label like "Blue+" or "Circle-" built from the input neuron names.
  std::string connection_label(std::size_t j, std::size_t c, const Encoding& encoding) const;

 private:
  std::size_t input_count_;
  std::vector<OutputNeuron> outputs_;
  Activation activation_;
  std::vector<double> excitatory_kernel_;
  std::vector<double> inhibitory_kernel_;
  std::size_t depth_;
};

/// Network of the two-class example. `Han`: every output sees every input
/// through one excitatory and one inhibitory connection (excitatory block
/// first) under a clamped-linear activation, with spontaneous rates
/// alpha_a / alpha_b. `HanSolo`: excitatory connections only under the
/// identity activation, with no spontaneous activity.
Topology make_concrete_topology(const StimulusUniverse& universe, Variant variant, double alpha_a,
                                double alpha_b, std::size_t depth);

/// Binary spike matrix, one row per neuron, one column per time step.
/// Time steps are 0-based here: step t corresponds to t + 1 in 1-based notation.
class SpikeTrain {
 public:
  SpikeTrain() = default;
  SpikeTrain(std::size_t neurons, std::size_t steps)
      : neurons_(neurons), steps_(steps), bits_(neurons * steps, 0) {}

  std::size_t neurons() const { return neurons_; }
  std::size_t steps() const { return steps_; }

  std::uint8_t operator()(std::size_t neuron, std::size_t t) const { return bits_[neuron * steps_ + t]; }
  std::uint8_t& operator()(std::size_t neuron, std::size_t t) { return bits_[neuron * steps_ + t]; }

  std::span<const std::uint8_t> row(std::size_t neuron) const {
    return {bits_.data() + neuron * steps_, steps_};
  }
  std::span<std::uint8_t> row(std::size_t neuron) { return {bits_.data() + neuron * steps_, steps_}; }

  bool operator==(const SpikeTrain&) const = default;

 private:
  std::size_t neurons_ = 0;
  std::size_t steps_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Debug dump: 16-byte little-endian header (magic "HSPK", u32 neuron count,
/// u64 step count) followed by the row-major bits packed LSB first.
void write_spike_train(std::ostream& out, const SpikeTrain& train);
SpikeTrain read_spike_train(std::istream& in);

/// Fills every row of `inputs` with i.i.d. Bernoulli(rates[i]) draws.
/// Rows are drawn in neuron order; rows with rate 0 or 1 consume no randomness.
void simulate_inputs(std::span<const double> rates, SpikeTrain& inputs, Rng& rng);

/// Conditional spiking probability of output `j` at 0-based step t.
/// Requires t >= K and weights on the simplex of j's connections.
double conditional_rate(const Topology& topology, std::size_t j, std::span<const double> weights,
                        const SpikeTrain& inputs, std::size_t t);

/// Bernoulli(conditional_rate) for every t >= K; steps t < K stay silent.
void simulate_output_han(const Topology& topology, std::size_t j, std::span<const double> weights,
                         const SpikeTrain& inputs, Rng& rng, std::span<std::uint8_t> output);

/// Kalikow sampling: per step, draw a connection from `weights` and a lag
/// from g_+, then copy that input's past spike. When `chosen` is non-empty
/// it receives the sampled connection index per step (-1 for t < K).
/// Requires the solo regime.
void simulate_output_solo(const Topology& topology, std::size_t j, std::span<const double> weights,
                          const SpikeTrain& inputs, Rng& rng, std::span<std::uint8_t> output,
                          std::span<std::int32_t> chosen = {});

/// Throws InvalidArgument unless `weights` is a simplex vector of the given size.
void check_simplex(std::span<const double> weights, std::size_t expected_size,
                   const std::string& what);

/// Reusable per-presentation simulator. Precomputes the per-output input
/// coefficients for a weight state so that the hot loop touches only inputs
/// that can fire for the presented nature.
class PresentationSimulator {
 public:
  PresentationSimulator(const Topology& topology, Variant variant, std::size_t steps);

  /// Loads the weights used for the next presentations (one vector per output).
  void set_weights(const std::vector<std::vector<double>>& weights);

  /// Simulates one presentation. Input rows land in `inputs()`, output rows in
  /// `outputs()`. In solo mode the chosen connection per step is kept when
  /// `trace_experts` is true.
  void run(std::span<const double> input_rates, Rng& rng, bool trace_experts = false);

  const SpikeTrain& inputs() const { return inputs_; }
  const SpikeTrain& outputs() const { return outputs_; }
  /// Spike count of every output over the presentation.
  std::vector<std::uint32_t> output_counts() const;
  /// N^{i->j}: number of output spikes of j emitted after copying connection c.
  std::vector<std::uint32_t> copied_spike_counts(std::size_t j) const;

 private:
  const Topology& topology_;
  Variant variant_;
  std::size_t steps_;
  SpikeTrain inputs_;
  SpikeTrain outputs_;
  std::vector<std::vector<std::int32_t>> chosen_;
  // HAN: net coefficient per (output, input, sign).
  std::vector<std::vector<double>> excitatory_coeff_;
  std::vector<std::vector<double>> inhibitory_coeff_;
  // Solo: cumulative weights per output.
  std::vector<std::vector<double>> cdf_;
  std::vector<double> lag_cdf_;
  std::vector<std::size_t> active_;
};

}  // namespace han
