#include "han/network.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>

#include "han/error.hpp"
#include "han/rng.hpp"

namespace han {

namespace {

constexpr double kSimplexTolerance = 1e-9;
constexpr char kSpikeMagic[4] = {'H', 'S', 'P', 'K'};

void check_kernel(const std::vector<double>& kernel, const char* which) {
  if (kernel.empty()) throw InvalidArgument(std::string(which) + " kernel is empty");
  double total = 0.0;
  for (double g : kernel) {
    if (!(g >= 0.0) || !std::isfinite(g)) {
      throw InvalidArgument(std::string(which) + " kernel has a negative or non-finite entry");
    }
    total += g;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw InvalidArgument(std::string(which) + " kernel must sum to 1");
  }
}

// Pre-activation of output j at step t from per-input coefficients.
double preactivation(const Topology& topology, std::size_t j, const SpikeTrain& inputs,
                     std::span<const std::size_t> active, std::span<const double> excitatory,
                     std::span<const double> inhibitory, std::size_t t) {
  const auto g_plus = topology.kernel(Sign::Excitatory);
  const auto g_minus = topology.kernel(Sign::Inhibitory);
  const std::size_t depth = topology.history_depth();
  double x = topology.output(j).spontaneous_rate;
  for (std::size_t i : active) {
    const double a = excitatory[i];
    const double b = inhibitory[i];
    if (a == 0.0 && b == 0.0) continue;
    const auto row = inputs.row(i);
    if (depth == 1) {
      if (row[t - 1]) x += a - b;
      continue;
    }
    double plus = 0.0;
    double minus = 0.0;
    for (std::size_t k = 1; k <= depth; ++k) {
      if (row[t - k]) {
        plus += g_plus[k - 1];
        minus += g_minus[k - 1];
      }
    }
    x += a * plus - b * minus;
  }
  return x;
}

void build_coefficients(const Topology& topology, std::size_t j, std::span<const double> weights,
                        std::vector<double>& excitatory, std::vector<double>& inhibitory) {
  excitatory.assign(topology.input_count(), 0.0);
  inhibitory.assign(topology.input_count(), 0.0);
  const auto& connections = topology.output(j).connections;
  for (std::size_t c = 0; c < connections.size(); ++c) {
    auto& target = connections[c].sign == Sign::Excitatory ? excitatory : inhibitory;
    target[connections[c].input] += weights[c];
  }
}

// Sentinel-terminated CDF: entries from the last positive weight on are 2.0
// so that an upper_bound never lands on a zero-weight tail.
void build_cdf(std::span<const double> weights, std::vector<double>& cdf) {
  cdf.assign(weights.size(), 0.0);
  double total = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t c = 0; c < weights.size(); ++c) {
    total += weights[c];
    cdf[c] = total;
    if (weights[c] > 0.0) last_positive = c;
  }
  for (std::size_t c = 0; c < weights.size(); ++c) {
    cdf[c] = c >= last_positive ? 2.0 : cdf[c] / total;
  }
}

std::size_t sample_cdf(const std::vector<double>& cdf, double u) {
  if (cdf.size() <= 8) {
    std::size_t c = 0;
    while (cdf[c] <= u) ++c;
    return c;
  }
  return static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
}

void check_solo(const Topology& topology) {
  if (!topology.solo_regime()) {
    throw InvalidArgument(
        "solo sampling needs identity activation, zero spontaneous rates and no inhibitory "
        "connections");
  }
}

void run_han_output(const Topology& topology, std::size_t j, const SpikeTrain& inputs,
                    std::span<const std::size_t> active, std::span<const double> excitatory,
                    std::span<const double> inhibitory, Rng& rng, std::span<std::uint8_t> output) {
  const std::size_t depth = topology.history_depth();
  const auto& phi = topology.activation();
  std::fill(output.begin(), output.begin() + static_cast<std::ptrdiff_t>(std::min(depth, output.size())), 0);
  for (std::size_t t = depth; t < output.size(); ++t) {
    const double rate = phi(preactivation(topology, j, inputs, active, excitatory, inhibitory, t));
    output[t] = rng.bernoulli(rate) ? 1 : 0;
  }
}

void run_solo_output(const Topology& topology, std::span<const Connection> connections,
                     const std::vector<double>& cdf, const std::vector<double>& lag_cdf,
                     const SpikeTrain& inputs, Rng& rng, std::span<std::uint8_t> output,
                     std::span<std::int32_t> chosen) {
  const std::size_t depth = topology.history_depth();
  for (std::size_t t = 0; t < std::min(depth, output.size()); ++t) {
    output[t] = 0;
    if (!chosen.empty()) chosen[t] = -1;
  }
  for (std::size_t t = depth; t < output.size(); ++t) {
    const std::size_t c = sample_cdf(cdf, rng.uniform());
    const std::size_t lag = depth == 1 ? 1 : sample_cdf(lag_cdf, rng.uniform()) + 1;
    output[t] = inputs(connections[c].input, t - lag);
    if (!chosen.empty()) chosen[t] = static_cast<std::int32_t>(c);
  }
}

std::vector<std::size_t> all_inputs(std::size_t count) {
  std::vector<std::size_t> v(count);
  for (std::size_t i = 0; i < count; ++i) v[i] = i;
  return v;
}

}  // namespace

Topology::Topology(std::size_t input_count, std::vector<OutputNeuron> outputs, Activation activation,
                   std::vector<double> excitatory_kernel, std::vector<double> inhibitory_kernel)
    : input_count_(input_count),
      outputs_(std::move(outputs)),
      activation_(activation),
      excitatory_kernel_(std::move(excitatory_kernel)),
      inhibitory_kernel_(std::move(inhibitory_kernel)),
      depth_(excitatory_kernel_.size()) {
  if (input_count_ == 0) throw InvalidArgument("topology has no input neuron");
  if (outputs_.empty()) throw InvalidArgument("topology has no output neuron");
  check_kernel(excitatory_kernel_, "excitatory");
  check_kernel(inhibitory_kernel_, "inhibitory");
  if (inhibitory_kernel_.size() != depth_) {
    throw InvalidArgument("excitatory and inhibitory kernels must share the history depth K");
  }
  for (const auto& out : outputs_) {
    if (out.connections.empty()) {
      throw InvalidArgument("output '" + out.name + "' has no connection");
    }
    if (!std::isfinite(out.spontaneous_rate) || out.spontaneous_rate < 0.0) {
      throw InvalidArgument("output '" + out.name + "' needs a finite spontaneous rate >= 0");
    }
    std::set<std::pair<std::size_t, Sign>> seen;
    bool has_excitatory = false;
    bool has_inhibitory = false;
    for (const auto& c : out.connections) {
      if (c.input >= input_count_) {
        throw InvalidArgument("output '" + out.name + "' connects to unknown input");
      }
      if (!seen.insert({c.input, c.sign}).second) {
        throw InvalidArgument("output '" + out.name + "' has a duplicated connection");
      }
      (c.sign == Sign::Excitatory ? has_excitatory : has_inhibitory) = true;
    }
    // Interval of the pre-activation over all simplex weights and histories.
    const double low = out.spontaneous_rate - (has_inhibitory ? 1.0 : 0.0);
    const double high = out.spontaneous_rate + (has_excitatory ? 1.0 : 0.0);
    if (activation_.kind == ActivationKind::Identity && (low < 0.0 || high > 1.0)) {
      throw InvalidArgument("output '" + out.name +
                            "': identity activation can leave [0,1] on the reachable range [" +
                            std::to_string(low) + ", " + std::to_string(high) + "]");
    }
  }
}

std::vector<double> Topology::uniform_kernel(std::size_t depth) {
  if (depth == 0) throw InvalidArgument("history depth K must be >= 1");
  return std::vector<double>(depth, 1.0 / static_cast<double>(depth));
}

bool Topology::solo_regime() const {
  if (activation_.kind != ActivationKind::Identity) return false;
  for (const auto& out : outputs_) {
    if (out.spontaneous_rate != 0.0) return false;
    for (const auto& c : out.connections) {
      if (c.sign == Sign::Inhibitory) return false;
    }
  }
  return true;
}

std::string Topology::connection_label(std::size_t j, std::size_t c, const Encoding& encoding) const {
  const auto& conn = outputs_.at(j).connections.at(c);
  std::string base = conn.input < encoding.neuron_count() ? encoding.neurons()[conn.input].name
                                                          : "in" + std::to_string(conn.input);
  return base + (conn.sign == Sign::Excitatory ? "+" : "-");
}

Topology make_concrete_topology(const StimulusUniverse& universe, Variant variant, double alpha_a,
                                double alpha_b, std::size_t depth) {
  const std::size_t inputs = universe.encoding.neuron_count();
  std::vector<OutputNeuron> outputs;
  for (ClassId j = 0; j < universe.class_count(); ++j) {
    OutputNeuron out;
    out.name = universe.class_names[j];
    if (variant == Variant::Han) {
      out.spontaneous_rate = j == 0 ? alpha_a : alpha_b;
      for (std::size_t i = 0; i < inputs; ++i) out.connections.push_back({i, Sign::Excitatory});
      for (std::size_t i = 0; i < inputs; ++i) out.connections.push_back({i, Sign::Inhibitory});
    } else {
      for (std::size_t i = 0; i < inputs; ++i) out.connections.push_back({i, Sign::Excitatory});
    }
    outputs.push_back(std::move(out));
  }
  const Activation phi = variant == Variant::Han ? Activation::clamped_linear() : Activation::identity();
  return Topology(inputs, std::move(outputs), phi, Topology::uniform_kernel(depth),
                  Topology::uniform_kernel(depth));
}

void write_spike_train(std::ostream& out, const SpikeTrain& train) {
  unsigned char header[16] = {};
  std::copy(std::begin(kSpikeMagic), std::end(kSpikeMagic), header);
  const auto neurons = static_cast<std::uint32_t>(train.neurons());
  const auto steps = static_cast<std::uint64_t>(train.steps());
  for (int b = 0; b < 4; ++b) header[4 + b] = static_cast<unsigned char>(neurons >> (8 * b));
  for (int b = 0; b < 8; ++b) header[8 + b] = static_cast<unsigned char>(steps >> (8 * b));
  out.write(reinterpret_cast<const char*>(header), sizeof header);

  const std::size_t total = train.neurons() * train.steps();
  std::vector<unsigned char> packed((total + 7) / 8, 0);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < train.neurons(); ++i) {
    for (std::size_t t = 0; t < train.steps(); ++t, ++bit) {
      if (train(i, t)) packed[bit / 8] |= static_cast<unsigned char>(1u << (bit % 8));
    }
  }
  out.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
  if (!out) throw Error("failed to write spike train");
}

SpikeTrain read_spike_train(std::istream& in) {
  unsigned char header[16];
  if (!in.read(reinterpret_cast<char*>(header), sizeof header)) {
    throw Error("truncated spike train header");
  }
  if (!std::equal(std::begin(kSpikeMagic), std::end(kSpikeMagic), header)) {
    throw Error("bad spike train magic");
  }
  std::uint32_t neurons = 0;
  std::uint64_t steps = 0;
  for (int b = 0; b < 4; ++b) neurons |= static_cast<std::uint32_t>(header[4 + b]) << (8 * b);
  for (int b = 0; b < 8; ++b) steps |= static_cast<std::uint64_t>(header[8 + b]) << (8 * b);
  SpikeTrain train(neurons, static_cast<std::size_t>(steps));
  const std::size_t total = train.neurons() * train.steps();
  std::vector<unsigned char> packed((total + 7) / 8);
  if (!in.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size()))) {
    throw Error("truncated spike train payload");
  }
  std::size_t bit = 0;
  for (std::size_t i = 0; i < train.neurons(); ++i) {
    for (std::size_t t = 0; t < train.steps(); ++t, ++bit) {
      train(i, t) = (packed[bit / 8] >> (bit % 8)) & 1u;
    }
  }
  return train;
}

void simulate_inputs(std::span<const double> rates, SpikeTrain& inputs, Rng& rng) {
  if (rates.size() != inputs.neurons()) {
    throw InvalidArgument("simulate_inputs: one rate per input row required");
  }
  for (std::size_t i = 0; i < inputs.neurons(); ++i) {
    auto row = inputs.row(i);
    const double p = rates[i];
    if (p <= 0.0) {
      std::fill(row.begin(), row.end(), 0);
    } else if (p >= 1.0) {
      std::fill(row.begin(), row.end(), 1);
    } else {
      for (auto& x : row) x = rng.bernoulli(p) ? 1 : 0;
    }
  }
}

void check_simplex(std::span<const double> weights, std::size_t expected_size, const std::string& what) {
  if (weights.size() != expected_size) {
    throw InvalidArgument(what + ": expected " + std::to_string(expected_size) + " weights, got " +
                          std::to_string(weights.size()));
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument(what + ": weight off the simplex");
    total += w;
  }
  if (std::abs(total - 1.0) > kSimplexTolerance) {
    throw InvalidArgument(what + ": weights sum to " + std::to_string(total) + ", not 1");
  }
}

double conditional_rate(const Topology& topology, std::size_t j, std::span<const double> weights,
                        const SpikeTrain& inputs, std::size_t t) {
  if (j >= topology.output_count()) throw InvalidArgument("conditional_rate: unknown output");
  check_simplex(weights, topology.connection_count(j), "conditional_rate");
  const std::size_t depth = topology.history_depth();
  if (t < depth || t >= inputs.steps()) {
    throw InvalidArgument("conditional_rate: step must satisfy K <= t < N");
  }
  const auto& out = topology.output(j);
  double x = out.spontaneous_rate;
  for (std::size_t c = 0; c < out.connections.size(); ++c) {
    const auto& conn = out.connections[c];
    const auto g = topology.kernel(conn.sign);
    double filtered = 0.0;
    for (std::size_t k = 1; k <= depth; ++k) filtered += g[k - 1] * inputs(conn.input, t - k);
    x += (conn.sign == Sign::Excitatory ? 1.0 : -1.0) * weights[c] * filtered;
  }
  return topology.activation()(x);
}

void simulate_output_han(const Topology& topology, std::size_t j, std::span<const double> weights,
                         const SpikeTrain& inputs, Rng& rng, std::span<std::uint8_t> output) {
  if (j >= topology.output_count()) throw InvalidArgument("simulate_output_han: unknown output");
  check_simplex(weights, topology.connection_count(j), "simulate_output_han");
  if (output.size() != inputs.steps()) throw InvalidArgument("simulate_output_han: row length mismatch");
  std::vector<double> excitatory;
  std::vector<double> inhibitory;
  build_coefficients(topology, j, weights, excitatory, inhibitory);
  const auto active = all_inputs(topology.input_count());
  run_han_output(topology, j, inputs, active, excitatory, inhibitory, rng, output);
}

void simulate_output_solo(const Topology& topology, std::size_t j, std::span<const double> weights,
                          const SpikeTrain& inputs, Rng& rng, std::span<std::uint8_t> output,
                          std::span<std::int32_t> chosen) {
  if (j >= topology.output_count()) throw InvalidArgument("simulate_output_solo: unknown output");
  check_solo(topology);
  check_simplex(weights, topology.connection_count(j), "simulate_output_solo");
  if (output.size() != inputs.steps()) throw InvalidArgument("simulate_output_solo: row length mismatch");
  if (!chosen.empty() && chosen.size() != output.size()) {
    throw InvalidArgument("simulate_output_solo: trace length mismatch");
  }
  std::vector<double> cdf;
  std::vector<double> lag_cdf;
  build_cdf(weights, cdf);
  build_cdf(topology.kernel(Sign::Excitatory), lag_cdf);
  run_solo_output(topology, topology.output(j).connections, cdf, lag_cdf, inputs, rng, output, chosen);
}

PresentationSimulator::PresentationSimulator(const Topology& topology, Variant variant, std::size_t steps)
    : topology_(topology),
      variant_(variant),
      steps_(steps),
      inputs_(topology.input_count(), steps),
      outputs_(topology.output_count(), steps),
      chosen_(topology.output_count()),
      excitatory_coeff_(topology.output_count()),
      inhibitory_coeff_(topology.output_count()),
      cdf_(topology.output_count()) {
  if (steps <= topology.history_depth()) {
    throw InvalidArgument("presentation length N must exceed the history depth K");
  }
  if (variant == Variant::HanSolo) check_solo(topology);
  build_cdf(topology.kernel(Sign::Excitatory), lag_cdf_);
}

void PresentationSimulator::set_weights(const std::vector<std::vector<double>>& weights) {
  if (weights.size() != topology_.output_count()) {
    throw InvalidArgument("weight state has the wrong number of outputs");
  }
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (variant_ == Variant::HanSolo) {
      build_cdf(weights[j], cdf_[j]);
    } else {
      build_coefficients(topology_, j, weights[j], excitatory_coeff_[j], inhibitory_coeff_[j]);
    }
  }
}

void PresentationSimulator::run(std::span<const double> input_rates, Rng& rng, bool trace_experts) {
  simulate_inputs(input_rates, inputs_, rng);
  active_.clear();
  for (std::size_t i = 0; i < input_rates.size(); ++i) {
    if (input_rates[i] > 0.0) active_.push_back(i);
  }
  for (std::size_t j = 0; j < topology_.output_count(); ++j) {
    if (variant_ == Variant::HanSolo) {
      std::span<std::int32_t> trace;
      if (trace_experts) {
        chosen_[j].resize(steps_);
        trace = chosen_[j];
      }
      run_solo_output(topology_, topology_.output(j).connections, cdf_[j], lag_cdf_, inputs_, rng,
                      outputs_.row(j), trace);
    } else {
      run_han_output(topology_, j, inputs_, active_, excitatory_coeff_[j], inhibitory_coeff_[j], rng,
                     outputs_.row(j));
    }
  }
}

std::vector<std::uint32_t> PresentationSimulator::output_counts() const {
  std::vector<std::uint32_t> counts(topology_.output_count(), 0);
  for (std::size_t j = 0; j < counts.size(); ++j) {
    for (auto x : outputs_.row(j)) counts[j] += x;
  }
  return counts;
}

std::vector<std::uint32_t> PresentationSimulator::copied_spike_counts(std::size_t j) const {
  std::vector<std::uint32_t> counts(topology_.connection_count(j), 0);
  const auto& chosen = chosen_.at(j);
  if (chosen.size() != steps_) throw InvalidArgument("no expert trace recorded for this presentation");
  const auto row = outputs_.row(j);
  for (std::size_t t = 0; t < steps_; ++t) {
    if (chosen[t] >= 0 && row[t]) ++counts[static_cast<std::size_t>(chosen[t])];
  }
  return counts;
}

}  // namespace han
