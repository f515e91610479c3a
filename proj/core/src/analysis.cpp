#include "han/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "han/error.hpp"
#include "han/rng.hpp"

namespace han {

RateTable empirical_rates(const RunRecord& record) {
  return {record.rounds(), record.input_count, record.input_rates};
}

RateTable true_rates(const StimulusUniverse& universe, const Schedule& schedule) {
  RateTable table{schedule.size(), universe.encoding.neuron_count(), {}};
  table.values.reserve(table.rounds * table.inputs);
  for (std::size_t o : schedule.order) {
    const auto rates = universe.encoding.rates_for(o);
    table.values.insert(table.values.end(), rates.begin(), rates.end());
  }
  return table;
}

WeightFamily WeightFamily::constant(WeightState state) {
  WeightFamily f;
  f.states_.push_back(std::move(state));
  return f;
}

WeightFamily WeightFamily::per_round(std::vector<WeightState> states) {
  if (states.empty()) throw InvalidArgument("weight family needs at least one state");
  WeightFamily f;
  f.states_ = std::move(states);
  return f;
}

WeightFamily WeightFamily::from_record(const RunRecord& record) {
  const std::size_t rounds = record.rounds();
  if (record.snapshots.size() < rounds + 1) {
    throw InvalidArgument("run was not recorded with weight snapshot stride 1");
  }
  for (std::size_t m = 0; m < rounds; ++m) {
    if (record.snapshot_rounds[m] != m) throw InvalidArgument("run snapshots are not per round");
  }
  std::vector<WeightState> states(record.snapshots.begin(),
                                  record.snapshots.begin() + static_cast<std::ptrdiff_t>(rounds));
  if (states.empty()) states.push_back(record.snapshots.front());
  return per_round(std::move(states));
}

std::vector<std::vector<double>> class_average_rates(const Topology& topology, const WeightFamily& family,
                                                     const RateTable& rates, std::span<const ClassId> round_classes,
                                                     std::size_t class_count) {
  if (round_classes.size() != rates.rounds) throw InvalidArgument("rates and classes disagree on M");
  if (family.size() != 1 && family.size() != rates.rounds) {
    throw InvalidArgument("weight family must be constant or have one state per round");
  }
  if (rates.inputs != topology.input_count()) throw InvalidArgument("rate table has the wrong input count");
  const std::size_t outputs = topology.output_count();
  std::vector<std::vector<double>> sums(outputs, std::vector<double>(class_count, 0.0));
  std::vector<std::size_t> counts(class_count, 0);
  for (std::size_t m = 0; m < rates.rounds; ++m) {
    const ClassId cls = round_classes[m];
    if (cls >= class_count) throw InvalidArgument("round class out of range");
    ++counts[cls];
    for (std::size_t j = 0; j < outputs; ++j) {
      const auto& q = family.weights(m, j);
      const auto& connections = topology.output(j).connections;
      double rate = 0.0;
      for (std::size_t c = 0; c < connections.size(); ++c) {
        const double signed_rate = connections[c].sign == Sign::Excitatory ? rates(m, connections[c].input)
                                                                            : -rates(m, connections[c].input);
        rate += q[c] * signed_rate;
      }
      sums[j][cls] += rate;
    }
  }
  for (std::size_t cls = 0; cls < class_count; ++cls) {
    if (counts[cls] == 0) {
      throw InvalidArgument("class " + std::to_string(cls) + " never presented; discrepancy undefined");
    }
    for (std::size_t j = 0; j < outputs; ++j) sums[j][cls] /= static_cast<double>(counts[cls]);
  }
  return sums;
}

namespace {

double others_mean(const std::vector<double>& values, std::size_t skip) {
  double total = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k != skip) total += values[k];
  }
  return total / static_cast<double>(values.size() - 1);
}

}  // namespace

double neuronal_discrepancy(const Topology& topology, std::size_t j, const WeightFamily& family,
                            const RateTable& rates, std::span<const ClassId> round_classes,
                            std::size_t class_count) {
  if (class_count < 2) throw InvalidArgument("discrepancy needs at least two classes");
  const auto averages = class_average_rates(topology, family, rates, round_classes, class_count);
  return averages.at(j)[j] - others_mean(averages[j], j);
}

DiscrepancyReport discrepancy_report(const Topology& topology, const WeightFamily& family,
                                     const RateTable& rates, std::span<const ClassId> round_classes,
                                     std::size_t class_count) {
  if (class_count < 2) throw InvalidArgument("discrepancy needs at least two classes");
  if (class_count != topology.output_count()) throw InvalidArgument("one output per class is required");
  const auto averages = class_average_rates(topology, family, rates, round_classes, class_count);
  DiscrepancyReport report;
  double total = 0.0;
  for (std::size_t j = 0; j < class_count; ++j) {
    report.neuronal.push_back(averages[j][j] - others_mean(averages[j], j));
    double others = 0.0;
    for (std::size_t k = 0; k < class_count; ++k) {
      if (k != j) others += averages[k][j];
    }
    const double disc = averages[j][j] - others / static_cast<double>(class_count - 1);
    report.class_level.push_back(disc);
    total += disc;
  }
  report.network = total / static_cast<double>(class_count);
  return report;
}

RateEstimate expected_output_rate(const Topology& topology, std::size_t j, std::span<const double> weights,
                                  std::span<const double> input_rates, const ExpectationOptions& options) {
  check_simplex(weights, topology.connection_count(j), "expected_output_rate");
  if (input_rates.size() != topology.input_count()) throw InvalidArgument("one rate per input required");
  const std::size_t depth = topology.history_depth();
  const auto g_plus = topology.kernel(Sign::Excitatory);
  const auto g_minus = topology.kernel(Sign::Inhibitory);

  std::vector<double> excitatory(topology.input_count(), 0.0);
  std::vector<double> inhibitory(topology.input_count(), 0.0);
  const auto& connections = topology.output(j).connections;
  for (std::size_t c = 0; c < connections.size(); ++c) {
    (connections[c].sign == Sign::Excitatory ? excitatory : inhibitory)[connections[c].input] += weights[c];
  }

  // Deterministic part and the list of random (input, lag) bits.
  struct Bit {
    double p;
    double contribution;  // added to the pre-activation when the bit is 1
  };
  double base = topology.output(j).spontaneous_rate;
  std::vector<Bit> bits;
  for (std::size_t i = 0; i < topology.input_count(); ++i) {
    if (excitatory[i] == 0.0 && inhibitory[i] == 0.0) continue;
    const double p = input_rates[i];
    for (std::size_t k = 0; k < depth; ++k) {
      const double contribution = excitatory[i] * g_plus[k] - inhibitory[i] * g_minus[k];
      if (contribution == 0.0 || p <= 0.0) continue;
      if (p >= 1.0) {
        base += contribution;
      } else {
        bits.push_back({p, contribution});
      }
    }
  }
  const auto& phi = topology.activation();

  if (bits.size() <= options.max_exact_bits) {
    const std::uint64_t patterns = std::uint64_t{1} << bits.size();
    double mean = 0.0;
    for (std::uint64_t pattern = 0; pattern < patterns; ++pattern) {
      double probability = 1.0;
      double x = base;
      for (std::size_t b = 0; b < bits.size(); ++b) {
        if ((pattern >> b) & 1u) {
          probability *= bits[b].p;
          x += bits[b].contribution;
        } else {
          probability *= 1.0 - bits[b].p;
        }
      }
      mean += probability * phi(x);
    }
    return {mean, 0.0, true};
  }

  Rng rng(options.seed ^ (0x9e37ull * (j + 1)));
  double sum = 0.0;
  double sum_sq = 0.0;
  const std::size_t samples = std::max<std::size_t>(options.monte_carlo_samples, 2);
  for (std::size_t s = 0; s < samples; ++s) {
    double x = base;
    for (const auto& bit : bits) {
      if (rng.bernoulli(bit.p)) x += bit.contribution;
    }
    const double y = phi(x);
    sum += y;
    sum_sq += y * y;
  }
  const double n = static_cast<double>(samples);
  const double mean = sum / n;
  const double variance = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(variance / n), false};
}

SafetyDiscrepancy safety_discrepancy(const Topology& topology, const WeightState& family,
                                     const StimulusUniverse& universe, const ExpectationOptions& options) {
  family.validate(topology);
  if (universe.class_count() != topology.output_count()) throw InvalidArgument("one output per class is required");
  if (topology.output_count() < 2) throw InvalidArgument("safety discrepancy needs at least two outputs");
  SafetyDiscrepancy result;
  result.value = std::numeric_limits<double>::infinity();
  for (std::size_t o = 0; o < universe.nature_count(); ++o) {
    const auto rates = universe.encoding.rates_for(o);
    std::vector<RateEstimate> expected;
    for (std::size_t j = 0; j < topology.output_count(); ++j) {
      expected.push_back(expected_output_rate(topology, j, family.per_output[j], rates, options));
    }
    const ClassId own = universe.natures[o].class_label;
    for (std::size_t other = 0; other < expected.size(); ++other) {
      if (other == own) continue;
      const double diff = expected[own].mean - expected[other].mean;
      if (diff < result.value) {
        result.value = diff;
        result.exact = expected[own].exact && expected[other].exact;
        result.standard_error = std::hypot(expected[own].standard_error, expected[other].standard_error);
      }
    }
  }
  result.feasible = result.value > 0.0;
  result.sign_resolved = result.exact || std::abs(result.value) > 3.0 * result.standard_error;
  return result;
}

FeatureDiscrepancyTable feature_discrepancies(const Topology& topology, const StimulusUniverse& universe,
                                              double tie_tolerance) {
  const std::size_t classes = universe.class_count();
  if (classes < 2) throw InvalidArgument("feature discrepancy needs at least two classes");
  if (classes != topology.output_count()) throw InvalidArgument("one output per class is required");
  FeatureDiscrepancyTable table;
  for (ClassId j = 0; j < classes; ++j) {
    table.class_sizes.push_back(universe.class_size(j));
    if (table.class_sizes.back() == 0) throw InvalidArgument("class '" + universe.class_names[j] + "' is empty");
  }
  // class_mean[i][j] = (1/n^j) sum_{o in j} p^i_o
  const std::size_t inputs = topology.input_count();
  std::vector<std::vector<double>> class_mean(inputs, std::vector<double>(classes, 0.0));
  for (std::size_t o = 0; o < universe.nature_count(); ++o) {
    const ClassId j = universe.natures[o].class_label;
    for (std::size_t i = 0; i < inputs; ++i) class_mean[i][j] += universe.encoding.probability(i, o);
  }
  for (std::size_t i = 0; i < inputs; ++i) {
    for (ClassId j = 0; j < classes; ++j) class_mean[i][j] /= static_cast<double>(table.class_sizes[j]);
  }

  table.limit.per_output.resize(classes);
  for (ClassId j = 0; j < classes; ++j) {
    const auto& connections = topology.output(j).connections;
    std::vector<double> d;
    for (const auto& conn : connections) {
      const double excitatory = class_mean[conn.input][j] - others_mean(class_mean[conn.input], j);
      d.push_back(conn.sign == Sign::Excitatory ? excitatory : -excitatory);
    }
    const double top = *std::max_element(d.begin(), d.end());
    std::vector<std::size_t> best;
    double runner_up = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < d.size(); ++c) {
      if (d[c] >= top - tie_tolerance) {
        best.push_back(c);
      } else {
        runner_up = std::max(runner_up, d[c]);
      }
    }
    table.gap.push_back(best.size() == d.size() ? std::nullopt : std::optional<double>(top - runner_up));
    auto& limit = table.limit.per_output[j];
    limit.assign(d.size(), 0.0);
    for (std::size_t c : best) limit[c] = 1.0 / static_cast<double>(best.size());
    table.d.push_back(std::move(d));
    table.best.push_back(std::move(best));
  }
  return table;
}

double regret(const GainLedger& ledger, std::size_t j) {
  const auto& cumulative = ledger.cumulative.at(j);
  return *std::max_element(cumulative.begin(), cumulative.end()) - ledger.forecaster.at(j);
}

double ewa_regret_bound(std::size_t rounds, std::size_t experts, double gain_range, double eta) {
  return std::log(static_cast<double>(experts)) / eta +
         eta * gain_range * gain_range * static_cast<double>(rounds) / 8.0;
}

double ewa_tuned_regret_bound(std::size_t rounds, std::size_t experts, double gain_range) {
  return gain_range * std::sqrt(static_cast<double>(rounds) * std::log(static_cast<double>(experts)) / 2.0);
}

double ewa_time_dependent_regret_bound(std::size_t rounds, std::size_t experts, double gain_range) {
  const double log_experts = std::log(static_cast<double>(experts));
  return gain_range * (std::sqrt(2.0 * static_cast<double>(rounds) * log_experts) + std::sqrt(log_experts / 8.0));
}

double pwa_regret_bound(std::size_t rounds, std::size_t experts, double gain_range, double beta) {
  return gain_range * std::sqrt((beta - 1.0) * std::pow(static_cast<double>(experts), 2.0 / beta) *
                                static_cast<double>(rounds));
}

double regret_constant(AggregatorKind kind, std::size_t experts, double gain_range, double beta) {
  if (kind == AggregatorKind::Ewa) return ewa_tuned_regret_bound(1, experts, gain_range);
  return pwa_regret_bound(1, experts, gain_range, beta);
}

BoundInputs bound_inputs(const Topology& topology, const StimulusUniverse& universe, const Schedule& schedule,
                         const FeatureDiscrepancyTable& table, std::size_t steps, double confidence,
                         AggregatorKind aggregator, double beta) {
  BoundInputs in;
  in.rounds = schedule.size();
  in.steps = steps;
  in.confidence = confidence;
  in.xi = schedule.xi();
  in.input_count = topology.input_count();
  in.output_count = topology.output_count();
  in.nature_count = universe.nature_count();
  in.lipschitz = topology.activation().lipschitz;
  in.aggregator = aggregator;
  in.beta = beta;
  for (std::size_t j = 0; j < topology.output_count(); ++j) {
    in.connections.push_back(topology.connection_count(j));
    in.best_sizes.push_back(table.best[j].size());
    in.gaps.push_back(table.gap[j]);
  }
  return in;
}

BoundSet bound_set(const BoundInputs& in) {
  if (in.output_count < 2) throw InvalidArgument("bounds need at least two outputs");
  if (!(in.confidence > 0.0 && in.confidence <= 1.0)) throw InvalidArgument("alpha must lie in (0,1]");
  if (!(in.xi > 0.0)) throw InvalidArgument("xi must be positive");
  if (in.steps == 0 || in.nature_count == 0 || in.input_count == 0) {
    throw InvalidArgument("bounds need N, |O| and |I| positive");
  }
  const auto outputs = static_cast<double>(in.output_count);
  const double log_term = std::log(2.0 * static_cast<double>(in.input_count) * outputs / in.confidence);
  const auto rounds = static_cast<double>(in.rounds);
  const auto steps = static_cast<double>(in.steps);
  const auto natures = static_cast<double>(in.nature_count);
  const double inf = std::numeric_limits<double>::infinity();

  BoundSet b;
  b.gain_range = outputs / (in.xi * (outputs - 1.0));
  b.regret_constant = regret_constant(in.aggregator, in.input_count, b.gain_range, in.beta);
  b.e_reg = in.rounds == 0 ? inf : b.regret_constant / std::sqrt(rounds);
  b.e_sample = in.rounds == 0 ? inf : std::sqrt(log_term * 2.0 / (in.xi * steps * rounds));
  b.e_tot = b.e_reg + b.e_sample;

  const std::size_t n = in.connections.size();
  for (std::size_t j = 0; j < n; ++j) {
    const auto experts = static_cast<double>(in.connections[j]);
    const double log_experts = std::log(experts);
    b.e_noise.push_back(experts * std::sqrt(log_term * log_experts / (natures * steps)));
    if (in.gaps.at(j)) {
      const auto best = static_cast<double>(in.best_sizes.at(j));
      const double lead = std::max(1.0, experts / best - 1.0) / best;
      b.e_ewa.push_back(lead * std::exp(-(*in.gaps[j] / natures) * std::sqrt(2.0 * log_experts * rounds)));
    } else {
      b.e_ewa.push_back(std::nullopt);
    }
    b.regret_bound.push_back(in.aggregator == AggregatorKind::Ewa
                                 ? ewa_tuned_regret_bound(in.rounds, in.connections[j], b.gain_range)
                                 : pwa_regret_bound(in.rounds, in.connections[j], b.gain_range, in.beta));
  }
  b.e_pair.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      if (j == k) continue;
      double total = 0.0;
      for (std::size_t h : {j, k}) {
        total += static_cast<double>(in.connections[h]) * (b.e_noise[h] + b.e_ewa[h].value_or(0.0));
      }
      b.e_pair[j][k] = in.lipschitz * total;
    }
  }
  return b;
}

std::vector<LimitWeightCheck> verify_limit_weights(const WeightState& final_weights,
                                                   const FeatureDiscrepancyTable& table, const BoundSet& bounds) {
  std::vector<LimitWeightCheck> checks;
  for (std::size_t j = 0; j < table.d.size(); ++j) {
    const auto& w = final_weights.per_output.at(j);
    const auto& limit = table.limit.per_output[j];
    const bool evolving = table.gap[j].has_value();
    for (std::size_t c = 0; c < w.size(); ++c) {
      LimitWeightCheck check;
      check.output = j;
      check.connection = c;
      check.evolving = evolving;
      const double target = evolving ? limit[c] : 1.0 / static_cast<double>(w.size());
      check.deviation = std::abs(w[c] - target);
      check.bound = bounds.e_noise[j] + (evolving ? bounds.e_ewa[j].value_or(0.0) : 0.0);
      check.margin = check.bound - check.deviation;
      check.passed = check.margin >= 0.0;
      checks.push_back(check);
    }
  }
  return checks;
}

void to_json(nlohmann::json& j, const DiscrepancyReport& report) {
  j = nlohmann::json{{"neuronal", report.neuronal}, {"class", report.class_level}, {"network", report.network}};
}

void to_json(nlohmann::json& j, const BoundSet& b) {
  auto e_ewa = nlohmann::json::array();
  for (const auto& e : b.e_ewa) e_ewa.push_back(e ? nlohmann::json(*e) : nlohmann::json("not_applicable"));
  j = nlohmann::json{{"gain_range", b.gain_range},   {"regret_constant", b.regret_constant},
                     {"E_reg", b.e_reg},              {"E_sample", b.e_sample},
                     {"E_tot", b.e_tot},              {"E_EWA", std::move(e_ewa)},
                     {"E_noise", b.e_noise},          {"E_pair_tot", b.e_pair},
                     {"regret_bound", b.regret_bound}};
}

void to_json(nlohmann::json& j, const SafetyDiscrepancy& s) {
  if (s.feasible) {
    j = nlohmann::json{{"value", s.value}, {"feasible", true}};
  } else {
    j = nlohmann::json{{"value", s.value}, {"feasible", false}, {"status", "infeasible"}};
  }
  j["exact"] = s.exact;
  j["standard_error"] = s.standard_error;
  j["sign_resolved"] = s.sign_resolved;
}

}  // namespace han
