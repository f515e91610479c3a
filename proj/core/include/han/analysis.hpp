#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "han/learning.hpp"
#include "han/network.hpp"
#include "han/stimuli.hpp"

namespace han {

/// Row-major rounds x inputs table of input firing rates.
struct RateTable {
  std::size_t rounds = 0;
  std::size_t inputs = 0;
  std::vector<double> values;

  double operator()(std::size_t m, std::size_t i) const { return values[m * inputs + i]; }
};

/// Empirical rates p-hat^i_m recorded during a run.
RateTable empirical_rates(const RunRecord& record);
/// True rates p^i_{o(m)} of the encoding along a schedule.
RateTable true_rates(const StimulusUniverse& universe, const Schedule& schedule);

/// A weight family q_{1:M}: either one constant state or one state per round.
class WeightFamily {
 public:
  static WeightFamily constant(WeightState state);
  static WeightFamily per_round(std::vector<WeightState> states);
  /// w_1..w_M of a run recorded with snapshot stride 1.
  static WeightFamily from_record(const RunRecord& record);

  const std::vector<double>& weights(std::size_t round, std::size_t j) const {
    return states_[states_.size() == 1 ? 0 : round].per_output[j];
  }
  std::size_t size() const { return states_.size(); }

 private:
  std::vector<WeightState> states_;
};

/// Per-output and network discrepancies of one weight family.
struct DiscrepancyReport {
  std::vector<double> neuronal;   // disc^j_M
  std::vector<double> class_level;  // Disc^j_M
  double network = 0.0;           // Disc_M, the |J|-average of Disc^j_M
};

/// P-hat^{j,j'}_M: average over rounds of class j' of sum_c s_c q_c rate(input_c),
/// with s_c = -1 on inhibitory connections. Rows index the neuron j, columns the class j'.
std::vector<std::vector<double>> class_average_rates(const Topology& topology, const WeightFamily& family,
                                                     const RateTable& rates, std::span<const ClassId> round_classes,
                                                     std::size_t class_count);

double neuronal_discrepancy(const Topology& topology, std::size_t j, const WeightFamily& family,
                            const RateTable& rates, std::span<const ClassId> round_classes,
                            std::size_t class_count);

DiscrepancyReport discrepancy_report(const Topology& topology, const WeightFamily& family,
                                     const RateTable& rates, std::span<const ClassId> round_classes,
                                     std::size_t class_count);

struct ExpectationOptions {
  std::size_t max_exact_bits = 22;
  std::size_t monte_carlo_samples = 400000;
  std::uint64_t seed = 0x5eed;
};

struct RateEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  bool exact = true;
};

/// p^j_o(q^j) = E[conditional rate] for one nature. Exact by enumerating the
/// presynaptic spike patterns over the history window when there are at
/// most `max_exact_bits` random bits, otherwise Monte Carlo.
RateEstimate expected_output_rate(const Topology& topology, std::size_t j, std::span<const double> weights,
                                  std::span<const double> input_rates, const ExpectationOptions& options = {});

struct SafetyDiscrepancy {
  double value = 0.0;            // min over (j, o in j, j' != j) of p^j_o - p^{j'}_o
  bool feasible = false;         // value > 0
  bool exact = true;
  double standard_error = 0.0;   // of the minimizing difference, Monte Carlo only
  bool sign_resolved = true;     // |value| > 3 standard errors, or exact
};

SafetyDiscrepancy safety_discrepancy(const Topology& topology, const WeightState& family,
                                     const StimulusUniverse& universe, const ExpectationOptions& options = {});

/// Feature discrepancies d^{c->j} and the limit family they induce.
struct FeatureDiscrepancyTable {
  std::vector<std::vector<double>> d;                 // [j][connection]
  std::vector<std::vector<std::size_t>> best;         // maximizers per output
  std::vector<std::optional<double>> gap;             // nullopt when every connection is a maximizer
  std::vector<std::size_t> class_sizes;               // natures per class
  WeightState limit;                                  // uniform on the maximizers
};

FeatureDiscrepancyTable feature_discrepancies(const Topology& topology, const StimulusUniverse& universe,
                                              double tie_tolerance = 1e-12);

/// max_c G^{c->j}_M - G^j_M.
double regret(const GainLedger& ledger, std::size_t j);

enum class AggregatorKind { Ewa, Pwa };

/// ln(n)/eta + eta (b-a)^2 M / 8: EWA regret with a fixed rate.
double ewa_regret_bound(std::size_t rounds, std::size_t experts, double gain_range, double eta);
/// (b-a) sqrt(M ln(n) / 2): EWA with eta = sqrt(8 ln(n)/M) / (b-a).
double ewa_tuned_regret_bound(std::size_t rounds, std::size_t experts, double gain_range);
/// (b-a) (sqrt(2 M ln n) + sqrt(ln(n) / 8)): EWA with eta_m = sqrt(8 ln(n)/m) / (b-a).
double ewa_time_dependent_regret_bound(std::size_t rounds, std::size_t experts, double gain_range);
/// (b-a) sqrt((beta - 1) n^{2/beta} M).
double pwa_regret_bound(std::size_t rounds, std::size_t experts, double gain_range, double beta);
/// K(n, b-a) with R_M <= K sqrt(M).
double regret_constant(AggregatorKind kind, std::size_t experts, double gain_range, double beta);

struct BoundInputs {
  std::size_t rounds = 0;        // M
  std::size_t steps = 0;         // N
  double confidence = 0.1;       // alpha
  double xi = 0.0;               // min_j M^j / M
  std::size_t input_count = 0;   // |I|
  std::size_t output_count = 0;  // |J|
  std::size_t nature_count = 0;  // |O|
  double lipschitz = 1.0;
  AggregatorKind aggregator = AggregatorKind::Ewa;
  double beta = 2.0;
  std::vector<std::size_t> connections;     // |I^j|
  std::vector<std::size_t> best_sizes;      // |I~^j|
  std::vector<std::optional<double>> gaps;  // gamma^j
};

BoundInputs bound_inputs(const Topology& topology, const StimulusUniverse& universe, const Schedule& schedule,
                         const FeatureDiscrepancyTable& table, std::size_t steps, double confidence,
                         AggregatorKind aggregator, double beta = 2.0);

struct BoundSet {
  double gain_range = 0.0;       // |J| / (xi (|J| - 1))
  double regret_constant = 0.0;  // K(|I|, gain_range)
  double e_reg = 0.0;
  double e_sample = 0.0;         // E(N, M, alpha)
  double e_tot = 0.0;
  std::vector<std::optional<double>> e_ewa;   // nullopt when I~^j = I^j
  std::vector<double> e_noise;                // E^j(N, alpha)
  std::vector<std::vector<double>> e_pair;    // E^{j,j'}_tot
  std::vector<double> regret_bound;           // per output, at M, with |I^j| experts
};

BoundSet bound_set(const BoundInputs& inputs);

struct LimitWeightCheck {
  std::size_t output = 0;
  std::size_t connection = 0;
  double deviation = 0.0;   // |w_{M+1} - w_inf|
  double bound = 0.0;
  double margin = 0.0;      // bound - deviation
  bool passed = false;
  bool evolving = true;     // false: the "did not evolve" branch, compared to 1/|I^j|
};

std::vector<LimitWeightCheck> verify_limit_weights(const WeightState& final_weights,
                                                   const FeatureDiscrepancyTable& table, const BoundSet& bounds);

void to_json(nlohmann::json& j, const DiscrepancyReport& report);
void to_json(nlohmann::json& j, const BoundSet& bounds);
void to_json(nlohmann::json& j, const SafetyDiscrepancy& safety);

}  // namespace han
