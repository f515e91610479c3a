#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "han/analysis.hpp"
#include "han/error.hpp"
#include "han/harness.hpp"
#include "han/network.hpp"
#include "han/rng.hpp"

namespace han {

namespace {

constexpr double kP = 0.2;
constexpr double kQ = 0.3;
constexpr double kAlphaA = 0.2;
constexpr std::size_t kRounds = 2502;
constexpr std::size_t kSteps = 1000;

std::string show(double x) {
  std::ostringstream out;
  out.precision(6);
  out << x;
  return out.str();
}

VerifyCheck close_check(std::string name, double got, double want, double tolerance) {
  const bool ok = std::abs(got - want) <= tolerance;
  return {std::move(name), ok, "got " + show(got) + ", expected " + show(want) + " (tol " + show(tolerance) + ")"};
}

std::size_t connection_index(const Topology& topology, std::size_t j, const StimulusUniverse& universe,
                             const std::string& label) {
  for (std::size_t c = 0; c < topology.connection_count(j); ++c) {
    if (topology.connection_label(j, c, universe.encoding) == label) return c;
  }
  throw InvalidArgument("no connection labelled " + label);
}

struct ConcreteSetup {
  StimulusUniverse universe;
  Topology topology;
  FeatureDiscrepancyTable table;
};

ConcreteSetup concrete(Variant variant) {
  StimulusUniverse universe = build_concrete_example(2, 3, kP, kQ, variant);
  Topology topology = make_concrete_topology(universe, variant, kAlphaA, 0.0, 1);
  FeatureDiscrepancyTable table = feature_discrepancies(topology, universe);
  return {std::move(universe), std::move(topology), std::move(table)};
}

VerifyReport propositions() {
  VerifyReport report{"propositions", {}};
  {
    const auto s = concrete(Variant::Han);
    const auto safe = safety_discrepancy(s.topology, s.table.limit, s.universe);
    report.checks.push_back(close_check("HAN limit family safety discrepancy", safe.value, 0.06, 1e-12));
    report.checks.push_back({"HAN safety computed exactly", safe.exact, ""});
    const auto d = [&](const char* label) { return s.table.d[0][connection_index(s.topology, 0, s.universe, label)]; };
    report.checks.push_back(close_check("d(Blue+ -> A)", d("Blue+"), -0.15, 1e-12));
    report.checks.push_back(close_check("d(Blue- -> A)", d("Blue-"), 0.15, 1e-12));
    report.checks.push_back(close_check("d(Gray+ -> A)", d("Gray+"), 0.075, 1e-12));
    report.checks.push_back(close_check("gap of A", s.table.gap[0].value_or(-1.0), 0.075, 1e-12));
  }
  {
    const auto s = concrete(Variant::HanSolo);
    const auto safe = safety_discrepancy(s.topology, s.table.limit, s.universe);
    report.checks.push_back(close_check("HAN Solo limit family safety discrepancy", safe.value, 0.05, 1e-12));
    report.checks.push_back({"HAN Solo safety computed exactly", safe.exact, ""});
    const auto d = [&](std::size_t j, const char* label) {
      return s.table.d[j][connection_index(s.topology, j, s.universe, label)];
    };
    report.checks.push_back(close_check("d(~Blue -> A)", d(0, "~Blue+"), 0.225, 1e-12));
    report.checks.push_back(close_check("d(~Gray -> A)", d(0, "~Gray+"), -0.1125, 1e-12));
    report.checks.push_back(close_check("d(Blue -> B)", d(1, "Blue+"), 0.15, 1e-12));
    report.checks.push_back(close_check("d(~Gray -> B)", d(1, "~Gray+"), 0.1125, 1e-12));
    report.checks.push_back(close_check("gap of A", s.table.gap[0].value_or(-1.0), 0.15, 1e-12));
    report.checks.push_back(close_check("gap of B", s.table.gap[1].value_or(-1.0), 0.0375, 1e-12));
  }
  return report;
}

std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  double total = 0.0;
  for (auto& x : w) {
    x = -std::log(1.0 - rng.uniform());
    total += x;
  }
  for (auto& x : w) x /= total;
  return w;
}

VerifyReport kalikow(std::uint64_t seed) {
  VerifyReport report{"kalikow", {}};
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t inputs = 1 + rng.below(4);
    const std::size_t depth = 1 + rng.below(3);
    const auto kernel = random_simplex(depth, rng);
    OutputNeuron out{"out", 0.0, {}};
    for (std::size_t i = 0; i < inputs; ++i) out.connections.push_back({i, Sign::Excitatory});
    const Topology topology(inputs, {out}, Activation::identity(), kernel, kernel);
    const auto w = random_simplex(inputs, rng);
    SpikeTrain history(inputs, depth + 1);
    for (std::size_t i = 0; i < inputs; ++i) {
      for (std::size_t t = 0; t < depth; ++t) history(i, t) = rng.bernoulli(0.5) ? 1 : 0;
    }
    // Law of the copied spike: input i and lag k are drawn with probability w_i g(k).
    double mixture = 0.0;
    for (std::size_t i = 0; i < inputs; ++i) {
      for (std::size_t k = 1; k <= depth; ++k) mixture += w[i] * kernel[k - 1] * history(i, depth - k);
    }
    worst = std::max(worst, std::abs(mixture - conditional_rate(topology, 0, w, history, depth)));
  }
  report.checks.push_back({"closed-form law equals the conditional rate on 1000 histories", worst <= 1e-15,
                           "max |difference| " + show(worst)});

  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t inputs = 3;
    const std::size_t depth = 2;
    const auto kernel = random_simplex(depth, rng);
    OutputNeuron out{"out", 0.0, {}};
    for (std::size_t i = 0; i < inputs; ++i) out.connections.push_back({i, Sign::Excitatory});
    const Topology topology(inputs, {out}, Activation::identity(), kernel, kernel);
    const auto w = random_simplex(inputs, rng);
    SpikeTrain history(inputs, depth + 1);
    for (std::size_t i = 0; i < inputs; ++i) {
      for (std::size_t t = 0; t < depth; ++t) history(i, t) = rng.bernoulli(0.5) ? 1 : 0;
    }
    const double rate = conditional_rate(topology, 0, w, history, depth);
    const std::size_t samples = 100000;
    std::vector<std::uint8_t> row(depth + 1);
    std::size_t fired = 0;
    for (std::size_t s = 0; s < samples; ++s) {
      simulate_output_solo(topology, 0, w, history, rng, row);
      fired += row[depth];
    }
    const double freq = static_cast<double>(fired) / static_cast<double>(samples);
    const double sigma = std::sqrt(rate * (1.0 - rate) / static_cast<double>(samples));
    const bool ok = std::abs(freq - rate) <= 3.0 * sigma + 1e-12;
    report.checks.push_back({"Monte Carlo history " + std::to_string(trial), ok,
                             "frequency " + show(freq) + " vs rate " + show(rate) + " (3 sigma " + show(3 * sigma) +
                                 ")"});
  }
  return report;
}

/// Plays an aggregator against a gain matrix (rounds x experts) and returns the regret.
double play(const Aggregator& aggregator, const std::vector<std::vector<double>>& gains, std::size_t experts) {
  std::vector<double> w(experts, 1.0 / static_cast<double>(experts));
  std::vector<double> cumulative(experts, 0.0);
  double forecaster = 0.0;
  for (std::size_t m = 0; m < gains.size(); ++m) {
    for (std::size_t i = 0; i < experts; ++i) {
      forecaster += w[i] * gains[m][i];
      cumulative[i] += gains[m][i];
    }
    aggregator.update(0, cumulative, forecaster, m + 1, w);
  }
  return *std::max_element(cumulative.begin(), cumulative.end()) - forecaster;
}

struct GainSequence {
  std::string name;
  std::size_t experts;
  double low;
  double high;
  std::vector<std::vector<double>> gains;
};

GainSequence random_sequence(Rng& rng, int index) {
  GainSequence s;
  s.name = "random " + std::to_string(index);
  s.experts = 2 + rng.below(15);
  const std::size_t rounds = 1 + rng.below(5000);
  s.low = -5.0 * rng.uniform();
  s.high = s.low + 0.1 + 10.0 * rng.uniform();
  std::vector<double> bias(s.experts);
  for (auto& b : bias) b = rng.uniform();
  for (std::size_t m = 0; m < rounds; ++m) {
    std::vector<double> g(s.experts);
    for (std::size_t i = 0; i < s.experts; ++i) {
      const double u = 0.5 * rng.uniform() + 0.5 * bias[i];
      g[i] = s.low + (s.high - s.low) * u;
    }
    s.gains.push_back(std::move(g));
  }
  return s;
}

std::vector<GainSequence> adversarial_sequences() {
  std::vector<GainSequence> out;
  const std::size_t sizes[] = {2, 4, 16};
  const std::size_t lengths[] = {50, 5000};
  int index = 0;
  for (std::size_t n : sizes) {
    for (std::size_t rounds : lengths) {
      // Alternating leader: expert m mod n wins every round.
      GainSequence alt{"alternating n=" + std::to_string(n) + " M=" + std::to_string(rounds), n, 0.0, 1.0, {}};
      // Late switch: expert 0 best for the first half, expert n-1 afterwards.
      GainSequence late{"late switch n=" + std::to_string(n) + " M=" + std::to_string(rounds), n, -1.0, 1.0, {}};
      // One expert always at the top of the range, the others at the bottom.
      GainSequence single{"single best n=" + std::to_string(n) + " M=" + std::to_string(rounds), n, 0.0, 2.5, {}};
      for (std::size_t m = 0; m < rounds; ++m) {
        std::vector<double> a(n, 0.0);
        a[m % n] = 1.0;
        alt.gains.push_back(a);
        std::vector<double> b(n, -1.0);
        b[m < rounds / 2 ? 0 : n - 1] = 1.0;
        late.gains.push_back(b);
        std::vector<double> c(n, 0.0);
        c[n / 2] = 2.5;
        single.gains.push_back(c);
      }
      out.push_back(std::move(alt));
      out.push_back(std::move(late));
      out.push_back(std::move(single));
      ++index;
    }
  }
  // Two constant sequences: every expert identical, so the regret is exactly zero.
  for (std::size_t n : {3, 16}) {
    GainSequence flat{"all equal n=" + std::to_string(n), n, 0.0, 1.0, {}};
    for (std::size_t m = 0; m < 1000; ++m) flat.gains.emplace_back(n, 0.5);
    out.push_back(std::move(flat));
  }
  return out;
}

VerifyReport regret_battery(std::uint64_t seed) {
  VerifyReport report{"regret", {}};
  Rng rng(seed);
  std::vector<GainSequence> sequences;
  for (int i = 0; i < 100; ++i) sequences.push_back(random_sequence(rng, i));
  for (auto& s : adversarial_sequences()) sequences.push_back(std::move(s));

  std::size_t ewa_ok = 0;
  std::size_t pwa_ok = 0;
  std::string first_failure;
  for (const auto& s : sequences) {
    const std::size_t rounds = s.gains.size();
    const double range = s.high - s.low;
    const LearningContext context{rounds, 1, range};
    const ExponentiallyWeightedAverage ewa({LearningRate::Kind::RegretTuned, 0.0}, context);
    const double eta = ewa.eta(s.experts, 0);
    const double ewa_regret = play(ewa, s.gains, s.experts);
    const double ewa_bound = ewa_regret_bound(rounds, s.experts, range, eta);
    if (ewa_regret <= ewa_bound + 1e-9) {
      ++ewa_ok;
    } else if (first_failure.empty()) {
      first_failure = "EWA " + s.name + ": " + show(ewa_regret) + " > " + show(ewa_bound);
    }
    const PolynomiallyWeightedAverage pwa(2.0);
    const double pwa_regret = play(pwa, s.gains, s.experts);
    const double pwa_bound = pwa_regret_bound(rounds, s.experts, range, 2.0);
    if (pwa_regret <= pwa_bound + 1e-9) {
      ++pwa_ok;
    } else if (first_failure.empty()) {
      first_failure = "PWA " + s.name + ": " + show(pwa_regret) + " > " + show(pwa_bound);
    }
  }
  const auto total = std::to_string(sequences.size());
  report.checks.push_back({"EWA regret within its bound", ewa_ok == sequences.size(),
                           std::to_string(ewa_ok) + "/" + total + (first_failure.empty() ? "" : "; " + first_failure)});
  report.checks.push_back({"PWA regret within its bound", pwa_ok == sequences.size(),
                           std::to_string(pwa_ok) + "/" + total});

  // Cumulated gains divided by M are neuronal discrepancies in oracle gain mode.
  for (Variant variant : {Variant::HanSolo, Variant::Han}) {
    const auto universe = build_concrete_example(2, 3, kP, kQ, variant);
    const auto topology = make_concrete_topology(universe, variant, kAlphaA, 0.0, 1);
    const auto schedule = make_schedule(universe, 90, ScheduleMode::EpochShuffle, derive_seed(seed, 5));
    const ExponentiallyWeightedAverage ewa({LearningRate::Kind::Figure2Caption, 0.0},
                                           {schedule.size(), universe.nature_count(), 1.0});
    LearningOptions options;
    options.variant = variant;
    options.steps = 200;
    options.weight_snapshot_stride = 1;
    Rng run_rng(derive_seed(seed, 6));
    const auto record = run_learning_phase(topology, universe, schedule, ewa, options, run_rng);
    const auto family = WeightFamily::from_record(record);
    const auto rates = empirical_rates(record);
    const auto m = static_cast<double>(record.rounds());
    double worst = 0.0;
    for (std::size_t j = 0; j < topology.output_count(); ++j) {
      const double disc = neuronal_discrepancy(topology, j, family, rates, record.classes, universe.class_count());
      worst = std::max(worst, std::abs(record.ledger.forecaster[j] / m - disc));
      for (std::size_t c = 0; c < topology.connection_count(j); ++c) {
        WeightState delta = WeightState::uniform(topology);
        for (auto& w : delta.per_output) std::fill(w.begin(), w.end(), 0.0);
        for (auto& w : delta.per_output) w[0] = 1.0;
        delta.per_output[j][0] = 0.0;
        delta.per_output[j][c] = 1.0;
        const double expert = neuronal_discrepancy(topology, j, WeightFamily::constant(delta), rates, record.classes,
                                                   universe.class_count());
        worst = std::max(worst, std::abs(record.ledger.cumulative[j][c] / m - expert));
      }
      const double from_disc = regret(record.ledger, j) / m;
      const double best = *std::max_element(record.ledger.cumulative[j].begin(), record.ledger.cumulative[j].end());
      worst = std::max(worst, std::abs(from_disc - (best - record.ledger.forecaster[j]) / m));
    }
    report.checks.push_back({std::string("regret/discrepancy identity, ") + std::string(to_string(variant)),
                             worst <= 1e-9, "max deviation " + show(worst)});
  }
  return report;
}

struct ConcreteRun {
  ConcreteSetup setup;
  Schedule schedule;
  RunRecord record;
};

ConcreteRun run_concrete(Variant variant, LearningRate::Kind rate, std::uint64_t seed, bool snapshots) {
  ConcreteRun run{concrete(variant), {}, {}};
  const auto& u = run.setup.universe;
  run.schedule = make_schedule(u, kRounds, ScheduleMode::EpochShuffle, derive_seed(seed, 1));
  const double range = static_cast<double>(u.class_count()) /
                       (run.schedule.xi() * static_cast<double>(u.class_count() - 1));
  const ExponentiallyWeightedAverage ewa({rate, 0.0}, {kRounds, u.nature_count(), range});
  LearningOptions options;
  options.variant = variant;
  options.steps = kSteps;
  options.weight_snapshot_stride = snapshots ? 1 : 0;
  Rng rng(derive_seed(seed, 16));
  run.record = run_learning_phase(run.setup.topology, u, run.schedule, ewa, options, rng);
  return run;
}

template <typename F>
std::vector<char> over_replications(std::size_t replications, std::size_t jobs, F&& body) {
  std::vector<char> passed(replications, 0);
  std::vector<std::thread> threads;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mutex;
  const auto work = [&] {
    for (std::size_t r = next++; r < replications; r = next++) {
      try {
        passed[r] = body(r) ? 1 : 0;
      } catch (...) {
        const std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, replications));
  if (workers == 1) {
    work();
  } else {
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return passed;
}

VerifyReport theorem2(std::uint64_t seed, std::size_t replications, std::size_t jobs) {
  VerifyReport report{"theorem2", {}};
  for (Variant variant : {Variant::Han, Variant::HanSolo}) {
    double worst_margin = std::numeric_limits<double>::infinity();
    std::mutex margin_mutex;
    const auto passed = over_replications(replications, jobs, [&](std::size_t r) {
      const auto run = run_concrete(variant, LearningRate::Kind::Theorem2, derive_seed(seed, r), false);
      const auto inputs = bound_inputs(run.setup.topology, run.setup.universe, run.schedule, run.setup.table, kSteps,
                                       0.1, AggregatorKind::Ewa);
      const auto checks = verify_limit_weights(run.record.final_weights, run.setup.table, bound_set(inputs));
      double margin = std::numeric_limits<double>::infinity();
      for (const auto& c : checks) margin = std::min(margin, c.margin);
      const std::lock_guard lock(margin_mutex);
      worst_margin = std::min(worst_margin, margin);
      return margin >= 0.0;
    });
    const auto count = static_cast<std::size_t>(std::count(passed.begin(), passed.end(), 1));
    const bool ok = static_cast<double>(count) >= 0.9 * static_cast<double>(replications);
    report.checks.push_back({std::string("limit weights within E^j + E^j_EWA, ") + std::string(to_string(variant)), ok,
                             std::to_string(count) + "/" + std::to_string(replications) +
                                 " replications, worst margin " + show(worst_margin)});
  }
  return report;
}

VerifyReport oracle_inequality(std::uint64_t seed, std::size_t replications, std::size_t jobs) {
  VerifyReport report{"oracle_inequality", {}};
  const auto setup = concrete(Variant::HanSolo);
  const double safe = safety_discrepancy(setup.topology, setup.table.limit, setup.universe).value;
  double worst_slack = std::numeric_limits<double>::infinity();
  std::mutex slack_mutex;
  const auto passed = over_replications(replications, jobs, [&](std::size_t r) {
    const auto run = run_concrete(Variant::HanSolo, LearningRate::Kind::RegretTuned, derive_seed(seed, r), true);
    const auto& u = run.setup.universe;
    const auto report_disc = discrepancy_report(run.setup.topology, WeightFamily::from_record(run.record),
                                                empirical_rates(run.record), run.record.classes, u.class_count());
    const auto bounds = bound_set(
        bound_inputs(run.setup.topology, u, run.schedule, run.setup.table, kSteps, 0.2, AggregatorKind::Ewa));
    const double slack = report_disc.network - (safe - bounds.e_tot);
    const std::lock_guard lock(slack_mutex);
    worst_slack = std::min(worst_slack, slack);
    return slack >= 0.0;
  });
  const auto count = static_cast<std::size_t>(std::count(passed.begin(), passed.end(), 1));
  const bool ok = static_cast<double>(count) >= 0.8 * static_cast<double>(replications);
  report.checks.push_back({"Disc_M >= Disc_safe - E_tot", ok,
                           std::to_string(count) + "/" + std::to_string(replications) + " replications, worst slack " +
                               show(worst_slack)});
  return report;
}

}  // namespace

std::vector<VerifyReport> run_verify(std::string_view battery, std::uint64_t seed, std::size_t replications,
                                     std::size_t jobs) {
  std::vector<VerifyReport> reports;
  const bool all = battery == "all";
  bool matched = false;
  if (all || battery == "propositions") {
    reports.push_back(propositions());
    matched = true;
  }
  if (all || battery == "kalikow") {
    reports.push_back(kalikow(seed));
    matched = true;
  }
  if (all || battery == "regret") {
    reports.push_back(regret_battery(seed));
    matched = true;
  }
  if (all || battery == "theorem2") {
    reports.push_back(theorem2(seed, replications, jobs));
    matched = true;
  }
  if (all || battery == "oracle_inequality") {
    reports.push_back(oracle_inequality(seed, replications, jobs));
    matched = true;
  }
  if (!matched) {
    throw InvalidArgument("unknown verify battery '" + std::string(battery) +
                          "' (expected theorem2, propositions, kalikow, regret, oracle_inequality or all)");
  }
  return reports;
}

}  // namespace han
