// Throughput of the hot paths, from a single presentation up to a full
// learning phase.

#include <benchmark/benchmark.h>

#include <vector>

#include "han/baselines.hpp"
#include "han/learning.hpp"
#include "han/network.hpp"
#include "han/rng.hpp"
#include "han/stimuli.hpp"

namespace {

struct Setup {
  han::StimulusUniverse universe;
  han::Topology topology;
  han::WeightState weights;

  explicit Setup(han::Variant v)
      : universe(han::build_concrete_example(2, 3, 0.2, 0.3, v)),
        topology(han::make_concrete_topology(universe, v, 0.2, 0.0, 1)),
        weights(han::WeightState::uniform(topology)) {}
};

han::Variant variant_arg(const benchmark::State& state) {
  return state.range(0) == 0 ? han::Variant::Han : han::Variant::HanSolo;
}

void BM_Presentation(benchmark::State& state) {
  const auto v = variant_arg(state);
  const Setup s(v);
  const auto steps = static_cast<std::size_t>(state.range(1));
  han::PresentationSimulator sim(s.topology, v, steps);
  sim.set_weights(s.weights.per_output);
  han::Rng rng(1);
  std::size_t nature = 0;
  for (auto _ : state) {
    sim.run(s.universe.encoding.rates_for(nature), rng);
    benchmark::DoNotOptimize(sim.output_counts());
    nature = (nature + 1) % s.universe.nature_count();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(steps));
  state.SetLabel(std::string(han::to_string(v)));
}
BENCHMARK(BM_Presentation)->ArgsProduct({{0, 1}, {1000}});

void BM_EwaUpdate(benchmark::State& state) {
  const auto experts = static_cast<std::size_t>(state.range(0));
  const han::ExponentiallyWeightedAverage ewa({han::LearningRate::Kind::Figure2Caption, 0.0}, {2502, 9, 18.0});
  std::vector<double> cumulative(experts);
  han::Rng rng(2);
  for (auto& g : cumulative) g = rng.uniform();
  std::vector<double> weights(experts, 1.0 / static_cast<double>(experts));
  for (auto _ : state) {
    ewa.update(0, cumulative, 0.5, 100, weights);
    benchmark::DoNotOptimize(weights.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(experts));
}
BENCHMARK(BM_EwaUpdate)->Arg(12)->Arg(128)->Arg(1024);

void BM_PwaUpdate(benchmark::State& state) {
  const auto experts = static_cast<std::size_t>(state.range(0));
  const han::PolynomiallyWeightedAverage pwa(2.0);
  std::vector<double> cumulative(experts);
  han::Rng rng(3);
  for (auto& g : cumulative) g = rng.uniform();
  std::vector<double> weights(experts, 1.0 / static_cast<double>(experts));
  for (auto _ : state) {
    pwa.update(0, cumulative, 0.25, 100, weights);
    benchmark::DoNotOptimize(weights.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(experts));
}
BENCHMARK(BM_PwaUpdate)->Arg(12)->Arg(128)->Arg(1024);

void BM_Evaluation(benchmark::State& state) {
  const auto v = variant_arg(state);
  const Setup s(v);
  han::Rng rng(4);
  const auto test = han::make_test_set(s.universe, 500, rng);
  han::Evaluator evaluator(s.topology, s.universe, v, 1000);
  for (auto _ : state) benchmark::DoNotOptimize(evaluator.accuracy(s.weights, test, rng));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(test.size()));
  state.SetLabel(std::string(han::to_string(v)));
}
BENCHMARK(BM_Evaluation)->Args({0, 0})->Args({1, 0})->Unit(benchmark::kMillisecond);

void BM_LearningPhase(benchmark::State& state) {
  const auto v = variant_arg(state);
  const Setup s(v);
  const auto schedule = han::make_schedule(s.universe, 2502, han::ScheduleMode::EpochShuffle, 6);
  const han::PolynomiallyWeightedAverage pwa(2.0);
  han::LearningOptions options;
  options.variant = v;
  han::Rng rng(7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(han::run_learning_phase(s.topology, s.universe, schedule, pwa, options, rng));
  }
  state.SetItemsProcessed(state.iterations() * 2502);
  state.SetLabel(std::string(han::to_string(v)));
}
BENCHMARK(BM_LearningPhase)->Args({0, 0})->Args({1, 0})->Unit(benchmark::kMillisecond);

void BM_ComponentCueStep(benchmark::State& state) {
  const Setup s(han::Variant::Han);
  han::ComponentCue cc(6, 2, 0.005, 10.0);
  han::Rng rng(8);
  std::size_t nature = 0;
  for (auto _ : state) {
    const auto present = han::feature_indicators(s.universe, nature);
    benchmark::DoNotOptimize(cc.step(present, s.universe.natures[nature].class_label, rng));
    nature = (nature + 1) % s.universe.nature_count();
  }
}
BENCHMARK(BM_ComponentCueStep);

}  // namespace

BENCHMARK_MAIN();
