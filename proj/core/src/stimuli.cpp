#include "han/stimuli.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "han/error.hpp"
#include "han/rng.hpp"

namespace han {

std::string_view to_string(Variant variant) {
  return variant == Variant::Han ? "han" : "han_solo";
}

Variant variant_from_string(std::string_view text) {
  if (text == "han" || text == "HAN") return Variant::Han;
  if (text == "han_solo" || text == "HAN_Solo" || text == "solo") return Variant::HanSolo;
  throw InvalidArgument("unknown variant '" + std::string(text) + "'");
}

std::string_view to_string(ScheduleMode mode) {
  switch (mode) {
    case ScheduleMode::EpochShuffle: return "epoch_shuffle";
    case ScheduleMode::IidReplacement: return "iid_replacement";
    case ScheduleMode::Explicit: return "explicit";
  }
  return "explicit";
}

ScheduleMode schedule_mode_from_string(std::string_view text) {
  if (text == "epoch_shuffle") return ScheduleMode::EpochShuffle;
  if (text == "iid_replacement") return ScheduleMode::IidReplacement;
  if (text == "explicit") return ScheduleMode::Explicit;
  throw InvalidArgument("unknown schedule mode '" + std::string(text) + "'");
}

Encoding::Encoding(std::vector<InputNeuron> neurons, std::size_t nature_count,
                   std::vector<double> probabilities)
    : neurons_(std::move(neurons)),
      nature_count_(nature_count),
      probabilities_(std::move(probabilities)) {
  if (probabilities_.size() != neurons_.size() * nature_count_) {
    throw InvalidArgument("encoding table has " + std::to_string(probabilities_.size()) +
                          " entries, expected " +
                          std::to_string(neurons_.size() * nature_count_));
  }
  for (double p : probabilities_) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw InvalidArgument("encoding probability outside [0,1]: " + std::to_string(p));
    }
  }
}

std::vector<std::size_t> StimulusUniverse::natures_in_class(ClassId j) const {
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o < natures.size(); ++o) {
    if (natures[o].class_label == j) out.push_back(o);
  }
  return out;
}

std::size_t StimulusUniverse::class_size(ClassId j) const {
  return static_cast<std::size_t>(std::count_if(
      natures.begin(), natures.end(), [j](const ObjectNature& o) { return o.class_label == j; }));
}

void StimulusUniverse::validate() const {
  if (space.characteristics < 1 || space.features_per_characteristic < 1) {
    throw InvalidArgument("feature space needs c >= 1 and n >= 1");
  }
  if (class_names.empty()) throw InvalidArgument("universe has no classes");
  if (natures.empty()) throw InvalidArgument("universe has no natures");
  if (encoding.nature_count() != natures.size()) {
    throw InvalidArgument("encoding covers " + std::to_string(encoding.nature_count()) +
                          " natures, universe has " + std::to_string(natures.size()));
  }
  for (const auto& o : natures) {
    if (o.class_label >= class_names.size()) {
      throw InvalidArgument("nature '" + o.id + "' has unknown class");
    }
    if (o.features.size() != static_cast<std::size_t>(space.characteristics)) {
      throw InvalidArgument("nature '" + o.id + "' must select one feature per characteristic");
    }
    for (int l : o.features) {
      if (l < 0 || l >= space.features_per_characteristic) {
        throw InvalidArgument("nature '" + o.id + "' has out-of-range feature");
      }
    }
  }
}

namespace {

std::vector<std::vector<std::string>> default_feature_names(int c, int n) {
  if (c == 2 && n == 3) {
    return {{"Circle", "Square", "Triangle"}, {"Blue", "Gray", "Red"}};
  }
  std::vector<std::vector<std::string>> names(static_cast<std::size_t>(c));
  for (int k = 0; k < c; ++k) {
    for (int l = 0; l < n; ++l) {
      names[static_cast<std::size_t>(k)].push_back("f" + std::to_string(k + 1) + "_" +
                                                   std::to_string(l + 1));
    }
  }
  return names;
}

double nature_rate(const StimulusUniverse& u, const InputNeuron& neuron, const ObjectNature& o,
                   double p, double q) {
  const int n = u.space.features_per_characteristic;
  const bool present = o.has_feature(neuron.feature / n, neuron.feature % n);
  if (neuron.detects_absence) return present ? 0.0 : q;
  return present ? p : 0.0;
}

}  // namespace

StimulusUniverse build_concrete_example(int c, int n, double p, double q, Variant variant) {
  if (c < 1 || n < 1) throw InvalidArgument("concrete example needs c >= 1 and n >= 1");
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("p must lie in (0,1)");
  if (!(q > 0.0 && q < 1.0)) throw InvalidArgument("q must lie in (0,1)");
  const double nature_count_real = std::pow(static_cast<double>(n), c);
  if (nature_count_real < 2.0) {
    throw InvalidArgument("n^c < 2: no room for an exception class");
  }
  if (nature_count_real > 1e6) throw InvalidArgument("n^c too large");

  StimulusUniverse u;
  u.space.characteristics = c;
  u.space.features_per_characteristic = n;
  u.space.feature_names = default_feature_names(c, n);
  u.class_names = {"A", "B"};

  const auto nature_count = static_cast<std::size_t>(std::llround(nature_count_real));
  for (std::size_t index = 0; index < nature_count; ++index) {
    ObjectNature o;
    o.features.resize(static_cast<std::size_t>(c));
    std::size_t rest = index;
    for (int k = c - 1; k >= 0; --k) {
      o.features[static_cast<std::size_t>(k)] = static_cast<int>(rest % static_cast<std::size_t>(n));
      rest /= static_cast<std::size_t>(n);
    }
    for (int k = 0; k < c; ++k) {
      if (k > 0) o.id += "-";
      o.id += u.space.feature_names[static_cast<std::size_t>(k)]
                                   [static_cast<std::size_t>(o.features[static_cast<std::size_t>(k)])];
    }
    o.class_label = index == 0 ? 1 : 0;
    u.natures.push_back(std::move(o));
  }

  std::vector<InputNeuron> neurons;
  for (int k = 0; k < c; ++k) {
    for (int l = 0; l < n; ++l) {
      neurons.push_back({u.space.feature_names[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)],
                         u.space.feature_index(k, l), false});
    }
  }
  if (variant == Variant::HanSolo) {
    for (int k = 0; k < c; ++k) {
      for (int l = 0; l < n; ++l) {
        neurons.push_back(
            {"~" + u.space.feature_names[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)],
             u.space.feature_index(k, l), true});
      }
    }
  }

  std::vector<double> table;
  table.reserve(nature_count * neurons.size());
  for (const auto& o : u.natures) {
    for (const auto& neuron : neurons) table.push_back(nature_rate(u, neuron, o, p, q));
  }
  u.encoding = Encoding(std::move(neurons), nature_count, std::move(table));
  return u;
}

StimulusUniverse ablate_features(const StimulusUniverse& universe, std::span<const int> features) {
  const std::unordered_set<int> drop(features.begin(), features.end());
  const auto& neurons = universe.encoding.neurons();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < neurons.size(); ++i) {
    if (neurons[i].feature < 0 || !drop.contains(neurons[i].feature)) keep.push_back(i);
  }
  if (keep.empty()) throw InvalidArgument("ablation removes every input neuron");

  std::vector<InputNeuron> kept_neurons;
  for (std::size_t i : keep) kept_neurons.push_back(neurons[i]);
  std::vector<double> table;
  for (std::size_t o = 0; o < universe.nature_count(); ++o) {
    for (std::size_t i : keep) table.push_back(universe.encoding.probability(i, o));
  }
  StimulusUniverse out = universe;
  out.encoding = Encoding(std::move(kept_neurons), universe.nature_count(), std::move(table));
  return out;
}

std::vector<std::uint8_t> feature_indicators(const StimulusUniverse& universe, std::size_t nature) {
  std::vector<std::uint8_t> active(static_cast<std::size_t>(universe.space.feature_count()), 0);
  const auto& o = universe.natures.at(nature);
  for (int k = 0; k < universe.space.characteristics; ++k) {
    active[static_cast<std::size_t>(
        universe.space.feature_index(k, o.features[static_cast<std::size_t>(k)]))] = 1;
  }
  return active;
}

double Schedule::xi() const {
  if (order.empty() || class_counts.empty()) return 0.0;
  const auto smallest = *std::min_element(class_counts.begin(), class_counts.end());
  return static_cast<double>(smallest) / static_cast<double>(order.size());
}

namespace {

Schedule finish_schedule(const StimulusUniverse& u, ScheduleMode mode, std::vector<std::size_t> order) {
  Schedule s;
  s.mode = mode;
  s.class_counts.assign(u.class_count(), 0);
  s.classes.reserve(order.size());
  for (std::size_t o : order) {
    if (o >= u.nature_count()) {
      throw InvalidArgument("schedule references nature " + std::to_string(o) + " of " +
                            std::to_string(u.nature_count()));
    }
    const ClassId j = u.natures[o].class_label;
    s.classes.push_back(j);
    ++s.class_counts[j];
  }
  s.order = std::move(order);
  return s;
}

}  // namespace

Schedule make_schedule(const StimulusUniverse& universe, std::size_t rounds, ScheduleMode mode,
                       std::uint64_t seed) {
  const std::size_t natures = universe.nature_count();
  if (natures == 0) throw InvalidArgument("cannot schedule an empty universe");
  Rng rng(seed);
  std::vector<std::size_t> order;
  order.reserve(rounds);
  switch (mode) {
    case ScheduleMode::EpochShuffle: {
      if (rounds % natures != 0) {
        throw InvalidArgument("epoch_shuffle needs the number of natures (" +
                              std::to_string(natures) + ") to divide M = " +
                              std::to_string(rounds));
      }
      std::vector<std::size_t> epoch(natures);
      for (std::size_t e = 0; e < rounds / natures; ++e) {
        std::iota(epoch.begin(), epoch.end(), std::size_t{0});
        for (std::size_t i = natures - 1; i > 0; --i) {
          std::swap(epoch[i], epoch[static_cast<std::size_t>(rng.below(i + 1))]);
        }
        order.insert(order.end(), epoch.begin(), epoch.end());
      }
      break;
    }
    case ScheduleMode::IidReplacement:
      for (std::size_t m = 0; m < rounds; ++m) order.push_back(static_cast<std::size_t>(rng.below(natures)));
      break;
    case ScheduleMode::Explicit:
      throw InvalidArgument("explicit schedules are built with make_explicit_schedule");
  }
  return finish_schedule(universe, mode, std::move(order));
}

Schedule make_explicit_schedule(const StimulusUniverse& universe, std::vector<std::size_t> order) {
  return finish_schedule(universe, ScheduleMode::Explicit, std::move(order));
}

std::vector<std::size_t> make_test_set(const StimulusUniverse& universe, std::size_t size, Rng& rng) {
  std::vector<std::size_t> out(size);
  for (auto& o : out) o = static_cast<std::size_t>(rng.below(universe.nature_count()));
  return out;
}

void to_json(nlohmann::json& j, const StimulusUniverse& u) {
  j = nlohmann::json::object();
  j["characteristics"] = u.space.characteristics;
  j["features"] = u.space.features_per_characteristic;
  j["feature_names"] = u.space.feature_names;
  j["classes"] = u.class_names;
  auto natures = nlohmann::json::array();
  for (const auto& o : u.natures) {
    natures.push_back({{"id", o.id}, {"features", o.features}, {"class", u.class_names.at(o.class_label)}});
  }
  j["natures"] = std::move(natures);
  auto neurons = nlohmann::json::array();
  for (const auto& n : u.encoding.neurons()) {
    neurons.push_back({{"name", n.name}, {"feature", n.feature}, {"detects_absence", n.detects_absence}});
  }
  j["neurons"] = std::move(neurons);
  auto probabilities = nlohmann::json::array();
  for (std::size_t o = 0; o < u.nature_count(); ++o) {
    const auto rates = u.encoding.rates_for(o);
    probabilities.push_back(std::vector<double>(rates.begin(), rates.end()));
  }
  j["probabilities"] = std::move(probabilities);
}

void from_json(const nlohmann::json& j, StimulusUniverse& u) {
  u = StimulusUniverse{};
  u.space.characteristics = j.at("characteristics").get<int>();
  u.space.features_per_characteristic = j.at("features").get<int>();
  if (j.contains("feature_names")) {
    u.space.feature_names = j.at("feature_names").get<std::vector<std::vector<std::string>>>();
  } else {
    u.space.feature_names =
        default_feature_names(u.space.characteristics, u.space.features_per_characteristic);
  }
  u.class_names = j.at("classes").get<std::vector<std::string>>();
  for (const auto& item : j.at("natures")) {
    ObjectNature o;
    o.id = item.at("id").get<std::string>();
    o.features = item.at("features").get<std::vector<int>>();
    const auto cls = item.at("class").get<std::string>();
    const auto it = std::find(u.class_names.begin(), u.class_names.end(), cls);
    if (it == u.class_names.end()) throw InvalidArgument("nature '" + o.id + "' has unknown class '" + cls + "'");
    o.class_label = static_cast<ClassId>(it - u.class_names.begin());
    u.natures.push_back(std::move(o));
  }
  std::vector<InputNeuron> neurons;
  for (const auto& item : j.at("neurons")) {
    neurons.push_back({item.at("name").get<std::string>(), item.value("feature", -1),
                       item.value("detects_absence", false)});
  }
  const auto& rows = j.at("probabilities");
  if (rows.size() != u.natures.size()) {
    throw InvalidArgument("probabilities must have one row per nature");
  }
  std::vector<double> table;
  for (const auto& row : rows) {
    const auto values = row.get<std::vector<double>>();
    if (values.size() != neurons.size()) {
      throw InvalidArgument("probability row must have one entry per neuron");
    }
    table.insert(table.end(), values.begin(), values.end());
  }
  u.encoding = Encoding(std::move(neurons), u.natures.size(), std::move(table));
  u.validate();
}

}  // namespace han
