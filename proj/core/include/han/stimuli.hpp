#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace han {

class Rng;

/// Which learning regime a network (and its input encoding) is built for.
///
/// `Han` uses a nonlinear activation with excitatory and inhibitory
/// connections. `HanSolo` is the linear excitation-only regime in which an
/// output spike is produced by copying one sampled presynaptic expert.
enum class Variant { Han, HanSolo };

std::string_view to_string(Variant variant);
Variant variant_from_string(std::string_view text);

using ClassId = std::size_t;

/// c characteristics, each declined in n features. Feature (k, l) has the
/// flat index k * n + l (both 0-based).
struct FeatureSpace {
  int characteristics = 1;
  int features_per_characteristic = 1;
  std::vector<std::vector<std::string>> feature_names;

  int feature_count() const { return characteristics * features_per_characteristic; }
  int feature_index(int characteristic, int feature) const {
    return characteristic * features_per_characteristic + feature;
  }
};

struct ObjectNature {
  std::string id;
  std::vector<int> features;  // one 0-based feature per characteristic
  ClassId class_label = 0;

  bool has_feature(int characteristic, int feature) const {
    return features[static_cast<std::size_t>(characteristic)] == feature;
  }
};

struct InputNeuron {
  std::string name;
  int feature = -1;               // flat feature index, -1 when not feature-based
  bool detects_absence = false;   // fires when `feature` is missing
};

/// Firing probability of every input neuron for every object nature.
/// Probabilities depend on the nature only, never on the round.
class Encoding {
 public:
  Encoding() = default;
  /// `probabilities` is nature-major: entry [o * neurons + i].
  Encoding(std::vector<InputNeuron> neurons, std::size_t nature_count,
           std::vector<double> probabilities);

  std::size_t neuron_count() const { return neurons_.size(); }
  std::size_t nature_count() const { return nature_count_; }
  const std::vector<InputNeuron>& neurons() const { return neurons_; }

  double probability(std::size_t neuron, std::size_t nature) const {
    return probabilities_[nature * neurons_.size() + neuron];
  }
  /// Firing probabilities of all input neurons for one nature.
  std::span<const double> rates_for(std::size_t nature) const {
    return {probabilities_.data() + nature * neurons_.size(), neurons_.size()};
  }

 private:
  std::vector<InputNeuron> neurons_;
  std::size_t nature_count_ = 0;
  std::vector<double> probabilities_;
};

/// The full object universe: the natures with their classes, plus the
/// input-layer encoding of their features.
struct StimulusUniverse {
  FeatureSpace space;
  std::vector<std::string> class_names;
  std::vector<ObjectNature> natures;
  Encoding encoding;

  std::size_t class_count() const { return class_names.size(); }
  std::size_t nature_count() const { return natures.size(); }
  std::vector<std::size_t> natures_in_class(ClassId j) const;
  std::size_t class_size(ClassId j) const;

  /// Throws InvalidArgument on any broken invariant.
  void validate() const;
};

/// The two-class example: class B is the single nature carrying the first
/// feature of every characteristic, class A holds the n^c - 1 others.
///
/// `Han`: one neuron per feature, firing with probability p when the object
/// has that feature. `HanSolo` adds one neuron per feature that fires with
/// probability q when the object lacks it.
StimulusUniverse build_concrete_example(int characteristics, int features_per_characteristic,
                                        double p, double q, Variant variant);

/// Drops every input neuron tied to one of `features` (flat indices).
StimulusUniverse ablate_features(const StimulusUniverse& universe, std::span<const int> features);

/// Presence indicators of the c * n features for one nature.
std::vector<std::uint8_t> feature_indicators(const StimulusUniverse& universe, std::size_t nature);

enum class ScheduleMode { EpochShuffle, IidReplacement, Explicit };

std::string_view to_string(ScheduleMode mode);
ScheduleMode schedule_mode_from_string(std::string_view text);

/// Presentation order o(1..M) with per-class counts M^j.
struct Schedule {
  ScheduleMode mode = ScheduleMode::Explicit;
  std::vector<std::size_t> order;    // nature index per round
  std::vector<ClassId> classes;      // class of each round
  std::vector<std::size_t> class_counts;

  std::size_t size() const { return order.size(); }
  /// min_j M^j / M; 0 for an empty schedule.
  double xi() const;
};

/// Deterministic given `seed`. EpochShuffle requires |natures| to divide
/// `rounds` and emits consecutive random permutations of all natures.
Schedule make_schedule(const StimulusUniverse& universe, std::size_t rounds, ScheduleMode mode,
                       std::uint64_t seed);
Schedule make_explicit_schedule(const StimulusUniverse& universe, std::vector<std::size_t> order);

/// `size` natures drawn uniformly with replacement.
std::vector<std::size_t> make_test_set(const StimulusUniverse& universe, std::size_t size,
                                       Rng& rng);

void to_json(nlohmann::json& j, const StimulusUniverse& universe);
void from_json(const nlohmann::json& j, StimulusUniverse& universe);

}  // namespace han
