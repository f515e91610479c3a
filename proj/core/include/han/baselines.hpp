#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "han/stimuli.hpp"

namespace han {

class Rng;

/// Component-Cue feature-to-category model. Activations are linear in the
/// present features and the weights follow a delta rule.
class ComponentCue {
 public:
  ComponentCue(std::size_t features, std::size_t classes, double learning_rate, double sharpness);

  /// O^j = sum_i a^i w^{i->j}.
  std::vector<double> activations(std::span<const std::uint8_t> present) const;
  /// Class drawn with probability proportional to exp(sharpness * O^j).
  ClassId predict_sampled(std::span<const std::uint8_t> present, Rng& rng) const;
  /// Largest activation, ties broken uniformly at random.
  ClassId predict_argmax(std::span<const std::uint8_t> present, Rng& rng) const;
  /// Predicts (sampled), then applies w += lr * a^i (tau^j - O^j). Returns the prediction.
  ClassId step(std::span<const std::uint8_t> present, ClassId truth, Rng& rng);

  double weight(std::size_t feature, std::size_t cls) const { return weights_[feature * classes_ + cls]; }
  std::size_t features() const { return features_; }
  std::size_t classes() const { return classes_; }

 private:
  void check_features(std::span<const std::uint8_t> present) const;

  std::size_t features_;
  std::size_t classes_;
  double learning_rate_;
  double sharpness_;
  std::vector<double> weights_;  // features x classes
};

/// Binary perceptron over a fixed-length 0/1 feature vector plus a bias.
/// Labels are +1 / -1; <w,x> + b > 0 predicts +1.
class Perceptron {
 public:
  Perceptron(std::size_t features, double learning_rate);

  int predict(std::span<const double> x) const;
  /// Predicts and updates on a mistake only. Returns the prediction.
  int step(std::span<const double> x, int label);

  const std::vector<double>& weights() const { return weights_; }
  double bias() const { return bias_; }
  std::size_t mistakes() const { return mistakes_; }

 private:
  std::vector<double> weights_;
  double bias_ = 0.0;
  double learning_rate_;
  std::size_t mistakes_ = 0;
};

}  // namespace han
