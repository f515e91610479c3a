#include "han/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "han/error.hpp"
#include "han/rng.hpp"

namespace han {

ComponentCue::ComponentCue(std::size_t features, std::size_t classes, double learning_rate, double sharpness)
    : features_(features),
      classes_(classes),
      learning_rate_(learning_rate),
      sharpness_(sharpness),
      weights_(features * classes, 0.0) {
  if (classes < 2) throw InvalidArgument("Component-Cue needs at least two classes");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("Component-Cue learning rate must be finite and >= 0");
  }
  if (!std::isfinite(sharpness)) throw InvalidArgument("Component-Cue sharpness must be finite");
}

void ComponentCue::check_features(std::span<const std::uint8_t> present) const {
  if (present.size() != features_) {
    throw InvalidArgument("Component-Cue expects " + std::to_string(features_) + " feature indicators, got " +
                          std::to_string(present.size()));
  }
}

std::vector<double> ComponentCue::activations(std::span<const std::uint8_t> present) const {
  check_features(present);
  std::vector<double> out(classes_, 0.0);
  for (std::size_t i = 0; i < features_; ++i) {
    if (!present[i]) continue;
    for (std::size_t j = 0; j < classes_; ++j) out[j] += weights_[i * classes_ + j];
  }
  return out;
}

ClassId ComponentCue::predict_sampled(std::span<const std::uint8_t> present, Rng& rng) const {
  const auto o = activations(present);
  const double top = *std::max_element(o.begin(), o.end());
  std::vector<double> p(o.size());
  double total = 0.0;
  for (std::size_t j = 0; j < o.size(); ++j) {
    p[j] = std::exp(sharpness_ * (o[j] - top));
    total += p[j];
  }
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t j = 0; j + 1 < p.size(); ++j) {
    acc += p[j];
    if (u < acc) return j;
  }
  return p.size() - 1;
}

ClassId ComponentCue::predict_argmax(std::span<const std::uint8_t> present, Rng& rng) const {
  const auto o = activations(present);
  const double top = *std::max_element(o.begin(), o.end());
  std::vector<ClassId> best;
  for (std::size_t j = 0; j < o.size(); ++j) {
    if (o[j] == top) best.push_back(j);
  }
  return best.size() == 1 ? best.front() : best[rng.below(best.size())];
}

ClassId ComponentCue::step(std::span<const std::uint8_t> present, ClassId truth, Rng& rng) {
  if (truth >= classes_) throw InvalidArgument("Component-Cue: class out of range");
  const ClassId prediction = predict_sampled(present, rng);
  const auto o = activations(present);
  for (std::size_t i = 0; i < features_; ++i) {
    if (!present[i]) continue;
    for (std::size_t j = 0; j < classes_; ++j) {
      const double target = j == truth ? 1.0 : -1.0;
      weights_[i * classes_ + j] += learning_rate_ * (target - o[j]);
    }
  }
  return prediction;
}

Perceptron::Perceptron(std::size_t features, double learning_rate)
    : weights_(features, 0.0), learning_rate_(learning_rate) {
  if (features == 0) throw InvalidArgument("perceptron needs at least one feature");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("perceptron learning rate must be finite and > 0");
  }
}

int Perceptron::predict(std::span<const double> x) const {
  if (x.size() != weights_.size()) throw InvalidArgument("perceptron: feature vector has the wrong length");
  double s = bias_;
  for (std::size_t i = 0; i < x.size(); ++i) s += weights_[i] * x[i];
  return s > 0.0 ? 1 : -1;
}

int Perceptron::step(std::span<const double> x, int label) {
  if (label != 1 && label != -1) throw InvalidArgument("perceptron labels must be +1 or -1");
  const int prediction = predict(x);
  if (prediction != label) {
    for (std::size_t i = 0; i < x.size(); ++i) weights_[i] += learning_rate_ * label * x[i];
    bias_ += learning_rate_ * label;
    ++mistakes_;
  }
  return prediction;
}

}  // namespace han
