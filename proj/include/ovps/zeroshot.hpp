#pragma once

#include <span>
#include <vector>

#include "ovps/ovpe.hpp"

namespace ovps {

inline constexpr double kDefaultTemperature = 100.0;

// Per-slot probabilities over the bank's classes followed by background.
struct ScoreVector {
  std::vector<double> probs;
  double temperature = kDefaultTemperature;

  std::size_t argmax() const;
  double max() const;
};

// Weights of the frozen-scorer term in the geometric-mean fusion, for base
// (alpha) and novel (beta) classes.
class FusionConfig {
 public:
  FusionConfig() = default;
  FusionConfig(double alpha, double beta);

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }

 private:
  double alpha_ = 0.35;
  double beta_ = 0.65;
};

// Dot products of a unit region vector against every bank slot.
std::vector<double> similarities(std::span<const float> region, const TextBank& bank);

// Numerically stable softmax of temperature * logits.
std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

// softmax(temperature * <r, t_c>) over all classes and background. The region
// vector is assumed unit length (the loaders normalize), so the dot product
// is the cosine similarity. temperature == 0 gives the uniform distribution.
ScoreVector classify(std::span<const float> region, const TextBank& bank,
                     double temperature = kDefaultTemperature);

// s_c = p_c^(1-alpha) q_c^alpha for base classes and p_c^(1-beta) q_c^beta for
// novel classes; the background slot (last) is copied from p. Not
// renormalized. novel_mask has one entry per non-background slot.
std::vector<double> fuse_scores(std::span<const double> p, std::span<const double> q,
                                const FusionConfig& cfg, std::span<const bool> novel_mask);

std::vector<double> fuse_scores(const ScoreVector& p, const ScoreVector& q, const FusionConfig& cfg,
                                const TextBank& bank);

}  // namespace ovps
