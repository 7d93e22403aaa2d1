#include "ovps/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "ovps/error.hpp"

namespace ovps {
namespace {

// 0^0 is 1 (exponent collapse), 0^x is 0 for x > 0.
double weighted_power(double base, double exponent) {
  if (exponent == 0.0) return 1.0;
  if (base == 0.0) return 0.0;
  return std::pow(base, exponent);
}

}  // namespace

std::size_t ScoreVector::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

double ScoreVector::max() const { return probs.empty() ? 0.0 : *std::max_element(probs.begin(), probs.end()); }

FusionConfig::FusionConfig(double alpha, double beta) : alpha_(alpha), beta_(beta) {
  if (!(alpha >= 0.0 && alpha <= 1.0) || !(beta >= 0.0 && beta <= 1.0)) {
    throw ConfigError("fusion.alpha and fusion.beta must lie in [0, 1]");
  }
}

std::vector<double> similarities(std::span<const float> region, const TextBank& bank) {
  if (region.size() != bank.dim) {
    throw ShapeError("region vector has dim " + std::to_string(region.size()) + ", text bank has dim " +
                     std::to_string(bank.dim));
  }
  std::vector<double> sims(bank.num_slots());
  for (std::size_t c = 0; c < sims.size(); ++c) {
    const auto t = bank.vector(c);
    double s = 0.0;
    for (std::size_t i = 0; i < region.size(); ++i) s += static_cast<double>(region[i]) * t[i];
    sims[c] = s;
  }
  return sims;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  double hi = -INFINITY;
  for (double v : logits) hi = std::max(hi, temperature * v);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(temperature * logits[i] - hi);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

ScoreVector classify(std::span<const float> region, const TextBank& bank, double temperature) {
  if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
  const auto sims = similarities(region, bank);
  return ScoreVector{softmax(sims, temperature), temperature};
}

std::vector<double> fuse_scores(std::span<const double> p, std::span<const double> q,
                                const FusionConfig& cfg, std::span<const bool> novel_mask) {
  if (p.size() != q.size()) throw ShapeError("fuse_scores: p and q differ in length");
  if (p.empty() || novel_mask.size() + 1 != p.size()) {
    throw ShapeError("fuse_scores: split mask must cover every non-background slot");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0 || std::isnan(p[i]) || std::isnan(q[i])) {
      throw DomainError("fuse_scores: probabilities must be non-negative");
    }
  }
  std::vector<double> s(p.size());
  for (std::size_t c = 0; c + 1 < p.size(); ++c) {
    const double w = novel_mask[c] ? cfg.beta() : cfg.alpha();
    s[c] = weighted_power(p[c], 1.0 - w) * weighted_power(q[c], w);
  }
  s.back() = p.back();
  return s;
}

std::vector<double> fuse_scores(const ScoreVector& p, const ScoreVector& q, const FusionConfig& cfg,
                                const TextBank& bank) {
  // std::vector<bool> is not contiguous, so build the mask in a plain array.
  const auto mask = std::make_unique<bool[]>(bank.num_classes());
  for (std::size_t c = 0; c < bank.num_classes(); ++c) mask[c] = !bank.is_base(c);
  return fuse_scores(p.probs, q.probs, cfg, std::span<const bool>(mask.get(), bank.num_classes()));
}

}  // namespace ovps
