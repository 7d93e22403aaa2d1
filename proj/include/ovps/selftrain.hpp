#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovps/dataset.hpp"
#include "ovps/geometry.hpp"
#include "ovps/ovpe.hpp"
#include "ovps/plm.hpp"
#include "ovps/zeroshot.hpp"

namespace ovps {

// Linear classifier over region embeddings with one output per bank class
// plus background (last). Logits are logit_scale * (W r + b).
struct LinearHead {
  std::size_t dim = 0;
  double logit_scale = kDefaultTemperature;
  std::vector<std::uint64_t> class_ids;  // background slot excluded
  std::vector<double> weight;            // num_slots() x dim
  std::vector<double> bias;              // num_slots()

  std::size_t num_slots() const { return class_ids.size() + 1; }
  std::size_t background_slot() const { return class_ids.size(); }
  std::optional<std::size_t> slot_of(std::uint64_t class_id) const;

  std::vector<double> logits(std::span<const float> region) const;
  std::vector<double> probs(std::span<const float> region) const;

  bool operator==(const LinearHead&) const = default;
};

// Rows copied from the text bank, zero bias. With logit_scale equal to the
// zero-shot temperature the head reproduces classify() exactly.
LinearHead init_head_from_bank(const TextBank& bank, double logit_scale = kDefaultTemperature);

// Rows are OVPE records: id = class id (background last), box[0] = logit
// scale, objectness = bias. Rows are not normalized on load.
void save_head(const std::filesystem::path& path, const LinearHead& head);
LinearHead load_head(const std::filesystem::path& path);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits
};

// loss = -w[target] * log softmax(logits)[target],
// grad = w[target] * (softmax(logits) - onehot(target)).
LossAndGrad weighted_ce(std::span<const double> logits, std::size_t target, std::span<const double> class_weights);

struct TrainConfig {
  double learning_rate = 0.002;
  std::size_t iterations = 2000;
  std::size_t batch_size = 8;
  double background_weight = 0.9;
  double momentum = 0.0;
  bool plm_enabled = true;
  PlmConfig plm;
  std::uint64_t seed = 0;
  // Novel recall is measured every snapshot_every iterations (0 disables).
  std::size_t snapshot_every = 100;
};

void validate(const TrainConfig& cfg);

struct IterationMetrics {
  std::size_t iteration = 0;
  double loss = 0.0;
  std::size_t pseudo_labels = 0;
  std::optional<double> novel_recall;

  nlohmann::json to_json() const;
  bool operator==(const IterationMetrics&) const = default;
};

struct TrainResult {
  LinearHead head;
  std::vector<IterationMetrics> metrics;
};

// Called with (iteration, image id, diagnostics) after every PLM step.
using PlmObserver = std::function<void(std::size_t, std::uint64_t, const PlmDiagnostics&)>;

// Plain (optionally momentum) SGD on the weighted cross entropy. Each
// iteration draws batch_size training images, assigns targets from the
// non-withheld annotations (base ground truth and any pseudo annotations),
// optionally rewrites them with run_plm_step, and takes one step on the loss
// averaged over every proposal in the batch. plm_bank is the vocabulary the
// pseudo-labeler classifies against; it defaults to head_bank.
TrainResult train(const LinearHead& head, const Dataset& dataset, const RegionEmbeddingFile& regions,
                  const TextBank& head_bank, const TrainConfig& cfg, const TextBank* plm_bank = nullptr,
                  const PlmObserver& observer = {});

// Fraction of novel ground-truth objects in `subset` whose exact-box region
// is classified correctly (top-1) by the head. nullopt without novel objects.
std::optional<double> novel_recall(const LinearHead& head, const Dataset& dataset,
                                   const RegionEmbeddingFile& regions, Subset subset);

struct Detection {
  std::uint64_t image_id = 0;
  Box box;
  std::uint64_t class_id = 0;
  double score = 0.0;
};

struct PredictConfig {
  FusionConfig fusion;
  double temperature = kDefaultTemperature;
  double nms_iou = 0.5;
  std::size_t max_detections = 100;
};

// Fuses the head's probabilities with the frozen zero-shot scores, keeps
// each proposal's fused argmax unless it is background, and applies
// per-class NMS. Sorted by descending score.
std::vector<Detection> predict(const LinearHead& head, std::span<const Proposal> proposals,
                               const RegionEmbeddingFile& regions, const TextBank& bank,
                               const PredictConfig& cfg, std::uint64_t image_id = 0);

std::vector<Detection> predict_images(const LinearHead& head, const Dataset& dataset,
                                      const RegionEmbeddingFile& regions, const TextBank& bank,
                                      const PredictConfig& cfg, Subset subset);

}  // namespace ovps
