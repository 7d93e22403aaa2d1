#pragma once

#include <cstddef>
#include <vector>

#include "ovps/dataset.hpp"
#include "ovps/ovpe.hpp"
#include "ovps/selftrain.hpp"

namespace ovps {

struct RefinementConfig {
  double score_threshold = 0.9;
  std::size_t max_pseudo_per_image = 20;
  // A harvested box overlapping an existing training annotation with IoU
  // strictly above this is dropped.
  double dedup_iou = 0.5;
  std::size_t rounds = 1;
};

void validate(const RefinementConfig& cfg);

// Runs the predictor over every training image and appends its confident
// novel-class detections as pseudo annotations (provenance pseudo, score
// kept). Withheld annotations play no part. Existing annotations are copied
// through unchanged; new annotations are appended in image-id order.
Dataset offline_refine(const Dataset& dataset, const LinearHead& head, const RegionEmbeddingFile& regions,
                       const TextBank& bank, const PredictConfig& predict_cfg, const RefinementConfig& cfg);

struct RefinementRound {
  std::size_t appended = 0;
  Dataset dataset;
  TrainResult training;
};

// Teacher-student rounds: harvest with the current head, then train a fresh
// head (initialized from the bank) on the augmented dataset with the same
// training recipe. Runs cfg.rounds rounds starting from `teacher`.
std::vector<RefinementRound> retrain_with_refinement(const Dataset& dataset, const LinearHead& teacher,
                                                     const RegionEmbeddingFile& regions, const TextBank& bank,
                                                     const TrainConfig& train_cfg, const PredictConfig& predict_cfg,
                                                     const RefinementConfig& cfg,
                                                     const TextBank* plm_bank = nullptr);

}  // namespace ovps
