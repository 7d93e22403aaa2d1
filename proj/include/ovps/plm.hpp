#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovps/dataset.hpp"
#include "ovps/geometry.hpp"
#include "ovps/ovpe.hpp"
#include "ovps/random.hpp"

namespace ovps {

struct TargetLabel {
  enum class Kind { kBackground, kForeground, kCategory };

  Kind kind = Kind::kBackground;
  std::uint64_t class_id = 0;  // meaningful for kCategory only

  static TargetLabel background() { return {}; }
  static TargetLabel foreground() { return {Kind::kForeground, 0}; }
  static TargetLabel category(std::uint64_t id) { return {Kind::kCategory, id}; }

  bool operator==(const TargetLabel&) const = default;
};

struct ClassificationTarget {
  std::size_t proposal_index = 0;
  TargetLabel label;
  Provenance provenance = Provenance::kNone;

  bool operator==(const ClassificationTarget&) const = default;
};

struct GtObject {
  Box box;
  std::uint64_t class_id = 0;
  Provenance provenance = Provenance::kGroundTruth;
};

struct ImageTargets {
  std::vector<ClassificationTarget> rpn;  // foreground / background
  std::vector<ClassificationTarget> roi;  // category / background
};

// Standard two-stage assignment: a proposal whose best IoU against the
// annotations is >= pos_iou takes that annotation's class (RoI) or becomes
// foreground (RPN), carrying the annotation's provenance. Everything else is
// background with provenance kNone.
ImageTargets assign_targets(std::span<const Proposal> proposals, std::span<const GtObject> gt,
                            double pos_iou = 0.5);

enum class ScoreMode {
  kSoftmax,    // threshold the temperature-scaled softmax probability
  kRawCosine,  // threshold the raw cosine similarity
};

struct PlmConfig {
  double threshold = 0.8;
  std::size_t k = 4;
  std::size_t neg_cap = 1000;
  double neg_iou_max = 0.5;
  double nms_iou = 0.7;
  double pos_iou = 0.5;
  double temperature = 100.0;
  ScoreMode score_mode = ScoreMode::kSoftmax;
};

void validate(const PlmConfig& cfg);

struct Candidate {
  std::size_t proposal_index = 0;
  std::size_t slot = 0;  // bank slot of the argmax class
  std::uint64_t class_id = 0;
  double score = 0.0;
};

struct PseudoLabel {
  std::size_t proposal_index = 0;
  std::uint64_t class_id = 0;
  double frozen_score = 0.0;

  bool operator==(const PseudoLabel&) const = default;
};

// Scores each negative with positive objectness against the bank and keeps
// those whose top score exceeds the threshold with a novel argmax (never
// base, never background). Output follows the order of `negatives`.
std::vector<Candidate> mine_candidates(std::span<const Proposal> proposals,
                                       std::span<const std::size_t> negatives,
                                       const RegionEmbeddingFile& regions, const TextBank& bank,
                                       const PlmConfig& cfg);

// Uniform sample of min(k, |candidates|) without replacement, returned in
// proposal order.
std::vector<PseudoLabel> select_pseudo_labels(std::span<const Candidate> candidates, std::size_t k, Rng& rng);

// Flip the selected background targets to foreground (RPN) or to the pseudo
// class (RoI), provenance pseudo. Throws ConsistencyError if a pseudo label
// does not point at a background target.
std::vector<ClassificationTarget> rewrite_rpn_targets(std::span<const ClassificationTarget> targets,
                                                      std::span<const PseudoLabel> pseudo);
std::vector<ClassificationTarget> rewrite_roi_targets(std::span<const ClassificationTarget> targets,
                                                      std::span<const PseudoLabel> pseudo);

struct PlmDiagnostics {
  std::size_t proposals = 0;
  std::size_t negatives = 0;
  std::size_t rpn_negatives = 0;  // after NMS capping
  std::size_t candidates = 0;
  std::size_t selected = 0;
  std::size_t rpn_rewritten = 0;
  std::size_t roi_rewritten = 0;
  std::map<std::uint64_t, std::size_t> per_class;  // selected pseudo labels by class id

  nlohmann::json to_json() const;
};

struct PlmStepResult {
  std::vector<ClassificationTarget> rpn_targets;
  std::vector<ClassificationTarget> roi_targets;
  std::vector<PseudoLabel> pseudo;
  PlmDiagnostics diagnostics;
};

// One pseudo-labeling pass for one image: assignment, negative matching,
// RPN-side NMS capping, mining, random selection and both rewrites. The RoI
// path sees every negative; the RPN path only the capped subset. A single
// selection is shared by both heads. When roi_vocabulary is given, pseudo
// labels whose class is outside it only reach the RPN targets.
PlmStepResult run_plm_step(std::span<const Proposal> proposals, std::span<const GtObject> gt,
                           const RegionEmbeddingFile& regions, const TextBank& bank, const PlmConfig& cfg,
                           Rng& rng, const std::set<std::uint64_t>* roi_vocabulary = nullptr);

}  // namespace ovps
