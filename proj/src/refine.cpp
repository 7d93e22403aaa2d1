#include "ovps/refine.hpp"

#include <algorithm>

#include "ovps/error.hpp"
#include "ovps/region_index.hpp"

namespace ovps {

void validate(const RefinementConfig& cfg) {
  if (!(cfg.score_threshold > 0.0 && cfg.score_threshold <= 1.0)) {
    throw ConfigError("refine.score_threshold must be in (0, 1]");
  }
  if (!(cfg.dedup_iou > 0.0 && cfg.dedup_iou <= 1.0)) throw ConfigError("refine.dedup_iou must be in (0, 1]");
  if (cfg.rounds < 1) throw ConfigError("refine.rounds must be >= 1");
}

Dataset offline_refine(const Dataset& dataset, const LinearHead& head, const RegionEmbeddingFile& regions,
                       const TextBank& bank, const PredictConfig& predict_cfg, const RefinementConfig& cfg) {
  validate(cfg);
  Dataset out = dataset;
  const RegionIndex index(regions);
  std::uint64_t next_id = dataset.next_annotation_id();

  for (std::uint64_t image_id : dataset.image_ids(Subset::kTrain)) {
    std::vector<Box> occupied;
    for (const Annotation* a : dataset.training_annotations(image_id)) occupied.push_back(a->box);

    const auto props = index.proposals(image_id);
    std::size_t added = 0;
    for (const auto& det : predict(head, props, regions, bank, predict_cfg, image_id)) {
      if (added >= cfg.max_pseudo_per_image) break;
      const Category* cat = dataset.category(det.class_id);
      if (cat == nullptr || cat->split != ClassSplit::kNovel) continue;
      if (det.score < cfg.score_threshold) continue;
      const bool clash = std::any_of(occupied.begin(), occupied.end(),
                                     [&](const Box& b) { return iou(b, det.box) > cfg.dedup_iou; });
      if (clash) continue;
      out.annotations.push_back(
          Annotation{next_id++, image_id, det.box, det.class_id, Provenance::kPseudo, false, det.score});
      occupied.push_back(det.box);
      ++added;
    }
  }
  return out;
}

std::vector<RefinementRound> retrain_with_refinement(const Dataset& dataset, const LinearHead& teacher,
                                                     const RegionEmbeddingFile& regions, const TextBank& bank,
                                                     const TrainConfig& train_cfg, const PredictConfig& predict_cfg,
                                                     const RefinementConfig& cfg, const TextBank* plm_bank) {
  validate(cfg);
  std::vector<RefinementRound> rounds;
  rounds.reserve(cfg.rounds);
  const Dataset* current = &dataset;
  const LinearHead* current_head = &teacher;
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    RefinementRound round;
    round.dataset = offline_refine(*current, *current_head, regions, bank, predict_cfg, cfg);
    round.appended = round.dataset.annotations.size() - current->annotations.size();
    round.training = train(init_head_from_bank(bank, teacher.logit_scale), round.dataset, regions, bank, train_cfg,
                           plm_bank);
    rounds.push_back(std::move(round));
    current = &rounds.back().dataset;
    current_head = &rounds.back().training.head;
  }
  return rounds;
}

}  // namespace ovps
