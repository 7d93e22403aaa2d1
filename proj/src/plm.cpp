#include "ovps/plm.hpp"

#include <algorithm>
#include <string>

#include "ovps/error.hpp"
#include "ovps/zeroshot.hpp"

namespace ovps {
namespace {

std::vector<ClassificationTarget> rewrite(std::span<const ClassificationTarget> targets,
                                          std::span<const PseudoLabel> pseudo, bool to_category) {
  std::vector<ClassificationTarget> out(targets.begin(), targets.end());
  for (const auto& p : pseudo) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const ClassificationTarget& t) { return t.proposal_index == p.proposal_index; });
    if (it == out.end()) {
      throw ConsistencyError("pseudo label refers to proposal " + std::to_string(p.proposal_index) +
                             " which has no target");
    }
    if (it->label.kind != TargetLabel::Kind::kBackground || it->provenance != Provenance::kNone) {
      throw ConsistencyError("pseudo label refers to proposal " + std::to_string(p.proposal_index) +
                             " whose target is not background");
    }
    it->label = to_category ? TargetLabel::category(p.class_id) : TargetLabel::foreground();
    it->provenance = Provenance::kPseudo;
  }
  return out;
}

}  // namespace

ImageTargets assign_targets(std::span<const Proposal> proposals, std::span<const GtObject> gt, double pos_iou) {
  std::vector<Box> boxes;
  boxes.reserve(gt.size());
  for (const auto& g : gt) boxes.push_back(g.box);
  const auto matches = best_matches(proposals, boxes);

  ImageTargets out;
  out.rpn.resize(proposals.size());
  out.roi.resize(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    out.rpn[i].proposal_index = i;
    out.roi[i].proposal_index = i;
    if (matches[i].gt_index >= 0 && matches[i].iou >= pos_iou) {
      const auto& g = gt[static_cast<std::size_t>(matches[i].gt_index)];
      out.rpn[i].label = TargetLabel::foreground();
      out.rpn[i].provenance = g.provenance;
      out.roi[i].label = TargetLabel::category(g.class_id);
      out.roi[i].provenance = g.provenance;
    }
  }
  return out;
}

void validate(const PlmConfig& cfg) {
  if (cfg.k < 1) throw ConfigError("plm.k must be >= 1");
  if (cfg.neg_cap < 1) throw ConfigError("plm.neg_cap must be >= 1");
  if (!(cfg.neg_iou_max >= 0.0 && cfg.neg_iou_max < 1.0)) throw ConfigError("plm.neg_iou_max must be in [0, 1)");
  if (!(cfg.nms_iou > 0.0 && cfg.nms_iou <= 1.0)) throw ConfigError("plm.nms_iou must be in (0, 1]");
  if (!(cfg.threshold > 0.0 && cfg.threshold <= 1.0)) throw ConfigError("plm.threshold must be in (0, 1]");
  if (cfg.neg_iou_max > cfg.pos_iou) {
    throw ConfigError("plm.neg_iou_max must not exceed the positive assignment IoU");
  }
  if (!(cfg.temperature >= 0.0)) throw ConfigError("plm temperature must be >= 0");
}

std::vector<Candidate> mine_candidates(std::span<const Proposal> proposals,
                                       std::span<const std::size_t> negatives,
                                       const RegionEmbeddingFile& regions, const TextBank& bank,
                                       const PlmConfig& cfg) {
  std::vector<Candidate> out;
  for (std::size_t idx : negatives) {
    if (idx >= proposals.size()) throw DataError("negative index out of range");
    const Proposal& p = proposals[idx];
    if (!(p.objectness > 0.0)) continue;
    if (p.embedding_index >= regions.size()) {
      throw DataError("proposal " + std::to_string(idx) + " has no stored embedding (index " +
                      std::to_string(p.embedding_index) + ")");
    }
    const auto region = regions.vector(p.embedding_index);
    std::vector<double> scores = cfg.score_mode == ScoreMode::kSoftmax
                                     ? classify(region, bank, cfg.temperature).probs
                                     : similarities(region, bank);
    const auto best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    if (scores[best] > cfg.threshold && bank.is_novel(best)) {
      out.push_back(Candidate{idx, best, bank.class_ids[best], scores[best]});
    }
  }
  return out;
}

std::vector<PseudoLabel> select_pseudo_labels(std::span<const Candidate> candidates, std::size_t k, Rng& rng) {
  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t take = std::min(k, order.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(order.size() - i));
    std::swap(order[i], order[j]);
  }
  std::vector<PseudoLabel> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    const auto& c = candidates[order[i]];
    out.push_back(PseudoLabel{c.proposal_index, c.class_id, c.score});
  }
  std::sort(out.begin(), out.end(),
            [](const PseudoLabel& a, const PseudoLabel& b) { return a.proposal_index < b.proposal_index; });
  return out;
}

std::vector<ClassificationTarget> rewrite_rpn_targets(std::span<const ClassificationTarget> targets,
                                                      std::span<const PseudoLabel> pseudo) {
  return rewrite(targets, pseudo, false);
}

std::vector<ClassificationTarget> rewrite_roi_targets(std::span<const ClassificationTarget> targets,
                                                      std::span<const PseudoLabel> pseudo) {
  return rewrite(targets, pseudo, true);
}

nlohmann::json PlmDiagnostics::to_json() const {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [id, n] : per_class) hist[std::to_string(id)] = n;
  return {{"proposals", proposals},         {"negatives", negatives},
          {"rpn_negatives", rpn_negatives}, {"candidates", candidates},
          {"selected", selected},           {"rpn_rewritten", rpn_rewritten},
          {"roi_rewritten", roi_rewritten}, {"per_class", hist}};
}

PlmStepResult run_plm_step(std::span<const Proposal> proposals, std::span<const GtObject> gt,
                           const RegionEmbeddingFile& regions, const TextBank& bank, const PlmConfig& cfg,
                           Rng& rng, const std::set<std::uint64_t>* roi_vocabulary) {
  validate(cfg);
  auto targets = assign_targets(proposals, gt, cfg.pos_iou);

  std::vector<Box> gt_boxes;
  gt_boxes.reserve(gt.size());
  for (const auto& g : gt) gt_boxes.push_back(g.box);
  const auto negatives = match_negatives(proposals, gt_boxes, cfg.neg_iou_max);

  std::vector<Proposal> negative_props;
  negative_props.reserve(negatives.size());
  for (std::size_t i : negatives) negative_props.push_back(proposals[i]);
  std::set<std::size_t> rpn_negatives;
  for (std::size_t local : nms(negative_props, cfg.nms_iou, cfg.neg_cap)) rpn_negatives.insert(negatives[local]);

  const auto candidates = mine_candidates(proposals, negatives, regions, bank, cfg);
  auto pseudo = select_pseudo_labels(candidates, cfg.k, rng);

  std::vector<PseudoLabel> rpn_pseudo;
  std::vector<PseudoLabel> roi_pseudo;
  for (const auto& p : pseudo) {
    if (rpn_negatives.count(p.proposal_index)) rpn_pseudo.push_back(p);
    if (roi_vocabulary == nullptr || roi_vocabulary->count(p.class_id)) roi_pseudo.push_back(p);
  }

  PlmStepResult result;
  result.rpn_targets = rewrite_rpn_targets(targets.rpn, rpn_pseudo);
  result.roi_targets = rewrite_roi_targets(targets.roi, roi_pseudo);
  auto& d = result.diagnostics;
  d.proposals = proposals.size();
  d.negatives = negatives.size();
  d.rpn_negatives = rpn_negatives.size();
  d.candidates = candidates.size();
  d.selected = pseudo.size();
  d.rpn_rewritten = rpn_pseudo.size();
  d.roi_rewritten = roi_pseudo.size();
  for (const auto& p : pseudo) ++d.per_class[p.class_id];
  result.pseudo = std::move(pseudo);
  return result;
}

}  // namespace ovps
