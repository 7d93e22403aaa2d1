#pragma once
// Deliberately naive reference implementations and random fixtures shared by
// the unit tests and the acceptance runner. Nothing here calls the code it
// is used to check, except where noted.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ovps/dataset.hpp"
#include "ovps/evalkit.hpp"
#include "ovps/geometry.hpp"
#include "ovps/ovpe.hpp"
#include "ovps/plm.hpp"
#include "ovps/random.hpp"
#include "ovps/selftrain.hpp"
#include "ovps/zeroshot.hpp"

namespace oracle {

inline ovps::Box random_box(ovps::Rng& rng, double extent = 100.0) {
  const double x = rng.uniform(0.0, extent), y = rng.uniform(0.0, extent);
  return {x, y, x + rng.uniform(1.0, extent / 2), y + rng.uniform(1.0, extent / 2)};
}

inline double naive_iou(const ovps::Box& a, const ovps::Box& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Repeatedly take the best remaining box (lowest index on ties).
inline std::vector<std::size_t> nms(const std::vector<ovps::Box>& boxes, const std::vector<double>& scores,
                                    double thr, std::size_t max_keep) {
  std::vector<bool> alive(boxes.size(), true);
  std::vector<std::size_t> keep;
  while (keep.size() < max_keep) {
    std::ptrdiff_t best = -1;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (alive[i] && (best < 0 || scores[i] > scores[static_cast<std::size_t>(best)])) {
        best = static_cast<std::ptrdiff_t>(i);
      }
    }
    if (best < 0) break;
    const auto b = static_cast<std::size_t>(best);
    keep.push_back(b);
    alive[b] = false;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (alive[i] && naive_iou(boxes[i], boxes[b]) >= thr) alive[i] = false;
    }
  }
  return keep;
}

inline std::vector<std::size_t> negatives(const std::vector<ovps::Proposal>& props, const std::vector<ovps::Box>& gt,
                                          double thr) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < props.size(); ++i) {
    double best = 0.0;
    for (const auto& g : gt) best = std::max(best, naive_iou(props[i].box, g));
    if (best < thr) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------- evaluation

struct EvalFixture {
  std::vector<ovps::Detection> dets;
  std::vector<ovps::GroundTruthBox> gts;
  std::vector<ovps::Category> categories;
};

// A few images, a few classes, detections that are jittered copies of ground
// truth (some with the wrong class) plus clutter. Scores are drawn from a
// small set so ties are common.
inline EvalFixture random_eval_fixture(ovps::Rng& rng) {
  EvalFixture f;
  const std::size_t n_classes = 2 + rng.below(3);
  for (std::size_t c = 0; c < n_classes; ++c) {
    f.categories.push_back({c + 1, "c" + std::to_string(c), c % 2 ? ovps::ClassSplit::kNovel : ovps::ClassSplit::kBase});
  }
  const std::size_t n_images = 1 + rng.below(5);
  for (std::uint64_t img = 1; img <= n_images; ++img) {
    const std::size_t n_gt = rng.below(6);
    for (std::size_t g = 0; g < n_gt; ++g) {
      const ovps::Box b = random_box(rng);
      const std::uint64_t cls = 1 + rng.below(n_classes);
      f.gts.push_back({img, b, cls});
      const std::size_t copies = rng.below(3);
      for (std::size_t k = 0; k < copies; ++k) {
        const double dx = rng.uniform(-6, 6), dy = rng.uniform(-6, 6);
        const std::uint64_t dcls = rng.uniform() < 0.8 ? cls : 1 + rng.below(n_classes);
        f.dets.push_back({img, {b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy}, dcls, double(rng.below(20)) / 20.0});
      }
    }
    const std::size_t clutter = rng.below(5);
    for (std::size_t k = 0; k < clutter; ++k) {
      f.dets.push_back({img, random_box(rng), 1 + rng.below(n_classes), double(rng.below(20)) / 20.0});
    }
  }
  return f;
}

struct ClassResult {
  double ap50 = 0, ap = 0, ar = 0;
};

// COCO-style AP written out longhand: explicit rank comparator, exhaustive
// gt search, and for each recall point the max precision over every rank at
// or beyond it.
inline ClassResult brute_force_class(const std::vector<ovps::Detection>& all_dets,
                                     const std::vector<ovps::GroundTruthBox>& all_gts, std::uint64_t cls) {
  // Per-image cap: a detection survives if fewer than 100 detections of its
  // image (any class) rank strictly before it.
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < all_dets.size(); ++i) {
    std::size_t before = 0;
    for (std::size_t j = 0; j < all_dets.size(); ++j) {
      if (all_dets[j].image_id != all_dets[i].image_id) continue;
      if (all_dets[j].score > all_dets[i].score || (all_dets[j].score == all_dets[i].score && j < i)) ++before;
    }
    if (before < ovps::kMaxDetectionsPerImage && all_dets[i].class_id == cls) idx.push_back(i);
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto &da = all_dets[a], &db = all_dets[b];
    if (da.score != db.score) return da.score > db.score;
    if (da.image_id != db.image_id) return da.image_id < db.image_id;
    return a < b;
  });
  std::vector<ovps::GroundTruthBox> gts;
  for (const auto& g : all_gts) {
    if (g.class_id == cls) gts.push_back(g);
  }

  ClassResult out;
  double ap_sum = 0, ar_sum = 0;
  for (int t = 0; t < 10; ++t) {
    const double thr = 0.5 + 0.05 * t;
    std::vector<bool> used(gts.size(), false);
    std::vector<double> prec, rec;
    double tp = 0, fp = 0;
    for (std::size_t i : idx) {
      std::ptrdiff_t match = -1;
      double best = -1;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (used[g] || gts[g].image_id != all_dets[i].image_id) continue;
        const double v = naive_iou(all_dets[i].box, gts[g].box);
        if (v >= thr && v > best) best = v, match = static_cast<std::ptrdiff_t>(g);
      }
      if (match >= 0) {
        used[static_cast<std::size_t>(match)] = true;
        tp += 1;
      } else {
        fp += 1;
      }
      prec.push_back(tp / (tp + fp));
      rec.push_back(tp / static_cast<double>(gts.size()));
    }
    double ap = 0;
    for (int j = 0; j <= 100; ++j) {
      const double r = j / 100.0;
      double best = 0;
      for (std::size_t k = 0; k < prec.size(); ++k) {
        if (rec[k] >= r) best = std::max(best, prec[k]);
      }
      ap += best;
    }
    ap /= 101.0;
    if (t == 0) out.ap50 = ap;
    ap_sum += ap;
    ar_sum += rec.empty() ? 0.0 : rec.back();
  }
  out.ap = ap_sum / 10;
  out.ar = ar_sum / 10;
  return out;
}

struct Summary {
  double ap50_novel = 0, ap50_base = 0, ap_all = 0, ar_all = 0;
};

inline Summary brute_force_evaluate(const EvalFixture& f) {
  std::vector<double> novel, base, ap, ar;
  for (const auto& c : f.categories) {
    const bool has_gt = std::any_of(f.gts.begin(), f.gts.end(), [&](const auto& g) { return g.class_id == c.id; });
    if (!has_gt) continue;
    const auto r = brute_force_class(f.dets, f.gts, c.id);
    (c.split == ovps::ClassSplit::kNovel ? novel : base).push_back(r.ap50);
    ap.push_back(r.ap);
    ar.push_back(r.ar);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  return {mean(novel), mean(base), mean(ap), mean(ar)};
}

// ---------------------------------------------------------------- gradients

// Central finite differences of weighted_ce; returns the worst relative error
// against the analytic gradient (relative to max(|analytic|, 1e-2)).
inline double gradient_check(ovps::Rng& rng, std::size_t n) {
  std::vector<double> logits(n), weights(n);
  for (auto& l : logits) l = rng.normal() * 3.0;
  for (auto& w : weights) w = rng.uniform(0.5, 1.5);
  const std::size_t target = rng.below(n);
  const auto analytic = ovps::weighted_ce(logits, target, weights);
  double worst = 0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < n; ++i) {
    auto up = logits, down = logits;
    up[i] += h;
    down[i] -= h;
    const double numeric =
        (ovps::weighted_ce(up, target, weights).loss - ovps::weighted_ce(down, target, weights).loss) / (2 * h);
    const double scale = std::max(std::abs(analytic.grad[i]), 1e-2);
    worst = std::max(worst, std::abs(numeric - analytic.grad[i]) / scale);
  }
  return worst;
}

// ---------------------------------------------------------------- PLM

struct PlmFixture {
  ovps::TextBank bank;
  ovps::RegionEmbeddingFile regions;
  std::vector<ovps::Proposal> proposals;
  std::vector<ovps::GtObject> gt;
};

// Random image: a handful of base gt objects, proposals scattered around
// them and elsewhere, embeddings that are noisy mixes of a random class (base
// or novel) and background so every branch of the mining rule is exercised.
inline PlmFixture random_plm_fixture(ovps::Rng& rng, std::size_t n_base = 4, std::size_t n_novel = 3,
                                     std::size_t dim = 12) {
  PlmFixture f;
  auto& bank = f.bank;
  bank.dim = dim;
  const std::size_t n = n_base + n_novel;
  for (std::size_t c = 0; c < n; ++c) {
    bank.class_ids.push_back(100 + c);
    bank.class_names.push_back("c" + std::to_string(c));
    bank.class_split.push_back(c < n_base ? ovps::ClassSplit::kBase : ovps::ClassSplit::kNovel);
  }
  bank.vectors.assign((n + 1) * dim, 0.0f);
  for (std::size_t s = 0; s <= n; ++s) bank.vectors[s * dim + s] = 1.0f;

  const std::size_t n_gt = rng.below(4);
  for (std::size_t g = 0; g < n_gt; ++g) {
    f.gt.push_back({random_box(rng), 100 + rng.below(n_base), ovps::Provenance::kGroundTruth});
  }
  const std::size_t n_props = 5 + rng.below(40);
  f.regions.dim = dim;
  for (std::size_t i = 0; i < n_props; ++i) {
    ovps::Box b = random_box(rng);
    if (!f.gt.empty() && rng.uniform() < 0.4) {
      const auto& g = f.gt[rng.below(f.gt.size())].box;
      const double d = rng.uniform(0, 10);
      b = {g.x1 + d, g.y1, g.x2 + d, g.y2};
    }
    const double obj = rng.uniform() < 0.1 ? 0.0 : rng.uniform();
    std::vector<double> v(dim, 0.0);
    const std::size_t cls = rng.below(n);
    const double m = rng.uniform(0.3, 1.0);
    v[cls] += m;
    v[n] += 1.0 - m;
    double norm = 0;
    for (auto& x : v) {
      x += 0.05 * rng.normal();
      norm += x * x;
    }
    for (auto& x : v) f.regions.vectors.push_back(static_cast<float>(x / std::sqrt(norm)));
    f.regions.records.push_back({1, b, static_cast<float>(obj)});
    f.proposals.push_back({b, obj, i});
  }
  return f;
}

// Re-verifies one PLM step from scratch. Returns a description of the first
// violated rule, or nullopt. (Uses classify() as the frozen scorer.)
inline std::optional<std::string> verify_plm_step(const PlmFixture& f, const ovps::PlmConfig& cfg,
                                                  const ovps::PlmStepResult& r) {
  std::vector<ovps::Box> gt_boxes;
  for (const auto& g : f.gt) gt_boxes.push_back(g.box);
  const auto neg = negatives(f.proposals, gt_boxes, cfg.neg_iou_max);
  const std::set<std::size_t> neg_set(neg.begin(), neg.end());
  if (r.pseudo.size() > cfg.k) return "more than K pseudo labels";
  std::set<std::size_t> seen;
  for (const auto& p : r.pseudo) {
    if (!seen.insert(p.proposal_index).second) return "proposal selected twice";
    if (!neg_set.count(p.proposal_index)) return "pseudo label on a non-negative proposal";
    const auto& prop = f.proposals[p.proposal_index];
    if (!(prop.objectness > 0)) return "pseudo label on zero-objectness proposal";
    const auto s = ovps::classify(f.regions.vector(prop.embedding_index), f.bank, cfg.temperature);
    const std::size_t top = s.argmax();
    if (!f.bank.is_novel(top)) return "argmax is not novel";
    if (f.bank.class_ids[top] != p.class_id) return "class differs from argmax";
    const double score = cfg.score_mode == ovps::ScoreMode::kSoftmax
                             ? s.probs[top]
                             : ovps::similarities(f.regions.vector(prop.embedding_index), f.bank)[top];
    if (!(score > cfg.threshold)) return "score not above threshold";
  }
  // Ground-truth targets untouched, rewritten ones only where selected.
  for (const auto& t : r.roi_targets) {
    const bool picked = seen.count(t.proposal_index) > 0;
    if (t.provenance == ovps::Provenance::kPseudo) {
      if (!picked) return "roi target rewritten without selection";
      if (t.label.kind != ovps::TargetLabel::Kind::kCategory) return "roi pseudo target is not a category";
      const auto slot = f.bank.slot_of(t.label.class_id);
      if (!slot || !f.bank.is_novel(*slot)) return "roi pseudo target is not novel";
    }
  }
  for (const auto& t : r.rpn_targets) {
    if (t.provenance == ovps::Provenance::kPseudo) {
      if (!seen.count(t.proposal_index)) return "rpn target rewritten without selection";
      if (t.label.kind != ovps::TargetLabel::Kind::kForeground) return "rpn pseudo target is not foreground";
    }
  }
  const auto baseline = ovps::assign_targets(f.proposals, f.gt, cfg.pos_iou);
  for (std::size_t i = 0; i < baseline.roi.size(); ++i) {
    if (baseline.roi[i].provenance == ovps::Provenance::kGroundTruth && !(baseline.roi[i] == r.roi_targets[i])) {
      return "ground-truth roi target altered";
    }
    if (baseline.rpn[i].provenance == ovps::Provenance::kGroundTruth && !(baseline.rpn[i] == r.rpn_targets[i])) {
      return "ground-truth rpn target altered";
    }
  }
  return std::nullopt;
}

}  // namespace oracle
