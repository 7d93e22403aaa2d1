#include "ovps/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "ovps/error.hpp"
#include "ovps/region_index.hpp"
#include "ovps/zeroshot.hpp"

namespace ovps {
namespace {

double round4(double v) { return std::round(v * 1e4) / 1e4; }

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Order in which detections are matched and accumulated.
std::vector<std::size_t> detection_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return dets[a].image_id < dets[b].image_id;
  });
  return order;
}

struct ClassCurve {
  std::size_t npos = 0;
  std::vector<double> precision;  // per accumulated detection
  std::vector<double> recall;
};

ClassCurve pr_curve(std::span<const Detection> dets, std::span<const GroundTruthBox> gts, double iou_thr) {
  ClassCurve curve;
  curve.npos = gts.size();
  std::map<std::uint64_t, std::vector<std::size_t>> gt_by_image;
  for (std::size_t g = 0; g < gts.size(); ++g) gt_by_image[gts[g].image_id].push_back(g);
  std::vector<bool> taken(gts.size(), false);

  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t d : detection_order(dets)) {
    std::ptrdiff_t best = -1;
    double best_iou = iou_thr;
    auto it = gt_by_image.find(dets[d].image_id);
    if (it != gt_by_image.end()) {
      for (std::size_t g : it->second) {
        if (taken[g]) continue;
        const double v = iou(dets[d].box, gts[g].box);
        if (v >= best_iou && (best < 0 || v > best_iou)) {
          best = static_cast<std::ptrdiff_t>(g);
          best_iou = v;
        }
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = true;
      ++tp;
    } else {
      ++fp;
    }
    curve.precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    curve.recall.push_back(curve.npos ? static_cast<double>(tp) / static_cast<double>(curve.npos) : 0.0);
  }
  return curve;
}

double interpolated_ap(ClassCurve curve) {
  auto& p = curve.precision;
  for (std::size_t i = p.size(); i-- > 1;) p[i - 1] = std::max(p[i - 1], p[i]);
  double total = 0.0;
  for (std::size_t j = 0; j < kRecallPoints; ++j) {
    const double r = static_cast<double>(j) / 100.0;
    const auto it = std::lower_bound(curve.recall.begin(), curve.recall.end(), r);
    if (it != curve.recall.end()) total += p[static_cast<std::size_t>(it - curve.recall.begin())];
  }
  return total / static_cast<double>(kRecallPoints);
}

std::vector<Detection> cap_per_image(std::span<const Detection> dets) {
  std::map<std::uint64_t, std::vector<std::size_t>> by_image;
  for (std::size_t i = 0; i < dets.size(); ++i) by_image[dets[i].image_id].push_back(i);
  std::vector<std::size_t> keep;
  for (auto& [id, idx] : by_image) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    if (idx.size() > kMaxDetectionsPerImage) idx.resize(kMaxDetectionsPerImage);
    keep.insert(keep.end(), idx.begin(), idx.end());
  }
  std::sort(keep.begin(), keep.end());
  std::vector<Detection> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back(dets[i]);
  return out;
}

}  // namespace

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

std::optional<double> average_precision(std::span<const Detection> detections, std::span<const GroundTruthBox> gts,
                                        double iou_thr) {
  if (gts.empty()) return std::nullopt;
  return interpolated_ap(pr_curve(detections, gts, iou_thr));
}

EvalReport evaluate(std::span<const Detection> detections, std::span<const GroundTruthBox> gts,
                    std::span<const Category> categories) {
  std::map<std::uint64_t, const Category*> known;
  for (const auto& c : categories) known[c.id] = &c;
  for (const auto& d : detections) {
    if (!known.count(d.class_id)) {
      throw DataError("detection with unknown class id " + std::to_string(d.class_id));
    }
  }
  const auto capped = cap_per_image(detections);

  std::map<std::uint64_t, std::vector<Detection>> dets_by_class;
  for (const auto& d : capped) dets_by_class[d.class_id].push_back(d);
  std::map<std::uint64_t, std::vector<GroundTruthBox>> gts_by_class;
  for (const auto& g : gts) {
    if (!known.count(g.class_id)) throw DataError("ground truth with unknown class id " + std::to_string(g.class_id));
    gts_by_class[g.class_id].push_back(g);
  }

  EvalReport report;
  std::vector<double> novel50, base50, all_ap, all_ar;
  const auto thresholds = coco_iou_thresholds();
  for (const auto& [id, cls_gts] : gts_by_class) {
    const auto& dets = dets_by_class[id];
    ClassAp row;
    row.class_id = id;
    row.name = known[id]->name;
    row.split = known[id]->split;
    row.num_gt = cls_gts.size();
    std::vector<double> aps, ars;
    for (double t : thresholds) {
      const auto curve = pr_curve(dets, cls_gts, t);
      ars.push_back(curve.recall.empty() ? 0.0 : curve.recall.back());
      aps.push_back(interpolated_ap(curve));
    }
    row.ap50 = aps.front();
    row.ap = mean(aps);
    row.ar = mean(ars);
    (row.split == ClassSplit::kNovel ? novel50 : base50).push_back(row.ap50);
    all_ap.push_back(row.ap);
    all_ar.push_back(row.ar);
    report.per_class.push_back(row);
  }
  report.ap50_novel = mean(novel50);
  report.ap50_base = mean(base50);
  report.ap_all = mean(all_ap);
  report.ar_all = mean(all_ar);
  report.novel_classes = novel50.size();
  report.base_classes = base50.size();
  return report;
}

std::vector<GroundTruthBox> ground_truth_boxes(const Dataset& dataset, Subset subset) {
  std::vector<GroundTruthBox> out;
  for (std::uint64_t id : dataset.image_ids(subset)) {
    for (const Annotation* a : dataset.ground_truth(id)) out.push_back(GroundTruthBox{id, a->box, a->category_id});
  }
  return out;
}

EvalReport evaluate(std::span<const Detection> detections, const Dataset& dataset, Subset subset) {
  const auto ids = dataset.image_ids(subset);
  const std::set<std::uint64_t> in_subset(ids.begin(), ids.end());
  std::vector<Detection> dets;
  for (const auto& d : detections) {
    if (in_subset.count(d.image_id)) dets.push_back(d);
  }
  return evaluate(dets, ground_truth_boxes(dataset, subset), dataset.categories);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : per_class) {
    rows.push_back({{"class_id", r.class_id},
                    {"name", r.name},
                    {"split", to_string(r.split)},
                    {"num_gt", r.num_gt},
                    {"ap50", round4(r.ap50)},
                    {"ap", round4(r.ap)},
                    {"ar", round4(r.ar)}});
  }
  return {{"ap50_novel", round4(ap50_novel)},
          {"ap50_base", round4(ap50_base)},
          {"ap_all", round4(ap_all)},
          {"ar_all", round4(ar_all)},
          {"novel_classes", novel_classes},
          {"base_classes", base_classes},
          {"per_class", rows}};
}

std::string EvalReport::per_class_csv() const {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  out << "class_id,name,split,num_gt,ap50,ap,ar\n";
  for (const auto& r : per_class) {
    out << r.class_id << ',' << r.name << ',' << to_string(r.split) << ',' << r.num_gt << ',' << r.ap50 << ','
        << r.ap << ',' << r.ar << '\n';
  }
  return out.str();
}

nlohmann::json TopKAccuracy::to_json() const {
  return {{"k", k},
          {"base", round4(base)},
          {"novel", round4(novel)},
          {"base_objects", base_objects},
          {"novel_objects", novel_objects}};
}

TopKAccuracy oracle_box_topk(const Dataset& dataset, const RegionEmbeddingFile& regions, const TextBank& bank,
                             std::size_t k, std::optional<Subset> subset, double temperature) {
  if (k < 1) throw ConfigError("oracle k must be >= 1");
  const RegionIndex index(regions);
  TopKAccuracy acc;
  acc.k = k;
  std::size_t base_hit = 0;
  std::size_t novel_hit = 0;
  for (const auto& img : dataset.images) {
    if (subset && img.subset != *subset) continue;
    for (const Annotation* a : dataset.ground_truth(img.id)) {
      const auto rec = index.find(img.id, a->box);
      if (!rec) {
        throw DataError("no region embedding at ground-truth box of annotation " + std::to_string(a->id));
      }
      const auto slot = bank.slot_of(a->category_id);
      if (!slot) throw DataError("category " + std::to_string(a->category_id) + " is missing from the text bank");
      const auto scores = classify(regions.vector(*rec), bank, temperature);
      std::size_t higher = 0;
      for (std::size_t c = 0; c < bank.num_classes(); ++c) {
        if (scores.probs[c] > scores.probs[*slot]) ++higher;
      }
      const bool hit = higher < k;
      const Category* cat = dataset.category(a->category_id);
      if (cat->split == ClassSplit::kNovel) {
        ++acc.novel_objects;
        novel_hit += hit;
      } else {
        ++acc.base_objects;
        base_hit += hit;
      }
    }
  }
  if (acc.base_objects) acc.base = static_cast<double>(base_hit) / static_cast<double>(acc.base_objects);
  if (acc.novel_objects) acc.novel = static_cast<double>(novel_hit) / static_cast<double>(acc.novel_objects);
  return acc;
}

void save_detections(const std::filesystem::path& path, std::span<const Detection> detections) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& d : detections) {
    j.push_back({{"image_id", d.image_id},
                 {"category_id", d.class_id},
                 {"bbox", {d.box.x1, d.box.y1, d.box.x2 - d.box.x1, d.box.y2 - d.box.y1}},
                 {"score", d.score}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << j.dump(1) << '\n';
}

std::vector<Detection> load_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open detections file: " + path.string());
  std::vector<Detection> out;
  try {
    const auto j = nlohmann::json::parse(in);
    if (!j.is_array()) throw DataError(path.string() + ": detections must be a JSON array");
    for (const auto& jd : j) {
      const auto& bb = jd.at("bbox");
      out.push_back(Detection{jd.at("image_id").get<std::uint64_t>(),
                              box_from_xywh(bb.at(0).get<double>(), bb.at(1).get<double>(), bb.at(2).get<double>(),
                                            bb.at(3).get<double>()),
                              jd.at("category_id").get<std::uint64_t>(), jd.at("score").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace ovps
