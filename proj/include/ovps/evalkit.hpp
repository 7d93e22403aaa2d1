#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovps/dataset.hpp"
#include "ovps/ovpe.hpp"
#include "ovps/selftrain.hpp"

namespace ovps {

struct GroundTruthBox {
  std::uint64_t image_id = 0;
  Box box;
  std::uint64_t class_id = 0;
};

inline constexpr std::size_t kRecallPoints = 101;
inline constexpr std::size_t kMaxDetectionsPerImage = 100;

// IoU thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_iou_thresholds();

// Single-class AP at one IoU threshold with COCO matching: detections are
// visited by descending score (ties: lower image id, then lower index) and
// each takes the best-overlapping unmatched ground truth of its image with
// IoU >= iou_thr. AP is the mean interpolated precision at recall
// 0.00, 0.01, ..., 1.00. nullopt when there is no ground truth.
std::optional<double> average_precision(std::span<const Detection> detections, std::span<const GroundTruthBox> gts,
                                        double iou_thr);

struct ClassAp {
  std::uint64_t class_id = 0;
  std::string name;
  ClassSplit split = ClassSplit::kBase;
  std::size_t num_gt = 0;
  double ap50 = 0.0;
  double ap = 0.0;  // mean over 0.50:0.05:0.95
  double ar = 0.0;
};

struct EvalReport {
  double ap50_novel = 0.0;
  double ap50_base = 0.0;
  double ap_all = 0.0;
  double ar_all = 0.0;
  std::size_t novel_classes = 0;  // classes with ground truth that entered each mean
  std::size_t base_classes = 0;
  std::vector<ClassAp> per_class;

  nlohmann::json to_json() const;
  std::string per_class_csv() const;
};

// Classes without ground truth are left out of every mean. Detections are
// capped at the top 100 per image. A detection whose class is not in
// `categories` is a DataError.
EvalReport evaluate(std::span<const Detection> detections, std::span<const GroundTruthBox> gts,
                    std::span<const Category> categories);

// Ground truth of every image in `subset`, withheld annotations included.
// Detections on other images are ignored.
EvalReport evaluate(std::span<const Detection> detections, const Dataset& dataset, Subset subset);

std::vector<GroundTruthBox> ground_truth_boxes(const Dataset& dataset, Subset subset);

struct TopKAccuracy {
  std::size_t k = 1;
  double base = 0.0;
  double novel = 0.0;
  std::size_t base_objects = 0;
  std::size_t novel_objects = 0;

  nlohmann::json to_json() const;
};

// Zero-shot accuracy at ground-truth boxes: an object counts when fewer than
// k classes score strictly higher than its true class (background is not
// ranked). The region at each ground-truth box must exist in `regions`.
TopKAccuracy oracle_box_topk(const Dataset& dataset, const RegionEmbeddingFile& regions, const TextBank& bank,
                             std::size_t k, std::optional<Subset> subset = std::nullopt,
                             double temperature = kDefaultTemperature);

// COCO results format: [{image_id, category_id, bbox: [x, y, w, h], score}].
void save_detections(const std::filesystem::path& path, std::span<const Detection> detections);
std::vector<Detection> load_detections(const std::filesystem::path& path);

}  // namespace ovps
