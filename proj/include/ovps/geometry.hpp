#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ovps {

// Axis-aligned box in corner form, pixel coordinates.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 > x1 ? x2 - x1 : 0.0; }
  double height() const { return y2 > y1 ? y2 - y1 : 0.0; }
  double area() const { return width() * height(); }
  bool degenerate() const { return !(x2 > x1) || !(y2 > y1); }

  bool operator==(const Box&) const = default;
};

// COCO [x, y, w, h] to corner form.
Box box_from_xywh(double x, double y, double w, double h);

Box clip_box(const Box& b, double width, double height);

struct Proposal {
  Box box;
  double objectness = 0.0;
  std::size_t embedding_index = 0;
};

// Intersection over union. Zero when the union is empty, so degenerate boxes
// never overlap anything.
double iou(const Box& a, const Box& b);

// Greedy score-ordered suppression. Returns kept indices ordered by
// descending score; equal scores keep the lower index first. A candidate is
// suppressed when its IoU with an already kept box is >= iou_threshold.
std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double iou_threshold, std::size_t max_keep);

// Same, ordering by proposal objectness.
std::vector<std::size_t> nms(std::span<const Proposal> proposals, double iou_threshold,
                             std::size_t max_keep);

// Indices of proposals whose best IoU against every ground-truth box is
// strictly below neg_iou_max. All proposals qualify when gt_boxes is empty.
std::vector<std::size_t> match_negatives(std::span<const Proposal> proposals,
                                         std::span<const Box> gt_boxes, double neg_iou_max);

struct Match {
  std::ptrdiff_t gt_index = -1;  // -1 when there is no ground truth
  double iou = 0.0;
};

// Best-overlap ground truth per proposal; ties go to the lower gt index.
std::vector<Match> best_matches(std::span<const Proposal> proposals, std::span<const Box> gt_boxes);

}  // namespace ovps
