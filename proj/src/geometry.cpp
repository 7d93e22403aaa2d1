#include "ovps/geometry.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace ovps {

Box box_from_xywh(double x, double y, double w, double h) { return Box{x, y, x + w, y + h}; }

Box clip_box(const Box& b, double width, double height) {
  auto clamp = [](double v, double hi) { return std::clamp(v, 0.0, hi); };
  Box out{clamp(b.x1, width), clamp(b.y1, height), clamp(b.x2, width), clamp(b.y2, height)};
  out.x2 = std::max(out.x2, out.x1);
  out.y2 = std::max(out.y2, out.y1);
  return out;
}

double iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double iou_threshold, std::size_t max_keep) {
  if (boxes.size() != scores.size()) throw std::invalid_argument("nms: boxes/scores size mismatch");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<std::size_t> keep;
  std::vector<bool> suppressed(boxes.size(), false);
  for (std::size_t i = 0; i < order.size() && keep.size() < max_keep; ++i) {
    const std::size_t cur = order[i];
    if (suppressed[cur]) continue;
    keep.push_back(cur);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t other = order[j];
      if (!suppressed[other] && iou(boxes[cur], boxes[other]) >= iou_threshold) {
        suppressed[other] = true;
      }
    }
  }
  return keep;
}

std::vector<std::size_t> nms(std::span<const Proposal> proposals, double iou_threshold,
                             std::size_t max_keep) {
  std::vector<Box> boxes;
  std::vector<double> scores;
  boxes.reserve(proposals.size());
  scores.reserve(proposals.size());
  for (const auto& p : proposals) {
    boxes.push_back(p.box);
    scores.push_back(p.objectness);
  }
  return nms(boxes, scores, iou_threshold, max_keep);
}

std::vector<Match> best_matches(std::span<const Proposal> proposals,
                                std::span<const Box> gt_boxes) {
  std::vector<Match> out(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double v = iou(proposals[i].box, gt_boxes[g]);
      if (out[i].gt_index < 0 || v > out[i].iou) {
        out[i].gt_index = static_cast<std::ptrdiff_t>(g);
        out[i].iou = v;
      }
    }
  }
  return out;
}

std::vector<std::size_t> match_negatives(std::span<const Proposal> proposals,
                                         std::span<const Box> gt_boxes, double neg_iou_max) {
  std::vector<std::size_t> out;
  const auto matches = best_matches(proposals, gt_boxes);
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (matches[i].iou < neg_iou_max) out.push_back(i);
  }
  return out;
}

}  // namespace ovps
