#include "ovps/region_index.hpp"

#include <cmath>

namespace ovps {

RegionIndex::RegionIndex(const RegionEmbeddingFile& regions) : regions_(&regions) {
  for (std::size_t i = 0; i < regions.records.size(); ++i) by_image_[regions.records[i].image_id].push_back(i);
}

std::span<const std::size_t> RegionIndex::records(std::uint64_t image_id) const {
  auto it = by_image_.find(image_id);
  if (it == by_image_.end()) return {};
  return it->second;
}

std::vector<Proposal> RegionIndex::proposals(std::uint64_t image_id) const {
  std::vector<Proposal> out;
  for (std::size_t i : records(image_id)) {
    const auto& r = regions_->records[i];
    out.push_back(Proposal{r.box, r.objectness, i});
  }
  return out;
}

std::optional<std::size_t> RegionIndex::find(std::uint64_t image_id, const Box& box, double tolerance) const {
  for (std::size_t i : records(image_id)) {
    const Box& b = regions_->records[i].box;
    if (std::abs(b.x1 - box.x1) <= tolerance && std::abs(b.y1 - box.y1) <= tolerance &&
        std::abs(b.x2 - box.x2) <= tolerance && std::abs(b.y2 - box.y2) <= tolerance) {
      return i;
    }
  }
  return std::nullopt;
}

}  // namespace ovps
