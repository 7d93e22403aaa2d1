#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "ovps/geometry.hpp"
#include "ovps/ovpe.hpp"

namespace ovps {

// Groups the records of a region file by image.
class RegionIndex {
 public:
  explicit RegionIndex(const RegionEmbeddingFile& regions);

  std::span<const std::size_t> records(std::uint64_t image_id) const;

  // Proposals for one image; embedding_index points into the region file.
  std::vector<Proposal> proposals(std::uint64_t image_id) const;

  // Record whose box equals `box` within `tolerance` per coordinate.
  std::optional<std::size_t> find(std::uint64_t image_id, const Box& box, double tolerance = 1e-3) const;

 private:
  const RegionEmbeddingFile* regions_;
  std::map<std::uint64_t, std::vector<std::size_t>> by_image_;
};

}  // namespace ovps
