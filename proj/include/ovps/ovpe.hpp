#pragma once

// OVPE: little-endian binary container for embedding records.
//
//   offset 0   4 bytes   magic "OVPE" (0x4F 0x56 0x50 0x45)
//   offset 4   u32       version (1)
//   offset 8   u32       dim
//   offset 12  u64       record count
//   then per record:
//              u64       image id (class id for text banks)
//              4 x f32   corner box x1 y1 x2 y2
//              f32       objectness
//              dim x f32 vector
//
// Vectors are written as given and L2-normalized when loaded.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ovps/geometry.hpp"

namespace ovps {

inline constexpr std::uint32_t kOvpeVersion = 1;
inline constexpr std::size_t kOvpeHeaderBytes = 20;

// Class id carried by the background record of a text bank.
inline constexpr std::uint64_t kBackgroundClassId = std::numeric_limits<std::uint64_t>::max();

struct OvpeRecordHeader {
  std::uint64_t id = 0;
  float box[4] = {0.f, 0.f, 0.f, 0.f};
  float objectness = 0.f;
};

struct OvpeContainer {
  std::uint32_t dim = 0;
  std::vector<OvpeRecordHeader> headers;
  std::vector<float> data;  // headers.size() * dim, row-major

  std::span<const float> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  std::span<float> row(std::size_t i) { return {data.data() + i * dim, dim}; }
};

std::vector<std::uint8_t> encode_ovpe(const OvpeContainer& c);
OvpeContainer decode_ovpe(std::span<const std::uint8_t> bytes);

void write_ovpe(const std::filesystem::path& path, const OvpeContainer& c);
OvpeContainer read_ovpe(const std::filesystem::path& path);

// L2-normalizes each row in place. Rows already unit length to float
// precision are left bit-for-bit untouched so that load/save round-trips.
// Zero rows stay zero.
void normalize_rows(OvpeContainer& c);

enum class ClassSplit { kBase, kNovel };

const char* to_string(ClassSplit s);
ClassSplit parse_split(const std::string& s);

// Class-name embeddings plus one background vector, stored last.
struct TextBank {
  std::size_t dim = 0;
  std::vector<std::uint64_t> class_ids;
  std::vector<std::string> class_names;
  std::vector<ClassSplit> class_split;
  std::vector<float> vectors;  // (num_classes() + 1) * dim

  std::size_t num_classes() const { return class_ids.size(); }
  std::size_t num_slots() const { return class_ids.size() + 1; }
  std::size_t background_index() const { return class_ids.size(); }
  std::span<const float> vector(std::size_t slot) const { return {vectors.data() + slot * dim, dim}; }
  bool is_novel(std::size_t slot) const {
    return slot < class_split.size() && class_split[slot] == ClassSplit::kNovel;
  }
  bool is_base(std::size_t slot) const {
    return slot < class_split.size() && class_split[slot] == ClassSplit::kBase;
  }
  std::optional<std::size_t> slot_of(std::uint64_t class_id) const;
};

// Sub-bank with the given classes in the given order, background kept last.
// Throws DataError for an id the bank does not have.
TextBank select_classes(const TextBank& bank, std::span<const std::uint64_t> class_ids);

OvpeContainer text_bank_to_container(const TextBank& bank);
TextBank text_bank_from_container(OvpeContainer c);

void save_text_bank(const std::filesystem::path& path, const TextBank& bank);
// Names default to "class_<id>" and splits to base until bound to a
// category table (see bind_categories in dataset.hpp).
TextBank load_text_bank(const std::filesystem::path& path);

struct RegionRecord {
  std::uint64_t image_id = 0;
  Box box;
  float objectness = 0.f;
};

struct RegionEmbeddingFile {
  std::size_t dim = 0;
  std::vector<RegionRecord> records;
  std::vector<float> vectors;  // records.size() * dim

  std::size_t size() const { return records.size(); }
  std::span<const float> vector(std::size_t i) const { return {vectors.data() + i * dim, dim}; }
};

OvpeContainer regions_to_container(const RegionEmbeddingFile& regions);
RegionEmbeddingFile regions_from_container(OvpeContainer c);

void save_regions(const std::filesystem::path& path, const RegionEmbeddingFile& regions);
RegionEmbeddingFile load_regions(const std::filesystem::path& path);

}  // namespace ovps
