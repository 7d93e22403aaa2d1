#include "ovps/ovpe.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ovps/error.hpp"

namespace ovps {
namespace {

constexpr std::uint8_t kMagic[4] = {0x4F, 0x56, 0x50, 0x45};
constexpr double kUnitTolerance = 1e-6;

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

 private:
  std::vector<std::uint8_t>& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t remaining() const { return in_.size() - pos_; }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw CorruptionError("OVPE: unexpected end of data");
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::size_t record_bytes(std::uint32_t dim) { return 8 + 4 * 4 + 4 + 4 * static_cast<std::size_t>(dim); }

}  // namespace

std::vector<std::uint8_t> encode_ovpe(const OvpeContainer& c) {
  if (c.data.size() != c.headers.size() * c.dim) {
    throw ShapeError("OVPE: data size does not match record count x dim");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kOvpeHeaderBytes + c.headers.size() * record_bytes(c.dim));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  ByteWriter w(out);
  w.u32(kOvpeVersion);
  w.u32(c.dim);
  w.u64(c.headers.size());
  for (std::size_t i = 0; i < c.headers.size(); ++i) {
    const auto& h = c.headers[i];
    w.u64(h.id);
    for (float v : h.box) w.f32(v);
    w.f32(h.objectness);
    for (float v : c.row(i)) w.f32(v);
  }
  return out;
}

OvpeContainer decode_ovpe(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("OVPE: bad magic");
  }
  ByteReader r(bytes.subspan(4));
  if (r.remaining() < kOvpeHeaderBytes - 4) throw CorruptionError("OVPE: truncated header");
  const std::uint32_t version = r.u32();
  if (version != kOvpeVersion) {
    throw FormatError("OVPE: unsupported version " + std::to_string(version));
  }
  OvpeContainer c;
  c.dim = r.u32();
  const std::uint64_t count = r.u64();
  const std::size_t per_record = record_bytes(c.dim);
  if (count > r.remaining() / per_record) {
    throw CorruptionError("OVPE: header declares " + std::to_string(count) +
                          " records but payload is too short");
  }
  if (r.remaining() != count * per_record) {
    throw CorruptionError("OVPE: payload size is not a whole number of dim-" +
                          std::to_string(c.dim) + " records");
  }
  c.headers.resize(count);
  c.data.resize(count * c.dim);
  for (std::size_t i = 0; i < count; ++i) {
    auto& h = c.headers[i];
    h.id = r.u64();
    for (float& v : h.box) v = r.f32();
    h.objectness = r.f32();
    for (float& v : c.row(i)) v = r.f32();
  }
  return c;
}

void write_ovpe(const std::filesystem::path& path, const OvpeContainer& c) {
  const auto bytes = encode_ovpe(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

OvpeContainer read_ovpe(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open OVPE file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ovpe(bytes);
}

void normalize_rows(OvpeContainer& c) {
  for (std::size_t i = 0; i < c.headers.size(); ++i) {
    auto row = c.row(i);
    double sq = 0.0;
    for (float v : row) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    if (norm == 0.0 || std::abs(norm - 1.0) <= kUnitTolerance) continue;
    for (float& v : row) v = static_cast<float>(v / norm);
  }
}

const char* to_string(ClassSplit s) { return s == ClassSplit::kBase ? "base" : "novel"; }

ClassSplit parse_split(const std::string& s) {
  if (s == "base") return ClassSplit::kBase;
  if (s == "novel") return ClassSplit::kNovel;
  throw ConfigError("split must be \"base\" or \"novel\", got \"" + s + "\"");
}

std::optional<std::size_t> TextBank::slot_of(std::uint64_t class_id) const {
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    if (class_ids[i] == class_id) return i;
  }
  return std::nullopt;
}

TextBank select_classes(const TextBank& bank, std::span<const std::uint64_t> class_ids) {
  TextBank out;
  out.dim = bank.dim;
  for (std::uint64_t id : class_ids) {
    const auto slot = bank.slot_of(id);
    if (!slot) throw DataError("text bank has no class " + std::to_string(id));
    out.class_ids.push_back(id);
    out.class_names.push_back(bank.class_names[*slot]);
    out.class_split.push_back(bank.class_split[*slot]);
    const auto v = bank.vector(*slot);
    out.vectors.insert(out.vectors.end(), v.begin(), v.end());
  }
  const auto bg = bank.vector(bank.background_index());
  out.vectors.insert(out.vectors.end(), bg.begin(), bg.end());
  return out;
}

OvpeContainer text_bank_to_container(const TextBank& bank) {
  if (bank.vectors.size() != bank.num_slots() * bank.dim) {
    throw ShapeError("text bank: vector storage does not match class count + background");
  }
  OvpeContainer c;
  c.dim = static_cast<std::uint32_t>(bank.dim);
  c.headers.resize(bank.num_slots());
  for (std::size_t i = 0; i < bank.num_classes(); ++i) c.headers[i].id = bank.class_ids[i];
  c.headers.back().id = kBackgroundClassId;
  c.data = bank.vectors;
  return c;
}

TextBank text_bank_from_container(OvpeContainer c) {
  if (c.headers.empty() || c.headers.back().id != kBackgroundClassId) {
    throw FormatError("text bank: last record must be the background vector");
  }
  for (std::size_t i = 0; i + 1 < c.headers.size(); ++i) {
    if (c.headers[i].id == kBackgroundClassId) {
      throw FormatError("text bank: more than one background vector");
    }
  }
  normalize_rows(c);
  TextBank bank;
  bank.dim = c.dim;
  for (std::size_t i = 0; i + 1 < c.headers.size(); ++i) {
    bank.class_ids.push_back(c.headers[i].id);
    bank.class_names.push_back("class_" + std::to_string(c.headers[i].id));
    bank.class_split.push_back(ClassSplit::kBase);
  }
  bank.vectors = std::move(c.data);
  return bank;
}

void save_text_bank(const std::filesystem::path& path, const TextBank& bank) {
  write_ovpe(path, text_bank_to_container(bank));
}

TextBank load_text_bank(const std::filesystem::path& path) {
  return text_bank_from_container(read_ovpe(path));
}

OvpeContainer regions_to_container(const RegionEmbeddingFile& regions) {
  if (regions.vectors.size() != regions.records.size() * regions.dim) {
    throw ShapeError("region file: vector storage does not match record count x dim");
  }
  OvpeContainer c;
  c.dim = static_cast<std::uint32_t>(regions.dim);
  c.headers.resize(regions.records.size());
  for (std::size_t i = 0; i < regions.records.size(); ++i) {
    const auto& r = regions.records[i];
    auto& h = c.headers[i];
    h.id = r.image_id;
    h.box[0] = static_cast<float>(r.box.x1);
    h.box[1] = static_cast<float>(r.box.y1);
    h.box[2] = static_cast<float>(r.box.x2);
    h.box[3] = static_cast<float>(r.box.y2);
    h.objectness = r.objectness;
  }
  c.data = regions.vectors;
  return c;
}

RegionEmbeddingFile regions_from_container(OvpeContainer c) {
  normalize_rows(c);
  RegionEmbeddingFile regions;
  regions.dim = c.dim;
  regions.records.reserve(c.headers.size());
  for (const auto& h : c.headers) {
    regions.records.push_back(RegionRecord{h.id, Box{h.box[0], h.box[1], h.box[2], h.box[3]}, h.objectness});
  }
  regions.vectors = std::move(c.data);
  return regions;
}

void save_regions(const std::filesystem::path& path, const RegionEmbeddingFile& regions) {
  write_ovpe(path, regions_to_container(regions));
}

RegionEmbeddingFile load_regions(const std::filesystem::path& path) {
  return regions_from_container(read_ovpe(path));
}

}  // namespace ovps
