#include "ovps/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "ovps/error.hpp"

namespace ovps {

using nlohmann::json;

namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open JSON file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

const json& require_array(const json& j, const char* key, const std::filesystem::path& path) {
  if (!j.contains(key) || !j.at(key).is_array()) {
    throw DataError(path.string() + ": missing \"" + key + "\" array");
  }
  return j.at(key);
}

Subset parse_subset(const std::string& s) {
  if (s == "train") return Subset::kTrain;
  if (s == "val") return Subset::kVal;
  throw DataError("unknown image subset \"" + s + "\"");
}

Provenance parse_provenance(const std::string& s) {
  if (s == "ground_truth") return Provenance::kGroundTruth;
  if (s == "pseudo") return Provenance::kPseudo;
  throw DataError("unknown annotation provenance \"" + s + "\"");
}

Annotation parse_annotation(const json& a) {
  Annotation ann;
  ann.id = a.at("id").get<std::uint64_t>();
  ann.image_id = a.at("image_id").get<std::uint64_t>();
  ann.category_id = a.at("category_id").get<std::uint64_t>();
  const auto& bb = a.at("bbox");
  if (!bb.is_array() || bb.size() != 4) throw DataError("annotation bbox must have 4 numbers");
  ann.box = box_from_xywh(bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
                          bb[3].get<double>());
  return ann;
}

Image parse_image(const json& j) {
  Image img;
  img.id = j.at("id").get<std::uint64_t>();
  img.width = j.at("width").get<double>();
  img.height = j.at("height").get<double>();
  return img;
}

}  // namespace

const char* to_string(Subset s) { return s == Subset::kTrain ? "train" : "val"; }

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::kNone: return "none";
    case Provenance::kGroundTruth: return "ground_truth";
    case Provenance::kPseudo: return "pseudo";
  }
  return "none";
}

const Image* Dataset::image(std::uint64_t id) const {
  for (const auto& img : images) {
    if (img.id == id) return &img;
  }
  return nullptr;
}

const Category* Dataset::category(std::uint64_t id) const {
  for (const auto& c : categories) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

std::vector<std::uint64_t> Dataset::image_ids(Subset subset) const {
  std::vector<std::uint64_t> ids;
  for (const auto& img : images) {
    if (img.subset == subset) ids.push_back(img.id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<const Annotation*> Dataset::training_annotations(std::uint64_t image_id) const {
  std::vector<const Annotation*> out;
  for (const auto& a : annotations) {
    if (a.image_id == image_id && !a.eval_only) out.push_back(&a);
  }
  return out;
}

std::vector<const Annotation*> Dataset::ground_truth(std::uint64_t image_id) const {
  std::vector<const Annotation*> out;
  for (const auto& a : annotations) {
    if (a.image_id == image_id && a.provenance == Provenance::kGroundTruth) out.push_back(&a);
  }
  return out;
}

std::uint64_t Dataset::next_annotation_id() const {
  std::uint64_t next = 1;
  for (const auto& a : annotations) next = std::max(next, a.id + 1);
  return next;
}

void validate_dataset(const Dataset& ds) {
  std::set<std::uint64_t> image_ids;
  for (const auto& img : ds.images) {
    if (!image_ids.insert(img.id).second) {
      throw DataError("duplicate image id " + std::to_string(img.id));
    }
  }
  std::set<std::uint64_t> cat_ids;
  for (const auto& c : ds.categories) {
    if (!cat_ids.insert(c.id).second) throw DataError("duplicate category id " + std::to_string(c.id));
  }
  constexpr double kSlack = 1e-6;
  for (const auto& a : ds.annotations) {
    const Image* img = ds.image(a.image_id);
    if (img == nullptr) {
      throw DataError("annotation " + std::to_string(a.id) + " references unknown image " +
                      std::to_string(a.image_id));
    }
    const Category* cat = ds.category(a.category_id);
    if (cat == nullptr) {
      throw DataError("annotation " + std::to_string(a.id) + " references unknown category " +
                      std::to_string(a.category_id));
    }
    if (a.box.x1 < -kSlack || a.box.y1 < -kSlack || a.box.x2 > img->width + kSlack ||
        a.box.y2 > img->height + kSlack || a.box.x2 < a.box.x1 || a.box.y2 < a.box.y1) {
      throw DataError("annotation " + std::to_string(a.id) + " lies outside its image");
    }
    if (a.provenance == Provenance::kGroundTruth && cat->split == ClassSplit::kNovel &&
        !a.eval_only && img->subset == Subset::kTrain) {
      throw DataError("annotation " + std::to_string(a.id) +
                      " is novel ground truth but not withheld from training");
    }
  }
}

Dataset load_dataset(const std::filesystem::path& path) {
  const json j = read_json(path);
  Dataset ds;
  try {
    for (const auto& ji : require_array(j, "images", path)) {
      Image img = parse_image(ji);
      img.subset = parse_subset(ji.value("subset", std::string("train")));
      ds.images.push_back(img);
    }
    for (const auto& jc : require_array(j, "categories", path)) {
      ds.categories.push_back(Category{jc.at("id").get<std::uint64_t>(), jc.at("name").get<std::string>(),
                                       parse_split(jc.value("split", std::string("base")))});
    }
    if (j.contains("extra_vocabulary")) {
      for (const auto& jc : j.at("extra_vocabulary")) {
        ds.extra_vocabulary.push_back(
            Category{jc.at("id").get<std::uint64_t>(), jc.at("name").get<std::string>(), ClassSplit::kNovel});
      }
    }
    for (const auto& ja : require_array(j, "annotations", path)) {
      Annotation ann = parse_annotation(ja);
      ann.provenance = parse_provenance(ja.value("provenance", std::string("ground_truth")));
      ann.eval_only = ja.value("eval_only", false);
      ann.score = ja.value("score", 1.0);
      ds.annotations.push_back(ann);
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  validate_dataset(ds);
  return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  json j;
  j["images"] = json::array();
  for (const auto& img : ds.images) {
    j["images"].push_back({{"id", img.id}, {"width", img.width}, {"height", img.height},
                           {"subset", to_string(img.subset)}});
  }
  j["categories"] = json::array();
  for (const auto& c : ds.categories) {
    j["categories"].push_back({{"id", c.id}, {"name", c.name}, {"split", to_string(c.split)}});
  }
  if (!ds.extra_vocabulary.empty()) {
    j["extra_vocabulary"] = json::array();
    for (const auto& c : ds.extra_vocabulary) {
      j["extra_vocabulary"].push_back({{"id", c.id}, {"name", c.name}});
    }
  }
  j["annotations"] = json::array();
  for (const auto& a : ds.annotations) {
    json ja = {{"id", a.id},
               {"image_id", a.image_id},
               {"category_id", a.category_id},
               {"bbox", {a.box.x1, a.box.y1, a.box.x2 - a.box.x1, a.box.y2 - a.box.y1}},
               {"area", a.box.area()},
               {"iscrowd", 0},
               {"provenance", to_string(a.provenance)}};
    if (a.eval_only) ja["eval_only"] = true;
    if (a.provenance == Provenance::kPseudo) ja["score"] = a.score;
    j["annotations"].push_back(std::move(ja));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << j.dump(1) << '\n';
}

SplitSpec load_split_spec(const std::filesystem::path& path) {
  const json j = read_json(path);
  if (!j.is_object()) throw ConfigError(path.string() + ": split spec must be a JSON object");
  SplitSpec spec;
  for (const auto& [name, value] : j.items()) {
    if (!value.is_string()) throw ConfigError("split spec entry \"" + name + "\" must be a string");
    spec[name] = parse_split(value.get<std::string>());
  }
  return spec;
}

Dataset ingest_coco(const std::filesystem::path& annotations_json, const SplitSpec& split,
                    Subset subset) {
  const json j = read_json(annotations_json);
  Dataset ds;
  try {
    for (const auto& ji : require_array(j, "images", annotations_json)) {
      Image img = parse_image(ji);
      img.subset = subset;
      ds.images.push_back(img);
    }
    std::set<std::string> seen;
    for (const auto& jc : require_array(j, "categories", annotations_json)) {
      Category c{jc.at("id").get<std::uint64_t>(), jc.at("name").get<std::string>(), ClassSplit::kBase};
      auto it = split.find(c.name);
      if (it == split.end()) throw ConfigError("category \"" + c.name + "\" has no entry in the split spec");
      c.split = it->second;
      seen.insert(c.name);
      ds.categories.push_back(c);
    }
    for (const auto& [name, s] : split) {
      if (!seen.count(name)) throw ConfigError("split spec names unknown category \"" + name + "\"");
    }
    for (const auto& ja : require_array(j, "annotations", annotations_json)) {
      Annotation ann = parse_annotation(ja);
      const Image* img = ds.image(ann.image_id);
      if (img == nullptr) {
        throw DataError("annotation " + std::to_string(ann.id) + " references unknown image");
      }
      const Category* cat = ds.category(ann.category_id);
      if (cat == nullptr) {
        throw ConfigError("annotation " + std::to_string(ann.id) + " uses category id " +
                          std::to_string(ann.category_id) + " absent from the split table");
      }
      ann.box = clip_box(ann.box, img->width, img->height);
      ann.eval_only = cat->split == ClassSplit::kNovel;
      ds.annotations.push_back(ann);
    }
  } catch (const json::exception& e) {
    throw DataError(annotations_json.string() + ": " + e.what());
  }
  validate_dataset(ds);
  return ds;
}

void bind_categories(TextBank& bank, const Dataset& ds) {
  for (std::size_t i = 0; i < bank.num_classes(); ++i) {
    const std::uint64_t id = bank.class_ids[i];
    if (const Category* c = ds.category(id)) {
      bank.class_names[i] = c->name;
      bank.class_split[i] = c->split;
      continue;
    }
    bank.class_split[i] = ClassSplit::kNovel;
    for (const auto& v : ds.extra_vocabulary) {
      if (v.id == id) bank.class_names[i] = v.name;
    }
  }
}

}  // namespace ovps
