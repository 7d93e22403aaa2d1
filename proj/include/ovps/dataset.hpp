#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ovps/geometry.hpp"
#include "ovps/ovpe.hpp"

namespace ovps {

enum class Subset { kTrain, kVal };

// Origin of a label. kNone marks background targets produced by assignment.
enum class Provenance { kNone, kGroundTruth, kPseudo };

const char* to_string(Subset s);
const char* to_string(Provenance p);

struct Image {
  std::uint64_t id = 0;
  double width = 0.0;
  double height = 0.0;
  Subset subset = Subset::kTrain;
};

struct Annotation {
  std::uint64_t id = 0;
  std::uint64_t image_id = 0;
  Box box;
  std::uint64_t category_id = 0;
  Provenance provenance = Provenance::kGroundTruth;
  // Withheld from training; kept for evaluation (novel ground truth).
  bool eval_only = false;
  double score = 1.0;
};

struct Category {
  std::uint64_t id = 0;
  std::string name;
  ClassSplit split = ClassSplit::kBase;
};

struct Dataset {
  std::vector<Image> images;
  std::vector<Annotation> annotations;
  std::vector<Category> categories;
  // Class names known to the vocabulary but never annotated.
  std::vector<Category> extra_vocabulary;

  const Image* image(std::uint64_t id) const;
  const Category* category(std::uint64_t id) const;

  std::vector<std::uint64_t> image_ids(Subset subset) const;
  // Annotations usable as training supervision: everything not eval_only.
  std::vector<const Annotation*> training_annotations(std::uint64_t image_id) const;
  // Ground truth for evaluation, including withheld annotations.
  std::vector<const Annotation*> ground_truth(std::uint64_t image_id) const;

  std::uint64_t next_annotation_id() const;
};

// Throws DataError if any annotation references a missing image or category,
// lies outside its image, or is novel ground truth usable for training.
void validate_dataset(const Dataset& ds);

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const Dataset& ds);

// category name -> split
using SplitSpec = std::map<std::string, ClassSplit>;

SplitSpec load_split_spec(const std::filesystem::path& path);

// Reads plain COCO JSON. Boxes are converted to corner form and clipped;
// novel ground truth is tagged eval_only. Every category must be named in
// the split spec and every split spec entry must name a category.
Dataset ingest_coco(const std::filesystem::path& annotations_json, const SplitSpec& split,
                    Subset subset = Subset::kTrain);

// Assigns names and splits to bank classes from the dataset category table
// and extra vocabulary. Unknown ids keep their default name and count as
// novel (they can never be base).
void bind_categories(TextBank& bank, const Dataset& ds);

}  // namespace ovps
