#pragma once

#include <cstddef>
#include <cstdint>

#include "ovps/dataset.hpp"
#include "ovps/ovpe.hpp"

namespace ovps {

struct SyntheticConfig {
  std::size_t n_base = 10;
  std::size_t n_novel = 5;
  std::size_t dim = 64;
  std::size_t n_images = 500;
  double noise_sigma = 0.15;
  std::uint64_t seed = 0;

  double val_fraction = 0.2;
  double image_width = 640.0;
  double image_height = 480.0;
  std::size_t min_objects = 1;
  std::size_t max_objects = 4;
  // Proposals generated per object, in addition to the exact ground-truth box.
  std::size_t jitter_per_object = 10;
  std::size_t partial_per_object = 4;
  // Class-direction weight of a partial crop's embedding; the rest is background.
  double partial_mix_min = 0.4;
  double partial_mix_max = 0.75;
  std::size_t background_proposals = 10;
  // Unannotated look-alike things per image: clusters of proposals whose
  // embedding mixes a random class with background (ambiguous to the scorer).
  std::size_t lookalikes_per_image = 3;
  double lookalike_mix_min = 0.5;
  double lookalike_mix_max = 0.7;
  // Unannotated vocabulary entries (random directions) for vocabulary ablations.
  std::size_t n_distractors = 0;
};

struct SyntheticWorld {
  TextBank bank;
  RegionEmbeddingFile regions;
  Dataset dataset;
};

// Class text vectors (background included) are an orthonormal set drawn by
// Gram-Schmidt from Gaussian vectors. Every object contributes a record at its
// exact ground-truth box, jittered boxes with IoU >= 0.76 to it, and partial
// crops with IoU in [0.1, 0.45] whose embedding mixes the class and
// background directions. Background boxes stay below IoU 0.3 with every
// object. Region embeddings are direction + N(0, sigma^2 I), renormalized.
// Images in the trailing val_fraction are the evaluation subset. Novel
// ground truth is kept everywhere but tagged eval_only.
SyntheticWorld generate_synthetic_world(const SyntheticConfig& cfg);

}  // namespace ovps
