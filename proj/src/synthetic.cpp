#include "ovps/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ovps/error.hpp"
#include "ovps/random.hpp"

namespace ovps {
namespace {

constexpr double kJitterMinIou = 0.76;
constexpr double kBackgroundMaxIou = 0.3;
constexpr int kMaxAttempts = 64;

std::vector<double> gaussian(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (double& x : v) x = rng.normal();
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  if (n > 0.0) {
    for (double& x : v) x /= n;
  }
}

std::vector<std::vector<double>> orthonormal_set(Rng& rng, std::size_t count, std::size_t dim) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    auto v = gaussian(rng, dim);
    for (const auto& b : basis) {
      const double p = dot(v, b);
      for (std::size_t i = 0; i < dim; ++i) v[i] -= p * b[i];
    }
    if (std::sqrt(dot(v, v)) < 1e-6) continue;
    normalize(v);
    basis.push_back(std::move(v));
  }
  return basis;
}

// Integer-pixel box of the given size placed uniformly inside the image.
Box random_box(Rng& rng, double img_w, double img_h, double min_side, double max_side) {
  const double w = std::floor(rng.uniform(min_side, std::min(max_side, img_w)));
  const double h = std::floor(rng.uniform(min_side, std::min(max_side, img_h)));
  const double x = std::floor(rng.uniform(0.0, img_w - w));
  const double y = std::floor(rng.uniform(0.0, img_h - h));
  return Box{x, y, x + w, y + h};
}

class WorldBuilder {
 public:
  WorldBuilder(const SyntheticConfig& cfg, Rng& rng, std::vector<std::vector<double>> directions)
      : cfg_(cfg), rng_(rng), dirs_(std::move(directions)) {}

  // direction mix: weight on class direction, remainder on background.
  void add_region(std::uint64_t image_id, const Box& box, double objectness, std::size_t cls,
                  double class_weight, RegionEmbeddingFile& out) {
    const auto& bg = dirs_.back();
    const auto& c = dirs_[cls];
    std::vector<double> v(cfg_.dim);
    for (std::size_t i = 0; i < cfg_.dim; ++i) {
      v[i] = class_weight * c[i] + (1.0 - class_weight) * bg[i] + cfg_.noise_sigma * rng_.normal();
    }
    normalize(v);
    out.records.push_back(RegionRecord{image_id, box, static_cast<float>(objectness)});
    for (double x : v) out.vectors.push_back(static_cast<float>(x));
  }

  std::optional<Box> jitter(const Box& gt, const Image& img) {
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      const double w = gt.width();
      const double h = gt.height();
      Box b{std::round(gt.x1 + rng_.uniform(-0.08, 0.08) * w), std::round(gt.y1 + rng_.uniform(-0.08, 0.08) * h),
            std::round(gt.x2 + rng_.uniform(-0.08, 0.08) * w), std::round(gt.y2 + rng_.uniform(-0.08, 0.08) * h)};
      b = clip_box(b, img.width, img.height);
      if (iou(b, gt) >= kJitterMinIou) return b;
    }
    return std::nullopt;
  }

  std::optional<Box> partial(const Box& gt, const Image& img, std::span<const Box> objects) {
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      const double w = gt.width();
      const double h = gt.height();
      const double sx = rng_.uniform() < 0.5 ? -1.0 : 1.0;
      const double sy = rng_.uniform() < 0.5 ? -1.0 : 1.0;
      const double dx = sx * rng_.uniform(0.3, 0.8) * w;
      const double dy = sy * rng_.uniform(0.0, 0.5) * h;
      const double scale = rng_.uniform(0.7, 1.3);
      Box b{std::round(gt.x1 + dx), std::round(gt.y1 + dy), std::round(gt.x1 + dx + scale * w),
            std::round(gt.y1 + dy + scale * h)};
      b = clip_box(b, img.width, img.height);
      const double v = iou(b, gt);
      if (v < 0.1 || v > 0.45) continue;
      bool clean = true;
      for (const auto& o : objects) {
        if (&o != &gt && iou(b, o) >= kBackgroundMaxIou) clean = false;
      }
      if (clean) return b;
    }
    return std::nullopt;
  }

 private:
  const SyntheticConfig& cfg_;
  Rng& rng_;
  std::vector<std::vector<double>> dirs_;
};

}  // namespace

SyntheticWorld generate_synthetic_world(const SyntheticConfig& cfg) {
  const std::size_t n_classes = cfg.n_base + cfg.n_novel;
  if (n_classes == 0) throw ConfigError("synthetic world needs at least one class");
  if (cfg.dim < n_classes + 1) {
    throw ConfigError("synthetic world: dim " + std::to_string(cfg.dim) + " < classes + background (" +
                      std::to_string(n_classes + 1) + ")");
  }
  if (!(cfg.noise_sigma >= 0.0)) throw ConfigError("synthetic world: noise_sigma must be >= 0");
  if (cfg.n_images == 0) throw ConfigError("synthetic world: n_images must be positive");
  if (cfg.min_objects > cfg.max_objects) throw ConfigError("synthetic world: min_objects > max_objects");
  if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0)) {
    throw ConfigError("synthetic world: val_fraction must be in [0, 1)");
  }

  Rng rng(cfg.seed);
  SyntheticWorld world;

  // Slots 0..n_classes-1 are categories, the last is background.
  auto directions = orthonormal_set(rng, n_classes + 1, cfg.dim);

  auto& bank = world.bank;
  bank.dim = cfg.dim;
  auto& ds = world.dataset;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const bool novel = c >= cfg.n_base;
    const std::uint64_t id = c + 1;
    const std::string name = novel ? "novel_" + std::to_string(c - cfg.n_base) : "base_" + std::to_string(c);
    ds.categories.push_back(Category{id, name, novel ? ClassSplit::kNovel : ClassSplit::kBase});
    bank.class_ids.push_back(id);
    bank.class_names.push_back(name);
    bank.class_split.push_back(novel ? ClassSplit::kNovel : ClassSplit::kBase);
  }
  for (std::size_t d = 0; d < cfg.n_distractors; ++d) {
    const std::uint64_t id = n_classes + 1 + d;
    const std::string name = "extra_" + std::to_string(d);
    ds.extra_vocabulary.push_back(Category{id, name, ClassSplit::kNovel});
    bank.class_ids.push_back(id);
    bank.class_names.push_back(name);
    bank.class_split.push_back(ClassSplit::kNovel);
  }
  auto push_vector = [&](const std::vector<double>& v) {
    for (double x : v) bank.vectors.push_back(static_cast<float>(x));
  };
  for (std::size_t c = 0; c < n_classes; ++c) push_vector(directions[c]);
  for (std::size_t d = 0; d < cfg.n_distractors; ++d) {
    auto v = gaussian(rng, cfg.dim);
    normalize(v);
    push_vector(v);
  }
  push_vector(directions.back());

  const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(cfg.n_images)));
  const std::size_t n_train = std::max<std::size_t>(1, cfg.n_images - n_val);

  WorldBuilder builder(cfg, rng, directions);
  auto& regions = world.regions;
  regions.dim = cfg.dim;
  std::uint64_t next_ann = 1;

  for (std::size_t i = 0; i < cfg.n_images; ++i) {
    Image img{i + 1, cfg.image_width, cfg.image_height, i < n_train ? Subset::kTrain : Subset::kVal};
    ds.images.push_back(img);

    const std::size_t n_objects = cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);
    std::vector<Box> objects;
    std::vector<std::size_t> classes;
    for (std::size_t o = 0; o < n_objects; ++o) {
      for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        const Box b = random_box(rng, img.width, img.height, 40.0, 160.0);
        const bool free = std::none_of(objects.begin(), objects.end(),
                                       [&](const Box& other) { return iou(b, other) > 0.0; });
        if (free) {
          objects.push_back(b);
          classes.push_back(rng.below(n_classes));
          break;
        }
      }
    }

    for (std::size_t o = 0; o < objects.size(); ++o) {
      const std::size_t cls = classes[o];
      const bool novel = cls >= cfg.n_base;
      ds.annotations.push_back(Annotation{next_ann++, img.id, objects[o], cls + 1, Provenance::kGroundTruth,
                                          novel, 1.0});
      builder.add_region(img.id, objects[o], 1.0, cls, 1.0, regions);
      for (std::size_t j = 0; j < cfg.jitter_per_object; ++j) {
        if (auto b = builder.jitter(objects[o], img)) {
          builder.add_region(img.id, *b, rng.uniform(0.5, 1.0), cls, 1.0, regions);
        }
      }
      for (std::size_t j = 0; j < cfg.partial_per_object; ++j) {
        if (auto b = builder.partial(objects[o], img, objects)) {
          builder.add_region(img.id, *b, rng.uniform(0.2, 0.8), cls, rng.uniform(cfg.partial_mix_min, cfg.partial_mix_max), regions);
        }
      }
    }
    std::vector<Box> occupied = objects;
    for (std::size_t l = 0; l < cfg.lookalikes_per_image; ++l) {
      for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        const Box b = random_box(rng, img.width, img.height, 40.0, 160.0);
        const bool free = std::none_of(occupied.begin(), occupied.end(),
                                       [&](const Box& other) { return iou(b, other) > 0.0; });
        if (!free) continue;
        occupied.push_back(b);
        const std::size_t cls = rng.below(n_classes);
        const double mix = rng.uniform(cfg.lookalike_mix_min, cfg.lookalike_mix_max);
        builder.add_region(img.id, b, rng.uniform(0.5, 1.0), cls, mix, regions);
        for (std::size_t j = 0; j < cfg.jitter_per_object; ++j) {
          if (auto jb = builder.jitter(b, img)) builder.add_region(img.id, *jb, rng.uniform(0.3, 0.9), cls, mix, regions);
        }
        break;
      }
    }
    for (std::size_t j = 0; j < cfg.background_proposals; ++j) {
      for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        const Box b = random_box(rng, img.width, img.height, 24.0, 200.0);
        const bool clear = std::all_of(occupied.begin(), occupied.end(),
                                       [&](const Box& o) { return iou(b, o) < kBackgroundMaxIou; });
        if (!clear) continue;
        const double objectness = rng.uniform() < 0.1 ? 0.0 : rng.uniform(0.0, 0.6);
        builder.add_region(img.id, b, objectness, 0, 0.0, regions);
        break;
      }
    }
  }
  return world;
}

}  // namespace ovps
