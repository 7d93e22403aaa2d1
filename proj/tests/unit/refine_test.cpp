#include <doctest.h>

#include <algorithm>
#include <map>

#include "ovps/error.hpp"
#include "ovps/geometry.hpp"
#include "ovps/refine.hpp"
#include "ovps/synthetic.hpp"
#include "support.hpp"

using namespace ovps;

namespace {

struct Trained {
  SyntheticWorld world;
  LinearHead head;
};

// PLM-trained teacher on a small world.
Trained make_teacher(const SyntheticConfig& wc) {
  Trained out{generate_synthetic_world(wc), {}};
  TrainConfig cfg;
  cfg.iterations = 1000;
  cfg.snapshot_every = 0;
  out.head =
      train(init_head_from_bank(out.world.bank), out.world.dataset, out.world.regions, out.world.bank, cfg).head;
  return out;
}

const Trained& teacher() {
  static const Trained t = make_teacher(testing::small_world(7, 120));
  return t;
}

std::vector<Annotation> appended(const Dataset& before, const Dataset& after) {
  return {after.annotations.begin() + static_cast<std::ptrdiff_t>(before.annotations.size()), after.annotations.end()};
}

// Fraction of appended boxes with IoU >= 0.5 to a withheld object of the same class.
double pseudo_precision(const Trained& t, const RefinementConfig& cfg) {
  const Dataset out = offline_refine(t.world.dataset, t.head, t.world.regions, t.world.bank, PredictConfig{}, cfg);
  const auto extra = appended(t.world.dataset, out);
  REQUIRE(!extra.empty());
  std::size_t hits = 0;
  for (const auto& a : extra) {
    for (const auto* g : t.world.dataset.ground_truth(a.image_id)) {
      if (g->eval_only && g->category_id == a.category_id && iou(g->box, a.box) >= 0.5) {
        ++hits;
        break;
      }
    }
  }
  return double(hits) / double(extra.size());
}

}  // namespace

TEST_SUITE("refine") {

TEST_CASE("config validation") {
  RefinementConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  cfg.score_threshold = 0.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg.score_threshold = 1.5;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = {};
  cfg.rounds = 0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
}

TEST_CASE("appended annotations are confident novel pseudo labels on training images") {
  const auto& t = teacher();
  const RefinementConfig cfg;
  const Dataset out = offline_refine(t.world.dataset, t.head, t.world.regions, t.world.bank, PredictConfig{}, cfg);
  REQUIRE(out.annotations.size() > t.world.dataset.annotations.size());
  CHECK(std::equal(t.world.dataset.annotations.begin(), t.world.dataset.annotations.end(), out.annotations.begin(),
                   [](const Annotation& a, const Annotation& b) {
                     return a.id == b.id && a.box == b.box && a.category_id == b.category_id &&
                            a.provenance == b.provenance && a.eval_only == b.eval_only;
                   }));
  CHECK_NOTHROW(validate_dataset(out));
  std::uint64_t last_image = 0;
  for (const auto& a : appended(t.world.dataset, out)) {
    CHECK(a.provenance == Provenance::kPseudo);
    CHECK(!a.eval_only);
    CHECK(a.score >= cfg.score_threshold);
    CHECK(out.category(a.category_id)->split == ClassSplit::kNovel);
    CHECK(out.image(a.image_id)->subset == Subset::kTrain);
    CHECK(a.image_id >= last_image);
    last_image = a.image_id;
  }
}

TEST_CASE("harvested boxes hit withheld novel ground truth") {
  // Without look-alikes every confident novel detection should be a real
  // (withheld) object.
  auto wc = testing::small_world(7, 120);
  wc.lookalikes_per_image = 0;
  const Trained t = make_teacher(wc);
  const auto p = pseudo_precision(t, RefinementConfig{});
  CHECK(p >= 0.9);
}

TEST_CASE("with look-alikes a stricter threshold is more precise") {
  const auto& t = teacher();
  RefinementConfig loose, strict;
  loose.score_threshold = 0.5;
  strict.score_threshold = 0.99;
  CHECK(pseudo_precision(t, strict) > pseudo_precision(t, loose));
}

TEST_CASE("refinement is idempotent for a fixed head") {
  const auto& t = teacher();
  const Dataset once =
      offline_refine(t.world.dataset, t.head, t.world.regions, t.world.bank, PredictConfig{}, RefinementConfig{});
  const Dataset twice = offline_refine(once, t.head, t.world.regions, t.world.bank, PredictConfig{}, RefinementConfig{});
  CHECK(twice.annotations.size() == once.annotations.size());
}

TEST_CASE("per-image cap") {
  const auto& t = teacher();
  RefinementConfig cfg;
  cfg.max_pseudo_per_image = 1;
  cfg.score_threshold = 0.5;
  const Dataset out = offline_refine(t.world.dataset, t.head, t.world.regions, t.world.bank, PredictConfig{}, cfg);
  std::map<std::uint64_t, int> per_image;
  for (const auto& a : appended(t.world.dataset, out)) ++per_image[a.image_id];
  for (const auto& [img, n] : per_image) CHECK(n == 1);
}

TEST_CASE("base predictions are never harvested") {
  auto wc = testing::small_world(8, 40);
  wc.n_novel = 0;
  const auto world = generate_synthetic_world(wc);
  const LinearHead head = init_head_from_bank(world.bank);
  // Plenty of confident base detections exist...
  const auto dets = predict_images(head, world.dataset, world.regions, world.bank, PredictConfig{}, Subset::kTrain);
  CHECK(std::count_if(dets.begin(), dets.end(), [](const Detection& d) { return d.score >= 0.99; }) > 10);
  // ...but none become annotations.
  RefinementConfig cfg;
  cfg.score_threshold = 0.5;
  const Dataset out = offline_refine(world.dataset, head, world.regions, world.bank, PredictConfig{}, cfg);
  CHECK(out.annotations.size() == world.dataset.annotations.size());
}

TEST_CASE("nothing above threshold leaves the dataset unchanged") {
  const auto world = generate_synthetic_world(testing::small_world(9, 30));
  const LinearHead flat = init_head_from_bank(world.bank, 1.0);
  PredictConfig pc;
  pc.temperature = 1.0;  // both score sources near uniform
  const Dataset out = offline_refine(world.dataset, flat, world.regions, world.bank, pc, RefinementConfig{});
  CHECK(out.annotations.size() == world.dataset.annotations.size());
}

TEST_CASE("empty augmentation: retraining equals plain training") {
  auto wc = testing::small_world(10, 40);
  wc.n_novel = 0;
  const auto world = generate_synthetic_world(wc);
  TrainConfig tc;
  tc.iterations = 80;
  tc.snapshot_every = 0;
  const LinearHead init = init_head_from_bank(world.bank);
  const auto rounds =
      retrain_with_refinement(world.dataset, init, world.regions, world.bank, tc, PredictConfig{}, RefinementConfig{});
  REQUIRE(rounds.size() == 1);
  CHECK(rounds[0].appended == 0);
  const auto plain = train(init, world.dataset, world.regions, world.bank, tc);
  CHECK(rounds[0].training.head == plain.head);
  CHECK(rounds[0].training.metrics == plain.metrics);
}

TEST_CASE("multiple rounds chain teachers") {
  const auto& t = teacher();
  TrainConfig tc;
  tc.iterations = 50;
  tc.snapshot_every = 0;
  RefinementConfig cfg;
  cfg.rounds = 2;
  const auto rounds =
      retrain_with_refinement(t.world.dataset, t.head, t.world.regions, t.world.bank, tc, PredictConfig{}, cfg);
  REQUIRE(rounds.size() == 2);
  CHECK(rounds[0].appended > 0);
  CHECK(rounds[1].dataset.annotations.size() == rounds[0].dataset.annotations.size() + rounds[1].appended);
}

}  // TEST_SUITE
