#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "../support/oracles.hpp"
#include "ovps/error.hpp"
#include "ovps/evalkit.hpp"
#include "ovps/region_index.hpp"
#include "ovps/selftrain.hpp"
#include "ovps/synthetic.hpp"
#include "support.hpp"

using namespace ovps;

namespace {

TrainConfig quick(std::size_t iterations, std::uint64_t seed = 0) {
  TrainConfig cfg;
  cfg.iterations = iterations;
  cfg.seed = seed;
  cfg.snapshot_every = 0;
  return cfg;
}

}  // namespace

TEST_SUITE("selftrain") {

TEST_CASE("weighted_ce closed forms") {
  const std::vector<double> uniform(10, 0.3);
  std::vector<double> w(10, 1.0);
  w.back() = 0.9;
  CHECK(weighted_ce(uniform, 2, w).loss == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  CHECK(weighted_ce(uniform, 9, w).loss == doctest::Approx(0.9 * std::log(10.0)).epsilon(1e-14));
  const auto g = weighted_ce(uniform, 9, w).grad;
  CHECK(g[0] == doctest::Approx(0.9 * 0.1));
  CHECK(g[9] == doctest::Approx(0.9 * (0.1 - 1.0)));
}

TEST_CASE("weighted_ce matches frozen reference values") {
  const std::vector<double> logits{0.5, -1.2, 2.0, 0.3}, w{1, 1, 1, 0.9};
  const auto a = weighted_ce(logits, 2, w);
  CHECK(a.loss == doctest::Approx(0.36919930736901835).epsilon(1e-13));
  const double ga[] = {0.15424711691360482, 0.028178406892751494, -0.3087123819971396, 0.1262868581907832};
  for (int i = 0; i < 4; ++i) CHECK(a.grad[i] == doctest::Approx(ga[i]).epsilon(1e-12));
  const auto b = weighted_ce(logits, 3, w);
  CHECK(b.loss == doctest::Approx(1.8622793766321166).epsilon(1e-13));
  const double gb[] = {0.13882240522224434, 0.025360566203476344, 0.6221588562025744, -0.7863418276282951};
  for (int i = 0; i < 4; ++i) CHECK(b.grad[i] == doctest::Approx(gb[i]).epsilon(1e-12));
}

TEST_CASE("weighted_ce gradient matches finite differences") {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) CHECK(oracle::gradient_check(rng, 8) < 1e-5);
}

TEST_CASE("weighted_ce errors") {
  const std::vector<double> w(3, 1.0);
  const std::vector<double> bad{0.0, std::numeric_limits<double>::infinity(), 1.0};
  CHECK_THROWS_AS(weighted_ce(bad, 0, w), NumericError);
  const std::vector<double> nan{0.0, std::numeric_limits<double>::quiet_NaN(), 1.0};
  CHECK_THROWS_AS(weighted_ce(nan, 0, w), NumericError);
  const std::vector<double> ok{0.0, 1.0, 2.0}, zero_w{1.0, 0.0, 1.0};
  CHECK_THROWS_AS(weighted_ce(ok, 1, zero_w), ConfigError);
  CHECK_THROWS(weighted_ce(ok, 5, w));
}

TEST_CASE("initial head reproduces the frozen scorer") {
  const auto world = generate_synthetic_world(testing::small_world(1, 10));
  const LinearHead head = init_head_from_bank(world.bank);
  CHECK(head.num_slots() == world.bank.num_slots());
  for (std::size_t i = 0; i < world.regions.size(); i += 7) {
    const auto r = world.regions.vector(i);
    const auto p = head.probs(r);
    const auto q = classify(r, world.bank).probs;
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(p[k] == doctest::Approx(q[k]).epsilon(1e-12));
  }
}

TEST_CASE("head file round-trip") {
  testing::TempDir dir("head");
  const auto world = generate_synthetic_world(testing::small_world(1, 10));
  LinearHead head = init_head_from_bank(world.bank, 37.5);
  head.bias[2] = -0.25;
  head.weight[5] = 3.0;  // rows are stored unnormalized
  save_head(dir / "h.ovpe", head);
  const LinearHead back = load_head(dir / "h.ovpe");
  CHECK(back.logit_scale == 37.5);
  CHECK(back.class_ids == head.class_ids);
  CHECK(back.bias[2] == -0.25);
  CHECK(back.weight[5] == 3.0);
}

TEST_CASE("zero iterations return the head unchanged") {
  const auto world = generate_synthetic_world(testing::small_world(2, 30));
  const LinearHead head = init_head_from_bank(world.bank);
  const auto r = train(head, world.dataset, world.regions, world.bank, quick(0));
  CHECK(r.head == head);
  CHECK(r.metrics.empty());
}

TEST_CASE("empty training split is a configuration error") {
  auto world = generate_synthetic_world(testing::small_world(2, 10));
  for (auto& img : world.dataset.images) img.subset = Subset::kVal;
  CHECK_THROWS_AS(train(init_head_from_bank(world.bank), world.dataset, world.regions, world.bank, quick(5)),
                  ConfigError);
  TrainConfig bad = quick(5);
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = quick(5);
  bad.background_weight = -1;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("loss goes down over the first 100 iterations") {
  const auto world = generate_synthetic_world(testing::small_world(3, 60));
  for (double lr : {0.0005, 0.002, 0.01, 0.05, 0.1}) {
    for (bool plm : {false, true}) {
      TrainConfig cfg = quick(100);
      cfg.learning_rate = lr;
      cfg.plm_enabled = plm;
      const auto r = train(init_head_from_bank(world.bank), world.dataset, world.regions, world.bank, cfg);
      REQUIRE(r.metrics.size() == 100);
      double head = 0, tail = 0;
      for (int i = 0; i < 10; ++i) {
        head += r.metrics[i].loss;
        tail += r.metrics[90 + i].loss;
      }
      CHECK_MESSAGE(tail < head, "lr " << lr << " plm " << plm);
      CHECK(r.metrics.back().loss < r.metrics.front().loss);
    }
  }
}

TEST_CASE("training is deterministic") {
  const auto world = generate_synthetic_world(testing::small_world(4, 40));
  TrainConfig cfg = quick(150, 9);
  cfg.snapshot_every = 50;
  const auto a = train(init_head_from_bank(world.bank), world.dataset, world.regions, world.bank, cfg);
  const auto b = train(init_head_from_bank(world.bank), world.dataset, world.regions, world.bank, cfg);
  CHECK(a.head == b.head);
  CHECK(a.metrics == b.metrics);
  CHECK(a.metrics[49].novel_recall.has_value());
  CHECK(!a.metrics[48].novel_recall.has_value());
  cfg.seed = 10;
  const auto c = train(init_head_from_bank(world.bank), world.dataset, world.regions, world.bank, cfg);
  CHECK(!(a.head == c.head));
}

TEST_CASE("without novel objects PLM changes nothing") {
  auto cfg = testing::small_world(5, 40);
  cfg.n_novel = 0;
  const auto world = generate_synthetic_world(cfg);
  TrainConfig on = quick(100, 3), off = quick(100, 3);
  off.plm_enabled = false;
  const auto a = train(init_head_from_bank(world.bank), world.dataset, world.regions, world.bank, on);
  const auto b = train(init_head_from_bank(world.bank), world.dataset, world.regions, world.bank, off);
  CHECK(a.head == b.head);
  for (const auto& m : a.metrics) CHECK(m.pseudo_labels == 0);
}

TEST_CASE("baseline training suppresses novel classes, PLM keeps them") {
  const auto world = generate_synthetic_world(testing::small_world(0, 120));
  TrainConfig cfg = quick(1500);
  cfg.plm_enabled = false;
  const auto base = train(init_head_from_bank(world.bank), world.dataset, world.regions, world.bank, cfg);
  cfg.plm_enabled = true;
  const auto plm = train(init_head_from_bank(world.bank), world.dataset, world.regions, world.bank, cfg);
  const double before = *novel_recall(init_head_from_bank(world.bank), world.dataset, world.regions, Subset::kVal);
  const double r_base = *novel_recall(base.head, world.dataset, world.regions, Subset::kVal);
  const double r_plm = *novel_recall(plm.head, world.dataset, world.regions, Subset::kVal);
  CHECK(before > 0.9);
  CHECK(r_base < 0.1);
  CHECK(r_plm > r_base + 0.3);
}

TEST_CASE("predict") {
  const auto world = generate_synthetic_world(testing::small_world(1, 20));
  const LinearHead head = init_head_from_bank(world.bank);
  PredictConfig cfg;
  cfg.fusion = FusionConfig(0.5, 0.5);
  CHECK(predict(head, std::vector<Proposal>{}, world.regions, world.bank, cfg).empty());

  // p = q: fused scores are the zero-shot probabilities and argmax is unchanged.
  const RegionIndex index(world.regions);
  const auto props = index.proposals(1);
  cfg.nms_iou = 1.0;
  for (const auto& d : predict(head, props, world.regions, world.bank, cfg, 1)) {
    const auto it = std::find_if(props.begin(), props.end(), [&](const Proposal& p) { return p.box == d.box; });
    REQUIRE(it != props.end());
    const auto q = classify(world.regions.vector(it->embedding_index), world.bank);
    CHECK(d.score == doctest::Approx(q.max()).epsilon(1e-12));
    CHECK(world.bank.class_ids[q.argmax()] == d.class_id);
  }

  LinearHead other = head;
  other.class_ids.pop_back();
  CHECK_THROWS_AS(predict(other, props, world.regions, world.bank, cfg), ShapeError);
}

TEST_CASE("noiseless world: predictions recover ground truth") {
  // Exact-recovery fixture: no partial crops or look-alikes, which are
  // deliberately ambiguous and would score like real objects without noise.
  auto cfg = testing::small_world(2, 60);
  cfg.noise_sigma = 0.0;
  cfg.partial_per_object = 0;
  cfg.lookalikes_per_image = 0;
  const auto world = generate_synthetic_world(cfg);
  const auto dets = predict_images(init_head_from_bank(world.bank), world.dataset, world.regions, world.bank,
                                   PredictConfig{}, Subset::kVal);
  const auto report = evaluate(dets, world.dataset, Subset::kVal);
  CHECK(report.ap50_base == 1.0);
  CHECK(report.ap50_novel == 1.0);
}

}  // TEST_SUITE
