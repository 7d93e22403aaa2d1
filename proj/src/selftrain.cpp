#include "ovps/selftrain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "ovps/error.hpp"
#include "ovps/random.hpp"
#include "ovps/region_index.hpp"

namespace ovps {

std::optional<std::size_t> LinearHead::slot_of(std::uint64_t class_id) const {
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    if (class_ids[i] == class_id) return i;
  }
  return std::nullopt;
}

std::vector<double> LinearHead::logits(std::span<const float> region) const {
  if (region.size() != dim) {
    throw ShapeError("head expects dim " + std::to_string(dim) + ", region has " + std::to_string(region.size()));
  }
  std::vector<double> z(num_slots());
  for (std::size_t c = 0; c < z.size(); ++c) {
    const double* w = weight.data() + c * dim;
    double s = bias[c];
    for (std::size_t i = 0; i < dim; ++i) s += w[i] * region[i];
    z[c] = logit_scale * s;
  }
  return z;
}

std::vector<double> LinearHead::probs(std::span<const float> region) const { return softmax(logits(region)); }

LinearHead init_head_from_bank(const TextBank& bank, double logit_scale) {
  LinearHead head;
  head.dim = bank.dim;
  head.logit_scale = logit_scale;
  head.class_ids = bank.class_ids;
  head.weight.assign(bank.vectors.begin(), bank.vectors.end());
  head.bias.assign(bank.num_slots(), 0.0);
  return head;
}

void save_head(const std::filesystem::path& path, const LinearHead& head) {
  OvpeContainer c;
  c.dim = static_cast<std::uint32_t>(head.dim);
  c.headers.resize(head.num_slots());
  c.data.resize(head.weight.size());
  for (std::size_t s = 0; s < head.num_slots(); ++s) {
    auto& h = c.headers[s];
    h.id = s < head.class_ids.size() ? head.class_ids[s] : kBackgroundClassId;
    h.box[0] = static_cast<float>(head.logit_scale);
    h.objectness = static_cast<float>(head.bias[s]);
  }
  for (std::size_t i = 0; i < head.weight.size(); ++i) c.data[i] = static_cast<float>(head.weight[i]);
  write_ovpe(path, c);
}

LinearHead load_head(const std::filesystem::path& path) {
  const OvpeContainer c = read_ovpe(path);
  if (c.headers.empty() || c.headers.back().id != kBackgroundClassId) {
    throw FormatError("head file: last row must be the background slot");
  }
  LinearHead head;
  head.dim = c.dim;
  head.logit_scale = c.headers.front().box[0];
  for (std::size_t s = 0; s < c.headers.size(); ++s) {
    if (s + 1 < c.headers.size()) head.class_ids.push_back(c.headers[s].id);
    head.bias.push_back(c.headers[s].objectness);
  }
  head.weight.assign(c.data.begin(), c.data.end());
  return head;
}

LossAndGrad weighted_ce(std::span<const double> logits, std::size_t target, std::span<const double> class_weights) {
  if (target >= logits.size()) throw ShapeError("weighted_ce: target index out of range");
  if (class_weights.size() != logits.size()) throw ShapeError("weighted_ce: weights and logits differ in length");
  for (double z : logits) {
    if (!std::isfinite(z)) throw NumericError("weighted_ce: non-finite logit");
  }
  const double w = class_weights[target];
  if (!(w > 0.0)) throw ConfigError("weighted_ce: class weights must be positive");

  double hi = -INFINITY;
  for (double z : logits) hi = std::max(hi, z);
  double total = 0.0;
  for (double z : logits) total += std::exp(z - hi);
  const double log_norm = hi + std::log(total);

  LossAndGrad out;
  out.loss = -w * (logits[target] - log_norm);
  out.grad.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    const double p = std::exp(logits[c] - log_norm);
    out.grad[c] = w * (p - (c == target ? 1.0 : 0.0));
  }
  return out;
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(cfg.background_weight > 0.0)) throw ConfigError("train.background_weight must be positive");
  if (cfg.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ConfigError("train.momentum must be in [0, 1)");
  validate(cfg.plm);
}

nlohmann::json IterationMetrics::to_json() const {
  nlohmann::json j = {{"iteration", iteration}, {"loss", loss}, {"pseudo_labels", pseudo_labels}};
  j["novel_recall"] = novel_recall ? nlohmann::json(*novel_recall) : nlohmann::json(nullptr);
  return j;
}

std::optional<double> novel_recall(const LinearHead& head, const Dataset& dataset,
                                   const RegionEmbeddingFile& regions, Subset subset) {
  const RegionIndex index(regions);
  std::size_t total = 0;
  std::size_t hit = 0;
  for (std::uint64_t image_id : dataset.image_ids(subset)) {
    for (const Annotation* a : dataset.ground_truth(image_id)) {
      const Category* cat = dataset.category(a->category_id);
      if (cat == nullptr || cat->split != ClassSplit::kNovel) continue;
      const auto rec = index.find(image_id, a->box);
      const auto slot = head.slot_of(a->category_id);
      if (!rec || !slot) continue;
      const auto p = head.probs(regions.vector(*rec));
      const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
      ++total;
      if (best == *slot) ++hit;
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(hit) / static_cast<double>(total);
}

namespace {

struct TrainImage {
  std::uint64_t id = 0;
  std::vector<Proposal> proposals;
  std::vector<GtObject> gt;
};

}  // namespace

TrainResult train(const LinearHead& head, const Dataset& dataset, const RegionEmbeddingFile& regions,
                  const TextBank& head_bank, const TrainConfig& cfg, const TextBank* plm_bank,
                  const PlmObserver& observer) {
  validate(cfg);
  if (head.dim != regions.dim) throw ShapeError("head and region embeddings differ in dim");

  const RegionIndex index(regions);
  std::vector<TrainImage> images;
  for (std::uint64_t id : dataset.image_ids(Subset::kTrain)) {
    TrainImage img;
    img.id = id;
    img.proposals = index.proposals(id);
    for (const Annotation* a : dataset.training_annotations(id)) {
      img.gt.push_back(GtObject{a->box, a->category_id, a->provenance});
    }
    images.push_back(std::move(img));
  }
  if (images.empty()) throw ConfigError("training split is empty");

  const TextBank& vocab = plm_bank != nullptr ? *plm_bank : head_bank;
  const std::set<std::uint64_t> head_classes(head.class_ids.begin(), head.class_ids.end());

  std::vector<double> class_weights(head.num_slots(), 1.0);
  class_weights[head.background_slot()] = cfg.background_weight;

  TrainResult result{head, {}};
  LinearHead& h = result.head;
  std::vector<double> grad_w(h.weight.size());
  std::vector<double> grad_b(h.bias.size());
  std::vector<double> vel_w(h.weight.size(), 0.0);
  std::vector<double> vel_b(h.bias.size(), 0.0);
  std::vector<std::size_t> order(images.size());

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    Rng batch_rng = Rng::stream({cfg.seed, 0x62617463ULL, it});
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t take = std::min(cfg.batch_size, order.size());
    for (std::size_t i = 0; i < take; ++i) {
      std::swap(order[i], order[i + static_cast<std::size_t>(batch_rng.below(order.size() - i))]);
    }
    std::vector<std::size_t> batch(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(batch.begin(), batch.end());  // images are stored in id order

    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    std::fill(grad_b.begin(), grad_b.end(), 0.0);
    double loss_sum = 0.0;
    std::size_t n_examples = 0;
    std::size_t pseudo_count = 0;

    for (std::size_t bi : batch) {
      const TrainImage& img = images[bi];
      std::vector<ClassificationTarget> roi;
      if (cfg.plm_enabled) {
        Rng rng = Rng::stream({cfg.seed, img.id, it});
        auto step = run_plm_step(img.proposals, img.gt, regions, vocab, cfg.plm, rng, &head_classes);
        pseudo_count += step.diagnostics.selected;
        if (observer) observer(it, img.id, step.diagnostics);
        roi = std::move(step.roi_targets);
      } else {
        roi = assign_targets(img.proposals, img.gt, cfg.plm.pos_iou).roi;
      }

      for (const auto& t : roi) {
        std::size_t target = h.background_slot();
        if (t.label.kind == TargetLabel::Kind::kCategory) {
          const auto slot = h.slot_of(t.label.class_id);
          if (!slot) {
            throw DataError("training target class " + std::to_string(t.label.class_id) + " is not in the head");
          }
          target = *slot;
        }
        const auto region = regions.vector(img.proposals[t.proposal_index].embedding_index);
        const auto lg = weighted_ce(h.logits(region), target, class_weights);
        loss_sum += lg.loss;
        ++n_examples;
        for (std::size_t c = 0; c < h.num_slots(); ++c) {
          const double g = h.logit_scale * lg.grad[c];
          if (g == 0.0) continue;
          double* gw = grad_w.data() + c * h.dim;
          for (std::size_t i = 0; i < h.dim; ++i) gw[i] += g * region[i];
          grad_b[c] += g;
        }
      }
    }

    IterationMetrics m;
    m.iteration = it;
    m.pseudo_labels = pseudo_count;
    if (n_examples > 0) {
      const double inv = 1.0 / static_cast<double>(n_examples);
      m.loss = loss_sum * inv;
      for (std::size_t i = 0; i < h.weight.size(); ++i) {
        vel_w[i] = cfg.momentum * vel_w[i] + grad_w[i] * inv;
        h.weight[i] -= cfg.learning_rate * vel_w[i];
      }
      for (std::size_t c = 0; c < h.bias.size(); ++c) {
        vel_b[c] = cfg.momentum * vel_b[c] + grad_b[c] * inv;
        h.bias[c] -= cfg.learning_rate * vel_b[c];
      }
    }
    if (cfg.snapshot_every > 0 && ((it + 1) % cfg.snapshot_every == 0 || it + 1 == cfg.iterations)) {
      m.novel_recall = novel_recall(h, dataset, regions, Subset::kVal);
    }
    result.metrics.push_back(m);
  }
  return result;
}

std::vector<Detection> predict(const LinearHead& head, std::span<const Proposal> proposals,
                               const RegionEmbeddingFile& regions, const TextBank& bank, const PredictConfig& cfg,
                               std::uint64_t image_id) {
  if (head.class_ids != bank.class_ids) throw ShapeError("head classes do not match the text bank");
  if (head.dim != bank.dim || regions.dim != bank.dim) throw ShapeError("head, bank and regions differ in dim");

  std::map<std::uint64_t, std::vector<Detection>> by_class;
  for (const auto& p : proposals) {
    if (p.embedding_index >= regions.size()) throw DataError("proposal has no stored embedding");
    const auto region = regions.vector(p.embedding_index);
    const ScoreVector ps{head.probs(region), 1.0};
    const ScoreVector qs = classify(region, bank, cfg.temperature);
    const auto fused = fuse_scores(ps, qs, cfg.fusion, bank);
    const auto best = static_cast<std::size_t>(std::max_element(fused.begin(), fused.end()) - fused.begin());
    if (best == bank.background_index()) continue;
    by_class[bank.class_ids[best]].push_back(Detection{image_id, p.box, bank.class_ids[best], fused[best]});
  }

  std::vector<Detection> out;
  for (auto& [cls, dets] : by_class) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (const auto& d : dets) {
      boxes.push_back(d.box);
      scores.push_back(d.score);
    }
    for (std::size_t k : nms(boxes, scores, cfg.nms_iou, dets.size())) out.push_back(dets[k]);
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (out.size() > cfg.max_detections) out.resize(cfg.max_detections);
  return out;
}

std::vector<Detection> predict_images(const LinearHead& head, const Dataset& dataset,
                                      const RegionEmbeddingFile& regions, const TextBank& bank,
                                      const PredictConfig& cfg, Subset subset) {
  const RegionIndex index(regions);
  std::vector<Detection> out;
  for (std::uint64_t id : dataset.image_ids(subset)) {
    const auto props = index.proposals(id);
    auto dets = predict(head, props, regions, bank, cfg, id);
    out.insert(out.end(), dets.begin(), dets.end());
  }
  return out;
}

}  // namespace ovps
