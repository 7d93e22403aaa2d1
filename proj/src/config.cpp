#include "ovps/config.hpp"

#include <algorithm>
#include <charconv>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "ovps/error.hpp"

namespace ovps {
namespace {

// Single table of config fields. The callback sees (section, key, member).
template <class Config, class F>
void for_each_field(Config& c, F&& f) {
  f("run", "seed", c.run.seed);
  f("run", "out_dir", c.run.out_dir);

  f("paths", "dataset", c.paths.dataset);
  f("paths", "regions", c.paths.regions);
  f("paths", "text_bank", c.paths.text_bank);
  f("paths", "vocab_bank", c.paths.vocab_bank);
  f("paths", "head", c.paths.head);
  f("paths", "detections", c.paths.detections);

  f("synth", "n_base", c.synth.n_base);
  f("synth", "n_novel", c.synth.n_novel);
  f("synth", "dim", c.synth.dim);
  f("synth", "n_images", c.synth.n_images);
  f("synth", "noise_sigma", c.synth.noise_sigma);
  f("synth", "val_fraction", c.synth.val_fraction);
  f("synth", "jitter_per_object", c.synth.jitter_per_object);
  f("synth", "partial_per_object", c.synth.partial_per_object);
  f("synth", "background_proposals", c.synth.background_proposals);
  f("synth", "lookalikes_per_image", c.synth.lookalikes_per_image);
  f("synth", "n_distractors", c.synth.n_distractors);

  f("plm", "enabled", c.plm.enabled);
  f("plm", "threshold", c.plm.threshold);
  f("plm", "k", c.plm.k);
  f("plm", "neg_cap", c.plm.neg_cap);
  f("plm", "neg_iou_max", c.plm.neg_iou_max);
  f("plm", "nms_iou", c.plm.nms_iou);
  f("plm", "score_mode", c.plm.score_mode);

  f("fusion", "alpha", c.fusion.alpha);
  f("fusion", "beta", c.fusion.beta);
  f("fusion", "temperature", c.fusion.temperature);

  f("train", "learning_rate", c.train.learning_rate);
  f("train", "iterations", c.train.iterations);
  f("train", "batch_size", c.train.batch_size);
  f("train", "background_weight", c.train.background_weight);
  f("train", "momentum", c.train.momentum);
  f("train", "snapshot_every", c.train.snapshot_every);

  f("refine", "score_threshold", c.refine.score_threshold);
  f("refine", "dedup_iou", c.refine.dedup_iou);
  f("refine", "max_pseudo_per_image", c.refine.max_pseudo_per_image);
  f("refine", "rounds", c.refine.rounds);
  f("refine", "retrain", c.refine.retrain);

  f("vocab", "source", c.vocab.source);
  f("vocab", "list", c.vocab.list);

  f("eval", "subset", c.eval.subset);
  f("eval", "nms_iou", c.eval.nms_iou);
  f("eval", "max_detections", c.eval.max_detections);

  f("oracle", "k", c.oracle.k);
  f("oracle", "subset", c.oracle.subset);
}

// CLI11 maps TOML sections onto subcommands; we want flat "section.key"
// option names instead, so the file and the flags share one namespace.
class FlatToml : public CLI::ConfigTOML {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    std::vector<CLI::ConfigItem> out;
    for (auto& item : CLI::ConfigTOML::from_config(input)) {
      if (item.name == "++" || item.name == "--") continue;
      CLI::ConfigItem flat = item;
      flat.name = item.fullname();
      flat.parents.clear();
      out.push_back(std::move(flat));
    }
    return out;
  }
};

std::uint64_t parse_seed(const std::string& text) {
  std::uint64_t v = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc{} || ptr != end) {
    throw ConfigError("OVPS_SEED is not an unsigned integer: '" + text + "'");
  }
  return v;
}

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
    return a == flag || a.rfind(flag + "=", 0) == 0;
  });
}

}  // namespace

Subset parse_subset(const std::string& s) {
  if (s == "train") return Subset::kTrain;
  if (s == "val") return Subset::kVal;
  throw ConfigError("subset must be 'train' or 'val', got '" + s + "'");
}

SyntheticConfig synthetic_config(const RunConfig& cfg) {
  SyntheticConfig s;
  s.n_base = cfg.synth.n_base;
  s.n_novel = cfg.synth.n_novel;
  s.dim = cfg.synth.dim;
  s.n_images = cfg.synth.n_images;
  s.noise_sigma = cfg.synth.noise_sigma;
  s.seed = cfg.run.seed;
  s.val_fraction = cfg.synth.val_fraction;
  s.jitter_per_object = cfg.synth.jitter_per_object;
  s.partial_per_object = cfg.synth.partial_per_object;
  s.background_proposals = cfg.synth.background_proposals;
  s.lookalikes_per_image = cfg.synth.lookalikes_per_image;
  s.n_distractors = cfg.synth.n_distractors;
  return s;
}

PlmConfig plm_config(const RunConfig& cfg) {
  PlmConfig p;
  p.threshold = cfg.plm.threshold;
  p.k = cfg.plm.k;
  p.neg_cap = cfg.plm.neg_cap;
  p.neg_iou_max = cfg.plm.neg_iou_max;
  p.nms_iou = cfg.plm.nms_iou;
  p.temperature = cfg.fusion.temperature;
  if (cfg.plm.score_mode == "softmax") {
    p.score_mode = ScoreMode::kSoftmax;
  } else if (cfg.plm.score_mode == "raw_cosine") {
    p.score_mode = ScoreMode::kRawCosine;
  } else {
    throw ConfigError("plm.score_mode must be 'softmax' or 'raw_cosine', got '" + cfg.plm.score_mode + "'");
  }
  return p;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.learning_rate = cfg.train.learning_rate;
  t.iterations = cfg.train.iterations;
  t.batch_size = cfg.train.batch_size;
  t.background_weight = cfg.train.background_weight;
  t.momentum = cfg.train.momentum;
  t.plm_enabled = cfg.plm.enabled;
  t.plm = plm_config(cfg);
  t.seed = cfg.run.seed;
  t.snapshot_every = cfg.train.snapshot_every;
  return t;
}

PredictConfig predict_config(const RunConfig& cfg) {
  PredictConfig p;
  p.fusion = FusionConfig(cfg.fusion.alpha, cfg.fusion.beta);
  p.temperature = cfg.fusion.temperature;
  p.nms_iou = cfg.eval.nms_iou;
  p.max_detections = cfg.eval.max_detections;
  return p;
}

RefinementConfig refinement_config(const RunConfig& cfg) {
  RefinementConfig r;
  r.score_threshold = cfg.refine.score_threshold;
  r.dedup_iou = cfg.refine.dedup_iou;
  r.max_pseudo_per_image = cfg.refine.max_pseudo_per_image;
  r.rounds = cfg.refine.rounds;
  return r;
}

void validate(const RunConfig& cfg) {
  if (cfg.run.out_dir.empty()) throw ConfigError("run.out_dir must not be empty");
  if (cfg.synth.n_images == 0) throw ConfigError("synth.n_images must be positive");
  if (!(cfg.synth.noise_sigma >= 0.0)) throw ConfigError("synth.noise_sigma must be >= 0");
  if (!(cfg.synth.val_fraction >= 0.0 && cfg.synth.val_fraction < 1.0)) {
    throw ConfigError("synth.val_fraction must be in [0, 1)");
  }
  if (!(cfg.fusion.temperature > 0.0)) throw ConfigError("fusion.temperature must be positive");
  validate(train_config(cfg));
  (void)predict_config(cfg);
  if (!(cfg.eval.nms_iou > 0.0 && cfg.eval.nms_iou <= 1.0)) throw ConfigError("eval.nms_iou must be in (0, 1]");
  if (cfg.eval.max_detections == 0) throw ConfigError("eval.max_detections must be positive");
  (void)parse_subset(cfg.eval.subset);
  validate(refinement_config(cfg));
  if (cfg.vocab.source != "dataset" && cfg.vocab.source != "base_only" && cfg.vocab.source != "list") {
    throw ConfigError("vocab.source must be 'dataset', 'base_only' or 'list', got '" + cfg.vocab.source + "'");
  }
  if (cfg.vocab.source == "list" && cfg.vocab.list.empty()) {
    throw ConfigError("vocab.source = 'list' needs vocab.list");
  }
  if (cfg.oracle.k.empty()) throw ConfigError("oracle.k must list at least one value");
  for (std::size_t k : cfg.oracle.k) {
    if (k == 0) throw ConfigError("oracle.k values must be positive");
  }
  if (cfg.oracle.subset != "all") (void)parse_subset(cfg.oracle.subset);
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for_each_field(cfg, [&](const char* section, const char* key, const auto& value) { j[section][key] = value; });
  return j;
}

std::string to_toml(const RunConfig& cfg) {
  std::ostringstream os;
  std::string current;
  for_each_field(cfg, [&](const char* section, const char* key, const auto& value) {
    if (current != section) {
      if (!current.empty()) os << '\n';
      os << '[' << section << "]\n";
      current = section;
    }
    os << key << " = " << nlohmann::json(value).dump() << '\n';
  });
  return os.str();
}

CommandLine parse_command_line(const std::vector<std::string>& args, std::optional<std::string> env_seed) {
  CommandLine result;
  RunConfig& cfg = result.config;

  CLI::App app{"Pseudo-label mining and self-training for open-vocabulary detection heads", "ovps"};
  app.config_formatter(std::make_shared<FlatToml>());
  app.set_config("--config", "", "TOML config file");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  for_each_field(cfg, [&](const char* section, const char* key, auto& value) {
    app.add_option(std::string("--") + section + "." + key, value)->capture_default_str()->group(section);
  });

  const std::pair<const char*, const char*> commands[] = {
      {"synth", "Generate a synthetic embedding world"},
      {"vocab", "Build the pseudo-labeling vocabulary"},
      {"train", "Train the classification head"},
      {"refine", "Harvest pseudo annotations and retrain"},
      {"eval", "Predict and evaluate detections"},
      {"oracle", "Zero-shot top-k accuracy at ground-truth boxes"},
  };
  for (const auto& [name, description] : commands) app.add_subcommand(name, description)->fallthrough();

  // CLI11 wants argv order reversed when given a vector.
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    result.help = app.help();
    return result;
  } catch (const CLI::CallForAllHelp&) {
    result.help = app.help("", CLI::AppFormatMode::All);
    return result;
  } catch (const CLI::ParseError& e) {
    throw ConfigError(e.what());
  }

  for (const auto* sub : app.get_subcommands()) result.command = sub->get_name();
  if (env_seed && !has_flag(args, "--run.seed")) cfg.run.seed = parse_seed(*env_seed);
  validate(cfg);
  return result;
}

std::filesystem::path resolve(const RunConfig& cfg, const std::string& configured, const char* default_name) {
  if (!configured.empty()) return configured;
  return std::filesystem::path(cfg.run.out_dir) / default_name;
}

}  // namespace ovps
