#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovps/dataset.hpp"
#include "ovps/plm.hpp"
#include "ovps/refine.hpp"
#include "ovps/selftrain.hpp"
#include "ovps/synthetic.hpp"

namespace ovps {

// Everything a command needs, grouped the way the config file is. Every
// field is both a `key = value` entry under its [section] and a
// `--section.key` command line flag.
struct RunConfig {
  struct Run {
    std::uint64_t seed = 0;
    std::string out_dir = "run";
  } run;

  // Empty paths resolve to a default file name inside run.out_dir.
  struct Paths {
    std::string dataset;
    std::string regions;
    std::string text_bank;
    std::string vocab_bank;  // PLM vocabulary; the head's classes when empty
    std::string head;
    std::string detections;  // eval reads these instead of predicting when set
  } paths;

  struct Synth {
    std::size_t n_base = 10;
    std::size_t n_novel = 5;
    std::size_t dim = 64;
    std::size_t n_images = 500;
    double noise_sigma = 0.15;
    double val_fraction = 0.2;
    std::size_t jitter_per_object = 10;
    std::size_t partial_per_object = 4;
    std::size_t background_proposals = 10;
    std::size_t lookalikes_per_image = 3;
    std::size_t n_distractors = 0;
  } synth;

  struct Plm {
    bool enabled = true;
    double threshold = 0.8;
    std::size_t k = 4;
    std::size_t neg_cap = 1000;
    double neg_iou_max = 0.5;
    double nms_iou = 0.7;
    std::string score_mode = "softmax";  // softmax | raw_cosine
  } plm;

  struct Fusion {
    double alpha = 0.35;
    double beta = 0.65;
    double temperature = kDefaultTemperature;
  } fusion;

  struct Train {
    double learning_rate = 0.002;
    std::size_t iterations = 2000;
    std::size_t batch_size = 8;
    double background_weight = 0.9;
    double momentum = 0.0;
    std::size_t snapshot_every = 100;
  } train;

  struct Refine {
    double score_threshold = 0.9;
    double dedup_iou = 0.5;
    std::size_t max_pseudo_per_image = 20;
    std::size_t rounds = 1;
    bool retrain = true;
  } refine;

  struct Vocab {
    std::string source = "dataset";  // dataset | base_only | list
    std::string list;                // one class name per line
  } vocab;

  struct Eval {
    std::string subset = "val";
    double nms_iou = 0.5;
    std::size_t max_detections = 100;
  } eval;

  struct Oracle {
    std::vector<std::size_t> k = {1, 5};
    std::string subset = "all";  // all | train | val
  } oracle;
};

// Throws ConfigError on out-of-range values or unknown enumerations.
void validate(const RunConfig& cfg);

SyntheticConfig synthetic_config(const RunConfig& cfg);
PlmConfig plm_config(const RunConfig& cfg);
TrainConfig train_config(const RunConfig& cfg);
PredictConfig predict_config(const RunConfig& cfg);
RefinementConfig refinement_config(const RunConfig& cfg);
Subset parse_subset(const std::string& s);

// {section: {key: value}}; the resolved config written next to outputs.
nlohmann::json to_json(const RunConfig& cfg);
// Same content as a config file that parses back to an equal config.
std::string to_toml(const RunConfig& cfg);

struct CommandLine {
  std::string command;  // empty when only help/version was requested
  RunConfig config;
  std::string help;
};

// Parses `ovps <command> [--config FILE] [--section.key VALUE ...]`.
// Precedence: flag > OVPS_SEED (run.seed only) > config file > default.
// Throws ConfigError on unknown keys, bad values or a missing command.
CommandLine parse_command_line(const std::vector<std::string>& args,
                               std::optional<std::string> env_seed = std::nullopt);

std::filesystem::path resolve(const RunConfig& cfg, const std::string& configured, const char* default_name);

}  // namespace ovps
