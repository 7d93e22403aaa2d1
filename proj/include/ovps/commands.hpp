#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovps/config.hpp"
#include "ovps/dataset.hpp"
#include "ovps/ovpe.hpp"

namespace ovps {

struct CommandOutput {
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;
  nlohmann::json summary = nlohmann::json::object();
};

// Each command reads its inputs from cfg.paths (defaulting to files inside
// run.out_dir), writes its artifacts into run.out_dir and logs a short
// human-readable summary to `log`.
CommandOutput cmd_synth(const RunConfig& cfg, std::ostream& log);
CommandOutput cmd_vocab(const RunConfig& cfg, std::ostream& log);
CommandOutput cmd_train(const RunConfig& cfg, std::ostream& log);
CommandOutput cmd_refine(const RunConfig& cfg, std::ostream& log);
CommandOutput cmd_eval(const RunConfig& cfg, std::ostream& log);
CommandOutput cmd_oracle(const RunConfig& cfg, std::ostream& log);

// One name per line; surrounding whitespace trimmed, blank lines and lines
// starting with '#' skipped.
std::vector<std::string> read_name_list(const std::filesystem::path& path);

// Drops repeated names, keeping the first occurrence.
std::vector<std::string> dedup_names(std::span<const std::string> names);

// Text bank restricted to `names` (in order). Names are resolved against the
// dataset categories and its extra vocabulary. Throws ConfigError for an
// empty vocabulary or a name without an embedding.
TextBank vocabulary_bank(const TextBank& bank, const Dataset& ds, std::span<const std::string> names);

// Names selected by vocab.source: every category ("dataset"), base
// categories only ("base_only"), or the deduplicated list file ("list").
std::vector<std::string> vocabulary_names(const RunConfig& cfg, const Dataset& ds);

// Bank classes restricted to the dataset categories, in category order.
TextBank category_bank(const TextBank& bank, const Dataset& ds);

std::string sha256_file(const std::filesystem::path& path);

// Full front end: parse, run, write the config snapshot and manifest, map
// errors to exit codes (0 ok, 1 config, 2 data/format, 3 numeric).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            std::optional<std::string> env_seed = std::nullopt);

}  // namespace ovps
