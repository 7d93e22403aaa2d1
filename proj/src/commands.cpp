#include "ovps/commands.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iomanip>
#include <memory>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "ovps/error.hpp"
#include "ovps/evalkit.hpp"
#include "ovps/refine.hpp"
#include "ovps/selftrain.hpp"
#include "ovps/synthetic.hpp"

namespace ovps {
namespace fs = std::filesystem;

namespace {

struct Paths {
  fs::path dataset, regions, text_bank, vocab_bank, head, detections;
};

Paths resolve_paths(const RunConfig& cfg) {
  return Paths{
      resolve(cfg, cfg.paths.dataset, "dataset.json"),
      resolve(cfg, cfg.paths.regions, "regions.ovpe"),
      resolve(cfg, cfg.paths.text_bank, "text_bank.ovpe"),
      resolve(cfg, cfg.paths.vocab_bank, "vocab_bank.ovpe"),
      resolve(cfg, cfg.paths.head, "head.ovpe"),
      resolve(cfg, cfg.paths.detections, "detections.json"),
  };
}

fs::path out_file(const RunConfig& cfg, const char* name) { return fs::path(cfg.run.out_dir) / name; }

void ensure_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.run.out_dir, ec);
  if (ec || !fs::is_directory(cfg.run.out_dir)) {
    throw DataError("cannot create output directory " + cfg.run.out_dir + ": " + ec.message());
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

void write_text(const fs::path& path, const std::string& text) {
  auto f = open_out(path);
  f << text;
  if (!f) throw DataError("write failed: " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void require_file(const fs::path& path, const char* what) {
  if (!fs::exists(path)) throw DataError(std::string(what) + " not found: " + path.string());
}

TextBank load_bound_bank(const fs::path& path, const Dataset& ds) {
  require_file(path, "text bank");
  TextBank bank = load_text_bank(path);
  bind_categories(bank, ds);
  return bank;
}

Dataset load_checked_dataset(const fs::path& path) {
  require_file(path, "dataset");
  return load_dataset(path);
}

RegionEmbeddingFile load_checked_regions(const fs::path& path) {
  require_file(path, "region embeddings");
  return load_regions(path);
}

void write_metrics(const fs::path& path, const std::vector<IterationMetrics>& metrics) {
  auto f = open_out(path);
  for (const auto& m : metrics) f << m.to_json().dump() << '\n';
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

nlohmann::json file_entry(const fs::path& path) {
  return {{"path", path.generic_string()}, {"sha256", sha256_file(path)}, {"bytes", fs::file_size(path)}};
}

}  // namespace

std::string sha256_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw DataError("sha256 init failed");
  std::array<char, 1 << 16> buf{};
  while (f) {
    f.read(buf.data(), buf.size());
    if (f.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(f.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::vector<std::string> read_name_list(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read vocabulary list " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(f, line)) {
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    names.push_back(line);
  }
  return names;
}

std::vector<std::string> dedup_names(std::span<const std::string> names) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (seen.insert(n).second) out.push_back(n);
  }
  return out;
}

TextBank vocabulary_bank(const TextBank& bank, const Dataset& ds, std::span<const std::string> names) {
  if (names.empty()) throw ConfigError("vocabulary is empty");
  std::vector<std::uint64_t> ids;
  for (const auto& name : names) {
    const Category* found = nullptr;
    for (const auto& c : ds.categories) {
      if (c.name == name) found = &c;
    }
    for (const auto& c : ds.extra_vocabulary) {
      if (found == nullptr && c.name == name) found = &c;
    }
    if (found == nullptr) throw ConfigError("vocabulary name '" + name + "' has no text embedding");
    ids.push_back(found->id);
  }
  return select_classes(bank, ids);
}

std::vector<std::string> vocabulary_names(const RunConfig& cfg, const Dataset& ds) {
  std::vector<std::string> names;
  if (cfg.vocab.source == "list") {
    names = read_name_list(cfg.vocab.list);
  } else {
    const bool base_only = cfg.vocab.source == "base_only";
    for (const auto& c : ds.categories) {
      if (!base_only || c.split == ClassSplit::kBase) names.push_back(c.name);
    }
  }
  return dedup_names(names);
}

TextBank category_bank(const TextBank& bank, const Dataset& ds) {
  std::vector<std::uint64_t> ids;
  for (const auto& c : ds.categories) ids.push_back(c.id);
  return select_classes(bank, ids);
}

CommandOutput cmd_synth(const RunConfig& cfg, std::ostream& log) {
  ensure_out_dir(cfg);
  const auto paths = resolve_paths(cfg);
  const auto world = generate_synthetic_world(synthetic_config(cfg));
  save_dataset(paths.dataset, world.dataset);
  save_regions(paths.regions, world.regions);
  save_text_bank(paths.text_bank, world.bank);

  CommandOutput out;
  out.outputs = {paths.dataset, paths.regions, paths.text_bank};
  std::size_t withheld = 0;
  for (const auto& a : world.dataset.annotations) withheld += a.eval_only ? 1 : 0;
  out.summary = {{"images", world.dataset.images.size()},
                 {"annotations", world.dataset.annotations.size()},
                 {"withheld_annotations", withheld},
                 {"regions", world.regions.size()},
                 {"classes", world.bank.num_classes()},
                 {"dim", world.bank.dim}};
  log << "synth: " << world.dataset.images.size() << " images, " << world.dataset.annotations.size()
      << " annotations (" << withheld << " withheld), " << world.regions.size() << " regions, "
      << world.bank.num_classes() << " classes, dim " << world.bank.dim << "\n";
  return out;
}

CommandOutput cmd_vocab(const RunConfig& cfg, std::ostream& log) {
  ensure_out_dir(cfg);
  const auto paths = resolve_paths(cfg);
  const Dataset ds = load_checked_dataset(paths.dataset);
  const TextBank bank = load_bound_bank(paths.text_bank, ds);
  const auto names = vocabulary_names(cfg, ds);
  const TextBank vocab = vocabulary_bank(bank, ds, names);
  save_text_bank(paths.vocab_bank, vocab);

  std::size_t novel = 0;
  for (std::size_t i = 0; i < vocab.num_classes(); ++i) novel += vocab.is_novel(i) ? 1 : 0;
  const auto listing = out_file(cfg, "vocab.json");
  write_json(listing, {{"source", cfg.vocab.source}, {"names", vocab.class_names}, {"class_ids", vocab.class_ids}});

  CommandOutput out;
  out.inputs = {paths.dataset, paths.text_bank};
  if (cfg.vocab.source == "list") out.inputs.emplace_back(cfg.vocab.list);
  out.outputs = {paths.vocab_bank, listing};
  out.summary = {{"source", cfg.vocab.source}, {"classes", vocab.num_classes()}, {"novel_or_unannotated", novel}};
  log << "vocab: " << vocab.num_classes() << " classes from " << cfg.vocab.source << " (" << novel
      << " not base)\n";
  return out;
}

CommandOutput cmd_train(const RunConfig& cfg, std::ostream& log) {
  ensure_out_dir(cfg);
  const auto paths = resolve_paths(cfg);
  const Dataset ds = load_checked_dataset(paths.dataset);
  const RegionEmbeddingFile regions = load_checked_regions(paths.regions);
  const TextBank bank = category_bank(load_bound_bank(paths.text_bank, ds), ds);

  CommandOutput out;
  out.inputs = {paths.dataset, paths.regions, paths.text_bank};
  std::optional<TextBank> plm_bank;
  if (!cfg.paths.vocab_bank.empty()) {
    plm_bank = load_bound_bank(paths.vocab_bank, ds);
    out.inputs.push_back(paths.vocab_bank);
  }

  const auto diag_path = out_file(cfg, "plm_diagnostics.jsonl");
  auto diag = open_out(diag_path);
  std::size_t pseudo = 0;
  const PlmObserver observer = [&](std::size_t it, std::uint64_t image_id, const PlmDiagnostics& d) {
    auto j = d.to_json();
    j["iteration"] = it;
    j["image_id"] = image_id;
    diag << j.dump() << '\n';
    pseudo += d.selected;
  };

  const auto result = train(init_head_from_bank(bank, cfg.fusion.temperature), ds, regions, bank, train_config(cfg),
                            plm_bank ? &*plm_bank : nullptr, observer);
  diag.close();
  save_head(paths.head, result.head);
  const auto metrics_path = out_file(cfg, "metrics.jsonl");
  write_metrics(metrics_path, result.metrics);

  out.outputs = {paths.head, metrics_path, diag_path};
  const auto recall = novel_recall(result.head, ds, regions, Subset::kVal);
  out.summary = {{"iterations", result.metrics.size()}, {"pseudo_labels", pseudo}};
  if (!result.metrics.empty()) {
    out.summary["initial_loss"] = result.metrics.front().loss;
    out.summary["final_loss"] = result.metrics.back().loss;
  }
  if (recall) out.summary["val_novel_recall"] = *recall;
  log << "train: " << result.metrics.size() << " iterations, " << pseudo << " pseudo labels";
  if (!result.metrics.empty()) {
    log << ", loss " << result.metrics.front().loss << " -> " << result.metrics.back().loss;
  }
  if (recall) log << ", val novel recall " << *recall;
  log << "\n";
  return out;
}

CommandOutput cmd_refine(const RunConfig& cfg, std::ostream& log) {
  ensure_out_dir(cfg);
  const auto paths = resolve_paths(cfg);
  const Dataset ds = load_checked_dataset(paths.dataset);
  const RegionEmbeddingFile regions = load_checked_regions(paths.regions);
  const TextBank bank = category_bank(load_bound_bank(paths.text_bank, ds), ds);
  require_file(paths.head, "head");
  const LinearHead teacher = load_head(paths.head);

  CommandOutput out;
  out.inputs = {paths.dataset, paths.regions, paths.text_bank, paths.head};
  std::optional<TextBank> plm_bank;
  if (!cfg.paths.vocab_bank.empty()) {
    plm_bank = load_bound_bank(paths.vocab_bank, ds);
    out.inputs.push_back(paths.vocab_bank);
  }

  const auto refined_path = out_file(cfg, "refined_dataset.json");
  const auto rc = refinement_config(cfg);
  const auto pc = predict_config(cfg);
  nlohmann::json rounds = nlohmann::json::array();
  if (!cfg.refine.retrain) {
    const Dataset refined = offline_refine(ds, teacher, regions, bank, pc, rc);
    save_dataset(refined_path, refined);
    const std::size_t appended = refined.annotations.size() - ds.annotations.size();
    rounds.push_back({{"round", 1}, {"appended", appended}});
    out.outputs = {refined_path};
    log << "refine: appended " << appended << " pseudo annotations\n";
  } else {
    const auto result = retrain_with_refinement(ds, teacher, regions, bank, train_config(cfg), pc, rc,
                                                plm_bank ? &*plm_bank : nullptr);
    for (std::size_t r = 0; r < result.size(); ++r) {
      rounds.push_back({{"round", r + 1}, {"appended", result[r].appended}});
      log << "refine: round " << r + 1 << " appended " << result[r].appended << " pseudo annotations\n";
    }
    save_dataset(refined_path, result.back().dataset);
    const auto head_path = out_file(cfg, "head_refined.ovpe");
    save_head(head_path, result.back().training.head);
    const auto metrics_path = out_file(cfg, "metrics_refined.jsonl");
    write_metrics(metrics_path, result.back().training.metrics);
    out.outputs = {refined_path, head_path, metrics_path};
  }
  const auto summary_path = out_file(cfg, "refine.json");
  write_json(summary_path, {{"rounds", rounds}});
  out.outputs.push_back(summary_path);
  out.summary = {{"rounds", rounds}};
  return out;
}

CommandOutput cmd_eval(const RunConfig& cfg, std::ostream& log) {
  ensure_out_dir(cfg);
  const auto paths = resolve_paths(cfg);
  const Dataset ds = load_checked_dataset(paths.dataset);
  const Subset subset = parse_subset(cfg.eval.subset);

  CommandOutput out;
  out.inputs = {paths.dataset};
  std::vector<Detection> dets;
  if (!cfg.paths.detections.empty()) {
    require_file(paths.detections, "detections");
    dets = load_detections(paths.detections);
    out.inputs.push_back(paths.detections);
  } else {
    const RegionEmbeddingFile regions = load_checked_regions(paths.regions);
    const TextBank bank = category_bank(load_bound_bank(paths.text_bank, ds), ds);
    require_file(paths.head, "head");
    const LinearHead head = load_head(paths.head);
    out.inputs.insert(out.inputs.end(), {paths.regions, paths.text_bank, paths.head});
    dets = predict_images(head, ds, regions, bank, predict_config(cfg), subset);
    save_detections(paths.detections, dets);
    out.outputs.push_back(paths.detections);
  }

  const EvalReport report = evaluate(dets, ds, subset);
  const auto report_path = out_file(cfg, "report.json");
  const auto csv_path = out_file(cfg, "per_class.csv");
  write_json(report_path, report.to_json());
  write_text(csv_path, report.per_class_csv());
  out.outputs.insert(out.outputs.end(), {report_path, csv_path});
  out.summary = report.to_json();
  out.summary.erase("per_class");
  log << std::fixed << std::setprecision(4) << "eval (" << cfg.eval.subset << "): AP50 novel " << report.ap50_novel
      << ", AP50 base " << report.ap50_base << ", AP " << report.ap_all << ", AR " << report.ar_all << "\n";
  log.unsetf(std::ios::fixed);
  return out;
}

CommandOutput cmd_oracle(const RunConfig& cfg, std::ostream& log) {
  ensure_out_dir(cfg);
  const auto paths = resolve_paths(cfg);
  const Dataset ds = load_checked_dataset(paths.dataset);
  const RegionEmbeddingFile regions = load_checked_regions(paths.regions);
  const TextBank bank = category_bank(load_bound_bank(paths.text_bank, ds), ds);
  std::optional<Subset> subset;
  if (cfg.oracle.subset != "all") subset = parse_subset(cfg.oracle.subset);

  nlohmann::json results = nlohmann::json::array();
  for (std::size_t k : cfg.oracle.k) {
    const auto acc = oracle_box_topk(ds, regions, bank, k, subset, cfg.fusion.temperature);
    results.push_back(acc.to_json());
    log << "oracle top-" << k << ": base " << acc.base << " (" << acc.base_objects << "), novel " << acc.novel << " ("
        << acc.novel_objects << ")\n";
  }
  const double chance = bank.num_classes() > 0 ? 1.0 / static_cast<double>(bank.num_classes()) : 0.0;
  const nlohmann::json report = {{"subset", cfg.oracle.subset}, {"chance_top1", chance}, {"results", results}};
  const auto path = out_file(cfg, "oracle.json");
  write_json(path, report);

  CommandOutput out;
  out.inputs = {paths.dataset, paths.regions, paths.text_bank};
  out.outputs = {path};
  out.summary = report;
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            std::optional<std::string> env_seed) {
  try {
    const CommandLine cl = parse_command_line(args, env_seed);
    if (cl.command.empty()) {
      out << cl.help;
      return 0;
    }
    const RunConfig& cfg = cl.config;
    CommandOutput result;
    if (cl.command == "synth") result = cmd_synth(cfg, out);
    else if (cl.command == "vocab") result = cmd_vocab(cfg, out);
    else if (cl.command == "train") result = cmd_train(cfg, out);
    else if (cl.command == "refine") result = cmd_refine(cfg, out);
    else if (cl.command == "eval") result = cmd_eval(cfg, out);
    else if (cl.command == "oracle") result = cmd_oracle(cfg, out);

    // Resolved config next to the outputs, and a manifest entry per command.
    const auto snapshot = fs::path(cfg.run.out_dir) / (cl.command + ".config.toml");
    write_text(snapshot, to_toml(cfg));
    const auto manifest_path = fs::path(cfg.run.out_dir) / "manifest.json";
    nlohmann::json manifest = nlohmann::json::object();
    if (fs::exists(manifest_path)) {
      std::ifstream f(manifest_path);
      manifest = nlohmann::json::parse(f, nullptr, false);
      if (manifest.is_discarded() || !manifest.is_object()) manifest = nlohmann::json::object();
    }
    nlohmann::json entry = {{"config", to_json(cfg)},
                            {"config_file", snapshot.generic_string()},
                            {"summary", result.summary},
                            {"inputs", nlohmann::json::array()},
                            {"outputs", nlohmann::json::array()}};
    for (const auto& p : result.inputs) entry["inputs"].push_back(file_entry(p));
    for (const auto& p : result.outputs) entry["outputs"].push_back(file_entry(p));
    manifest["commands"][cl.command] = entry;
    write_json(manifest_path, manifest);
    return 0;
  } catch (const Error& e) {
    err << "ovps: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const nlohmann::json::exception& e) {
    err << "ovps: malformed JSON: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  } catch (const fs::filesystem_error& e) {
    err << "ovps: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  }
}

}  // namespace ovps
