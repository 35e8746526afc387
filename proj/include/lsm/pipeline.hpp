#pragma once

#include "lsm/eval.hpp"
#include "lsm/grid.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lsm {

inline const std::vector<std::string>& representation_names() {
  static const std::vector<std::string> names{"lcf", "embed_pca", "embed_full"};
  return names;
}
inline const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names{"cnn1d", "cnn2d", "vit"};
  return names;
}
inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"ingest", "sample", "diagnose", "train", "evaluate",
                                              "map",    "report", "synth",    "all"};
  return names;
}

struct PipelineConfig {
  struct Paths {
    std::filesystem::path lcf_manifest;
    std::filesystem::path embed_manifest;
    std::filesystem::path inventory;
    std::filesystem::path mask;  // optional
    std::filesystem::path output_dir = "run";
  } paths;
  std::vector<std::string> representations = representation_names();
  std::vector<std::string> models = model_names();
  struct Sampling {
    double buffer_m = 150.0;
    double ratio = 1.0;  // negatives per landslide
    double train_fraction = 0.7;
    std::size_t window = 11;
  } sampling;
  struct Pca {
    double threshold = 0.90;
  } pca;
  struct Training {
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
  } training;
  struct Eval {
    double threshold = 0.5;
    std::size_t permutations = 20;
  } eval;
  struct Map {
    std::size_t n_classes = 5;
    std::size_t jenks_cap = 10000;
  } map;
  std::uint64_t seed = 42;
  unsigned threads = 0;  // 0 = hardware concurrency; used by train and map

  /// Where each field's value came from ("default", "config" or "cli"), keyed by dotted path.
  std::map<std::string, std::string> origin;

  void validate() const;
  /// Full echo including every default, with origins.
  std::string to_json() const;
};

/// Parses and validates a config document. Unknown keys and wrong types are
/// reported with their dotted key path. Relative paths resolve against `base_dir`.
PipelineConfig parse_pipeline_config(const std::string& text, const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

struct ManifestEntry {
  std::string name;
  std::filesystem::path path;
  bool categorical = false;
};
std::vector<ManifestEntry> parse_stack_manifest(const std::string& text, const std::filesystem::path& base_dir);
std::vector<ManifestEntry> load_stack_manifest(const std::filesystem::path& path);

/// Reads the listed grids, resamples any band not aligned with `templ`
/// (nearest for categorical, bilinear otherwise) and stacks them.
GridStack load_stack(const std::vector<ManifestEntry>& entries, const GridHeader& templ);

/// Experiment cell name, e.g. "embed_pca-vit".
std::string cell_name(const std::string& representation, const std::string& model);

struct ComparisonRow {
  std::string model;
  std::string representation;
  double accuracy = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
};

struct ComparisonDelta {
  std::string model;
  std::string representation;  // embed_pca or embed_full, relative to lcf
  double delta_f1 = 0.0;
  double delta_auc = 0.0;
};

struct Comparison {
  std::vector<ComparisonRow> rows;
  std::vector<ComparisonDelta> deltas;

  std::string to_csv() const;
  std::string to_json() const;
};

/// Keys are (model, representation). Every model must have all three
/// representations. An undefined F1 counts as 0.
Comparison compare_representations(const std::map<std::pair<std::string, std::string>, MetricReport>& reports);

struct StageOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

/// Runs one stage (or "all", meaning ingest through report) and updates
/// run_manifest.json in the output directory. The synth stage reads a scene
/// config instead of a pipeline config; `config_path` may be empty for it.
void run_stage(const std::string& stage, const std::filesystem::path& config_path, const StageOptions& options);

} // namespace lsm
