#pragma once

#include "lsm/grid.hpp"
#include "lsm/sampling.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lsm {

struct SceneConfig {
  std::size_t nrows = 128;
  std::size_t ncols = 128;
  double cellsize = 30.0;
  double xll = 250000.0;
  double yll = 2600000.0;
  std::uint64_t seed = 42;
  std::size_t n_landslides = 100;
  std::size_t informative_bands = 4;
  std::size_t total_bands = 8;
  double correlation_length = 4.0;  // smoothing passes = ceil(correlation_length)
  double noise_level = 0.3;
  double min_spacing_m = 150.0;
  std::size_t edge_margin = 6;      // keeps landslides patch-feasible on the terrain stack
  std::size_t embed_bands = 64;

  void validate() const;
  std::string to_json() const;
  static SceneConfig from_json(const std::string& text);
};

/// Spatially correlated field in [0, 1]: seeded white noise smoothed by
/// ceil(correlation_length) passes of a 3x3 box filter, then min-max rescaled.
Grid gen_field(std::uint64_t seed, const GridHeader& header, double correlation_length);

/// Lag-1 (horizontal and vertical pooled) Pearson autocorrelation.
double lag1_autocorrelation(const Grid& g);

struct Scene {
  SceneConfig config;
  std::uint64_t effective_seed = 0;  // config.seed plus regenerations
  std::size_t regenerations = 0;
  Grid dem;
  GridStack lcf;
  std::vector<bool> lcf_categorical;
  GridStack embed;
  std::vector<InventoryPoint> inventory;
  Grid latent;        // susceptibility s in (0, 1)
  Grid latent_score;  // linear score z behind s
  std::vector<double> mixing;        // total_bands x embed_bands row-major
  std::vector<double> latent_weights;  // informative-band weights in z
  double plantedness_auc = 0.0;
};

/// Deterministic in the config. Scenes whose latent field fails to separate
/// inventory cells from far-field cells (AUC < 0.95) are regenerated with
/// seed + 1.
Scene gen_scene(const SceneConfig& cfg);

/// Writes grids, manifests, inventory.csv, mask.asc, scene.json and a
/// pipeline.json template into `dir`.
void write_scene(const Scene& scene, const std::filesystem::path& dir);

inline constexpr double kPlantednessThreshold = 0.95;

} // namespace lsm
