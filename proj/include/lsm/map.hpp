#pragma once

#include "lsm/grid.hpp"
#include "lsm/nn/train.hpp"
#include "lsm/reduce.hpp"
#include "lsm/sampling.hpp"

#include <optional>
#include <string>
#include <vector>

namespace lsm {

/// Stack a checkpoint's network reads from: optional PCA projection followed
/// by the checkpoint's input standardization.
GridStack model_ready_stack(const nn::Checkpoint& ckpt, const GridStack& raw, const PcaModel* reducer);

/// Flattened network input at (row, col) of a model-ready stack: the band
/// vector for vector models, the centered window for patch models. nullopt
/// when the cell is invalid or the window is infeasible.
std::optional<std::vector<double>> model_input(const GridStack& ready, const nn::ModelSpec& spec, std::size_t row,
                                               std::size_t col);

/// Scores every feasible cell; all others are nodata. `threads` > 1 splits the
/// raster into row tiles evaluated concurrently.
Grid infer_raster(const nn::Checkpoint& ckpt, const GridStack& raw, const PcaModel* reducer, unsigned threads = 1);

inline constexpr std::size_t kDefaultClasses = 5;
inline constexpr std::size_t kDefaultJenksCap = 10000;

struct JenksResult {
  std::vector<double> breaks;  // n_classes - 1 ascending upper bounds
  std::size_t cap = kDefaultJenksCap;
  std::uint64_t seed = 0;
  std::size_t sample_size = 0;

  std::string to_json() const;
};

/// Sum of squared deviations from the group means for a partition of
/// `values` induced by `breaks` under the upper-inclusive rule.
double within_class_ssd(std::span<const double> values, std::span<const double> breaks);

/// Optimal (Fisher) natural breaks by dynamic programming over sorted values.
JenksResult jenks_breaks(std::span<const double> values, std::size_t n_classes = kDefaultClasses,
                         std::size_t cap = kDefaultJenksCap, std::uint64_t seed = 0);

/// Class c (1-based) iff breaks[c-2] < v <= breaks[c-1].
int class_of(double value, std::span<const double> breaks);
Grid classify(const Grid& scores, std::span<const double> breaks);

struct OccupancyReport {
  std::vector<std::size_t> counts;  // per class, index 0 = class 1
  std::vector<double> percent;      // of classified points
  std::size_t unclassified = 0;
  std::size_t total = 0;

  std::string to_json() const;
  std::string to_csv() const;
};

OccupancyReport occupancy(const Grid& classes, const std::vector<InventoryPoint>& landslides,
                          std::size_t n_classes = kDefaultClasses);

struct SusceptibilityMap {
  Grid scores;
  Grid classes;
  JenksResult jenks;
};

SusceptibilityMap build_map(const Grid& scores, std::size_t n_classes, std::size_t cap, std::uint64_t seed);

} // namespace lsm
