#pragma once

#include "lsm/grid.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lsm {

inline constexpr double kDefaultBufferMeters = 150.0;
inline constexpr double kDefaultTrainFraction = 0.7;
inline constexpr std::size_t kDefaultWindow = 11;

struct InventoryPoint {
  double x = 0.0;
  double y = 0.0;
  int label = 1;  // 1 landslide, 0 non-landslide

  bool operator==(const InventoryPoint&) const = default;
};

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t dropped_outside = 0;
  std::size_t dropped_invalid = 0;
  std::size_t merged_duplicates = 0;

  std::string to_json() const;
};

struct InventoryLoad {
  std::vector<InventoryPoint> points;
  LoadReport report;
};

enum class Partition : unsigned char { train, validation };

struct SampleSet {
  std::vector<InventoryPoint> points;
  std::vector<Partition> split;
  std::uint64_t seed = 0;

  std::vector<InventoryPoint> partition(Partition which) const;
  bool operator==(const SampleSet&) const = default;
};

/// n x p row-major feature matrix with binary labels.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  std::vector<int> labels;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t n, std::size_t p) : rows(n), cols(p), data(n * p, 0.0), labels(n, 0) {}
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

/// size x size x bands window, layout [r][c][b].
struct PatchTensor {
  std::size_t size = 0;
  std::size_t bands = 0;
  std::vector<double> data;

  double at(std::size_t r, std::size_t c, std::size_t b) const { return data[(r * size + c) * bands + b]; }
};

InventoryLoad load_inventory(const std::filesystem::path& path, const GridStack& stack);
InventoryLoad parse_inventory(const std::string& csv_text, const GridStack& stack);

std::vector<InventoryPoint> sample_negatives(const std::vector<InventoryPoint>& landslides, const GridStack& stack,
                                             double buffer_m, std::uint64_t seed);

SampleSet split(const std::vector<InventoryPoint>& points, double train_fraction, std::uint64_t seed);

std::vector<double> extract_vector(const GridStack& stack, const InventoryPoint& point);

/// Throws ValidationError when the window leaves the raster or touches nodata.
PatchTensor extract_patch(const GridStack& stack, const InventoryPoint& point, std::size_t size = kDefaultWindow);

/// True when extract_patch would succeed for the cell.
bool patch_feasible(const GridStack& stack, std::size_t row, std::size_t col, std::size_t size);

/// Grid with 1 where the centered size x size window is fully valid, nodata elsewhere.
Grid window_feasibility(const GridStack& stack, std::size_t size);

} // namespace lsm
