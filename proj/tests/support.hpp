#pragma once

#include "lsm/grid.hpp"
#include "lsm/rng.hpp"
#include "lsm/sampling.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace testing {

inline lsm::FeatureMatrix random_matrix(std::size_t n, std::size_t p, std::uint64_t seed) {
  lsm::Rng rng(seed);
  lsm::FeatureMatrix x(n, p);
  for (auto& v : x.data) v = rng.normal();
  return x;
}

inline lsm::Grid random_grid(std::size_t nrows, std::size_t ncols, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  lsm::GridHeader h;
  h.nrows = nrows;
  h.ncols = ncols;
  lsm::Rng rng(seed);
  std::vector<double> v(h.cell_count());
  for (auto& x : v) x = rng.uniform(lo, hi);
  return lsm::Grid(h, std::move(v));
}

inline lsm::Grid constant_grid(std::size_t nrows, std::size_t ncols, double value, double cellsize = 30.0) {
  lsm::GridHeader h;
  h.nrows = nrows;
  h.ncols = ncols;
  h.cellsize = cellsize;
  return lsm::Grid(h, value);
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("lsm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

} // namespace testing
