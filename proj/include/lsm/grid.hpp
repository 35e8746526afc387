#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lsm {

inline constexpr double kAlignTolerance = 1e-9;
inline constexpr double kDefaultNodata = -9999.0;

/// Georeferencing of a north-up raster. Coordinates are projected meters.
struct GridHeader {
  std::size_t ncols = 1;
  std::size_t nrows = 1;
  double xll = 0.0;
  double yll = 0.0;
  double cellsize = 30.0;
  double nodata = kDefaultNodata;

  std::size_t cell_count() const { return ncols * nrows; }
  double ytop() const { return yll + static_cast<double>(nrows) * cellsize; }
  double xright() const { return xll + static_cast<double>(ncols) * cellsize; }
  double center_x(std::size_t col) const { return xll + (static_cast<double>(col) + 0.5) * cellsize; }
  double center_y(std::size_t row) const { return ytop() - (static_cast<double>(row) + 0.5) * cellsize; }

  /// Row/col containing (x, y); nullopt outside the extent.
  std::optional<std::pair<std::size_t, std::size_t>> locate(double x, double y) const;

  void validate() const;
};

/// Name of the first header field that differs beyond kAlignTolerance, or
/// nullopt when the headers are aligned.
std::optional<std::string> first_misaligned_field(const GridHeader& a, const GridHeader& b);
inline bool aligned(const GridHeader& a, const GridHeader& b) { return !first_misaligned_field(a, b); }

class Grid {
public:
  Grid() = default;
  explicit Grid(GridHeader header);  // filled with nodata
  Grid(GridHeader header, double fill);
  Grid(GridHeader header, std::vector<double> values);

  const GridHeader& header() const { return header_; }
  std::size_t nrows() const { return header_.nrows; }
  std::size_t ncols() const { return header_.ncols; }
  double nodata() const { return header_.nodata; }

  double at(std::size_t row, std::size_t col) const { return values_[row * header_.ncols + col]; }
  double& at(std::size_t row, std::size_t col) { return values_[row * header_.ncols + col]; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  bool is_valid_value(double v) const { return std::isfinite(v) && v != header_.nodata; }
  bool valid(std::size_t row, std::size_t col) const { return is_valid_value(at(row, col)); }
  std::size_t valid_count() const;

private:
  GridHeader header_;
  std::vector<double> values_;
};

/// Aligned bands sharing one header. A cell is valid iff valid in every band.
class GridStack {
public:
  GridStack() = default;
  const GridHeader& header() const { return header_; }
  std::size_t band_count() const { return bands_.size(); }
  const std::vector<std::string>& band_names() const { return names_; }
  const std::vector<Grid>& bands() const { return bands_; }
  const Grid& band(std::size_t i) const { return bands_[i]; }

  bool valid(std::size_t row, std::size_t col) const;
  std::size_t valid_count() const;
  /// Grid holding 1 at valid stack cells and nodata elsewhere.
  Grid validity_mask() const;

private:
  friend GridStack stack(std::vector<Grid> grids, std::vector<std::string> names);
  GridHeader header_;
  std::vector<std::string> names_;
  std::vector<Grid> bands_;
};

enum class ResampleMethod { nearest, bilinear };

Grid read_ascii_grid(const std::filesystem::path& path);
Grid parse_ascii_grid(const std::string& text, const std::string& source = "<memory>");
void write_ascii_grid(const Grid& grid, const std::filesystem::path& path);
std::string format_ascii_grid(const Grid& grid);

Grid resample(const Grid& src, const GridHeader& target, ResampleMethod method);
GridStack stack(std::vector<Grid> grids, std::vector<std::string> names);

/// Band names emitted by derive_terrain, in order.
inline const std::vector<std::string>& terrain_band_names() {
  static const std::vector<std::string> names{"elevation", "slope", "aspect", "curvature", "tri", "spi", "twi"};
  return names;
}
GridStack derive_terrain(const Grid& dem);

GridStack apply_mask(const GridStack& input, const Grid& mask);

} // namespace lsm
