#include "lsm/grid.hpp"

#include "lsm/common.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace lsm {

std::optional<std::pair<std::size_t, std::size_t>> GridHeader::locate(double x, double y) const {
  const double cf = std::floor((x - xll) / cellsize);
  const double rf = std::floor((ytop() - y) / cellsize);
  if (!(cf >= 0.0) || !(rf >= 0.0)) return std::nullopt;
  if (cf >= static_cast<double>(ncols) || rf >= static_cast<double>(nrows)) return std::nullopt;
  return std::pair{static_cast<std::size_t>(rf), static_cast<std::size_t>(cf)};
}

void GridHeader::validate() const {
  if (ncols < 1 || nrows < 1) throw ValidationError("grid header: ncols and nrows must be >= 1");
  if (!(cellsize > 0.0) || !std::isfinite(cellsize)) throw ValidationError("grid header: cellsize must be > 0");
  if (!std::isfinite(xll) || !std::isfinite(yll)) throw ValidationError("grid header: corner must be finite");
}

std::optional<std::string> first_misaligned_field(const GridHeader& a, const GridHeader& b) {
  if (a.ncols != b.ncols) return "ncols";
  if (a.nrows != b.nrows) return "nrows";
  auto differs = [](double u, double v) {
    if (std::isnan(u) || std::isnan(v)) return std::isnan(u) != std::isnan(v);
    return std::abs(u - v) > kAlignTolerance;
  };
  if (differs(a.xll, b.xll)) return "xllcorner";
  if (differs(a.yll, b.yll)) return "yllcorner";
  if (differs(a.cellsize, b.cellsize)) return "cellsize";
  if (differs(a.nodata, b.nodata)) return "NODATA_value";
  return std::nullopt;
}

Grid::Grid(GridHeader header) : Grid(header, header.nodata) {}

Grid::Grid(GridHeader header, double fill) : header_(header), values_(header.cell_count(), fill) {
  header_.validate();
}

Grid::Grid(GridHeader header, std::vector<double> values) : header_(header), values_(std::move(values)) {
  header_.validate();
  if (values_.size() != header_.cell_count())
    throw ValidationError("grid: expected " + std::to_string(header_.cell_count()) + " values, found " +
                          std::to_string(values_.size()));
}

std::size_t Grid::valid_count() const {
  return static_cast<std::size_t>(
      std::count_if(values_.begin(), values_.end(), [this](double v) { return is_valid_value(v); }));
}

bool GridStack::valid(std::size_t row, std::size_t col) const {
  for (const auto& b : bands_)
    if (!b.valid(row, col)) return false;
  return true;
}

std::size_t GridStack::valid_count() const {
  std::size_t n = 0;
  for (std::size_t r = 0; r < header_.nrows; ++r)
    for (std::size_t c = 0; c < header_.ncols; ++c) n += valid(r, c) ? 1 : 0;
  return n;
}

Grid GridStack::validity_mask() const {
  Grid mask(header_);
  for (std::size_t r = 0; r < header_.nrows; ++r)
    for (std::size_t c = 0; c < header_.ncols; ++c)
      if (valid(r, c)) mask.at(r, c) = 1.0;
  return mask;
}

// ---------------------------------------------------------------------------
// ESRI ASCII grid

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

std::size_t parse_count(std::string_view token, const std::string& where) {
  const double v = parse_real(token, where);
  if (v < 1.0 || v != std::floor(v)) throw ValidationError(where + ": expected a positive integer");
  return static_cast<std::size_t>(v);
}

} // namespace

Grid parse_ascii_grid(const std::string& text, const std::string& source) {
  GridHeader h;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;

  while (seen.size() < 6) {
    if (!std::getline(in, line)) throw ValidationError(source + ": truncated header after line " + std::to_string(line_no));
    ++line_no;
    auto tokens = split_whitespace(line);
    if (tokens.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (tokens.size() != 2) throw ValidationError(where + ": malformed header line '" + line + "'");
    const std::string key = lower(tokens[0]);
    if (!seen.insert(key).second) throw ValidationError(where + ": duplicate header key '" + key + "'");
    if (key == "ncols") h.ncols = parse_count(tokens[1], where);
    else if (key == "nrows") h.nrows = parse_count(tokens[1], where);
    else if (key == "xllcorner") h.xll = parse_real(tokens[1], where);
    else if (key == "yllcorner") h.yll = parse_real(tokens[1], where);
    else if (key == "cellsize") h.cellsize = parse_real(tokens[1], where);
    else if (key == "nodata_value") h.nodata = parse_real(tokens[1], where);
    else throw ValidationError(where + ": malformed header key '" + std::string(tokens[0]) + "'");
  }
  h.validate();

  std::vector<double> values;
  values.reserve(h.cell_count());
  while (std::getline(in, line)) {
    ++line_no;
    for (auto tok : split_whitespace(line)) {
      if (values.size() == h.cell_count())
        throw ValidationError(source + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(h.cell_count()) + " values, found more");
      values.push_back(parse_real(tok, source + ":" + std::to_string(line_no)));
    }
  }
  if (values.size() != h.cell_count())
    throw ValidationError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(h.cell_count()) +
                          " values, found " + std::to_string(values.size()));
  return Grid(h, std::move(values));
}

Grid read_ascii_grid(const std::filesystem::path& path) {
  return parse_ascii_grid(read_text_file(path), path.string());
}

std::string format_ascii_grid(const Grid& grid) {
  const auto& h = grid.header();
  std::string out;
  out.reserve(h.cell_count() * 12 + 160);
  out += "ncols " + std::to_string(h.ncols) + "\n";
  out += "nrows " + std::to_string(h.nrows) + "\n";
  out += "xllcorner " + format_real(h.xll) + "\n";
  out += "yllcorner " + format_real(h.yll) + "\n";
  out += "cellsize " + format_real(h.cellsize) + "\n";
  const std::string nodata = format_real(h.nodata);
  out += "NODATA_value " + nodata + "\n";
  for (std::size_t r = 0; r < h.nrows; ++r) {
    for (std::size_t c = 0; c < h.ncols; ++c) {
      if (c) out += ' ';
      const double v = grid.at(r, c);
      out += grid.is_valid_value(v) ? format_real(v) : nodata;
    }
    out += '\n';
  }
  return out;
}

void write_ascii_grid(const Grid& grid, const std::filesystem::path& path) {
  write_text_file(path, format_ascii_grid(grid));
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

// Fractional index snapped to the nearest integer when within round-off.
double snapped(double f) {
  const double r = std::round(f);
  return std::abs(f - r) < 1e-9 ? r : f;
}

} // namespace

Grid resample(const Grid& src, const GridHeader& target, ResampleMethod method) {
  target.validate();
  const auto& sh = src.header();
  const bool overlap = target.xll < sh.xright() && target.xright() > sh.xll && target.yll < sh.ytop() &&
                       target.ytop() > sh.yll;
  if (!overlap) throw ValidationError("resample: template has zero overlap with source extent");

  Grid out(target);
  const double src_nodata_out = target.nodata;
  const auto ncols = static_cast<double>(sh.ncols);
  const auto nrows = static_cast<double>(sh.nrows);

  for (std::size_t r = 0; r < target.nrows; ++r) {
    const double y = target.center_y(r);
    const double rf = snapped((sh.ytop() - y) / sh.cellsize - 0.5);
    for (std::size_t c = 0; c < target.ncols; ++c) {
      const double x = target.center_x(c);
      const double cf = snapped((x - sh.xll) / sh.cellsize - 0.5);
      double value = src_nodata_out;

      if (method == ResampleMethod::nearest) {
        const double ri = std::floor(rf + 0.5);
        const double ci = std::floor(cf + 0.5);
        if (ri >= 0 && ci >= 0 && ri < nrows && ci < ncols) {
          const double v = src.at(static_cast<std::size_t>(ri), static_cast<std::size_t>(ci));
          if (src.is_valid_value(v)) value = v;
        }
      } else {
        const double r0 = std::floor(rf);
        const double c0 = std::floor(cf);
        const double fr = rf - r0;
        const double fc = cf - c0;
        const std::array<double, 2> wr{1.0 - fr, fr};
        const std::array<double, 2> wc{1.0 - fc, fc};
        double acc = 0.0;
        bool ok = true;
        for (int dr = 0; dr < 2 && ok; ++dr) {
          for (int dc = 0; dc < 2 && ok; ++dc) {
            const double w = wr[dr] * wc[dc];
            if (w == 0.0) continue;
            const double rr = r0 + dr;
            const double cc = c0 + dc;
            if (rr < 0 || cc < 0 || rr >= nrows || cc >= ncols) {
              ok = false;
              break;
            }
            const double v = src.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
            if (!src.is_valid_value(v)) {
              ok = false;
              break;
            }
            acc += w * v;
          }
        }
        if (ok) value = acc;
      }
      out.at(r, c) = value;
    }
  }
  return out;
}

GridStack stack(std::vector<Grid> grids, std::vector<std::string> names) {
  if (grids.empty()) throw ValidationError("stack: no grids given");
  if (grids.size() != names.size())
    throw ValidationError("stack: " + std::to_string(grids.size()) + " grids but " + std::to_string(names.size()) +
                          " names");
  std::set<std::string> unique;
  for (const auto& n : names)
    if (!unique.insert(n).second) throw ValidationError("stack: duplicate band name '" + n + "'");
  for (std::size_t i = 1; i < grids.size(); ++i) {
    if (auto field = first_misaligned_field(grids[0].header(), grids[i].header()))
      throw ValidationError("stack: band '" + names[i] + "' misaligned with '" + names[0] + "' in " + *field);
  }
  GridStack s;
  s.header_ = grids[0].header();
  s.names_ = std::move(names);
  s.bands_ = std::move(grids);
  return s;
}

// ---------------------------------------------------------------------------
// Terrain derivatives

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;
constexpr double kMinTanSlope = 1e-6;

// 3x3 window a b c / d e f / g h i, row 0 north.
struct Window {
  double a, b, c, d, e, f, g, h, i;
};

// D8 contributing area per unit contour width (m), computed over every valid
// DEM cell; flow goes to the steepest strictly-lower valid neighbor.
std::vector<double> specific_catchment_area(const Grid& dem) {
  const auto& hd = dem.header();
  const std::size_t nr = hd.nrows, nc = hd.ncols;
  std::vector<std::size_t> order;
  order.reserve(hd.cell_count());
  for (std::size_t k = 0; k < hd.cell_count(); ++k)
    if (dem.is_valid_value(dem.values()[k])) order.push_back(k);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return dem.values()[x] > dem.values()[y]; });

  std::vector<double> cells(hd.cell_count(), 0.0);
  for (auto k : order) cells[k] = 1.0;
  static constexpr std::array<int, 8> dr{-1, -1, -1, 0, 0, 1, 1, 1};
  static constexpr std::array<int, 8> dc{-1, 0, 1, -1, 1, -1, 0, 1};
  for (auto k : order) {
    const auto r = static_cast<long>(k / nc), c = static_cast<long>(k % nc);
    const double z = dem.values()[k];
    double best = 0.0;
    long target = -1;
    for (int n = 0; n < 8; ++n) {
      const long rr = r + dr[n], cc = c + dc[n];
      if (rr < 0 || cc < 0 || rr >= static_cast<long>(nr) || cc >= static_cast<long>(nc)) continue;
      const double zn = dem.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
      if (!dem.is_valid_value(zn)) continue;
      const double dist = (dr[n] != 0 && dc[n] != 0) ? std::numbers::sqrt2 : 1.0;
      const double drop = (z - zn) / dist;
      if (drop > best) {
        best = drop;
        target = rr * static_cast<long>(nc) + cc;
      }
    }
    if (target >= 0) cells[static_cast<std::size_t>(target)] += cells[k];
  }
  for (auto& v : cells) v *= hd.cellsize;  // cells * area / contour width
  return cells;
}

} // namespace

GridStack derive_terrain(const Grid& dem) {
  const auto& hd = dem.header();
  if (hd.nrows < 3 || hd.ncols < 3) throw ValidationError("derive_terrain: DEM must be at least 3x3");
  const double L = hd.cellsize;
  const auto area = specific_catchment_area(dem);

  std::vector<Grid> out(7, Grid(hd));
  for (std::size_t r = 1; r + 1 < hd.nrows; ++r) {
    for (std::size_t c = 1; c + 1 < hd.ncols; ++c) {
      bool ok = true;
      for (std::size_t rr = r - 1; rr <= r + 1 && ok; ++rr)
        for (std::size_t cc = c - 1; cc <= c + 1; ++cc)
          if (!dem.valid(rr, cc)) {
            ok = false;
            break;
          }
      if (!ok) continue;
      const Window w{dem.at(r - 1, c - 1), dem.at(r - 1, c), dem.at(r - 1, c + 1),
                     dem.at(r, c - 1),     dem.at(r, c),     dem.at(r, c + 1),
                     dem.at(r + 1, c - 1), dem.at(r + 1, c), dem.at(r + 1, c + 1)};

      // Horn gradient; x east, y north.
      const double dzdx = ((w.c + 2 * w.f + w.i) - (w.a + 2 * w.d + w.g)) / (8 * L);
      const double dzdy = ((w.a + 2 * w.b + w.c) - (w.g + 2 * w.h + w.i)) / (8 * L);
      const double grad = std::hypot(dzdx, dzdy);
      const double slope_deg = std::atan(grad) * kRadToDeg;

      double aspect = hd.nodata;
      if (grad > 0.0) {
        aspect = std::atan2(-dzdx, -dzdy) * kRadToDeg;
        if (aspect < 0.0) aspect += 360.0;
        if (aspect >= 360.0) aspect -= 360.0;
      }

      // Zevenbergen-Thorne quadratic surface.
      const double D = ((w.d + w.f) / 2 - w.e) / (L * L);
      const double E = ((w.b + w.h) / 2 - w.e) / (L * L);
      const double F = (-w.a + w.c + w.g - w.i) / (4 * L * L);
      const double G = (w.f - w.d) / (2 * L);
      const double H = (w.b - w.h) / (2 * L);
      const double gh = G * G + H * H;
      const double profile = gh > 0.0 ? -2.0 * (D * G * G + E * H * H + F * G * H) / gh : 0.0;

      const double tri = (std::abs(w.a - w.e) + std::abs(w.b - w.e) + std::abs(w.c - w.e) + std::abs(w.d - w.e) +
                          std::abs(w.f - w.e) + std::abs(w.g - w.e) + std::abs(w.h - w.e) + std::abs(w.i - w.e)) /
                         8.0;

      const double tan_beta = std::max(grad, kMinTanSlope);
      const double a = area[r * hd.ncols + c];

      out[0].at(r, c) = w.e;
      out[1].at(r, c) = slope_deg;
      out[2].at(r, c) = aspect;
      out[3].at(r, c) = profile;
      out[4].at(r, c) = tri;
      out[5].at(r, c) = a * tan_beta;
      out[6].at(r, c) = std::log(a / tan_beta);
    }
  }
  return stack(std::move(out), terrain_band_names());
}

GridStack apply_mask(const GridStack& input, const Grid& mask) {
  if (auto field = first_misaligned_field(input.header(), mask.header()))
    throw ValidationError("apply_mask: mask misaligned with stack in " + *field);
  std::vector<Grid> bands = input.bands();
  const auto& h = input.header();
  for (std::size_t k = 0; k < h.cell_count(); ++k) {
    const double m = mask.values()[k];
    if (!mask.is_valid_value(m) || m == 0.0)
      for (auto& b : bands) b.values()[k] = h.nodata;
  }
  return stack(std::move(bands), input.band_names());
}

} // namespace lsm
