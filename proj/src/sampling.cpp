#include "lsm/sampling.hpp"

#include "lsm/common.hpp"
#include "lsm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <json.hpp>
#include <sstream>

namespace lsm {

std::string LoadReport::to_json() const {
  nlohmann::ordered_json j;
  j["loaded"] = loaded;
  j["dropped_outside"] = dropped_outside;
  j["dropped_invalid"] = dropped_invalid;
  j["merged_duplicates"] = merged_duplicates;
  return j.dump(2) + "\n";
}

std::vector<InventoryPoint> SampleSet::partition(Partition which) const {
  std::vector<InventoryPoint> out;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (split[i] == which) out.push_back(points[i]);
  return out;
}

InventoryLoad parse_inventory(const std::string& csv_text, const GridStack& stack) {
  std::istringstream in(csv_text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    header = split_csv_line(line);
  }
  if (header.empty()) throw ValidationError("inventory: empty file");
  const auto xi = std::find(header.begin(), header.end(), "x");
  const auto yi = std::find(header.begin(), header.end(), "y");
  if (xi == header.end() || yi == header.end()) throw ValidationError("inventory: missing x/y columns in header");
  const auto xcol = static_cast<std::size_t>(xi - header.begin());
  const auto ycol = static_cast<std::size_t>(yi - header.begin());

  InventoryLoad result;
  // cell index -> (first point, count), in first-seen order
  std::map<std::size_t, std::size_t> cell_slot;
  std::vector<std::pair<InventoryPoint, std::size_t>> kept;
  const auto& h = stack.header();
  std::size_t rows_read = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_csv_line(line);
    const std::string where = "inventory:" + std::to_string(line_no);
    if (fields.size() <= std::max(xcol, ycol)) throw ValidationError(where + ": missing x/y value");
    const double x = parse_real(fields[xcol], where);
    const double y = parse_real(fields[ycol], where);
    ++rows_read;
    const auto cell = h.locate(x, y);
    if (!cell) {
      ++result.report.dropped_outside;
      continue;
    }
    if (!stack.valid(cell->first, cell->second)) {
      ++result.report.dropped_invalid;
      continue;
    }
    const std::size_t k = cell->first * h.ncols + cell->second;
    auto [it, inserted] = cell_slot.emplace(k, kept.size());
    if (inserted) {
      kept.push_back({InventoryPoint{x, y, 1}, 1});
    } else {
      auto& slot = kept[it->second];
      slot.first.x = h.center_x(cell->second);
      slot.first.y = h.center_y(cell->first);
      ++slot.second;
      ++result.report.merged_duplicates;
    }
  }
  if (rows_read == 0) throw ValidationError("inventory: empty file");
  for (auto& [p, n] : kept) result.points.push_back(p);
  result.report.loaded = result.points.size();
  return result;
}

InventoryLoad load_inventory(const std::filesystem::path& path, const GridStack& stack) {
  return parse_inventory(read_text_file(path), stack);
}

std::vector<InventoryPoint> sample_negatives(const std::vector<InventoryPoint>& landslides, const GridStack& stack,
                                             double buffer_m, std::uint64_t seed) {
  if (landslides.empty()) throw ValidationError("sample_negatives: no landslides given");
  const auto& h = stack.header();
  std::vector<char> excluded(h.cell_count(), 0);
  const auto reach = static_cast<long>(std::ceil(buffer_m / h.cellsize)) + 1;

  for (const auto& p : landslides) {
    const auto cell = h.locate(p.x, p.y);
    if (!cell) throw ValidationError("sample_negatives: landslide outside raster");
    const double cx = h.center_x(cell->second), cy = h.center_y(cell->first);
    const long r0 = static_cast<long>(cell->first), c0 = static_cast<long>(cell->second);
    for (long r = std::max(0L, r0 - reach); r <= std::min<long>(static_cast<long>(h.nrows) - 1, r0 + reach); ++r) {
      for (long c = std::max(0L, c0 - reach); c <= std::min<long>(static_cast<long>(h.ncols) - 1, c0 + reach); ++c) {
        const double dx = h.center_x(static_cast<std::size_t>(c)) - cx;
        const double dy = h.center_y(static_cast<std::size_t>(r)) - cy;
        if (std::hypot(dx, dy) <= buffer_m || (r == r0 && c == c0))
          excluded[static_cast<std::size_t>(r) * h.ncols + static_cast<std::size_t>(c)] = 1;
      }
    }
  }

  std::vector<std::size_t> eligible;
  for (std::size_t r = 0; r < h.nrows; ++r)
    for (std::size_t c = 0; c < h.ncols; ++c) {
      const std::size_t k = r * h.ncols + c;
      if (!excluded[k] && stack.valid(r, c)) eligible.push_back(k);
    }
  if (eligible.size() < landslides.size())
    throw ValidationError("sample_negatives: only " + std::to_string(eligible.size()) +
                          " eligible cells for " + std::to_string(landslides.size()) + " negatives");

  // Partial Fisher-Yates: the first n slots are a uniform draw without replacement.
  Rng rng(seed);
  const std::size_t n = landslides.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.index(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }
  std::vector<InventoryPoint> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = eligible[i];
    out.push_back({h.center_x(k % h.ncols), h.center_y(k / h.ncols), 0});
  }
  return out;
}

SampleSet split(const std::vector<InventoryPoint>& points, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ValidationError("split: train_fraction must be in (0, 1]");
  std::vector<std::size_t> by_label[2];
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int l = points[i].label;
    if (l != 0 && l != 1) throw ValidationError("split: labels must be 0 or 1");
    by_label[l].push_back(i);
  }
  if (by_label[0].size() < 2 || by_label[1].size() < 2)
    throw ValidationError("split: need at least 2 points per class");

  SampleSet s;
  s.points = points;
  s.split.assign(points.size(), Partition::validation);
  s.seed = seed;
  Rng rng(seed);
  for (auto& idx : by_label) {
    rng.shuffle(std::span<std::size_t>(idx));
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
    if (n_train == 0) throw ValidationError("split: empty training partition");
    if (n_train >= idx.size()) throw ValidationError("split: empty validation partition");
    for (std::size_t i = 0; i < n_train; ++i) s.split[idx[i]] = Partition::train;
  }
  return s;
}

namespace {

std::pair<std::size_t, std::size_t> valid_cell(const GridStack& stack, const InventoryPoint& p) {
  const auto cell = stack.header().locate(p.x, p.y);
  if (!cell) throw ValidationError("point outside raster");
  if (!stack.valid(cell->first, cell->second)) throw ValidationError("point on invalid cell");
  return *cell;
}

} // namespace

std::vector<double> extract_vector(const GridStack& stack, const InventoryPoint& point) {
  const auto [r, c] = valid_cell(stack, point);
  std::vector<double> v(stack.band_count());
  for (std::size_t b = 0; b < v.size(); ++b) v[b] = stack.band(b).at(r, c);
  return v;
}

bool patch_feasible(const GridStack& stack, std::size_t row, std::size_t col, std::size_t size) {
  const std::size_t half = size / 2;
  const auto& h = stack.header();
  if (row < half || col < half || row + half >= h.nrows || col + half >= h.ncols) return false;
  for (std::size_t r = row - half; r <= row + half; ++r)
    for (std::size_t c = col - half; c <= col + half; ++c)
      if (!stack.valid(r, c)) return false;
  return true;
}

PatchTensor extract_patch(const GridStack& stack, const InventoryPoint& point, std::size_t size) {
  if (size % 2 == 0) throw ValidationError("extract_patch: window size must be odd");
  const auto cell = stack.header().locate(point.x, point.y);
  if (!cell) throw ValidationError("extract_patch: point outside raster");
  const auto [row, col] = *cell;
  if (!patch_feasible(stack, row, col, size))
    throw ValidationError("extract_patch: window crosses boundary or contains nodata");
  const std::size_t half = size / 2;
  PatchTensor p{size, stack.band_count(), std::vector<double>(size * size * stack.band_count())};
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c)
      for (std::size_t b = 0; b < p.bands; ++b)
        p.data[(r * size + c) * p.bands + b] = stack.band(b).at(row - half + r, col - half + c);
  return p;
}

Grid window_feasibility(const GridStack& stack, std::size_t size) {
  const auto& h = stack.header();
  Grid out(h);
  const auto valid = stack.validity_mask();
  // Separable running counts of invalid cells.
  const std::size_t half = size / 2;
  std::vector<int> bad(h.cell_count());
  for (std::size_t k = 0; k < bad.size(); ++k) bad[k] = valid.is_valid_value(valid.values()[k]) ? 0 : 1;
  std::vector<int> rowsum(h.cell_count(), 0);
  for (std::size_t r = 0; r < h.nrows; ++r)
    for (std::size_t c = half; c + half < h.ncols; ++c) {
      int s = 0;
      for (std::size_t cc = c - half; cc <= c + half; ++cc) s += bad[r * h.ncols + cc];
      rowsum[r * h.ncols + c] = s;
    }
  for (std::size_t r = half; r + half < h.nrows; ++r)
    for (std::size_t c = half; c + half < h.ncols; ++c) {
      int s = 0;
      for (std::size_t rr = r - half; rr <= r + half; ++rr) s += rowsum[rr * h.ncols + c];
      if (s == 0) out.at(r, c) = 1.0;
    }
  return out;
}

} // namespace lsm
