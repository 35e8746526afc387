#include "lsm/map.hpp"

#include "lsm/common.hpp"
#include "lsm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <thread>

namespace lsm {

GridStack model_ready_stack(const nn::Checkpoint& ckpt, const GridStack& raw, const PcaModel* reducer) {
  GridStack rep = raw;
  if (!ckpt.pca_hash.empty()) {
    if (!reducer) throw ValidationError("infer_raster: checkpoint references a PCA model but none was given");
    if (reducer->hash() != ckpt.pca_hash)
      throw ValidationError("infer_raster: PCA model hash " + reducer->hash() + " does not match checkpoint " +
                            ckpt.pca_hash);
    rep = pca_transform_stack(raw, *reducer);
  }
  const std::size_t bands = ckpt.spec.input_shape.back();
  if (rep.band_count() != bands)
    throw ValidationError("infer_raster: band-count mismatch, model expects " + std::to_string(bands) + ", stack has " +
                          std::to_string(rep.band_count()));
  if (ckpt.standardizer) rep = standardize_stack(rep, *ckpt.standardizer);
  return rep;
}

std::optional<std::vector<double>> model_input(const GridStack& ready, const nn::ModelSpec& spec, std::size_t row,
                                               std::size_t col) {
  const std::size_t p = ready.band_count();
  if (spec.input_shape.size() == 1) {
    if (!ready.valid(row, col)) return std::nullopt;
    std::vector<double> v(p);
    for (std::size_t b = 0; b < p; ++b) v[b] = ready.band(b).at(row, col);
    return v;
  }
  const std::size_t size = spec.input_shape[0];
  if (!patch_feasible(ready, row, col, size)) return std::nullopt;
  const std::size_t half = size / 2;
  std::vector<double> v(size * size * p);
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c)
      for (std::size_t b = 0; b < p; ++b) v[(r * size + c) * p + b] = ready.band(b).at(row - half + r, col - half + c);
  return v;
}

Grid infer_raster(const nn::Checkpoint& ckpt, const GridStack& raw, const PcaModel* reducer, unsigned threads) {
  const GridStack ready = model_ready_stack(ckpt, raw, reducer);
  const auto& h = ready.header();
  Grid out(h);
  auto run_rows = [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = 0; c < h.ncols; ++c)
        if (auto x = model_input(ready, ckpt.spec, r, c)) out.at(r, c) = nn::forward(ckpt.spec, ckpt.weights, *x);
  };
  threads = std::max(1u, threads);
  if (threads == 1) {
    run_rows(0, h.nrows);
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t tile = (h.nrows + threads - 1) / threads;
  for (std::size_t r0 = 0; r0 < h.nrows; r0 += tile) pool.emplace_back(run_rows, r0, std::min(h.nrows, r0 + tile));
  for (auto& t : pool) t.join();
  return out;
}

// ---------------------------------------------------------------------------
// Natural breaks

std::string JenksResult::to_json() const {
  nlohmann::ordered_json j;
  j["breaks"] = breaks;
  j["cap"] = cap;
  j["seed"] = seed;
  j["subsample_size"] = sample_size;
  return j.dump(2) + "\n";
}

int class_of(double value, std::span<const double> breaks) {
  // First break >= value; values above every break land in the top class.
  const auto it = std::lower_bound(breaks.begin(), breaks.end(), value);
  return static_cast<int>(it - breaks.begin()) + 1;
}

double within_class_ssd(std::span<const double> values, std::span<const double> breaks) {
  const std::size_t k = breaks.size() + 1;
  std::vector<double> sum(k, 0.0), cnt(k, 0.0);
  for (double v : values) {
    const auto c = static_cast<std::size_t>(class_of(v, breaks) - 1);
    sum[c] += v;
    cnt[c] += 1.0;
  }
  double ssd = 0.0;
  for (double v : values) {
    const auto c = static_cast<std::size_t>(class_of(v, breaks) - 1);
    const double d = v - sum[c] / cnt[c];
    ssd += d * d;
  }
  return ssd;
}

JenksResult jenks_breaks(std::span<const double> values, std::size_t n_classes, std::size_t cap, std::uint64_t seed) {
  if (n_classes < 1) throw ValidationError("jenks_breaks: n_classes must be >= 1");
  JenksResult res;
  res.cap = cap;
  res.seed = seed;
  std::vector<double> v(values.begin(), values.end());
  if (cap > 0 && v.size() > cap) {
    Rng rng(seed);
    for (std::size_t i = 0; i < cap; ++i) std::swap(v[i], v[i + rng.index(v.size() - i)]);
    v.resize(cap);
  }
  res.sample_size = v.size();
  std::sort(v.begin(), v.end());

  // Distinct values with multiplicities; equal values never straddle a break.
  std::vector<double> u, w;
  for (double x : v) {
    if (u.empty() || x != u.back()) {
      u.push_back(x);
      w.push_back(1.0);
    } else {
      w.back() += 1.0;
    }
  }
  const std::size_t m = u.size();
  if (m < n_classes)
    throw ValidationError("jenks_breaks: " + std::to_string(m) + " distinct values for " + std::to_string(n_classes) +
                          " classes");
  if (n_classes == 1) return res;

  std::vector<double> W(m + 1, 0.0), S(m + 1, 0.0), Q(m + 1, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    W[i + 1] = W[i] + w[i];
    S[i + 1] = S[i] + w[i] * u[i];
    Q[i + 1] = Q[i] + w[i] * u[i] * u[i];
  }
  // Cost of grouping distinct values [i, j) together.
  auto cost = [&](std::size_t i, std::size_t j) {
    const double ww = W[j] - W[i], s = S[j] - S[i];
    return std::max(0.0, (Q[j] - Q[i]) - s * s / ww);
  };

  const double inf = std::numeric_limits<double>::infinity();
  // best[c][j]: minimal cost of splitting the first j distinct values into c+1 classes.
  std::vector<std::vector<double>> best(n_classes, std::vector<double>(m + 1, inf));
  std::vector<std::vector<std::size_t>> from(n_classes, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t j = 1; j <= m; ++j) best[0][j] = cost(0, j);
  for (std::size_t c = 1; c < n_classes; ++c) {
    for (std::size_t j = c + 1; j <= m; ++j) {
      double b = inf;
      std::size_t arg = c;
      for (std::size_t i = c; i < j; ++i) {
        const double val = best[c - 1][i] + cost(i, j);
        if (val < b) {
          b = val;
          arg = i;
        }
      }
      best[c][j] = b;
      from[c][j] = arg;
    }
  }
  std::vector<std::size_t> ends(n_classes);
  std::size_t j = m;
  for (std::size_t c = n_classes - 1; c > 0; --c) {
    const std::size_t i = from[c][j];
    ends[c - 1] = i;
    j = i;
  }
  for (std::size_t c = 0; c + 1 < n_classes; ++c) res.breaks.push_back(u[ends[c] - 1]);
  return res;
}

Grid classify(const Grid& scores, std::span<const double> breaks) {
  for (std::size_t i = 1; i < breaks.size(); ++i)
    if (!(breaks[i - 1] < breaks[i])) throw ValidationError("classify: breaks must be strictly ascending");
  Grid out(scores.header());
  for (std::size_t k = 0; k < scores.values().size(); ++k) {
    const double v = scores.values()[k];
    if (scores.is_valid_value(v)) out.values()[k] = class_of(v, breaks);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Occupancy

OccupancyReport occupancy(const Grid& classes, const std::vector<InventoryPoint>& landslides, std::size_t n_classes) {
  OccupancyReport rep;
  rep.counts.assign(n_classes, 0);
  rep.percent.assign(n_classes, 0.0);
  rep.total = landslides.size();
  for (const auto& p : landslides) {
    const auto cell = classes.header().locate(p.x, p.y);
    if (!cell || !classes.valid(cell->first, cell->second)) {
      ++rep.unclassified;
      continue;
    }
    const auto c = static_cast<long>(classes.at(cell->first, cell->second));
    if (c < 1 || c > static_cast<long>(n_classes)) {
      ++rep.unclassified;
      continue;
    }
    ++rep.counts[static_cast<std::size_t>(c - 1)];
  }
  const std::size_t classified = rep.total - rep.unclassified;
  if (classified > 0)
    for (std::size_t c = 0; c < n_classes; ++c)
      rep.percent[c] = 100.0 * static_cast<double>(rep.counts[c]) / static_cast<double>(classified);
  return rep;
}

namespace {

const char* class_label(std::size_t c, std::size_t n) {
  static const char* five[] = {"very_low", "low", "moderate", "high", "very_high"};
  return n == 5 && c < 5 ? five[c] : "";
}

} // namespace

std::string OccupancyReport::to_json() const {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < counts.size(); ++c)
    arr.push_back({{"class", c + 1}, {"label", class_label(c, counts.size())}, {"count", counts[c]}, {"percent", percent[c]}});
  nlohmann::ordered_json j;
  j["classes"] = arr;
  j["unclassified"] = unclassified;
  j["total"] = total;
  return j.dump(2) + "\n";
}

std::string OccupancyReport::to_csv() const {
  std::string out = "class,count,percent\n";
  for (std::size_t c = 0; c < counts.size(); ++c)
    out += std::to_string(c + 1) + "," + std::to_string(counts[c]) + "," + format_real(percent[c]) + "\n";
  return out;
}

SusceptibilityMap build_map(const Grid& scores, std::size_t n_classes, std::size_t cap, std::uint64_t seed) {
  std::vector<double> vals;
  for (double v : scores.values())
    if (scores.is_valid_value(v)) vals.push_back(v);
  SusceptibilityMap m;
  m.scores = scores;
  m.jenks = jenks_breaks(vals, n_classes, cap, seed);
  m.classes = classify(scores, m.jenks.breaks);
  return m;
}

} // namespace lsm
