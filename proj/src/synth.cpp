#include "lsm/synth.hpp"

#include "lsm/common.hpp"
#include "lsm/eval.hpp"
#include "lsm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <json.hpp>

namespace lsm {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream) { return splitmix(splitmix(seed) ^ (stream * 0x100000001b3ULL)); }

enum Stream : std::uint64_t {
  kSource = 1000,
  kDem = 1,
  kWeak = 2000,
  kWeakNoise = 3000,
  kMixing = 3,
  kEmbedNoise = 4,
  kWeights = 5,
  kLandslides = 6,
  kFarField = 7,
};

void rescale01(std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo, span = *hi - *lo;
  for (auto& x : v) x = span > 0.0 ? (x - a) / span : 0.0;
}

} // namespace

void SceneConfig::validate() const {
  if (nrows < 2 * edge_margin + 1 || ncols < 2 * edge_margin + 1) throw ValidationError("scene: raster too small for edge margin");
  if (!(cellsize > 0.0)) throw ValidationError("scene: cellsize must be positive");
  if (n_landslides < 2) throw ValidationError("scene: n_landslides must be >= 2");
  if (informative_bands < 1 || informative_bands > total_bands)
    throw ValidationError("scene: need 1 <= informative_bands <= total_bands");
  if (correlation_length < 0.0) throw ValidationError("scene: correlation_length must be >= 0");
  if (noise_level < 0.0) throw ValidationError("scene: noise_level must be >= 0");
  if (embed_bands < 1) throw ValidationError("scene: embed_bands must be >= 1");
}

std::string SceneConfig::to_json() const {
  nlohmann::ordered_json j;
  j["nrows"] = nrows;
  j["ncols"] = ncols;
  j["cellsize"] = cellsize;
  j["xll"] = xll;
  j["yll"] = yll;
  j["seed"] = seed;
  j["n_landslides"] = n_landslides;
  j["informative_bands"] = informative_bands;
  j["total_bands"] = total_bands;
  j["correlation_length"] = correlation_length;
  j["noise_level"] = noise_level;
  j["min_spacing_m"] = min_spacing_m;
  j["edge_margin"] = edge_margin;
  j["embed_bands"] = embed_bands;
  return j.dump(2);
}

SceneConfig SceneConfig::from_json(const std::string& text) {
  SceneConfig c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("scene config: ") + e.what());
  }
  for (const auto& [key, val] : j.items()) {
    try {
      if (key == "nrows") c.nrows = val.get<std::size_t>();
      else if (key == "ncols") c.ncols = val.get<std::size_t>();
      else if (key == "cellsize") c.cellsize = val.get<double>();
      else if (key == "xll") c.xll = val.get<double>();
      else if (key == "yll") c.yll = val.get<double>();
      else if (key == "seed") c.seed = val.get<std::uint64_t>();
      else if (key == "n_landslides") c.n_landslides = val.get<std::size_t>();
      else if (key == "informative_bands") c.informative_bands = val.get<std::size_t>();
      else if (key == "total_bands") c.total_bands = val.get<std::size_t>();
      else if (key == "correlation_length") c.correlation_length = val.get<double>();
      else if (key == "noise_level") c.noise_level = val.get<double>();
      else if (key == "min_spacing_m") c.min_spacing_m = val.get<double>();
      else if (key == "edge_margin") c.edge_margin = val.get<std::size_t>();
      else if (key == "embed_bands") c.embed_bands = val.get<std::size_t>();
      else throw ValidationError("scene config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("scene config: " + key + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

Grid gen_field(std::uint64_t seed, const GridHeader& header, double correlation_length) {
  if (correlation_length < 0.0) throw ValidationError("gen_field: correlation_length must be >= 0");
  Rng rng(seed);
  const std::size_t nr = header.nrows, nc = header.ncols;
  std::vector<double> v(nr * nc);
  for (auto& x : v) x = rng.uniform();
  const auto passes = static_cast<std::size_t>(std::ceil(correlation_length));
  std::vector<double> next(v.size());
  for (std::size_t pass = 0; pass < passes; ++pass) {
    for (std::size_t r = 0; r < nr; ++r)
      for (std::size_t c = 0; c < nc; ++c) {
        double s = 0.0;
        int n = 0;
        for (std::size_t rr = r ? r - 1 : 0; rr <= std::min(nr - 1, r + 1); ++rr)
          for (std::size_t cc = c ? c - 1 : 0; cc <= std::min(nc - 1, c + 1); ++cc) {
            s += v[rr * nc + cc];
            ++n;
          }
        next[r * nc + c] = s / n;
      }
    v.swap(next);
  }
  rescale01(v);
  return Grid(header, std::move(v));
}

double lag1_autocorrelation(const Grid& g) {
  double mean = 0.0;
  for (double v : g.values()) mean += v;
  mean /= static_cast<double>(g.values().size());
  double var = 0.0;
  for (double v : g.values()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(g.values().size());
  double cov = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < g.nrows(); ++r)
    for (std::size_t c = 0; c < g.ncols(); ++c) {
      if (c + 1 < g.ncols()) {
        cov += (g.at(r, c) - mean) * (g.at(r, c + 1) - mean);
        ++n;
      }
      if (r + 1 < g.nrows()) {
        cov += (g.at(r, c) - mean) * (g.at(r + 1, c) - mean);
        ++n;
      }
    }
  return var > 0.0 ? (cov / static_cast<double>(n)) / var : 0.0;
}

namespace {

// One attempt at a scene for a concrete seed; plantedness is measured but not enforced here.
Scene gen_scene_once(const SceneConfig& cfg, std::uint64_t seed) {
  Scene sc;
  sc.config = cfg;
  sc.effective_seed = seed;
  GridHeader h;
  h.nrows = cfg.nrows;
  h.ncols = cfg.ncols;
  h.cellsize = cfg.cellsize;
  h.xll = cfg.xll;
  h.yll = cfg.yll;
  const std::size_t n_cells = h.cell_count();

  std::vector<Grid> sources;
  for (std::size_t i = 0; i < cfg.total_bands; ++i)
    sources.push_back(gen_field(sub_seed(seed, kSource + i), h, cfg.correlation_length));

  // Latent score: positive mix of the informative sources.
  Rng wrng(sub_seed(seed, kWeights));
  sc.latent_weights.resize(cfg.informative_bands);
  for (auto& w : sc.latent_weights) w = wrng.uniform(0.5, 1.5);
  double wsum = 0.0;
  for (double w : sc.latent_weights) wsum += w;
  for (auto& w : sc.latent_weights) w /= wsum;
  std::vector<double> z(n_cells, 0.0);
  for (std::size_t i = 0; i < cfg.informative_bands; ++i)
    for (std::size_t k = 0; k < n_cells; ++k) z[k] += sc.latent_weights[i] * sources[i].values()[k];
  std::vector<double> sorted = z;
  std::sort(sorted.begin(), sorted.end());
  const double z_hi = sorted[static_cast<std::size_t>(0.85 * static_cast<double>(n_cells - 1))];
  const double z_sd = [&] {
    double m = 0.0, s = 0.0;
    for (double v : z) m += v;
    m /= static_cast<double>(n_cells);
    for (double v : z) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(n_cells));
  }();
  const double steep = 12.0 / std::max(z_sd, 1e-12);
  std::vector<double> s(n_cells);
  for (std::size_t k = 0; k < n_cells; ++k) s[k] = 1.0 / (1.0 + std::exp(-steep * (z[k] - z_hi)));
  sc.latent_score = Grid(h, z);
  sc.latent = Grid(h, s);

  // Terrain: DEM partly shaped by the first informative source.
  const Grid base = gen_field(sub_seed(seed, kDem), h, 2.0 * cfg.correlation_length + 2.0);
  std::vector<double> dem(n_cells);
  for (std::size_t k = 0; k < n_cells; ++k) dem[k] = 50.0 + 900.0 * (0.6 * base.values()[k] + 0.4 * sources[0].values()[k]);
  sc.dem = Grid(h, dem);
  const GridStack terrain = derive_terrain(sc.dem);

  // Seven thematic layers: noisy views of the informative sources.
  static const char* thematic[] = {"geology", "dist_faults", "ndvi", "lulc", "rainfall", "dist_roads", "dist_rivers"};
  static const bool categorical[] = {true, false, false, true, false, false, false};
  std::vector<Grid> lcf_bands = terrain.bands();
  std::vector<std::string> lcf_names = terrain.band_names();
  sc.lcf_categorical.assign(lcf_bands.size(), false);
  for (std::size_t t = 0; t < 7; ++t) {
    const Grid& src = sources[t % cfg.informative_bands];
    const Grid noise = gen_field(sub_seed(seed, kWeakNoise + t), h, cfg.correlation_length);
    std::vector<double> v(n_cells);
    for (std::size_t k = 0; k < n_cells; ++k) v[k] = 0.35 * src.values()[k] + 0.65 * noise.values()[k];
    rescale01(v);
    if (categorical[t])
      for (auto& x : v) x = std::min(5.0, 1.0 + std::floor(5.0 * x));
    else
      for (auto& x : v) x = std::round(x * 1e6) / 1e6;
    // Terrain derivatives leave a nodata border ring; mirror it so the stack is consistent.
    for (std::size_t k = 0; k < n_cells; ++k)
      if (!terrain.band(0).is_valid_value(terrain.band(0).values()[k])) v[k] = h.nodata;
    lcf_bands.emplace_back(h, std::move(v));
    lcf_names.emplace_back(thematic[t]);
    sc.lcf_categorical.push_back(categorical[t]);
  }
  sc.lcf = stack(std::move(lcf_bands), std::move(lcf_names));

  // Embedding: standardized sources through a seeded linear map, plus white noise.
  std::vector<std::vector<double>> zsrc(cfg.total_bands);
  for (std::size_t i = 0; i < cfg.total_bands; ++i) {
    const auto v = sources[i].values();
    double m = 0.0, ss = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(n_cells);
    for (double x : v) ss += (x - m) * (x - m);
    const double sd = std::sqrt(ss / static_cast<double>(n_cells));
    zsrc[i].resize(n_cells);
    for (std::size_t k = 0; k < n_cells; ++k) zsrc[i][k] = sd > 0.0 ? (v[k] - m) / sd : 0.0;
  }
  Rng mrng(sub_seed(seed, kMixing));
  sc.mixing.resize(cfg.total_bands * cfg.embed_bands);
  for (auto& m : sc.mixing) m = mrng.normal() / std::sqrt(static_cast<double>(cfg.total_bands));
  Rng nrng(sub_seed(seed, kEmbedNoise));
  std::vector<Grid> eb;
  std::vector<std::string> enames;
  for (std::size_t b = 0; b < cfg.embed_bands; ++b) {
    std::vector<double> v(n_cells, 0.0);
    for (std::size_t i = 0; i < cfg.total_bands; ++i) {
      const double m = sc.mixing[i * cfg.embed_bands + b];
      for (std::size_t k = 0; k < n_cells; ++k) v[k] += m * zsrc[i][k];
    }
    if (cfg.noise_level > 0.0)
      for (auto& x : v) x += cfg.noise_level * nrng.normal();
    eb.emplace_back(h, std::move(v));
    char name[16];
    std::snprintf(name, sizeof name, "A%02zu", b);
    enames.emplace_back(name);
  }
  sc.embed = stack(std::move(eb), std::move(enames));

  // Inventory: weighted draws by s without replacement, min spacing between events.
  std::vector<double> weight(n_cells, 0.0);
  const std::size_t mg = cfg.edge_margin;
  for (std::size_t r = mg; r + mg < h.nrows; ++r)
    for (std::size_t c = mg; c + mg < h.ncols; ++c)
      if (sc.lcf.valid(r, c)) weight[r * h.ncols + c] = s[r * h.ncols + c];
  Rng lrng(sub_seed(seed, kLandslides));
  const auto reach = static_cast<long>(std::ceil(cfg.min_spacing_m / h.cellsize));
  for (std::size_t n = 0; n < cfg.n_landslides; ++n) {
    double total = 0.0;
    for (double w : weight) total += w;
    if (!(total > 0.0))
      throw RuntimeError("gen_scene: unable to place " + std::to_string(cfg.n_landslides) +
                         " landslides under the spacing constraint (placed " + std::to_string(n) + ")");
    double u = lrng.uniform() * total;
    std::size_t pick = 0;
    for (std::size_t k = 0; k < n_cells; ++k) {
      if (weight[k] <= 0.0) continue;
      pick = k;
      if (u < weight[k]) break;
      u -= weight[k];
    }
    const long pr = static_cast<long>(pick / h.ncols), pc = static_cast<long>(pick % h.ncols);
    sc.inventory.push_back({h.center_x(static_cast<std::size_t>(pc)), h.center_y(static_cast<std::size_t>(pr)), 1});
    for (long r = std::max(0L, pr - reach); r <= std::min<long>(static_cast<long>(h.nrows) - 1, pr + reach); ++r)
      for (long c = std::max(0L, pc - reach); c <= std::min<long>(static_cast<long>(h.ncols) - 1, pc + reach); ++c)
        if (std::hypot(static_cast<double>(r - pr), static_cast<double>(c - pc)) * h.cellsize < cfg.min_spacing_m)
          weight[static_cast<std::size_t>(r) * h.ncols + static_cast<std::size_t>(c)] = 0.0;
  }

  // Plantedness: latent s at inventory cells against far-field cells.
  std::vector<std::size_t> far;
  std::vector<char> near(n_cells, 0);
  const auto buf = static_cast<long>(std::ceil(kDefaultBufferMeters / h.cellsize));
  for (const auto& p : sc.inventory) {
    const auto cell = *h.locate(p.x, p.y);
    const long pr = static_cast<long>(cell.first), pc = static_cast<long>(cell.second);
    for (long r = std::max(0L, pr - buf); r <= std::min<long>(static_cast<long>(h.nrows) - 1, pr + buf); ++r)
      for (long c = std::max(0L, pc - buf); c <= std::min<long>(static_cast<long>(h.ncols) - 1, pc + buf); ++c)
        if (std::hypot(static_cast<double>(r - pr), static_cast<double>(c - pc)) * h.cellsize <= kDefaultBufferMeters)
          near[static_cast<std::size_t>(r) * h.ncols + static_cast<std::size_t>(c)] = 1;
  }
  for (std::size_t r = mg; r + mg < h.nrows; ++r)
    for (std::size_t c = mg; c + mg < h.ncols; ++c)
      if (!near[r * h.ncols + c] && sc.lcf.valid(r, c)) far.push_back(r * h.ncols + c);
  Rng frng(sub_seed(seed, kFarField));
  const std::size_t n_far = std::min(far.size(), sc.inventory.size());
  for (std::size_t i = 0; i < n_far; ++i) std::swap(far[i], far[i + frng.index(far.size() - i)]);
  EvalInput ev;
  for (const auto& p : sc.inventory) {
    const auto cell = *h.locate(p.x, p.y);
    ev.y.push_back(1);
    ev.y_hat.push_back(sc.latent.at(cell.first, cell.second));
  }
  for (std::size_t i = 0; i < n_far; ++i) {
    ev.y.push_back(0);
    ev.y_hat.push_back(s[far[i]]);
  }
  sc.plantedness_auc = n_far > 0 ? roc_auc(ev).auc : 0.0;
  return sc;
}

} // namespace

Scene gen_scene(const SceneConfig& cfg) {
  cfg.validate();
  constexpr std::size_t kMaxRegenerations = 20;
  for (std::size_t attempt = 0; attempt <= kMaxRegenerations; ++attempt) {
    Scene sc = gen_scene_once(cfg, cfg.seed + attempt);
    sc.regenerations = attempt;
    if (sc.plantedness_auc >= kPlantednessThreshold) return sc;
    std::cerr << "synth: seed " << cfg.seed + attempt << " plantedness AUC " << sc.plantedness_auc
              << " below " << kPlantednessThreshold << ", regenerating with seed " << cfg.seed + attempt + 1 << "\n";
  }
  throw RuntimeError("gen_scene: no planted scene within " + std::to_string(kMaxRegenerations) + " regenerations");
}

void write_scene(const Scene& sc, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "lcf");
  fs::create_directories(dir / "embed");
  write_ascii_grid(sc.dem, dir / "dem.asc");
  write_ascii_grid(sc.latent, dir / "latent.asc");

  nlohmann::ordered_json lcf = nlohmann::ordered_json::array();
  for (std::size_t b = 0; b < sc.lcf.band_count(); ++b) {
    const std::string name = sc.lcf.band_names()[b];
    write_ascii_grid(sc.lcf.band(b), dir / "lcf" / (name + ".asc"));
    lcf.push_back({{"name", name}, {"path", "lcf/" + name + ".asc"}, {"kind", sc.lcf_categorical[b] ? "categorical" : "continuous"}});
  }
  write_text_file(dir / "lcf_manifest.json", lcf.dump(2) + "\n");

  nlohmann::ordered_json emb = nlohmann::ordered_json::array();
  for (std::size_t b = 0; b < sc.embed.band_count(); ++b) {
    const std::string name = sc.embed.band_names()[b];
    write_ascii_grid(sc.embed.band(b), dir / "embed" / (name + ".asc"));
    emb.push_back({{"name", name}, {"path", "embed/" + name + ".asc"}, {"kind", "continuous"}});
  }
  write_text_file(dir / "embed_manifest.json", emb.dump(2) + "\n");

  Grid mask(sc.dem.header(), 1.0);
  write_ascii_grid(mask, dir / "mask.asc");

  std::string csv = "x,y\n";
  for (const auto& p : sc.inventory) csv += format_real(p.x) + "," + format_real(p.y) + "\n";
  write_text_file(dir / "inventory.csv", csv);

  double smin = 1.0, smax = 0.0, smean = 0.0;
  for (double v : sc.latent.values()) {
    smin = std::min(smin, v);
    smax = std::max(smax, v);
    smean += v;
  }
  smean /= static_cast<double>(sc.latent.values().size());
  nlohmann::ordered_json j;
  j["config"] = nlohmann::ordered_json::parse(sc.config.to_json());
  j["effective_seed"] = sc.effective_seed;
  j["regenerations"] = sc.regenerations;
  j["latent"] = {{"min", smin}, {"max", smax}, {"mean", smean}};
  j["plantedness_auc"] = sc.plantedness_auc;
  j["inventory_count"] = sc.inventory.size();
  write_text_file(dir / "scene.json", j.dump(2) + "\n");

  nlohmann::ordered_json cfg;
  cfg["paths"] = {{"lcf_manifest", "lcf_manifest.json"},
                  {"embed_manifest", "embed_manifest.json"},
                  {"inventory", "inventory.csv"},
                  {"mask", "mask.asc"},
                  {"output_dir", "run"}};
  write_text_file(dir / "pipeline.json", cfg.dump(2) + "\n");
}

} // namespace lsm
