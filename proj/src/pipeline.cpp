#include "lsm/pipeline.hpp"

#include "lsm/common.hpp"
#include "lsm/map.hpp"
#include "lsm/nn/train.hpp"
#include "lsm/reduce.hpp"
#include "lsm/rng.hpp"
#include "lsm/sampling.hpp"
#include "lsm/synth.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <iostream>
#include <json.hpp>
#include <mutex>
#include <set>
#include <thread>

namespace lsm {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::mutex g_log_mutex;

void log_line(const std::string& stage, const std::string& msg) {
  std::lock_guard lock(g_log_mutex);
  std::cerr << "[lsm] " << stage << ": " << msg << "\n";
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// --- config parsing helpers -------------------------------------------------

[[noreturn]] void bad_key(const std::string& path, const std::string& what) {
  throw ValidationError("config: " + path + ": " + what);
}

const nlohmann::json& require_object(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) bad_key(path, "expected an object");
  return j;
}

double get_real(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number()) bad_key(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) bad_key(path, "expected a finite number");
  return v;
}

std::uint64_t get_uint(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<long long>() < 0))
    bad_key(path, "expected a non-negative integer");
  return j.get<std::uint64_t>();
}

std::string get_string(const nlohmann::json& j, const std::string& path) {
  if (!j.is_string()) bad_key(path, "expected a string");
  return j.get<std::string>();
}

std::vector<std::string> get_string_list(const nlohmann::json& j, const std::string& path) {
  if (j.is_string()) return {j.get<std::string>()};
  if (!j.is_array()) bad_key(path, "expected a string or a list of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_string(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : (base / q).lexically_normal();
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& purpose) {
  return fnv1a64(purpose + "#" + std::to_string(seed));
}

// --- artifacts ------------------------------------------------------------------

void require_artifact(const fs::path& p, const std::string& stage) {
  if (!fs::exists(p)) throw RuntimeError("missing artifact " + p.string() + "; run stage '" + stage + "' first");
}

struct Layout {
  fs::path root;
  fs::path ingest() const { return root / "ingest"; }
  fs::path sample() const { return root / "sample"; }
  fs::path diagnose() const { return root / "diagnose"; }
  fs::path train() const { return root / "train"; }
  fs::path evaluate() const { return root / "evaluate"; }
  fs::path map() const { return root / "map"; }
  fs::path report() const { return root / "report"; }
  fs::path manifest() const { return root / "run_manifest.json"; }
};

std::map<std::string, std::string> hash_tree(const fs::path& dir, const fs::path& root) {
  std::map<std::string, std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = file_hash(e.path());
  return out;
}

// --- samples ----------------------------------------------------------------------

void write_samples(const SampleSet& s, const fs::path& path) {
  std::string csv = "x,y,label,partition\n";
  for (std::size_t i = 0; i < s.points.size(); ++i)
    csv += format_real(s.points[i].x) + "," + format_real(s.points[i].y) + "," + std::to_string(s.points[i].label) +
           "," + (s.split[i] == Partition::train ? "train" : "validation") + "\n";
  write_text_file(path, csv);
}

SampleSet read_samples(const fs::path& path) {
  const std::string text = read_text_file(path);
  SampleSet s;
  std::size_t line_no = 0, start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + start, end - start);
    start = end + 1;
    if (++line_no == 1 || line.empty()) continue;
    const auto f = split_csv_line(line);
    const std::string ctx = path.string() + ":" + std::to_string(line_no);
    if (f.size() != 4) throw ValidationError(ctx + ": expected 4 fields");
    InventoryPoint p{parse_real(f[0], ctx), parse_real(f[1], ctx), f[2] == "1" ? 1 : 0};
    s.points.push_back(p);
    s.split.push_back(f[3] == "train" ? Partition::train : Partition::validation);
  }
  return s;
}

std::vector<InventoryPoint> read_points(const fs::path& path) {
  std::vector<InventoryPoint> pts;
  const std::string text = read_text_file(path);
  std::size_t line_no = 0, start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + start, end - start);
    start = end + 1;
    if (++line_no == 1 || line.empty()) continue;
    const auto f = split_csv_line(line);
    const std::string ctx = path.string() + ":" + std::to_string(line_no);
    if (f.size() < 2) throw ValidationError(ctx + ": expected x,y");
    pts.push_back({parse_real(f[0], ctx), parse_real(f[1], ctx), 1});
  }
  return pts;
}

// --- stacks -----------------------------------------------------------------------

bool needs_lcf(const PipelineConfig& c) {
  return std::find(c.representations.begin(), c.representations.end(), "lcf") != c.representations.end();
}
bool needs_embed(const PipelineConfig& c) {
  return std::any_of(c.representations.begin(), c.representations.end(),
                     [](const std::string& r) { return r != "lcf"; });
}

struct Inputs {
  GridHeader templ;
  std::optional<Grid> mask;
  std::optional<std::vector<ManifestEntry>> lcf, embed;
};

Inputs resolve_inputs(const PipelineConfig& c) {
  Inputs in;
  if (needs_lcf(c)) in.lcf = load_stack_manifest(c.paths.lcf_manifest);
  if (needs_embed(c)) in.embed = load_stack_manifest(c.paths.embed_manifest);
  if (!c.paths.mask.empty()) {
    in.mask = read_ascii_grid(c.paths.mask);
    in.templ = in.mask->header();
  } else {
    const auto& first = in.lcf ? in.lcf->front() : in.embed->front();
    in.templ = read_ascii_grid(first.path).header();
  }
  return in;
}

GridStack base_stack(const Inputs& in, const std::string& which) {
  const auto& entries = which == "lcf" ? in.lcf : in.embed;
  if (!entries) throw ValidationError("no manifest configured for the " + which + " stack");
  GridStack s = load_stack(*entries, in.templ);
  if (in.mask) s = apply_mask(s, *in.mask);
  return s;
}

std::string stack_for(const std::string& representation) { return representation == "lcf" ? "lcf" : "embed"; }

GridStack single_band(const Grid& g, const std::string& name) { return stack({g}, {name}); }

// --- cells ------------------------------------------------------------------------

struct Cell {
  std::string rep, model;
  std::string name() const { return cell_name(rep, model); }
};

std::vector<Cell> cells_of(const PipelineConfig& c) {
  std::vector<Cell> out;
  for (const auto& m : c.models)
    for (const auto& r : c.representations) out.push_back({r, m});
  return out;
}

nn::ModelSpec spec_for(const std::string& model, std::size_t window, std::size_t p, std::uint64_t seed) {
  if (model == "cnn1d") return nn::build_cnn1d(p, seed);
  if (model == "cnn2d") return nn::build_cnn2d(window, window, p, seed);
  return nn::build_vit(window, window, p, seed);
}

std::pair<std::size_t, std::size_t> cell_of_point(const GridHeader& h, const InventoryPoint& p) {
  const auto rc = h.locate(p.x, p.y);
  if (!rc) throw RuntimeError("sample point outside the raster");
  return *rc;
}

nn::Dataset dataset(const GridStack& ready, const nn::ModelSpec& spec, const std::vector<InventoryPoint>& pts) {
  nn::Dataset d;
  for (const auto& p : pts) {
    const auto [r, c] = cell_of_point(ready.header(), p);
    auto x = model_input(ready, spec, r, c);
    if (!x) throw RuntimeError("sample at (" + format_real(p.x) + ", " + format_real(p.y) + ") has no valid model input");
    d.inputs.push_back(std::move(*x));
    d.labels.push_back(p.label);
  }
  return d;
}

unsigned thread_count(const PipelineConfig& c) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  return c.threads == 0 ? hw : c.threads;
}

template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn fn) {
  threads = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(err_mutex);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

std::optional<PcaModel> load_reducer(const Layout& L, const std::string& rep) {
  if (rep != "embed_pca") return std::nullopt;
  const fs::path p = L.diagnose() / "pca_model.json";
  require_artifact(p, "diagnose");
  return PcaModel::from_json(read_text_file(p));
}

// --- stages -----------------------------------------------------------------------

void stage_ingest(const PipelineConfig& c, const Layout& L, ojson& inputs) {
  const Inputs in = resolve_inputs(c);
  Grid eligible(in.templ, 1.0);
  ojson stacks;
  for (const std::string which : {"lcf", "embed"}) {
    const auto& entries = which == "lcf" ? in.lcf : in.embed;
    if (!entries) continue;
    const GridStack s = base_stack(in, which);
    const Grid feas = window_feasibility(s, c.sampling.window);
    for (std::size_t k = 0; k < eligible.values().size(); ++k)
      if (!feas.is_valid_value(feas.values()[k])) eligible.values()[k] = eligible.nodata();
    ojson bands = ojson::array();
    for (const auto& e : *entries) {
      const std::string h = file_hash(e.path);
      inputs[e.path.generic_string()] = h;
      bands.push_back({{"name", e.name}, {"kind", e.categorical ? "categorical" : "continuous"}, {"hash", h}});
    }
    stacks[which] = {{"bands", bands}, {"valid_cells", s.valid_count()}, {"window_feasible_cells", feas.valid_count()}};
    log_line("ingest", which + " stack: " + std::to_string(s.band_count()) + " bands, " +
                           std::to_string(s.valid_count()) + " valid cells");
  }
  const GridStack elig = single_band(eligible, "eligible");
  const InventoryLoad inv = load_inventory(c.paths.inventory, elig);
  inputs[c.paths.inventory.generic_string()] = file_hash(c.paths.inventory);
  if (!c.paths.mask.empty()) inputs[c.paths.mask.generic_string()] = file_hash(c.paths.mask);
  for (const auto& m : {c.paths.lcf_manifest, c.paths.embed_manifest})
    if (!m.empty() && fs::exists(m)) inputs[m.generic_string()] = file_hash(m);

  fs::create_directories(L.ingest());
  write_ascii_grid(eligible, L.ingest() / "eligible.asc");
  std::string csv = "x,y\n";
  for (const auto& p : inv.points) csv += format_real(p.x) + "," + format_real(p.y) + "\n";
  write_text_file(L.ingest() / "inventory.csv", csv);
  ojson j;
  j["header"] = {{"ncols", in.templ.ncols}, {"nrows", in.templ.nrows}, {"xllcorner", in.templ.xll},
                 {"yllcorner", in.templ.yll}, {"cellsize", in.templ.cellsize}, {"nodata_value", in.templ.nodata}};
  j["window"] = c.sampling.window;
  j["stacks"] = stacks;
  j["eligible_cells"] = eligible.valid_count();
  j["inventory"] = ojson::parse(inv.report.to_json());
  write_text_file(L.ingest() / "ingest.json", j.dump(2) + "\n");
  log_line("ingest", "inventory: " + std::to_string(inv.report.loaded) + " loaded, " +
                         std::to_string(inv.report.dropped_outside) + " outside, " +
                         std::to_string(inv.report.dropped_invalid) + " on ineligible cells, " +
                         std::to_string(inv.report.merged_duplicates) + " merged");
}

void stage_sample(const PipelineConfig& c, const Layout& L) {
  require_artifact(L.ingest() / "inventory.csv", "ingest");
  require_artifact(L.ingest() / "eligible.asc", "ingest");
  const Grid eligible = read_ascii_grid(L.ingest() / "eligible.asc");
  const auto landslides = read_points(L.ingest() / "inventory.csv");
  if (landslides.size() < 2) throw ValidationError("sample: need at least 2 landslides, have " + std::to_string(landslides.size()));
  const auto negatives =
      sample_negatives(landslides, single_band(eligible, "eligible"), c.sampling.buffer_m, derive_seed(c.seed, "negatives"));
  std::vector<InventoryPoint> all = landslides;
  all.insert(all.end(), negatives.begin(), negatives.end());
  const SampleSet s = split(all, c.sampling.train_fraction, derive_seed(c.seed, "split"));
  fs::create_directories(L.sample());
  write_samples(s, L.sample() / "samples.csv");
  std::size_t n_train = 0;
  for (auto p : s.split) n_train += p == Partition::train;
  ojson j;
  j["positives"] = landslides.size();
  j["negatives"] = negatives.size();
  j["train"] = n_train;
  j["validation"] = s.points.size() - n_train;
  j["buffer_m"] = c.sampling.buffer_m;
  j["train_fraction"] = c.sampling.train_fraction;
  j["seed"] = c.seed;
  write_text_file(L.sample() / "sample.json", j.dump(2) + "\n");
  log_line("sample", std::to_string(landslides.size()) + " positives, " + std::to_string(negatives.size()) +
                         " negatives, " + std::to_string(n_train) + " train");
}

void write_variance_csv(const PcaModel& m, const fs::path& path) {
  std::string csv = "component,eigenvalue,cum_explained\n";
  for (std::size_t i = 0; i < m.p; ++i)
    csv += std::to_string(i + 1) + "," + format_real(m.eigenvalues[i]) + "," + format_real(m.cum_explained[i]) + "\n";
  write_text_file(path, csv);
}

void stage_diagnose(const PipelineConfig& c, const Layout& L) {
  require_artifact(L.sample() / "samples.csv", "sample");
  const SampleSet s = read_samples(L.sample() / "samples.csv");
  const auto train_pts = s.partition(Partition::train);
  const Inputs in = resolve_inputs(c);
  fs::create_directories(L.diagnose());
  for (const std::string which : {"lcf", "embed"}) {
    if ((which == "lcf" && !in.lcf) || (which == "embed" && !in.embed)) continue;
    const GridStack st = base_stack(in, which);
    const FeatureMatrix x = feature_matrix(st, train_pts);
    if (x.rows > x.cols) {
      const CollinearityReport rep = collinearity(x, st.band_names());
      write_text_file(L.diagnose() / ("collinearity_" + which + ".csv"), rep.to_csv());
      write_text_file(L.diagnose() / ("collinearity_" + which + ".json"), rep.to_json());
      std::size_t flagged = 0;
      for (const auto& e : rep.entries) flagged += !e.vif_ok;
      log_line("diagnose", which + ": " + std::to_string(flagged) + " of " + std::to_string(rep.entries.size()) +
                               " features with VIF above " + format_real(kVifThreshold));
    } else {
      log_line("diagnose", which + ": collinearity skipped, " + std::to_string(x.rows) + " samples for " +
                               std::to_string(x.cols) + " features");
    }
    PcaModel pca = pca_fit(x, fit_standardizer(x));
    pca.k = select_k(pca, c.pca.threshold);
    write_variance_csv(pca, L.diagnose() / ("cumulative_variance_" + which + ".csv"));
    log_line("diagnose", which + ": " + std::to_string(pca.k) + " components reach " + format_real(c.pca.threshold));
    if (which == "embed") write_text_file(L.diagnose() / "pca_model.json", pca.to_json());
  }
}

void stage_train(const PipelineConfig& c, const Layout& L) {
  require_artifact(L.sample() / "samples.csv", "sample");
  const SampleSet s = read_samples(L.sample() / "samples.csv");
  const auto train_pts = s.partition(Partition::train);
  const auto val_pts = s.partition(Partition::validation);
  const Inputs in = resolve_inputs(c);
  std::map<std::string, GridStack> stacks;
  if (in.lcf) stacks["lcf"] = base_stack(in, "lcf");
  if (in.embed) stacks["embed"] = base_stack(in, "embed");
  std::map<std::string, std::optional<PcaModel>> reducers;
  for (const auto& r : c.representations) reducers[r] = load_reducer(L, r);
  fs::create_directories(L.train());

  const auto cells = cells_of(c);
  parallel_for(cells.size(), thread_count(c), [&](std::size_t i) {
    const Cell& cell = cells[i];
    const auto t0 = std::chrono::steady_clock::now();
    const GridStack& raw = stacks.at(stack_for(cell.rep));
    const auto& reducer = reducers.at(cell.rep);
    const GridStack rep = reducer ? pca_transform_stack(raw, *reducer) : raw;
    const FeatureMatrix xt = feature_matrix(rep, train_pts);

    nn::Checkpoint tmpl;
    tmpl.spec = spec_for(cell.model, c.sampling.window, rep.band_count(), derive_seed(c.seed, cell.name() + "/init"));
    tmpl.standardizer = fit_standardizer(xt);
    if (reducer) tmpl.pca_hash = reducer->hash();
    const GridStack ready = model_ready_stack(tmpl, raw, reducer ? &*reducer : nullptr);

    nn::TrainConfig tc;
    tc.learning_rate = c.training.learning_rate;
    tc.batch_size = c.training.batch_size;
    tc.max_epochs = c.training.max_epochs;
    tc.patience = c.training.patience;
    tc.seed = derive_seed(c.seed, cell.name() + "/shuffle");
    nn::Checkpoint ck = nn::train(tmpl.spec, dataset(ready, tmpl.spec, train_pts), dataset(ready, tmpl.spec, val_pts), tc);
    ck.standardizer = tmpl.standardizer;
    ck.pca_hash = tmpl.pca_hash;
    ck.meta["representation"] = cell.rep;
    ck.meta["model"] = cell.model;
    ck.meta["bands"] = std::to_string(rep.band_count());
    nn::save_checkpoint(ck, L.train() / cell.name());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_line("train", cell.name() + ": " + std::to_string(ck.history.size()) + " epochs, best " +
                          std::to_string(ck.best_epoch) + ", " + fixed(secs, 1) + " s");
  });
}

void stage_evaluate(const PipelineConfig& c, const Layout& L) {
  require_artifact(L.sample() / "samples.csv", "sample");
  const SampleSet s = read_samples(L.sample() / "samples.csv");
  const auto val_pts = s.partition(Partition::validation);
  const Inputs in = resolve_inputs(c);
  std::map<std::string, GridStack> stacks;
  if (in.lcf) stacks["lcf"] = base_stack(in, "lcf");
  if (in.embed) stacks["embed"] = base_stack(in, "embed");
  for (const Cell& cell : cells_of(c)) {
    const fs::path base = L.train() / cell.name();
    require_artifact(fs::path(base.string() + ".json"), "train");
    const nn::Checkpoint ck = nn::load_checkpoint(base);
    const auto reducer = load_reducer(L, cell.rep);
    const GridStack ready = model_ready_stack(ck, stacks.at(stack_for(cell.rep)), reducer ? &*reducer : nullptr);
    const nn::Dataset val = dataset(ready, ck.spec, val_pts);
    EvalInput ev;
    ev.y = val.labels;
    ev.y_hat = nn::predict_batch(ck, val.inputs);
    const MetricReport rep = evaluate(ev, c.eval.threshold);

    // Label-permutation null for the validation AUC.
    Rng rng(derive_seed(c.seed, cell.name() + "/null"));
    std::vector<double> null_auc;
    EvalInput perm = ev;
    for (std::size_t k = 0; k < c.eval.permutations; ++k) {
      rng.shuffle(std::span<int>(perm.y));
      null_auc.push_back(roc_auc(perm).auc);
    }
    double mean = 0.0, sd = 0.0;
    for (double a : null_auc) mean += a;
    if (!null_auc.empty()) mean /= static_cast<double>(null_auc.size());
    for (double a : null_auc) sd += (a - mean) * (a - mean);
    if (null_auc.size() > 1) sd = std::sqrt(sd / static_cast<double>(null_auc.size() - 1));

    const fs::path dir = L.evaluate() / cell.name();
    fs::create_directories(dir);
    ojson j = ojson::parse(rep.to_json());
    j["cell"] = cell.name();
    j["representation"] = cell.rep;
    j["model"] = cell.model;
    j["n_validation"] = ev.y.size();
    j["permutation_null"] = {{"permutations", null_auc.size()}, {"mean_auc", mean}, {"sd_auc", sd}};
    write_text_file(dir / "metrics.json", j.dump(2) + "\n");
    write_text_file(dir / "roc.csv", rep.roc_csv());
    write_text_file(dir / "roc.svg", rep.roc_svg(cell.name()));
    std::string scores = "x,y,label,score\n";
    for (std::size_t i = 0; i < val_pts.size(); ++i)
      scores += format_real(val_pts[i].x) + "," + format_real(val_pts[i].y) + "," + std::to_string(ev.y[i]) + "," +
                format_real(ev.y_hat[i]) + "\n";
    write_text_file(dir / "validation_scores.csv", scores);
    log_line("evaluate", cell.name() + ": AUC " + fixed(rep.roc.auc) + ", F1 " + fixed(rep.metrics.f1.value_or(0.0)) +
                             ", null " + fixed(mean) + " +/- " + fixed(sd));
  }
}

void stage_map(const PipelineConfig& c, const Layout& L) {
  require_artifact(L.ingest() / "inventory.csv", "ingest");
  const auto landslides = read_points(L.ingest() / "inventory.csv");
  const Inputs in = resolve_inputs(c);
  std::map<std::string, GridStack> stacks;
  if (in.lcf) stacks["lcf"] = base_stack(in, "lcf");
  if (in.embed) stacks["embed"] = base_stack(in, "embed");
  for (const Cell& cell : cells_of(c)) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path base = L.train() / cell.name();
    require_artifact(fs::path(base.string() + ".json"), "train");
    const nn::Checkpoint ck = nn::load_checkpoint(base);
    const auto reducer = load_reducer(L, cell.rep);
    const Grid scores = infer_raster(ck, stacks.at(stack_for(cell.rep)), reducer ? &*reducer : nullptr, thread_count(c));
    const SusceptibilityMap m =
        build_map(scores, c.map.n_classes, c.map.jenks_cap, derive_seed(c.seed, cell.name() + "/jenks"));
    const OccupancyReport occ = occupancy(m.classes, landslides, c.map.n_classes);
    const fs::path dir = L.map() / cell.name();
    fs::create_directories(dir);
    write_ascii_grid(m.scores, dir / "scores.asc");
    write_ascii_grid(m.classes, dir / "classes.asc");
    write_text_file(dir / "breaks.json", m.jenks.to_json());
    write_text_file(dir / "occupancy.json", occ.to_json());
    write_text_file(dir / "occupancy.csv", occ.to_csv());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_line("map", cell.name() + ": " + std::to_string(scores.valid_count()) + " cells scored, " +
                        std::to_string(occ.counts.empty() ? 0 : occ.counts.back()) + " landslides in the top class, " +
                        fixed(secs, 1) + " s");
  }
}

MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  auto opt = [&](const char* k) -> std::optional<double> {
    return j.at(k).is_null() ? std::nullopt : std::optional<double>(j.at(k).get<double>());
  };
  r.threshold = j.at("threshold").get<double>();
  r.counts.tp = j.at("confusion").at("tp").get<std::size_t>();
  r.counts.fp = j.at("confusion").at("fp").get<std::size_t>();
  r.counts.fn = j.at("confusion").at("fn").get<std::size_t>();
  r.counts.tn = j.at("confusion").at("tn").get<std::size_t>();
  r.metrics.accuracy = opt("accuracy");
  r.metrics.precision = opt("precision");
  r.metrics.recall = opt("recall");
  r.metrics.specificity = opt("specificity");
  r.metrics.f1 = opt("f1");
  r.roc.auc = j.at("auc").get<double>();
  r.errors.mae = j.at("mae").get<double>();
  r.errors.rmse = j.at("rmse").get<double>();
  return r;
}

void stage_report(const PipelineConfig& c, const Layout& L) {
  std::map<std::pair<std::string, std::string>, MetricReport> reports;
  std::string occ_csv = "representation,model,class,count,percent\n";
  for (const Cell& cell : cells_of(c)) {
    const fs::path mp = L.evaluate() / cell.name() / "metrics.json";
    require_artifact(mp, "evaluate");
    reports[{cell.model, cell.rep}] = report_from_json(nlohmann::json::parse(read_text_file(mp)));
    const fs::path op = L.map() / cell.name() / "occupancy.json";
    require_artifact(op, "map");
    const auto oj = nlohmann::json::parse(read_text_file(op));
    for (const auto& row : oj.at("classes"))
      occ_csv += cell.rep + "," + cell.model + "," + std::to_string(row.at("class").get<int>()) + "," +
                 std::to_string(row.at("count").get<std::size_t>()) + "," + format_real(row.at("percent").get<double>()) +
                 "\n";
  }
  const Comparison cmp = compare_representations(reports);
  fs::create_directories(L.report());
  write_text_file(L.report() / "comparison.csv", cmp.to_csv());
  write_text_file(L.report() / "comparison.json", cmp.to_json());
  write_text_file(L.report() / "occupancy.csv", occ_csv);
  for (const auto& d : cmp.deltas)
    log_line("report", d.model + " " + d.representation + " vs lcf: dF1 " + fixed(d.delta_f1) + ", dAUC " +
                           fixed(d.delta_auc));
}

void stage_synth(const fs::path& config_path, const StageOptions& opt) {
  SceneConfig sc;
  if (!config_path.empty()) sc = SceneConfig::from_json(read_text_file(config_path));
  if (opt.seed) sc.seed = *opt.seed;
  const fs::path dir = opt.out.value_or("scene");
  const Scene scene = gen_scene(sc);
  write_scene(scene, dir);
  log_line("synth", "scene written to " + dir.string() + " (seed " + std::to_string(scene.effective_seed) +
                        ", plantedness AUC " + fixed(scene.plantedness_auc) + ")");
}

} // namespace

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::validate() const {
  auto fail = [](const std::string& path, const std::string& what) { bad_key(path, what); };
  if (representations.empty()) fail("representations", "must not be empty");
  if (models.empty()) fail("models", "must not be empty");
  std::set<std::string> seen;
  for (const auto& r : representations) {
    if (std::find(representation_names().begin(), representation_names().end(), r) == representation_names().end())
      fail("representations", "unknown representation '" + r + "'");
    if (!seen.insert("r:" + r).second) fail("representations", "duplicate '" + r + "'");
  }
  for (const auto& m : models) {
    if (std::find(model_names().begin(), model_names().end(), m) == model_names().end())
      fail("models", "unknown model '" + m + "'");
    if (!seen.insert("m:" + m).second) fail("models", "duplicate '" + m + "'");
  }
  if (needs_lcf(*this) && paths.lcf_manifest.empty()) fail("paths.lcf_manifest", "required for the lcf representation");
  if (needs_embed(*this) && paths.embed_manifest.empty())
    fail("paths.embed_manifest", "required for the embedding representations");
  if (paths.inventory.empty()) fail("paths.inventory", "required");
  if (!(sampling.buffer_m >= 0.0)) fail("sampling.buffer_m", "must be >= 0");
  if (sampling.ratio != 1.0) fail("sampling.ratio", "only 1 (one negative per landslide) is supported");
  if (!(sampling.train_fraction > 0.0 && sampling.train_fraction < 1.0)) fail("sampling.train_fraction", "must be in (0, 1)");
  if (sampling.window < 3 || sampling.window % 2 == 0) fail("sampling.window", "must be an odd integer >= 3");
  if (!(pca.threshold > 0.0 && pca.threshold <= 1.0)) fail("pca.threshold", "must be in (0, 1]");
  if (!(training.learning_rate > 0.0)) fail("training.learning_rate", "must be positive");
  if (training.batch_size == 0) fail("training.batch_size", "must be positive");
  if (!(eval.threshold >= 0.0 && eval.threshold <= 1.0)) fail("eval.threshold", "must be in [0, 1]");
  if (map.n_classes < 1) fail("map.n_classes", "must be >= 1");
}

std::string PipelineConfig::to_json() const {
  ojson j;
  j["paths"] = {{"lcf_manifest", paths.lcf_manifest.generic_string()},
                {"embed_manifest", paths.embed_manifest.generic_string()},
                {"inventory", paths.inventory.generic_string()},
                {"mask", paths.mask.generic_string()},
                {"output_dir", paths.output_dir.generic_string()}};
  j["representations"] = representations;
  j["models"] = models;
  j["sampling"] = {{"buffer_m", sampling.buffer_m},
                   {"ratio", sampling.ratio},
                   {"train_fraction", sampling.train_fraction},
                   {"window", sampling.window}};
  j["pca"] = {{"threshold", pca.threshold}};
  j["training"] = {{"learning_rate", training.learning_rate},
                   {"batch_size", training.batch_size},
                   {"max_epochs", training.max_epochs},
                   {"patience", training.patience}};
  j["eval"] = {{"threshold", eval.threshold}, {"permutations", eval.permutations}};
  j["map"] = {{"n_classes", map.n_classes}, {"jenks_cap", map.jenks_cap}};
  j["seed"] = seed;
  j["threads"] = threads;
  ojson o;
  for (const char* key : {"sampling.buffer_m", "sampling.ratio", "sampling.train_fraction", "sampling.window",
                          "pca.threshold", "training.learning_rate", "training.batch_size", "training.max_epochs",
                          "training.patience", "eval.threshold", "eval.permutations", "map.n_classes",
                          "map.jenks_cap", "seed", "threads", "representations", "models", "paths.output_dir"}) {
    const auto it = origin.find(key);
    o[key] = it == origin.end() ? "default" : it->second;
  }
  j["origin"] = o;
  return j.dump(2) + "\n";
}

PipelineConfig parse_pipeline_config(const std::string& text, const fs::path& base_dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: not valid JSON: ") + e.what());
  }
  require_object(j, "<root>");
  PipelineConfig c;
  auto mark = [&](const std::string& k) { c.origin[k] = "config"; };

  for (const auto& [key, val] : j.items()) {
    if (key == "paths") {
      for (const auto& [k, v] : require_object(val, "paths").items()) {
        const std::string path = "paths." + k;
        const fs::path p = resolve(base_dir, get_string(v, path));
        if (k == "lcf_manifest") c.paths.lcf_manifest = p;
        else if (k == "embed_manifest") c.paths.embed_manifest = p;
        else if (k == "inventory") c.paths.inventory = p;
        else if (k == "mask") c.paths.mask = p;
        else if (k == "output_dir") c.paths.output_dir = p, mark(path);
        else bad_key(path, "unknown key");
      }
    } else if (key == "representations" || key == "representation") {
      c.representations = get_string_list(val, key);
      mark("representations");
    } else if (key == "models" || key == "model") {
      c.models = get_string_list(val, key);
      mark("models");
    } else if (key == "sampling") {
      for (const auto& [k, v] : require_object(val, key).items()) {
        const std::string path = "sampling." + k;
        if (k == "buffer_m") c.sampling.buffer_m = get_real(v, path);
        else if (k == "ratio") c.sampling.ratio = get_real(v, path);
        else if (k == "train_fraction") c.sampling.train_fraction = get_real(v, path);
        else if (k == "window") c.sampling.window = get_uint(v, path);
        else if (k == "seed") c.seed = get_uint(v, path), mark("seed");
        else bad_key(path, "unknown key");
        mark(path);
      }
    } else if (key == "pca") {
      for (const auto& [k, v] : require_object(val, key).items()) {
        if (k == "threshold") c.pca.threshold = get_real(v, "pca.threshold");
        else bad_key("pca." + k, "unknown key");
        mark("pca." + k);
      }
    } else if (key == "training") {
      for (const auto& [k, v] : require_object(val, key).items()) {
        const std::string path = "training." + k;
        if (k == "learning_rate") c.training.learning_rate = get_real(v, path);
        else if (k == "batch_size") c.training.batch_size = get_uint(v, path);
        else if (k == "max_epochs") c.training.max_epochs = get_uint(v, path);
        else if (k == "patience") c.training.patience = get_uint(v, path);
        else bad_key(path, "unknown key");
        mark(path);
      }
    } else if (key == "eval") {
      for (const auto& [k, v] : require_object(val, key).items()) {
        const std::string path = "eval." + k;
        if (k == "threshold") c.eval.threshold = get_real(v, path);
        else if (k == "permutations") c.eval.permutations = get_uint(v, path);
        else bad_key(path, "unknown key");
        mark(path);
      }
    } else if (key == "map") {
      for (const auto& [k, v] : require_object(val, key).items()) {
        const std::string path = "map." + k;
        if (k == "n_classes") c.map.n_classes = get_uint(v, path);
        else if (k == "jenks_cap") c.map.jenks_cap = get_uint(v, path);
        else bad_key(path, "unknown key");
        mark(path);
      }
    } else if (key == "seed") {
      c.seed = get_uint(val, key);
      mark(key);
    } else if (key == "threads") {
      c.threads = static_cast<unsigned>(get_uint(val, key));
      mark(key);
    } else {
      bad_key(key, "unknown key");
    }
  }
  if (c.paths.output_dir == "run") c.paths.output_dir = (base_dir / "run").lexically_normal();
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  return parse_pipeline_config(read_text_file(path), path.parent_path());
}

std::vector<ManifestEntry> parse_stack_manifest(const std::string& text, const fs::path& base_dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("stack manifest: not valid JSON: ") + e.what());
  }
  if (!j.is_array() || j.empty()) throw ValidationError("stack manifest: expected a non-empty list");
  std::vector<ManifestEntry> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string at = "stack manifest[" + std::to_string(i) + "]";
    if (!j[i].is_object()) throw ValidationError(at + ": expected an object");
    ManifestEntry e;
    for (const auto& [k, v] : j[i].items()) {
      if (!v.is_string()) throw ValidationError(at + "." + k + ": expected a string");
      const auto s = v.get<std::string>();
      if (k == "name") e.name = s;
      else if (k == "path") e.path = resolve(base_dir, s);
      else if (k == "kind") {
        if (s != "continuous" && s != "categorical")
          throw ValidationError(at + ".kind: expected continuous or categorical, got '" + s + "'");
        e.categorical = s == "categorical";
      } else
        throw ValidationError(at + "." + k + ": unknown key");
    }
    if (e.name.empty() || e.path.empty()) throw ValidationError(at + ": name and path are required");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ManifestEntry> load_stack_manifest(const fs::path& path) {
  return parse_stack_manifest(read_text_file(path), path.parent_path());
}

GridStack load_stack(const std::vector<ManifestEntry>& entries, const GridHeader& templ) {
  std::vector<Grid> grids;
  std::vector<std::string> names;
  for (const auto& e : entries) {
    Grid g = read_ascii_grid(e.path);
    if (!aligned(g.header(), templ)) {
      log_line("ingest", "resampling " + e.name + " (" + *first_misaligned_field(g.header(), templ) + " differs)");
      g = resample(g, templ, e.categorical ? ResampleMethod::nearest : ResampleMethod::bilinear);
    }
    grids.push_back(std::move(g));
    names.push_back(e.name);
  }
  return stack(std::move(grids), std::move(names));
}

std::string cell_name(const std::string& representation, const std::string& model) {
  return representation + "-" + model;
}

// ---------------------------------------------------------------------------
// Comparison

Comparison compare_representations(const std::map<std::pair<std::string, std::string>, MetricReport>& reports) {
  if (reports.empty()) throw ValidationError("compare_representations: no reports");
  std::vector<std::string> models;
  for (const auto& [key, _] : reports)
    if (std::find(models.begin(), models.end(), key.first) == models.end()) models.push_back(key.first);
  // Known models first in canonical order, then any others alphabetically.
  std::stable_sort(models.begin(), models.end(), [](const std::string& a, const std::string& b) {
    auto rank = [](const std::string& m) {
      const auto it = std::find(model_names().begin(), model_names().end(), m);
      return static_cast<std::size_t>(it - model_names().begin());
    };
    return rank(a) < rank(b);
  });
  Comparison out;
  for (const auto& m : models) {
    for (const auto& r : representation_names()) {
      const auto it = reports.find({m, r});
      if (it == reports.end())
        throw ValidationError("compare_representations: incomplete matrix, " + m + " lacks " + r);
      const MetricReport& rep = it->second;
      out.rows.push_back({m, r, rep.metrics.accuracy.value_or(0.0), rep.metrics.f1.value_or(0.0), rep.roc.auc,
                          rep.errors.mae, rep.errors.rmse});
    }
    const ComparisonRow& base = out.rows[out.rows.size() - 3];
    for (std::size_t k = 1; k < 3; ++k) {
      const ComparisonRow& row = out.rows[out.rows.size() - 3 + k];
      out.deltas.push_back({m, row.representation, row.f1 - base.f1, row.auc - base.auc});
    }
  }
  return out;
}

std::string Comparison::to_csv() const {
  std::string csv = "model,representation,accuracy,f1,auc,mae,rmse,delta_f1,delta_auc\n";
  for (const auto& r : rows) {
    std::string df1 = "0", dauc = "0";
    for (const auto& d : deltas)
      if (d.model == r.model && d.representation == r.representation) {
        df1 = format_real(d.delta_f1);
        dauc = format_real(d.delta_auc);
      }
    csv += r.model + "," + r.representation + "," + format_real(r.accuracy) + "," + format_real(r.f1) + "," +
           format_real(r.auc) + "," + format_real(r.mae) + "," + format_real(r.rmse) + "," + df1 + "," + dauc + "\n";
  }
  return csv;
}

std::string Comparison::to_json() const {
  ojson rs = ojson::array(), ds = ojson::array();
  for (const auto& r : rows)
    rs.push_back({{"model", r.model},
                  {"representation", r.representation},
                  {"accuracy", r.accuracy},
                  {"f1", r.f1},
                  {"auc", r.auc},
                  {"mae", r.mae},
                  {"rmse", r.rmse}});
  for (const auto& d : deltas)
    ds.push_back({{"model", d.model}, {"representation", d.representation}, {"baseline", "lcf"},
                  {"delta_f1", d.delta_f1}, {"delta_auc", d.delta_auc}});
  ojson j;
  j["rows"] = rs;
  j["deltas"] = ds;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Stage runner

void run_stage(const std::string& stage, const fs::path& config_path, const StageOptions& options) {
  if (std::find(stage_names().begin(), stage_names().end(), stage) == stage_names().end())
    throw ValidationError("unknown stage '" + stage + "'");
  if (stage == "synth") {
    stage_synth(config_path, options);
    return;
  }
  if (config_path.empty()) throw ValidationError("stage '" + stage + "' requires --config");
  PipelineConfig cfg = load_pipeline_config(config_path);
  if (options.seed) {
    cfg.seed = *options.seed;
    cfg.origin["seed"] = "cli";
  }
  if (options.out) {
    cfg.paths.output_dir = *options.out;
    cfg.origin["paths.output_dir"] = "cli";
  }
  const Layout L{cfg.paths.output_dir};
  fs::create_directories(L.root);

  ojson manifest;
  if (fs::exists(L.manifest())) {
    try {
      manifest = ojson::parse(read_text_file(L.manifest()));
    } catch (const nlohmann::json::exception&) {
      manifest = ojson();
    }
  }
  manifest["format"] = "lsm-run";
  manifest["version"] = 1;
  manifest["config"] = ojson::parse(cfg.to_json());
  manifest["versions"] = {{"lsm", "1.0.0"}, {"checkpoint_format", nn::kWeightFormatVersion},
#if defined(__VERSION__)
                          {"compiler", __VERSION__}
#else
                          {"compiler", "unknown"}
#endif
  };

  const std::vector<std::string> order =
      stage == "all" ? std::vector<std::string>{"ingest", "sample", "diagnose", "train", "evaluate", "map", "report"}
                     : std::vector<std::string>{stage};
  for (const auto& s : order) {
    const auto t0 = std::chrono::steady_clock::now();
    log_line(s, "start");
    ojson inputs = manifest.contains("inputs") ? manifest["inputs"] : ojson::object();
    if (s == "ingest") stage_ingest(cfg, L, inputs);
    else if (s == "sample") stage_sample(cfg, L);
    else if (s == "diagnose") stage_diagnose(cfg, L);
    else if (s == "train") stage_train(cfg, L);
    else if (s == "evaluate") stage_evaluate(cfg, L);
    else if (s == "map") stage_map(cfg, L);
    else if (s == "report") stage_report(cfg, L);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    manifest["inputs"] = inputs;
    const fs::path dir = L.root / s;
    manifest["stages"][s] = {{"wall_clock_s", secs}, {"outputs", hash_tree(dir, L.root)}};
    write_text_file(L.manifest(), manifest.dump(2) + "\n");
    log_line(s, "done in " + fixed(secs, 2) + " s");
  }
}

} // namespace lsm
