// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.
//
//   lsm_acceptance <work_dir> [criterion ...]

#include "gradcheck.hpp"
#include "oracles.hpp"

#include "lsm/common.hpp"
#include "lsm/eval.hpp"
#include "lsm/map.hpp"
#include "lsm/nn/train.hpp"
#include "lsm/pipeline.hpp"
#include "lsm/reduce.hpp"
#include "lsm/rng.hpp"
#include "lsm/sampling.hpp"
#include "lsm/synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace lsm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failures; the first few messages are kept for the report line.
class Check {
public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    pass_ = false;
    if (++failures_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  void note(const std::string& s) { info_ += (info_.empty() ? "" : ", ") + s; }
  Outcome done() const {
    Outcome o;
    o.pass = pass_;
    o.detail = pass_ ? info_ : notes_ + (failures_ > 3 ? " (+" + std::to_string(failures_ - 3) + " more)" : "");
    return o;
  }

private:
  bool pass_ = true;
  int failures_ = 0;
  std::string notes_, info_;
};

std::string num(double v, int prec = 3) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(prec);
  o << v;
  return o.str();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

FeatureMatrix random_matrix(std::size_t n, std::size_t p, std::uint64_t seed) {
  Rng rng(seed);
  FeatureMatrix x(n, p);
  // Mix independent normals so the columns are correlated.
  std::vector<double> mix(p * p);
  for (auto& m : mix) m = rng.normal();
  std::vector<double> z(p);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : z) v = rng.normal();
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < p; ++k) s += mix[j * p + k] * z[k];
      x.at(i, j) = 3.0 * j + s;
    }
  }
  return x;
}

// ---------------------------------------------------------------------------

Outcome pca_suite() {
  Check ck;
  const auto t0 = std::chrono::steady_clock::now();
  double worst_resid = 0, worst_orth = 0, worst_rec = 0, worst_trace = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const std::size_t n = 200, p = 10;
    const FeatureMatrix x = random_matrix(n, p, seed);
    const Standardizer st = fit_standardizer(x);
    const FeatureMatrix z = st.apply(x);
    const auto c = covariance(z);
    const PcaModel m = pca_fit(x, st);
    const auto& w = m.components;
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t i = 0; i < p; ++i) {
        double cw = 0;
        for (std::size_t k = 0; k < p; ++k) cw += c[i * p + k] * w[k * p + j];
        worst_resid = std::max(worst_resid, std::abs(cw - m.eigenvalues[j] * w[i * p + j]));
      }
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = 0; b < p; ++b) {
        double d = 0;
        for (std::size_t k = 0; k < p; ++k) d += w[k * p + a] * w[k * p + b];
        worst_orth = std::max(worst_orth, std::abs(d - (a == b ? 1.0 : 0.0)));
      }
    double trace = 0, sum = 0;
    for (std::size_t i = 0; i < p; ++i) trace += c[i * p + i];
    for (double l : m.eigenvalues) sum += l;
    worst_trace = std::max(worst_trace, std::abs(trace - sum));
    const FeatureMatrix scores = pca_transform(x, m);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> back(p, 0.0);
      for (std::size_t f = 0; f < p; ++f)
        for (std::size_t j = 0; j < p; ++j) back[f] += scores.at(i, j) * w[f * p + j];
      const auto raw = st.invert(back);
      for (std::size_t f = 0; f < p; ++f) worst_rec = std::max(worst_rec, std::abs(raw[f] - x.at(i, f)));
    }
  }
  const double secs = seconds_since(t0);
  ck.expect(worst_resid < 1e-8, "eigen residual " + sci(worst_resid));
  ck.expect(worst_orth < 1e-8, "orthonormality " + sci(worst_orth));
  ck.expect(worst_rec < 1e-6, "reconstruction " + sci(worst_rec));
  ck.expect(worst_trace < 1e-8, "trace " + sci(worst_trace));
  ck.expect(secs < 1.0, "runtime " + num(secs) + " s");
  ck.note("residual " + sci(worst_resid));
  ck.note("orth " + sci(worst_orth));
  ck.note("recon " + sci(worst_rec));
  ck.note("trace " + sci(worst_trace));
  ck.note(num(secs) + " s");
  return ck.done();
}

PcaModel model_with_spectrum(const std::vector<double>& lambda) {
  PcaModel m;
  m.p = m.k = lambda.size();
  m.eigenvalues = lambda;
  double total = 0, run = 0;
  for (double l : lambda) total += l;
  for (double l : lambda) m.cum_explained.push_back((run += l) / total);
  return m;
}

Outcome select_k_suite() {
  Check ck;
  const std::size_t k = select_k(model_with_spectrum({0.6, 0.25, 0.10, 0.05}), 0.9);
  ck.expect(k == 3, "select_k gave " + std::to_string(k));
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> lambda(2 + rng.index(14));
    for (auto& l : lambda) l = rng.uniform() * rng.uniform();
    std::sort(lambda.rbegin(), lambda.rend());
    const PcaModel m = model_with_spectrum(lambda);
    std::size_t prev = 0;
    for (int s = 1; s <= 100; ++s) {
      const std::size_t cur = select_k(m, s / 100.0);
      ck.expect(cur >= prev, "non-monotone k on spectrum " + std::to_string(t));
      prev = cur;
    }
  }
  ck.note("k = " + std::to_string(k));
  ck.note("100 spectra monotone");
  return ck.done();
}

Outcome vif_suite() {
  Check ck;
  const auto t0 = std::chrono::steady_clock::now();
  double worst_r2 = 0, worst_prod = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const FeatureMatrix x = random_matrix(50, 5, 100 + seed);
    const CollinearityReport rep = collinearity(x);
    for (std::size_t j = 0; j < 5; ++j) {
      worst_r2 = std::max(worst_r2, std::abs(rep.entries[j].r2 - oracle::iterative_r2(x, j)));
      worst_prod = std::max(worst_prod, std::abs(rep.entries[j].vif * rep.entries[j].tolerance - 1.0));
    }
  }
  FeatureMatrix dup = random_matrix(50, 5, 3);
  for (std::size_t i = 0; i < dup.rows; ++i) dup.at(i, 4) = dup.at(i, 0) - 2.0 * dup.at(i, 1);
  const CollinearityReport drep = collinearity(dup);
  const bool flagged = drep.entries[4].vif_infinite && drep.entries[0].vif_infinite;
  const double spot = collinearity_entry("spot", 1.0 - 0.267).vif;
  const double secs = seconds_since(t0);
  ck.expect(worst_r2 < 1e-6, "R2 vs oracle " + sci(worst_r2));
  ck.expect(worst_prod < 1e-9, "vif*tol " + sci(worst_prod));
  ck.expect(flagged, "exact collinearity not flagged");
  ck.expect(std::abs(spot - 3.743) < 0.01, "T=0.267 gave VIF " + num(spot, 4));
  ck.expect(secs < 1.0, "runtime " + num(secs) + " s");
  ck.note("R2 diff " + sci(worst_r2));
  ck.note("VIF(T=0.267) " + num(spot, 4));
  ck.note(num(secs) + " s");
  return ck.done();
}

Outcome gradient_suite() {
  Check ck;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_name;
  const auto cases = gradcheck::layer_cases();
  for (const auto& lc : cases)
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const double e = gradcheck::layer_error(lc, seed);
      ck.expect(e < 1e-4, lc.name + " seed " + std::to_string(seed) + " error " + sci(e));
      if (e > worst) {
        worst = e;
        worst_name = lc.name;
      }
    }
  const double secs = seconds_since(t0);
  ck.expect(secs < 30.0, "runtime " + num(secs) + " s");
  ck.note(std::to_string(cases.size()) + " layer cases");
  ck.note("max rel error " + sci(worst) + " (" + worst_name + ")");
  ck.note(num(secs) + " s");
  return ck.done();
}

Outcome auc_suite() {
  Check ck;
  double worst = 0, worst_mono = 0;
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    EvalInput in;
    for (int i = 0; i < 100; ++i) {
      const int y = i < 2 ? i : static_cast<int>(rng.index(2));
      // Coarse grid for ties; positives shifted upward.
      const double raw = std::clamp(0.5 * rng.uniform() + 0.3 * y + 0.1 * rng.normal(), 0.0, 1.0);
      in.y.push_back(y);
      in.y_hat.push_back(std::round(raw * 20.0) / 20.0);
    }
    const double auc = roc_auc(in).auc;
    worst = std::max(worst, std::abs(auc - oracle::mann_whitney_auc(in)));
    EvalInput tr = in;
    for (auto& v : tr.y_hat) v = v * v * v;
    worst_mono = std::max(worst_mono, std::abs(roc_auc(tr).auc - auc));
  }
  ck.expect(worst < 1e-12, "Mann-Whitney diff " + sci(worst));
  ck.expect(worst_mono < 1e-12, "monotone transform diff " + sci(worst_mono));
  ck.note("max diff " + sci(worst));
  ck.note("transform diff " + sci(worst_mono));
  return ck.done();
}

Outcome metric_suite() {
  Check ck;
  const ClassMetrics m = metrics(ConfusionCounts{50, 10, 10, 30});
  auto near = [](const std::optional<double>& v, double want, double tol) { return v && std::abs(*v - want) <= tol; };
  ck.expect(near(m.accuracy, 0.8, 1e-12), "accuracy");
  ck.expect(near(m.precision, 0.8333, 1e-4), "precision");
  ck.expect(near(m.recall, 0.8333, 1e-4), "recall");
  ck.expect(near(m.f1, 0.8333, 1e-4), "f1");
  ck.expect(near(m.specificity, 0.75, 1e-12), "specificity");
  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    EvalInput in;
    const std::size_t n = 1 + rng.index(50);
    for (std::size_t i = 0; i < n; ++i) {
      in.y.push_back(static_cast<int>(rng.index(2)));
      in.y_hat.push_back(rng.uniform());
    }
    const ErrorStats e = error_stats(in);
    ck.expect(e.rmse >= e.mae, "rmse < mae on input " + std::to_string(t));
  }
  ck.note("hand case ok");
  ck.note("rmse >= mae on 1000 inputs");
  return ck.done();
}

Outcome jenks_suite() {
  Check ck;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(17);
  int done = 0;
  while (done < 100) {
    const std::size_t k = 1 + rng.index(5);
    const std::size_t n = k + rng.index(31 - k);
    const bool ties = rng.index(3) == 0;
    std::vector<double> v(n);
    for (auto& x : v) x = ties ? std::round(rng.uniform() * 8.0) : rng.uniform() * 100.0;
    if (std::set<double>(v.begin(), v.end()).size() < k) continue;
    const JenksResult r = jenks_breaks(v, k, 0, 1);
    const double dp = within_class_ssd(v, r.breaks);
    const double ex = oracle::jenks_exhaustive(v, k);
    ck.expect(std::abs(dp - ex) <= 1e-9 * std::max(1.0, ex),
              "instance " + std::to_string(done) + ": " + num(dp, 6) + " vs " + num(ex, 6));
    ++done;
  }
  const double secs = seconds_since(t0);
  ck.expect(secs < 10.0, "runtime " + num(secs) + " s");
  ck.note("100 instances");
  ck.note(num(secs) + " s");
  return ck.done();
}

// ---------------------------------------------------------------------------

std::string serialize(const SampleSet& s) {
  std::string out;
  for (std::size_t i = 0; i < s.points.size(); ++i)
    out += format_real(s.points[i].x) + "," + format_real(s.points[i].y) + "," + std::to_string(s.points[i].label) +
           (s.split[i] == Partition::train ? ",t\n" : ",v\n");
  return out;
}

struct SamplingRun {
  GridStack raw;
  GridStack masked;
  std::vector<InventoryPoint> landslides;
  std::vector<InventoryPoint> negatives;
  SampleSet set;
};

SamplingRun sampling_run() {
  SceneConfig cfg;
  cfg.nrows = cfg.ncols = 200;
  const Scene sc = gen_scene(cfg);
  SamplingRun r;
  r.raw = sc.lcf;
  r.masked = apply_mask(sc.lcf, window_feasibility(sc.lcf, kDefaultWindow));
  r.landslides = sc.inventory;
  r.negatives = sample_negatives(r.landslides, r.masked, kDefaultBufferMeters, 1234);
  std::vector<InventoryPoint> all = r.landslides;
  all.insert(all.end(), r.negatives.begin(), r.negatives.end());
  r.set = split(all, kDefaultTrainFraction, 99);
  return r;
}

Outcome sampling_suite() {
  Check ck;
  const SamplingRun a = sampling_run();
  const std::size_t npos = a.landslides.size();
  ck.expect(a.negatives.size() == npos,
            "balance " + std::to_string(a.negatives.size()) + ":" + std::to_string(npos));
  double closest = 1e300;
  for (const auto& n : a.negatives) {
    ck.expect(n.label == 0, "negative with label 1");
    for (const auto& p : a.landslides) closest = std::min(closest, std::hypot(n.x - p.x, n.y - p.y));
  }
  ck.expect(closest > kDefaultBufferMeters, "negative at " + num(closest) + " m");
  std::size_t train_pos = 0, train_neg = 0;
  for (std::size_t i = 0; i < a.set.points.size(); ++i)
    if (a.set.split[i] == Partition::train) (a.set.points[i].label == 1 ? train_pos : train_neg)++;
  const auto want = [](std::size_t n) { return static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n))); };
  ck.expect(train_pos == want(npos) && train_neg == want(a.negatives.size()),
            "train counts " + std::to_string(train_pos) + "/" + std::to_string(train_neg));
  const std::size_t half = kDefaultWindow / 2;
  for (const auto& p : a.set.points) {
    const auto v = extract_vector(a.raw, p);
    const PatchTensor t = extract_patch(a.raw, p, kDefaultWindow);
    for (std::size_t b = 0; b < v.size(); ++b) ck.expect(t.at(half, half, b) == v[b], "patch centre mismatch");
  }
  const SamplingRun b = sampling_run();
  const std::string ha = hex64(fnv1a64(serialize(a.set))), hb = hex64(fnv1a64(serialize(b.set)));
  ck.expect(ha == hb, "rerun hash " + ha + " vs " + hb);
  ck.note(std::to_string(npos) + "+" + std::to_string(a.negatives.size()) + " points");
  ck.note("min distance " + num(closest, 1) + " m");
  ck.note("train " + std::to_string(train_pos) + "+" + std::to_string(train_neg));
  ck.note("hash " + ha);
  return ck.done();
}

// ---------------------------------------------------------------------------

struct Toy {
  std::vector<std::array<double, 2>> x;
  std::vector<int> y;
};

Toy toy(std::size_t n, std::uint64_t seed) {
  Toy t;
  Rng rng(seed);
  while (t.x.size() < n) {
    const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
    if (std::abs(a + b) < 0.3) continue;  // margin
    t.x.push_back({a, b});
    t.y.push_back(a + b > 0 ? 1 : 0);
  }
  return t;
}

nn::Dataset as_dataset(const Toy& t, std::size_t lo, std::size_t hi, std::size_t patch) {
  nn::Dataset d;
  for (std::size_t i = lo; i < hi; ++i) {
    std::vector<double> v;
    for (std::size_t c = 0; c < patch * patch; ++c) v.insert(v.end(), t.x[i].begin(), t.x[i].end());
    d.inputs.push_back(std::move(v));
    d.labels.push_back(t.y[i]);
  }
  return d;
}

Outcome separable_suite() {
  Check ck;
  const auto t0 = std::chrono::steady_clock::now();
  const Toy data = toy(200, 3);
  const std::size_t n_train = 140;
  nn::TrainConfig tc;
  tc.seed = 5;
  tc.max_epochs = 100;
  struct Arch {
    std::string name;
    nn::ModelSpec spec;
    std::size_t patch;
  };
  const std::vector<Arch> archs{{"cnn1d", nn::build_cnn1d(2, 1), 1},
                                {"cnn2d", nn::build_cnn2d(7, 7, 2, 1), 7},
                                {"vit", nn::build_vit(7, 7, 2, 1), 7}};
  for (const auto& a : archs) {
    const nn::Dataset tr = as_dataset(data, 0, n_train, a.patch), va = as_dataset(data, n_train, 200, a.patch);
    const nn::Checkpoint ckpt = nn::train(a.spec, tr, va, tc);
    const auto scores = nn::predict_batch(ckpt, va.inputs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) correct += (scores[i] >= 0.5) == (va.labels[i] == 1);
    const double acc = static_cast<double>(correct) / static_cast<double>(scores.size());
    ck.expect(acc >= 0.99, a.name + " accuracy " + num(acc));
    ck.note(a.name + " " + num(acc) + " in " + std::to_string(ckpt.history.size()) + " epochs");
  }
  // Convex probe: logistic regression, full batch, 10 steps.
  const nn::Dataset tr = as_dataset(data, 0, n_train, 1), va = as_dataset(data, n_train, 200, 1);
  nn::TrainConfig full = tc;
  full.batch_size = n_train;
  full.max_epochs = 11;
  full.patience = 100;
  const nn::Checkpoint probe = nn::train(nn::build_linear(2, 2), tr, va, full);
  for (std::size_t e = 1; e < probe.history.size(); ++e)
    ck.expect(probe.history[e].train_loss <= probe.history[e - 1].train_loss,
              "probe loss rose at step " + std::to_string(e));
  const double secs = seconds_since(t0);
  ck.expect(secs < 120.0, "runtime " + num(secs) + " s");
  ck.note("probe nonincreasing");
  ck.note(num(secs, 1) + " s");
  return ck.done();
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> tree_hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = file_hash(e.path());
  return out;
}

struct EndToEnd {
  fs::path scene;
  fs::path run;
  bool ok = false;
};

Outcome end_to_end_suite(const fs::path& work, EndToEnd& e2e) {
  Check ck;
  e2e.scene = work / "scene";
  e2e.run = work / "run_a";
  fs::remove_all(work);
  SceneConfig cfg;  // 128 x 128, seed 42
  write_scene(gen_scene(cfg), e2e.scene);
  const fs::path config = e2e.scene / "pipeline.json";

  StageOptions opt;
  opt.out = e2e.run;
  const auto t0 = std::chrono::steady_clock::now();
  run_stage("all", config, opt);
  const double secs = seconds_since(t0);
  e2e.ok = true;
  ck.expect(secs < 300.0, "runtime " + num(secs, 1) + " s");

  std::map<std::string, double> auc;
  for (const auto& m : model_names())
    for (const auto& r : representation_names()) {
      const auto j = nlohmann::json::parse(read_text_file(e2e.run / "evaluate" / cell_name(r, m) / "metrics.json"));
      const double a = j.at("auc").get<double>();
      const double bar = 0.5 + 3.0 * j.at("permutation_null").at("sd_auc").get<double>();
      ck.expect(a > bar, cell_name(r, m) + " AUC " + num(a) + " <= " + num(bar));
      auc[cell_name(r, m)] = a;
    }
  int wins = 0;
  for (const auto& m : model_names()) wins += auc[cell_name("embed_full", m)] >= auc[cell_name("lcf", m)];
  ck.expect(wins >= 2, "embed_full >= lcf for " + std::to_string(wins) + " of 3 models");

  StageOptions opt_b;
  opt_b.out = work / "run_b";
  run_stage("all", config, opt_b);
  auto ha = tree_hashes(e2e.run), hb = tree_hashes(work / "run_b");
  ha.erase("run_manifest.json");
  hb.erase("run_manifest.json");
  std::size_t differing = 0;
  for (const auto& [f, h] : ha)
    if (!hb.count(f) || hb.at(f) != h) ++differing;
  ck.expect(ha.size() == hb.size() && differing == 0, std::to_string(differing) + " files differ between reruns");

  ck.note(num(secs, 1) + " s");
  for (const auto& m : model_names())
    ck.note(m + " AUC lcf/pca/full " + num(auc[cell_name("lcf", m)]) + "/" + num(auc[cell_name("embed_pca", m)]) +
            "/" + num(auc[cell_name("embed_full", m)]));
  ck.note(std::to_string(ha.size()) + " files identical");
  return ck.done();
}

Outcome map_suite(const EndToEnd& e2e) {
  Check ck;
  if (!e2e.ok) {
    ck.expect(false, "end-to-end run missing");
    return ck.done();
  }
  const PipelineConfig cfg = load_pipeline_config(e2e.scene / "pipeline.json");
  const Grid mask = read_ascii_grid(cfg.paths.mask);
  std::map<std::string, GridStack> raw;
  raw["lcf"] = apply_mask(load_stack(load_stack_manifest(cfg.paths.lcf_manifest), mask.header()), mask);
  raw["embed"] = apply_mask(load_stack(load_stack_manifest(cfg.paths.embed_manifest), mask.header()), mask);
  const PcaModel pca = PcaModel::from_json(read_text_file(e2e.run / "diagnose" / "pca_model.json"));

  std::vector<InventoryPoint> train_pts;
  {
    const std::string text = read_text_file(e2e.run / "sample" / "samples.csv");
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto f = split_csv_line(line);
      if (f.size() == 4 && f[3] == "train") train_pts.push_back({parse_real(f[0], "samples"), parse_real(f[1], "samples"), 1});
    }
  }
  std::size_t inventory = 0;
  {
    const std::string text = read_text_file(e2e.run / "ingest" / "inventory.csv");
    for (char ch : text) inventory += ch == '\n';
    inventory -= 1;
  }

  double worst = 0;
  std::size_t grids = 0;
  for (const auto& m : model_names())
    for (const auto& r : representation_names()) {
      const std::string cell = cell_name(r, m);
      const nn::Checkpoint ckpt = nn::load_checkpoint(e2e.run / "train" / cell);
      GridStack rep = raw.at(r == "lcf" ? "lcf" : "embed");
      if (r == "embed_pca") rep = pca_transform_stack(rep, pca);
      const GridStack ready = standardize_stack(rep, *ckpt.standardizer);
      std::vector<std::vector<double>> inputs;
      for (const auto& p : train_pts) {
        if (ckpt.spec.input_shape.size() == 1) {
          inputs.push_back(extract_vector(ready, p));
        } else {
          inputs.push_back(extract_patch(ready, p, ckpt.spec.input_shape[0]).data);
        }
      }
      const auto direct = nn::predict_batch(ckpt, inputs);
      const fs::path dir = e2e.run / "map" / cell;
      const Grid scores = read_ascii_grid(dir / "scores.asc");
      for (std::size_t i = 0; i < train_pts.size(); ++i) {
        const auto rc = scores.header().locate(train_pts[i].x, train_pts[i].y);
        const double s = rc ? scores.at(rc->first, rc->second) : scores.nodata();
        worst = std::max(worst, std::abs(s - direct[i]));
      }

      const Grid classes = read_ascii_grid(dir / "classes.asc");
      std::vector<std::pair<double, double>> pairs;
      for (std::size_t k = 0; k < scores.values().size(); ++k) {
        const bool sv = scores.is_valid_value(scores.values()[k]);
        const bool cv = classes.is_valid_value(classes.values()[k]);
        ck.expect(sv == cv, cell + ": score/class validity differs");
        if (sv && cv) pairs.emplace_back(scores.values()[k], classes.values()[k]);
      }
      std::sort(pairs.begin(), pairs.end());
      for (std::size_t k = 1; k < pairs.size(); ++k)
        ck.expect(pairs[k].second >= pairs[k - 1].second, cell + ": class not monotone in score");

      const auto occ = nlohmann::json::parse(read_text_file(dir / "occupancy.json"));
      std::size_t counted = occ.at("unclassified").get<std::size_t>();
      for (const auto& c : occ.at("classes")) counted += c.at("count").get<std::size_t>();
      ck.expect(counted == inventory && occ.at("total").get<std::size_t>() == inventory,
                cell + ": occupancy " + std::to_string(counted) + " of " + std::to_string(inventory));
    }
  ck.expect(worst <= 1e-12, "max |raster - predict_batch| " + sci(worst));

  for (const auto& e : fs::recursive_directory_iterator(e2e.run.parent_path()))
    if (e.is_regular_file() && e.path().extension() == ".asc") {
      const std::string text = read_text_file(e.path());
      ck.expect(format_ascii_grid(parse_ascii_grid(text, e.path().string())) == text,
                e.path().filename().string() + " does not round-trip");
      ++grids;
    }
  ck.note(std::to_string(train_pts.size()) + " training cells, max diff " + sci(worst));
  ck.note("inventory " + std::to_string(inventory));
  ck.note(std::to_string(grids) + " grids round-trip");
  return ck.done();
}

} // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: lsm_acceptance <work_dir> [criterion ...]\n";
    return 2;
  }
  const fs::path work = fs::absolute(argv[1]);
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };

  EndToEnd e2e;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"PCA oracle suite", pca_suite},
      {"cumulative-variance selection", select_k_suite},
      {"VIF oracle suite", vif_suite},
      {"gradient checks", gradient_suite},
      {"AUC equivalence", auc_suite},
      {"metric identities", metric_suite},
      {"Jenks optimality", jenks_suite},
      {"sampling rules", sampling_suite},
      {"separable-toy training", separable_suite},
      {"end-to-end synthetic", [&] { return end_to_end_suite(work, e2e); }},
      {"map pipeline", [&] {
         if (!e2e.ok && fs::exists(work / "run_a" / "report")) {
           e2e.scene = work / "scene";
           e2e.run = work / "run_a";
           e2e.ok = true;
         }
         return map_suite(e2e);
       }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!wanted(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << n << "] " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
