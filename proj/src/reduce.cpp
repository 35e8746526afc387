#include "lsm/reduce.hpp"

#include "lsm/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <json.hpp>

namespace lsm {

// ---------------------------------------------------------------------------
// Standardizer

void Standardizer::apply_inplace(std::span<double> row) const {
  for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mean[j]) / std[j];
}

FeatureMatrix Standardizer::apply(const FeatureMatrix& x) const {
  if (x.cols != size()) throw ValidationError("standardize: column count mismatch");
  FeatureMatrix out = x;
  for (std::size_t i = 0; i < x.rows; ++i) apply_inplace({out.data.data() + i * x.cols, x.cols});
  return out;
}

std::vector<double> Standardizer::invert(std::span<const double> row) const {
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = row[j] * std[j] + mean[j];
  return out;
}

Standardizer fit_standardizer(const FeatureMatrix& x) {
  if (x.rows < 2) throw ValidationError("fit_standardizer: need at least 2 rows");
  Standardizer s;
  s.mean.assign(x.cols, 0.0);
  s.std.assign(x.cols, 0.0);
  s.degenerate.assign(x.cols, false);
  const auto n = static_cast<double>(x.rows);
  for (std::size_t j = 0; j < x.cols; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) m += x.at(i, j);
    m /= n;
    double ss = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double d = x.at(i, j) - m;
      ss += d * d;
    }
    const double sd = std::sqrt(ss / (n - 1.0));
    s.mean[j] = m;
    if (sd <= s.epsilon) {
      s.std[j] = 1.0;
      s.degenerate[j] = true;
    } else {
      s.std[j] = sd;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Jacobi eigensolver

SymmetricEigen jacobi_eigen(std::vector<double> a, std::size_t n, int max_sweeps) {
  if (a.size() != n * n) throw ValidationError("jacobi_eigen: matrix is not n x n");
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto A = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };

  double scale = 0.0;
  for (double x : a) scale = std::max(scale, std::abs(x));

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
    if (off == 0.0 || std::sqrt(off) <= 1e-15 * scale) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = A(p, q);
        if (apq == 0.0) continue;
        const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return A(x, x) > A(y, y); });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = A(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.vectors[i * n + j] = v[i * n + order[j]];
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCA

std::vector<double> covariance(const FeatureMatrix& xs) {
  const std::size_t p = xs.cols;
  std::vector<double> c(p * p, 0.0);
  for (std::size_t i = 0; i < xs.rows; ++i) {
    const auto row = xs.row(i);
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = a; b < p; ++b) c[a * p + b] += row[a] * row[b];
  }
  const double denom = static_cast<double>(xs.rows) - 1.0;
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = a; b < p; ++b) {
      c[a * p + b] /= denom;
      c[b * p + a] = c[a * p + b];
    }
  return c;
}

PcaModel pca_fit(const FeatureMatrix& x, const Standardizer& standardizer) {
  if (x.rows < 2 || x.cols < 1) throw ValidationError("pca_fit: need n >= 2 and p >= 1");
  for (double v : x.data)
    if (!std::isfinite(v)) throw ValidationError("pca_fit: non-finite input");
  const FeatureMatrix xs = standardizer.apply(x);
  const std::size_t p = x.cols;
  auto eig = jacobi_eigen(covariance(xs), p);

  PcaModel m;
  m.p = p;
  m.k = p;
  m.standardizer = standardizer;
  m.eigenvalues = eig.values;
  for (auto& l : m.eigenvalues)
    if (l < 0.0) l = 0.0;  // round-off negatives
  m.components = std::move(eig.vectors);

  for (std::size_t j = 0; j < p; ++j) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < p; ++i)
      if (std::abs(m.components[i * p + j]) > std::abs(m.components[arg * p + j])) arg = i;
    if (m.components[arg * p + j] < 0.0)
      for (std::size_t i = 0; i < p; ++i) m.components[i * p + j] = -m.components[i * p + j];
  }

  const double total = std::accumulate(m.eigenvalues.begin(), m.eigenvalues.end(), 0.0);
  m.cum_explained.resize(p);
  double run = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    run += m.eigenvalues[j];
    m.cum_explained[j] = total > 0.0 ? std::min(1.0, run / total) : 1.0;
  }
  m.cum_explained[p - 1] = 1.0;
  return m;
}

std::size_t select_k(const PcaModel& model, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ValidationError("select_k: threshold must be in (0, 1]");
  for (std::size_t j = 0; j < model.p; ++j)
    if (model.cum_explained[j] >= threshold) return j + 1;
  return model.p;
}

std::vector<double> PcaModel::projection() const {
  std::vector<double> w(p * k);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < k; ++j) w[i * k + j] = components[i * p + j];
  return w;
}

std::vector<double> PcaModel::transform_row(std::span<const double> row) const {
  if (row.size() != p)
    throw ValidationError("pca_transform: expected " + std::to_string(p) + " columns, got " + std::to_string(row.size()));
  std::vector<double> s(row.begin(), row.end());
  standardizer.apply_inplace(s);
  std::vector<double> z(k, 0.0);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < k; ++j) z[j] += s[i] * components[i * p + j];
  return z;
}

FeatureMatrix pca_transform(const FeatureMatrix& x, const PcaModel& model) {
  if (x.cols != model.p)
    throw ValidationError("pca_transform: expected " + std::to_string(model.p) + " columns, got " +
                          std::to_string(x.cols));
  FeatureMatrix z(x.rows, model.k);
  z.labels = x.labels;
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto row = model.transform_row(x.row(i));
    std::copy(row.begin(), row.end(), z.data.begin() + static_cast<std::ptrdiff_t>(i * model.k));
  }
  return z;
}

std::string PcaModel::to_json() const {
  nlohmann::ordered_json j;
  j["p"] = p;
  j["k"] = k;
  j["eigenvalues"] = eigenvalues;
  j["cum_explained"] = cum_explained;
  j["projection"] = projection();
  j["components"] = components;
  nlohmann::ordered_json s;
  s["mean"] = standardizer.mean;
  s["std"] = standardizer.std;
  s["degenerate"] = standardizer.degenerate;
  s["epsilon"] = standardizer.epsilon;
  j["standardizer"] = s;
  return j.dump(2) + "\n";
}

PcaModel PcaModel::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    PcaModel m;
    m.p = j.at("p").get<std::size_t>();
    m.k = j.at("k").get<std::size_t>();
    m.eigenvalues = j.at("eigenvalues").get<std::vector<double>>();
    m.cum_explained = j.at("cum_explained").get<std::vector<double>>();
    m.components = j.at("components").get<std::vector<double>>();
    const auto& s = j.at("standardizer");
    m.standardizer.mean = s.at("mean").get<std::vector<double>>();
    m.standardizer.std = s.at("std").get<std::vector<double>>();
    m.standardizer.degenerate = s.at("degenerate").get<std::vector<bool>>();
    m.standardizer.epsilon = s.at("epsilon").get<double>();
    if (m.components.size() != m.p * m.p || m.k < 1 || m.k > m.p || m.standardizer.size() != m.p)
      throw ValidationError("pca model: inconsistent dimensions");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("pca model: ") + e.what());
  }
}

std::string PcaModel::hash() const { return hex64(fnv1a64(to_json())); }

// ---------------------------------------------------------------------------
// Collinearity

CollinearityEntry collinearity_entry(std::string feature, double r2) {
  CollinearityEntry e;
  e.feature = std::move(feature);
  e.r2 = std::clamp(r2, 0.0, 1.0);
  double t = 1.0 - e.r2;
  if (t < kMinTolerance) {
    t = kMinTolerance;
    e.vif_infinite = true;
  }
  e.tolerance = t;
  e.vif = 1.0 / t;
  e.tolerance_ok = !e.vif_infinite && e.tolerance > kToleranceThreshold;
  e.vif_ok = !e.vif_infinite && e.vif < kVifThreshold;
  return e;
}

double regression_r2(const FeatureMatrix& x, std::size_t target) {
  const std::size_t n = x.rows, p = x.cols;
  const std::size_t q = p - 1;
  std::vector<double> mean(p, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) mean[j] += x.at(i, j);
  for (auto& m : mean) m /= static_cast<double>(n);

  std::vector<std::size_t> preds;
  for (std::size_t j = 0; j < p; ++j)
    if (j != target) preds.push_back(j);

  // Centered normal equations G b = h; the intercept absorbs the means.
  std::vector<double> g(q * q, 0.0), h(q, 0.0);
  double sst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = x.at(i, target) - mean[target];
    sst += y * y;
    for (std::size_t a = 0; a < q; ++a) {
      const double xa = x.at(i, preds[a]) - mean[preds[a]];
      h[a] += xa * y;
      for (std::size_t b = a; b < q; ++b) g[a * q + b] += xa * (x.at(i, preds[b]) - mean[preds[b]]);
    }
  }
  if (sst == 0.0) return 1.0;  // constant column is fully explained by the intercept
  for (std::size_t a = 0; a < q; ++a)
    for (std::size_t b = 0; b < a; ++b) g[a * q + b] = g[b * q + a];

  // Pseudo-inverse through the eigenbasis tolerates exactly dependent predictors.
  const auto eig = jacobi_eigen(g, q);
  const double cutoff = (eig.values.empty() ? 0.0 : eig.values[0]) * 1e-12 * static_cast<double>(q);
  std::vector<double> beta(q, 0.0);
  for (std::size_t j = 0; j < q; ++j) {
    if (eig.values[j] <= cutoff) continue;
    double proj = 0.0;
    for (std::size_t a = 0; a < q; ++a) proj += eig.vectors[a * q + j] * h[a];
    proj /= eig.values[j];
    for (std::size_t a = 0; a < q; ++a) beta[a] += eig.vectors[a * q + j] * proj;
  }

  double ssr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double fit = 0.0;
    for (std::size_t a = 0; a < q; ++a) fit += beta[a] * (x.at(i, preds[a]) - mean[preds[a]]);
    const double r = (x.at(i, target) - mean[target]) - fit;
    ssr += r * r;
  }
  return std::clamp(1.0 - ssr / sst, 0.0, 1.0);
}

CollinearityReport collinearity(const FeatureMatrix& x, const std::vector<std::string>& names) {
  if (x.cols < 2) throw ValidationError("collinearity: need at least 2 features");
  if (x.rows <= x.cols)
    throw ValidationError("collinearity: underdetermined regression (n=" + std::to_string(x.rows) +
                          " <= p=" + std::to_string(x.cols) + ")");
  if (!names.empty() && names.size() != x.cols) throw ValidationError("collinearity: name count mismatch");
  CollinearityReport rep;
  for (std::size_t j = 0; j < x.cols; ++j)
    rep.entries.push_back(collinearity_entry(names.empty() ? "x" + std::to_string(j + 1) : names[j], regression_r2(x, j)));
  return rep;
}

std::string CollinearityReport::to_json() const {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["feature"] = e.feature;
    j["r2"] = e.r2;
    j["tolerance"] = e.tolerance;
    j["vif"] = e.vif;
    j["tolerance_ok"] = e.tolerance_ok;
    j["vif_ok"] = e.vif_ok;
    j["vif_infinite"] = e.vif_infinite;
    arr.push_back(j);
  }
  nlohmann::ordered_json root;
  root["tolerance_threshold"] = kToleranceThreshold;
  root["vif_threshold"] = kVifThreshold;
  root["features"] = arr;
  return root.dump(2) + "\n";
}

std::string CollinearityReport::to_csv() const {
  std::string out = "feature,r2,tolerance,vif,tolerance_ok,vif_ok\n";
  for (const auto& e : entries)
    out += e.feature + "," + format_real(e.r2) + "," + format_real(e.tolerance) + "," + format_real(e.vif) + "," +
           (e.tolerance_ok ? "true" : "false") + "," + (e.vif_ok ? "true" : "false") + "\n";
  return out;
}

} // namespace lsm

namespace lsm {

GridStack pca_transform_stack(const GridStack& input, const PcaModel& model) {
  if (input.band_count() != model.p)
    throw ValidationError("pca_transform_stack: stack has " + std::to_string(input.band_count()) +
                          " bands, model expects " + std::to_string(model.p));
  const auto& h = input.header();
  std::vector<Grid> out(model.k, Grid(h));
  std::vector<double> cell(model.p);
  for (std::size_t r = 0; r < h.nrows; ++r)
    for (std::size_t c = 0; c < h.ncols; ++c) {
      if (!input.valid(r, c)) continue;
      for (std::size_t b = 0; b < model.p; ++b) cell[b] = input.band(b).at(r, c);
      const auto z = model.transform_row(cell);
      for (std::size_t j = 0; j < model.k; ++j) out[j].at(r, c) = z[j];
    }
  std::vector<std::string> names;
  for (std::size_t j = 0; j < model.k; ++j) names.push_back("pc" + std::to_string(j + 1));
  return stack(std::move(out), std::move(names));
}

GridStack standardize_stack(const GridStack& input, const Standardizer& standardizer) {
  if (input.band_count() != standardizer.size())
    throw ValidationError("standardize_stack: stack has " + std::to_string(input.band_count()) +
                          " bands, standardizer has " + std::to_string(standardizer.size()));
  const auto& h = input.header();
  std::vector<Grid> out(input.band_count(), Grid(h));
  for (std::size_t r = 0; r < h.nrows; ++r)
    for (std::size_t c = 0; c < h.ncols; ++c) {
      if (!input.valid(r, c)) continue;
      for (std::size_t b = 0; b < input.band_count(); ++b)
        out[b].at(r, c) = (input.band(b).at(r, c) - standardizer.mean[b]) / standardizer.std[b];
    }
  return stack(std::move(out), input.band_names());
}

FeatureMatrix feature_matrix(const GridStack& input, const std::vector<InventoryPoint>& points) {
  FeatureMatrix x(points.size(), input.band_count());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto v = extract_vector(input, points[i]);
    std::copy(v.begin(), v.end(), x.data.begin() + static_cast<std::ptrdiff_t>(i * x.cols));
    x.labels[i] = points[i].label;
  }
  return x;
}

} // namespace lsm
