#pragma once

#include "lsm/sampling.hpp"

#include <string>
#include <vector>

namespace lsm {

/// Column standardization with sample (n-1) statistics.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<bool> degenerate;  // zero-variance columns; their std is replaced by 1
  double epsilon = 1e-12;

  std::size_t size() const { return mean.size(); }
  void apply_inplace(std::span<double> row) const;
  FeatureMatrix apply(const FeatureMatrix& x) const;
  std::vector<double> invert(std::span<const double> row) const;
};

Standardizer fit_standardizer(const FeatureMatrix& x);

/// Symmetric eigendecomposition by cyclic Jacobi rotations. `a` is n x n
/// row-major. Eigenvalues are returned descending; eigenvector j is column j
/// of the row-major n x n `vectors`.
struct SymmetricEigen {
  std::vector<double> values;
  std::vector<double> vectors;
};
SymmetricEigen jacobi_eigen(std::vector<double> a, std::size_t n, int max_sweeps = 100);

struct PcaModel {
  std::size_t p = 0;
  std::size_t k = 0;
  std::vector<double> components;  // p x p row-major, column j = eigenvector j
  std::vector<double> eigenvalues;
  std::vector<double> cum_explained;
  Standardizer standardizer;

  /// p x k row-major projection made of the leading k components.
  std::vector<double> projection() const;
  std::vector<double> transform_row(std::span<const double> row) const;
  std::string to_json() const;
  static PcaModel from_json(const std::string& text);
  /// Content hash of the serialized model.
  std::string hash() const;
};

std::vector<double> covariance(const FeatureMatrix& standardized);

/// Fit on standardized X; k is initialized to p.
PcaModel pca_fit(const FeatureMatrix& x, const Standardizer& standardizer);

/// Smallest k with cum_explained[k-1] >= threshold.
std::size_t select_k(const PcaModel& model, double threshold = 0.90);

FeatureMatrix pca_transform(const FeatureMatrix& x, const PcaModel& model);

inline constexpr double kToleranceThreshold = 0.1;
inline constexpr double kVifThreshold = 10.0;
inline constexpr double kMinTolerance = 1e-12;

struct CollinearityEntry {
  std::string feature;
  double r2 = 0.0;
  double tolerance = 1.0;
  double vif = 1.0;
  bool tolerance_ok = true;
  bool vif_ok = true;
  bool vif_infinite = false;
};

struct CollinearityReport {
  std::vector<CollinearityEntry> entries;

  std::string to_json() const;
  std::string to_csv() const;
};

/// Entry for one feature given its R^2 against the others.
CollinearityEntry collinearity_entry(std::string feature, double r2);

/// R^2 of the least-squares regression (with intercept) of column `target`
/// on all other columns, via normal equations.
double regression_r2(const FeatureMatrix& x, std::size_t target);

CollinearityReport collinearity(const FeatureMatrix& x, const std::vector<std::string>& names = {});

/// Cell-wise PCA projection of a stack into bands pc1..pck; invalid cells stay nodata.
GridStack pca_transform_stack(const GridStack& input, const PcaModel& model);

/// Cell-wise standardization of every band.
GridStack standardize_stack(const GridStack& input, const Standardizer& standardizer);

/// Rows of band values at the given points (labels copied from the points).
FeatureMatrix feature_matrix(const GridStack& input, const std::vector<InventoryPoint>& points);

} // namespace lsm
