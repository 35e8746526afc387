#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lsm {

/// Binary labels and continuous susceptibility scores in [0, 1].
struct EvalInput {
  std::vector<int> y;
  std::vector<double> y_hat;

  void validate() const;
};

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// nullopt marks a 0/0 ratio.
struct ClassMetrics {
  std::optional<double> accuracy, precision, recall, specificity, f1;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // +inf for the (0,0) origin
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

inline constexpr std::size_t kHistogramBins = 40;

struct ErrorStats {
  double mae = 0.0;
  double rmse = 0.0;
  std::array<std::size_t, kHistogramBins> histogram{};  // e = y - y_hat over [-1, 1]
};

struct MetricReport {
  ConfusionCounts counts;
  ClassMetrics metrics;
  RocCurve roc;
  ErrorStats errors;
  double threshold = 0.5;

  std::string to_json() const;
  std::string roc_csv() const;
  std::string roc_svg(const std::string& title = "") const;
};

/// Positive iff y_hat >= threshold.
ConfusionCounts confusion(const EvalInput& in, double threshold = 0.5);
ClassMetrics metrics(const ConfusionCounts& c);

/// Threshold sweep over distinct scores (descending, ties grouped) with
/// trapezoidal area.
RocCurve roc_auc(const EvalInput& in);

/// Bin index in [0, kHistogramBins) for an error in [-1, 1]; boundaries go to
/// the lower bin except the last edge.
std::size_t histogram_bin(double e);
ErrorStats error_stats(const EvalInput& in);

MetricReport evaluate(const EvalInput& in, double threshold = 0.5);

} // namespace lsm
