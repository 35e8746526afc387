#include "lsm/eval.hpp"

#include "lsm/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <limits>
#include <numeric>

namespace lsm {

void EvalInput::validate() const {
  if (y.empty()) throw ValidationError("eval: empty input");
  if (y.size() != y_hat.size()) throw ValidationError("eval: label/score length mismatch");
  for (int l : y)
    if (l != 0 && l != 1) throw ValidationError("eval: labels must be 0 or 1");
  for (double s : y_hat)
    if (!std::isfinite(s)) throw ValidationError("eval: non-finite score");
}

ConfusionCounts confusion(const EvalInput& in, double threshold) {
  in.validate();
  ConfusionCounts c;
  for (std::size_t i = 0; i < in.y.size(); ++i) {
    const bool pred = in.y_hat[i] >= threshold;
    if (in.y[i] == 1) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  return c;
}

namespace {

std::optional<double> ratio(double num, double den) {
  if (den == 0.0) return std::nullopt;
  return num / den;
}

} // namespace

ClassMetrics metrics(const ConfusionCounts& c) {
  const auto tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const auto fn = static_cast<double>(c.fn), tn = static_cast<double>(c.tn);
  ClassMetrics m;
  m.accuracy = ratio(tp + tn, tp + fp + fn + tn);
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  m.specificity = ratio(tn, tn + fp);
  if (m.precision && m.recall) m.f1 = ratio(2.0 * *m.precision * *m.recall, *m.precision + *m.recall);
  return m;
}

RocCurve roc_auc(const EvalInput& in) {
  in.validate();
  const std::size_t n = in.y.size();
  const auto pos = static_cast<std::size_t>(std::count(in.y.begin(), in.y.end(), 1));
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw ValidationError("roc_auc: both classes must be present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return in.y_hat[a] > in.y_hat[b]; });

  RocCurve roc;
  roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  // Twice the trapezoid area in units of (1/neg) x (1/pos); exact in integers.
  unsigned long long twice_area = 0;
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < n) {
    const double s = in.y_hat[order[i]];
    std::size_t dtp = 0, dfp = 0;
    while (i < n && in.y_hat[order[i]] == s) {
      (in.y[order[i]] == 1 ? dtp : dfp)++;
      ++i;
    }
    twice_area += static_cast<unsigned long long>(dfp) * (2ULL * tp + dtp);
    tp += dtp;
    fp += dfp;
    roc.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos), s});
  }
  roc.auc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return roc;
}

std::size_t histogram_bin(double e) {
  constexpr auto nb = static_cast<long>(kHistogramBins);
  auto edge = [](long i) { return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(kHistogramBins); };
  long b = static_cast<long>(std::floor((e + 1.0) * (static_cast<double>(kHistogramBins) / 2.0)));
  b = std::clamp(b, 0L, nb - 1);
  // Bin b covers (edge(b), edge(b+1)]; bin 0 also takes -1.
  while (b > 0 && e <= edge(b)) --b;
  while (b < nb - 1 && e > edge(b + 1)) ++b;
  return static_cast<std::size_t>(b);
}

ErrorStats error_stats(const EvalInput& in) {
  in.validate();
  ErrorStats s;
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < in.y.size(); ++i) {
    const double e = static_cast<double>(in.y[i]) - in.y_hat[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    s.histogram[histogram_bin(std::clamp(e, -1.0, 1.0))]++;
  }
  const auto m = static_cast<double>(in.y.size());
  s.mae = abs_sum / m;
  s.rmse = std::sqrt(sq_sum / m);
  return s;
}

MetricReport evaluate(const EvalInput& in, double threshold) {
  MetricReport r;
  r.threshold = threshold;
  r.counts = confusion(in, threshold);
  r.metrics = metrics(r.counts);
  r.roc = roc_auc(in);
  r.errors = error_stats(in);
  return r;
}

namespace {

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json();
}

} // namespace

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["threshold"] = threshold;
  j["confusion"] = {{"tp", counts.tp}, {"fp", counts.fp}, {"fn", counts.fn}, {"tn", counts.tn}};
  j["accuracy"] = opt(metrics.accuracy);
  j["precision"] = opt(metrics.precision);
  j["recall"] = opt(metrics.recall);
  j["specificity"] = opt(metrics.specificity);
  j["f1"] = opt(metrics.f1);
  j["auc"] = roc.auc;
  j["mae"] = errors.mae;
  j["rmse"] = errors.rmse;
  nlohmann::ordered_json pts = nlohmann::ordered_json::array();
  for (const auto& p : roc.points)
    pts.push_back({p.fpr, p.tpr, std::isfinite(p.threshold) ? nlohmann::ordered_json(p.threshold) : nlohmann::ordered_json()});
  j["roc"] = pts;
  j["error_histogram"] = {{"lo", -1.0}, {"hi", 1.0}, {"counts", errors.histogram}};
  return j.dump(2) + "\n";
}

std::string MetricReport::roc_csv() const {
  std::string out = "fpr,tpr,threshold\n";
  for (const auto& p : roc.points)
    out += format_real(p.fpr) + "," + format_real(p.tpr) + "," + (std::isfinite(p.threshold) ? format_real(p.threshold) : "inf") + "\n";
  return out;
}

std::string MetricReport::roc_svg(const std::string& title) const {
  constexpr double size = 400.0, margin = 50.0;
  const double span = size - 2 * margin;
  auto px = [&](double f) { return margin + f * span; };
  auto py = [&](double t) { return size - margin - t * span; };
  char buf[256];
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" viewBox=\"0 0 400 400\">\n";
  s += "<rect width=\"400\" height=\"400\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"black\"/>\n",
                margin, margin, span, span);
  s += buf;
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n", px(0), py(0),
                px(1), py(1));
  s += buf;
  for (int i = 0; i <= 4; ++i) {
    const double v = i / 4.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"11\" text-anchor=\"middle\">%.2f</text>\n", px(v),
                  size - margin + 16, v);
    s += buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"11\" text-anchor=\"end\">%.2f</text>\n",
                  margin - 6, py(v) + 4, v);
    s += buf;
  }
  s += "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"";
  for (const auto& p : roc.points) {
    std::snprintf(buf, sizeof buf, "%.3f,%.3f ", px(p.fpr), py(p.tpr));
    s += buf;
  }
  s += "\"/>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"13\">AUC = %.3f</text>\n", px(0.55), py(0.1), roc.auc);
  s += buf;
  std::snprintf(buf, sizeof buf, "<text x=\"200\" y=\"%g\" font-size=\"12\" text-anchor=\"middle\">False positive rate</text>\n",
                size - 12);
  s += buf;
  s += "<text x=\"14\" y=\"200\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 200)\">True positive rate</text>\n";
  if (!title.empty()) s += "<text x=\"200\" y=\"30\" font-size=\"13\" text-anchor=\"middle\">" + title + "</text>\n";
  s += "</svg>\n";
  return s;
}

} // namespace lsm
