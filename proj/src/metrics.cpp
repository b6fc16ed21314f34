#include "deepdemand/metrics.hpp"

#include <cmath>

#include "deepdemand/common.hpp"

namespace deepdemand {

double geh(double observed, double predicted) {
  const double y = std::max(observed, 0.0);
  const double yhat = std::max(predicted, 0.0);
  const double denom = y + yhat;
  if (denom == 0.0) return 0.0;
  const double diff = y - yhat;
  return std::sqrt(2.0 * diff * diff / denom);
}

MetricSummary compute_metrics(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.empty()) throw ValidationError("compute_metrics: empty input");
  const double n = static_cast<double>(pairs.size());
  double geh_sum = 0.0, abs_sum = 0.0, y_sum = 0.0;
  for (const auto& [y, yhat] : pairs) {
    geh_sum += geh(y, yhat);
    abs_sum += std::abs(y - yhat);
    y_sum += y;
  }
  const double y_mean = y_sum / n;
  double sse = 0.0, sst = 0.0;
  for (const auto& [y, yhat] : pairs) {
    sse += (y - yhat) * (y - yhat);
    sst += (y - y_mean) * (y - y_mean);
  }
  MetricSummary summary;
  summary.mgeh = geh_sum / n;
  summary.mae = abs_sum / n;
  if (sst > 0.0) summary.r2 = 1.0 - sse / sst;
  return summary;
}

}  // namespace deepdemand
