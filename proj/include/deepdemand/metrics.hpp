#pragma once

#include <optional>
#include <utility>
#include <vector>

namespace deepdemand {

/// GEH volume-comparison statistic. Defined as 0 when both values are zero;
/// negative predictions are floored at zero inside the statistic so the
/// denominator stays positive (observed volumes are non-negative by
/// invariant, some baselines can predict below zero).
double geh(double observed, double predicted);

struct MetricSummary {
  double mgeh = 0.0;
  double mae = 0.0;
  std::optional<double> r2;  // nullopt when the observed variance is zero
};

/// MGEH, MAE and R^2 over (observed, predicted) pairs. Throws on empty input.
MetricSummary compute_metrics(const std::vector<std::pair<double, double>>& pairs);

}  // namespace deepdemand
