#include "mlmc/level_stats.hpp"

#include <algorithm>
#include <limits>

#include "mlmc/error.hpp"

namespace mlmc {

double LevelStats::mean() const {
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  return sum / static_cast<double>(count);
}

double LevelStats::variance() const {
  if (count < 2) throw StateError("variance needs at least two samples");
  const double m = mean();
  const double second = sum_sq / static_cast<double>(count);
  const double var = second - m * m;
  // Differences at the rounding level of the raw moments are cancellation
  // noise, e.g. a run of identical values.
  if (var <= 64.0 * std::numeric_limits<double>::epsilon() * second) return 0.0;
  return var;
}

double LevelStats::cost_per_sample() const {
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  return cost_total / static_cast<double>(count);
}

double LevelStats::kurtosis() const {
  const double var = variance();
  if (var <= 0.0) return 0.0;
  const double n = static_cast<double>(count);
  const double m = mean();
  const double m2 = sum_sq / n, m3 = sum_cube / n, m4 = sum_quad / n;
  const double central4 = m4 - 4.0 * m * m3 + 6.0 * m * m * m2 - 3.0 * m * m * m * m;
  return std::max(0.0, central4) / (var * var);
}

}  // namespace mlmc
