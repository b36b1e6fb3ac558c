#pragma once

#include <cstdint>

namespace mlmc {

/// Streaming power sums of one level's correction samples.
///
/// Merging is field-wise addition, so shards can be combined in any grouping;
/// the engine always merges fixed-size blocks in replicate order to keep the
/// floating-point result independent of the worker count.
struct LevelStats {
  int level = 0;
  std::uint64_t count = 0;
  double sum = 0.0;
  double sum_sq = 0.0;
  double sum_cube = 0.0;
  double sum_quad = 0.0;
  double cost_total = 0.0;

  void add(double value, double cost) {
    ++count;
    const double v2 = value * value;
    sum += value;
    sum_sq += v2;
    sum_cube += v2 * value;
    sum_quad += v2 * v2;
    cost_total += cost;
  }

  LevelStats& operator+=(const LevelStats& other) {
    count += other.count;
    sum += other.sum;
    sum_sq += other.sum_sq;
    sum_cube += other.sum_cube;
    sum_quad += other.sum_quad;
    cost_total += other.cost_total;
    return *this;
  }

  double mean() const;
  /// max(0, E[Y^2] - E[Y]^2), with pure rounding noise reported as 0.
  /// StateError unless count >= 2.
  double variance() const;
  double cost_per_sample() const;
  /// Standardized fourth moment; 0 when the variance vanishes.
  double kurtosis() const;
};

}  // namespace mlmc
