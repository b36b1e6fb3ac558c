#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mlmc/model.hpp"
#include "mlmc/random.hpp"

namespace mlmc {

/// Terminal states of one fine/coarse Euler pair driven by the same Brownian
/// path. The coarse member is absent on level 1.
struct CoupledSample {
  Vector x_fine;
  std::optional<Vector> x_coarse;
  Vector w_T;  ///< sum of all fine Brownian increments
  int level = 1;
  double cost = 0.0;  ///< n_l + n_{l-1} Euler steps (n_1 on level 1)
};

/// Payoffs of one coupled sample, both multiplied by the same Girsanov
/// weight of the level's theta.
struct LevelPayoffs {
  double fine_value = 0.0;
  std::optional<double> coarse_value;
  Vector w_T;
  double cost = 0.0;

  double correction() const { return fine_value - coarse_value.value_or(0.0); }
};

/// Reusable Euler-Maruyama simulator for one model and grid layout. Holds
/// scratch buffers, so use one instance per worker.
class PathSimulator {
 public:
  PathSimulator(const SdeModel& model, const MlmcConfig& cfg);

  /// Simulates the theta-shifted SDE on the level's fine grid and, for
  /// level >= 2, on the coarse grid with increments summed in groups of M.
  /// If `fine_increments` is given it receives the n_l * q fine increments
  /// (step-major).
  const CoupledSample& simulate(int level, std::span<const double> theta,
                                const StreamKey& key,
                                std::vector<double>* fine_increments = nullptr);

  const SdeModel& model() const { return model_; }
  const MlmcConfig& config() const { return cfg_; }

 private:
  void euler_step(Vector& x, std::span<const double> dw, double h,
                  std::span<const double> theta, bool shifted);

  const SdeModel& model_;
  MlmcConfig cfg_;
  CoupledSample sample_;
  Vector dw_fine_, dw_coarse_, drift_, column_, dx_;
};

CoupledSample simulate_coupled(const SdeModel& model, const MlmcConfig& cfg,
                               std::span<const double> theta, const StreamKey& key);

LevelPayoffs level_payoff_difference(const SdeModel& model, const Payoff& payoff,
                                     const MlmcConfig& cfg, std::span<const double> theta,
                                     const StreamKey& key);

/// Same as level_payoff_difference but reusing a simulator's buffers.
LevelPayoffs level_payoffs(PathSimulator& sim, const Payoff& payoff, int level,
                           std::span<const double> theta, const StreamKey& key);

}  // namespace mlmc
