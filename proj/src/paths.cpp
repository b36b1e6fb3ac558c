#include "mlmc/paths.hpp"

#include <algorithm>
#include <cmath>

#include "mlmc/error.hpp"

namespace mlmc {

PathSimulator::PathSimulator(const SdeModel& model, const MlmcConfig& cfg)
    : model_(model), cfg_(cfg) {
  model_.validate();
  cfg_.validate();
  const std::size_t d = model_.dim_state, q = model_.dim_noise;
  dw_fine_.resize(q);
  dw_coarse_.resize(q);
  drift_.resize(d);
  column_.resize(d);
  dx_.resize(d);
  sample_.w_T.resize(q);
}

void PathSimulator::euler_step(Vector& x, std::span<const double> dw, double h,
                               std::span<const double> theta, bool shifted) {
  const std::size_t d = model_.dim_state;
  model_.drift(x, drift_);
  for (std::size_t i = 0; i < d; ++i) dx_[i] = drift_[i] * h;
  for (std::size_t j = 0; j < model_.dim_noise; ++j) {
    model_.diffusion_cols[j](x, column_);
    const double driver = shifted ? theta[j] * h + dw[j] : dw[j];
    for (std::size_t i = 0; i < d; ++i) dx_[i] += column_[i] * driver;
  }
  for (std::size_t i = 0; i < d; ++i) x[i] += dx_[i];
}

const CoupledSample& PathSimulator::simulate(int level, std::span<const double> theta,
                                             const StreamKey& key,
                                             std::vector<double>* fine_increments) {
  const std::size_t q = model_.dim_noise;
  if (theta.size() != q) throw InvalidArgument("simulate_coupled: theta must have length q");
  const std::uint64_t n_fine = cfg_.steps(level);
  const std::uint64_t m = static_cast<std::uint64_t>(cfg_.refine_factor);
  const bool coupled = level >= 2;
  const double h_fine = model_.horizon / static_cast<double>(n_fine);
  const double h_coarse = h_fine * static_cast<double>(m);
  const double sqrt_h = std::sqrt(h_fine);
  const bool shifted = std::any_of(theta.begin(), theta.end(), [](double t) { return t != 0.0; });

  sample_.level = level;
  sample_.x_fine = model_.x0;
  if (coupled) {
    if (!sample_.x_coarse) sample_.x_coarse.emplace();
    *sample_.x_coarse = model_.x0;
  } else {
    sample_.x_coarse.reset();
  }
  std::fill(sample_.w_T.begin(), sample_.w_T.end(), 0.0);
  std::fill(dw_coarse_.begin(), dw_coarse_.end(), 0.0);
  if (fine_increments) fine_increments->clear();

  RandomStream rng(key);
  for (std::uint64_t step = 0; step < n_fine; ++step) {
    for (std::size_t j = 0; j < q; ++j) {
      dw_fine_[j] = sqrt_h * rng.normal();
      sample_.w_T[j] += dw_fine_[j];
      dw_coarse_[j] += dw_fine_[j];
    }
    if (fine_increments) fine_increments->insert(fine_increments->end(), dw_fine_.begin(), dw_fine_.end());
    euler_step(sample_.x_fine, dw_fine_, h_fine, theta, shifted);
    if (coupled && (step + 1) % m == 0) {
      euler_step(*sample_.x_coarse, dw_coarse_, h_coarse, theta, shifted);
      std::fill(dw_coarse_.begin(), dw_coarse_.end(), 0.0);
    }
  }
  sample_.cost = static_cast<double>(n_fine + (coupled ? n_fine / m : 0));
  return sample_;
}

CoupledSample simulate_coupled(const SdeModel& model, const MlmcConfig& cfg,
                               std::span<const double> theta, const StreamKey& key) {
  PathSimulator sim(model, cfg);
  return sim.simulate(key.level, theta, key);
}

LevelPayoffs level_payoffs(PathSimulator& sim, const Payoff& payoff, int level,
                           std::span<const double> theta, const StreamKey& key) {
  const CoupledSample& s = sim.simulate(level, theta, key);
  const double weight = girsanov_weight(theta, s.w_T, sim.model().horizon);
  LevelPayoffs out;
  out.fine_value = payoff.eval(s.x_fine) * weight;
  if (s.x_coarse) out.coarse_value = payoff.eval(*s.x_coarse) * weight;
  out.w_T = s.w_T;
  out.cost = s.cost;
  return out;
}

LevelPayoffs level_payoff_difference(const SdeModel& model, const Payoff& payoff,
                                     const MlmcConfig& cfg, std::span<const double> theta,
                                     const StreamKey& key) {
  PathSimulator sim(model, cfg);
  return level_payoffs(sim, payoff, key.level, theta, key);
}

}  // namespace mlmc
