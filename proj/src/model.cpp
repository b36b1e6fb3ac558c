#include "mlmc/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mlmc/error.hpp"
#include "mlmc/random.hpp"

namespace mlmc {
namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

void SdeModel::validate() const {
  if (dim_state == 0 || dim_noise == 0) {
    throw InvalidArgument("model '" + label + "': dimensions must be positive");
  }
  if (!drift) throw InvalidArgument("model '" + label + "': missing drift");
  if (diffusion_cols.size() != dim_noise) {
    throw InvalidArgument("model '" + label +
                          "': need one diffusion column per noise dimension");
  }
  for (const auto& col : diffusion_cols) {
    if (!col) throw InvalidArgument("model '" + label + "': empty diffusion column");
  }
  if (x0.size() != dim_state || !all_finite(x0)) {
    throw InvalidArgument("model '" + label + "': x0 must be a finite d-vector");
  }
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw InvalidArgument("model '" + label + "': horizon must be positive");
  }
}

void MlmcConfig::validate() const {
  if (refine_factor < 2) throw InvalidArgument("refine_factor must be >= 2");
  if (base_steps < 1) throw InvalidArgument("base_steps must be >= 1");
  if (max_level < 1) throw InvalidArgument("max_level must be >= 1");
  // n_l must fit comfortably in 32 bits of Philox block counter.
  const double finest = static_cast<double>(base_steps) *
                        std::pow(static_cast<double>(refine_factor), max_level - 1);
  if (finest > 1e9) throw InvalidArgument("max_level too deep for refine_factor");
}

std::uint64_t MlmcConfig::steps(int level) const {
  if (level < 1 || level > max_level) {
    std::ostringstream msg;
    msg << "level " << level << " outside [1, " << max_level << "]";
    throw InvalidArgument(msg.str());
  }
  std::uint64_t n = static_cast<std::uint64_t>(base_steps);
  for (int l = 1; l < level; ++l) n *= static_cast<std::uint64_t>(refine_factor);
  return n;
}

double MlmcConfig::step_size(int level, double horizon) const {
  return horizon / static_cast<double>(steps(level));
}

double MlmcConfig::is_normalization(int level, double horizon) const {
  if (level <= 1) return 1.0;
  const double m = refine_factor;
  return std::pow(m, level) / ((m - 1.0) * horizon);
}

double girsanov_weight(std::span<const double> theta, std::span<const double> w_T,
                       double horizon) {
  if (theta.size() != w_T.size()) {
    throw InvalidArgument("girsanov_weight: theta and w_T differ in length");
  }
  if (!all_finite(theta) || !all_finite(w_T) || !std::isfinite(horizon)) {
    throw InvalidArgument("girsanov_weight: non-finite input");
  }
  double dot = 0.0, sq = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    dot += theta[j] * w_T[j];
    sq += theta[j] * theta[j];
  }
  return std::exp(-dot - 0.5 * sq * horizon);
}

void diffusion_times(const SdeModel& model, std::span<const double> x,
                     std::span<const double> theta, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  Vector col(model.dim_state);
  for (std::size_t j = 0; j < model.dim_noise; ++j) {
    if (theta[j] == 0.0) continue;
    model.diffusion_cols[j](x, col);
    for (std::size_t i = 0; i < model.dim_state; ++i) out[i] += col[i] * theta[j];
  }
}

StateFunction shifted_drift(const SdeModel& model, std::span<const double> theta) {
  if (theta.size() != model.dim_noise) {
    throw InvalidArgument("shifted_drift: theta must have length q");
  }
  Vector th(theta.begin(), theta.end());
  const bool zero = std::all_of(th.begin(), th.end(), [](double t) { return t == 0.0; });
  if (zero) return model.drift;
  return [model, th](std::span<const double> x, std::span<double> out) {
    model.drift(x, out);
    Vector shift(model.dim_state);
    diffusion_times(model, x, th, shift);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += shift[i];
  };
}

SdeModel make_gbm(double x0, double mu, double sigma, double horizon) {
  SdeModel m;
  m.dim_state = 1;
  m.dim_noise = 1;
  m.drift = [mu](std::span<const double> x, std::span<double> out) { out[0] = mu * x[0]; };
  m.diffusion_cols = {[sigma](std::span<const double> x, std::span<double> out) {
    out[0] = sigma * x[0];
  }};
  m.x0 = {x0};
  m.horizon = horizon;
  m.label = "gbm";
  m.validate();
  return m;
}

SdeModel make_correlated_gbm(std::size_t dim, double x0, double mu, double sigma,
                             double rho, double horizon) {
  if (dim == 0) throw InvalidArgument("gbm_correlated: dim must be positive");
  // Cholesky factor of the constant-correlation matrix.
  std::vector<Vector> chol(dim, Vector(dim, 0.0));
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = (i == j) ? 1.0 : rho;
      for (std::size_t k = 0; k < j; ++k) s -= chol[i][k] * chol[j][k];
      if (i == j && !(s > 0.0)) {
        throw InvalidArgument("gbm_correlated: correlation matrix not positive definite");
      }
      chol[i][j] = (i == j) ? std::sqrt(s) : s / chol[j][j];
    }
  }
  SdeModel m;
  m.dim_state = dim;
  m.dim_noise = dim;
  m.drift = [mu](std::span<const double> x, std::span<double> out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = mu * x[i];
  };
  for (std::size_t j = 0; j < dim; ++j) {
    Vector column(dim);
    for (std::size_t i = 0; i < dim; ++i) column[i] = sigma * chol[i][j];
    m.diffusion_cols.push_back([column](std::span<const double> x, std::span<double> out) {
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = column[i] * x[i];
    });
  }
  m.x0 = Vector(dim, x0);
  m.horizon = horizon;
  m.label = "gbm_correlated";
  m.validate();
  return m;
}

Payoff make_call(double strike) {
  return {[strike](std::span<const double> x) { return std::max(x[0] - strike, 0.0); },
          "call"};
}

Payoff make_put(double strike) {
  return {[strike](std::span<const double> x) { return std::max(strike - x[0], 0.0); },
          "put"};
}

Payoff make_basket_call(double strike) {
  return {[strike](std::span<const double> x) {
            double mean = 0.0;
            for (double v : x) mean += v;
            mean /= static_cast<double>(x.size());
            return std::max(mean - strike, 0.0);
          },
          "basket_call"};
}

Payoff make_digital(double strike, double payout) {
  return {[strike, payout](std::span<const double> x) { return x[0] > strike ? payout : 0.0; },
          "digital"};
}

Payoff make_constant(double value) {
  return {[value](std::span<const double>) { return value; }, "constant"};
}

LipschitzReport lipschitz_diagnostic(const SdeModel& model, double lo, double hi,
                                     std::size_t pairs, std::uint64_t seed) {
  model.validate();
  const std::size_t d = model.dim_state;
  RandomStream rng(StreamKey{seed, 0, 0, Purpose::pilot});
  Vector x(d), y(d), fx(d), fy(d);
  LipschitzReport report;
  for (std::size_t p = 0; p < pairs; ++p) {
    for (std::size_t i = 0; i < d; ++i) {
      x[i] = lo + (hi - lo) * rng.uniform();
      y[i] = lo + (hi - lo) * rng.uniform();
    }
    Vector diff(d);
    for (std::size_t i = 0; i < d; ++i) diff[i] = x[i] - y[i];
    const double dist = norm2(diff);
    if (dist == 0.0) continue;
    model.drift(x, fx);
    model.drift(y, fy);
    for (std::size_t i = 0; i < d; ++i) diff[i] = fx[i] - fy[i];
    double total = norm2(diff);
    for (const auto& col : model.diffusion_cols) {
      col(x, fx);
      col(y, fy);
      for (std::size_t i = 0; i < d; ++i) diff[i] = fx[i] - fy[i];
      total += norm2(diff);
    }
    report.constant = std::max(report.constant, total / dist);
    ++report.pairs;
  }
  return report;
}

}  // namespace mlmc
