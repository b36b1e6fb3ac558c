#include "mlmc/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include "json.hpp"

namespace mlmc {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kReplicateSalt = 0x7265706c;

// Config parsing --------------------------------------------------------

/// Walks one JSON object, remembering which keys were consumed so unknown
/// ones can be reported with their full path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) out = as_double(*v, at(key));
  }
  void get(const std::string& key, int& out) {
    if (const json* v = find(key)) out = as_int(*v, at(key));
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) out = as_u64(*v, at(key));
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(at(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string& key, std::optional<int>& out) {
    if (const json* v = find(key)) {
      if (v->is_null()) out.reset();
      else out = as_int(*v, at(key));
    }
  }
  void get(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(at(key), "expected an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        out.push_back(as_double((*v)[i], at(key) + "[" + std::to_string(i) + "]"));
      }
    }
  }
  void get(const std::string& key, std::map<std::string, double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_object()) throw ConfigError(at(key), "expected an object of numbers");
      out.clear();
      for (auto it = v->begin(); it != v->end(); ++it) out[it.key()] = as_double(it.value(), at(key) + "." + it.key());
    }
  }

  /// Nested object, or an empty one when the key is absent.
  Reader child(const std::string& key) {
    const json* v = find(key);
    return v ? Reader(*v, at(key)) : Reader(empty(), at(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(at(it.key()), "unknown field");
    }
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }
  static double as_double(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    return v.get<double>();
  }
  static int as_int(const json& v, const std::string& path) {
    if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < -(1ll << 31) || x > (1ll << 31) - 1) throw ConfigError(path, "integer out of range");
    return static_cast<int>(x);
  }
  static std::uint64_t as_u64(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) throw ConfigError(path, "must be non-negative");
    throw ConfigError(path, "expected a non-negative integer");
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const std::map<std::string, std::map<std::string, double>>& model_defaults() {
  static const std::map<std::string, std::map<std::string, double>> d = {
      {"gbm", {{"x0", 1.0}, {"mu", 0.05}, {"sigma", 0.2}, {"T", 1.0}}},
      {"correlated_gbm", {{"dim", 2.0}, {"x0", 1.0}, {"mu", 0.05}, {"sigma", 0.2}, {"rho", 0.5}, {"T", 1.0}}},
  };
  return d;
}

const std::map<std::string, std::map<std::string, double>>& payoff_defaults() {
  static const std::map<std::string, std::map<std::string, double>> d = {
      {"call", {{"strike", 1.0}}},
      {"put", {{"strike", 1.0}}},
      {"basket_call", {{"strike", 1.0}}},
      {"digital", {{"strike", 1.0}, {"payout", 1.0}}},
      {"constant", {{"value", 0.0}}},
  };
  return d;
}

/// Fills missing parameters with defaults; rejects unknown names.
void complete_params(const std::string& path,
                     const std::map<std::string, std::map<std::string, double>>& catalog,
                     const std::string& name, std::map<std::string, double>& params) {
  auto it = catalog.find(name);
  if (it == catalog.end()) throw ConfigError(path + ".name", "unknown name '" + name + "'");
  for (const auto& [k, v] : params) {
    if (!it->second.count(k)) throw ConfigError(path + ".params." + k, "unknown parameter for " + name);
  }
  for (const auto& [k, v] : it->second) params.emplace(k, v);
}

template <class E>
E enum_from(const std::string& path, const std::string& text,
            const std::vector<std::pair<const char*, E>>& table) {
  for (const auto& [name, value] : table) {
    if (text == name) return value;
  }
  std::string options;
  for (const auto& [name, value] : table) options += (options.empty() ? "" : ", ") + std::string(name);
  throw ConfigError(path, "'" + text + "' is not one of " + options);
}

template <class E>
const char* enum_name(E value, const std::vector<std::pair<const char*, E>>& table) {
  for (const auto& [name, v] : table) {
    if (v == value) return name;
  }
  return "?";
}

const std::vector<std::pair<const char*, ExperimentKind>> kKinds = {
    {"price", ExperimentKind::price},
    {"price_is", ExperimentKind::price_is},
    {"price_is_adaptive", ExperimentKind::price_is_adaptive},
    {"risk_eta", ExperimentKind::risk_eta},
    {"risk_var_cvar", ExperimentKind::risk_var_cvar},
    {"rates_sweep", ExperimentKind::rates_sweep},
};
const std::vector<std::pair<const char*, ThetaMethod>> kMethods = {
    {"zero", ThetaMethod::zero},
    {"saa", ThetaMethod::saa},
    {"robbins_monro", ThetaMethod::robbins_monro},
};
const std::vector<std::pair<const char*, RiskScheme>> kSchemes = {
    {"uniform", RiskScheme::uniform},
    {"adaptive", RiskScheme::adaptive},
    {"nested_mc", RiskScheme::nested_mc},
};

/// Runs `check` and turns an InvalidArgument into a ConfigError at `path`.
template <class F>
void check_at(const std::string& path, F&& check) {
  try {
    check();
  } catch (const InvalidArgument& e) {
    throw ConfigError(path, e.what());
  }
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Run helpers -----------------------------------------------------------

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

MlmcConfig mlmc_config(const ExperimentConfig& c, std::uint64_t seed) {
  MlmcConfig cfg;
  cfg.refine_factor = c.mlmc.refine_factor;
  cfg.base_steps = c.mlmc.base_steps;
  cfg.max_level = c.mlmc.max_level;
  cfg.seed = seed;
  return cfg;
}

RunOptions run_options(const ExperimentConfig& c) {
  RunOptions opt;
  opt.pilot_samples = c.mlmc.pilot_samples;
  opt.initial_levels = c.mlmc.initial_levels;
  opt.fixed_levels = c.mlmc.fixed_levels;
  opt.exec.threads = c.mlmc.threads;
  return opt;
}

std::vector<LevelRow> level_rows(const std::vector<LevelStats>& levels,
                                 const std::vector<Vector>& thetas) {
  std::vector<LevelRow> rows;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const LevelStats& s = levels[i];
    LevelRow r;
    r.level = s.level;
    r.samples = s.count;
    r.mean = s.mean();
    r.variance = s.count >= 2 ? s.variance() : 0.0;
    r.cost = s.cost_per_sample();
    r.kurtosis = s.count >= 2 ? s.kurtosis() : std::nan("");
    if (i < thetas.size()) {
      double n2 = 0.0;
      for (double t : thetas[i]) n2 += t * t;
      r.theta_norm = std::sqrt(n2);
    }
    rows.push_back(r);
  }
  return rows;
}

void fill_from(ReportRecord& rec, const MlmcEstimate& est) {
  rec.estimate = est.value;
  rec.std_error = est.std_error;
  rec.total_cost = est.total_cost;
  rec.rates = est.rates;
  rec.bias_converged = est.bias_converged;
  rec.levels = level_rows(est.levels, est.level_thetas);
  rec.warnings = est.warnings;
}

void fill_from(ReportRecord& rec, const RiskEstimate& est) {
  rec.estimate = est.eta;
  rec.std_error = est.std_error;
  rec.total_cost = est.total_cost;
  rec.rates = est.rates;
  rec.variance_slope = est.variance_slope;
  rec.bias_converged = est.bias_converged;
  rec.levels = level_rows(est.levels, {});
  rec.warnings = est.warnings;
}

ThetaSchedule make_schedule(const ExperimentConfig& c, const SdeModel& model, const Payoff& payoff,
                            const MlmcConfig& cfg) {
  switch (c.is.method) {
    case ThetaMethod::zero:
      return ThetaSchedule::zero(model.dim_noise, c.is.schedule_levels);
    case ThetaMethod::saa: {
      SaaScheduleOptions opt;
      opt.pilot_samples = c.is.pilot_samples;
      opt.exec.threads = c.mlmc.threads;
      return optimize_saa_schedule(model, payoff, cfg, c.is.schedule_levels, opt);
    }
    case ThetaMethod::robbins_monro:
      return optimize_rm_schedule(model, payoff, cfg, c.is.schedule_levels, c.is.rm);
  }
  throw InvalidArgument("unknown theta method");
}

ReportRecord run_rates_sweep(const ExperimentConfig& c, std::uint64_t seed, ReportRecord rec) {
  const RatesSettings& rs = c.rates;
  std::vector<LevelStats> levels;
  Execution exec;
  exec.threads = c.mlmc.threads;
  if (rs.target == "price") {
    const SdeModel model = build_model(c.model);
    const Payoff payoff = build_payoff(c.payoff);
    const MlmcConfig cfg = mlmc_config(c, seed);
    const Vector zero(model.dim_noise, 0.0);
    for (int l = rs.first_level; l <= rs.last_level; ++l) {
      levels.push_back(accumulate_level(model, payoff, cfg, zero, l, rs.samples_per_level, {}, exec));
    }
  } else {
    const RiskProblem problem = build_risk_problem(c.risk);
    NestedSpec spec;
    spec.scheme = c.risk.scheme == RiskScheme::adaptive ? NestedScheme::adaptive : NestedScheme::uniform;
    spec.adaptive = c.risk.adaptive;
    spec.n0_inner = spec.scheme == NestedScheme::adaptive ? c.risk.adaptive.n0_inner : c.risk.n0_inner;
    spec.eps = c.eps.front();
    spec.seed = seed;
    for (int l = rs.first_level; l <= rs.last_level; ++l) {
      levels.push_back(nested_level_stats(problem, spec, l, rs.samples_per_level, {}, exec));
    }
  }
  double value = 0.0, var = 0.0, cost = 0.0;
  for (const LevelStats& s : levels) {
    value += s.mean();
    var += s.variance() / static_cast<double>(s.count);
    cost += s.cost_total;
  }
  rec.eps = 0.0;
  rec.estimate = value;
  rec.std_error = std::sqrt(var);
  rec.total_cost = cost;
  rec.levels = level_rows(levels, {});
  if (levels.size() >= 3) {
    rec.rates = fit_rates(levels);
    rec.variance_slope = -rec.rates->beta;
  }
  return rec;
}

ReportRecord run_one(const ExperimentConfig& c, int replicate, double eps) {
  ReportRecord rec;
  rec.kind = c.kind;
  rec.replicate = replicate;
  rec.seed = replicate_seed(c.seed, replicate);
  rec.config_hash = config_hash(c);
  rec.eps = eps;
  rec.started_at = utc_now();
  const RunOptions opt = run_options(c);
  switch (c.kind) {
    case ExperimentKind::price:
    case ExperimentKind::price_is:
    case ExperimentKind::price_is_adaptive: {
      const SdeModel model = build_model(c.model);
      const Payoff payoff = build_payoff(c.payoff);
      const MlmcConfig cfg = mlmc_config(c, rec.seed);
      if (c.kind == ExperimentKind::price) {
        fill_from(rec, run_mlmc(model, payoff, cfg, eps, opt));
      } else if (c.kind == ExperimentKind::price_is) {
        const ThetaSchedule schedule = make_schedule(c, model, payoff, cfg);
        fill_from(rec, run_is_mlmc(model, payoff, cfg, eps, schedule, opt, c.is.baseline_samples));
      } else {
        fill_from(rec, run_adaptive_is_mlmc(model, payoff, cfg, eps, c.is.rm, opt).estimate);
      }
      rec.oracle = price_oracle(c.model, c.payoff);
      break;
    }
    case ExperimentKind::risk_eta: {
      const RiskProblem problem = build_risk_problem(c.risk);
      NestedOptions nopt;
      nopt.run = opt;
      nopt.max_level = c.risk.max_level;
      if (c.risk.scheme == RiskScheme::nested_mc) {
        const auto outer = static_cast<std::uint64_t>(std::ceil(c.risk.outer_const / (eps * eps)));
        const auto inner = std::max<std::uint64_t>(2, static_cast<std::uint64_t>(std::ceil(c.risk.inner_const / eps)));
        fill_from(rec, nested_mc(problem, outer, inner, rec.seed, opt.exec));
      } else if (c.risk.scheme == RiskScheme::uniform) {
        fill_from(rec, nested_mlmc_uniform(problem, eps, rec.seed, nopt, c.risk.n0_inner));
      } else {
        fill_from(rec, nested_mlmc_adaptive(problem, eps, c.risk.adaptive, rec.seed, nopt));
      }
      if (problem.oracle) rec.oracle = problem.oracle->eta(problem.threshold);
      break;
    }
    case ExperimentKind::risk_var_cvar: {
      const RiskProblem problem = build_risk_problem(c.risk);
      VarCvarOptions vopt;
      vopt.nested.run = opt;
      vopt.nested.max_level = c.risk.max_level;
      vopt.adaptive = c.risk.adaptive;
      vopt.pilot_scenarios = c.risk.pilot_scenarios;
      vopt.pilot_inner = c.risk.pilot_inner;
      vopt.seed = rec.seed;
      const VarCvarResult r = var_cvar(problem, c.risk.quantile, eps, vopt);
      rec.estimate = r.var;
      rec.std_error = std::nan("");
      rec.total_cost = r.total_cost;
      rec.bias_converged = r.tail.bias_converged;
      rec.levels = level_rows(r.tail.levels, {});
      rec.warnings = r.tail.warnings;
      VarCvarSummary s;
      s.quantile = r.quantile;
      s.var = r.var;
      s.cvar = r.cvar;
      s.cvar_std_error = r.cvar_std_error;
      s.stop_cause = r.stop_cause;
      s.bracket_lo = r.bracket_lo;
      s.bracket_hi = r.bracket_hi;
      s.bisection_steps = static_cast<int>(r.steps.size());
      if (problem.oracle && c.risk.problem == "gaussian") {
        const boost::math::normal n01;
        const double v = boost::math::quantile(boost::math::complement(n01, c.risk.quantile));
        s.var_oracle = v;
        s.cvar_oracle = boost::math::pdf(n01, v) / c.risk.quantile;
      }
      rec.oracle = s.var_oracle;
      rec.var_cvar = s;
      break;
    }
    case ExperimentKind::rates_sweep:
      rec = run_rates_sweep(c, rec.seed, rec);
      break;
  }
  rec.finished_at = utc_now();
  return rec;
}

template <class E>
[[noreturn]] void rethrow_as(const E& e, const std::string& context) {
  throw E(context + e.what());
}

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

std::string fmt(double x) {
  if (!std::isfinite(x)) return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string fmt(const std::optional<double>& x) { return x ? fmt(*x) : ""; }

std::string experiment_label(const ReportRecord& r) {
  return std::string(to_string(r.kind)) + "@" + fmt(r.eps);
}

}  // namespace

const char* to_string(ExperimentKind kind) { return enum_name(kind, kKinds); }

void ExperimentConfig::validate() const {
  if (eps.empty()) throw ConfigError("eps", "at least one eps is required");
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (!(eps[i] > 0.0) || !std::isfinite(eps[i])) {
      throw ConfigError("eps[" + std::to_string(i) + "]", "must be positive and finite");
    }
  }
  if (replicates < 1) throw ConfigError("replicates", "must be at least 1");
  if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");

  check_at("mlmc", [&] { mlmc_config(*this, seed).validate(); });
  check_at("mlmc", [&] { run_options(*this).validate(); });
  if (mlmc.threads < 0) throw ConfigError("mlmc.threads", "must be >= 0");
  if (mlmc.initial_levels > mlmc.max_level) throw ConfigError("mlmc.initial_levels", "exceeds mlmc.max_level");
  if (mlmc.fixed_levels && *mlmc.fixed_levels > mlmc.max_level) {
    throw ConfigError("mlmc.fixed_levels", "exceeds mlmc.max_level");
  }

  ModelSpec m = model;
  complete_params("model", model_defaults(), m.name, m.params);
  check_at("model.params", [&] { build_model(m).validate(); });
  PayoffSpec p = payoff;
  complete_params("payoff", payoff_defaults(), p.name, p.params);
  check_at("payoff.params", [&] { build_payoff(p); });

  if (is.pilot_samples < 2) throw ConfigError("is.pilot_samples", "must be at least 2");
  if (is.schedule_levels < 1) throw ConfigError("is.schedule_levels", "must be at least 1");
  if (is.baseline_samples == 1) throw ConfigError("is.baseline_samples", "must be 0 or at least 2");
  check_at("is.rm", [&] { is.rm.validate(); });

  if (risk.problem != "gaussian") throw ConfigError("risk.problem", "unknown problem '" + risk.problem + "'");
  if (std::isnan(risk.threshold)) throw ConfigError("risk.threshold", "must be a number");
  if (risk.portfolio_size < 1) throw ConfigError("risk.portfolio_size", "must be at least 1");
  check_at("risk.adaptive", [&] { risk.adaptive.validate(); });
  if (risk.n0_inner < 2) throw ConfigError("risk.n0_inner", "must be at least 2");
  if (!(risk.quantile > 0.0 && risk.quantile < 1.0)) throw ConfigError("risk.quantile", "must lie in (0, 1)");
  if (risk.max_level < 1 || risk.max_level > 24) throw ConfigError("risk.max_level", "must lie in [1, 24]");
  if (!(risk.outer_const > 0.0)) throw ConfigError("risk.outer_const", "must be positive");
  if (!(risk.inner_const > 0.0)) throw ConfigError("risk.inner_const", "must be positive");
  if (risk.pilot_scenarios < 10) throw ConfigError("risk.pilot_scenarios", "must be at least 10");
  if (risk.pilot_inner < 2) throw ConfigError("risk.pilot_inner", "must be at least 2");

  if (rates.target != "price" && rates.target != "risk") {
    throw ConfigError("rates.target", "must be \"price\" or \"risk\"");
  }
  if (rates.samples_per_level < 2) throw ConfigError("rates.samples_per_level", "must be at least 2");
  const int lowest = rates.target == "price" ? 1 : 0;
  if (rates.first_level < lowest) throw ConfigError("rates.first_level", "must be >= " + std::to_string(lowest));
  if (rates.last_level < rates.first_level) throw ConfigError("rates.last_level", "must be >= rates.first_level");
  if (kind == ExperimentKind::rates_sweep && rates.target == "price" && rates.last_level > mlmc.max_level) {
    throw ConfigError("rates.last_level", "exceeds mlmc.max_level");
  }
  if (rates.target == "risk" && rates.last_level > 24) throw ConfigError("rates.last_level", "must be <= 24");
  if (kind == ExperimentKind::rates_sweep && rates.target == "risk" && risk.scheme == RiskScheme::nested_mc) {
    throw ConfigError("risk.scheme", "a risk rates sweep needs the uniform or adaptive scheme");
  }
}

ExperimentConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Reader root(doc, "");
  std::string text = to_string(c.kind);
  root.get("experiment", text);
  c.kind = enum_from(root.at("experiment"), text, kKinds);

  {
    Reader r = root.child("model");
    r.get("name", c.model.name);
    r.get("params", c.model.params);
    r.finish();
    complete_params("model", model_defaults(), c.model.name, c.model.params);
  }
  {
    Reader r = root.child("payoff");
    r.get("name", c.payoff.name);
    r.get("params", c.payoff.params);
    r.finish();
    complete_params("payoff", payoff_defaults(), c.payoff.name, c.payoff.params);
  }
  root.get("eps", c.eps);
  {
    Reader r = root.child("mlmc");
    r.get("refine_factor", c.mlmc.refine_factor);
    r.get("base_steps", c.mlmc.base_steps);
    r.get("max_level", c.mlmc.max_level);
    r.get("pilot_samples", c.mlmc.pilot_samples);
    r.get("initial_levels", c.mlmc.initial_levels);
    r.get("fixed_levels", c.mlmc.fixed_levels);
    r.get("threads", c.mlmc.threads);
    r.finish();
  }
  {
    Reader r = root.child("is");
    std::string method = enum_name(c.is.method, kMethods);
    r.get("method", method);
    c.is.method = enum_from(r.at("method"), method, kMethods);
    r.get("pilot_samples", c.is.pilot_samples);
    r.get("schedule_levels", c.is.schedule_levels);
    r.get("baseline_samples", c.is.baseline_samples);
    Reader rm = r.child("rm");
    rm.get("radius", c.is.rm.radius);
    rm.get("gamma0", c.is.rm.gamma0);
    rm.get("n0", c.is.rm.n0);
    rm.get("iterations", c.is.rm.iterations);
    rm.get("polyak", c.is.rm.polyak);
    std::uint64_t window = c.is.rm.window;
    rm.get("window", window);
    c.is.rm.window = static_cast<std::size_t>(window);
    rm.finish();
    r.finish();
  }
  {
    Reader r = root.child("risk");
    r.get("problem", c.risk.problem);
    r.get("threshold", c.risk.threshold);
    r.get("portfolio_size", c.risk.portfolio_size);
    std::string scheme = enum_name(c.risk.scheme, kSchemes);
    r.get("scheme", scheme);
    c.risk.scheme = enum_from(r.at("scheme"), scheme, kSchemes);
    r.get("n0_inner", c.risk.n0_inner);
    r.get("quantile", c.risk.quantile);
    r.get("max_level", c.risk.max_level);
    r.get("outer_const", c.risk.outer_const);
    r.get("inner_const", c.risk.inner_const);
    r.get("pilot_scenarios", c.risk.pilot_scenarios);
    r.get("pilot_inner", c.risk.pilot_inner);
    Reader a = r.child("adaptive");
    a.get("C", c.risk.adaptive.confidence_const);
    a.get("r", c.risk.adaptive.exponent_r);
    a.get("q", c.risk.adaptive.moment_q);
    a.get("c_N", c.risk.adaptive.eps_cap_const);
    a.get("N0", c.risk.adaptive.n0_inner);
    a.get("perfect", c.risk.adaptive.perfect);
    a.finish();
    r.finish();
  }
  {
    Reader r = root.child("rates");
    r.get("target", c.rates.target);
    r.get("samples_per_level", c.rates.samples_per_level);
    r.get("first_level", c.rates.first_level);
    r.get("last_level", c.rates.last_level);
    r.finish();
  }
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  root.get("replicates", c.replicates);
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string canonical_json(const ExperimentConfig& c) {
  json j;
  j["experiment"] = to_string(c.kind);
  j["model"] = {{"name", c.model.name}, {"params", c.model.params}};
  j["payoff"] = {{"name", c.payoff.name}, {"params", c.payoff.params}};
  j["eps"] = c.eps;
  j["mlmc"] = {{"refine_factor", c.mlmc.refine_factor},
               {"base_steps", c.mlmc.base_steps},
               {"max_level", c.mlmc.max_level},
               {"pilot_samples", c.mlmc.pilot_samples},
               {"initial_levels", c.mlmc.initial_levels},
               {"fixed_levels", c.mlmc.fixed_levels ? json(*c.mlmc.fixed_levels) : json(nullptr)},
               {"threads", c.mlmc.threads}};
  j["is"] = {{"method", enum_name(c.is.method, kMethods)},
             {"pilot_samples", c.is.pilot_samples},
             {"schedule_levels", c.is.schedule_levels},
             {"baseline_samples", c.is.baseline_samples},
             {"rm",
              {{"radius", c.is.rm.radius},
               {"gamma0", c.is.rm.gamma0},
               {"n0", c.is.rm.n0},
               {"iterations", c.is.rm.iterations},
               {"polyak", c.is.rm.polyak},
               {"window", static_cast<std::uint64_t>(c.is.rm.window)}}}};
  j["risk"] = {{"problem", c.risk.problem},
               {"threshold", number_or_null(c.risk.threshold)},
               {"portfolio_size", c.risk.portfolio_size},
               {"scheme", enum_name(c.risk.scheme, kSchemes)},
               {"n0_inner", c.risk.n0_inner},
               {"quantile", c.risk.quantile},
               {"max_level", c.risk.max_level},
               {"outer_const", c.risk.outer_const},
               {"inner_const", c.risk.inner_const},
               {"pilot_scenarios", c.risk.pilot_scenarios},
               {"pilot_inner", c.risk.pilot_inner},
               {"adaptive",
                {{"C", c.risk.adaptive.confidence_const},
                 {"r", c.risk.adaptive.exponent_r},
                 {"q", c.risk.adaptive.moment_q},
                 {"c_N", c.risk.adaptive.eps_cap_const},
                 {"N0", c.risk.adaptive.n0_inner},
                 {"perfect", c.risk.adaptive.perfect}}}};
  j["rates"] = {{"target", c.rates.target},
                {"samples_per_level", c.rates.samples_per_level},
                {"first_level", c.rates.first_level},
                {"last_level", c.rates.last_level}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["replicates"] = c.replicates;
  return j.dump(2);
}

std::string config_hash(const ExperimentConfig& c) {
  ExperimentConfig key = c;
  key.mlmc.threads = 0;
  key.output_dir = "-";
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical_json(key)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

SdeModel build_model(const ModelSpec& spec) {
  ModelSpec s = spec;
  complete_params("model", model_defaults(), s.name, s.params);
  const auto& p = s.params;
  if (s.name == "gbm") return make_gbm(p.at("x0"), p.at("mu"), p.at("sigma"), p.at("T"));
  const double dim = p.at("dim");
  if (!(dim >= 1.0) || dim != std::floor(dim)) throw InvalidArgument("dim must be a positive integer");
  return make_correlated_gbm(static_cast<std::size_t>(dim), p.at("x0"), p.at("mu"), p.at("sigma"),
                             p.at("rho"), p.at("T"));
}

Payoff build_payoff(const PayoffSpec& spec) {
  PayoffSpec s = spec;
  complete_params("payoff", payoff_defaults(), s.name, s.params);
  const auto& p = s.params;
  if (s.name == "call") return make_call(p.at("strike"));
  if (s.name == "put") return make_put(p.at("strike"));
  if (s.name == "basket_call") return make_basket_call(p.at("strike"));
  if (s.name == "digital") return make_digital(p.at("strike"), p.at("payout"));
  return make_constant(p.at("value"));
}

RiskProblem build_risk_problem(const RiskSettings& risk) {
  if (risk.problem != "gaussian") throw InvalidArgument("unknown risk problem " + risk.problem);
  return make_gaussian_problem(risk.threshold, risk.portfolio_size);
}

std::optional<double> price_oracle(const ModelSpec& model, const PayoffSpec& payoff) {
  ModelSpec m = model;
  PayoffSpec p = payoff;
  complete_params("model", model_defaults(), m.name, m.params);
  complete_params("payoff", payoff_defaults(), p.name, p.params);
  if (p.name == "constant") return p.params.at("value");
  if (m.name != "gbm") return std::nullopt;
  const double x0 = m.params.at("x0"), mu = m.params.at("mu"), sigma = m.params.at("sigma"),
               t = m.params.at("T");
  const double fwd = x0 * std::exp(mu * t);
  if (p.name != "call" && p.name != "put" && p.name != "digital") return std::nullopt;
  const double k = p.params.at("strike");
  const double sd = sigma * std::sqrt(t);
  double call, prob_itm;
  if (sd == 0.0 || k <= 0.0) {
    call = std::max(fwd - k, 0.0);
    prob_itm = fwd > k ? 1.0 : 0.0;
  } else {
    const double d1 = (std::log(fwd / k) + 0.5 * sd * sd) / sd;
    call = fwd * normal_cdf(d1) - k * normal_cdf(d1 - sd);
    prob_itm = normal_cdf(d1 - sd);
  }
  if (p.name == "call") return call;
  if (p.name == "put") return call - (fwd - k);
  return p.params.at("payout") * prob_itm;
}

std::uint64_t replicate_seed(std::uint64_t seed, int replicate) {
  return replicate == 0 ? seed : mix_seed(seed, kReplicateSalt + static_cast<std::uint64_t>(replicate));
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  ExperimentResult out;
  out.config = config;
  const std::vector<double> eps_list =
      config.kind == ExperimentKind::rates_sweep ? std::vector<double>{config.eps.front()} : config.eps;
  for (int r = 0; r < config.replicates; ++r) {
    for (double eps : eps_list) {
      const std::string ctx = std::string(to_string(config.kind)) + " replicate " + std::to_string(r) +
                              " eps " + fmt(eps) + ": ";
      try {
        out.records.push_back(run_one(config, r, eps));
      } catch (const BiasTargetUnreachable& e) {
        throw BiasTargetUnreachable(ctx + e.what(), e.partial());
      } catch (const SaaNotConverged& e) {
        throw SaaNotConverged(ctx + e.what(), e.last_iterate());
      } catch (const ConfigError&) {
        throw;
      } catch (const ConvergenceError& e) {
        rethrow_as(e, ctx);
      } catch (const BracketError& e) {
        rethrow_as(e, ctx);
      } catch (const DegenerateObjective& e) {
        rethrow_as(e, ctx);
      } catch (const InvalidArgument& e) {
        rethrow_as(e, ctx);
      } catch (const StateError& e) {
        rethrow_as(e, ctx);
      }
    }
  }
  return out;
}

std::string record_json(const ReportRecord& r, bool with_timestamps) {
  json j;
  j["experiment"] = to_string(r.kind);
  j["replicate"] = r.replicate;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  if (with_timestamps) {
    j["started_at"] = r.started_at;
    j["finished_at"] = r.finished_at;
  }
  j["eps"] = r.eps;
  json summary = {{"estimate", number_or_null(r.estimate)},
                  {"std_error", number_or_null(r.std_error)},
                  {"total_cost", number_or_null(r.total_cost)},
                  {"bias_converged", r.bias_converged}};
  if (r.rates) {
    summary["alpha"] = number_or_null(r.rates->alpha);
    summary["beta"] = number_or_null(r.rates->beta);
    summary["gamma"] = number_or_null(r.rates->gamma);
    summary["fit_levels"] = {r.rates->fit_first, r.rates->fit_last};
  }
  if (r.variance_slope) summary["variance_slope"] = number_or_null(*r.variance_slope);
  j["summary"] = summary;
  if (r.oracle) {
    j["oracle"] = {{"value", *r.oracle}, {"error", number_or_null(r.estimate - *r.oracle)}};
  }
  if (r.var_cvar) {
    const VarCvarSummary& v = *r.var_cvar;
    json vc = {{"quantile", v.quantile},
               {"var", v.var},
               {"cvar", v.cvar},
               {"cvar_std_error", number_or_null(v.cvar_std_error)},
               {"stop_cause", v.stop_cause},
               {"bracket", {v.bracket_lo, v.bracket_hi}},
               {"bisection_steps", v.bisection_steps}};
    if (v.var_oracle) vc["var_oracle"] = *v.var_oracle;
    if (v.cvar_oracle) vc["cvar_oracle"] = *v.cvar_oracle;
    j["var_cvar"] = vc;
  }
  json levels = json::array();
  for (const LevelRow& l : r.levels) {
    json row = {{"level", l.level},
                {"N", l.samples},
                {"mean", number_or_null(l.mean)},
                {"var", number_or_null(l.variance)},
                {"cost", number_or_null(l.cost)},
                {"kurtosis", number_or_null(l.kurtosis)}};
    if (l.theta_norm) row["theta_norm"] = *l.theta_norm;
    levels.push_back(row);
  }
  j["levels"] = levels;
  j["warnings"] = r.warnings;
  return j.dump(2);
}

void write_outputs(const ExperimentResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
  auto open = [&](const std::string& name) {
    std::ofstream f(dir / name);
    if (!f) throw Error("cannot write " + (dir / name).string());
    return f;
  };

  const std::string hash = config_hash(result.config);
  for (int r = 0; r < result.config.replicates; ++r) {
    json runs = json::array();
    for (const ReportRecord& rec : result.records) {
      if (rec.replicate == r) runs.push_back(json::parse(record_json(rec)));
    }
    json report = {{"config_hash", hash},
                   {"config", json::parse(canonical_json(result.config))},
                   {"replicate", r},
                   {"seed", replicate_seed(result.config.seed, r)},
                   {"runs", runs}};
    auto f = open("report_" + std::to_string(r) + ".json");
    f << report.dump(2) << "\n";
  }

  auto levels = open("levels.csv");
  levels << "# mlmc levels.csv v1\n"
         << "experiment,replicate,level,N,mean,var,cost,kurtosis,theta_norm\n";
  for (const ReportRecord& rec : result.records) {
    for (const LevelRow& l : rec.levels) {
      levels << experiment_label(rec) << ',' << rec.replicate << ',' << l.level << ',' << l.samples << ','
             << fmt(l.mean) << ',' << fmt(l.variance) << ',' << fmt(l.cost) << ',' << fmt(l.kurtosis) << ','
             << fmt(l.theta_norm) << '\n';
    }
  }

  auto summary = open("summary.csv");
  summary << "# mlmc summary.csv v1\n"
          << "experiment,replicate,seed,eps,estimate,std_error,total_cost,alpha,beta,gamma,"
             "variance_slope,oracle,bias_converged,var,cvar\n";
  for (const ReportRecord& rec : result.records) {
    summary << to_string(rec.kind) << ',' << rec.replicate << ',' << rec.seed << ',' << fmt(rec.eps) << ','
            << fmt(rec.estimate) << ',' << fmt(rec.std_error) << ',' << fmt(rec.total_cost) << ','
            << (rec.rates ? fmt(rec.rates->alpha) : "") << ',' << (rec.rates ? fmt(rec.rates->beta) : "")
            << ',' << (rec.rates ? fmt(rec.rates->gamma) : "") << ',' << fmt(rec.variance_slope) << ','
            << fmt(rec.oracle) << ',' << (rec.bias_converged ? 1 : 0) << ','
            << (rec.var_cvar ? fmt(rec.var_cvar->var) : "") << ','
            << (rec.var_cvar ? fmt(rec.var_cvar->cvar) : "") << '\n';
  }
}

SweepResult fit_cost_slope(const std::vector<double>& eps, const std::vector<double>& costs) {
  if (eps.size() != costs.size()) throw InvalidArgument("sweep: eps and cost lists differ in length");
  if (eps.size() < 3) throw InvalidArgument("sweep: need at least 3 eps values");
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (!(eps[i] > 0.0) || !(costs[i] > 0.0)) throw InvalidArgument("sweep: eps and costs must be positive");
  }
  const auto [lo, hi] = std::minmax_element(eps.begin(), eps.end());
  if (*hi < 4.0 * *lo * (1.0 - 1e-12)) throw InvalidArgument("sweep: eps values must span a factor of 4");
  const double n = static_cast<double>(eps.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double x = std::log(eps[i]), y = std::log(costs[i]);
    sx += x; sy += y; sxx += x * x; sxy += x * y;
  }
  SweepResult s;
  s.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  s.intercept = (sy - s.slope * sx) / n;
  s.eps = eps;
  s.mean_costs = costs;
  return s;
}

SweepResult sweep_and_fit(const ExperimentConfig& config, ExperimentResult* runs) {
  if (config.kind == ExperimentKind::rates_sweep) {
    throw InvalidArgument("sweep: rates_sweep runs do not depend on eps");
  }
  // Fail on a bad eps list before spending any simulation time.
  fit_cost_slope(config.eps, std::vector<double>(config.eps.size(), 1.0));
  ExperimentResult result = run_experiment(config);
  std::vector<double> costs(config.eps.size(), 0.0);
  for (const ReportRecord& rec : result.records) {
    for (std::size_t i = 0; i < config.eps.size(); ++i) {
      if (rec.eps == config.eps[i]) costs[i] += rec.total_cost / config.replicates;
    }
  }
  SweepResult s = fit_cost_slope(config.eps, costs);
  if (runs) *runs = std::move(result);
  return s;
}

void write_sweep(const SweepResult& sweep, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
  std::ofstream f(dir / "sweep.csv");
  if (!f) throw Error("cannot write " + (dir / "sweep.csv").string());
  f << "# mlmc sweep.csv v1\n"
    << "# slope=" << fmt(sweep.slope) << " intercept=" << fmt(sweep.intercept) << "\n"
    << "eps,mean_cost\n";
  for (std::size_t i = 0; i < sweep.eps.size(); ++i) f << fmt(sweep.eps[i]) << ',' << fmt(sweep.mean_costs[i]) << '\n';
}

}  // namespace mlmc
