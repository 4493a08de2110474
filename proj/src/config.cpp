#include "kinetic/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

namespace kinetic {

namespace {

class Parser {
 public:
  explicit Parser(std::string path) : path_(std::move(path)) {}

  [[noreturn]] void fail(const YAML::Node& n, const std::string& field, const std::string& msg) const {
    const YAML::Mark m = n.Mark();
    if (m.is_null()) throw ConfigError(fmt::format("{}: field '{}': {}", path_, field, msg));
    throw ConfigError(fmt::format("{}:{}:{}: field '{}': {}", path_, m.line + 1, m.column + 1, field, msg));
  }

  void require_map(const YAML::Node& n, const std::string& field) const {
    if (!n.IsMap()) fail(n, field, "expected a mapping");
  }

  void check_keys(const YAML::Node& n, const std::string& ctx, const std::set<std::string>& allowed) const {
    require_map(n, ctx);
    for (const auto& kv : n) {
      auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) fail(kv.first, ctx + "." + key, "unknown key");
    }
  }

  template <class T>
  T scalar(const YAML::Node& n, const std::string& field) const {
    if (!n.IsScalar()) fail(n, field, "expected a scalar");
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      fail(n, field, fmt::format("cannot read '{}' as {}", n.Scalar(), type_name<T>()));
    }
  }

  template <class T>
  T get(const YAML::Node& parent, const std::string& key, const std::string& ctx, T def) const {
    YAML::Node n = parent[key];
    if (!n) return def;
    return scalar<T>(n, ctx + "." + key);
  }

  template <class T>
  T need(const YAML::Node& parent, const std::string& key, const std::string& ctx) const {
    YAML::Node n = parent[key];
    if (!n) fail(parent, ctx + "." + key, "missing required key");
    return scalar<T>(n, ctx + "." + key);
  }

  double positive(const YAML::Node& parent, const std::string& key, const std::string& ctx, double def) const {
    double v = get<double>(parent, key, ctx, def);
    if (!(v > 0.0) || !std::isfinite(v)) fail(parent[key] ? parent[key] : parent, ctx + "." + key, "must be positive");
    return v;
  }

  std::vector<double> doubles(const YAML::Node& n, const std::string& field) const {
    if (!n.IsSequence()) fail(n, field, "expected a list of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < n.size(); ++i) out.push_back(scalar<double>(n[i], fmt::format("{}[{}]", field, i)));
    return out;
  }

  double rotation(const YAML::Node& n, const std::string& field) const {
    if (!n) fail(n, field, "missing required key");
    if (!n.IsScalar()) fail(n, field, "expected a number or a named constant");
    double v = 0.0;
    if (YAML::convert<double>::decode(n, v)) return v;
    try {
      return resolve_rotation_constant(n.Scalar());
    } catch (const std::invalid_argument& e) {
      fail(n, field, e.what());
    }
  }

  const std::string& path() const { return path_; }

 private:
  template <class T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, double>) return "a real number";
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    if constexpr (std::is_same_v<T, std::string>) return "a string";
    return "an integer";
  }

  std::string path_;
};

CoefficientField parse_field(const Parser& P, const YAML::Node& n, const std::string& field) {
  if (!n) P.fail(n, field, "missing required key");
  if (n.IsScalar()) return CoefficientField::constant(P.scalar<double>(n, field));
  P.check_keys(n, field, {"constant", "step", "trig", "sup_bound", "l1_bound"});
  int kinds = (n["constant"] ? 1 : 0) + (n["step"] ? 1 : 0) + (n["trig"] ? 1 : 0);
  if (kinds != 1) P.fail(n, field, "give exactly one of constant, step, trig");
  CoefficientField f;
  try {
    if (n["constant"]) {
      f = CoefficientField::constant(P.scalar<double>(n["constant"], field + ".constant"));
    } else if (n["step"]) {
      const YAML::Node s = n["step"];
      P.check_keys(s, field + ".step", {"breaks_base", "values"});
      std::vector<double> breaks = s["breaks_base"] ? P.doubles(s["breaks_base"], field + ".step.breaks_base")
                                                    : std::vector<double>{};
      if (!s["values"]) P.fail(s, field + ".step.values", "missing required key");
      f = CoefficientField::step(breaks, P.doubles(s["values"], field + ".step.values"));
    } else {
      const YAML::Node t = n["trig"];
      if (!t.IsSequence()) P.fail(t, field + ".trig", "expected a list of terms");
      std::vector<TrigTerm> terms;
      for (std::size_t i = 0; i < t.size(); ++i) {
        const std::string ctx = fmt::format("{}.trig[{}]", field, i);
        P.check_keys(t[i], ctx, {"k", "cos", "sin"});
        std::vector<double> k = P.doubles(t[i]["k"], ctx + ".k");
        if (k.size() != 2 || k[0] != std::round(k[0]) || k[1] != std::round(k[1]))
          P.fail(t[i]["k"], ctx + ".k", "expected two integers");
        terms.push_back({static_cast<int>(k[0]), static_cast<int>(k[1]), P.get<double>(t[i], "cos", ctx, 0.0),
                         P.get<double>(t[i], "sin", ctx, 0.0)});
      }
      f = CoefficientField::trig(terms);
    }
  } catch (const std::invalid_argument& e) {
    P.fail(n, field, e.what());
  }
  if (n["sup_bound"]) f.declared_sup_bound = P.scalar<double>(n["sup_bound"], field + ".sup_bound");
  if (n["l1_bound"]) f.declared_l1_bound = P.scalar<double>(n["l1_bound"], field + ".l1_bound");
  return f;
}

DrivingFlow parse_flow(const Parser& P, const YAML::Node& n) {
  P.require_map(n, "flow");
  auto kind = P.need<std::string>(n, "kind", "flow");
  try {
    if (kind == "torus") {
      P.check_keys(n, "flow", {"kind", "rho"});
      return DrivingFlow(TorusFlowSpec{P.rotation(n["rho"], "flow.rho")});
    }
    if (kind == "suspension") {
      P.check_keys(n, "flow", {"kind", "base_rotation", "n0_time", "q_time", "cut_base"});
      SuspensionSpec s;
      s.base_rotation = P.rotation(n["base_rotation"], "flow.base_rotation");
      s.n0 = P.need<int>(n, "n0_time", "flow");
      s.q = P.get<double>(n, "q_time", "flow", s.q);
      s.cut = P.get<double>(n, "cut_base", "flow", s.cut);
      return DrivingFlow(s);
    }
  } catch (const std::invalid_argument& e) {
    P.fail(n, "flow", e.what());
  }
  P.fail(n["kind"], "flow.kind", fmt::format("unknown flow kind '{}' (torus or suspension)", kind));
}

GeneratorPtr parse_generator(const Parser& P, const YAML::Node& n, const std::string& name, const DrivingFlow& flow,
                             const std::map<std::string, GeneratorPtr>& earlier) {
  const std::string ctx = "generators." + name;
  P.require_map(n, ctx);
  auto kind = P.need<std::string>(n, "kind", ctx);
  try {
    if (kind == "kinetic") {
      P.check_keys(n, ctx, {"kind", "alpha_per_time", "beta_per_time_squared"});
      return make_kinetic(flow, parse_field(P, n["alpha_per_time"], ctx + ".alpha_per_time"),
                          parse_field(P, n["beta_per_time_squared"], ctx + ".beta_per_time_squared"));
    }
    if (kind == "general") {
      P.check_keys(n, ctx, {"kind", "a11_per_time", "a12_per_time", "a21_per_time", "a22_per_time"});
      std::array<CoefficientField, 4> e{parse_field(P, n["a11_per_time"], ctx + ".a11_per_time"),
                                        parse_field(P, n["a12_per_time"], ctx + ".a12_per_time"),
                                        parse_field(P, n["a21_per_time"], ctx + ".a21_per_time"),
                                        parse_field(P, n["a22_per_time"], ctx + ".a22_per_time")};
      return std::make_shared<GeneralGenerator>(flow, e);
    }
    if (kind == "rotation") {
      P.check_keys(n, ctx, {"kind", "theta_rad"});
      return rotation_generator(flow, P.need<double>(n, "theta_rad", ctx));
    }
    if (kind == "flowbox") {
      P.check_keys(n, ctx, {"kind", "parent", "support_base", "offset_time", "theta_rad"});
      auto parent = P.need<std::string>(n, "parent", ctx);
      auto it = earlier.find(parent);
      if (it == earlier.end())
        P.fail(n["parent"], ctx + ".parent", fmt::format("'{}' is not a generator declared earlier", parent));
      const YAML::Node sup = n["support_base"];
      if (!sup || !sup.IsSequence()) P.fail(n, ctx + ".support_base", "expected a list of [lo, hi] pairs");
      std::vector<std::pair<double, double>> iv;
      for (std::size_t i = 0; i < sup.size(); ++i) {
        auto pr = P.doubles(sup[i], fmt::format("{}.support_base[{}]", ctx, i));
        if (pr.size() != 2) P.fail(sup[i], fmt::format("{}.support_base[{}]", ctx, i), "expected [lo, hi]");
        iv.emplace_back(pr[0], pr[1]);
      }
      if (!n["theta_rad"]) P.fail(n, ctx + ".theta_rad", "missing required key");
      std::vector<double> th = n["theta_rad"].IsSequence() ? P.doubles(n["theta_rad"], ctx + ".theta_rad")
                                                           : std::vector<double>{P.scalar<double>(n["theta_rad"], ctx + ".theta_rad")};
      return std::make_shared<FlowboxPerturbation>(it->second, IntervalUnion(iv), P.need<double>(n, "offset_time", ctx),
                                                   th);
    }
  } catch (const std::invalid_argument& e) {
    P.fail(n, ctx, e.what());
  }
  P.fail(n["kind"], ctx + ".kind", fmt::format("unknown generator kind '{}'", kind));
}

void parse_estimator(const Parser& P, const YAML::Node& root, EstimatorSettings& s) {
  if (const YAML::Node n = root["integrator"]) {
    P.check_keys(n, "integrator", {"rtol", "atol", "max_step_time", "renorm_threshold", "min_step_relative"});
    auto& ic = s.estimator.integrator;
    ic.rtol = P.positive(n, "rtol", "integrator", ic.rtol);
    ic.atol = P.positive(n, "atol", "integrator", ic.atol);
    ic.max_step_time = P.positive(n, "max_step_time", "integrator", ic.max_step_time);
    ic.renorm_threshold = P.positive(n, "renorm_threshold", "integrator", ic.renorm_threshold);
    ic.min_step_relative = P.positive(n, "min_step_relative", "integrator", ic.min_step_relative);
  }
  if (const YAML::Node n = root["estimator"]) {
    P.check_keys(n, "estimator", {"ensemble_size", "horizon_time", "window_time", "transient_time", "method",
                                  "precision_bits", "direct_cross_check"});
    s.ensemble_size = P.get<std::size_t>(n, "ensemble_size", "estimator", s.ensemble_size);
    if (s.ensemble_size == 0) P.fail(n["ensemble_size"], "estimator.ensemble_size", "must be at least 1");
    s.horizon_time = P.positive(n, "horizon_time", "estimator", s.horizon_time);
    s.estimator.window_time = P.positive(n, "window_time", "estimator", s.estimator.window_time);
    s.estimator.transient_time = P.get<double>(n, "transient_time", "estimator", s.estimator.transient_time);
    if (s.estimator.transient_time < 0) P.fail(n["transient_time"], "estimator.transient_time", "must be >= 0");
    auto m = P.get<std::string>(n, "method", "estimator", "automatic");
    if (m == "automatic") s.estimator.method = PropagationMethod::automatic;
    else if (m == "rk45") s.estimator.method = PropagationMethod::rk45;
    else if (m == "castle") s.estimator.method = PropagationMethod::castle;
    else P.fail(n["method"], "estimator.method", "expected automatic, rk45 or castle");
    s.estimator.precision_bits = P.get<int>(n, "precision_bits", "estimator", 53);
    if (s.estimator.precision_bits < 53) P.fail(n["precision_bits"], "estimator.precision_bits", "must be >= 53");
    s.direct_cross_check = P.get<bool>(n, "direct_cross_check", "estimator", true);
  }
  try {
    s.estimator.integrator.validate();
  } catch (const std::invalid_argument& e) {
    P.fail(root["integrator"], "integrator", e.what());
  }
}

const std::set<std::string> kLowerKeys = {"generator",         "epsilon",          "delta_per_time",
                                          "eta_per_time",      "N_time",           "candidate_count",
                                          "max_intervals",     "min_passing",      "budget_fill",
                                          "budget_measure",    "precision_bits",   "frame_horizon_time",
                                          "screen_frame_horizon_time", "b_ensemble_size", "b_horizon_time",
                                          "b_min_returns",     "checked_plans"};

LowerSection parse_lower(const Parser& P, const YAML::Node& n, const std::string& ctx, const ExperimentConfig& cfg,
                         const std::set<std::string>& extra) {
  std::set<std::string> allowed = kLowerKeys;
  allowed.insert(extra.begin(), extra.end());
  P.check_keys(n, ctx, allowed);
  LowerSection s;
  s.generator = P.need<std::string>(n, "generator", ctx);
  if (!cfg.generators.count(s.generator))
    P.fail(n["generator"], ctx + ".generator", fmt::format("unknown generator '{}'", s.generator));
  s.epsilon = P.get<double>(n, "epsilon", ctx, s.epsilon);
  if (!(s.epsilon > 0.0 && s.epsilon < 1.0)) P.fail(n["epsilon"], ctx + ".epsilon", "must lie in (0, 1)");
  s.delta_per_time = P.positive(n, "delta_per_time", ctx, s.delta_per_time);
  auto& o = s.perturbation;
  o.epsilon = s.epsilon;
  o.eta = P.positive(n, "eta_per_time", ctx, o.eta);
  o.N = P.get<int>(n, "N_time", ctx, 0);
  if (o.N < 0 || o.N % 2 != 0) P.fail(n["N_time"], ctx + ".N_time", "must be 0 (automatic) or a positive even integer");
  o.candidate_count = P.get<std::size_t>(n, "candidate_count", ctx, o.candidate_count);
  o.max_intervals = P.get<std::size_t>(n, "max_intervals", ctx, o.max_intervals);
  o.min_passing = P.get<std::size_t>(n, "min_passing", ctx, o.min_passing);
  if (o.candidate_count == 0 || o.max_intervals == 0) P.fail(n, ctx, "candidate_count and max_intervals must be >= 1");
  o.budget_fill = P.get<double>(n, "budget_fill", ctx, o.budget_fill);
  if (!(o.budget_fill > 0.0 && o.budget_fill < 1.0)) P.fail(n["budget_fill"], ctx + ".budget_fill", "must lie in (0, 1)");
  auto bm = P.get<std::string>(n, "budget_measure", ctx, "normalized");
  if (bm == "normalized") o.budget_measure = BudgetMeasure::normalized;
  else if (bm == "unnormalized") o.budget_measure = BudgetMeasure::unnormalized;
  else P.fail(n["budget_measure"], ctx + ".budget_measure", "expected normalized or unnormalized");
  o.precision_bits = P.get<int>(n, "precision_bits", ctx, 0);
  o.frame_horizon_time = P.get<double>(n, "frame_horizon_time", ctx, 0.0);
  o.screen_frame_horizon_time = P.positive(n, "screen_frame_horizon_time", ctx, o.screen_frame_horizon_time);
  s.b_ensemble_size = P.get<std::size_t>(n, "b_ensemble_size", ctx, s.b_ensemble_size);
  if (s.b_ensemble_size == 0) P.fail(n["b_ensemble_size"], ctx + ".b_ensemble_size", "must be at least 1");
  s.b_horizon_time = P.positive(n, "b_horizon_time", ctx, s.b_horizon_time);
  s.b_min_returns = P.get<double>(n, "b_min_returns", ctx, s.b_min_returns);
  s.checked_plans = P.get<std::size_t>(n, "checked_plans", ctx, s.checked_plans);
  return s;
}

}  // namespace

double resolve_rotation_constant(const std::string& name) {
  if (name == "golden") return (std::sqrt(5.0) - 1.0) / 2.0;
  if (name == "silver") return std::sqrt(2.0) - 1.0;
  if (name == "sqrt2_frac") return std::sqrt(2.0) - 1.0;
  if (name == "e_frac") return std::exp(1.0) - 2.0;
  throw std::invalid_argument(fmt::format("unknown rotation constant '{}' (golden, silver, e_frac)", name));
}

const GeneratorPtr& ExperimentConfig::generator(const std::string& name) const {
  auto it = generators.find(name);
  if (it == generators.end()) throw ConfigError(fmt::format("unknown generator '{}'", name));
  return it->second;
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& path) {
  Parser P(path);
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(fmt::format("{}:{}:{}: YAML syntax error: {}", path, e.mark.line + 1, e.mark.column + 1, e.msg));
  }
  if (!root.IsMap()) throw ConfigError(fmt::format("{}: top level must be a mapping", path));
  P.check_keys(root, "<root>", {"seed", "flow", "generators", "integrator", "estimator", "spectrum", "distance",
                                "lower", "perturb", "collapse", "usc_probe"});
  ExperimentConfig cfg;
  cfg.source_text = text;
  cfg.source_path = path;
  cfg.seed = P.get<std::uint64_t>(root, "seed", "<root>", 1);
  if (!root["flow"]) P.fail(root, "flow", "missing required section");
  cfg.flow.emplace(parse_flow(P, root["flow"]));
  const YAML::Node gens = root["generators"];
  if (!gens) P.fail(root, "generators", "missing required section");
  P.require_map(gens, "generators");
  for (const auto& kv : gens) {
    auto name = kv.first.as<std::string>();
    if (cfg.generators.count(name)) P.fail(kv.first, "generators." + name, "duplicate generator name");
    cfg.generators[name] = parse_generator(P, kv.second, name, *cfg.flow, cfg.generators);
    cfg.generator_order.push_back(name);
    cfg.generator_descriptions[name] = cfg.generators[name]->describe();
  }
  parse_estimator(P, root, cfg.estimator);

  auto name_list = [&](const YAML::Node& n, const std::string& field) {
    std::vector<std::string> out;
    if (!n.IsSequence()) P.fail(n, field, "expected a list of generator names");
    for (std::size_t i = 0; i < n.size(); ++i) {
      auto s = P.scalar<std::string>(n[i], fmt::format("{}[{}]", field, i));
      if (!cfg.generators.count(s)) P.fail(n[i], fmt::format("{}[{}]", field, i), fmt::format("unknown generator '{}'", s));
      out.push_back(s);
    }
    return out;
  };

  if (const YAML::Node n = root["spectrum"]) {
    P.check_keys(n, "spectrum", {"generators", "consistency_horizons_time", "consistency_ensemble_size"});
    SpectrumSection s;
    s.generators = n["generators"] ? name_list(n["generators"], "spectrum.generators") : cfg.generator_order;
    if (n["consistency_horizons_time"]) {
      s.consistency_horizons_time = P.doubles(n["consistency_horizons_time"], "spectrum.consistency_horizons_time");
      for (double h : s.consistency_horizons_time)
        if (!(h > 0.0)) P.fail(n["consistency_horizons_time"], "spectrum.consistency_horizons_time", "horizons must be positive");
    }
    s.consistency_ensemble_size = P.get<std::size_t>(n, "consistency_ensemble_size", "spectrum", 8);
    cfg.spectrum = s;
  }
  if (const YAML::Node n = root["distance"]) {
    P.check_keys(n, "distance", {"pairs", "p", "method", "samples"});
    DistanceSection s;
    const YAML::Node pairs = n["pairs"];
    if (!pairs || !pairs.IsSequence()) P.fail(n, "distance.pairs", "expected a list of [A, B] name pairs");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      auto names = name_list(pairs[i], fmt::format("distance.pairs[{}]", i));
      if (names.size() != 2) P.fail(pairs[i], fmt::format("distance.pairs[{}]", i), "expected exactly two names");
      s.pairs.emplace_back(names[0], names[1]);
    }
    s.p = n["p"] ? P.doubles(n["p"], "distance.p") : std::vector<double>{1.0, 2.0};
    for (double p : s.p)
      if (!(p >= 1.0)) P.fail(n["p"], "distance.p", "every p must be >= 1");
    auto m = P.get<std::string>(n, "method", "distance", "monte_carlo");
    if (m == "monte_carlo") s.method = DistanceMethod::monte_carlo;
    else if (m == "exact_support") s.method = DistanceMethod::exact_support;
    else P.fail(n["method"], "distance.method", "expected monte_carlo or exact_support");
    s.samples = P.get<std::size_t>(n, "samples", "distance", s.samples);
    if (s.samples == 0) P.fail(n["samples"], "distance.samples", "must be at least 1");
    cfg.distance = s;
  }
  for (const char* key : {"lower", "perturb"}) {
    if (const YAML::Node n = root[key]) {
      if (cfg.lower) P.fail(n, key, "give either 'lower' or 'perturb', not both");
      cfg.lower = parse_lower(P, n, key, cfg, {});
    }
  }
  if (const YAML::Node n = root["collapse"]) {
    CollapseSection c;
    c.lower = parse_lower(P, n, "collapse", cfg, {"tol_per_time", "max_rounds"});
    c.tol_per_time = P.get<double>(n, "tol_per_time", "collapse", c.tol_per_time);
    if (c.tol_per_time < 0) P.fail(n["tol_per_time"], "collapse.tol_per_time", "must be >= 0");
    c.max_rounds = P.get<int>(n, "max_rounds", "collapse", c.max_rounds);
    if (c.max_rounds < 0) P.fail(n["max_rounds"], "collapse.max_rounds", "must be >= 0");
    cfg.collapse = c;
  }
  if (const YAML::Node n = root["usc_probe"]) {
    const std::string ctx = "usc_probe";
    P.check_keys(n, ctx, {"generator", "epsilon_per_time", "scales", "scale_first", "scale_ratio", "scale_count",
                          "include_zero", "threshold", "p", "offset_time", "ensemble_size", "horizon_time",
                          "min_returns", "max_horizon_time"});
    UscSection u;
    u.generator = P.need<std::string>(n, "generator", ctx);
    if (!cfg.generators.count(u.generator))
      P.fail(n["generator"], ctx + ".generator", fmt::format("unknown generator '{}'", u.generator));
    u.epsilon_per_time = P.positive(n, "epsilon_per_time", ctx, u.epsilon_per_time);
    if (n["scales"]) {
      u.scales = P.doubles(n["scales"], ctx + ".scales");
    } else {
      double first = P.positive(n, "scale_first", ctx, 0.1);
      double ratio = P.positive(n, "scale_ratio", ctx, 0.5);
      int count = P.get<int>(n, "scale_count", ctx, 9);
      if (P.get<bool>(n, "include_zero", ctx, true)) u.scales.push_back(0.0);
      for (int i = 0; i < count; ++i) u.scales.push_back(first * std::pow(ratio, i));
    }
    for (double s : u.scales)
      if (!(s >= 0.0 && s < 1.0)) P.fail(n, ctx + ".scales", "scales must lie in [0, 1)");
    u.threshold = P.get<double>(n, "threshold", ctx, u.threshold);
    u.p = P.get<double>(n, "p", ctx, u.p);
    if (!(u.p >= 1.0)) P.fail(n["p"], ctx + ".p", "must be >= 1");
    u.offset_time = P.get<double>(n, "offset_time", ctx, u.offset_time);
    u.ensemble_size = P.get<std::size_t>(n, "ensemble_size", ctx, u.ensemble_size);
    if (u.ensemble_size == 0) P.fail(n["ensemble_size"], ctx + ".ensemble_size", "must be at least 1");
    u.horizon_time = P.positive(n, "horizon_time", ctx, u.horizon_time);
    u.min_returns = P.get<double>(n, "min_returns", ctx, u.min_returns);
    u.max_horizon_time = P.positive(n, "max_horizon_time", ctx, u.max_horizon_time);
    cfg.usc = u;
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("{}: cannot open config file", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace kinetic
