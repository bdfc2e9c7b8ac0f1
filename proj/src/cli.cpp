#include "gsde/cli.hpp"

#include "gsde/dynamics.hpp"
#include "gsde/montecarlo.hpp"
#include "gsde/pde.hpp"

#include <CLI11.hpp>

#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

namespace gsde {

using nlohmann::json;

namespace {

std::string num(double v) {
  std::array<char, 64> buf{};
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), r.ptr);
}

std::string join_point(std::span<const double> x) {
  std::string s;
  for (std::size_t i = 0; i < x.size(); ++i) s += (i ? ";" : "") + num(x[i]);
  return s;
}

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << content;
}

json estimate_json(const McEstimate& e) {
  json per = json::array();
  for (const auto& p : e.per_policy) per.push_back({{"policy", p.id}, {"mean", p.mean}, {"std_error", p.std_error}});
  json j{{"value", e.value},
         {"std_error", e.std_error},
         {"n_paths", e.n_paths},
         {"argmax_policy", e.argmax_policy},
         {"censored_fraction", e.censored_fraction},
         {"censoring_bound", e.censoring_bound},
         {"per_policy", per}};
  if (e.bootstrap_bias) j["bootstrap_bias"] = *e.bootstrap_bias;
  if (e.bootstrap_se) j["bootstrap_se"] = *e.bootstrap_se;
  return j;
}

json series_json(const std::vector<RefinementPoint>& s) {
  json out = json::array();
  for (const auto& p : s) out.push_back({{"dt", p.dt}, {"mean", p.mean}, {"std_error", p.std_error}});
  return out;
}

bool decreasing(const std::vector<RefinementPoint>& s) {
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (!(s[i].mean < s[i - 1].mean)) return false;
  }
  return true;
}

json record(const std::string& check, double target, double estimate, double tolerance, bool pass,
            json details = json::object()) {
  return {{"check", check}, {"target", target},   {"estimate", estimate},
          {"tolerance", tolerance}, {"pass", pass}, {"details", std::move(details)}};
}

/// Lazily solved PDE and the policy family built from the configuration.
class Session {
 public:
  explicit Session(const Problem& p) : p_(p) {}

  const PdeSolution& pde() {
    if (!pde_) {
      pde_ = std::make_unique<PdeSolution>(solve_dirichlet(p_.model, p_.theta, p_.domain, p_.functional.f,
                                                           p_.functional.phi, p_.grid, p_.functional.mode));
      if (!pde_->converged) {
        throw NumericalError("PDE residual " + num(pde_->residual) + " exceeds tolerance " + num(p_.grid.tolerance));
      }
    }
    return *pde_;
  }

  std::vector<ControlPolicy> family(bool with_pde) {
    std::vector<ControlPolicy> out;
    const auto& names = p_.policies;
    if (std::find(names.begin(), names.end(), "vertices") != names.end()) out = vertex_policies(p_.theta);
    const bool want_pde = with_pde || std::find(names.begin(), names.end(), "pde") != names.end();
    if (want_pde) out.push_back(extract_policy(pde()));
    return out;
  }

  ValueTable table() {
    const PdeSolution& s = pde();
    return [&s](std::span<const double> x) { return interpolate(s, x); };
  }

 private:
  const Problem& p_;
  std::unique_ptr<PdeSolution> pde_;
};

json run_estimate(const Problem& p, const std::filesystem::path& out, std::ostream& log) {
  Session s(p);
  const auto family = s.family(false);
  std::string csv = "x,value,std_error,n_paths,argmax_policy,censored_fraction\n";
  json results = json::array();
  for (const auto& x : p.points) {
    const McEstimate e = estimate_value(p.model, p.theta, p.domain, p.functional, family, x, p.mc);
    csv += join_point(x) + "," + num(e.value) + "," + num(e.std_error) + "," + std::to_string(e.n_paths) + "," +
           e.argmax_policy + "," + num(e.censored_fraction) + "\n";
    json r = estimate_json(e);
    r["x"] = x;
    results.push_back(r);
    log << "u(" << join_point(x) << ") = " << num(e.value) << " +/- " << num(e.std_error) << " [" << e.argmax_policy
        << "]\n";
  }
  write_file(out / "estimate.csv", csv);
  return results;
}

json run_pde(const Problem& p, const std::filesystem::path& out, std::ostream& log) {
  Session s(p);
  const PdeSolution& sol = s.pde();
  const Grid& g = sol.grid;
  std::string csv = g.dim == 1 ? "x1,type,value,vertex\n" : "x1,x2,type,value,vertex\n";
  double max_error = 0.0;
  for (std::size_t node = 0; node < g.size(); ++node) {
    const auto x = g.point(node);
    const char* type = sol.mask[node] == NodeType::Interior ? "interior"
                       : sol.mask[node] == NodeType::Boundary ? "boundary"
                                                              : "exterior";
    for (double c : x) csv += num(c) + ",";
    csv += std::string(type) + "," + num(sol.values[node]) + "," + std::to_string(sol.policy[node]) + "\n";
    if (p.exact && sol.mask[node] == NodeType::Interior) {
      max_error = std::max(max_error, std::fabs(sol.values[node] - p.exact->evaluate(x)));
    }
  }
  write_file(out / "pde_solution.csv", csv);

  std::string slice = g.dim == 1 ? "x1,value\n" : "x1,x2,value\n";
  const std::size_t row = g.dim == 1 ? 0 : static_cast<std::size_t>(g.counts[1] / 2);
  for (int i = 0; i < g.counts[0]; ++i) {
    const std::size_t node = row * static_cast<std::size_t>(g.counts[0]) + static_cast<std::size_t>(i);
    for (double c : g.point(node)) slice += num(c) + ",";
    slice += num(sol.values[node]) + "\n";
  }
  write_file(out / "pde_slice.csv", slice);

  json values = json::array();
  for (const auto& x : p.points) values.push_back({{"x", x}, {"value", interpolate(sol, x)}});
  json r{{"iterations", sol.iterations}, {"residual", sol.residual}, {"converged", sol.converged},
         {"mode", to_string(sol.mode)},  {"nodes", g.counts},        {"values", values}};
  if (p.exact) r["max_error"] = max_error;
  log << "pde: " << sol.iterations << " policy iterations, residual " << num(sol.residual);
  if (p.exact) log << ", max error " << num(max_error);
  log << "\n";
  return r;
}

json lyapunov_records(const Problem& p, Session& s) {
  const ModelBounds mb = effective_model_bounds(p.model, p.theta, p.domain);
  const LyapunovBounds lb = lyapunov_bounds(mb, ellipticity_params(p.theta, true), p.domain);
  const ExitMoments m = estimate_exit_moments(p.model, p.theta, p.domain, s.family(false), p.points.front(), p.mc);
  const json details{{"alpha", lb.alpha},     {"A", lb.a},           {"C_h", lb.c_h},
                     {"C_b", mb.c_b},         {"C_sigma", mb.c_sigma}, {"lambda", mb.lambda},
                     {"x", p.points.front()}};
  json d1 = details, d2 = details;
  d1["moment"] = "tau";
  d1["std_error"] = m.tau.std_error;
  d2["moment"] = "tau_sq";
  d2["std_error"] = m.tau_sq.std_error;
  return json::array({record("lyapunov", lb.c_tau, m.tau.value, 0.0, m.tau.value <= lb.c_tau, d1),
                      record("lyapunov", lb.c_tau_sq, m.tau_sq.value, 0.0, m.tau_sq.value <= lb.c_tau_sq, d2)});
}

double mean_ito_residual(const Problem& p, const ItoParams& ito, double dt) {
  SimulationConfig sim;
  sim.dt = dt;
  sim.refinement = p.mc.refinement.value_or(default_refinement(p.domain));
  sim.stop_at_open_exit = true;
  sim.t_max = std::max(p.mc.t_max.value_or(10.0), dt);
  double worst = 0.0;
  const auto family = vertex_policies(p.theta);
  for (std::size_t k = 0; k < family.size(); ++k) {
    double sum = 0.0;
    RecordedPath path;
    for (std::size_t i = 0; i < ito.paths; ++i) {
      PathStreams rng(p.mc.seed, p.mc.common_random_numbers ? i : (static_cast<std::uint64_t>(k) << 32) + i);
      simulate_to_exit(p.model, family[k], p.domain, p.points.front(), sim, rng, nullptr, &path);
      sum += ito_residual(p.model, ito.h, ito.grad, ito.hess, path);
    }
    worst = std::max(worst, sum / static_cast<double>(ito.paths));
  }
  return worst;
}

json run_checks(const Problem& p, std::ostream& log) {
  const VerifyParams& v = p.verify;
  if (v.checks.empty()) throw ConfigError("verify.checks", "no checks requested");
  Session s(p);
  json records = json::array();
  const auto& x0 = p.points.front();
  for (const auto& check : v.checks) {
    if (check == "gmartingale") {
      for (const auto& c : v.gmartingale) {
        const auto r = gmartingale_check(p.theta, c.a, c.p, c.t, p.mc);
        const double tol = std::max(3.0 * r.estimate.std_error, 0.02 * std::fabs(r.target));
        records.push_back(record(check, r.target, r.estimate.value, tol,
                                 std::fabs(r.estimate.value - r.target) <= tol,
                                 {{"t", c.t}, {"std_error", r.estimate.std_error},
                                  {"argmax_policy", r.estimate.argmax_policy}}));
      }
    } else if (check == "integral_bound") {
      for (double t : v.integral_t) {
        const auto r = check_integral_bound(p.theta, t, p.mc);
        const double tol = 3.0 * r.lhs_se;
        const bool pass = r.lhs <= r.rhs && std::fabs(r.lhs - r.closed_form) <= std::max(tol, 1e-12);
        records.push_back(record(check, r.rhs, r.lhs, tol, pass,
                                 {{"T", t}, {"closed_form", r.closed_form}, {"argmax_vertex", r.argmax_index}}));
      }
    } else if (check == "dpp") {
      const Domain inner = erode(p.domain, v.inner_fraction * p.domain.diameter());
      const auto r = dpp_check(p.model, p.theta, p.domain, inner, p.functional, s.family(false), x0, p.mc, s.table());
      const double tol = 3.0 * r.combined_se;
      records.push_back(record(check, 0.0, r.residual, tol, r.residual <= tol,
                               {{"lhs", r.lhs}, {"rhs", r.rhs}, {"combined_se", r.combined_se}, {"x", x0}}));
    } else if (check == "exit_time_gap") {
      const auto series = exit_time_gap(p.model, p.theta, p.domain, x0, v.dt_list, p.mc);
      const double last = series.back().mean;
      records.push_back(record(check, 0.0, last, v.gap_tolerance, decreasing(series) && last <= v.gap_tolerance,
                               {{"series", series_json(series)}, {"x", x0}}));
    } else if (check == "boundary_exit_decay") {
      const std::vector<double> xb = v.boundary_point.empty() ? p.domain.project_to_boundary(x0) : v.boundary_point;
      const auto series = boundary_exit_decay(p.model, p.theta, p.domain, xb, v.dt_list, p.mc);
      const double last = series.back().mean;
      records.push_back(record(check, 0.0, last, v.decay_tolerance, decreasing(series) && last <= v.decay_tolerance,
                               {{"series", series_json(series)}, {"x", xb}}));
    } else if (check == "continuity") {
      const auto& pts = v.continuity_points.empty() ? p.points : v.continuity_points;
      if (pts.size() < 2) throw ConfigError("verify.continuity_points", "continuity needs at least two points");
      const auto r = continuity_modulus(p.model, p.theta, p.domain, pts, p.functional, s.family(false), p.mc);
      json values = json::array();
      for (std::size_t i = 0; i < pts.size(); ++i) values.push_back({{"x", pts[i]}, {"value", r.estimates[i].value}});
      records.push_back(record(check, 0.0, r.max_abs_deviation, v.continuity_tolerance,
                               r.max_abs_deviation <= v.continuity_tolerance,
                               {{"values", values}, {"max_ratio", r.max_ratio}}));
    } else if (check == "ito") {
      const ItoParams& ito = *v.ito;
      std::vector<RefinementPoint> series;
      for (double dt : v.dt_list) series.push_back({dt, mean_ito_residual(p, ito, dt), 0.0});
      const double last = series.back().mean;
      records.push_back(record(check, 0.0, last, ito.tolerance, decreasing(series) && last <= ito.tolerance,
                               {{"series", series_json(series)}, {"paths", ito.paths}}));
    } else if (check == "mc_pde") {
      const auto family = s.family(true);
      const PdeSolution& sol = s.pde();
      for (const auto& x : p.points) {
        const McEstimate e = estimate_value(p.model, p.theta, p.domain, p.functional, family, x, p.mc);
        const double target = interpolate(sol, x);
        records.push_back(record(check, target, e.value, v.mc_pde_tolerance,
                                 std::fabs(e.value - target) <= v.mc_pde_tolerance,
                                 {{"x", x}, {"std_error", e.std_error}, {"argmax_policy", e.argmax_policy}}));
      }
    } else if (check == "lyapunov") {
      for (auto& r : lyapunov_records(p, s)) records.push_back(r);
    }
  }
  for (const auto& r : records) {
    log << (r["pass"].get<bool>() ? "PASS " : "FAIL ") << r["check"].get<std::string>()
        << " target=" << num(r["target"]) << " estimate=" << num(r["estimate"])
        << " tolerance=" << num(r["tolerance"]) << "\n";
  }
  return records;
}

bool all_pass(const json& records) {
  return std::all_of(records.begin(), records.end(), [](const json& r) { return r["pass"].get<bool>(); });
}

int dispatch(const std::string& command, const json& raw, const std::string& out_dir,
             std::optional<std::uint64_t> seed, std::ostream& log) {
  json raw_cfg = raw;
  if (seed) {
    if (!raw_cfg.is_object()) throw ConfigError("config", "expected an object");
    raw_cfg["mc"]["seed"] = *seed;
  }
  const json cfg = normalize_config(raw_cfg);
  const Problem p = build_problem(cfg);
  const std::filesystem::path out(out_dir);
  std::filesystem::create_directories(out);

  json report{{"command", command}, {"seed", cfg["mc"]["seed"]}, {"config", cfg}};
  int code = kExitOk;
  if (command == "estimate") {
    report["results"] = run_estimate(p, out, log);
  } else if (command == "pde") {
    report["results"] = run_pde(p, out, log);
  } else if (command == "verify") {
    const json records = run_checks(p, log);
    write_file(out / "verify.json", records.dump(2) + "\n");
    report["results"] = records;
    if (!all_pass(records)) code = kExitVerifyFailed;
  } else if (command == "bounds") {
    Session s(p);
    const json records = lyapunov_records(p, s);
    for (const auto& r : records) {
      log << (r["pass"].get<bool>() ? "PASS " : "FAIL ") << r["details"]["moment"].get<std::string>()
          << ": empirical " << num(r["estimate"]) << " <= bound " << num(r["target"]) << "\n";
    }
    report["results"] = records;
    if (!all_pass(records)) code = kExitVerifyFailed;
  } else {
    throw ConfigError("command", "unknown command '" + command + "' (expected estimate, pde, verify or bounds)");
  }
  write_file(out / "report.json", report.dump(2) + "\n");
  return code;
}

}  // namespace

int run_command(const std::string& command, const json& raw_config, const std::string& out_dir,
                std::optional<std::uint64_t> seed, std::ostream& log) {
  try {
    return dispatch(command, raw_config, out_dir, seed, log);
  } catch (const SolverPreconditionError& e) {
    log << "error: solver precondition: " << e.what() << "\n";
    return kExitSolverPrecondition;
  } catch (const NumericalError& e) {
    log << "error: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    log << "error: config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::domain_error& e) {
    log << "error: config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const expr::ParseError& e) {
    log << "error: config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    log << "error: config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitInternal;
  }
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Monte Carlo and PDE engine for exit problems under G-expectation"};
  std::string command, config, out = ".";
  std::optional<std::uint64_t> seed;
  app.add_option("command", command, "estimate | pde | verify | bounds")
      ->required()
      ->check(CLI::IsMember({"estimate", "pde", "verify", "bounds"}));
  app.add_option("--config", config, "JSON run configuration")->required();
  app.add_option("--out", out, "output directory (default: current directory)");
  app.add_option("--seed", seed, "override mc.seed");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  json raw;
  try {
    raw = load_config_file(config);
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return kExitConfig;
  }
  return run_command(command, raw, out, seed, std::cout);
}

}  // namespace gsde
