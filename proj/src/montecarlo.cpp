#include "gsde/montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace gsde {

std::string to_string(Mode m) { return m == Mode::Upper ? "upper" : "lower"; }

Mode mode_from_string(const std::string& s) {
  if (s == "upper") return Mode::Upper;
  if (s == "lower") return Mode::Lower;
  throw std::invalid_argument("unknown mode '" + s + "' (expected upper or lower)");
}

namespace {

constexpr std::size_t kChunk = 512;
constexpr std::uint32_t kBootstrapStream = 2;

struct Neumaier {
  double sum = 0.0;
  double c = 0.0;
  void add(double v) {
    const double t = sum + v;
    if (std::fabs(sum) >= std::fabs(v)) {
      c += (sum - t) + v;
    } else {
      c += (v - t) + sum;
    }
    sum = t;
  }
  double value() const { return sum + c; }
};

struct Stats {
  double mean = 0.0;
  double se = 0.0;
};

Stats stats(std::span<const double> v) {
  Stats s;
  if (v.empty()) return s;
  Neumaier m;
  for (double x : v) m.add(x);
  const auto n = static_cast<double>(v.size());
  s.mean = m.value() / n;
  if (v.size() < 2) return s;
  Neumaier q;
  for (double x : v) q.add((x - s.mean) * (x - s.mean));
  s.se = std::sqrt(q.value() / (n - 1.0) / n);
  return s;
}

unsigned thread_count(const McConfig& cfg, std::size_t items) {
  unsigned t = cfg.threads != 0 ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(t, std::max<std::size_t>(items, 1)));
}

/// Runs fn(item) for every item; rethrows the error of the lowest failing item.
template <class Fn>
void parallel_items(std::size_t n_items, unsigned threads, Fn&& fn) {
  if (threads <= 1) {
    for (std::size_t i = 0; i < n_items; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex mu;
  std::size_t err_item = std::numeric_limits<std::size_t>::max();
  std::exception_ptr err;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_items || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (i < err_item) {
          err_item = i;
          err = std::current_exception();
        }
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

std::uint64_t path_id(const McConfig& cfg, std::size_t policy, std::size_t path) {
  if (cfg.common_random_numbers) return path;
  return (static_cast<std::uint64_t>(policy) << 32) + path;
}

void validate_config(const McConfig& cfg) {
  if (cfg.paths < 1) throw std::invalid_argument("mc.paths must be >= 1");
  if (!(cfg.dt > 0.0) || !std::isfinite(cfg.dt)) throw std::invalid_argument("mc.dt must be positive and finite");
  if (cfg.t_max && !(*cfg.t_max >= cfg.dt)) throw std::invalid_argument("mc.t_max must be >= dt");
}

void validate_point(const Domain& domain, std::span<const double> x, int n) {
  if (static_cast<int>(x.size()) != n || domain.dim() != n) {
    throw DimensionError("point has dimension " + std::to_string(x.size()) + ", model state dimension is " +
                         std::to_string(n));
  }
  if (!domain.contains(x, true)) throw std::invalid_argument("x0 must lie in the closure of Q");
}

void validate_policies(const std::vector<ControlPolicy>& policies, const UncertaintySet& theta, int d) {
  if (policies.empty()) throw std::invalid_argument("policy family is empty");
  if (theta.dim() != d) {
    throw DimensionError("uncertainty set dimension " + std::to_string(theta.dim()) +
                         " does not match noise dimension " + std::to_string(d));
  }
  for (const auto& p : policies) check_policy_membership(p, theta);
}

struct PathRecord {
  double value = 0.0;
  double tau_open = 0.0;
  double tau_closed = 0.0;
  bool censored = false;
};

using Records = std::vector<std::vector<PathRecord>>;

Records run_family(const SdeModel& model, const Domain& domain, const std::vector<ControlPolicy>& policies,
                   std::span<const double> x0, const SimulationConfig& sim, const McConfig& cfg,
                   const expr::Expression* f, const ValueTable* payoff) {
  const std::size_t n_pol = policies.size();
  const std::size_t n_chunks = (cfg.paths + kChunk - 1) / kChunk;
  Records rec(n_pol, std::vector<PathRecord>(cfg.paths));
  const std::vector<double> start(x0.begin(), x0.end());
  parallel_items(n_pol * n_chunks, thread_count(cfg, n_pol * n_chunks), [&](std::size_t item) {
    const std::size_t k = item / n_chunks;
    const std::size_t begin = (item % n_chunks) * kChunk;
    const std::size_t end = std::min(cfg.paths, begin + kChunk);
    for (std::size_t i = begin; i < end; ++i) {
      PathStreams rng(cfg.seed, path_id(cfg, k, i));
      const ExitSample s = simulate_to_exit(model, policies[k], domain, start, sim, rng, f);
      PathRecord& r = rec[k][i];
      r.tau_open = s.tau_open;
      r.tau_closed = s.tau_closed;
      r.censored = s.censored;
      if (payoff) {
        r.value = (*payoff)(s.exit_point) - s.running_cost;
        if (!std::isfinite(r.value)) throw NumericalError("functional is not finite at an exit point");
      }
    }
  });
  return rec;
}

using Getter = double (*)(const PathRecord&);

double get_value(const PathRecord& r) { return r.value; }
double get_tau(const PathRecord& r) { return r.tau_closed; }
double get_tau_sq(const PathRecord& r) { return r.tau_closed * r.tau_closed; }
double get_gap(const PathRecord& r) { return r.tau_closed - r.tau_open; }
double get_tau_capped(const PathRecord& r) { return std::min(r.tau_closed, 1.0); }

McEstimate summarize_values(const std::vector<std::vector<double>>& values, const std::vector<std::string>& ids,
                            Mode mode, const McConfig& cfg) {
  McEstimate est;
  est.n_paths = values.empty() ? 0 : values.front().size();
  for (std::size_t k = 0; k < values.size(); ++k) {
    const Stats s = stats(values[k]);
    est.per_policy.push_back({ids[k], s.mean, s.se});
    const double m = s.mean;
    const double best = est.per_policy[est.argmax_index].mean;
    if (k == 0 || (mode == Mode::Upper ? m > best : m < best)) est.argmax_index = k;
  }
  const auto& arg = est.per_policy[est.argmax_index];
  est.value = arg.mean;
  est.std_error = arg.std_error;
  est.argmax_policy = arg.id;

  if (cfg.bootstrap > 0 && est.n_paths > 0) {
    const std::size_t n = est.n_paths;
    std::vector<std::size_t> idx(n);
    std::vector<double> boots;
    for (std::size_t b = 0; b < cfg.bootstrap; ++b) {
      PathRng rng(cfg.seed, b, kBootstrapStream);
      for (auto& j : idx) j = std::min(n - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)));
      double best = 0.0;
      for (std::size_t k = 0; k < values.size(); ++k) {
        Neumaier s;
        for (std::size_t j : idx) s.add(values[k][j]);
        const double m = s.value() / static_cast<double>(n);
        if (k == 0 || (mode == Mode::Upper ? m > best : m < best)) best = m;
      }
      boots.push_back(best);
    }
    const Stats s = stats(boots);
    est.bootstrap_bias = s.mean - est.value;
    est.bootstrap_se = s.se * std::sqrt(static_cast<double>(boots.size()));
  }
  return est;
}

McEstimate summarize(const Records& rec, Getter get, const std::vector<std::string>& ids, Mode mode,
                     const McConfig& cfg) {
  std::vector<std::vector<double>> values(rec.size());
  std::size_t censored = 0, total = 0;
  for (std::size_t k = 0; k < rec.size(); ++k) {
    values[k].reserve(rec[k].size());
    for (const auto& r : rec[k]) {
      values[k].push_back(get(r));
      censored += r.censored ? 1 : 0;
      ++total;
    }
  }
  if (total > 0 && censored == total) {
    throw NumericalError("all paths were censored at t_max; increase t_max or check the dynamics");
  }
  McEstimate est = summarize_values(values, ids, mode, cfg);
  est.censored_fraction = total ? static_cast<double>(censored) / static_cast<double>(total) : 0.0;
  return est;
}

std::vector<std::string> policy_ids(const std::vector<ControlPolicy>& policies) {
  std::vector<std::string> ids;
  for (const auto& p : policies) ids.push_back(p.id());
  return ids;
}

std::optional<LyapunovBounds> try_lyapunov(const SdeModel& model, const UncertaintySet& theta, const Domain& domain) {
  const EllipticityParams params = ellipticity_params(theta);
  if (!(params.sigma_low_sq > 0.0)) return std::nullopt;
  const ModelBounds mb = effective_model_bounds(model, theta, domain);
  if (!(mb.lambda > 0.0)) return std::nullopt;
  return lyapunov_bounds(mb, params, domain);
}

SimulationConfig make_sim(const McConfig& cfg, const Domain& domain, const std::optional<LyapunovBounds>& lb,
                          bool stop_at_open) {
  SimulationConfig sim;
  sim.dt = cfg.dt;
  sim.refinement = cfg.refinement.value_or(default_refinement(domain));
  sim.stop_at_open_exit = stop_at_open;
  if (cfg.t_max) {
    sim.t_max = *cfg.t_max;
  } else if (lb) {
    sim.t_max = std::max(10.0 * lb->c_tau, cfg.dt);
  } else {
    throw std::invalid_argument("mc.t_max is required when the exit-time bound is unavailable (degenerate diffusion)");
  }
  return sim;
}

double max_abs_on(const Domain& domain, const std::function<double(std::span<const double>)>& fn) {
  double m = 0.0;
  for (const auto& x : sample_closure(domain, 1024)) m = std::max(m, std::fabs(fn(x)));
  return m;
}

/// Truncation error of E[phi(X_tau) - int f] when tau is replaced by tau ^ T:
/// at most 2 C_phi P(tau > T) + C_f E[tau; tau > T] <= (2 C_phi C_tau + C_f C_tau_sq) / T.
double censoring_bound(const McEstimate& est, const std::optional<LyapunovBounds>& lb, double t_max,
                       const Domain& domain, const expr::Expression& f, const ValueTable& payoff) {
  if (est.censored_fraction == 0.0) return 0.0;
  if (!lb) return std::numeric_limits<double>::infinity();
  const double c_f = max_abs_on(domain, [&](std::span<const double> x) { return f.evaluate(x); });
  const double c_phi = max_abs_on(domain, payoff);
  return (c_f * lb->c_tau_sq + 2.0 * c_phi * lb->c_tau) / t_max;
}

void check_functional(const Functional& fn, int n) {
  if (fn.phi.max_variable() > n || fn.f.max_variable() > n) {
    throw DimensionError("functional references a coordinate beyond the state dimension");
  }
}

void check_exterior_ball(const Domain& domain) {
  if (exterior_ball(domain).status == ExteriorBall::Violated) {
    throw std::invalid_argument("domain violates the exterior ball condition");
  }
}

}  // namespace

ModelBounds effective_model_bounds(const SdeModel& model, const UncertaintySet& theta, const Domain& domain) {
  if (model.bounds()) return *model.bounds();
  return estimate_model_bounds(model, theta, domain);
}

LyapunovBounds lyapunov_bounds(const ModelBounds& bounds, const EllipticityParams& params, const Domain& domain) {
  const double s = params.sigma_low_sq * bounds.lambda;
  if (!(s > 0.0)) throw std::domain_error("lyapunov bounds need sigma_low^2 * lambda > 0");
  const double c = bounds.c_b + params.beta * bounds.c_sigma;
  if (!(c >= 0.0) || !std::isfinite(c)) throw std::domain_error("lyapunov bounds need finite C_b, C_sigma, beta");
  LyapunovBounds lb;
  lb.alpha = (2.0 * c + 2.0) / s;
  const double k = s * lb.alpha * lb.alpha - 2.0 * lb.alpha * c;
  const double y_min = domain.lower()[0];
  const double y_max = domain.upper()[0];
  lb.a = 2.0 / (k * std::exp(lb.alpha * y_min));
  lb.c_h = 2.0 / k * std::exp(lb.alpha * (y_max - y_min));
  lb.c_tau = 2.0 * lb.c_h;
  lb.c_tau_sq = 2.0 * lb.c_h * lb.c_tau;
  return lb;
}

McEstimate estimate_value(const SdeModel& model, const UncertaintySet& theta, const Domain& domain,
                          const Functional& functional, const std::vector<ControlPolicy>& policies,
                          std::span<const double> x0, const McConfig& cfg) {
  validate_config(cfg);
  validate_point(domain, x0, model.n());
  validate_policies(policies, theta, model.d());
  check_functional(functional, model.n());
  ellipticity_params(theta, true);
  check_exterior_ball(domain);

  const auto lb = try_lyapunov(model, theta, domain);
  const SimulationConfig sim = make_sim(cfg, domain, lb, true);
  const ValueTable payoff = [&](std::span<const double> x) { return functional.phi.evaluate(x); };
  const Records rec = run_family(model, domain, policies, x0, sim, cfg, &functional.f, &payoff);
  McEstimate est = summarize(rec, get_value, policy_ids(policies), functional.mode, cfg);
  est.censoring_bound = censoring_bound(est, lb, sim.t_max, domain, functional.f, payoff);
  est.std_error += est.censoring_bound;
  return est;
}

ExitMoments estimate_exit_moments(const SdeModel& model, const UncertaintySet& theta, const Domain& domain,
                                  const std::vector<ControlPolicy>& policies, std::span<const double> x0,
                                  const McConfig& cfg) {
  validate_config(cfg);
  validate_point(domain, x0, model.n());
  validate_policies(policies, theta, model.d());
  ellipticity_params(theta, true);
  check_exterior_ball(domain);

  const auto lb = try_lyapunov(model, theta, domain);
  const SimulationConfig sim = make_sim(cfg, domain, lb, false);
  const Records rec = run_family(model, domain, policies, x0, sim, cfg, nullptr, nullptr);
  const auto ids = policy_ids(policies);
  ExitMoments out{summarize(rec, get_tau, ids, Mode::Upper, cfg), summarize(rec, get_tau_sq, ids, Mode::Upper, cfg)};
  if (out.tau.censored_fraction > 0.0) {
    // E[tau; tau > T] <= E[tau^2] / T; the second moment is only bounded by C_tau_sq itself.
    out.tau.censoring_bound = lb ? lb->c_tau_sq / sim.t_max : std::numeric_limits<double>::infinity();
    out.tau_sq.censoring_bound = lb ? lb->c_tau_sq : std::numeric_limits<double>::infinity();
    out.tau.std_error += out.tau.censoring_bound;
    out.tau_sq.std_error += out.tau_sq.censoring_bound;
  }
  return out;
}

GMartingaleResult gmartingale_check(const UncertaintySet& theta, const Eigen::MatrixXd& a, const Eigen::VectorXd& p,
                                    double t, const McConfig& cfg) {
  validate_config(cfg);
  const int d = theta.dim();
  if (a.rows() != d || a.cols() != d || p.size() != d) {
    throw DimensionError("A must be d x d and p of length d = " + std::to_string(d));
  }
  if (!(t > 0.0)) throw std::invalid_argument("gmartingale_check needs t > 0");
  const auto& verts = theta.vertices();
  std::vector<std::vector<double>> values(verts.size(), std::vector<double>(cfg.paths));
  std::vector<std::string> ids;
  const double sq = std::sqrt(t);
  Eigen::VectorXd xi(d);
  for (std::size_t k = 0; k < verts.size(); ++k) {
    ids.push_back("v" + std::to_string(k));
    const double quad = 0.5 * (a.cwiseProduct(verts[k].covariance())).sum() * t;
    for (std::size_t i = 0; i < cfg.paths; ++i) {
      PathRng rng(cfg.seed, path_id(cfg, k, i), 0);
      for (int j = 0; j < d; ++j) xi(j) = rng.normal();
      const Eigen::VectorXd b = verts[k].gamma * xi * sq + verts[k].mu * t;
      values[k][i] = quad + p.dot(b);
    }
  }
  GMartingaleResult out;
  out.estimate = summarize_values(values, ids, Mode::Upper, cfg);
  out.estimate.n_paths = cfg.paths;
  out.target = eval_G(theta, a, p) * t;
  return out;
}

IntegralBound check_integral_bound(const UncertaintySet& theta, double t, const McConfig& cfg) {
  validate_config(cfg);
  if (!(t > 0.0)) throw std::invalid_argument("check_integral_bound needs T > 0");
  const int d = theta.dim();
  const auto& verts = theta.vertices();
  std::vector<std::vector<double>> values(verts.size(), std::vector<double>(cfg.paths));
  std::vector<std::string> ids;
  const double sq = std::sqrt(t);
  Eigen::VectorXd xi(d);
  for (std::size_t k = 0; k < verts.size(); ++k) {
    ids.push_back("v" + std::to_string(k));
    for (std::size_t i = 0; i < cfg.paths; ++i) {
      PathRng rng(cfg.seed, path_id(cfg, k, i), 0);
      for (int j = 0; j < d; ++j) xi(j) = rng.normal();
      const double b1 = verts[k].gamma.row(0).dot(xi) * sq + verts[k].mu(0) * t;
      values[k][i] = b1 * b1;
    }
  }
  const McEstimate est = summarize_values(values, ids, Mode::Upper, cfg);
  const EllipticityParams& prm = theta.params();
  IntegralBound out;
  out.lhs = est.value;
  out.lhs_se = est.std_error;
  out.argmax_index = est.argmax_index;
  const ControlValue& v = verts[est.argmax_index];
  out.closed_form = v.covariance()(0, 0) * t + v.mu(0) * v.mu(0) * t * t;
  out.rhs = 2.0 * (prm.sigma_high_sq + prm.beta * prm.beta * t) * t;
  return out;
}

DppResult dpp_check(const SdeModel& model, const UncertaintySet& theta, const Domain& domain, const Domain& inner,
                    const Functional& functional, const std::vector<ControlPolicy>& policies,
                    std::span<const double> x0, const McConfig& cfg, const ValueTable& table) {
  if (!table) throw std::invalid_argument("dpp_check needs a value table");
  if (inner.dim() != domain.dim()) throw DimensionError("inner domain dimension differs from the domain");
  const McEstimate lhs = estimate_value(model, theta, domain, functional, policies, x0, cfg);
  DppResult out;
  out.lhs = lhs.value;
  out.lhs_se = lhs.std_error;
  if (!inner.contains(x0, false)) {
    out.rhs = table(x0);
    out.rhs_se = 0.0;
  } else {
    check_exterior_ball(inner);
    const auto lb = try_lyapunov(model, theta, domain);
    const SimulationConfig sim = make_sim(cfg, domain, lb, true);
    const Records rec = run_family(model, inner, policies, x0, sim, cfg, &functional.f, &table);
    McEstimate rhs = summarize(rec, get_value, policy_ids(policies), functional.mode, cfg);
    rhs.censoring_bound = censoring_bound(rhs, lb, sim.t_max, inner, functional.f, table);
    out.rhs = rhs.value;
    out.rhs_se = rhs.std_error + rhs.censoring_bound;
  }
  if (!std::isfinite(out.rhs)) throw NumericalError("value table is not finite");
  out.residual = std::fabs(out.lhs - out.rhs);
  out.combined_se = std::hypot(out.lhs_se, out.rhs_se);
  return out;
}

std::vector<RefinementPoint> exit_time_gap(const SdeModel& model, const UncertaintySet& theta, const Domain& domain,
                                           std::span<const double> x0, const std::vector<double>& dt_list,
                                           const McConfig& cfg) {
  validate_point(domain, x0, model.n());
  check_exterior_ball(domain);
  const auto policies = vertex_policies(theta);
  validate_policies(policies, theta, model.d());
  const auto lb = try_lyapunov(model, theta, domain);
  std::vector<RefinementPoint> out;
  for (double dt : dt_list) {
    McConfig c = cfg;
    c.dt = dt;
    validate_config(c);
    const SimulationConfig sim = make_sim(c, domain, lb, false);
    const Records rec = run_family(model, domain, policies, x0, sim, c, nullptr, nullptr);
    const McEstimate e = summarize(rec, get_gap, policy_ids(policies), Mode::Upper, c);
    out.push_back({dt, e.value, e.std_error});
  }
  return out;
}

std::vector<RefinementPoint> boundary_exit_decay(const SdeModel& model, const UncertaintySet& theta,
                                                 const Domain& domain, std::span<const double> x_boundary,
                                                 const std::vector<double>& dt_list, const McConfig& cfg) {
  if (static_cast<int>(x_boundary.size()) != model.n() || domain.dim() != model.n()) {
    throw DimensionError("boundary point dimension does not match the model");
  }
  if (!(std::fabs(domain.signed_distance(x_boundary)) <= 1e-12)) {
    throw std::invalid_argument("boundary_exit_decay: start point is not on the boundary (|distance| > 1e-12)");
  }
  check_exterior_ball(domain);
  const auto policies = vertex_policies(theta);
  validate_policies(policies, theta, model.d());
  std::vector<RefinementPoint> out;
  for (double dt : dt_list) {
    McConfig c = cfg;
    c.dt = dt;
    c.t_max = std::max(1.0, dt);
    validate_config(c);
    SimulationConfig sim = make_sim(c, domain, std::nullopt, false);
    Records rec = run_family(model, domain, policies, x_boundary, sim, c, nullptr, nullptr);
    // Paths still inside at t = 1 count as tau ^ 1 = 1, not as failures.
    for (auto& v : rec) {
      for (auto& r : v) r.censored = false;
    }
    const McEstimate e = summarize(rec, get_tau_capped, policy_ids(policies), Mode::Upper, c);
    out.push_back({dt, e.value, e.std_error});
  }
  return out;
}

ContinuityReport continuity_modulus(const SdeModel& model, const UncertaintySet& theta, const Domain& domain,
                                    const std::vector<std::vector<double>>& x_list, const Functional& functional,
                                    const std::vector<ControlPolicy>& policies, const McConfig& cfg) {
  if (x_list.empty()) throw std::invalid_argument("continuity_modulus needs at least one point");
  McConfig c = cfg;
  c.common_random_numbers = true;
  ContinuityReport out;
  for (const auto& x : x_list) {
    out.points.push_back(x);
    out.estimates.push_back(estimate_value(model, theta, domain, functional, policies, x, c));
  }
  for (std::size_t i = 1; i < x_list.size(); ++i) {
    const double du = std::fabs(out.estimates[i].value - out.estimates[i - 1].value);
    double dx = 0.0;
    for (std::size_t j = 0; j < x_list[i].size(); ++j) dx += std::pow(x_list[i][j] - x_list[i - 1][j], 2);
    dx = std::sqrt(dx);
    out.max_abs_deviation = std::max(out.max_abs_deviation, du);
    if (dx > 0.0) out.max_ratio = std::max(out.max_ratio, du / dx);
  }
  return out;
}

}  // namespace gsde
