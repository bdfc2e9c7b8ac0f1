#include "gsde/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gsde {

SdeModel::SdeModel(int n, int d, std::vector<expr::Expression> drift, std::vector<expr::Expression> sigma,
                   std::vector<expr::Expression> h, std::optional<ModelBounds> bounds)
    : n_(n), d_(d), drift_(std::move(drift)), sigma_(std::move(sigma)), h_(std::move(h)), bounds_(bounds) {
  if (n_ < 1 || d_ < 1) throw DimensionError("model dimensions must be positive");
  if (static_cast<int>(drift_.size()) != n_) {
    throw DimensionError("drift has " + std::to_string(drift_.size()) + " components, expected n = " +
                         std::to_string(n_));
  }
  if (static_cast<int>(sigma_.size()) != n_ * d_) {
    throw DimensionError("sigma has " + std::to_string(sigma_.size()) + " entries, expected n*d = " +
                         std::to_string(n_ * d_));
  }
  if (!h_.empty()) {
    if (static_cast<int>(h_.size()) != d_ * d_ * n_) {
      throw DimensionError("h has " + std::to_string(h_.size()) + " entries, expected d*d*n = " +
                           std::to_string(d_ * d_ * n_));
    }
    for (int i = 0; i < d_; ++i) {
      for (int j = i + 1; j < d_; ++j) {
        for (int k = 0; k < n_; ++k) {
          if (!(h_[static_cast<std::size_t>((i * d_ + j) * n_ + k)] ==
                h_[static_cast<std::size_t>((j * d_ + i) * n_ + k)])) {
            throw std::invalid_argument("h must be symmetric: h_" + std::to_string(i + 1) + std::to_string(j + 1) +
                                        " differs from h_" + std::to_string(j + 1) + std::to_string(i + 1));
          }
        }
      }
    }
  }
  auto check_vars = [&](const std::vector<expr::Expression>& v, const char* what) {
    for (const auto& e : v) {
      if (e.max_variable() > n_) {
        throw DimensionError(std::string(what) + " references x" + std::to_string(e.max_variable()) +
                             " beyond state dimension " + std::to_string(n_));
      }
    }
  };
  check_vars(drift_, "drift");
  check_vars(sigma_, "sigma");
  check_vars(h_, "h");
  sigma_constant_ = std::all_of(sigma_.begin(), sigma_.end(), [](const auto& e) { return e.is_constant(); });
  drift_constant_ = std::all_of(drift_.begin(), drift_.end(), [](const auto& e) { return e.is_constant(); }) &&
                    std::all_of(h_.begin(), h_.end(), [](const auto& e) { return e.is_constant(); });
}

void SdeModel::eval_drift(std::span<const double> x, std::span<double> out) const {
  for (int i = 0; i < n_; ++i) out[static_cast<std::size_t>(i)] = drift_[static_cast<std::size_t>(i)].evaluate(x);
}

void SdeModel::eval_sigma(std::span<const double> x, std::span<double> out) const {
  for (std::size_t i = 0; i < sigma_.size(); ++i) out[i] = sigma_[i].evaluate(x);
}

Eigen::MatrixXd SdeModel::sigma_matrix(std::span<const double> x) const {
  Eigen::MatrixXd s(n_, d_);
  for (int i = 0; i < n_; ++i) {
    for (int j = 0; j < d_; ++j) s(i, j) = sigma_[static_cast<std::size_t>(i * d_ + j)].evaluate(x);
  }
  return s;
}

void SdeModel::eval_effective_drift(std::span<const double> x, const Eigen::MatrixXd& cov,
                                    std::span<double> out) const {
  eval_drift(x, out);
  if (h_.empty()) return;
  for (int i = 0; i < d_; ++i) {
    for (int j = 0; j < d_; ++j) {
      const double c = cov(i, j);
      if (c == 0.0) continue;
      for (int k = 0; k < n_; ++k) {
        out[static_cast<std::size_t>(k)] += h_[static_cast<std::size_t>((i * d_ + j) * n_ + k)].evaluate(x) * c;
      }
    }
  }
}

std::size_t FeedbackField::lookup(std::span<const double> x) const {
  std::size_t flat = 0;
  std::size_t stride = 1;
  for (int i = 0; i < dim; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double s = std::round((x[k] - origin[k]) / spacing[k]);
    const int idx = std::isfinite(s) ? static_cast<int>(std::clamp(s, 0.0, static_cast<double>(counts[k] - 1))) : 0;
    flat += static_cast<std::size_t>(idx) * stride;
    stride *= static_cast<std::size_t>(counts[k]);
  }
  return node_vertex[flat];
}

ControlPolicy ControlPolicy::constant(ControlValue c, std::string id, std::size_t vertex) {
  ControlPolicy p;
  p.id_ = std::move(id);
  p.constant_.cov = c.covariance();
  p.constant_.value = std::move(c);
  p.constant_.vertex = vertex;
  return p;
}

ControlPolicy ControlPolicy::feedback(std::shared_ptr<const FeedbackField> field, std::string id) {
  if (!field || field->controls.empty()) throw std::invalid_argument("feedback policy needs a nonempty field");
  ControlPolicy p;
  p.id_ = std::move(id);
  p.field_ = std::move(field);
  return p;
}

const PreparedControl& ControlPolicy::at(double /*t*/, std::span<const double> x) const {
  if (!field_) return constant_;
  return field_->controls[field_->lookup(x)];
}

std::vector<const PreparedControl*> ControlPolicy::controls() const {
  std::vector<const PreparedControl*> out;
  if (!field_) {
    out.push_back(&constant_);
  } else {
    for (const auto& c : field_->controls) out.push_back(&c);
  }
  return out;
}

std::vector<ControlPolicy> vertex_policies(const UncertaintySet& theta) {
  std::vector<ControlPolicy> out;
  const auto& v = theta.vertices();
  for (std::size_t k = 0; k < v.size(); ++k) out.push_back(ControlPolicy::constant(v[k], "v" + std::to_string(k), k));
  return out;
}

void check_policy_membership(const ControlPolicy& policy, const UncertaintySet& theta) {
  const auto& v = theta.vertices();
  for (const PreparedControl* c : policy.controls()) {
    if (std::find(v.begin(), v.end(), c->value) == v.end()) {
      throw std::invalid_argument("policy '" + policy.id() + "' returns a control outside the uncertainty set");
    }
  }
}

std::vector<double> step(const SdeModel& model, const ControlValue& control, std::span<const double> x, double dt,
                         std::span<const double> xi) {
  const int n = model.n();
  const int d = model.d();
  if (static_cast<int>(x.size()) != n || static_cast<int>(xi.size()) != d || control.dim() != d) {
    throw DimensionError("step: dimension mismatch between state, noise, control and model");
  }
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
  const Eigen::MatrixXd cov = control.covariance();
  std::vector<double> drift(static_cast<std::size_t>(n));
  model.eval_effective_drift(x, cov, drift);
  std::vector<double> sig(static_cast<std::size_t>(n * d));
  model.eval_sigma(x, sig);
  const double sq = std::sqrt(dt);
  std::vector<double> db(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += control.gamma(j, k) * xi[static_cast<std::size_t>(k)];
    db[static_cast<std::size_t>(j)] = s * sq + control.mu(j) * dt;
  }
  std::vector<double> out(x.begin(), x.end());
  for (int i = 0; i < n; ++i) {
    double s = drift[static_cast<std::size_t>(i)] * dt;
    for (int j = 0; j < d; ++j) s += sig[static_cast<std::size_t>(i * d + j)] * db[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] += s;
    if (!std::isfinite(out[static_cast<std::size_t>(i)])) {
      throw NumericalError("non-finite state after step (coefficient evaluation produced NaN/Inf)");
    }
  }
  return out;
}

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

ExitSample simulate_to_exit(const SdeModel& model, const ControlPolicy& policy, const Domain& domain,
                            std::span<const double> x0, const SimulationConfig& cfg, PathStreams& rng,
                            const expr::Expression* f, RecordedPath* path) {
  const int n = model.n();
  const int d = model.d();
  const auto un = static_cast<std::size_t>(n);
  const auto ud = static_cast<std::size_t>(d);
  if (static_cast<int>(x0.size()) != n || domain.dim() != n) {
    throw DimensionError("simulate_to_exit: x0/domain dimension does not match the model");
  }
  if (!all_finite(x0)) throw std::invalid_argument("simulate_to_exit: x0 must be finite");
  if (!(cfg.dt > 0.0) || !(cfg.t_max >= cfg.dt)) {
    throw std::invalid_argument("simulate_to_exit: need dt > 0 and t_max >= dt");
  }

  ExitSample out;
  std::vector<double> x(x0.begin(), x0.end());
  std::vector<double> xn(un), drift(un), sig(un * ud), db(ud), xi(ud), point(un);
  const double dt = cfg.dt;
  const double sq = std::sqrt(dt);

  if (path) {
    path->n = n;
    path->dt = dt;
    path->states.assign(x.begin(), x.end());
    path->controls.clear();
  }

  double sd = domain.signed_distance(x);
  bool open_done = !(sd < 0.0);
  bool closed_done = sd > 0.0;
  out.exit_point = x;
  if (open_done) out.tau_open = 0.0;
  if (closed_done) out.tau_closed = 0.0;

  const bool const_sigma = model.sigma_is_constant();
  const bool const_drift = model.drift_is_constant();
  if (const_sigma) model.eval_sigma(x, sig);
  if (const_drift && !model.has_h()) model.eval_drift(x, drift);

  // Diffusion covariance a = sigma cov sigma^T, needed by the bridge test only.
  const bool bridge = cfg.refinement == Refinement::Bridge && domain.is_catalog();
  Eigen::MatrixXd a(n, n), tmp(n, d);
  const PreparedControl* a_control = nullptr;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> sig_map(sig.data(), n, d);

  const auto max_steps = static_cast<std::size_t>(std::ceil(cfg.t_max / dt - 1e-9));
  double kahan_c = 0.0;
  auto add_cost = [&](double v) {
    const double y = v - kahan_c;
    const double t = out.running_cost + y;
    kahan_c = (t - out.running_cost) - y;
    out.running_cost = t;
  };

  std::size_t k = 0;
  for (; k < max_steps && !(open_done && (closed_done || cfg.stop_at_open_exit)); ++k) {
    const double t = static_cast<double>(k) * dt;
    const PreparedControl& ctl = policy.at(t, x);
    for (std::size_t j = 0; j < ud; ++j) xi[j] = rng.normals.normal();

    if (!const_drift || model.has_h()) model.eval_effective_drift(x, ctl.cov, drift);
    if (!const_sigma) model.eval_sigma(x, sig);
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (int m = 0; m < d; ++m) s += ctl.value.gamma(j, m) * xi[static_cast<std::size_t>(m)];
      db[static_cast<std::size_t>(j)] = s * sq + ctl.value.mu(j) * dt;
    }
    for (std::size_t i = 0; i < un; ++i) {
      double s = drift[i] * dt;
      for (std::size_t j = 0; j < ud; ++j) s += sig[i * ud + j] * db[j];
      xn[i] = x[i] + s;
    }
    if (!all_finite(xn)) throw NumericalError("non-finite state during simulation (NaN/Inf coefficient)");

    const double sd_next = domain.signed_distance(xn);
    if (!open_done) {
      const double f_here = f ? f->evaluate(x) : 0.0;
      if (f && !std::isfinite(f_here)) throw NumericalError("running cost f is not finite along the path");
      ExitEvent ev;
      if (!(sd_next < 0.0) || bridge) {
        double u = 1.0;
        if (sd_next < 0.0) {
          if (!const_sigma || a_control != &ctl) {
            tmp.noalias() = sig_map * ctl.cov;
            a.noalias() = tmp * sig_map.transpose();
            a_control = const_sigma ? &ctl : nullptr;
          }
          const double p = bridge_hit_probability(domain, x, xn, a, dt);
          if (p > 0.0) u = rng.bridge.uniform_at(k);
          if (u < p) ev = exit_event(domain, x, xn, a, dt, cfg.refinement, u, point);
        } else {
          ev = exit_event(domain, x, xn, a, dt, cfg.refinement, u, point);
        }
      }
      if (ev.kind != Crossing::None) {
        out.tau_open = std::min(t + ev.fraction * dt, static_cast<double>(k + 1) * dt);
        out.exit_point = point;
        add_cost(f_here * ev.fraction * dt);
        open_done = true;
      } else {
        add_cost(f_here * dt);
      }
    }
    if (!closed_done && sd_next > 0.0) {
      out.tau_closed = static_cast<double>(k + 1) * dt;
      closed_done = true;
    }
    std::swap(x, xn);
    if (path) {
      path->states.insert(path->states.end(), x.begin(), x.end());
      path->controls.push_back(&ctl);
    }
  }
  out.steps = k;
  const double t_end = static_cast<double>(k) * dt;
  if (!open_done) {
    out.censored = true;
    out.tau_open = cfg.t_max;
    out.tau_closed = cfg.t_max;
    out.exit_point = x;
    out.closed_censored = true;
  } else if (!closed_done) {
    out.closed_censored = true;
    out.tau_closed = cfg.stop_at_open_exit ? std::max(out.tau_open, t_end) : cfg.t_max;
  }
  return out;
}

double ito_residual(const SdeModel& model, const expr::Expression& h, std::span<const expr::Expression> grad,
                    std::span<const expr::Expression> hess, const RecordedPath& path) {
  const int n = model.n();
  if (path.n != n || static_cast<int>(grad.size()) != n || static_cast<int>(hess.size()) != n * n) {
    throw DimensionError("ito_residual: gradient/Hessian/path dimensions do not match the model");
  }
  const std::size_t steps = path.steps();
  double sum = 0.0, comp = 0.0;
  auto add = [&](double v) {
    const double y = v - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  };
  for (std::size_t k = 0; k < steps; ++k) {
    const auto xk = path.state(k);
    const auto xk1 = path.state(k + 1);
    double first = 0.0;
    for (int i = 0; i < n; ++i) {
      first += grad[static_cast<std::size_t>(i)].evaluate(xk) *
               (xk1[static_cast<std::size_t>(i)] - xk[static_cast<std::size_t>(i)]);
    }
    const Eigen::MatrixXd s = model.sigma_matrix(xk);
    const Eigen::MatrixXd a = s * path.controls[k]->cov * s.transpose();
    double second = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (a(i, j) == 0.0) continue;
        second += hess[static_cast<std::size_t>(i * n + j)].evaluate(xk) * a(i, j);
      }
    }
    add(first);
    add(0.5 * second * path.dt);
  }
  const double lhs = h.evaluate(path.state(steps)) - h.evaluate(path.state(0));
  return std::fabs(lhs - sum);
}

namespace {

double radical_inverse(std::size_t i, unsigned base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (i > 0) {
    r += f * static_cast<double>(i % base);
    i /= base;
    f *= inv;
  }
  return r;
}

constexpr unsigned kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};

}  // namespace

std::vector<std::vector<double>> sample_closure(const Domain& domain, std::size_t n_samples) {
  const int n = domain.dim();
  if (n > static_cast<int>(std::size(kPrimes))) throw DimensionError("sample_closure supports up to 12 dimensions");
  const auto& lo = domain.lower();
  const auto& hi = domain.upper();
  std::vector<std::vector<double>> pts;
  std::vector<double> x(static_cast<std::size_t>(n));

  // Bounding-box corners.
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      x[k] = (mask >> k) & 1u ? hi[k] : lo[k];
    }
    if (domain.contains(x, true)) pts.push_back(x);
  }
  std::size_t accepted = 0;
  const std::size_t max_tries = 64 * n_samples + 1024;
  for (std::size_t i = 1; accepted < n_samples && i < max_tries; ++i) {
    for (int j = 0; j < n; ++j) {
      const auto k = static_cast<std::size_t>(j);
      x[k] = lo[k] + (hi[k] - lo[k]) * radical_inverse(i, kPrimes[j]);
    }
    if (!domain.contains(x, true)) continue;
    pts.push_back(x);
    ++accepted;
    if (domain.is_catalog() && accepted <= 64) pts.push_back(domain.project_to_boundary(x));
  }
  if (pts.empty()) throw std::invalid_argument("sample_closure: domain closure has no sample points");
  return pts;
}

Nondegeneracy nondegeneracy_check(const SdeModel& model, const Domain& domain, std::size_t n_samples) {
  if (n_samples < 1) throw std::invalid_argument("nondegeneracy_check: need at least one sample");
  const auto pts = sample_closure(domain, n_samples);
  Nondegeneracy out{std::numeric_limits<double>::infinity(), 0.0};
  for (const auto& x : pts) {
    const Eigen::MatrixXd s = model.sigma_matrix(x);
    if (!s.allFinite()) throw NumericalError("sigma is not finite on the closure of Q");
    const Eigen::MatrixXd ss = s * s.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ss, Eigen::EigenvaluesOnly);
    out.lambda_hat = std::min(out.lambda_hat, eig.eigenvalues().minCoeff());
    out.c_sigma_sq_hat = std::max(out.c_sigma_sq_hat, eig.eigenvalues().maxCoeff());
  }
  out.lambda_hat = std::max(0.0, out.lambda_hat);
  return out;
}

ModelBounds estimate_model_bounds(const SdeModel& model, const UncertaintySet& theta, const Domain& domain,
                                  std::size_t n_samples) {
  const auto nd = nondegeneracy_check(model, domain, n_samples);
  const auto pts = sample_closure(domain, n_samples);
  const int n = model.n();
  const int d = model.d();
  const double s2 = theta.params().sigma_high_sq;
  double c_b = 0.0;
  std::vector<double> b(static_cast<std::size_t>(n));
  for (const auto& x : pts) {
    model.eval_drift(x, b);
    double nb = 0.0;
    for (double v : b) nb += v * v;
    double hn = 0.0;
    if (model.has_h()) {
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
          double s = 0.0;
          for (int k = 0; k < n; ++k) {
            const double v = model.h()[static_cast<std::size_t>((i * d + j) * n + k)].evaluate(x);
            s += v * v;
          }
          hn += std::sqrt(s);
        }
      }
    }
    c_b = std::max(c_b, std::sqrt(nb) + s2 * hn);
  }
  return {c_b, std::sqrt(nd.c_sigma_sq_hat), nd.lambda_hat};
}

}  // namespace gsde
