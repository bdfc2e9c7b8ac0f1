#pragma once

#include "gsde/dynamics.hpp"
#include "gsde/expr.hpp"
#include "gsde/geometry.hpp"
#include "gsde/uncertainty.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gsde {

/// Upper: sup over the family (the G-expectation). Lower: inf, i.e. -E^[-X].
enum class Mode { Upper, Lower };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

/// u(x) = E^[phi(X_tau) - int_0^tau f(X_s) ds].
struct Functional {
  expr::Expression phi;
  expr::Expression f;
  Mode mode = Mode::Upper;
};

struct McConfig {
  std::size_t paths = 10000;
  double dt = 1e-3;
  std::uint64_t seed = 1;
  std::optional<double> t_max;             // default: 10 * C_tau
  std::optional<Refinement> refinement;    // default: per domain kind
  bool common_random_numbers = true;
  std::size_t bootstrap = 0;               // resamples for the max-of-means bias
  unsigned threads = 0;                    // 0: hardware concurrency
};

struct PolicyEstimate {
  std::string id;
  double mean = 0.0;
  double std_error = 0.0;
};

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_paths = 0;
  std::vector<PolicyEstimate> per_policy;
  std::string argmax_policy;
  std::size_t argmax_index = 0;
  double censored_fraction = 0.0;
  double censoring_bound = 0.0;
  std::optional<double> bootstrap_bias;
  std::optional<double> bootstrap_se;
};

/// Value of the functional at a point; used for precomputed value tables.
using ValueTable = std::function<double(std::span<const double>)>;

McEstimate estimate_value(const SdeModel& model, const UncertaintySet& theta, const Domain& domain,
                          const Functional& functional, const std::vector<ControlPolicy>& policies,
                          std::span<const double> x0, const McConfig& cfg);

struct ExitMoments {
  McEstimate tau;
  McEstimate tau_sq;
};

/// Family max of the mean closed-set exit time and of its square.
ExitMoments estimate_exit_moments(const SdeModel& model, const UncertaintySet& theta, const Domain& domain,
                                  const std::vector<ControlPolicy>& policies, std::span<const double> x0,
                                  const McConfig& cfg);

struct LyapunovBounds {
  double alpha = 0.0;
  double a = 0.0;
  double c_h = 0.0;
  double c_tau = 0.0;
  double c_tau_sq = 0.0;
};

/// Exit-time moment bounds from h(y) = A exp(alpha y_1) over the bounding box.
/// Throws std::domain_error if sigma_low^2 * lambda == 0.
LyapunovBounds lyapunov_bounds(const ModelBounds& bounds, const EllipticityParams& params, const Domain& domain);

/// Model bounds as supplied with the model, otherwise sampled on the closure.
ModelBounds effective_model_bounds(const SdeModel& model, const UncertaintySet& theta, const Domain& domain);

struct GMartingaleResult {
  McEstimate estimate;
  double target = 0.0;
};

/// E^[1/2 <A, <B>_t> + <p, B_t>] over constant vertex controls against G(A, p) t.
GMartingaleResult gmartingale_check(const UncertaintySet& theta, const Eigen::MatrixXd& a, const Eigen::VectorXd& p,
                                    double t, const McConfig& cfg);

struct IntegralBound {
  double lhs = 0.0;
  double lhs_se = 0.0;
  double rhs = 0.0;
  double closed_form = 0.0;  // gamma^2 T + mu^2 T^2 at the argmax vertex (first coordinate)
  std::size_t argmax_index = 0;
};

/// eta = 1: lhs = max over vertices of E[(B_T^1)^2], rhs = 2 (sigma_high^2 + beta^2 T) T.
IntegralBound check_integral_bound(const UncertaintySet& theta, double t, const McConfig& cfg);

struct DppResult {
  double lhs = 0.0;
  double lhs_se = 0.0;
  double rhs = 0.0;
  double rhs_se = 0.0;
  double residual = 0.0;
  double combined_se = 0.0;
};

/// |u(x0) - E^[u(X_tau_inner) - int_0^tau_inner f]| with u on the inner boundary from `table`.
/// When x0 is not inside the inner domain the stopping time is zero and rhs = table(x0).
DppResult dpp_check(const SdeModel& model, const UncertaintySet& theta, const Domain& domain, const Domain& inner,
                    const Functional& functional, const std::vector<ControlPolicy>& policies,
                    std::span<const double> x0, const McConfig& cfg, const ValueTable& table);

struct RefinementPoint {
  double dt = 0.0;
  double mean = 0.0;
  double std_error = 0.0;
};

/// Family max of mean(tau_closed - tau_open) per dt, over the vertex policies.
std::vector<RefinementPoint> exit_time_gap(const SdeModel& model, const UncertaintySet& theta, const Domain& domain,
                                           std::span<const double> x0, const std::vector<double>& dt_list,
                                           const McConfig& cfg);

/// Family max of mean(tau_closed ^ 1) from a boundary point, per dt.
std::vector<RefinementPoint> boundary_exit_decay(const SdeModel& model, const UncertaintySet& theta,
                                                 const Domain& domain, std::span<const double> x_boundary,
                                                 const std::vector<double>& dt_list, const McConfig& cfg);

struct ContinuityReport {
  std::vector<std::vector<double>> points;
  std::vector<McEstimate> estimates;
  double max_abs_deviation = 0.0;  // over adjacent pairs
  double max_ratio = 0.0;          // |u_i - u_j| / |x_i - x_j| over adjacent pairs, 0 for coincident points
};

ContinuityReport continuity_modulus(const SdeModel& model, const UncertaintySet& theta, const Domain& domain,
                                    const std::vector<std::vector<double>>& x_list, const Functional& functional,
                                    const std::vector<ControlPolicy>& policies, const McConfig& cfg);

}  // namespace gsde
