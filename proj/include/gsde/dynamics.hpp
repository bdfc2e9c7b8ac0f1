#pragma once

#include "gsde/expr.hpp"
#include "gsde/geometry.hpp"
#include "gsde/rng.hpp"
#include "gsde/uncertainty.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsde {

/// Sup-norm constants of the coefficients on the closure of Q.
struct ModelBounds {
  double c_b = 0.0;
  double c_sigma = 0.0;
  double lambda = 0.0;
};

/// A NaN/Inf showed up in a coefficient or functional evaluation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// dX = b(X) dt + sum_ij h_ij(X) d<B^i,B^j> + sigma(X) dB, with X in R^n and B in R^d.
class SdeModel {
 public:
  /// sigma is n*d row-major; h is empty or d*d*n with h[(i*d + j)*n + k]
  /// the k-th component of h_ij. Throws unless h_ij == h_ji structurally.
  SdeModel(int n, int d, std::vector<expr::Expression> drift, std::vector<expr::Expression> sigma,
           std::vector<expr::Expression> h = {}, std::optional<ModelBounds> bounds = std::nullopt);

  int n() const { return n_; }
  int d() const { return d_; }
  const std::vector<expr::Expression>& drift() const { return drift_; }
  const std::vector<expr::Expression>& sigma() const { return sigma_; }
  const std::vector<expr::Expression>& h() const { return h_; }
  bool has_h() const { return !h_.empty(); }
  const std::optional<ModelBounds>& bounds() const { return bounds_; }
  bool sigma_is_constant() const { return sigma_constant_; }
  bool drift_is_constant() const { return drift_constant_; }

  void eval_drift(std::span<const double> x, std::span<double> out) const;
  /// n*d row-major.
  void eval_sigma(std::span<const double> x, std::span<double> out) const;
  Eigen::MatrixXd sigma_matrix(std::span<const double> x) const;
  /// b(x) + sum_ij h_ij(x) (gamma gamma^T)_ij
  void eval_effective_drift(std::span<const double> x, const Eigen::MatrixXd& cov, std::span<double> out) const;

 private:
  int n_, d_;
  std::vector<expr::Expression> drift_, sigma_, h_;
  std::optional<ModelBounds> bounds_;
  bool sigma_constant_ = false;
  bool drift_constant_ = false;
};

/// Control with its covariance precomputed for the simulation loop.
struct PreparedControl {
  ControlValue value;
  Eigen::MatrixXd cov;  // gamma gamma^T
  std::size_t vertex = 0;
};

/// Per-node controls on a uniform grid, looked up by nearest node.
struct FeedbackField {
  int dim = 1;
  std::vector<double> origin;
  std::vector<double> spacing;
  std::vector<int> counts;
  std::vector<std::size_t> node_vertex;  // index into controls, row-major with axis 0 fastest
  std::vector<PreparedControl> controls;

  std::size_t lookup(std::span<const double> x) const;
};

/// A selection t,x -> (gamma, mu) in Theta; one measure of the representing family.
class ControlPolicy {
 public:
  static ControlPolicy constant(ControlValue c, std::string id, std::size_t vertex = 0);
  static ControlPolicy feedback(std::shared_ptr<const FeedbackField> field, std::string id);

  const PreparedControl& at(double t, std::span<const double> x) const;
  const std::string& id() const { return id_; }
  bool is_constant() const { return field_ == nullptr; }
  const FeedbackField* field() const { return field_.get(); }

  /// Every control the policy can return.
  std::vector<const PreparedControl*> controls() const;

 private:
  std::string id_;
  PreparedControl constant_;
  std::shared_ptr<const FeedbackField> field_;
};

/// One constant policy per represented vertex, ids "v0", "v1", ...
std::vector<ControlPolicy> vertex_policies(const UncertaintySet& theta);

/// Throws std::invalid_argument if a policy can return a control outside the representation.
void check_policy_membership(const ControlPolicy& policy, const UncertaintySet& theta);

struct ExitSample {
  double tau_open = 0.0;
  double tau_closed = 0.0;
  std::vector<double> exit_point;
  double running_cost = 0.0;
  bool censored = false;
  bool closed_censored = false;
  std::size_t steps = 0;
};

struct RecordedPath {
  int n = 0;
  double dt = 0.0;
  std::vector<double> states;  // (steps+1) * n
  std::vector<const PreparedControl*> controls;  // one per step

  std::size_t steps() const { return controls.size(); }
  std::span<const double> state(std::size_t k) const {
    return {states.data() + k * static_cast<std::size_t>(n), static_cast<std::size_t>(n)};
  }
};

struct SimulationConfig {
  double dt = 1e-3;
  double t_max = 10.0;
  Refinement refinement = Refinement::Bridge;
  /// Stop after the open exit instead of continuing to the closed exit.
  bool stop_at_open_exit = false;
};

/// x' = x + b dt + sum h_ij (gamma gamma^T)_ij dt + sigma (gamma xi sqrt(dt) + mu dt).
std::vector<double> step(const SdeModel& model, const ControlValue& control, std::span<const double> x, double dt,
                         std::span<const double> xi);

/// Streams for one path: normals from substream 0, bridge uniforms from substream 1.
struct PathStreams {
  PathRng normals;
  PathRng bridge;
  PathStreams(std::uint64_t seed, std::uint64_t path) : normals(seed, path, 0), bridge(seed, path, 1) {}
};

/// Simulates until the state is strictly outside the closure of Q (or t_max).
/// tau_open is located with the configured refinement; tau_closed is the first
/// grid time outside the closure. f, if given, is integrated up to tau_open by
/// the left-endpoint rule.
ExitSample simulate_to_exit(const SdeModel& model, const ControlPolicy& policy, const Domain& domain,
                            std::span<const double> x0, const SimulationConfig& cfg, PathStreams& rng,
                            const expr::Expression* f = nullptr, RecordedPath* path = nullptr);

/// |h(X_T) - h(x0) - sum_k [Dh(X_k) . dX_k + 1/2 tr(D^2h(X_k) a_k) dt]| along a
/// recorded path; a_k = sigma gamma gamma^T sigma^T. grad has n entries, hess n*n.
double ito_residual(const SdeModel& model, const expr::Expression& h, std::span<const expr::Expression> grad,
                    std::span<const expr::Expression> hess, const RecordedPath& path);

struct Nondegeneracy {
  double lambda_hat = 0.0;        // min eigenvalue of sigma sigma^T
  double c_sigma_sq_hat = 0.0;    // max eigenvalue of sigma sigma^T
};

/// Quasi-random (Halton) sample of the closure of Q, plus bounding-box corners
/// and boundary projections that lie in the closure.
std::vector<std::vector<double>> sample_closure(const Domain& domain, std::size_t n_samples);

Nondegeneracy nondegeneracy_check(const SdeModel& model, const Domain& domain, std::size_t n_samples);

/// Sampled C_b (including the h-term at sigma_high^2), C_sigma and lambda.
ModelBounds estimate_model_bounds(const SdeModel& model, const UncertaintySet& theta, const Domain& domain,
                                  std::size_t n_samples = 4096);

}  // namespace gsde
