#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace gsde {

/// One admissible (gamma, mu) pair: gamma shapes the quadratic variation
/// density gamma*gamma^T, mu is the drift density of the noise.
struct ControlValue {
  Eigen::MatrixXd gamma;
  Eigen::VectorXd mu;

  int dim() const { return static_cast<int>(mu.size()); }
  Eigen::MatrixXd covariance() const { return gamma * gamma.transpose(); }
};

bool operator==(const ControlValue& a, const ControlValue& b);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EllipticityParams {
  double sigma_low_sq = 0.0;
  double sigma_high_sq = 0.0;
  double beta = 0.0;
  bool degenerate = false;  // sigma_low_sq == 0
};

/// Finite representation of the uncertainty set Theta.
///
/// The generator G(A, p) = sup over Theta of 1/2 <A, gamma gamma^T> + <p, mu>
/// is evaluated as a max over vertices(). For DiagBox with diagonal A this is
/// exact; for arbitrary convex sets given by a vertex list it is a lower bound.
class UncertaintySet {
 public:
  enum class Kind { Singleton, DiagBox, VertexList };

  static UncertaintySet singleton(ControlValue c);
  /// gamma = diag(s_1..s_d) with s_i in [sigma_low, sigma_high], mu_i in [-beta_i, beta_i].
  static UncertaintySet diag_box(int d, double sigma_low, double sigma_high, std::vector<double> beta);
  static UncertaintySet vertex_list(std::vector<ControlValue> vertices);

  Kind kind() const { return kind_; }
  int dim() const { return d_; }
  double sigma_low() const { return sigma_low_; }
  double sigma_high() const { return sigma_high_; }
  const std::vector<double>& beta() const { return beta_; }

  /// Represented controls. DiagBox corners are ordered lexicographically
  /// (gamma diagonal first, then mu), smallest first.
  const std::vector<ControlValue>& vertices() const { return vertices_; }

  /// Cached tightest constants over the representation.
  const EllipticityParams& params() const { return params_; }

 private:
  UncertaintySet() = default;
  void finalize();

  Kind kind_ = Kind::Singleton;
  int d_ = 0;
  double sigma_low_ = 0.0;
  double sigma_high_ = 0.0;
  std::vector<double> beta_;
  std::vector<ControlValue> vertices_;
  EllipticityParams params_;
};

/// 1/2 <A, gamma gamma^T> + <p, mu>.
double control_objective(const ControlValue& c, const Eigen::MatrixXd& a, const Eigen::VectorXd& p);

double eval_G(const UncertaintySet& theta, const Eigen::MatrixXd& a, const Eigen::VectorXd& p);

/// Index into theta.vertices() of a maximizer; ties go to the lowest index.
std::size_t argmax_vertex(const UncertaintySet& theta, const Eigen::MatrixXd& a, const Eigen::VectorXd& p);

ControlValue argmax_control(const UncertaintySet& theta, const Eigen::MatrixXd& a, const Eigen::VectorXd& p);

/// Throws std::domain_error when require_uniform is set and sigma_low_sq == 0.
EllipticityParams ellipticity_params(const UncertaintySet& theta, bool require_uniform = false);

}  // namespace gsde
