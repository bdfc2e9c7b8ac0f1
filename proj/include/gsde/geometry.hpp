#pragma once

#include "gsde/expr.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gsde {

enum class ExteriorBall { Satisfied, Violated, Unknown };

struct ExteriorBallReport {
  ExteriorBall status = ExteriorBall::Unknown;
  double min_radius = 0.0;  // smallest certified exterior-ball radius over probed points
  std::size_t probed = 0;
  std::size_t failed = 0;
};

/// How a discrete path's exit from Q is located between grid times.
enum class Refinement { Grid, Interpolate, Bridge };

std::string to_string(Refinement r);
Refinement refinement_from_string(const std::string& s);

/// A boundary piece used by the bridge correction: distance is positive on
/// the inside, normal points outward.
struct Face {
  double distance = 0.0;
  Eigen::VectorXd normal;
};

/// Bounded open set Q in R^n.
///
/// Catalog kinds (interval, box, ball, annulus) have exact signed distance.
/// Implicit domains Q = {g < 0} use ray bisection and are flagged approximate.
class Domain {
 public:
  enum class Kind { Interval, Box, Ball, Annulus, Implicit };

  static Domain interval(double a, double b);
  static Domain box(std::vector<double> lo, std::vector<double> hi);
  static Domain ball(std::vector<double> center, double radius);
  static Domain annulus(std::vector<double> center, double r_inner, double r_outer);
  static Domain implicit(expr::Expression g, std::vector<double> lo, std::vector<double> hi);

  Kind kind() const { return kind_; }
  int dim() const { return static_cast<int>(lo_.size()); }
  bool is_catalog() const { return kind_ != Kind::Implicit; }
  bool distance_is_exact() const { return is_catalog(); }

  /// Negative inside Q, zero on the boundary, positive outside.
  double signed_distance(std::span<const double> x) const;
  bool contains(std::span<const double> x, bool closed) const;

  /// Nearest boundary point (exact for catalog kinds).
  std::vector<double> project_to_boundary(std::span<const double> x) const;

  /// Bounding box of the closure.
  const std::vector<double>& lower() const { return bbox_lo_; }
  const std::vector<double>& upper() const { return bbox_hi_; }
  double diameter() const;

  /// Faces relevant for the bridge correction at x. Empty for implicit domains.
  std::vector<Face> faces(std::span<const double> x) const;

  // Kind-specific parameters.
  const std::vector<double>& lo() const { return lo_; }
  const std::vector<double>& hi() const { return hi_; }
  const std::vector<double>& center() const { return lo_; }
  double radius() const { return r_outer_; }
  double r_inner() const { return r_inner_; }
  double r_outer() const { return r_outer_; }
  const expr::Expression& level_set() const { return g_; }

 private:
  Domain() = default;
  void validate_point(std::span<const double> x) const;
  double implicit_distance(std::span<const double> x) const;

  Kind kind_ = Kind::Interval;
  std::vector<double> lo_, hi_;  // interval/box bounds; center for ball/annulus (in lo_)
  double r_inner_ = 0.0, r_outer_ = 0.0;
  expr::Expression g_;
  std::vector<double> bbox_lo_, bbox_hi_;
};

/// Q_eps = {x in Q : dist(x, dQ) > eps}. Throws if the result is empty or Q is implicit.
Domain erode(const Domain& q, double eps);
/// Q_{-eps} = {x : dist(x, Q) < eps}; boxes grow per side (a superset at corners).
Domain dilate(const Domain& q, double eps);

struct ProbeConfig {
  int grid_per_axis = 64;
  double r0 = 0.25;
  double r_min = 1e-3;
  std::size_t max_points = 400;
};

ExteriorBallReport exterior_ball(const Domain& q, const ProbeConfig& cfg = {});

enum class Crossing { None, Open, OpenAndClosed };

struct ExitEvent {
  Crossing kind = Crossing::None;
  double fraction = 1.0;  // of the step at which dQ is hit
  bool bridge = false;    // hit detected by the bridge correction only
};

/// Probability that a diffusion with covariance rate `a` (n x n) hit dQ
/// between two interior points, combining faces independently:
/// 1 - prod_f (1 - exp(-2 d1 d2 / (n^T a n dt))).
double bridge_hit_probability(const Domain& q, std::span<const double> x_prev, std::span<const double> x_next,
                              const Eigen::MatrixXd& a, double dt, std::size_t* face_index = nullptr);

/// Locates the open-set exit between consecutive simulation points.
/// `uniform` drives the bridge test; `point` receives the exit location.
ExitEvent exit_event(const Domain& q, std::span<const double> x_prev, std::span<const double> x_next,
                     const Eigen::MatrixXd& a, double dt, Refinement mode, double uniform, std::span<double> point);

Refinement default_refinement(const Domain& q);

}  // namespace gsde
