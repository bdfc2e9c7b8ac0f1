#include "gsde/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace gsde {

std::string to_string(Refinement r) {
  switch (r) {
    case Refinement::Grid: return "grid";
    case Refinement::Interpolate: return "interpolate";
    case Refinement::Bridge: return "bridge";
  }
  return "grid";
}

Refinement refinement_from_string(const std::string& s) {
  if (s == "grid") return Refinement::Grid;
  if (s == "interpolate") return Refinement::Interpolate;
  if (s == "bridge") return Refinement::Bridge;
  throw std::invalid_argument("unknown refinement mode '" + s + "' (expected grid, interpolate or bridge)");
}

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double distance_to_center(std::span<const double> x, const std::vector<double>& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double d = x[i] - c[i];
    s += d * d;
  }
  return std::sqrt(s);
}

void require_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + " must be finite");
  }
}

}  // namespace

Domain Domain::interval(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b) || !(a < b)) throw std::invalid_argument("interval requires a < b");
  Domain q;
  q.kind_ = Kind::Interval;
  q.lo_ = {a};
  q.hi_ = {b};
  q.bbox_lo_ = q.lo_;
  q.bbox_hi_ = q.hi_;
  return q;
}

Domain Domain::box(std::vector<double> lo, std::vector<double> hi) {
  if (lo.empty() || lo.size() != hi.size()) throw std::invalid_argument("box bounds must have equal nonzero length");
  require_finite(lo, "box bounds");
  require_finite(hi, "box bounds");
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (!(lo[i] < hi[i])) throw std::invalid_argument("box requires lo < hi on every axis");
  }
  Domain q;
  q.kind_ = lo.size() == 1 ? Kind::Interval : Kind::Box;
  q.lo_ = std::move(lo);
  q.hi_ = std::move(hi);
  q.bbox_lo_ = q.lo_;
  q.bbox_hi_ = q.hi_;
  return q;
}

Domain Domain::ball(std::vector<double> center, double radius) {
  if (center.empty()) throw std::invalid_argument("ball center must be nonempty");
  require_finite(center, "ball center");
  if (!(radius > 0.0) || !std::isfinite(radius)) throw std::invalid_argument("ball radius must be positive");
  Domain q;
  q.kind_ = Kind::Ball;
  q.lo_ = std::move(center);
  q.r_outer_ = radius;
  for (double c : q.lo_) {
    q.bbox_lo_.push_back(c - radius);
    q.bbox_hi_.push_back(c + radius);
  }
  return q;
}

Domain Domain::annulus(std::vector<double> center, double r_inner, double r_outer) {
  if (center.empty()) throw std::invalid_argument("annulus center must be nonempty");
  require_finite(center, "annulus center");
  if (!(r_inner > 0.0) || !(r_outer > r_inner) || !std::isfinite(r_outer)) {
    throw std::invalid_argument("annulus requires 0 < r_inner < r_outer");
  }
  Domain q;
  q.kind_ = Kind::Annulus;
  q.lo_ = std::move(center);
  q.r_inner_ = r_inner;
  q.r_outer_ = r_outer;
  for (double c : q.lo_) {
    q.bbox_lo_.push_back(c - r_outer);
    q.bbox_hi_.push_back(c + r_outer);
  }
  return q;
}

Domain Domain::implicit(expr::Expression g, std::vector<double> lo, std::vector<double> hi) {
  if (lo.empty() || lo.size() != hi.size()) throw std::invalid_argument("implicit bounding box malformed");
  require_finite(lo, "implicit bounding box");
  require_finite(hi, "implicit bounding box");
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (!(lo[i] < hi[i])) throw std::invalid_argument("implicit bounding box requires lo < hi");
  }
  if (g.max_variable() > static_cast<int>(lo.size())) {
    throw std::invalid_argument("implicit level set references a variable beyond the domain dimension");
  }
  Domain q;
  q.kind_ = Kind::Implicit;
  q.g_ = std::move(g);
  q.lo_ = lo;
  q.hi_ = hi;
  q.bbox_lo_ = std::move(lo);
  q.bbox_hi_ = std::move(hi);

  // Nonemptiness: some probe point of the box must satisfy g < 0.
  const int n = q.dim();
  const int per_axis = n == 1 ? 257 : (n == 2 ? 65 : 9);
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  std::vector<double> x(static_cast<std::size_t>(n));
  for (;;) {
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      x[k] = q.bbox_lo_[k] + (q.bbox_hi_[k] - q.bbox_lo_[k]) * idx[k] / (per_axis - 1);
    }
    if (q.g_.evaluate(x) < 0.0) return q;
    int k = 0;
    while (k < n && ++idx[static_cast<std::size_t>(k)] == per_axis) idx[static_cast<std::size_t>(k++)] = 0;
    if (k == n) break;
  }
  throw std::invalid_argument("implicit domain {g < 0} has no probe point inside the bounding box");
}

void Domain::validate_point(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != dim()) {
    throw std::invalid_argument("point has dimension " + std::to_string(x.size()) + ", domain has " +
                                std::to_string(dim()));
  }
  for (double v : x) {
    if (std::isnan(v)) throw std::invalid_argument("NaN coordinate in domain query");
  }
}

double Domain::signed_distance(std::span<const double> x) const {
  switch (kind_) {
    case Kind::Interval:
      return std::max(lo_[0] - x[0], x[0] - hi_[0]);
    case Kind::Box: {
      double inside = -std::numeric_limits<double>::infinity();
      double outside_sq = 0.0;
      for (std::size_t i = 0; i < lo_.size(); ++i) {
        const double d = std::max(lo_[i] - x[i], x[i] - hi_[i]);
        inside = std::max(inside, d);
        if (d > 0.0) outside_sq += d * d;
      }
      return inside <= 0.0 ? inside : std::sqrt(outside_sq);
    }
    case Kind::Ball:
      return distance_to_center(x, lo_) - r_outer_;
    case Kind::Annulus: {
      const double r = distance_to_center(x, lo_);
      return std::max(r_inner_ - r, r - r_outer_);
    }
    case Kind::Implicit:
      return implicit_distance(x);
  }
  return 0.0;
}

double Domain::implicit_distance(std::span<const double> x) const {
  const double g0 = g_.evaluate(x);
  if (std::isnan(g0)) return std::numeric_limits<double>::quiet_NaN();
  if (g0 == 0.0) return 0.0;
  const bool inside = g0 < 0.0;
  const int n = dim();
  const double diam = diameter();

  std::vector<std::vector<double>> dirs;
  if (n == 2) {
    for (int k = 0; k < 64; ++k) {
      const double t = 2.0 * std::numbers::pi * k / 64.0;
      dirs.push_back({std::cos(t), std::sin(t)});
    }
  } else {
    for (int i = 0; i < n; ++i) {
      for (double s : {-1.0, 1.0}) {
        std::vector<double> d(static_cast<std::size_t>(n), 0.0);
        d[static_cast<std::size_t>(i)] = s;
        dirs.push_back(std::move(d));
      }
    }
  }

  std::vector<double> y(static_cast<std::size_t>(n));
  auto side_changes = [&](const std::vector<double>& d, double t) {
    for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] + t * d[static_cast<std::size_t>(i)];
    const double g = g_.evaluate(y);
    return inside ? !(g < 0.0) : g < 0.0;
  };

  double best = std::numeric_limits<double>::infinity();
  const int marches = 400;
  const double step = 2.0 * diam / marches;
  for (const auto& d : dirs) {
    double prev = 0.0;
    for (int k = 1; k <= marches; ++k) {
      const double t = step * k;
      if (t >= best) break;
      if (side_changes(d, t)) {
        double a = prev, b = t;
        for (int it = 0; it < 60; ++it) {
          const double m = 0.5 * (a + b);
          if (side_changes(d, m)) {
            b = m;
          } else {
            a = m;
          }
        }
        best = std::min(best, b);
        break;
      }
      prev = t;
    }
  }
  if (!std::isfinite(best)) best = diam;
  return inside ? -best : best;
}

bool Domain::contains(std::span<const double> x, bool closed) const {
  validate_point(x);
  if (kind_ == Kind::Implicit) {
    const double g = g_.evaluate(x);
    return closed ? g <= 0.0 : g < 0.0;
  }
  const double sd = signed_distance(x);
  return closed ? sd <= 0.0 : sd < 0.0;
}

double Domain::diameter() const {
  double s = 0.0;
  for (std::size_t i = 0; i < bbox_lo_.size(); ++i) {
    const double d = bbox_hi_[i] - bbox_lo_[i];
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<double> Domain::project_to_boundary(std::span<const double> x) const {
  validate_point(x);
  std::vector<double> p(x.begin(), x.end());
  switch (kind_) {
    case Kind::Interval:
      p[0] = (x[0] - lo_[0] <= hi_[0] - x[0]) ? lo_[0] : hi_[0];
      return p;
    case Kind::Box: {
      const double sd = signed_distance(x);
      if (sd > 0.0) {
        for (std::size_t i = 0; i < lo_.size(); ++i) p[i] = std::clamp(x[i], lo_[i], hi_[i]);
        return p;
      }
      std::size_t axis = 0;
      bool upper = false;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < lo_.size(); ++i) {
        if (x[i] - lo_[i] < best) {
          best = x[i] - lo_[i];
          axis = i;
          upper = false;
        }
        if (hi_[i] - x[i] < best) {
          best = hi_[i] - x[i];
          axis = i;
          upper = true;
        }
      }
      p[axis] = upper ? hi_[axis] : lo_[axis];
      return p;
    }
    case Kind::Ball:
    case Kind::Annulus: {
      const double r = distance_to_center(x, lo_);
      double target = r_outer_;
      if (kind_ == Kind::Annulus && std::fabs(r - r_inner_) < std::fabs(r - r_outer_)) target = r_inner_;
      if (r == 0.0) {
        p = lo_;
        p[0] += target;
        return p;
      }
      for (std::size_t i = 0; i < lo_.size(); ++i) p[i] = lo_[i] + (x[i] - lo_[i]) * (target / r);
      return p;
    }
    case Kind::Implicit: {
      // Walk along the numerical gradient by the approximate distance.
      const double sd = implicit_distance(x);
      const int n = dim();
      std::vector<double> grad(static_cast<std::size_t>(n));
      std::vector<double> y(x.begin(), x.end());
      const double h = 1e-6 * std::max(1.0, diameter());
      for (int i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        y[k] = x[k] + h;
        const double gp = g_.evaluate(y);
        y[k] = x[k] - h;
        const double gm = g_.evaluate(y);
        y[k] = x[k];
        grad[k] = (gp - gm) / (2.0 * h);
      }
      const double gn = norm(grad);
      if (!(gn > 0.0) || !std::isfinite(gn)) return p;
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = x[i] - sd * grad[i] / gn;
      return p;
    }
  }
  return p;
}

std::vector<Face> Domain::faces(std::span<const double> x) const {
  std::vector<Face> out;
  const int n = dim();
  switch (kind_) {
    case Kind::Interval:
    case Kind::Box:
      for (int i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        Eigen::VectorXd nl = Eigen::VectorXd::Zero(n);
        nl(i) = -1.0;
        out.push_back({x[k] - lo_[k], nl});
        Eigen::VectorXd nu = Eigen::VectorXd::Zero(n);
        nu(i) = 1.0;
        out.push_back({hi_[k] - x[k], nu});
      }
      break;
    case Kind::Ball:
    case Kind::Annulus: {
      const double r = distance_to_center(x, lo_);
      Eigen::VectorXd radial = Eigen::VectorXd::Zero(n);
      if (r > 0.0) {
        for (int i = 0; i < n; ++i) radial(i) = (x[static_cast<std::size_t>(i)] - lo_[static_cast<std::size_t>(i)]) / r;
      } else {
        radial(0) = 1.0;
      }
      out.push_back({r_outer_ - r, radial});
      if (kind_ == Kind::Annulus) out.push_back({r - r_inner_, -radial});
      break;
    }
    case Kind::Implicit:
      break;
  }
  return out;
}

Domain erode(const Domain& q, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("erosion radius must be positive");
  switch (q.kind()) {
    case Domain::Kind::Interval:
    case Domain::Kind::Box: {
      std::vector<double> lo = q.lo(), hi = q.hi();
      for (std::size_t i = 0; i < lo.size(); ++i) {
        lo[i] += eps;
        hi[i] -= eps;
        if (!(lo[i] < hi[i])) throw std::invalid_argument("erosion empties the domain");
      }
      return Domain::box(std::move(lo), std::move(hi));
    }
    case Domain::Kind::Ball:
      if (!(q.radius() > eps)) throw std::invalid_argument("erosion empties the domain");
      return Domain::ball(q.center(), q.radius() - eps);
    case Domain::Kind::Annulus:
      if (!(q.r_inner() + eps < q.r_outer() - eps)) throw std::invalid_argument("erosion empties the domain");
      return Domain::annulus(q.center(), q.r_inner() + eps, q.r_outer() - eps);
    case Domain::Kind::Implicit:
      break;
  }
  throw std::invalid_argument("erosion is not supported for implicit domains");
}

Domain dilate(const Domain& q, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("dilation radius must be positive");
  switch (q.kind()) {
    case Domain::Kind::Interval:
    case Domain::Kind::Box: {
      std::vector<double> lo = q.lo(), hi = q.hi();
      for (std::size_t i = 0; i < lo.size(); ++i) {
        lo[i] -= eps;
        hi[i] += eps;
      }
      return Domain::box(std::move(lo), std::move(hi));
    }
    case Domain::Kind::Ball:
      return Domain::ball(q.center(), q.radius() + eps);
    case Domain::Kind::Annulus:
      if (q.r_inner() - eps <= 0.0) return Domain::ball(q.center(), q.r_outer() + eps);
      return Domain::annulus(q.center(), q.r_inner() - eps, q.r_outer() + eps);
    case Domain::Kind::Implicit:
      break;
  }
  throw std::invalid_argument("dilation is not supported for implicit domains");
}

namespace {

// Checks that the open ball U(z, r) stays in {g >= 0} on a deterministic
// sample of shells.
bool ball_outside(const Domain& q, std::span<const double> z, double r) {
  const int n = q.dim();
  std::vector<double> y(z.begin(), z.end());
  if (q.level_set().evaluate(y) < 0.0) return false;
  const int shells = 6;
  const int angles = n == 1 ? 2 : (n == 2 ? 48 : 2 * n);
  for (int s = 1; s <= shells; ++s) {
    const double rho = r * (static_cast<double>(s) / (shells + 0.5));
    for (int k = 0; k < angles; ++k) {
      if (n == 1) {
        y[0] = z[0] + (k == 0 ? -rho : rho);
      } else if (n == 2) {
        const double t = 2.0 * std::numbers::pi * (k + 0.5 * (s % 2)) / angles;
        y[0] = z[0] + rho * std::cos(t);
        y[1] = z[1] + rho * std::sin(t);
      } else {
        std::copy(z.begin(), z.end(), y.begin());
        y[static_cast<std::size_t>(k / 2)] += (k % 2 == 0 ? -rho : rho);
      }
      if (q.level_set().evaluate(y) < 0.0) return false;
    }
  }
  return true;
}

}  // namespace

ExteriorBallReport exterior_ball(const Domain& q, const ProbeConfig& cfg) {
  ExteriorBallReport rep;
  if (q.is_catalog()) {
    rep.status = ExteriorBall::Satisfied;
    rep.min_radius = q.kind() == Domain::Kind::Annulus ? q.r_inner() : std::numeric_limits<double>::infinity();
    return rep;
  }

  // Boundary samples: grid nodes outside Q with an inside neighbor.
  const int n = q.dim();
  if (n > 3) return rep;
  const int m = cfg.grid_per_axis;
  const auto& lo = q.lower();
  const auto& hi = q.upper();
  auto node = [&](const std::vector<int>& idx) {
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      x[k] = lo[k] + (hi[k] - lo[k]) * idx[k] / m;
    }
    return x;
  };

  std::vector<std::vector<double>> boundary;
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  for (;;) {
    const auto x = node(idx);
    if (!(q.level_set().evaluate(x) < 0.0)) {
      bool touches = false;
      for (int i = 0; i < n && !touches; ++i) {
        for (int s : {-1, 1}) {
          auto j = idx;
          j[static_cast<std::size_t>(i)] += s;
          if (j[static_cast<std::size_t>(i)] < 0 || j[static_cast<std::size_t>(i)] > m) continue;
          if (q.level_set().evaluate(node(j)) < 0.0) {
            touches = true;
            break;
          }
        }
      }
      if (touches) boundary.push_back(x);
    }
    int k = 0;
    while (k < n && ++idx[static_cast<std::size_t>(k)] > m) idx[static_cast<std::size_t>(k++)] = 0;
    if (k == n) break;
  }
  if (boundary.empty()) return rep;
  if (boundary.size() > cfg.max_points) {
    std::vector<std::vector<double>> thinned;
    const double stride = static_cast<double>(boundary.size()) / static_cast<double>(cfg.max_points);
    for (std::size_t i = 0; i < cfg.max_points; ++i) thinned.push_back(boundary[static_cast<std::size_t>(i * stride)]);
    boundary = std::move(thinned);
  }

  std::vector<std::vector<double>> dirs;
  if (n == 1) {
    dirs = {{-1.0}, {1.0}};
  } else if (n == 2) {
    for (int k = 0; k < 16; ++k) {
      const double t = 2.0 * std::numbers::pi * k / 16.0;
      dirs.push_back({std::cos(t), std::sin(t)});
    }
  } else {
    for (int i = 0; i < n; ++i) {
      for (double s : {-1.0, 1.0}) {
        std::vector<double> d(static_cast<std::size_t>(n), 0.0);
        d[static_cast<std::size_t>(i)] = s;
        dirs.push_back(std::move(d));
      }
    }
  }

  rep.min_radius = std::numeric_limits<double>::infinity();
  std::vector<double> z(static_cast<std::size_t>(n));
  for (const auto& x : boundary) {
    ++rep.probed;
    double found = 0.0;
    for (double r = cfg.r0; r >= cfg.r_min && found == 0.0; r *= 0.5) {
      for (const auto& d : dirs) {
        for (int i = 0; i < n; ++i) {
          const auto k = static_cast<std::size_t>(i);
          z[k] = x[k] + r * d[k];
        }
        if (ball_outside(q, z, r)) {
          found = r;
          break;
        }
      }
    }
    if (found == 0.0) {
      ++rep.failed;
    } else {
      rep.min_radius = std::min(rep.min_radius, found);
    }
  }
  rep.status = rep.failed == 0 ? ExteriorBall::Satisfied : ExteriorBall::Unknown;
  return rep;
}

double bridge_hit_probability(const Domain& q, std::span<const double> x_prev, std::span<const double> x_next,
                              const Eigen::MatrixXd& a, double dt, std::size_t* face_index) {
  // Faces with 2 d1 d2 / (v dt) beyond this contribute less than 1e-17.
  constexpr double kNegligible = 40.0;
  double survive = 1.0;
  double best_p = 0.0;
  std::size_t best_face = 0;
  auto add = [&](double d1, double d2, double v, std::size_t face) {
    if (!(d1 > 0.0) || !(d2 > 0.0) || !(v > 0.0)) return;
    const double e = 2.0 * d1 * d2 / (v * dt);
    if (e > kNegligible) return;
    const double p = std::exp(-e);
    survive *= 1.0 - p;
    if (p > best_p) {
      best_p = p;
      best_face = face;
    }
  };

  switch (q.kind()) {
    case Domain::Kind::Interval:
    case Domain::Kind::Box: {
      const auto& lo = q.lo();
      const auto& hi = q.hi();
      for (std::size_t i = 0; i < lo.size(); ++i) {
        const double v = a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
        add(x_prev[i] - lo[i], x_next[i] - lo[i], v, 2 * i);
        add(hi[i] - x_prev[i], hi[i] - x_next[i], v, 2 * i + 1);
      }
      break;
    }
    case Domain::Kind::Ball:
    case Domain::Kind::Annulus: {
      // Tangent-plane approximation of each spherical face at x_prev.
      const auto& c = q.center();
      const int n = q.dim();
      const double r_prev = distance_to_center(x_prev, c);
      const double r_next = distance_to_center(x_next, c);
      if (r_prev == 0.0) break;
      double v = 0.0;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          const double ni = (x_prev[static_cast<std::size_t>(i)] - c[static_cast<std::size_t>(i)]) / r_prev;
          const double nj = (x_prev[static_cast<std::size_t>(j)] - c[static_cast<std::size_t>(j)]) / r_prev;
          v += ni * a(i, j) * nj;
        }
      }
      add(q.r_outer() - r_prev, q.r_outer() - r_next, v, 0);
      if (q.kind() == Domain::Kind::Annulus) add(r_prev - q.r_inner(), r_next - q.r_inner(), v, 1);
      break;
    }
    case Domain::Kind::Implicit:
      break;
  }
  if (face_index != nullptr) *face_index = best_face;
  return 1.0 - survive;
}

ExitEvent exit_event(const Domain& q, std::span<const double> x_prev, std::span<const double> x_next,
                     const Eigen::MatrixXd& a, double dt, Refinement mode, double uniform, std::span<double> point) {
  ExitEvent ev;
  const double sd_next = q.signed_distance(x_next);
  if (!(sd_next < 0.0)) {
    ev.kind = sd_next > 0.0 ? Crossing::OpenAndClosed : Crossing::Open;
    if (mode == Refinement::Grid) {
      ev.fraction = 1.0;
      std::copy(x_next.begin(), x_next.end(), point.begin());
      return ev;
    }
    const double sd_prev = q.signed_distance(x_prev);
    const double denom = sd_next - sd_prev;
    ev.fraction = (sd_prev < 0.0 && denom > 0.0) ? std::clamp(-sd_prev / denom, 0.0, 1.0) : 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) point[i] = x_prev[i] + ev.fraction * (x_next[i] - x_prev[i]);
    if (q.is_catalog()) {
      const auto p = q.project_to_boundary(point);
      std::copy(p.begin(), p.end(), point.begin());
    }
    return ev;
  }
  if (mode != Refinement::Bridge || !q.is_catalog()) return ev;

  std::size_t face = 0;
  const double p = bridge_hit_probability(q, x_prev, x_next, a, dt, &face);
  if (!(uniform < p)) return ev;
  ev.kind = Crossing::Open;
  ev.fraction = 0.5;
  ev.bridge = true;
  // A diffusion with covariance rate a that first reaches a plane at distance d
  // along the outward normal n has moved by d * a n / (n^T a n) on average.
  const int n = q.dim();
  Eigen::VectorXd normal = Eigen::VectorXd::Zero(n);
  double d1 = 0.0;
  const auto& c = q.center();
  const double r = (q.kind() == Domain::Kind::Ball || q.kind() == Domain::Kind::Annulus) ? distance_to_center(x_prev, c) : 0.0;
  switch (q.kind()) {
    case Domain::Kind::Interval:
    case Domain::Kind::Box: {
      const std::size_t axis = face / 2;
      const bool upper = face % 2 == 1;
      normal(static_cast<Eigen::Index>(axis)) = upper ? 1.0 : -1.0;
      d1 = upper ? q.hi()[axis] - x_prev[axis] : x_prev[axis] - q.lo()[axis];
      break;
    }
    case Domain::Kind::Ball:
    case Domain::Kind::Annulus: {
      const double sign = face == 0 ? 1.0 : -1.0;
      for (int i = 0; i < n; ++i) normal(i) = sign * (x_prev[static_cast<std::size_t>(i)] - c[static_cast<std::size_t>(i)]) / r;
      d1 = face == 0 ? q.r_outer() - r : r - q.r_inner();
      break;
    }
    case Domain::Kind::Implicit:
      break;
  }
  const Eigen::VectorXd an = a * normal;
  const double v = normal.dot(an);
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    point[k] = x_prev[k] + (v > 0.0 ? d1 * an(i) / v : d1 * normal(i));
  }
  switch (q.kind()) {
    case Domain::Kind::Interval:
    case Domain::Kind::Box: {
      const std::size_t axis = face / 2;
      for (std::size_t i = 0; i < point.size(); ++i) point[i] = std::clamp(point[i], q.lo()[i], q.hi()[i]);
      point[axis] = (face % 2 == 0) ? q.lo()[axis] : q.hi()[axis];
      break;
    }
    case Domain::Kind::Ball:
    case Domain::Kind::Annulus: {
      const double target = face == 0 ? q.r_outer() : q.r_inner();
      const double rp = distance_to_center(point, c);
      if (rp > 0.0) {
        for (std::size_t i = 0; i < point.size(); ++i) point[i] = c[i] + (point[i] - c[i]) * (target / rp);
      }
      break;
    }
    case Domain::Kind::Implicit:
      break;
  }
  return ev;
}

Refinement default_refinement(const Domain& q) {
  return q.is_catalog() ? Refinement::Bridge : Refinement::Interpolate;
}

}  // namespace gsde
