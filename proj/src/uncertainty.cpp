#include "gsde/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace gsde {

bool operator==(const ControlValue& a, const ControlValue& b) {
  return a.gamma.rows() == b.gamma.rows() && a.gamma.cols() == b.gamma.cols() && a.mu.size() == b.mu.size() &&
         a.gamma == b.gamma && a.mu == b.mu;
}

namespace {

void check_control(const ControlValue& c, int d) {
  if (c.gamma.rows() != d || c.gamma.cols() != d || c.mu.size() != d) {
    throw DimensionError("control has shape gamma " + std::to_string(c.gamma.rows()) + "x" +
                         std::to_string(c.gamma.cols()) + ", mu " + std::to_string(c.mu.size()) +
                         "; expected dimension " + std::to_string(d));
  }
  if (!c.gamma.allFinite() || !c.mu.allFinite()) throw std::invalid_argument("control has non-finite entries");
}

void check_args(const UncertaintySet& theta, const Eigen::MatrixXd& a, const Eigen::VectorXd& p) {
  const int d = theta.dim();
  if (a.rows() != d || a.cols() != d || p.size() != d) {
    throw DimensionError("G expects A " + std::to_string(d) + "x" + std::to_string(d) + " and p of length " +
                         std::to_string(d));
  }
  if (theta.kind() == UncertaintySet::Kind::DiagBox) {
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        if (i != j && a(i, j) != 0.0) {
          throw std::invalid_argument(
              "diag-box uncertainty set requires diagonal A; supply a vertex-list set for cross terms");
        }
      }
    }
  }
}

}  // namespace

UncertaintySet UncertaintySet::singleton(ControlValue c) {
  UncertaintySet s;
  s.kind_ = Kind::Singleton;
  s.d_ = c.dim();
  check_control(c, s.d_);
  s.vertices_.push_back(std::move(c));
  s.finalize();
  return s;
}

UncertaintySet UncertaintySet::diag_box(int d, double sigma_low, double sigma_high, std::vector<double> beta) {
  if (d < 1) throw DimensionError("diag-box dimension must be >= 1");
  if (!(sigma_low >= 0.0) || !(sigma_high >= sigma_low) || !std::isfinite(sigma_high)) {
    throw std::invalid_argument("diag-box requires 0 <= sigma_low <= sigma_high < inf");
  }
  if (beta.empty()) beta.assign(static_cast<std::size_t>(d), 0.0);
  if (static_cast<int>(beta.size()) != d) {
    throw DimensionError("diag-box beta has length " + std::to_string(beta.size()) + ", expected " +
                         std::to_string(d));
  }
  for (double b : beta) {
    if (!(b >= 0.0) || !std::isfinite(b)) throw std::invalid_argument("diag-box beta entries must be finite and >= 0");
  }

  UncertaintySet s;
  s.kind_ = Kind::DiagBox;
  s.d_ = d;
  s.sigma_low_ = sigma_low;
  s.sigma_high_ = sigma_high;
  s.beta_ = std::move(beta);

  // Per-coordinate candidate values, smallest first.
  std::vector<std::vector<double>> axes;
  for (int i = 0; i < d; ++i) {
    axes.push_back(sigma_low == sigma_high ? std::vector<double>{sigma_low} : std::vector<double>{sigma_low, sigma_high});
  }
  for (int i = 0; i < d; ++i) {
    const double b = s.beta_[static_cast<std::size_t>(i)];
    axes.push_back(b == 0.0 ? std::vector<double>{0.0} : std::vector<double>{-b, b});
  }
  // Odometer with the first coordinate most significant.
  std::vector<std::size_t> digit(axes.size(), 0);
  for (;;) {
    ControlValue c{Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d)};
    for (int i = 0; i < d; ++i) {
      c.gamma(i, i) = axes[static_cast<std::size_t>(i)][digit[static_cast<std::size_t>(i)]];
      c.mu(i) = axes[static_cast<std::size_t>(d + i)][digit[static_cast<std::size_t>(d + i)]];
    }
    s.vertices_.push_back(std::move(c));
    std::size_t k = axes.size();
    while (k > 0) {
      --k;
      if (++digit[k] < axes[k].size()) break;
      digit[k] = 0;
      if (k == 0) {
        s.finalize();
        return s;
      }
    }
  }
}

UncertaintySet UncertaintySet::vertex_list(std::vector<ControlValue> vertices) {
  if (vertices.empty()) throw std::invalid_argument("vertex-list uncertainty set must be nonempty");
  UncertaintySet s;
  s.kind_ = Kind::VertexList;
  s.d_ = vertices.front().dim();
  for (const auto& c : vertices) check_control(c, s.d_);
  s.vertices_ = std::move(vertices);
  s.finalize();
  return s;
}

void UncertaintySet::finalize() {
  if (kind_ == Kind::DiagBox) {
    params_.sigma_low_sq = sigma_low_ * sigma_low_;
    params_.sigma_high_sq = sigma_high_ * sigma_high_;
    double b2 = 0.0;
    for (double b : beta_) b2 += b * b;
    params_.beta = std::sqrt(b2);
  } else {
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    double beta = 0.0;
    for (const auto& c : vertices_) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c.covariance(), Eigen::EigenvaluesOnly);
      lo = std::min(lo, std::max(0.0, eig.eigenvalues().minCoeff()));
      hi = std::max(hi, eig.eigenvalues().maxCoeff());
      beta = std::max(beta, c.mu.norm());
    }
    params_.sigma_low_sq = lo;
    params_.sigma_high_sq = hi;
    params_.beta = beta;
  }
  params_.degenerate = !(params_.sigma_low_sq > 0.0);
}

double control_objective(const ControlValue& c, const Eigen::MatrixXd& a, const Eigen::VectorXd& p) {
  const Eigen::MatrixXd cov = c.covariance();
  return 0.5 * (a.array() * cov.array()).sum() + p.dot(c.mu);
}

std::size_t argmax_vertex(const UncertaintySet& theta, const Eigen::MatrixXd& a, const Eigen::VectorXd& p) {
  check_args(theta, a, p);
  const auto& v = theta.vertices();
  if (theta.kind() == UncertaintySet::Kind::DiagBox) {
    const ControlValue corner = argmax_control(theta, a, p);
    return static_cast<std::size_t>(std::find(v.begin(), v.end(), corner) - v.begin());
  }
  std::size_t best = 0;
  double best_value = control_objective(v[0], a, p);
  for (std::size_t k = 1; k < v.size(); ++k) {
    const double value = control_objective(v[k], a, p);
    if (value > best_value) {
      best_value = value;
      best = k;
    }
  }
  return best;
}

ControlValue argmax_control(const UncertaintySet& theta, const Eigen::MatrixXd& a, const Eigen::VectorXd& p) {
  check_args(theta, a, p);
  if (theta.kind() != UncertaintySet::Kind::DiagBox) return theta.vertices()[argmax_vertex(theta, a, p)];

  // Separable objective: each coordinate picks its own extreme point.
  const int d = theta.dim();
  ControlValue c{Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d)};
  for (int i = 0; i < d; ++i) {
    c.gamma(i, i) = a(i, i) > 0.0 ? theta.sigma_high() : theta.sigma_low();
    const double b = theta.beta()[static_cast<std::size_t>(i)];
    c.mu(i) = b == 0.0 ? 0.0 : (p(i) > 0.0 ? b : -b);
  }
  return c;
}

double eval_G(const UncertaintySet& theta, const Eigen::MatrixXd& a, const Eigen::VectorXd& p) {
  if (theta.kind() == UncertaintySet::Kind::DiagBox) {
    // 1/2 (sigma_high^2 a_ii^+ - sigma_low^2 a_ii^-) + beta_i |p_i|, realized at the corner
    return control_objective(argmax_control(theta, a, p), a, p);
  }
  check_args(theta, a, p);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& c : theta.vertices()) best = std::max(best, control_objective(c, a, p));
  return best;
}

EllipticityParams ellipticity_params(const UncertaintySet& theta, bool require_uniform) {
  const EllipticityParams& e = theta.params();
  if (require_uniform && e.degenerate) {
    throw std::domain_error("uncertainty set is degenerate: sigma_low^2 = 0, uniform ellipticity fails");
  }
  return e;
}

}  // namespace gsde
