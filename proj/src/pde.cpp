#include "gsde/pde.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

namespace gsde {

std::size_t Grid::size() const {
  std::size_t s = 1;
  for (int c : counts) s *= static_cast<std::size_t>(c);
  return s;
}

std::vector<int> Grid::index(std::size_t node) const {
  std::vector<int> idx(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; ++i) {
    const auto c = static_cast<std::size_t>(counts[static_cast<std::size_t>(i)]);
    idx[static_cast<std::size_t>(i)] = static_cast<int>(node % c);
    node /= c;
  }
  return idx;
}

std::vector<double> Grid::point(std::size_t node) const {
  const auto idx = index(node);
  std::vector<double> x(static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = origin[i] + spacing[i] * idx[i];
  return x;
}

namespace {

constexpr int kMaxNeighbors = 8;
// 2-D neighbor offsets: axis neighbors first, then the two diagonal pairs.
constexpr std::array<std::array<int, 2>, kMaxNeighbors> kOffsets2{
    {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}, {1, -1}, {-1, 1}}};

struct Stencil {
  double center = 0.0;
  std::array<double, kMaxNeighbors> nb{};
};

std::string format_point(std::span<const double> x) {
  std::ostringstream os;
  os.precision(6);
  os << '(';
  for (std::size_t i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << ')';
  return os.str();
}

/// Discrete operators for every (interior node, vertex control) pair.
struct Discretization {
  Grid grid;
  std::vector<NodeType> mask;
  std::vector<std::size_t> interior;       // node ids of the unknowns
  std::vector<std::ptrdiff_t> unknown;     // node -> unknown index or -1
  std::vector<std::array<std::ptrdiff_t, kMaxNeighbors>> neighbors;  // per unknown, node id or -1
  int n_neighbors = 2;
  std::size_t n_controls = 0;
  std::vector<Stencil> stencils;           // unknown * n_controls + control

  const Stencil& at(std::size_t u, std::size_t c) const { return stencils[u * n_controls + c]; }

  double apply(std::size_t u, std::size_t c, const std::vector<double>& values) const {
    const Stencil& s = at(u, c);
    double v = s.center * values[interior[u]];
    for (int k = 0; k < n_neighbors; ++k) {
      const auto nb = neighbors[u][static_cast<std::size_t>(k)];
      if (nb >= 0) v += s.nb[static_cast<std::size_t>(k)] * values[static_cast<std::size_t>(nb)];
    }
    return v;
  }

  double scale(std::size_t u, std::size_t c, const std::vector<double>& values) const {
    const Stencil& s = at(u, c);
    double v = std::fabs(s.center * values[interior[u]]);
    for (int k = 0; k < n_neighbors; ++k) {
      const auto nb = neighbors[u][static_cast<std::size_t>(k)];
      if (nb >= 0) v += std::fabs(s.nb[static_cast<std::size_t>(k)] * values[static_cast<std::size_t>(nb)]);
    }
    return v;
  }
};

Grid make_grid(const Domain& domain, const GridConfig& cfg) {
  const int dim = domain.dim();
  if (dim != 1 && dim != 2) throw DimensionError("the PDE solver supports 1 or 2 space dimensions");
  if (cfg.nodes.empty() || (cfg.nodes.size() != 1 && static_cast<int>(cfg.nodes.size()) != dim)) {
    throw std::invalid_argument("pde.nodes must have one entry or one per axis");
  }
  Grid g;
  g.dim = dim;
  for (int i = 0; i < dim; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const int n = cfg.nodes.size() == 1 ? cfg.nodes[0] : cfg.nodes[k];
    if (n < 3) throw std::invalid_argument("pde.nodes must be >= 3 per axis");
    g.counts.push_back(n);
    g.origin.push_back(domain.lower()[k]);
    g.spacing.push_back((domain.upper()[k] - domain.lower()[k]) / (n - 1));
    if (!(g.spacing.back() > 0.0)) throw std::invalid_argument("grid spacing must be positive");
  }
  return g;
}

std::ptrdiff_t neighbor_node(const Grid& g, const std::vector<int>& idx, int k) {
  if (g.dim == 1) {
    const int i = idx[0] + (k == 0 ? 1 : -1);
    return (i < 0 || i >= g.counts[0]) ? -1 : i;
  }
  const int i = idx[0] + kOffsets2[static_cast<std::size_t>(k)][0];
  const int j = idx[1] + kOffsets2[static_cast<std::size_t>(k)][1];
  if (i < 0 || i >= g.counts[0] || j < 0 || j >= g.counts[1]) return -1;
  return static_cast<std::ptrdiff_t>(j) * g.counts[0] + i;
}

/// Central where the row stays monotone, upwind otherwise.
void add_drift(double drift, double h, double& plus, double& minus) {
  if (std::fabs(drift) * 0.5 / h <= std::min(plus, minus)) {
    plus += drift * 0.5 / h;
    minus -= drift * 0.5 / h;
  } else if (drift > 0.0) {
    plus += drift / h;
  } else {
    minus -= drift / h;
  }
}

Discretization discretize(const SdeModel& model, const UncertaintySet& theta, const Grid& grid,
                          std::vector<NodeType> mask) {
  const int n = model.n();
  if (n != grid.dim) throw DimensionError("model state dimension does not match the domain");
  if (theta.dim() != model.d()) throw DimensionError("uncertainty set dimension does not match the noise dimension");
  Discretization dz;
  dz.grid = grid;
  dz.mask = std::move(mask);
  dz.n_neighbors = grid.dim == 1 ? 2 : kMaxNeighbors;
  const auto& verts = theta.vertices();
  dz.n_controls = verts.size();
  dz.unknown.assign(grid.size(), -1);
  for (std::size_t p = 0; p < grid.size(); ++p) {
    if (dz.mask[p] == NodeType::Interior) {
      dz.unknown[p] = static_cast<std::ptrdiff_t>(dz.interior.size());
      dz.interior.push_back(p);
    }
  }
  std::vector<Eigen::MatrixXd> covs;
  for (const auto& v : verts) covs.push_back(v.covariance());

  dz.neighbors.resize(dz.interior.size());
  dz.stencils.resize(dz.interior.size() * dz.n_controls);
  std::vector<double> drift(static_cast<std::size_t>(n));
  for (std::size_t u = 0; u < dz.interior.size(); ++u) {
    const std::size_t p = dz.interior[u];
    const auto idx = grid.index(p);
    const auto x = grid.point(p);
    for (int k = 0; k < dz.n_neighbors; ++k) {
      const auto nb = neighbor_node(grid, idx, k);
      if (nb < 0) {
        throw SolverPreconditionError("interior node " + format_point(x) +
                                      " lies on the edge of the grid; enlarge the bounding box");
      }
      dz.neighbors[u][static_cast<std::size_t>(k)] = nb;
    }
    const Eigen::MatrixXd s = model.sigma_matrix(x);
    if (!s.allFinite()) throw NumericalError("sigma is not finite at grid node " + format_point(x));
    for (std::size_t c = 0; c < dz.n_controls; ++c) {
      const Eigen::MatrixXd a = s * covs[c] * s.transpose();
      model.eval_effective_drift(x, covs[c], drift);
      const Eigen::VectorXd smu = s * verts[c].mu;
      for (int i = 0; i < n; ++i) drift[static_cast<std::size_t>(i)] += smu(i);
      if (!std::all_of(drift.begin(), drift.end(), [](double v) { return std::isfinite(v); })) {
        throw NumericalError("drift is not finite at grid node " + format_point(x));
      }
      Stencil& st = dz.stencils[u * dz.n_controls + c];
      if (grid.dim == 1) {
        const double h = grid.spacing[0];
        double plus = 0.5 * a(0, 0) / (h * h);
        double minus = plus;
        add_drift(drift[0], h, plus, minus);
        st.nb[0] = plus;
        st.nb[1] = minus;
      } else {
        const double hx = grid.spacing[0], hy = grid.spacing[1];
        const double cross = std::fabs(a(0, 1)) / (2.0 * hx * hy);
        double dx = 0.5 * a(0, 0) / (hx * hx) - cross;
        double dy = 0.5 * a(1, 1) / (hy * hy) - cross;
        const double tol = 1e-12 * (std::fabs(a(0, 0)) / (hx * hx) + std::fabs(a(1, 1)) / (hy * hy));
        if (dx < -tol || dy < -tol) {
          std::ostringstream os;
          os << "diffusion matrix is not diagonally dominant at grid node " << format_point(x) << " (index "
             << idx[0] << ", " << idx[1] << ") for control v" << c << ": a = [[" << a(0, 0) << ", " << a(0, 1)
             << "], [" << a(1, 0) << ", " << a(1, 1)
             << "]]; rotate coordinates or refine the uncertainty set";
          throw SolverPreconditionError(os.str());
        }
        dx = std::max(dx, 0.0);
        dy = std::max(dy, 0.0);
        double xp = dx, xm = dx, yp = dy, ym = dy;
        add_drift(drift[0], hx, xp, xm);
        add_drift(drift[1], hy, yp, ym);
        st.nb[0] = xp;
        st.nb[1] = xm;
        st.nb[2] = yp;
        st.nb[3] = ym;
        const bool positive = a(0, 1) >= 0.0;
        st.nb[4] = positive ? cross : 0.0;
        st.nb[5] = positive ? cross : 0.0;
        st.nb[6] = positive ? 0.0 : cross;
        st.nb[7] = positive ? 0.0 : cross;
      }
      double sum = 0.0;
      for (int k = 0; k < dz.n_neighbors; ++k) sum += st.nb[static_cast<std::size_t>(k)];
      // Rows annihilate constants.
      st.center = -sum;
    }
  }
  return dz;
}

std::vector<NodeType> classify(const Domain& domain, const Grid& grid) {
  const std::size_t total = grid.size();
  std::vector<NodeType> mask(total, NodeType::Exterior);
  for (std::size_t p = 0; p < total; ++p) {
    if (domain.contains(grid.point(p), false)) mask[p] = NodeType::Interior;
  }
  const int n_nb = grid.dim == 1 ? 2 : kMaxNeighbors;
  for (std::size_t p = 0; p < total; ++p) {
    if (mask[p] != NodeType::Interior) continue;
    const auto idx = grid.index(p);
    for (int k = 0; k < n_nb; ++k) {
      const auto nb = neighbor_node(grid, idx, k);
      if (nb >= 0 && mask[static_cast<std::size_t>(nb)] == NodeType::Exterior) {
        mask[static_cast<std::size_t>(nb)] = NodeType::Boundary;
      }
    }
  }
  return mask;
}

bool better(Mode mode, double candidate, double best, double eps) {
  return mode == Mode::Upper ? candidate > best + eps : candidate < best - eps;
}

/// Optimal vertex per unknown for the given values, keeping `policy` on near-ties.
bool improve_policy(const Discretization& dz, const std::vector<double>& values, Mode mode,
                    std::vector<std::size_t>& policy) {
  bool changed = false;
  for (std::size_t u = 0; u < dz.interior.size(); ++u) {
    std::size_t best = policy[u];
    double best_v = dz.apply(u, best, values);
    const double eps = 64.0 * std::numeric_limits<double>::epsilon() * dz.scale(u, best, values);
    for (std::size_t c = 0; c < dz.n_controls; ++c) {
      if (c == best) continue;
      const double v = dz.apply(u, c, values);
      if (better(mode, v, best_v, eps)) {
        best = c;
        best_v = v;
      }
    }
    if (best != policy[u]) {
      policy[u] = best;
      changed = true;
    }
  }
  return changed;
}

double bellman_residual(const Discretization& dz, const std::vector<double>& values, const std::vector<double>& f,
                        Mode mode) {
  double r = 0.0;
  for (std::size_t u = 0; u < dz.interior.size(); ++u) {
    double opt = 0.0;
    for (std::size_t c = 0; c < dz.n_controls; ++c) {
      const double v = dz.apply(u, c, values);
      if (c == 0 || (mode == Mode::Upper ? v > opt : v < opt)) opt = v;
    }
    r = std::max(r, std::fabs(opt - f[u]));
  }
  return r;
}

void solve_tridiagonal(const Discretization& dz, const std::vector<std::size_t>& policy,
                       const std::vector<double>& f, std::vector<double>& values) {
  const std::size_t m = dz.interior.size();
  std::vector<double> lower(m), diag(m), upper(m), rhs(m);
  for (std::size_t u = 0; u < m; ++u) {
    const Stencil& s = dz.at(u, policy[u]);
    diag[u] = s.center;
    rhs[u] = f[u];
    for (int k = 0; k < 2; ++k) {
      const auto nb = static_cast<std::size_t>(dz.neighbors[u][static_cast<std::size_t>(k)]);
      const double coef = s.nb[static_cast<std::size_t>(k)];
      const auto j = dz.unknown[nb];
      if (j < 0) {
        rhs[u] -= coef * values[nb];
      } else if (k == 0) {
        upper[u] = coef;
      } else {
        lower[u] = coef;
      }
    }
  }
  // Thomas algorithm.
  for (std::size_t u = 0; u < m; ++u) {
    if (u > 0) {
      const double w = lower[u] / diag[u - 1];
      diag[u] -= w * upper[u - 1];
      rhs[u] -= w * rhs[u - 1];
    }
    if (!(std::fabs(diag[u]) > 0.0) || !std::isfinite(diag[u])) {
      throw NumericalError("singular linear system at grid node " + format_point(dz.grid.point(dz.interior[u])));
    }
  }
  std::vector<double> sol(m);
  for (std::size_t u = m; u-- > 0;) {
    sol[u] = (rhs[u] - (u + 1 < m ? upper[u] * sol[u + 1] : 0.0)) / diag[u];
  }
  for (std::size_t u = 0; u < m; ++u) values[dz.interior[u]] = sol[u];
}

void solve_sparse(const Discretization& dz, const std::vector<std::size_t>& policy, const std::vector<double>& f,
                  double tolerance, std::vector<double>& values) {
  const std::size_t m = dz.interior.size();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(m * static_cast<std::size_t>(dz.n_neighbors + 1));
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(m)), guess(static_cast<Eigen::Index>(m));
  for (std::size_t u = 0; u < m; ++u) {
    const Stencil& s = dz.at(u, policy[u]);
    const auto row = static_cast<Eigen::Index>(u);
    trip.emplace_back(row, row, s.center);
    double r = f[u];
    for (int k = 0; k < dz.n_neighbors; ++k) {
      const double coef = s.nb[static_cast<std::size_t>(k)];
      if (coef == 0.0) continue;
      const auto nb = static_cast<std::size_t>(dz.neighbors[u][static_cast<std::size_t>(k)]);
      const auto j = dz.unknown[nb];
      if (j < 0) {
        r -= coef * values[nb];
      } else {
        trip.emplace_back(row, static_cast<Eigen::Index>(j), coef);
      }
    }
    rhs(row) = r;
    guess(row) = values[dz.interior[u]];
    if (!(s.center < 0.0)) {
      throw NumericalError("singular linear system at grid node " + format_point(dz.grid.point(dz.interior[u])));
    }
  }
  Eigen::SparseMatrix<double> mat(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  mat.setFromTriplets(trip.begin(), trip.end());
  Eigen::BiCGSTAB<Eigen::SparseMatrix<double>, Eigen::IncompleteLUT<double>> solver;
  solver.setTolerance(1e-12);
  solver.setMaxIterations(std::max<Eigen::Index>(1000, static_cast<Eigen::Index>(m)));
  solver.compute(mat);
  if (solver.info() != Eigen::Success) throw NumericalError("preconditioner factorization failed");
  Eigen::VectorXd sol = solver.solveWithGuess(rhs, guess);
  if (solver.info() != Eigen::Success || !sol.allFinite()) {
    throw NumericalError("linear solve did not converge (BiCGSTAB, tolerance 1e-12)");
  }
  // The relative 2-norm stopping rule can leave a pointwise defect above the
  // requested tolerance on fine grids; a few correction solves remove it.
  for (int pass = 0; pass < 4; ++pass) {
    const Eigen::VectorXd r = rhs - mat * sol;
    if (r.lpNorm<Eigen::Infinity>() <= 1e-3 * tolerance) break;
    const Eigen::VectorXd e = solver.solve(r);
    if (solver.info() != Eigen::Success || !e.allFinite()) break;
    sol += e;
  }
  for (std::size_t u = 0; u < m; ++u) values[dz.interior[u]] = sol(static_cast<Eigen::Index>(u));
}

std::vector<double> rhs_values(const Discretization& dz, const expr::Expression& f) {
  std::vector<double> out(dz.interior.size());
  for (std::size_t u = 0; u < dz.interior.size(); ++u) {
    const auto x = dz.grid.point(dz.interior[u]);
    out[u] = f.evaluate(x);
    if (!std::isfinite(out[u])) throw NumericalError("f is not finite at grid node " + format_point(x));
  }
  return out;
}

/// Fills non-interior entries of policy with the vertex of the nearest interior node (grid graph distance).
void spread_policy(const Grid& grid, const std::vector<NodeType>& mask, std::vector<std::size_t>& policy) {
  const std::size_t total = grid.size();
  std::vector<char> seen(total, 0);
  std::deque<std::size_t> queue;
  for (std::size_t p = 0; p < total; ++p) {
    if (mask[p] == NodeType::Interior) {
      seen[p] = 1;
      queue.push_back(p);
    }
  }
  const int n_nb = grid.dim == 1 ? 2 : 4;
  while (!queue.empty()) {
    const std::size_t p = queue.front();
    queue.pop_front();
    const auto idx = grid.index(p);
    for (int k = 0; k < n_nb; ++k) {
      const auto nb = neighbor_node(grid, idx, k);
      if (nb < 0 || seen[static_cast<std::size_t>(nb)]) continue;
      seen[static_cast<std::size_t>(nb)] = 1;
      policy[static_cast<std::size_t>(nb)] = policy[p];
      queue.push_back(static_cast<std::size_t>(nb));
    }
  }
}

}  // namespace

PdeSolution solve_dirichlet(const SdeModel& model, const UncertaintySet& theta, const Domain& domain,
                            const expr::Expression& f, const expr::Expression& phi, const GridConfig& cfg,
                            Mode mode) {
  if (cfg.max_iterations < 1) throw std::invalid_argument("pde.max_iterations must be >= 1");
  if (!(cfg.tolerance > 0.0)) throw std::invalid_argument("pde.tolerance must be positive");
  ellipticity_params(theta, true);
  if (exterior_ball(domain).status == ExteriorBall::Violated) {
    throw SolverPreconditionError("domain violates the exterior ball condition");
  }
  PdeSolution sol;
  sol.mode = mode;
  sol.grid = make_grid(domain, cfg);
  sol.mask = classify(domain, sol.grid);
  sol.controls = theta.vertices();
  const Discretization dz = discretize(model, theta, sol.grid, sol.mask);
  if (dz.interior.empty()) throw std::invalid_argument("grid has no interior nodes; refine the grid");

  const std::size_t total = sol.grid.size();
  sol.values.assign(total, 0.0);
  for (std::size_t p = 0; p < total; ++p) {
    if (sol.mask[p] == NodeType::Interior) continue;
    const auto x = sol.grid.point(p);
    const bool project = sol.mask[p] == NodeType::Boundary || domain.is_catalog();
    sol.values[p] = phi.evaluate(project ? std::span<const double>(domain.project_to_boundary(x)) : x);
    if (!std::isfinite(sol.values[p])) throw NumericalError("phi is not finite near grid node " + format_point(x));
  }
  const std::vector<double> rhs = rhs_values(dz, f);

  std::vector<std::size_t> policy(dz.interior.size(), 0);
  improve_policy(dz, sol.values, mode, policy);
  bool stationary = false;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    if (sol.grid.dim == 1) {
      solve_tridiagonal(dz, policy, rhs, sol.values);
    } else {
      solve_sparse(dz, policy, rhs, cfg.tolerance, sol.values);
    }
    if (cfg.record_iterates) sol.iterates.push_back(sol.values);
    sol.iterations = it;
    if (!improve_policy(dz, sol.values, mode, policy)) {
      stationary = true;
      break;
    }
  }
  if (!stationary) {
    throw NumericalError("policy iteration did not converge within " + std::to_string(cfg.max_iterations) +
                         " iterations");
  }
  sol.residual = bellman_residual(dz, sol.values, rhs, mode);
  sol.converged = sol.residual <= cfg.tolerance;
  sol.policy.assign(total, 0);
  for (std::size_t u = 0; u < dz.interior.size(); ++u) sol.policy[dz.interior[u]] = policy[u];
  spread_policy(sol.grid, sol.mask, sol.policy);
  return sol;
}

double residual(const PdeSolution& solution, const SdeModel& model, const UncertaintySet& theta,
                const expr::Expression& f) {
  if (solution.values.size() != solution.grid.size() || solution.mask.size() != solution.grid.size()) {
    throw std::invalid_argument("solution arrays do not match its grid");
  }
  const Discretization dz = discretize(model, theta, solution.grid, solution.mask);
  return bellman_residual(dz, solution.values, rhs_values(dz, f), solution.mode);
}

ControlPolicy extract_policy(const PdeSolution& solution) {
  if (!solution.converged) throw std::invalid_argument("cannot extract a policy from an unconverged solution");
  auto field = std::make_shared<FeedbackField>();
  field->dim = solution.grid.dim;
  field->origin = solution.grid.origin;
  field->spacing = solution.grid.spacing;
  field->counts = solution.grid.counts;
  field->node_vertex = solution.policy;
  for (std::size_t k = 0; k < solution.controls.size(); ++k) {
    field->controls.push_back({solution.controls[k], solution.controls[k].covariance(), k});
  }
  return ControlPolicy::feedback(std::move(field), "pde");
}

double interpolate(const PdeSolution& solution, std::span<const double> x) {
  const Grid& g = solution.grid;
  if (static_cast<int>(x.size()) != g.dim) throw DimensionError("interpolation point has the wrong dimension");
  std::array<int, 2> i0{};
  std::array<double, 2> w{};
  for (int a = 0; a < g.dim; ++a) {
    const auto k = static_cast<std::size_t>(a);
    const double t = (x[k] - g.origin[k]) / g.spacing[k];
    const int i = static_cast<int>(std::clamp(std::floor(t), 0.0, static_cast<double>(g.counts[k] - 2)));
    i0[k] = i;
    w[k] = std::clamp(t - i, 0.0, 1.0);
  }
  const auto& v = solution.values;
  if (g.dim == 1) return (1.0 - w[0]) * v[static_cast<std::size_t>(i0[0])] + w[0] * v[static_cast<std::size_t>(i0[0] + 1)];
  const auto nx = static_cast<std::size_t>(g.counts[0]);
  const auto at = [&](int i, int j) { return v[static_cast<std::size_t>(j) * nx + static_cast<std::size_t>(i)]; };
  return (1.0 - w[0]) * (1.0 - w[1]) * at(i0[0], i0[1]) + w[0] * (1.0 - w[1]) * at(i0[0] + 1, i0[1]) +
         (1.0 - w[0]) * w[1] * at(i0[0], i0[1] + 1) + w[0] * w[1] * at(i0[0] + 1, i0[1] + 1);
}

}  // namespace gsde
