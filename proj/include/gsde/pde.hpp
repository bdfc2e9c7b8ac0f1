#pragma once

#include "gsde/dynamics.hpp"
#include "gsde/expr.hpp"
#include "gsde/geometry.hpp"
#include "gsde/montecarlo.hpp"
#include "gsde/uncertainty.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsde {

/// A precondition of the monotone scheme fails (e.g. diagonal dominance).
class SolverPreconditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class NodeType : std::uint8_t { Interior, Boundary, Exterior };

/// Uniform tensor grid over the bounding box of Q; axis 0 varies fastest.
struct Grid {
  int dim = 1;
  std::vector<double> origin;
  std::vector<double> spacing;
  std::vector<int> counts;

  std::size_t size() const;
  std::vector<double> point(std::size_t node) const;
  /// Per-axis integer index of a node.
  std::vector<int> index(std::size_t node) const;
};

struct GridConfig {
  std::vector<int> nodes{101};  // per axis; a single entry applies to every axis
  double tolerance = 1e-10;
  int max_iterations = 100;
  bool record_iterates = false;
};

struct PdeSolution {
  Grid grid;
  std::vector<double> values;
  std::vector<NodeType> mask;
  std::vector<std::size_t> policy;       // vertex index per node (interior nodes meaningful)
  std::vector<ControlValue> controls;    // the vertex set the policy indexes
  double residual = 0.0;
  int iterations = 0;
  Mode mode = Mode::Upper;
  bool converged = false;
  std::vector<std::vector<double>> iterates;  // values after each policy-frozen solve, when recorded
};

/// Solves max_c [L^c u - f] = 0 in Q (min for Mode::Lower), u = phi on the boundary,
/// by Howard policy iteration over theta's vertices. Dimensions 1 and 2.
PdeSolution solve_dirichlet(const SdeModel& model, const UncertaintySet& theta, const Domain& domain,
                            const expr::Expression& f, const expr::Expression& phi, const GridConfig& cfg,
                            Mode mode);

/// Max over interior nodes of |max_c L^c u - f| (min for lower mode).
double residual(const PdeSolution& solution, const SdeModel& model, const UncertaintySet& theta,
                const expr::Expression& f);

/// Grid feedback policy with the per-node optimal vertex; id "pde".
ControlPolicy extract_policy(const PdeSolution& solution);

/// Linear (1-D) or bilinear (2-D) interpolation of the nodal values, clamped to the grid.
double interpolate(const PdeSolution& solution, std::span<const double> x);

}  // namespace gsde
