#pragma once

#include "gsde/dynamics.hpp"
#include "gsde/geometry.hpp"
#include "gsde/montecarlo.hpp"
#include "gsde/pde.hpp"
#include "gsde/uncertainty.hpp"

#include <json.hpp>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsde {

/// Invalid run configuration; the message starts with the offending field path.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : std::invalid_argument(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Fills defaults, checks cross-block dimensions and canonicalizes expression
/// strings. Idempotent: normalize(normalize(j)) == normalize(j).
nlohmann::json normalize_config(const nlohmann::json& raw);

nlohmann::json load_config_file(const std::string& path);

struct GMartingaleCase {
  Eigen::MatrixXd a;
  Eigen::VectorXd p;
  double t = 1.0;
};

struct ItoParams {
  expr::Expression h;
  std::vector<expr::Expression> grad;
  std::vector<expr::Expression> hess;
  std::size_t paths = 200;
  double tolerance = 0.05;
};

struct VerifyParams {
  std::vector<std::string> checks;
  std::vector<double> dt_list;
  std::vector<double> boundary_point;  // empty: projection of the first test point
  std::vector<std::vector<double>> continuity_points;
  std::vector<GMartingaleCase> gmartingale;
  std::vector<double> integral_t;
  double inner_fraction = 0.25;
  double gap_tolerance = 0.02;
  double decay_tolerance = 0.05;
  double continuity_tolerance = 0.01;
  double mc_pde_tolerance = 0.03;
  std::optional<ItoParams> ito;
};

/// Everything a run needs, built from a normalized configuration.
struct Problem {
  SdeModel model;
  UncertaintySet theta;
  Domain domain;
  Functional functional;
  McConfig mc;
  std::vector<std::vector<double>> points;
  std::vector<std::string> policies;  // "vertices" and/or "pde"
  GridConfig grid;
  std::optional<expr::Expression> exact;
  VerifyParams verify;
};

Problem build_problem(const nlohmann::json& normalized);

/// Names accepted in verify.checks.
const std::vector<std::string>& known_checks();

}  // namespace gsde
