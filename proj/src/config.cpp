#include "gsde/config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

namespace gsde {

using nlohmann::json;

namespace {

void allow_keys(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(path + "." + k, "unknown field");
  }
}

const json* find(const json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() || it->is_null() ? nullptr : &*it;
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(path, "must be finite");
  return v;
}

double number_or(const json& obj, const char* key, const std::string& path, double fallback) {
  const json* v = find(obj, key);
  return v ? number(*v, path + "." + key) : fallback;
}

std::int64_t integer(const json& j, const std::string& path, std::int64_t min_value) {
  if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
  const auto v = j.get<std::int64_t>();
  if (v < min_value) throw ConfigError(path, "must be >= " + std::to_string(min_value));
  return v;
}

std::string expression(const json& j, const std::string& path, int n) {
  std::string text;
  if (j.is_string()) {
    text = j.get<std::string>();
  } else if (j.is_number()) {
    std::array<char, 64> buf{};
    const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), j.get<double>());
    text.assign(buf.data(), r.ptr);
  } else {
    throw ConfigError(path, "expected an expression string");
  }
  try {
    return expr::format(expr::parse(text, n));
  } catch (const expr::ParseError& e) {
    throw ConfigError(path, e.what());
  }
}

std::vector<double> vec(const json& j, const std::string& path, std::size_t size) {
  if (j.is_number() && size == 1) return {number(j, path)};
  if (!j.is_array()) throw ConfigError(path, "expected an array of " + std::to_string(size) + " numbers");
  if (j.size() != size) {
    throw ConfigError(path, "expected " + std::to_string(size) + " entries, got " + std::to_string(j.size()));
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<std::vector<double>> mat(const json& j, const std::string& path, std::size_t rows, std::size_t cols) {
  if (j.is_number() && rows == 1 && cols == 1) return {{number(j, path)}};
  if (!j.is_array() || j.size() != rows) {
    throw ConfigError(path, "expected " + std::to_string(rows) + " rows of " + std::to_string(cols) + " entries");
  }
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < rows; ++i) out.push_back(vec(j[i], path + "[" + std::to_string(i) + "]", cols));
  return out;
}

json normalize_model(const json& m) {
  allow_keys(m, "model", {"n", "d", "drift", "sigma", "h", "bounds"});
  json out;
  const json* jn = find(m, "n");
  if (!jn) throw ConfigError("model.n", "required");
  const auto n = integer(*jn, "model.n", 1);
  const auto d = find(m, "d") ? integer(m["d"], "model.d", 1) : n;
  out["n"] = n;
  out["d"] = d;
  const int ni = static_cast<int>(n);

  const json* drift = find(m, "drift");
  if (!drift) throw ConfigError("model.drift", "required");
  json jd = drift->is_array() ? *drift : json::array({*drift});
  if (jd.size() != static_cast<std::size_t>(n)) {
    throw ConfigError("model.drift", "expected " + std::to_string(n) + " components, got " + std::to_string(jd.size()));
  }
  out["drift"] = json::array();
  for (std::size_t i = 0; i < jd.size(); ++i) {
    out["drift"].push_back(expression(jd[i], "model.drift[" + std::to_string(i) + "]", ni));
  }

  const json* sigma = find(m, "sigma");
  if (!sigma) throw ConfigError("model.sigma", "required");
  json js = *sigma;
  if (!js.is_array() && n == 1 && d == 1) js = json::array({json::array({js})});
  if (!js.is_array() || js.size() != static_cast<std::size_t>(n)) {
    throw ConfigError("model.sigma", "expected " + std::to_string(n) + " rows (n x d matrix)");
  }
  out["sigma"] = json::array();
  for (std::size_t i = 0; i < js.size(); ++i) {
    const std::string p = "model.sigma[" + std::to_string(i) + "]";
    if (!js[i].is_array() || js[i].size() != static_cast<std::size_t>(d)) {
      throw ConfigError(p, "expected " + std::to_string(d) + " entries (noise dimension d)");
    }
    json row = json::array();
    for (std::size_t j = 0; j < js[i].size(); ++j) row.push_back(expression(js[i][j], p + "[" + std::to_string(j) + "]", ni));
    out["sigma"].push_back(row);
  }

  if (const json* h = find(m, "h")) {
    if (!h->is_array() || h->size() != static_cast<std::size_t>(d)) {
      throw ConfigError("model.h", "expected a d x d x n nested array");
    }
    json jh = json::array();
    for (std::size_t i = 0; i < h->size(); ++i) {
      const std::string pi = "model.h[" + std::to_string(i) + "]";
      if (!(*h)[i].is_array() || (*h)[i].size() != static_cast<std::size_t>(d)) throw ConfigError(pi, "expected d entries");
      json row = json::array();
      for (std::size_t j = 0; j < (*h)[i].size(); ++j) {
        const std::string pj = pi + "[" + std::to_string(j) + "]";
        const json& hij = (*h)[i][j];
        if (!hij.is_array() || hij.size() != static_cast<std::size_t>(n)) throw ConfigError(pj, "expected n components");
        json comp = json::array();
        for (std::size_t k = 0; k < hij.size(); ++k) comp.push_back(expression(hij[k], pj + "[" + std::to_string(k) + "]", ni));
        row.push_back(comp);
      }
      jh.push_back(row);
    }
    for (std::size_t i = 0; i < jh.size(); ++i) {
      for (std::size_t j = 0; j < jh.size(); ++j) {
        if (jh[i][j] != jh[j][i]) {
          throw ConfigError("model.h[" + std::to_string(i) + "][" + std::to_string(j) + "]", "h must be symmetric in (i, j)");
        }
      }
    }
    out["h"] = jh;
  }

  if (const json* b = find(m, "bounds")) {
    allow_keys(*b, "model.bounds", {"c_b", "c_sigma", "lambda"});
    json jb;
    for (const char* k : {"c_b", "c_sigma", "lambda"}) {
      const json* v = find(*b, k);
      if (!v) throw ConfigError(std::string("model.bounds.") + k, "required");
      const double x = number(*v, std::string("model.bounds.") + k);
      if (x < 0.0) throw ConfigError(std::string("model.bounds.") + k, "must be >= 0");
      jb[k] = x;
    }
    out["bounds"] = jb;
  }
  return out;
}

json control_json(const json& c, const std::string& path, std::size_t d) {
  allow_keys(c, path, {"gamma", "mu"});
  const json* g = find(c, "gamma");
  if (!g) throw ConfigError(path + ".gamma", "required");
  json out;
  out["gamma"] = mat(*g, path + ".gamma", d, d);
  out["mu"] = find(c, "mu") ? vec(c["mu"], path + ".mu", d) : std::vector<double>(d, 0.0);
  return out;
}

json normalize_theta(const json& t, std::size_t d) {
  if (!t.is_object()) throw ConfigError("theta", "expected an object");
  const json* kind = find(t, "kind");
  if (!kind || !kind->is_string()) throw ConfigError("theta.kind", "required: singleton, diag_box or vertex_list");
  const std::string k = kind->get<std::string>();
  json out;
  out["kind"] = k;
  if (k == "singleton") {
    allow_keys(t, "theta", {"kind", "gamma", "mu"});
    const json c = control_json(json{{"gamma", find(t, "gamma") ? t["gamma"] : json()},
                                     {"mu", find(t, "mu") ? t["mu"] : json()}},
                                "theta", d);
    out["gamma"] = c["gamma"];
    out["mu"] = c["mu"];
  } else if (k == "diag_box") {
    allow_keys(t, "theta", {"kind", "sigma_low", "sigma_high", "beta"});
    const double lo = number_or(t, "sigma_low", "theta", std::nan(""));
    const double hi = number_or(t, "sigma_high", "theta", std::nan(""));
    if (std::isnan(lo)) throw ConfigError("theta.sigma_low", "required");
    if (std::isnan(hi)) throw ConfigError("theta.sigma_high", "required");
    if (!(lo >= 0.0 && hi >= lo)) throw ConfigError("theta", "need 0 <= sigma_low <= sigma_high");
    std::vector<double> beta(d, 0.0);
    if (const json* b = find(t, "beta")) {
      beta = b->is_number() ? std::vector<double>(d, number(*b, "theta.beta")) : vec(*b, "theta.beta", d);
    }
    for (double b : beta) {
      if (b < 0.0) throw ConfigError("theta.beta", "entries must be >= 0");
    }
    out["sigma_low"] = lo;
    out["sigma_high"] = hi;
    out["beta"] = beta;
  } else if (k == "vertex_list") {
    allow_keys(t, "theta", {"kind", "vertices"});
    const json* v = find(t, "vertices");
    if (!v || !v->is_array() || v->empty()) throw ConfigError("theta.vertices", "expected a nonempty array");
    out["vertices"] = json::array();
    for (std::size_t i = 0; i < v->size(); ++i) {
      out["vertices"].push_back(control_json((*v)[i], "theta.vertices[" + std::to_string(i) + "]", d));
    }
  } else {
    throw ConfigError("theta.kind", "unknown kind '" + k + "'");
  }
  return out;
}

json normalize_domain(const json& q, std::size_t n) {
  if (!q.is_object()) throw ConfigError("domain", "expected an object");
  const json* kind = find(q, "kind");
  if (!kind || !kind->is_string()) throw ConfigError("domain.kind", "required: interval, box, ball, annulus or implicit");
  const std::string k = kind->get<std::string>();
  json out;
  out["kind"] = k;
  if (k == "interval") {
    allow_keys(q, "domain", {"kind", "a", "b"});
    if (n != 1) throw ConfigError("domain.kind", "interval needs model.n = 1, got " + std::to_string(n));
    const json* a = find(q, "a");
    const json* b = find(q, "b");
    if (!a) throw ConfigError("domain.a", "required");
    if (!b) throw ConfigError("domain.b", "required");
    out["a"] = number(*a, "domain.a");
    out["b"] = number(*b, "domain.b");
    if (!(out["a"].get<double>() < out["b"].get<double>())) throw ConfigError("domain", "need a < b");
  } else if (k == "box") {
    allow_keys(q, "domain", {"kind", "lo", "hi"});
    if (!find(q, "lo") || !find(q, "hi")) throw ConfigError("domain", "box needs lo and hi");
    out["lo"] = vec(q["lo"], "domain.lo", n);
    out["hi"] = vec(q["hi"], "domain.hi", n);
  } else if (k == "ball" || k == "annulus") {
    if (k == "ball") {
      allow_keys(q, "domain", {"kind", "center", "radius"});
    } else {
      allow_keys(q, "domain", {"kind", "center", "r_inner", "r_outer"});
    }
    out["center"] = find(q, "center") ? vec(q["center"], "domain.center", n) : std::vector<double>(n, 0.0);
    for (const char* key : k == "ball" ? std::vector<const char*>{"radius"} : std::vector<const char*>{"r_inner", "r_outer"}) {
      const json* r = find(q, key);
      if (!r) throw ConfigError(std::string("domain.") + key, "required");
      out[key] = number(*r, std::string("domain.") + key);
    }
  } else if (k == "implicit") {
    allow_keys(q, "domain", {"kind", "g", "lo", "hi"});
    const json* g = find(q, "g");
    if (!g) throw ConfigError("domain.g", "required");
    out["g"] = expression(*g, "domain.g", static_cast<int>(n));
    if (!find(q, "lo") || !find(q, "hi")) throw ConfigError("domain", "implicit domain needs a bounding box lo/hi");
    out["lo"] = vec(q["lo"], "domain.lo", n);
    out["hi"] = vec(q["hi"], "domain.hi", n);
  } else {
    throw ConfigError("domain.kind", "unknown kind '" + k + "'");
  }
  return out;
}

Domain build_domain(const json& q) {
  const std::string k = q["kind"];
  try {
    if (k == "interval") return Domain::interval(q["a"], q["b"]);
    if (k == "box") return Domain::box(q["lo"], q["hi"]);
    if (k == "ball") return Domain::ball(q["center"], q["radius"]);
    if (k == "annulus") return Domain::annulus(q["center"], q["r_inner"], q["r_outer"]);
    return Domain::implicit(expr::parse(q["g"].get<std::string>(), static_cast<int>(q["lo"].size())), q["lo"], q["hi"]);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError("domain", e.what());
  }
}

ControlValue build_control(const json& c) {
  const auto g = c["gamma"].get<std::vector<std::vector<double>>>();
  const auto mu = c["mu"].get<std::vector<double>>();
  ControlValue v{Eigen::MatrixXd(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(g.size())),
                 Eigen::VectorXd(static_cast<Eigen::Index>(mu.size()))};
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = 0; j < g.size(); ++j) v.gamma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = g[i][j];
    v.mu(static_cast<Eigen::Index>(i)) = mu[i];
  }
  return v;
}

UncertaintySet build_theta(const json& t, int d) {
  const std::string k = t["kind"];
  try {
    if (k == "singleton") return UncertaintySet::singleton(build_control(t));
    if (k == "diag_box") return UncertaintySet::diag_box(d, t["sigma_low"], t["sigma_high"], t["beta"]);
    std::vector<ControlValue> v;
    for (const auto& c : t["vertices"]) v.push_back(build_control(c));
    return UncertaintySet::vertex_list(std::move(v));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("theta", e.what());
  }
}

std::vector<std::vector<double>> points_json(const json& j, const std::string& path, std::size_t n) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of points");
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(vec(j[i], path + "[" + std::to_string(i) + "]", n));
  return out;
}

json normalize_mc(const json& m, const Domain& domain, std::size_t n) {
  allow_keys(m, "mc", {"paths", "dt", "seed", "t_max", "refinement", "crn", "bootstrap", "threads", "policies", "points"});
  json out;
  out["paths"] = find(m, "paths") ? integer(m["paths"], "mc.paths", 2) : 10000;
  out["dt"] = number_or(m, "dt", "mc", 1e-3);
  if (!(out["dt"].get<double>() > 0.0)) throw ConfigError("mc.dt", "must be positive");
  if (const json* s = find(m, "seed")) {
    if (!s->is_number_integer() || (s->is_number_integer() && !s->is_number_unsigned() && s->get<std::int64_t>() < 0)) {
      throw ConfigError("mc.seed", "expected a non-negative integer");
    }
    out["seed"] = s->get<std::uint64_t>();
  } else {
    out["seed"] = std::uint64_t{1};
  }
  if (const json* t = find(m, "t_max")) {
    const double v = number(*t, "mc.t_max");
    if (!(v >= out["dt"].get<double>())) throw ConfigError("mc.t_max", "must be >= dt");
    out["t_max"] = v;
  }
  if (const json* r = find(m, "refinement")) {
    if (!r->is_string()) throw ConfigError("mc.refinement", "expected grid, interpolate or bridge");
    try {
      out["refinement"] = to_string(refinement_from_string(r->get<std::string>()));
    } catch (const std::invalid_argument& e) {
      throw ConfigError("mc.refinement", e.what());
    }
  }
  if (const json* c = find(m, "crn")) {
    if (!c->is_boolean()) throw ConfigError("mc.crn", "expected a boolean");
    out["crn"] = c->get<bool>();
  } else {
    out["crn"] = true;
  }
  out["bootstrap"] = find(m, "bootstrap") ? integer(m["bootstrap"], "mc.bootstrap", 0) : 0;
  out["threads"] = find(m, "threads") ? integer(m["threads"], "mc.threads", 0) : 0;
  json pol = json::array({"vertices"});
  if (const json* p = find(m, "policies")) {
    if (!p->is_array() || p->empty()) throw ConfigError("mc.policies", "expected a nonempty array");
    pol = json::array();
    for (std::size_t i = 0; i < p->size(); ++i) {
      const json& e = (*p)[i];
      if (!e.is_string() || (e != "vertices" && e != "pde")) {
        throw ConfigError("mc.policies[" + std::to_string(i) + "]", "expected \"vertices\" or \"pde\"");
      }
      if (std::find(pol.begin(), pol.end(), e) == pol.end()) pol.push_back(e);
    }
    if (std::find(pol.begin(), pol.end(), "pde") != pol.end() && n > 2) {
      throw ConfigError("mc.policies", "the pde policy needs a 1-D or 2-D problem");
    }
  }
  out["policies"] = pol;
  std::vector<std::vector<double>> pts;
  if (const json* p = find(m, "points")) {
    pts = points_json(*p, "mc.points", n);
  } else {
    std::vector<double> mid(n);
    for (std::size_t i = 0; i < n; ++i) mid[i] = 0.5 * (domain.lower()[i] + domain.upper()[i]);
    if (!domain.contains(mid, false)) {
      for (const auto& x : sample_closure(domain, 64)) {
        if (domain.contains(x, false)) {
          mid = x;
          break;
        }
      }
    }
    pts.push_back(mid);
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!domain.contains(pts[i], true)) throw ConfigError("mc.points[" + std::to_string(i) + "]", "point is outside the closure of the domain");
  }
  out["points"] = pts;
  return out;
}

json normalize_pde(const json& p, std::size_t n) {
  allow_keys(p, "pde", {"nodes", "tolerance", "max_iterations", "exact"});
  json out;
  std::vector<std::int64_t> nodes{101};
  if (const json* j = find(p, "nodes")) {
    const json arr = j->is_array() ? *j : json::array({*j});
    if (arr.empty() || (arr.size() != 1 && arr.size() != n)) throw ConfigError("pde.nodes", "expected one entry or one per axis");
    nodes.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) nodes.push_back(integer(arr[i], "pde.nodes[" + std::to_string(i) + "]", 3));
  }
  out["nodes"] = nodes;
  out["tolerance"] = number_or(p, "tolerance", "pde", n == 1 ? 1e-10 : 1e-8);
  if (!(out["tolerance"].get<double>() > 0.0)) throw ConfigError("pde.tolerance", "must be positive");
  out["max_iterations"] = find(p, "max_iterations") ? integer(p["max_iterations"], "pde.max_iterations", 1) : 100;
  if (const json* e = find(p, "exact")) out["exact"] = expression(*e, "pde.exact", static_cast<int>(n));
  return out;
}

json normalize_verify(const json& v, std::size_t n, std::size_t d) {
  allow_keys(v, "verify", {"checks", "dt_list", "boundary_point", "continuity_points", "gmartingale", "integral_t",
                           "inner_fraction", "gap_tolerance", "decay_tolerance", "continuity_tolerance",
                           "mc_pde_tolerance", "ito"});
  json out;
  out["checks"] = json::array();
  if (const json* c = find(v, "checks")) {
    if (!c->is_array()) throw ConfigError("verify.checks", "expected an array of check names");
    for (std::size_t i = 0; i < c->size(); ++i) {
      const std::string p = "verify.checks[" + std::to_string(i) + "]";
      if (!(*c)[i].is_string()) throw ConfigError(p, "expected a check name");
      const std::string name = (*c)[i];
      const auto& known = known_checks();
      if (std::find(known.begin(), known.end(), name) == known.end()) throw ConfigError(p, "unknown check '" + name + "'");
      if ((name == "dpp" || name == "mc_pde") && n > 2) throw ConfigError(p, name + " needs a PDE solution (1-D or 2-D)");
      out["checks"].push_back(name);
    }
  }
  std::vector<double> dts{1e-2, 1e-3, 1e-4};
  if (const json* j = find(v, "dt_list")) {
    if (!j->is_array() || j->empty()) throw ConfigError("verify.dt_list", "expected a nonempty array");
    dts = vec(*j, "verify.dt_list", j->size());
    for (double dt : dts) {
      if (!(dt > 0.0)) throw ConfigError("verify.dt_list", "entries must be positive");
    }
  }
  out["dt_list"] = dts;
  if (const json* b = find(v, "boundary_point")) out["boundary_point"] = vec(*b, "verify.boundary_point", n);
  out["continuity_points"] =
      find(v, "continuity_points") ? points_json(v["continuity_points"], "verify.continuity_points", n)
                                   : std::vector<std::vector<double>>{};
  json gm = json::array();
  if (const json* g = find(v, "gmartingale")) {
    if (!g->is_array()) throw ConfigError("verify.gmartingale", "expected an array of {A, p, t}");
    for (std::size_t i = 0; i < g->size(); ++i) {
      const std::string p = "verify.gmartingale[" + std::to_string(i) + "]";
      const json& c = (*g)[i];
      allow_keys(c, p, {"A", "p", "t"});
      json e;
      e["A"] = find(c, "A") ? mat(c["A"], p + ".A", d, d) : std::vector<std::vector<double>>(d, std::vector<double>(d, 0.0));
      e["p"] = find(c, "p") ? vec(c["p"], p + ".p", d) : std::vector<double>(d, 0.0);
      e["t"] = number_or(c, "t", p, 1.0);
      if (!(e["t"].get<double>() > 0.0)) throw ConfigError(p + ".t", "must be positive");
      const auto a = e["A"].get<std::vector<std::vector<double>>>();
      for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t s = 0; s < d; ++s) {
          if (a[r][s] != a[s][r]) throw ConfigError(p + ".A", "must be symmetric");
        }
      }
      gm.push_back(e);
    }
  } else {
    std::vector<std::vector<double>> a(d, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < d; ++i) a[i][i] = 2.0;
    gm.push_back(json{{"A", a}, {"p", std::vector<double>(d, 0.0)}, {"t", 1.0}});
  }
  out["gmartingale"] = gm;
  out["integral_t"] = find(v, "integral_t") ? vec(v["integral_t"], "verify.integral_t", v["integral_t"].size())
                                            : std::vector<double>{1.0};
  for (double t : out["integral_t"].get<std::vector<double>>()) {
    if (!(t > 0.0)) throw ConfigError("verify.integral_t", "entries must be positive");
  }
  out["inner_fraction"] = number_or(v, "inner_fraction", "verify", 0.25);
  const double frac = out["inner_fraction"];
  if (!(frac > 0.0 && frac < 0.5)) throw ConfigError("verify.inner_fraction", "must lie in (0, 0.5)");
  out["gap_tolerance"] = number_or(v, "gap_tolerance", "verify", 0.02);
  out["decay_tolerance"] = number_or(v, "decay_tolerance", "verify", 0.05);
  out["continuity_tolerance"] = number_or(v, "continuity_tolerance", "verify", 0.01);
  out["mc_pde_tolerance"] = number_or(v, "mc_pde_tolerance", "verify", 0.03);

  json ito;
  const json* ji = find(v, "ito");
  if (ji) allow_keys(*ji, "verify.ito", {"h", "grad", "hess", "paths", "tolerance"});
  const int ni = static_cast<int>(n);
  if (ji && find(*ji, "h")) {
    ito["h"] = expression((*ji)["h"], "verify.ito.h", ni);
    if (!find(*ji, "grad") || !find(*ji, "hess")) throw ConfigError("verify.ito", "h needs grad and hess");
    const json& g = (*ji)["grad"];
    const json& h = (*ji)["hess"];
    if (!g.is_array() || g.size() != n) throw ConfigError("verify.ito.grad", "expected n expressions");
    if (!h.is_array() || h.size() != n) throw ConfigError("verify.ito.hess", "expected n x n expressions");
    ito["grad"] = json::array();
    for (std::size_t i = 0; i < n; ++i) ito["grad"].push_back(expression(g[i], "verify.ito.grad[" + std::to_string(i) + "]", ni));
    ito["hess"] = json::array();
    for (std::size_t i = 0; i < n; ++i) {
      const std::string p = "verify.ito.hess[" + std::to_string(i) + "]";
      if (!h[i].is_array() || h[i].size() != n) throw ConfigError(p, "expected n expressions");
      json row = json::array();
      for (std::size_t j = 0; j < n; ++j) row.push_back(expression(h[i][j], p + "[" + std::to_string(j) + "]", ni));
      ito["hess"].push_back(row);
    }
  } else {
    // Default test function: |x|^2.
    std::string h;
    ito["grad"] = json::array();
    ito["hess"] = json::array();
    for (std::size_t i = 0; i < n; ++i) {
      const std::string xi = "x" + std::to_string(i + 1);
      h += (i ? " + " : "") + xi + "^2";
      ito["grad"].push_back(expression("2*" + xi, "verify.ito.grad", ni));
      json row = json::array();
      for (std::size_t j = 0; j < n; ++j) row.push_back(i == j ? "2" : "0");
      ito["hess"].push_back(row);
    }
    ito["h"] = expression(h, "verify.ito.h", ni);
  }
  ito["paths"] = ji && find(*ji, "paths") ? integer((*ji)["paths"], "verify.ito.paths", 1) : 200;
  ito["tolerance"] = ji ? number_or(*ji, "tolerance", "verify.ito", 0.05) : 0.05;
  out["ito"] = ito;
  return out;
}

}  // namespace

const std::vector<std::string>& known_checks() {
  static const std::vector<std::string> names{"gmartingale", "integral_bound", "dpp",   "exit_time_gap",
                                              "boundary_exit_decay", "continuity", "ito", "mc_pde",
                                              "lyapunov"};
  return names;
}

json normalize_config(const json& raw) {
  allow_keys(raw, "config", {"model", "theta", "domain", "functional", "mc", "pde", "verify"});
  for (const char* k : {"model", "theta", "domain"}) {
    if (!find(raw, k)) throw ConfigError(k, "required");
  }
  json out;
  out["model"] = normalize_model(raw["model"]);
  const auto n = out["model"]["n"].get<std::size_t>();
  const auto d = out["model"]["d"].get<std::size_t>();
  out["theta"] = normalize_theta(raw["theta"], d);
  out["domain"] = normalize_domain(raw["domain"], n);
  const Domain domain = build_domain(out["domain"]);

  const json fn = find(raw, "functional") ? raw["functional"] : json::object();
  allow_keys(fn, "functional", {"phi", "f", "mode"});
  out["functional"]["phi"] = expression(find(fn, "phi") ? fn["phi"] : json("0"), "functional.phi", static_cast<int>(n));
  out["functional"]["f"] = expression(find(fn, "f") ? fn["f"] : json("0"), "functional.f", static_cast<int>(n));
  const json mode = find(fn, "mode") ? fn["mode"] : json("upper");
  if (!mode.is_string() || (mode != "upper" && mode != "lower")) {
    throw ConfigError("functional.mode", "expected \"upper\" or \"lower\"");
  }
  out["functional"]["mode"] = mode;

  out["mc"] = normalize_mc(find(raw, "mc") ? raw["mc"] : json::object(), domain, n);
  out["pde"] = normalize_pde(find(raw, "pde") ? raw["pde"] : json::object(), n);
  out["verify"] = normalize_verify(find(raw, "verify") ? raw["verify"] : json::object(), n, d);
  return out;
}

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
  }
}

Problem build_problem(const json& c) {
  const json& m = c["model"];
  const int n = m["n"];
  const int d = m["d"];
  auto exprs = [&](const json& arr) {
    std::vector<expr::Expression> out;
    for (const auto& s : arr) out.push_back(expr::parse(s.get<std::string>(), n));
    return out;
  };
  std::vector<expr::Expression> sigma;
  for (const auto& row : m["sigma"]) {
    for (const auto& e : row) sigma.push_back(expr::parse(e.get<std::string>(), n));
  }
  std::vector<expr::Expression> h;
  if (m.contains("h")) {
    for (const auto& row : m["h"]) {
      for (const auto& comp : row) {
        for (const auto& e : comp) h.push_back(expr::parse(e.get<std::string>(), n));
      }
    }
  }
  std::optional<ModelBounds> bounds;
  if (m.contains("bounds")) bounds = ModelBounds{m["bounds"]["c_b"], m["bounds"]["c_sigma"], m["bounds"]["lambda"]};

  const json& fn = c["functional"];
  const json& mc = c["mc"];
  const json& pde = c["pde"];
  const json& v = c["verify"];

  Problem p{SdeModel(n, d, exprs(m["drift"]), std::move(sigma), std::move(h), bounds),
            build_theta(c["theta"], d),
            build_domain(c["domain"]),
            Functional{expr::parse(fn["phi"].get<std::string>(), n), expr::parse(fn["f"].get<std::string>(), n),
                       mode_from_string(fn["mode"])},
            McConfig{},
            mc["points"].get<std::vector<std::vector<double>>>(),
            mc["policies"].get<std::vector<std::string>>(),
            GridConfig{},
            std::nullopt,
            VerifyParams{}};
  p.mc.paths = mc["paths"];
  p.mc.dt = mc["dt"];
  p.mc.seed = mc["seed"];
  if (mc.contains("t_max")) p.mc.t_max = mc["t_max"].get<double>();
  if (mc.contains("refinement")) p.mc.refinement = refinement_from_string(mc["refinement"]);
  p.mc.common_random_numbers = mc["crn"];
  p.mc.bootstrap = mc["bootstrap"];
  p.mc.threads = mc["threads"];

  p.grid.nodes = pde["nodes"].get<std::vector<int>>();
  p.grid.tolerance = pde["tolerance"];
  p.grid.max_iterations = pde["max_iterations"];
  if (pde.contains("exact")) p.exact = expr::parse(pde["exact"].get<std::string>(), n);

  VerifyParams& vs = p.verify;
  vs.checks = v["checks"].get<std::vector<std::string>>();
  vs.dt_list = v["dt_list"].get<std::vector<double>>();
  if (v.contains("boundary_point")) vs.boundary_point = v["boundary_point"].get<std::vector<double>>();
  vs.continuity_points = v["continuity_points"].get<std::vector<std::vector<double>>>();
  for (const auto& g : v["gmartingale"]) {
    const auto a = g["A"].get<std::vector<std::vector<double>>>();
    const auto pv = g["p"].get<std::vector<double>>();
    GMartingaleCase gc{Eigen::MatrixXd(d, d), Eigen::VectorXd(d), g["t"]};
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) gc.a(i, j) = a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      gc.p(i) = pv[static_cast<std::size_t>(i)];
    }
    vs.gmartingale.push_back(gc);
  }
  vs.integral_t = v["integral_t"].get<std::vector<double>>();
  vs.inner_fraction = v["inner_fraction"];
  vs.gap_tolerance = v["gap_tolerance"];
  vs.decay_tolerance = v["decay_tolerance"];
  vs.continuity_tolerance = v["continuity_tolerance"];
  vs.mc_pde_tolerance = v["mc_pde_tolerance"];
  const json& ito = v["ito"];
  ItoParams is{expr::parse(ito["h"].get<std::string>(), n), exprs(ito["grad"]), {}, ito["paths"], ito["tolerance"]};
  for (const auto& row : ito["hess"]) {
    for (const auto& e : row) is.hess.push_back(expr::parse(e.get<std::string>(), n));
  }
  vs.ito = std::move(is);
  return p;
}

}  // namespace gsde
