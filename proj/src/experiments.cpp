#include "biharm/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "biharm/errors.hpp"

namespace biharm {

namespace {

const double kSigma4 = 8.0 * std::numbers::pi * std::numbers::pi / 3.0;

[[noreturn]] void schema(const std::string& m) { throw Error(ErrorCode::SchemaError, m); }

DomainPtr make(const DomainSpec& s, double h) {
  return std::make_shared<const LatticeDomain>(LatticeDomain::build(s, h));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Check make_check(std::string name, bool ok, double measured, std::optional<double> reference,
                 double tolerance, std::string detail = {}) {
  Check c;
  c.name = std::move(name);
  c.status = ok ? CheckStatus::Pass : CheckStatus::Fail;
  c.measured = measured;
  c.reference = reference;
  c.tolerance = tolerance;
  c.detail = std::move(detail);
  return c;
}

// Resolution-dependent comparisons are reported but not judged on coarse grids.
void mark_unresolved(Check& c, double h, const Tolerances& tol) {
  if (h > tol.resolved_h * (1.0 + 1e-12)) {
    c.status = CheckStatus::Unresolved;
    c.detail += (c.detail.empty() ? "" : "; ") + std::string("grid coarser than h = ") +
                std::to_string(tol.resolved_h) + ", not judged";
  }
}

double rel_err(double a, double b) { return std::abs(a / b - 1.0); }

std::vector<double> origin(int n) { return std::vector<double>(n, 0.0); }

double inner(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Random tangent direction at u, zero on the clamped layers.
std::vector<double> tangent_direction(const SphereField& u, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  const int nc = u.ncomp();
  std::vector<double> v(u.values().size(), 0.0);
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (u.domain().clamped(i)) continue;
    const auto ui = u.at(i);
    std::span<double> vi(v.data() + i * nc, static_cast<std::size_t>(nc));
    for (double& x : vi) x = g(rng);
    const double a = inner(ui, vi);
    for (int c = 0; c < nc; ++c) vi[c] -= a * ui[c];
  }
  return v;
}

VectorField shifted(const VectorField& u, const std::vector<double>& v, double t) {
  std::vector<double> w(u.values().begin(), u.values().end());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] += t * v[k];
  return VectorField(u.domain_ptr(), u.ncomp(), std::move(w));
}

double l2_distance(const VectorField& a, const VectorField& b) {
  const auto& d = a.domain();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double t = 0.0;
    for (int c = 0; c < a.ncomp(); ++c) t += (a.at(i)[c] - b.at(i)[c]) * (a.at(i)[c] - b.at(i)[c]);
    s += d.weight(i) * t;
  }
  return std::sqrt(s);
}

// --- JSON helpers -----------------------------------------------------------------

template <class T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    schema(std::string("key '") + key + "' has the wrong type");
  }
}

void reject_unknown(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) schema(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) schema("unknown key '" + key + "' in " + where);
  }
}

Json to_json(const EnergyReport& e) {
  Json j{{"hessian", e.hessian},
         {"grad4", e.grad4},
         {"lambda", e.lambda},
         {"q_factor", e.q_factor},
         {"singular_correction", e.singular_correction},
         {"el_residual_tangential", e.el_residual_tangential}};
  j["relaxed_L"] = e.relaxed_L ? Json(*e.relaxed_L) : Json(nullptr);
  j["H_lambda"] = e.H_lambda ? Json(*e.H_lambda) : Json(nullptr);
  return j;
}

Json to_json(const SingularitySet& s) {
  Json pts = Json::array();
  for (const auto& p : s.points) {
    Json q{{"position", p.position},   {"degree", p.degree},         {"cell_degree", p.cell_degree},
           {"cells", p.cells},         {"theta", p.theta},           {"theta_radius", p.theta_radius},
           {"flux_radius", p.flux_radius}, {"flux_residual", p.flux_residual}};
    q["flux_degree"] = p.flux_degree ? Json(*p.flux_degree) : Json(nullptr);
    pts.push_back(std::move(q));
  }
  return Json{{"points", pts},
              {"total_degree", s.total_degree()},
              {"neutral_clusters", s.neutral_clusters}};
}

Json options_to_json(const MinimizeOptions& o) {
  Json cores = Json::array();
  for (const auto& c : o.energy.cores) {
    Json cj{{"center", c.center}, {"radius", c.radius}};
    cj["strength"] = c.strength ? Json(*c.strength) : Json(nullptr);
    cores.push_back(std::move(cj));
  }
  return Json{{"lambda", o.lambda},
              {"max_iters", o.max_iters},
              {"direction", o.rule == DirectionRule::LBFGS ? "lbfgs" : "steepest"},
              {"lbfgs_memory", o.lbfgs_memory},
              {"initial_step", o.initial_step},
              {"backtrack", o.backtrack},
              {"armijo", o.armijo},
              {"max_backtracks", o.max_backtracks},
              {"grad_tol", o.grad_tol},
              {"stall_tol", o.stall_tol},
              {"stall_window", o.stall_window},
              {"refresh_period", o.refresh_period},
              {"localizer_inner_h", o.localizer_inner_h},
              {"localizer_outer_h", o.localizer_outer_h},
              {"seed", o.seed},
              {"cores", cores},
              {"thresholds", Json{{"eps0", o.detect.thresholds.eps0},
                                  {"radii", o.detect.thresholds.radii}}}};
}

Json run_report_json(const RunReport& r) {
  Json j{{"iterations", r.iterations},
         {"converged", r.converged},
         {"line_search_failed", r.line_search_failed},
         {"stop_reason", r.stop_reason},
         {"wall_seconds", r.wall_seconds},
         {"final_energy", to_json(r.final_energy)},
         {"final_singularities", to_json(r.final_singularities)},
         {"options", options_to_json(r.config)}};
  if (!r.trace.empty()) {
    j["initial_hessian"] = r.trace.front().hessian;
    j["final_hessian_trace"] = r.trace.back().hessian;
  }
  Json events = Json::array();
  for (const auto& rec : r.trace) {
    if (!rec.event.empty()) events.push_back(Json{{"iteration", rec.iteration}, {"event", rec.event}});
  }
  j["events"] = events;
  return j;
}

std::string trace_csv(const RunReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,hessian,grad4,L,H_lambda,step,grad_norm,refresh,true_H_lambda,event\n";
  for (const auto& t : r.trace) {
    std::string ev = t.event;
    std::replace(ev.begin(), ev.end(), ',', ';');
    os << t.iteration << ',' << t.hessian << ',' << t.grad4 << ',' << t.L << ',' << t.H_lambda << ','
       << t.step << ',' << t.grad_norm << ',' << (t.refresh ? 1 : 0) << ','
       << (t.refresh ? t.true_H_lambda : std::numeric_limits<double>::quiet_NaN()) << ',' << ev
       << '\n';
  }
  return os.str();
}

Json checks_json(const std::vector<Check>& checks) {
  Json a = Json::array();
  for (const auto& c : checks) a.push_back(to_json(c));
  return a;
}

// Report skeleton with the fields every experiment carries.
Json report_header(const RunConfig& c, const char* experiment) {
  return Json{{"experiment", experiment},
              {"version", std::string(code_version())},
              {"seed", c.seed},
              {"h", c.h},
              {"config", to_json(c)},
              {"config_source", c.source}};
}

void finish(ExperimentResult& r, std::chrono::steady_clock::time_point t0) {
  r.report["checks"] = checks_json(r.checks);
  std::size_t unresolved = 0;
  for (const auto& c : r.checks) unresolved += c.status == CheckStatus::Unresolved;
  r.report["unresolved"] = unresolved;
  r.report["status"] = r.failed() ? "fail" : "pass";
  r.report["wall_seconds"] = seconds_since(t0);
}

// Singular cores at the radial-map center, when it lies inside the domain.
std::vector<SingularCore> radial_cores(const LatticeDomain& d, std::span<const double> center) {
  std::vector<SingularCore> cores;
  if (d.spec().signed_distance(center) < -4.0 * d.spacing()) {
    const int n = d.dim();
    cores.push_back({std::vector<double>(center.begin(), center.end()), 2.0 * d.spacing(),
                     static_cast<double>((n - 1) * (n - 1))});
  }
  return cores;
}

struct InitialField {
  SphereField u;
  std::vector<SingularCore> cores;  // suggested cores for known singular fields
  Json description;
};

InitialField build_initial(const RunConfig& c, const DomainPtr& d) {
  const Json& ini = c.initial;
  const std::string kind = get_or<std::string>(ini, "kind", "radial");
  const int n = d->dim();
  InitialField out;
  out.description = ini;
  auto need_sphere_target = [&] {
    if (c.k != n - 1) {
      throw Error(ErrorCode::DimensionMismatch, "initial field '" + kind + "' needs k = n - 1");
    }
  };
  if (kind == "radial" || kind == "perturbed_radial") {
    need_sphere_target();
    const auto center = get_or<std::vector<double>>(ini, "center", origin(n));
    if (static_cast<int>(center.size()) != n) schema("initial.center has the wrong dimension");
    out.u = radial_map(d, center, get_or<double>(ini, "sign", 1.0));
    out.cores = radial_cores(*d, center);
    if (kind == "perturbed_radial") {
      out.u = perturb_tangent(out.u, get_or<double>(ini, "amplitude", 0.2), c.seed);
    }
  } else if (kind == "smooth_random") {
    out.u = smooth_random_field(d, c.k, c.seed, get_or<double>(ini, "bias", 2.0),
                                get_or<double>(ini, "frequency", 2.0));
  } else if (kind == "constant") {
    std::vector<double> v(c.k + 1, 0.0);
    v[c.k] = 1.0;
    v = get_or<std::vector<double>>(ini, "value", v);
    if (static_cast<int>(v.size()) != c.k + 1) schema("initial.value must have k + 1 entries");
    out.u = renormalize(VectorField(d, c.k + 1, [&] {
      std::vector<double> all(d->size() * v.size());
      for (std::size_t i = 0; i < d->size(); ++i) std::copy(v.begin(), v.end(), all.begin() + i * v.size());
      return all;
    }()));
  } else if (kind == "dumbbell_singular" || kind == "dumbbell_continuous" ||
             kind == "perturbed_dumbbell") {
    if (d->spec().shape != ShapeKind::Dumbbell) schema("dumbbell initial fields need a dumbbell domain");
    auto data = dumbbell_boundary_data(d);
    out.u = kind == "dumbbell_continuous" ? data.continuous : data.singular;
    if (kind == "perturbed_dumbbell") {
      PerturbOptions po;
      po.avoid = {data.top_center, data.bottom_center};
      po.avoid_radius = 0.5;
      out.u = perturb_tangent(out.u, get_or<double>(ini, "amplitude", 0.2), c.seed, po);
    }
  } else if (kind == "file") {
    const auto path = get_or<std::string>(ini, "path", "");
    if (path.empty()) schema("initial.path is required for kind 'file'");
    VectorField v = load_field(path);
    if (std::abs(v.domain().spacing() - d->spacing()) > 1e-15 ||
        v.domain().size() != d->size()) {
      // The stored field carries its own lattice; it takes precedence.
      out.u = SphereField::adopt(std::move(v), 1e-10);
    } else {
      out.u = SphereField::adopt(VectorField(d, v.ncomp(), {v.values().begin(), v.values().end()}),
                                 1e-10);
    }
  } else {
    schema("unknown initial field kind '" + kind + "'");
  }
  return out;
}

// |D(u)| / (|grad u|^4 / 16) at one node from the closure stencils.
double dfield_bound_ratio(const SphereField& u, std::size_t i, std::vector<double>& grad,
                          std::vector<double>& D) {
  const LatticeDomain& d = u.domain();
  const int n = d.dim();
  const int nc = u.ncomp();
  Stencil st;
  double g2 = 0.0;
  for (int a = 0; a < n; ++a) {
    std::fill(grad.begin() + a * nc, grad.begin() + (a + 1) * nc, 0.0);
    st.clear();
    if (!d.derivative_stencil(i, a, st)) return 0.0;
    for (const auto& t : st) {
      for (int c = 0; c < nc; ++c) grad[a * nc + c] += t.coef * u.at(t.node)[c];
    }
    for (int c = 0; c < nc; ++c) g2 += grad[a * nc + c] * grad[a * nc + c];
  }
  d_field_at(u, i, D);
  const double bound = g2 * g2 / 16.0;
  const double dn = norm(D);
  if (bound <= 1e-300) return dn > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return dn / bound;
}

}  // namespace

std::string_view code_version() { return "biharm 1.0.0"; }

std::string_view to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::Pass: return "pass";
    case CheckStatus::Fail: return "fail";
    case CheckStatus::Unresolved: return "unresolved";
  }
  return "?";
}

Json to_json(const Tolerances& t) {
  return Json{{"table", t.table},
              {"radial_energy_rel", t.radial_energy_rel},
              {"monotone_rel", t.monotone_rel},
              {"monotone_spread", t.monotone_spread},
              {"duality_abs", t.duality_abs},
              {"degree_residual", t.degree_residual},
              {"extension_factor", t.extension_factor},
              {"gradient_rel", t.gradient_rel},
              {"uniqueness_ratio", t.uniqueness_ratio},
              {"uniqueness_energy_rel", t.uniqueness_energy_rel},
              {"neck_independence_rel", t.neck_independence_rel},
              {"slice_rel", t.slice_rel},
              {"q_minimality_slack", t.q_minimality_slack},
              {"resolved_h", t.resolved_h}};
}

Tolerances tolerances_from_json(const Json& j, Tolerances t) {
  const Json defaults = to_json(t);
  std::set<std::string> allowed;
  for (const auto& [k, v] : defaults.items()) allowed.insert(k);
  reject_unknown(j, allowed, "tolerances");
  t.table = get_or<std::string>(j, "table", t.table);
  t.radial_energy_rel = get_or(j, "radial_energy_rel", t.radial_energy_rel);
  t.monotone_rel = get_or(j, "monotone_rel", t.monotone_rel);
  t.monotone_spread = get_or(j, "monotone_spread", t.monotone_spread);
  t.duality_abs = get_or(j, "duality_abs", t.duality_abs);
  t.degree_residual = get_or(j, "degree_residual", t.degree_residual);
  t.extension_factor = get_or(j, "extension_factor", t.extension_factor);
  t.gradient_rel = get_or(j, "gradient_rel", t.gradient_rel);
  t.uniqueness_ratio = get_or(j, "uniqueness_ratio", t.uniqueness_ratio);
  t.uniqueness_energy_rel = get_or(j, "uniqueness_energy_rel", t.uniqueness_energy_rel);
  t.neck_independence_rel = get_or(j, "neck_independence_rel", t.neck_independence_rel);
  t.slice_rel = get_or(j, "slice_rel", t.slice_rel);
  t.q_minimality_slack = get_or(j, "q_minimality_slack", t.q_minimality_slack);
  t.resolved_h = get_or(j, "resolved_h", t.resolved_h);
  return t;
}

Json to_json(const Check& c) {
  Json j{{"name", c.name},
         {"status", std::string(to_string(c.status))},
         {"measured", c.measured},
         {"tolerance", c.tolerance}};
  j["reference"] = c.reference ? Json(*c.reference) : Json(nullptr);
  if (!c.detail.empty()) j["detail"] = c.detail;
  if (!c.data.empty()) j["data"] = c.data;
  return j;
}

bool any_failed(const std::vector<Check>& checks) {
  return std::any_of(checks.begin(), checks.end(),
                     [](const Check& c) { return c.status == CheckStatus::Fail; });
}

// --- configuration ----------------------------------------------------------------

RunConfig parse_config(const Json& j) {
  reject_unknown(j, {"experiment", "domain", "h", "k", "lambda", "minimize", "thresholds", "output",
                     "seed", "tolerances", "initial", "params"},
                 "run config");
  RunConfig c;
  c.source = j;
  c.experiment = get_or<std::string>(j, "experiment", c.experiment);
  static const std::set<std::string> kinds{"validate", "minimize", "topology", "monotonicity",
                                           "dumbbell"};
  if (!kinds.count(c.experiment)) schema("unknown experiment '" + c.experiment + "'");
  if (j.contains("domain")) c.domain = domain_spec_from_json(j["domain"]);
  if (c.experiment == "dumbbell" && !j.contains("domain")) {
    c.domain = DomainSpec::dumbbell(1.0, 2.0).cell_centered();
  }
  c.h = get_or(j, "h", c.experiment == "dumbbell" ? 0.1 : c.h);
  if (!(c.h > 0.0) || !std::isfinite(c.h)) schema("h must be positive");
  c.k = get_or(j, "k", c.domain.dim - 1);
  if (c.k < 1) schema("k must be >= 1");
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.output = get_or<std::string>(j, "output", c.output);
  c.minimize.lambda = get_or(j, "lambda", 0.0);
  c.minimize.seed = c.seed;

  if (j.contains("minimize")) {
    const Json& m = j["minimize"];
    reject_unknown(m, {"max_iters", "direction", "lbfgs_memory", "initial_step", "backtrack", "armijo",
                       "max_backtracks", "grad_tol", "stall_tol", "stall_window", "refresh_period",
                       "localizer_inner_h", "localizer_outer_h", "cores"},
                   "minimize");
    auto& o = c.minimize;
    o.max_iters = get_or(m, "max_iters", o.max_iters);
    const auto dir = get_or<std::string>(m, "direction", "lbfgs");
    if (dir == "lbfgs") {
      o.rule = DirectionRule::LBFGS;
    } else if (dir == "steepest") {
      o.rule = DirectionRule::Steepest;
    } else {
      schema("minimize.direction must be 'lbfgs' or 'steepest'");
    }
    o.lbfgs_memory = get_or(m, "lbfgs_memory", o.lbfgs_memory);
    o.initial_step = get_or(m, "initial_step", o.initial_step);
    o.backtrack = get_or(m, "backtrack", o.backtrack);
    o.armijo = get_or(m, "armijo", o.armijo);
    o.max_backtracks = get_or(m, "max_backtracks", o.max_backtracks);
    o.grad_tol = get_or(m, "grad_tol", o.grad_tol);
    o.stall_tol = get_or(m, "stall_tol", o.stall_tol);
    o.stall_window = get_or(m, "stall_window", o.stall_window);
    o.refresh_period = get_or(m, "refresh_period", o.refresh_period);
    o.localizer_inner_h = get_or(m, "localizer_inner_h", o.localizer_inner_h);
    o.localizer_outer_h = get_or(m, "localizer_outer_h", o.localizer_outer_h);
    if (m.contains("cores")) {
      if (!m["cores"].is_array()) schema("minimize.cores must be an array");
      for (const auto& cj : m["cores"]) {
        reject_unknown(cj, {"center", "radius_h", "strength"}, "minimize.cores entry");
        SingularCore core;
        core.center = get_or<std::vector<double>>(cj, "center", origin(c.domain.dim));
        if (static_cast<int>(core.center.size()) != c.domain.dim) schema("core center dimension");
        core.radius = get_or(cj, "radius_h", 2.0) * c.h;
        if (cj.contains("strength") && !cj["strength"].is_null()) core.strength = get_or(cj, "strength", 0.0);
        o.energy.cores.push_back(std::move(core));
      }
    }
  }
  if (j.contains("thresholds")) {
    const Json& t = j["thresholds"];
    reject_unknown(t, {"eps0", "radii"}, "thresholds");
    auto& th = c.minimize.detect.thresholds;
    th.eps0 = get_or(t, "eps0", th.eps0);
    th.radii = get_or(t, "radii", th.radii);
    if (!(th.eps0 > 0.0)) schema("thresholds.eps0 must be positive");
    for (double r : th.radii) {
      if (!(r > 0.0)) schema("thresholds.radii must be positive");
    }
  }
  if (j.contains("tolerances")) c.tolerances = tolerances_from_json(j["tolerances"]);
  if (j.contains("initial")) {
    if (!j["initial"].is_object()) schema("initial must be an object");
    c.initial = j["initial"];
  } else if (c.experiment == "dumbbell") {
    c.initial = Json{{"kind", "dumbbell_singular"}};
  }
  if (j.contains("params")) {
    if (!j["params"].is_object()) schema("params must be an object");
    c.params = j["params"];
  }
  try {
    c.minimize.validate();
  } catch (const Error& e) {
    schema(std::string("invalid optimizer settings: ") + e.what());
  }
  return c;
}

Json to_json(const RunConfig& c) {
  return Json{{"experiment", c.experiment},
              {"domain", to_json(c.domain)},
              {"h", c.h},
              {"k", c.k},
              {"lambda", c.minimize.lambda},
              {"minimize", options_to_json(c.minimize)},
              {"output", c.output},
              {"seed", c.seed},
              {"tolerances", to_json(c.tolerances)},
              {"initial", c.initial},
              {"params", c.params}};
}

// --- oracle checks -------------------------------------------------------------------

std::vector<Check> check_radial_energy(double h, const Tolerances& tol) {
  auto d = make(DomainSpec::annulus(5, origin(5), 0.5, 1.0).cell_centered(), h);
  const auto u = radial_map(d, origin(5));
  const double ref = 8.0 * kSigma4;
  const double H = hessian_energy(u);
  const double G = grad4_energy(u);
  std::vector<Check> out;
  out.push_back(make_check("radial map Hessian energy on the annulus", rel_err(H, ref) <= tol.radial_energy_rel,
                           H, ref, tol.radial_energy_rel, "relative error " + std::to_string(rel_err(H, ref))));
  out.push_back(make_check("radial map quartic energy on the annulus", rel_err(G, ref) <= tol.radial_energy_rel,
                           G, ref, tol.radial_energy_rel, "relative error " + std::to_string(rel_err(G, ref))));
  for (auto& c : out) mark_unresolved(c, h, tol);
  return out;
}

std::vector<Check> check_monotone_constancy(double h, double domain_radius,
                                            const std::vector<double>& radii,
                                            const Tolerances& tol) {
  // The boundary term differentiates across the sphere |x| = r; keep its
  // stencils off the clamped rim, where the closure stencils bias the value.
  for (double r : radii) {
    if (r + 3.0 * h > domain_radius) {
      throw Error(ErrorCode::InvalidArgument, "monotonicity radius " + std::to_string(r) +
                                                  " reaches the clamped rim; need r + 3h <= domain radius");
    }
  }
  auto d = make(DomainSpec::ball(5, origin(5), domain_radius).cell_centered(), h);
  const auto u = radial_map(d, origin(5));
  EnergyOptions eo;
  eo.cores = radial_cores(*d, origin(5));
  const double ref = 24.0 * kSigma4;
  std::vector<Check> out;
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  Json values = Json::array();
  for (double r : radii) {
    const auto q = sigma_monotone(u, origin(5), r, eo);
    lo = std::min(lo, q.value);
    hi = std::max(hi, q.value);
    values.push_back(Json{{"r", r}, {"value", q.value}, {"bulk", q.bulk}, {"boundary", q.boundary}});
    auto c = make_check("monotonicity quantity of the radial map at r = " + std::to_string(r),
                        rel_err(q.value, ref) <= tol.monotone_rel, q.value, ref, tol.monotone_rel);
    mark_unresolved(c, h, tol);
    out.push_back(std::move(c));
  }
  const double spread = (hi - lo) / lo;
  auto c = make_check("monotonicity quantity is constant across radii", spread <= tol.monotone_spread, spread,
                      0.0, tol.monotone_spread);
  c.data = values;
  mark_unresolved(c, h, tol);
  out.push_back(std::move(c));
  return out;
}

Check check_wedge_inequality(int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> scale(-3.0, 3.0);
  std::vector<double> vecs(20), w;
  int violations = 0;
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    double sum = 0.0;
    for (int v = 0; v < 4; ++v) {
      const double s = std::exp(scale(rng));  // spread the magnitudes over decades
      for (int c = 0; c < 5; ++c) {
        vecs[v * 5 + c] = s * g(rng);
        sum += vecs[v * 5 + c] * vecs[v * 5 + c];
      }
    }
    w = wedge(vecs, 5);
    const double ratio = norm(w) / (sum * sum / 16.0);
    worst = std::max(worst, ratio);
    if (ratio > 1.0 + 1e-12) ++violations;
  }
  auto c = make_check("wedge inequality on random 5-vectors", violations == 0, violations, 0.0, 0.0,
                      "largest ratio " + std::to_string(worst) + " over " + std::to_string(trials) +
                          " quadruples");
  c.data = Json{{"trials", trials}, {"max_ratio", worst}};
  return c;
}

Check check_dfield_bound(int fields, double h, std::uint64_t seed) {
  auto d = make(DomainSpec::ball(5, origin(5), 1.0).cell_centered(), h);
  std::size_t violations = 0, nodes = 0;
  double worst = 0.0;
  std::vector<double> grad(25), D(5);
  for (int f = 0; f < fields; ++f) {
    // Low bias makes the fields wind substantially.
    const auto u = smooth_random_field(d, 4, seed + f, 1.2, 2.0 + 0.5 * (f % 4));
    for (std::size_t i = 0; i < d->size(); ++i) {
      const double r = dfield_bound_ratio(u, i, grad, D);
      worst = std::max(worst, r);
      violations += r > 1.0 + 1e-12;
      ++nodes;
    }
  }
  auto c = make_check("D-field bound on random smooth fields", violations == 0,
                      static_cast<double>(violations), 0.0, 0.0,
                      "largest ratio " + std::to_string(worst) + " over " + std::to_string(nodes) +
                          " nodes");
  c.data = Json{{"fields", fields}, {"max_ratio", worst}, {"h", h}};
  return c;
}

Check check_duality(int sets, std::uint64_t seed, const Tolerances& tol) {
  std::mt19937_64 rng(seed);
  double worst = 0.0, worst_violation = 0.0;
  Json rows = Json::array();
  for (int s = 0; s < sets; ++s) {
    const int n = s % 2 == 0 ? 3 : 5;
    const double h = n == 3 ? 1.0 / 16 : 1.0 / 6;
    auto d = make(DomainSpec::box(std::vector<double>(n, -1.0), std::vector<double>(n, 1.0)), h);
    std::uniform_real_distribution<double> pos(-0.7, 0.7);
    std::uniform_int_distribution<int> pairs(1, 3);
    SingularitySet set;
    const int m = pairs(rng);
    for (int p = 0; p < 2 * m; ++p) {
      Singularity q;
      q.position.resize(n);
      for (double& x : q.position) x = pos(rng);
      q.degree = p % 2 == 0 ? 1 : -1;
      q.node = *d->nearest_node(q.position);
      set.points.push_back(std::move(q));
    }
    const auto primal = minimal_connection(set, *d);
    const auto dual = relaxed_L_dual(set, *d);
    const double gap = std::abs(primal.value - dual.value);
    worst = std::max(worst, gap);
    worst_violation = std::max(worst_violation, dual.max_violation);
    rows.push_back(Json{{"n", n}, {"points", 2 * m}, {"primal", primal.value}, {"dual", dual.value}});
  }
  auto c = make_check("minimal connection equals its dual", worst <= tol.duality_abs && worst_violation <= 1e-9,
                      worst, 0.0, tol.duality_abs,
                      "largest dual constraint violation " + std::to_string(worst_violation));
  c.data = rows;
  return c;
}

std::vector<Check> check_degree_recovery(double h, const Tolerances& tol) {
  auto d = make(DomainSpec::ball(5, origin(5), 1.0).cell_centered(), h);
  std::vector<Check> out;
  for (double sign : {1.0, -1.0}) {
    const auto u = radial_map(d, origin(5), sign);
    const auto f = flux_degree_raw(u, origin(5), 0.5);
    const int expect = sign > 0 ? 1 : -1;
    auto c = make_check(std::string("flux degree of ") + (sign > 0 ? "x/|x|" : "-x/|x|"),
                        f.degree == expect && f.residual < tol.degree_residual, f.raw, expect,
                        tol.degree_residual, "rounded " + std::to_string(f.degree));
    mark_unresolved(c, h, tol);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Check> check_extension(int inputs, double h, std::uint64_t seed, const Tolerances& tol) {
  auto d = make(DomainSpec::ball(5, origin(5), 1.0).cell_centered(), h);
  const double ball_half = ball_volume(5) * std::pow(0.5, 5);
  std::vector<Check> out;
  // Radial shrink (|v| <= 1), radial growth (|v| >= 1) and mixed profiles.
  const double factors[] = {0.6, 1.5, 0.8, 1.3, 0.5};
  for (int m = 0; m < inputs; ++m) {
    const auto u = smooth_random_field(d, 4, seed + m, 2.0);
    const double factor = factors[m % 5];
    const bool mixed = m >= 5;
    VectorField v(d, 5);
    for (std::size_t i = 0; i < d->size(); ++i) {
      const auto x = d->position(i);
      const double r2 = dot(x, x);
      const double rho = r2 < 0.36 ? std::pow(1.0 - r2 / 0.36, 2) : 0.0;
      double f = (1.0 - rho) + rho * factor;
      if (mixed && x[0] < 0.0) f = (1.0 - rho) + rho / factor;
      for (int c = 0; c < 5; ++c) v.at(i)[c] = f * u.at(i)[c];
    }
    const auto r = extend_to_sphere(v);
    double unit = 0.0;
    bool boundary = true;
    for (std::size_t i = 0; i < d->size(); ++i) {
      unit = std::max(unit, std::abs(norm(r.w.at(i)) - 1.0));
      if (d->clamped(i)) {
        for (int c = 0; c < 5; ++c) boundary = boundary && r.w.at(i)[c] == v.at(i)[c];
      }
    }
    const double bound = tol.extension_factor * r.averaging_constant / ball_half;
    const double sampled_ratio = r.mean_sampled_energy / r.energy_input;
    const std::string label = "extension of input " + std::to_string(m + 1) + " (factor " +
                              std::to_string(factor) + ")";
    out.push_back(make_check(label + ": unit norm", unit <= 1e-12, unit, 0.0, 1e-12));
    out.push_back(make_check(label + ": boundary layers preserved", boundary, boundary ? 0.0 : 1.0, 0.0, 0.0));
    auto c = make_check(label + ": sampled-average energy ratio", sampled_ratio <= bound, sampled_ratio, bound,
                        tol.extension_factor,
                        "chosen-center ratio " + std::to_string(r.ratio) + ", c(k) = " +
                            std::to_string(r.averaging_constant));
    c.data = Json{{"energy_w", r.energy_w},   {"energy_input", r.energy_input},
                  {"ratio", r.ratio},         {"mean_sampled_energy", r.mean_sampled_energy},
                  {"sampled", r.sampled},     {"skipped", r.skipped},
                  {"averaging_constant", r.averaging_constant}};
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Check> check_gradient(int fields, int directions, double h, std::uint64_t seed,
                                  const Tolerances& tol) {
  auto d = make(DomainSpec::ball(5, origin(5), 1.0).cell_centered(), h);
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  bool monotone = true;
  int traces = 0;
  for (int f = 0; f < fields; ++f) {
    const auto u = smooth_random_field(d, 4, seed + 100 + f, 1.5);
    const auto dir = descent_direction(u);
    for (int k = 0; k < directions; ++k) {
      const auto v = tangent_direction(u, rng);
      const double t = 1e-5;
      const double fd = (hessian_energy(shifted(u, v, t)) - hessian_energy(shifted(u, v, -t))) / (2.0 * t);
      const double exact = -inner(dir.values(), v);
      worst = std::max(worst, std::abs(fd - exact) / std::abs(exact));
    }
    MinimizeOptions mo;
    mo.max_iters = 20;
    const auto r = minimize_hessian(u, mo);
    for (std::size_t i = 1; i < r.report.trace.size(); ++i) {
      monotone = monotone && r.report.trace[i].hessian <= r.report.trace[i - 1].hessian;
    }
    monotone = monotone && energy_trace_audit(r.report).pass;
    ++traces;
  }
  std::vector<Check> out;
  out.push_back(make_check("descent direction against central differences", worst <= tol.gradient_rel, worst,
                           0.0, tol.gradient_rel,
                           std::to_string(fields * directions) + " directions at t = 1e-5"));
  out.push_back(make_check("Hessian descent traces are non-increasing", monotone, monotone ? 0.0 : 1.0, 0.0, 0.0,
                           std::to_string(traces) + " runs of 20 iterations"));
  return out;
}

Check check_caccioppoli(double h) {
  auto d = make(DomainSpec::ball(5, origin(5), 1.0).cell_centered(), h);
  const auto u = radial_map(d, origin(5));
  EnergyOptions eo;
  eo.cores = radial_cores(*d, origin(5));
  Json rows = Json::array();
  bool finite = true;
  double last = 0.0;
  for (double R : {0.5, 0.25}) {
    last = caccioppoli_ratio(u, origin(5), R, eo);
    finite = finite && std::isfinite(last) && last > 0.0;
    rows.push_back(Json{{"R", R}, {"ratio", last}});
  }
  auto c = make_check("Caccioppoli ratio of the radial map is finite", finite, last, std::nullopt, 0.0);
  c.data = rows;
  return c;
}

Check check_persistence(int fields, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const DomainSpec specs[] = {
      DomainSpec::ball(3, {0.1, 0.0, -0.2}, 0.9),
      DomainSpec::annulus(4, origin(4), 0.3, 1.0).cell_centered(),
      DomainSpec::box({-1.0, -0.5}, {1.0, 0.5}),
      DomainSpec::ball(5, origin(5), 1.0).cell_centered(),
      DomainSpec::dumbbell(1.0, 1.0).cell_centered(),
  };
  const double hs[] = {1.0 / 10, 1.0 / 8, 1.0 / 16, 1.0 / 5, 1.0 / 4};
  int identical = 0;
  std::size_t exterior = 0;
  for (int f = 0; f < fields; ++f) {
    const int which = f % 5;
    auto d = make(specs[which], hs[which]);
    const int k = 1 + static_cast<int>(rng() % 4);
    const auto u = smooth_random_field(d, k, seed + f);
    const auto bytes = encode_field(u);
    const auto back = decode_field(bytes);
    const auto again = encode_field(back);
    const bool same_values = std::equal(u.values().begin(), u.values().end(), back.values().begin(),
                                        [](double a, double b) {
                                          return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
                                        });
    identical += bytes == again && same_values;
    exterior += d->grid_size() - d->size();
  }
  auto c = make_check("field file round trip is bit-identical", identical == fields, identical, fields, 0.0,
                      std::to_string(exterior) + " exterior NaN nodes across all files");
  return c;
}

std::vector<Check> check_uniqueness(const UniquenessOptions& o, const Tolerances& tol) {
  auto d = make(DomainSpec::ball(5, origin(5), 1.0).cell_centered(), o.h);
  const auto phi = radial_map(d, origin(5));
  MinimizeOptions mo;
  mo.energy.cores = radial_cores(*d, origin(5));
  const double H_phi = hessian_energy_detail(phi, mo.energy).value;
  mo.max_iters = o.reference_iters;
  mo.stall_tol = 1e-14;
  const auto ref = minimize_hessian(phi, mo);
  mo.max_iters = o.iters;

  double worst_ratio = std::numeric_limits<double>::infinity();
  double lowest_H = std::numeric_limits<double>::infinity();
  Json rows = Json::array();
  for (int s = 1; s <= o.seeds; ++s) {
    const auto u0 = perturb_tangent(phi, o.amplitude, static_cast<std::uint64_t>(s));
    const auto r = minimize_hessian(u0, mo);
    const double d0 = l2_distance(u0, ref.u);
    const double d1 = l2_distance(r.u, ref.u);
    const double ratio = d1 > 0.0 ? d0 / d1 : std::numeric_limits<double>::infinity();
    worst_ratio = std::min(worst_ratio, ratio);
    lowest_H = std::min(lowest_H, r.report.final_energy.hessian);
    rows.push_back(Json{{"seed", s},
                        {"initial_distance", d0},
                        {"final_distance", d1},
                        {"ratio", ratio},
                        {"final_hessian", r.report.final_energy.hessian},
                        {"iterations", r.report.iterations},
                        {"distance_to_radial_map", l2_distance(r.u, phi)}});
  }
  std::vector<Check> out;
  auto c1 = make_check("perturbations descend back to the discrete minimizer", worst_ratio >= tol.uniqueness_ratio,
                       worst_ratio, tol.uniqueness_ratio, 0.0,
                       "smallest distance reduction over " + std::to_string(o.seeds) + " seeds");
  c1.data = Json{{"runs", rows},
                 {"reference_hessian", ref.report.final_energy.hessian},
                 {"reference_iterations", ref.report.iterations},
                 {"reference_distance_to_radial_map", l2_distance(ref.u, phi)}};
  out.push_back(std::move(c1));
  const double floor = (1.0 - tol.uniqueness_energy_rel) * H_phi;
  out.push_back(make_check("no descent run undercuts the corrected radial energy", lowest_H >= floor, lowest_H,
                           H_phi, tol.uniqueness_energy_rel,
                           "lowest final H relative to H(radial map): " + std::to_string(lowest_H / H_phi)));
  return out;
}

std::vector<SliceIntegral> neck_slice_jacobians(const SphereField& u) {
  const LatticeDomain& d = u.domain();
  if (d.spec().shape != ShapeKind::Dumbbell) {
    throw Error(ErrorCode::InvalidArgument, "slice integrals need a dumbbell domain");
  }
  const int n = d.dim();
  const int nc = u.ncomp();
  if (nc != n) throw Error(ErrorCode::DimensionMismatch, "slice Jacobians need maps into S^{n-1}");
  const double h = d.spacing();
  const double half = d.spec().neck_half_length;
  const int last = n - 1;
  std::vector<double> sums(d.extents()[last], 0.0);
  std::vector<std::uint8_t> used(d.extents()[last], 0);
  std::vector<double> m(nc * nc);
  Stencil st;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double z = d.coord(i, last);
    if (std::abs(z) > half) continue;
    const auto ui = u.at(i);
    std::copy(ui.begin(), ui.end(), m.begin());
    bool ok = true;
    for (int a = 0; a < last && ok; ++a) {
      double* col = m.data() + (a + 1) * nc;
      std::fill(col, col + nc, 0.0);
      st.clear();
      // Sixth-order central differences where three neighbors exist on each
      // side; the closure stencil otherwise (next to the clamped neck wall).
      std::array<std::int32_t, 7> line{};
      line[3] = static_cast<std::int32_t>(i);
      bool wide = true;
      for (int k = 1; k <= 3 && wide; ++k) {
        line[3 + k] = d.neighbor(static_cast<std::size_t>(line[2 + k]), a, +1);
        line[3 - k] = line[3 + k] < 0 ? -1 : d.neighbor(static_cast<std::size_t>(line[4 - k]), a, -1);
        wide = line[3 + k] >= 0 && line[3 - k] >= 0;
      }
      if (wide) {
        constexpr std::array<double, 3> w{45.0, -9.0, 1.0};
        for (int k = 1; k <= 3; ++k) {
          st.add(line[3 + k], w[k - 1] / (60.0 * h));
          st.add(line[3 - k], -w[k - 1] / (60.0 * h));
        }
      } else {
        ok = d.derivative_stencil(i, a, st);
        if (!ok) break;
      }
      for (const auto& t : st) {
        for (int c = 0; c < nc; ++c) col[c] += t.coef * u.at(t.node)[c];
      }
    }
    if (!ok) continue;
    // The neck boundary is parallel to the slicing axis, so the cell weight
    // divided by h is the cross-sectional measure.
    const int g = d.grid_index(i, last);
    sums[g] += d.weight(i) / h * std::abs(determinant(m, nc));
    used[g] = 1;
  }
  std::vector<SliceIntegral> out;
  for (int g = 0; g < d.extents()[last]; ++g) {
    if (used[g]) out.push_back({d.grid_coord(g, last), sums[g]});
  }
  return out;
}

std::vector<Check> check_dumbbell(const DumbbellOptions& o, const Tolerances& tol,
                                  std::vector<DumbbellMeasurement>* out_measurements) {
  if (o.neck_lengths.empty()) throw Error(ErrorCode::InvalidArgument, "need at least one neck length");
  std::vector<DumbbellMeasurement> ms;
  for (double L : o.neck_lengths) {
    auto d = make(DomainSpec::dumbbell(o.cap_radius, L).cell_centered(), o.h);
    const auto data = dumbbell_boundary_data(d);
    DumbbellMeasurement m;
    m.neck_length = L;
    m.energy_singular = hessian_energy(data.singular);
    m.energy_continuous = hessian_energy(data.continuous);
    m.continuous_bound = 32.0 * kSigma4 * L;
    const auto slices = neck_slice_jacobians(data.smoothed);
    m.min_slice = std::numeric_limits<double>::infinity();
    for (const auto& s : slices) {
      // Interior slices only: the caps start at |x_n| = L.
      if (std::abs(s.height) > L - 2.0 * o.h) continue;
      m.min_slice = std::min(m.min_slice, s.value / kSigma4);
      ++m.slices;
    }
    ms.push_back(m);
  }

  std::vector<Check> out;
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  Json rows = Json::array();
  for (const auto& m : ms) {
    lo = std::min(lo, m.energy_singular);
    hi = std::max(hi, m.energy_singular);
    rows.push_back(Json{{"neck_half_length", m.neck_length},
                        {"H_singular", m.energy_singular},
                        {"H_continuous", m.energy_continuous},
                        {"continuous_bound", m.continuous_bound},
                        {"min_slice_over_sigma4", m.min_slice},
                        {"slices", m.slices}});
  }
  const double spread = (hi - lo) / lo;
  auto c = make_check("singular competitor energy is independent of the neck length",
                      spread <= tol.neck_independence_rel, spread, 0.0, tol.neck_independence_rel);
  c.data = rows;
  mark_unresolved(c, o.h, tol);
  out.push_back(std::move(c));

  for (const auto& m : ms) {
    const std::string at = " at neck half-length " + std::to_string(m.neck_length);
    out.push_back(make_check("slice Jacobian integrals reach sigma_4" + at, m.min_slice >= 1.0 - tol.slice_rel,
                             m.min_slice, 1.0, tol.slice_rel,
                             std::to_string(m.slices) + " interior slices, smallest value / sigma_4"));
    out.push_back(make_check("continuous competitor exceeds 32 sigma_4 L" + at,
                             m.energy_continuous >= m.continuous_bound, m.energy_continuous,
                             m.continuous_bound, 0.0));
    // The verdict is a report flag: it must say "gap" exactly when the numbers show one.
    const bool gap = m.continuous_bound > m.energy_singular;
    // Neck half-length beyond which every continuous competitor costs more than the singular map.
    const double L_star = m.energy_singular / (32.0 * kSigma4);
    auto v = make_check("gap verdict" + at, true, m.continuous_bound - m.energy_singular, 0.0, 0.0,
                        std::string(gap ? "gap established at this L: 32 sigma_4 L exceeds the singular energy"
                                        : "no gap at this L: 32 sigma_4 L does not exceed the singular energy") +
                            "; threshold L* = " + std::to_string(L_star));
    v.data = Json{{"gap", gap}, {"H_singular", m.energy_singular}, {"bound", m.continuous_bound},
                  {"L_star", L_star}};
    out.push_back(std::move(v));
  }
  if (out_measurements) *out_measurements = ms;
  return out;
}

std::vector<Check> check_q_minimality(const QMinimalityOptions& o, const Tolerances& tol) {
  auto d = make(DomainSpec::dumbbell(1.0, o.neck_half_length).cell_centered(), o.h);
  const auto data = dumbbell_boundary_data(d);
  MinimizeOptions mo;
  mo.lambda = o.lambda;
  mo.max_iters = o.iters;
  mo.seed = o.seed;
  const auto r = minimize_relaxed(data.singular, mo);
  const double H_u = r.report.final_energy.hessian;
  const double Q = (1.0 + o.lambda) / (1.0 - o.lambda);

  PerturbOptions po;
  po.avoid = {data.top_center, data.bottom_center};
  po.avoid_radius = 0.5;
  double worst = 0.0;  // largest H(u) / (Q H(w))
  Json rows = Json::array();
  for (int m = 0; m < o.competitors; ++m) {
    // Alternate perturbations of the singular and the continuous competitor.
    const SphereField& base = m % 2 == 0 ? data.singular : data.continuous;
    const double amp = 0.1 + 0.1 * (m / 2 % 3);
    const auto w = m < 2 ? base : perturb_tangent(base, amp, o.seed + m, po);
    const double H_w = hessian_energy(w);
    worst = std::max(worst, H_u / (Q * H_w));
    rows.push_back(Json{{"competitor", m}, {"base", m % 2 == 0 ? "singular" : "continuous"},
                        {"amplitude", m < 2 ? 0.0 : amp}, {"H", H_w}});
  }
  std::vector<Check> out;
  auto c = make_check("relaxed minimizer is Q-minimal against competitors", worst <= 1.0 + tol.q_minimality_slack,
                      worst, 1.0, tol.q_minimality_slack,
                      "largest H(u_lambda) / (Q H(w)); H(u_lambda) = " + std::to_string(H_u));
  c.data = Json{{"competitors", rows}, {"H_u", H_u}, {"Q", Q}, {"run", run_report_json(r.report)}};
  out.push_back(std::move(c));
  const auto audit = energy_trace_audit(r.report);
  auto a = make_check("relaxed run trace audit", audit.pass, static_cast<double>(audit.issues.size()), 0.0, 0.0,
                      std::to_string(audit.refresh_jumps.size()) + " refresh records");
  a.data = Json{{"issues", audit.issues}, {"refresh_jumps", audit.refresh_jumps}};
  out.push_back(std::move(a));
  return out;
}

// --- experiments ---------------------------------------------------------------------

ExperimentResult run_validate(const RunConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult r;
  r.report = report_header(c, "validate");
  const bool given = c.source.contains("h");
  const double annulus_h = get_or(c.params, "annulus_h", given ? c.h : 1.0 / 16);
  const double ball_h = get_or(c.params, "ball_h", given ? c.h : 1.0 / 12);
  // The spread tolerance is pinned for fine grids; at h = 1/12 the smallest
  // radius sits only 3.6 cells from the singular core.
  const double monotone_h = get_or(c.params, "monotone_h", given ? c.h : 1.0 / 16);
  const auto& tol = c.tolerances;
  r.report["resolutions"] =
      Json{{"annulus_h", annulus_h}, {"ball_h", ball_h}, {"monotone_h", monotone_h}};

  auto append = [&](std::vector<Check> v) {
    for (auto& x : v) r.checks.push_back(std::move(x));
  };
  // A resolution-dependent check that cannot even be set up on a coarse grid
  // is reported as unresolved rather than failed.
  auto guarded = [&](const std::string& name, const auto& fn, double h = 0.0) {
    try {
      fn();
    } catch (const Error& e) {
      Check x = make_check(name, false, 0.0, std::nullopt, 0.0, e.what());
      mark_unresolved(x, h, tol);
      r.checks.push_back(std::move(x));
    }
  };
  guarded("radial energy", [&] { append(check_radial_energy(annulus_h, tol)); }, annulus_h);
  // Convergence order: the radial-energy error must shrink under refinement
  // (h against 4h/3; twice h leaves the thin annulus without interior nodes).
  guarded("radial energy convergence", [&] {
    Check conv;
    conv.name = "radial energy error shrinks under refinement";
    if (annulus_h > tol.resolved_h) {
      conv.status = CheckStatus::Unresolved;
      conv.detail = "grid too coarse for a convergence-order check";
    } else {
      const double ref = 8.0 * kSigma4;
      auto coarse = make(DomainSpec::annulus(5, origin(5), 0.5, 1.0).cell_centered(), 4.0 * annulus_h / 3.0);
      auto fine = make(DomainSpec::annulus(5, origin(5), 0.5, 1.0).cell_centered(), annulus_h);
      const double e2 = rel_err(hessian_energy(radial_map(coarse, origin(5))), ref);
      const double e1 = rel_err(hessian_energy(radial_map(fine, origin(5))), ref);
      conv = make_check(conv.name, e1 < e2, e1, e2, 0.0, "coarse error " + std::to_string(e2));
    }
    r.checks.push_back(std::move(conv));
  });
  guarded("monotonicity", [&] {
    append(check_monotone_constancy(monotone_h, 0.7 + 3.0 * monotone_h, {0.3, 0.5, 0.7}, tol));
  }, monotone_h);
  guarded("caccioppoli", [&] {
    Check x = check_caccioppoli(ball_h);
    mark_unresolved(x, ball_h, tol);
    r.checks.push_back(std::move(x));
  }, ball_h);
  guarded("degree recovery", [&] { append(check_degree_recovery(ball_h, tol)); }, ball_h);
  guarded("wedge inequality", [&] {
    r.checks.push_back(check_wedge_inequality(get_or(c.params, "wedge_trials", 10000), c.seed));
  });
  guarded("D-field bound", [&] {
    r.checks.push_back(check_dfield_bound(get_or(c.params, "dfield_fields", 3), std::max(ball_h, 1.0 / 8), c.seed));
  });
  guarded("duality", [&] { r.checks.push_back(check_duality(get_or(c.params, "duality_sets", 6), c.seed, tol)); });
  guarded("extension", [&] { append(check_extension(get_or(c.params, "extension_inputs", 2), 1.0 / 8, c.seed, tol)); });
  guarded("gradient", [&] {
    append(check_gradient(get_or(c.params, "gradient_fields", 2), get_or(c.params, "gradient_directions", 4),
                          1.0 / 6, c.seed, tol));
  });
  guarded("persistence", [&] { r.checks.push_back(check_persistence(5, c.seed)); });
  finish(r, t0);
  return r;
}

ExperimentResult run_minimize(const RunConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult r;
  r.report = report_header(c, "minimize");
  auto d = make(c.domain, c.h);
  auto ini = build_initial(c, d);
  MinimizeOptions mo = c.minimize;
  if (mo.energy.cores.empty()) mo.energy.cores = ini.cores;
  const auto res = mo.lambda > 0.0 ? minimize_relaxed(ini.u, mo) : minimize_hessian(ini.u, mo);
  r.report["initial"] = ini.description;
  r.report["run"] = run_report_json(res.report);
  r.trace_csv = trace_csv(res.report);

  const auto audit = energy_trace_audit(res.report);
  auto a = make_check("trace audit", audit.pass, static_cast<double>(audit.issues.size()), 0.0, 0.0,
                      std::to_string(audit.refresh_jumps.size()) + " refresh records");
  a.data = Json{{"issues", audit.issues}, {"refresh_jumps", audit.refresh_jumps}};
  r.checks.push_back(std::move(a));
  if (!res.report.trace.empty() && mo.lambda == 0.0) {
    const double H0 = res.report.trace.front().hessian;
    const double H1 = res.report.trace.back().hessian;
    r.checks.push_back(make_check("final energy does not exceed the initial energy", H1 <= H0, H1, H0, 0.0));
  }
  // Density at each requested core center: a singularity persists when the
  // scaled energy stays above eps0^2 at every threshold radius.
  const auto& th = mo.detect.thresholds;
  Json dens = Json::array();
  for (const auto& core : mo.energy.cores) {
    double lowest = std::numeric_limits<double>::infinity();
    Json vals = Json::array();
    for (double rad : th.radii) {
      try {
        const double t = theta_density(res.u, core.center, rad, mo.energy);
        lowest = std::min(lowest, t);
        vals.push_back(Json{{"r", rad}, {"theta", t}});
      } catch (const Error& e) {
        vals.push_back(Json{{"r", rad}, {"skipped", e.what()}});
      }
    }
    dens.push_back(Json{{"center", core.center}, {"values", vals}});
    if (std::isfinite(lowest)) {
      r.checks.push_back(make_check("singularity persists at the core center", lowest >= th.eps0 * th.eps0,
                                    lowest, th.eps0 * th.eps0, 0.0, "smallest theta over threshold radii"));
    }
  }
  r.report["core_densities"] = dens;
  r.fields.emplace_back("initial", ini.u);
  r.fields.emplace_back("final", res.u);
  finish(r, t0);
  return r;
}

ExperimentResult run_topology(const RunConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult r;
  r.report = report_header(c, "topology");
  auto d = make(c.domain, c.h);
  auto ini = build_initial(c, d);
  const auto& u = ini.u;
  if (u.ncomp() != u.domain().dim()) {
    throw Error(ErrorCode::DimensionMismatch, "topology needs maps into S^{n-1}");
  }
  const auto s = detect_singularities(u, c.minimize.detect);
  r.report["initial"] = ini.description;
  r.report["singularities"] = to_json(s);
  r.report["boundary_degree"] = boundary_degree(u);
  if (s.total_degree() == 0) {
    const auto primal = minimal_connection(s, u.domain());
    const auto dual = relaxed_L_dual(s, u.domain());
    Json pairs = Json::array();
    for (const auto& p : primal.pairs) {
      pairs.push_back(Json{{"positive", p.positive}, {"negative", p.negative}, {"cost", p.cost}});
    }
    r.report["connection"] = Json{{"L", primal.value},         {"exact", primal.exact},
                                  {"gap", primal.gap},         {"anisotropy", primal.anisotropy},
                                  {"pairs", pairs},            {"dual", dual.value},
                                  {"dual_violation", dual.max_violation}};
    r.checks.push_back(make_check("minimal connection equals its dual",
                                  std::abs(primal.value - dual.value) <= c.tolerances.duality_abs,
                                  std::abs(primal.value - dual.value), 0.0, c.tolerances.duality_abs));
    if (get_or(c.params, "save_potential", false)) {
      VectorField xi(u.domain_ptr(), 1, dual.xi);
      r.fields.emplace_back("potential", std::move(xi));
    }
  } else {
    r.report["connection"] = nullptr;
    r.report["note"] = "unbalanced degrees: no minimal connection";
  }
  if (c.params.contains("expected_points")) {
    const auto want = get_or<std::size_t>(c.params, "expected_points", 0);
    r.checks.push_back(make_check("number of singularities", s.points.size() == want,
                                  static_cast<double>(s.points.size()), static_cast<double>(want), 0.0));
  }
  if (c.params.contains("expected_L") && s.total_degree() == 0) {
    const double want = get_or(c.params, "expected_L", 0.0);
    const double got = r.report["connection"]["L"].get<double>();
    const double tl = get_or(c.params, "L_tolerance", 2.0 * c.h);
    r.checks.push_back(make_check("minimal connection length", std::abs(got - want) <= tl, got, want, tl));
  }
  finish(r, t0);
  return r;
}

ExperimentResult run_monotonicity(const RunConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult r;
  r.report = report_header(c, "monotonicity");
  auto d = make(c.domain, c.h);
  auto ini = build_initial(c, d);
  EnergyOptions eo = c.minimize.energy;
  if (eo.cores.empty()) eo.cores = ini.cores;
  const int n = d->dim();
  const int centers = get_or(c.params, "centers", 10);
  const auto radii = get_or<std::vector<double>>(c.params, "radii", {0.2, 0.3, 0.4});
  if (radii.empty()) schema("params.radii must not be empty");
  for (double rad : radii) {
    // The boundary term differences sphere averages at r - h and r + h.
    if (!(rad >= 2.0 * c.h)) schema("params.radii entries must be at least 2h");
  }
  const double rmax = *std::max_element(radii.begin(), radii.end());
  const double tl = get_or(c.params, "tolerance", 4.0 * c.h);

  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Json rows = Json::array();
  int tested = 0, attempts = 0;
  double worst_drop = 0.0;
  while (tested < centers && attempts < 1000 * centers) {
    ++attempts;
    std::vector<double> x(n);
    for (double& v : x) v = g(rng);
    const double len = norm(x);
    const double radius = std::pow(uni(rng), 1.0 / n);
    for (double& v : x) v *= radius / len;
    // Keep the largest ball plus the stencil reach inside the domain.
    if (c.domain.signed_distance(x) > -(rmax + 4.0 * c.h)) continue;
    std::vector<double> vals;
    for (double rad : radii) vals.push_back(sigma_monotone(ini.u, x, rad, eo).value);
    double drop = 0.0;
    for (std::size_t k = 1; k < vals.size(); ++k) {
      drop = std::max(drop, (vals[k - 1] - vals[k]) / std::max(1.0, std::abs(vals[k - 1])));
    }
    worst_drop = std::max(worst_drop, drop);
    rows.push_back(Json{{"center", x}, {"radii", radii}, {"sigma", vals}, {"largest_relative_drop", drop}});
    ++tested;
  }
  r.report["initial"] = ini.description;
  r.report["centers"] = rows;
  auto chk = make_check("monotonicity quantity is non-decreasing in r", tested > 0 && worst_drop <= tl,
                        worst_drop, 0.0, tl,
                        std::to_string(tested) + " centers; largest relative decrease between radii");
  r.checks.push_back(std::move(chk));
  finish(r, t0);
  return r;
}

ExperimentResult run_dumbbell(const RunConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult r;
  r.report = report_header(c, "dumbbell");
  if (c.domain.dim != 5) schema("the dumbbell experiment needs n = 5");
  DumbbellOptions o;
  o.h = c.h;
  o.cap_radius = c.domain.shape == ShapeKind::Dumbbell ? c.domain.cap_radius : 1.0;
  o.neck_lengths = get_or(c.params, "neck_lengths", o.neck_lengths);
  std::vector<DumbbellMeasurement> ms;
  r.checks = check_dumbbell(o, c.tolerances, &ms);
  double H = 0.0;
  for (const auto& m : ms) H += m.energy_singular / static_cast<double>(ms.size());
  r.report["measurements"] = r.checks.front().data;
  r.report["H_singular_mean"] = H;
  // Neck half-length beyond which the continuous class cannot beat the singular map.
  r.report["threshold_neck_half_length"] = H / (32.0 * kSigma4);
  Json verdicts = Json::array();
  for (const auto& ch : r.checks) {
    if (ch.name.rfind("gap verdict", 0) == 0) verdicts.push_back(Json{{"check", ch.name}, {"verdict", ch.detail}});
  }
  r.report["verdicts"] = verdicts;
  finish(r, t0);
  return r;
}

ExperimentResult run_experiment(const RunConfig& c) {
  if (c.experiment == "validate") return run_validate(c);
  if (c.experiment == "minimize") return run_minimize(c);
  if (c.experiment == "topology") return run_topology(c);
  if (c.experiment == "monotonicity") return run_monotonicity(c);
  if (c.experiment == "dumbbell") return run_dumbbell(c);
  schema("unknown experiment '" + c.experiment + "'");
}

}  // namespace biharm
