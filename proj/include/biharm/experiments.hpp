#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "biharm/io.hpp"
#include "biharm/optimize.hpp"

namespace biharm {

/// Version string embedded in every report.
std::string_view code_version();

/// Single audit point for every numerical tolerance used by the oracle
/// checks; overridable from the "tolerances" block of a run config.
struct Tolerances {
  std::string table = "tolerances-v1";
  double radial_energy_rel = 0.03;
  double monotone_rel = 0.10;
  double monotone_spread = 0.05;
  double duality_abs = 1e-6;
  double degree_residual = 0.25;
  double extension_factor = 2.0;
  double gradient_rel = 1e-5;
  double uniqueness_ratio = 4.0;
  double uniqueness_energy_rel = 0.08;
  double neck_independence_rel = 0.02;
  double slice_rel = 0.05;
  double q_minimality_slack = 1e-9;
  /// Convergence-order checks need h at or below this spacing.
  double resolved_h = 0.125;
};

Json to_json(const Tolerances& t);
Tolerances tolerances_from_json(const Json& j, Tolerances base = {});

enum class CheckStatus { Pass, Fail, Unresolved };
std::string_view to_string(CheckStatus s);

struct Check {
  std::string name;
  CheckStatus status = CheckStatus::Pass;
  double measured = 0.0;
  std::optional<double> reference;
  double tolerance = 0.0;
  std::string detail;
  Json data = Json::object();
};

Json to_json(const Check& c);
bool any_failed(const std::vector<Check>& checks);

/// Experiment configuration, schema-validated before any computation.
struct RunConfig {
  std::string experiment = "validate";  // validate | minimize | topology | monotonicity | dumbbell
  DomainSpec domain = DomainSpec::ball(5, std::vector<double>(5, 0.0), 1.0).cell_centered();
  double h = 1.0 / 12;
  int k = 4;
  MinimizeOptions minimize;
  std::string output = "out";
  std::uint64_t seed = 1;
  Tolerances tolerances;
  /// Initial field description for minimize: {"kind": "radial" | "perturbed_radial" |
  /// "smooth_random" | "dumbbell_singular" | "dumbbell_continuous" | "file", ...}.
  Json initial = Json{{"kind", "radial"}};
  /// Experiment-specific parameters.
  Json params = Json::object();
  /// The document the config was parsed from, echoed into reports.
  Json source = Json::object();
};

/// Throws SchemaError on unknown keys, wrong types or invalid values.
RunConfig parse_config(const Json& j);
Json to_json(const RunConfig& c);

struct ExperimentResult {
  Json report;
  std::vector<Check> checks;
  /// Fields worth persisting (name -> field).
  std::vector<std::pair<std::string, VectorField>> fields;
  /// Iteration trace as CSV text, when the experiment ran an optimizer.
  std::string trace_csv;
  bool failed() const { return any_failed(checks); }
};

ExperimentResult run_validate(const RunConfig& c);
ExperimentResult run_minimize(const RunConfig& c);
ExperimentResult run_topology(const RunConfig& c);
ExperimentResult run_monotonicity(const RunConfig& c);
ExperimentResult run_dumbbell(const RunConfig& c);
ExperimentResult run_experiment(const RunConfig& c);

// --- oracle checks shared by the validate experiment and the acceptance suite ---

/// Hessian and quartic energies of x/|x| on the annulus 1/2 < |x| < 1 in R^5
/// against 8 sigma_4.
std::vector<Check> check_radial_energy(double h, const Tolerances& tol);
/// Monotonicity quantity of x/|x| at several radii against 24 sigma_4, and its
/// spread across radii. Every radius needs r + 3h <= domain_radius.
std::vector<Check> check_monotone_constancy(double h, double domain_radius,
                                            const std::vector<double>& radii,
                                            const Tolerances& tol);
/// |a ^ b ^ c ^ d| <= (|a|^2 + |b|^2 + |c|^2 + |d|^2)^2 / 16 on random 5-vectors.
Check check_wedge_inequality(int trials, std::uint64_t seed);
/// |D(u)| <= |grad u|^4 / 16 nodewise on random smooth unit fields in B^5.
Check check_dfield_bound(int fields, double h, std::uint64_t seed);
/// Primal minimal connection against the dual potential problem.
Check check_duality(int sets, std::uint64_t seed, const Tolerances& tol);
/// Flux degree of +-x/|x| at r = 1/2.
std::vector<Check> check_degree_recovery(double h, const Tolerances& tol);
/// Extension operator on non-unit inputs.
std::vector<Check> check_extension(int inputs, double h, std::uint64_t seed, const Tolerances& tol);
/// Descent direction against central differences, and monotone descent traces.
std::vector<Check> check_gradient(int fields, int directions, double h, std::uint64_t seed,
                                  const Tolerances& tol);
/// Caccioppoli ratio of x/|x| at two scales.
Check check_caccioppoli(double h);
/// Field file write/read/write byte identity.
Check check_persistence(int fields, std::uint64_t seed);

/// Perturbations of the radial map descend back to the discrete minimizer.
struct UniquenessOptions {
  double h = 1.0 / 12;
  int seeds = 20;
  double amplitude = 0.2;
  int reference_iters = 300;
  int iters = 60;
};
std::vector<Check> check_uniqueness(const UniquenessOptions& o, const Tolerances& tol);

/// Dumbbell gap experiment: neck-length independence of the singular map's energy, slice
/// inequality on the smoothed continuous competitor, and the gap verdict.
struct DumbbellOptions {
  double h = 0.1;
  double cap_radius = 1.0;
  std::vector<double> neck_lengths{2.0, 4.0};
};
struct DumbbellMeasurement {
  double neck_length = 0.0;
  double energy_singular = 0.0;
  double energy_continuous = 0.0;
  double continuous_bound = 0.0;  // 32 sigma_4 * neck length
  double min_slice = 0.0;         // smallest per-slice Jacobian integral / sigma_4
  std::size_t slices = 0;
};
std::vector<Check> check_dumbbell(const DumbbellOptions& o, const Tolerances& tol,
                                  std::vector<DumbbellMeasurement>* out = nullptr);

/// Per-slice integrals of |det(u, d_1 u, ..., d_{n-1} u)| over the cross
/// sections x_n = const of the dumbbell neck (|x_n| <= neck half length).
/// Section derivatives are sixth-order central differences where three
/// neighbors exist on both sides, the closure stencils elsewhere.
struct SliceIntegral {
  double height = 0.0;
  double value = 0.0;
};
std::vector<SliceIntegral> neck_slice_jacobians(const SphereField& u);

/// Relaxed minimizer on dumbbell data against seeded competitors sharing the clamp.
struct QMinimalityOptions {
  double h = 0.125;
  double neck_half_length = 2.0;
  double lambda = 0.3;
  int competitors = 10;
  int iters = 60;
  std::uint64_t seed = 1;
};
std::vector<Check> check_q_minimality(const QMinimalityOptions& o, const Tolerances& tol);

}  // namespace biharm
