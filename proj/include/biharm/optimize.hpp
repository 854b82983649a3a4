#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "biharm/energy.hpp"
#include "biharm/fields.hpp"
#include "biharm/topology.hpp"

namespace biharm {

enum class DirectionRule { Steepest, LBFGS };

struct MinimizeOptions {
  double lambda = 0.0;  // relaxed-term weight, in [0, 1)
  int max_iters = 500;
  DirectionRule rule = DirectionRule::LBFGS;
  int lbfgs_memory = 8;
  /// Largest nodal displacement of the first trial step of a fresh search.
  double initial_step = 0.05;
  double backtrack = 0.5;
  double armijo = 1e-4;
  int max_backtracks = 40;
  /// Stop once the tangential gradient norm falls below this fraction of its
  /// initial value.
  double grad_tol = 1e-6;
  /// Stop when H decreased by less than this relative amount over the last
  /// `stall_window` accepted steps.
  double stall_tol = 1e-11;
  int stall_window = 20;
  /// Iterations between singularity / dual-potential refreshes.
  int refresh_period = 25;
  std::uint64_t seed = 0;
  EnergyOptions energy;
  DetectOptions detect;
  /// Cut-off radii (in h) of the localizer around each singularity used by the
  /// relaxed surrogate: 1 inside the first, 0 beyond the second.
  double localizer_inner_h = 2.0;
  double localizer_outer_h = 4.0;

  void validate() const;
};

struct IterationRecord {
  int iteration = 0;
  double hessian = 0.0;
  double grad4 = 0.0;
  double L = 0.0;          // minimal connection at the last refresh
  double H_lambda = 0.0;   // surrogate value (equals true H_lambda at a refresh)
  double step = 0.0;       // accepted step length (0 for the initial record)
  double grad_norm = 0.0;  // tangential gradient norm
  bool refresh = false;
  double true_H_lambda = 0.0;  // only meaningful on refresh records
  std::string event;
};

struct RunReport {
  std::vector<IterationRecord> trace;
  EnergyReport final_energy;
  SingularitySet final_singularities;
  double wall_seconds = 0.0;
  MinimizeOptions config;
  int iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
  std::string stop_reason;
};

struct MinimizeResult {
  SphereField u;
  RunReport report;
};

/// Exact gradient of the discrete quadrature sum of |lap u|^2 (singular core
/// nodes dropped) with respect to the nodal values; zero on clamped nodes.
std::vector<double> hessian_gradient(const SphereField& u, const EnergyOptions& opts = {});

/// d = -(G - (G.u)u) at every free node, zero on the boundary layers.
VectorField descent_direction(const SphereField& u, const EnergyOptions& opts = {});

MinimizeResult minimize_hessian(const SphereField& u0, const MinimizeOptions& opts = {});
MinimizeResult minimize_relaxed(const SphereField& u0, const MinimizeOptions& opts);

/// Frozen-potential relaxed term T(u) = -int D(u) . grad(chi xi), whose value
/// is sigma_{n-1} sum_i d_i xi(a_i) for point charges inside the localizer.
class RelaxedSurrogate {
 public:
  RelaxedSurrogate(const SphereField& u, const MinimizeOptions& opts);

  const SingularitySet& singularities() const { return sing_; }
  double connection() const { return L_; }
  double value(const SphereField& u) const;
  /// Adds scale * dT/du to grad.
  void add_gradient(const SphereField& u, double scale, std::vector<double>& grad) const;

 private:
  SingularitySet sing_;
  double L_ = 0.0;
  std::vector<std::size_t> support_;
  std::vector<double> weight_dir_;  // -w_i grad(chi xi)_i per support node (n each)
};

struct TraceAudit {
  bool pass = true;
  std::vector<std::string> issues;
  std::vector<int> refresh_jumps;  // iterations where a refresh changed H_lambda
};

/// Checks monotone H_lambda between refreshes and positive steps.
TraceAudit energy_trace_audit(const RunReport& report);

}  // namespace biharm
