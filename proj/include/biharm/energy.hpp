#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "biharm/fields.hpp"

namespace biharm {

/// A small ball around a point singularity that the quadrature cannot
/// resolve. Nodes inside are dropped from energy sums; the missing mass is
/// restored from the model density strength / r^4 on a ball of equal volume.
struct SingularCore {
  std::vector<double> center;
  double radius = 0.0;
  /// Known strength s of the density s / r^4 (16 for x/|x| in 5D). When
  /// absent it is extrapolated from the shell radius < r <= radius + 2h.
  std::optional<double> strength;
};

struct EnergyOptions {
  std::vector<SingularCore> cores;
};

/// Per-node densities. Derivatives use the closure stencils of the lattice
/// (central where possible, one-sided in the clamped band).
std::vector<double> laplacian_sq_density(const VectorField& u);
std::vector<double> gradient_sq_density(const VectorField& u);
/// Laplacian vectors at every node (ncomp per node); nodes without any
/// admissible stencil get zeros and are reported through `missing`.
std::vector<double> laplacian_values(const VectorField& u, std::size_t* missing = nullptr);

struct CoreCorrection {
  double excluded_weight = 0.0;
  double added = 0.0;
  double strength = 0.0;
};

struct QuadratureResult {
  double value = 0.0;              // total including the core correction
  double singular_correction = 0.0;
  std::vector<CoreCorrection> cores;
};

/// 1 for nodes inside any core ball (their quadrature weight is dropped).
std::vector<std::uint8_t> core_exclusion_mask(const LatticeDomain& d,
                                              const std::vector<SingularCore>& cores);

/// Integral of a density with singular cores removed and restored.
QuadratureResult integrate_with_cores(const LatticeDomain& d, std::span<const double> density,
                                      const EnergyOptions& opts);

double hessian_energy(const VectorField& u, const EnergyOptions& opts = {});
double grad4_energy(const VectorField& u, const EnergyOptions& opts = {});
QuadratureResult hessian_energy_detail(const VectorField& u, const EnergyOptions& opts = {});
QuadratureResult grad4_energy_detail(const VectorField& u, const EnergyOptions& opts = {});

struct ResidualOptions {
  /// Only nodes at least this deep inside the domain contribute.
  double min_depth = 0.0;
  /// Nodes inside these balls are skipped.
  std::vector<SingularCore> cores;
};

struct ResidualResult {
  /// R = bilap u + (|lap u|^2 + 2 div(grad u . lap u) - lap |grad u|^2) u;
  /// NaN where a composed stencil does not fit.
  std::vector<double> residual;
  double tangential_norm = 0.0;
  std::size_t nodes = 0;
};

/// Euler-Lagrange residual by composed central stencils.
ResidualResult el_residual(const SphereField& u, const ResidualOptions& opts = {});

/// Pi_a(xi) = (xi - a)/|xi - a| and its inverse on the unit sphere,
/// Pi_a^{-1}(xi) = a + t xi with t = -(a.xi) + sqrt((a.xi)^2 + 1 - |a|^2).
/// Throws InvalidCenter when |a| > 1/2.
void project_pi(std::span<const double> a, std::span<const double> xi, std::span<double> out);
void project_pi_inverse(std::span<const double> a, std::span<const double> xi,
                        std::span<double> out);

/// Averaging constant of the extension operator: sup over |v| >= 1 (resp.
/// |v| <= 1) of the integral of |v - a|^{-4} over a in the ball of radius 1/2.
double extension_constant(int k, bool outside_unit_sphere);

struct ExtensionOptions {
  int centers = 64;
  /// Use a = 0 only (the identity projection).
  bool force_origin = false;
  double skip_distance = 1e-3;
};

struct ExtensionResult {
  SphereField w;
  std::vector<double> a0;
  double energy_w = 0.0;      // integral of |lap w|^2
  double energy_input = 0.0;  // integral of |lap v|^2 + |grad v|^4
  double ratio = 0.0;         // energy_w / energy_input
  double mean_sampled_energy = 0.0;
  std::size_t sampled = 0;
  std::size_t skipped = 0;
  /// c(k) matched to the range of |v| (max of both cases when mixed).
  double averaging_constant = 0.0;
};

/// w = Pi_{a0}^{-1} o Pi_{a0} o v with a0 chosen among Halton points in the
/// ball of radius 1/2. Nodes where |v| = 1 keep v exactly.
ExtensionResult extend_to_sphere(const VectorField& v, const ExtensionOptions& opts = {});

struct ThresholdConfig {
  double eps0 = 0.8;
  std::vector<double> radii{0.125, 0.25, 0.5};
};

double theta_density(const VectorField& u, std::span<const double> x, double r,
                     const EnergyOptions& opts = {});

struct MonotoneQuantity {
  double value = 0.0;
  double bulk = 0.0;      // r^{4-n} int_{B_r} |lap u|^2
  double boundary = 0.0;  // r^{3-n} int_{dB_r} [4|grad u|^2 - 4|d_r u|^2 + r d_r |grad u|^2]
};

MonotoneQuantity sigma_monotone(const VectorField& u, std::span<const double> x, double r,
                                const EnergyOptions& opts = {});

/// int_{B_{R/2}} |lap u|^2 / (R^{-4} int_{B_R} |u - avg|^2 + |u - avg|^4).
/// Returns 0 when both sides are below 1e-14.
double caccioppoli_ratio(const VectorField& u, std::span<const double> x0, double R,
                         const EnergyOptions& opts = {});

struct EnergyReport {
  double hessian = 0.0;
  double grad4 = 0.0;
  std::optional<double> relaxed_L;
  std::optional<double> H_lambda;
  double el_residual_tangential = 0.0;
  double lambda = 0.0;
  double q_factor = 1.0;
  double singular_correction = 0.0;
};

EnergyReport energy_report(const SphereField& u, double lambda,
                           std::optional<double> relaxed_L = std::nullopt,
                           const EnergyOptions& opts = {});

}  // namespace biharm
