#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "biharm/lattice.hpp"

namespace biharm {

using DomainPtr = std::shared_ptr<const LatticeDomain>;

/// Per-node vectors of `ncomp` components on a lattice domain.
class VectorField {
 public:
  VectorField() = default;
  VectorField(DomainPtr domain, int ncomp);
  VectorField(DomainPtr domain, int ncomp, std::vector<double> values);

  const LatticeDomain& domain() const { return *domain_; }
  const DomainPtr& domain_ptr() const { return domain_; }
  int ncomp() const { return ncomp_; }
  std::size_t size() const { return domain_->size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> at(std::size_t i) { return {values_.data() + i * ncomp_, static_cast<std::size_t>(ncomp_)}; }
  std::span<const double> at(std::size_t i) const {
    return {values_.data() + i * ncomp_, static_cast<std::size_t>(ncomp_)};
  }

 private:
  DomainPtr domain_;
  int ncomp_ = 0;
  std::vector<double> values_;
};

/// Unit vectors in R^{k+1} at every stored node. The two boundary layers
/// carry the clamped data.
class SphereField : public VectorField {
 public:
  SphereField() = default;
  int k() const { return ncomp() - 1; }

  /// Wraps values already known to be unit; checks |v| = 1 within `tol`.
  static SphereField adopt(VectorField v, double tol = 1e-12);

 private:
  explicit SphereField(VectorField v) : VectorField(std::move(v)) {}
  friend SphereField renormalize(const VectorField& v);
};

/// v / |v| nodewise. Throws NearZeroVector when |v| < 1e-8 somewhere.
SphereField renormalize(const VectorField& v);

SphereField constant_field(DomainPtr d, std::span<const double> value);

/// sign * (x - center) / |x - center|, a map into S^{n-1}.
/// Throws CenterOnNode when the center coincides with a stored node.
SphereField radial_map(DomainPtr d, std::span<const double> center, double sign = 1.0);

/// Degree-one cap map on the upper unit hemisphere of R^n, written as a
/// polar bubble: omega at polar angle beta maps to
/// (sin f(beta) * omega'/|omega'|, cos f(beta)) with f = pi (1 - q(beta / beta1)),
/// q the odd septic smoothstep. It equals (0', 1) for beta >= beta1, so the
/// trace and its x_n-derivative are flat at the equator.
struct CapBubble {
  double beta1 = 1.0471975511965976;  // pi / 3
  // +1 or -1: reflects the first target component to fix the orientation.
  double orientation = -1.0;

  void eval(std::span<const double> omega, std::span<double> out) const;
  /// Profile on the interior of the cap used by the continuous competitor:
  /// evaluates the bubble at "polar parameter" theta in [0, 1] along the
  /// horizontal direction of y'.
  void eval_profile(double theta, std::span<const double> y_prime, std::span<double> out) const;
  /// The equivariant point at polar angle f (measured from the last axis)
  /// in the horizontal direction of y'.
  void eval_angle(double f, std::span<const double> y_prime, std::span<double> out) const;
};

/// The septic smoothstep q(t) = (35t - 35t^3 + 21t^5 - 5t^7)/16, clamped to 1 for t >= 1.
double septic_step(double t);

struct DumbbellData {
  /// Radial pullbacks of the cap bubble on both caps, (0', 1) on the neck.
  SphereField singular;
  /// A continuous competitor with the same clamp: each neck slice is a
  /// degree-one bubble of B^4, interpolated through the caps.
  SphereField continuous;
  /// Same caps as `continuous`; inside |x_n| <= L - 2h each neck slice is a
  /// degree-one bubble whose profile fills the whole neck section (flat at
  /// both ends), so its slice Jacobians are resolved on coarse lattices. The
  /// two profiles are blended over the last 2h before the caps.
  SphereField smoothed;
  CapBubble bubble;
  std::vector<double> top_center;
  std::vector<double> bottom_center;
};

/// Builds the singular and continuous fields on a Dumbbell lattice.
DumbbellData dumbbell_boundary_data(DomainPtr d, const CapBubble& bubble = {});

struct PerturbOptions {
  int bumps = 4;
  double bump_radius = 0.3;
  /// Keep bump supports away from these points by at least `avoid_radius`.
  std::vector<std::vector<double>> avoid;
  double avoid_radius = 0.0;
};

/// Adds amplitude * T, with T a smooth compactly supported tangent field of
/// unit maximum norm built from seeded bumps, then renormalizes. Bump
/// supports stay inside the Interior set.
SphereField perturb_tangent(const SphereField& u, double amplitude, std::uint64_t seed,
                            const PerturbOptions& opts = {});

/// Smooth unit field normalize(bias * e_0 + sum of seeded low-frequency
/// modes); |pre-normalized| >= bias - 1 > 0, so it has no singularities.
SphereField smooth_random_field(DomainPtr d, int k, std::uint64_t seed, double bias = 2.0,
                                double frequency = 2.0);

/// normalize(F) with F(x) = (s * prod_j (x_1 - c_j), x_2 - y_2, ..., x_n - y_n).
/// Zeros sit at (c_j, y) with alternating degrees; the last c_j carries +1.
SphereField dipole_chain_field(DomainPtr d, std::span<const double> c,
                               std::span<const double> transverse, double scale = 1.0);

}  // namespace biharm
