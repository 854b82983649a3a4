#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "biharm/energy.hpp"
#include "biharm/fields.hpp"

namespace biharm {

/// D_i(u) = det(d_1 u, ..., d_{i-1} u, u, d_{i+1} u, ..., d_n u): the column
/// d_i u is replaced by u. With this sign pattern D(x/|x|) = x/|x|^n and
/// div D = sigma_{n-1} * (sum of degrees) as a distribution.
struct DField {
  DomainPtr domain;
  int n = 0;
  std::vector<double> values;  // n per node

  std::span<const double> at(std::size_t i) const {
    return {values.data() + i * n, static_cast<std::size_t>(n)};
  }
};

/// D-field at one node from the closure derivative stencils.
void d_field_at(const SphereField& u, std::size_t node, std::span<double> out);
DField d_field(const SphereField& u);

struct FluxDegree {
  int degree = 0;
  double raw = 0.0;       // flux / sigma_{n-1} before rounding
  double residual = 0.0;  // |raw - degree|
};

/// Degree of u on the sphere |y - x| = r as the normalized flux of D.
/// Throws AmbiguousDegree when the residual exceeds 0.25.
FluxDegree flux_degree(const SphereField& u, std::span<const double> x, double r);
/// Same, without throwing on ambiguity.
FluxDegree flux_degree_raw(const SphereField& u, std::span<const double> x, double r);

/// Exact topological degree of the piecewise-linear interpolation of the
/// corner values on the boundary of the lattice cell with lowest corner
/// `node`. nullopt when the cell is incomplete or the map is degenerate.
std::optional<int> cell_degree(const SphereField& u, std::size_t node);

/// Sum of cell degrees over every complete cell: the degree of the boundary
/// trace of the piecewise-linear interpolant.
int boundary_degree(const SphereField& u);

struct Singularity {
  std::vector<double> position;
  int degree = 0;
  std::size_t node = 0;  // nearest stored node
  int cell_degree = 0;   // sum of piecewise-linear cell degrees in the cluster
  std::optional<int> flux_degree;
  double flux_radius = 0.0;
  double flux_residual = 0.0;
  double theta = 0.0;  // r^{4-n} int_{B_r} |lap u|^2 at r = theta_radius
  double theta_radius = 0.0;
  std::size_t cells = 0;
};

struct SingularitySet {
  std::vector<Singularity> points;
  std::size_t neutral_clusters = 0;  // merged clusters with zero net degree

  int total_degree() const;
};

struct DetectOptions {
  ThresholdConfig thresholds;
  /// Cross-check each cluster with flux_degree on the first of these radii (in h)
  /// whose sphere fits inside the domain and encloses no other cluster.
  std::vector<double> flux_radii_h{4.0, 3.0, 2.0};
  bool cross_report_theta = true;
};

SingularitySet detect_singularities(const SphereField& u, const DetectOptions& opts = {});

/// Minimal-cost perfect matching on a square cost matrix (row i -> column
/// assignment[i]); exact Hungarian method.
std::vector<int> hungarian(const std::vector<double>& cost, int size);

struct AuctionResult {
  std::vector<int> assignment;
  double cost = 0.0;
  double gap = 0.0;  // upper bound on cost - optimum
};
/// Forward auction with epsilon scaling; the final epsilon bounds the gap.
AuctionResult auction(const std::vector<double>& cost, int size, double final_epsilon);

/// Graph used for both the primal matching and the dual potentials.
struct TransportGraph {
  std::vector<std::uint8_t> mask;  // empty = whole lattice
  bool tube = false;
};

/// For convex domains: nodes within 4h of a segment joining a positive to a
/// negative point; otherwise the whole lattice.
TransportGraph transport_graph(const LatticeDomain& d, const SingularitySet& s);

struct Pair {
  std::size_t positive;  // index into the expanded positive list
  std::size_t negative;
  double cost;
};

struct Connection {
  double value = 0.0;
  std::vector<Pair> pairs;
  bool exact = true;
  double gap = 0.0;
  double anisotropy = 1.0;
  std::vector<std::size_t> positive_nodes;  // one entry per unit of degree
  std::vector<std::size_t> negative_nodes;
};

/// Minimal connection: min-cost pairing of positive and negative points by
/// lattice-graph geodesic distance. Throws UnbalancedDegrees.
Connection minimal_connection(const SingularitySet& s, const LatticeDomain& d);
Connection minimal_connection(const SingularitySet& s, const LatticeDomain& d,
                              const TransportGraph& g);

struct DualResult {
  double value = 0.0;
  std::vector<double> xi;  // per node; NaN outside the graph
  double max_violation = 0.0;  // max over edges of |xi(a) - xi(b)| - length
  std::size_t augmentations = 0;
};

/// sup sum_i d_i xi(a_i) over potentials with |xi(a) - xi(b)| <= edge length,
/// solved as a min-cost flow with node potentials.
DualResult relaxed_L_dual(const SingularitySet& s, const LatticeDomain& d);
DualResult relaxed_L_dual(const SingularitySet& s, const LatticeDomain& d,
                          const TransportGraph& g);

/// Singularities of u together with those of u0 carrying negated degrees;
/// coinciding opposite charges cancel.
SingularitySet merge_relative(const SingularitySet& u, const SingularitySet& u0);

struct RelativeL {
  double value = 0.0;
  SingularitySet merged;
};

RelativeL relative_L(const SphereField& u, const SphereField& u0, const DetectOptions& opts = {});

}  // namespace biharm
