#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biharm/numeric.hpp"

namespace biharm {

enum class ShapeKind { Ball, Annulus, Box, Dumbbell };

std::string_view to_string(ShapeKind kind);
ShapeKind shape_from_string(std::string_view name);

/// Geometric description of a domain. The dumbbell is the union of an upper
/// half-ball centered at (0', L), the cylinder B^4 x [-L, L] and a lower
/// half-ball centered at (0', -L); it lives in R^5 with the neck along x_5.
struct DomainSpec {
  ShapeKind shape = ShapeKind::Ball;
  int dim = 2;
  std::vector<double> center;  // Ball, Annulus
  double radius = 1.0;         // Ball
  double r_inner = 0.5;        // Annulus
  double r_outer = 1.0;        // Annulus
  std::vector<double> lo, hi;  // Box
  double cap_radius = 1.0;     // Dumbbell
  double neck_half_length = 1.0;
  // Lattice nodes sit at h * (i + grid_offset[a]); empty means all zero.
  std::vector<double> grid_offset;

  static DomainSpec ball(int n, std::vector<double> center, double radius);
  static DomainSpec annulus(int n, std::vector<double> center, double r_inner, double r_outer);
  static DomainSpec box(std::vector<double> lo, std::vector<double> hi);
  static DomainSpec dumbbell(double cap_radius, double neck_half_length, int n = 5);

  DomainSpec with_offset(std::vector<double> offset) const;
  DomainSpec cell_centered() const { return with_offset(std::vector<double>(dim, 0.5)); }

  /// Throws InvalidArgument / DimensionMismatch on malformed parameters.
  void validate() const;

  /// Exact signed distance to the boundary (negative inside).
  double signed_distance(std::span<const double> x) const;
  void bounding_box(std::span<double> lo_out, std::span<double> hi_out) const;
  /// True when every straight segment between two points of the domain stays inside.
  bool convex() const { return shape != ShapeKind::Annulus; }
  double offset(int axis) const { return grid_offset.empty() ? 0.0 : grid_offset[axis]; }
};

enum class NodeClass : std::uint8_t { Interior, BoundaryLayer1, BoundaryLayer2, Exterior };

using GridIndex = std::array<int, kMaxDim>;

struct StencilTap {
  std::int32_t node;
  double coef;
};

/// Fixed-capacity tap list for one node's finite-difference stencil.
class Stencil {
 public:
  static constexpr int kCapacity = 48;

  void clear() { size_ = 0; }
  void add(std::int32_t node, double coef);
  int size() const { return size_; }
  const StencilTap& operator[](int i) const { return taps_[i]; }
  const StencilTap* begin() const { return taps_.data(); }
  const StencilTap* end() const { return taps_.data() + size_; }

 private:
  std::array<StencilTap, kCapacity> taps_{};
  int size_ = 0;
};

/// Uniform n-dimensional lattice restricted to a domain. Only non-exterior
/// nodes are stored, in lexicographic grid order (last axis fastest).
class LatticeDomain {
 public:
  static LatticeDomain build(const DomainSpec& spec, double h);

  const DomainSpec& spec() const { return spec_; }
  int dim() const { return n_; }
  double spacing() const { return h_; }
  std::span<const int> extents() const { return {extents_.data(), static_cast<std::size_t>(n_)}; }
  std::size_t grid_size() const;
  std::size_t size() const { return class_.size(); }
  std::size_t count(NodeClass c) const;

  NodeClass node_class(std::size_t i) const { return static_cast<NodeClass>(class_[i]); }
  bool clamped(std::size_t i) const { return node_class(i) != NodeClass::Interior; }
  double weight(std::size_t i) const { return weight_[i]; }
  std::span<const double> weights() const { return weight_; }
  double total_volume() const;

  int grid_index(std::size_t i, int axis) const { return gidx_[i * n_ + axis]; }
  GridIndex grid_index(std::size_t i) const;
  double coord(std::size_t i, int axis) const;
  void position(std::size_t i, std::span<double> out) const;
  std::vector<double> position(std::size_t i) const;
  double grid_coord(int grid_i, int axis) const;
  /// Distance from node i to the domain boundary (non-negative inside).
  double depth(std::size_t i) const;

  /// Stored index of a grid node, or nullopt when it is exterior / off-grid.
  std::optional<std::size_t> find(const GridIndex& g) const;
  /// Classification of any grid index (Exterior when not stored).
  NodeClass classify(const GridIndex& g) const;
  /// Axis neighbor (dir = +1 / -1) of stored node i, -1 when absent.
  std::int32_t neighbor(std::size_t i, int axis, int dir) const {
    return nbr_[(i * n_ + axis) * 2 + (dir > 0 ? 1 : 0)];
  }
  /// Stored node closest to a point, among nodes whose grid cell contains it.
  std::optional<std::size_t> nearest_node(std::span<const double> x) const;
  /// Grid index of the lattice node with coordinates <= x on every axis.
  GridIndex cell_of(std::span<const double> x) const;

  /// First-derivative stencil along `axis`. Central where both neighbors
  /// exist, second-order one-sided otherwise; false when no stencil fits.
  bool derivative_stencil(std::size_t i, int axis, Stencil& out) const;
  /// Laplacian stencil with the same closure policy.
  bool laplacian_stencil(std::size_t i, Stencil& out) const;
  /// True when the central 3-point stencil fits on every axis.
  bool has_central_stencil(std::size_t i) const;

  /// Visits every stored node with |x - center| <= radius.
  void for_each_in_ball(std::span<const double> center, double radius,
                        const std::function<void(std::size_t, double)>& fn) const;

 private:
  struct Run {
    std::int32_t start;
    std::int32_t length;
    std::int64_t base;
  };

  std::size_t line_of(const GridIndex& g) const;
  void build_neighbors();
  void fold_exterior_mass();

  DomainSpec spec_;
  int n_ = 0;
  double h_ = 0.0;
  std::array<int, kMaxDim> extents_{};
  std::array<int, kMaxDim> lo_index_{};  // integer lattice index of grid position 0
  std::vector<std::int16_t> gidx_;
  std::vector<std::uint8_t> class_;
  std::vector<double> weight_;
  std::vector<std::uint32_t> line_start_;
  std::vector<Run> runs_;
  std::vector<std::int32_t> nbr_;
};

/// Share of a cell of side h, centered at signed distance `sd`, counted as
/// inside the zero sub-level set. A linear ramp of width h: it has the same
/// mean and variance as the exact cube/half-space overlap for any normal, so
/// curved-boundary quadrature stays second order.
double cell_fraction(double sd, double h);

// Finite-difference evaluation on Interior nodes with strict central stencils.
// `values` stores `ncomp` components per node.
std::vector<double> gradient_fd(const LatticeDomain& d, std::span<const double> values, int ncomp,
                                std::size_t node);
std::vector<double> laplacian_fd(const LatticeDomain& d, std::span<const double> values,
                                 int ncomp, std::size_t node);

/// Sum of f * cell_volume over all stored nodes.
double integrate(const LatticeDomain& d, std::span<const double> f);
/// Integral over B_r(center) with partial weights on the ball's rim.
double integrate_ball(const LatticeDomain& d, std::span<const double> center, double r,
                      const std::function<double(std::size_t)>& f);
double integrate_ball(const LatticeDomain& d, std::span<const double> f,
                      std::span<const double> center, double r);

struct ShellIntegrals {
  double value;             // integral of f over the sphere of radius r
  double radial_derivative;  // integral over the sphere of d f / d r
};

/// Surface integral over the sphere |y - center| = r, approximated by the
/// volume of the shell r - h/2 <= |y - center| <= r + h/2 divided by h.
double shell_integrate(const LatticeDomain& d, std::span<const double> center, double r,
                       const std::function<double(std::size_t)>& f);
double shell_integrate(const LatticeDomain& d, std::span<const double> f,
                       std::span<const double> center, double r);
/// Shell value plus the surface integral of the radial derivative of f,
/// obtained by centered differencing of sphere averages at r +- h.
ShellIntegrals shell_integrate_with_derivative(const LatticeDomain& d,
                                               std::span<const double> center, double r,
                                               const std::function<double(std::size_t)>& f);

/// Throws RegionEscapesDomain unless the closed ball fits inside the domain.
void require_ball_inside(const LatticeDomain& d, std::span<const double> center, double r);

/// Shortest paths on the graph of stored nodes joined to all 3^n - 1 lattice
/// neighbors, with Euclidean edge lengths. An optional mask restricts the graph.
class GeodesicSolver {
 public:
  explicit GeodesicSolver(const LatticeDomain& d, std::vector<std::uint8_t> mask = {});

  struct Source {
    std::size_t node;
    double value;
  };
  /// Multi-source distances: min over sources of value + path length.
  /// Unreachable nodes get +infinity. Stops early once `target` is settled.
  std::vector<double> distances(std::span<const Source> sources,
                                std::optional<std::size_t> target = std::nullopt) const;
  bool in_graph(std::size_t i) const { return mask_.empty() || mask_[i] != 0; }
  const LatticeDomain& domain() const { return d_; }
  /// Edges touching node i (both endpoints inside the graph).
  void for_each_edge(std::size_t i, const std::function<void(std::size_t, double)>& fn) const;

 private:
  const LatticeDomain& d_;
  std::vector<std::uint8_t> mask_;
  std::vector<std::array<int, kMaxDim>> offsets_;
  std::vector<double> lengths_;
};

/// Worst ratio of lattice-graph distance to Euclidean distance for the
/// 3^n - 1 neighbor stencil in dimension n.
double graph_anisotropy(int n);

struct GeodesicResult {
  double distance;
  double anisotropy;
};

GeodesicResult geodesic_distance(const LatticeDomain& d, std::size_t a, std::size_t b);
/// Distance from `a` to the nearest BoundaryLayer1 node.
GeodesicResult geodesic_distance_to_boundary(const LatticeDomain& d, std::size_t a);

}  // namespace biharm
