#include "biharm/topology.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <string>
#include <unordered_map>

#include "biharm/errors.hpp"

namespace biharm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_equidimensional(const SphereField& u) {
  if (u.ncomp() != u.domain().dim()) {
    throw Error(ErrorCode::DimensionMismatch,
                "degree needs maps R^n -> S^{n-1}; got " + std::to_string(u.ncomp()) +
                    " components in dimension " + std::to_string(u.domain().dim()));
  }
}

// Solve A x = b (column-major n x n) by partial pivoting; false if singular.
bool solve(std::array<double, 49> a, std::array<double, 7> b, int n, std::array<double, 7>& x) {
  auto at = [&](int r, int c) -> double& { return a[c * n + r]; };
  for (int c = 0; c < n; ++c) {
    int piv = c;
    for (int r = c + 1; r < n; ++r) {
      if (std::abs(at(r, c)) > std::abs(at(piv, c))) piv = r;
    }
    if (at(piv, c) == 0.0) return false;
    if (piv != c) {
      for (int k = 0; k < n; ++k) std::swap(at(c, k), at(piv, k));
      std::swap(b[c], b[piv]);
    }
    for (int r = c + 1; r < n; ++r) {
      const double f = at(r, c) / at(c, c);
      if (f == 0.0) continue;
      for (int k = c; k < n; ++k) at(r, k) -= f * at(c, k);
      b[r] -= f * b[c];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int k = r + 1; k < n; ++k) s -= at(r, k) * x[k];
    x[r] = s / at(r, r);
  }
  return true;
}

int permutation_sign(std::span<const int> p) {
  int sign = 1;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = i + 1; j < p.size(); ++j) {
      if (p[i] > p[j]) sign = -sign;
    }
  }
  return sign;
}

// Kuhn simplices of the boundary of the unit n-cube: vertex bitmasks plus the
// sign of the simplex orientation relative to the outward normal.
struct BoundarySimplex {
  std::array<int, kMaxDim> corners{};
  int orientation = 1;
};

const std::vector<BoundarySimplex>& cube_boundary(int n) {
  static std::array<std::vector<BoundarySimplex>, kMaxDim + 1> cache;
  auto& out = cache[n];
  if (!out.empty()) return out;
  for (int axis = 0; axis < n; ++axis) {
    std::vector<int> rest;
    for (int a = 0; a < n; ++a) {
      if (a != axis) rest.push_back(a);
    }
    for (int side = 0; side < 2; ++side) {
      std::vector<int> perm = rest;
      do {
        BoundarySimplex s;
        int mask = side << axis;
        s.corners[0] = mask;
        for (int k = 0; k < n - 1; ++k) {
          mask |= 1 << perm[k];
          s.corners[k + 1] = mask;
        }
        // det[nu, e_perm1, ..., e_perm(n-1)] with nu = +-e_axis.
        std::vector<int> order{axis};
        order.insert(order.end(), perm.begin(), perm.end());
        s.orientation = (side == 1 ? 1 : -1) * permutation_sign(order);
        out.push_back(s);
      } while (std::next_permutation(perm.begin(), perm.end()));
    }
  }
  return out;
}

// Fixed generic target directions for counting preimages.
std::array<double, 7> probe(int n, int attempt) {
  static constexpr std::array<double, 8> primes{2, 3, 5, 7, 11, 13, 17, 19};
  std::array<double, 7> p{};
  double s = 0.0;
  for (int a = 0; a < n; ++a) {
    p[a] = std::sin(std::sqrt(primes[a]) * (attempt + 1) * 1.618033988749895 + 0.5 * a);
    s += p[a] * p[a];
  }
  s = std::sqrt(s);
  for (int a = 0; a < n; ++a) p[a] /= s;
  return p;
}

bool gather_corners(const LatticeDomain& d, std::size_t node, std::vector<std::int32_t>& corners) {
  const int n = d.dim();
  const int count = 1 << n;
  corners.assign(count, -1);
  corners[0] = static_cast<std::int32_t>(node);
  for (int m = 1; m < count; ++m) {
    int low = 0;
    while (((m >> low) & 1) == 0) ++low;
    const std::int32_t from = corners[m & ~(1 << low)];
    const std::int32_t to = d.neighbor(static_cast<std::size_t>(from), low, +1);
    if (to < 0) return false;
    corners[m] = to;
  }
  return true;
}

// Degree of the PL map on the cell boundary with corner values u + shift * g
// for a fixed generic g, or nullopt if degenerate. A global shift keeps
// neighboring cells consistent, so degrees stay additive.
std::optional<int> pl_degree_shifted(const SphereField& u, const std::vector<std::int32_t>& corners,
                                     double shift) {
  const int n = u.domain().dim();
  const int count = 1 << n;
  const auto g = probe(n, 11);
  std::array<double, kMaxDim * 64> vals{};
  for (int m = 0; m < count; ++m) {
    auto v = u.at(static_cast<std::size_t>(corners[m]));
    for (int a = 0; a < n; ++a) vals[m * n + a] = v[a] + shift * g[a];
  }
  // All corner values in an open hemisphere: the image misses a point.
  std::array<double, kMaxDim> mean{};
  for (int m = 0; m < count; ++m) {
    for (int a = 0; a < n; ++a) mean[a] += vals[m * n + a];
  }
  bool hemisphere = true;
  for (int m = 0; m < count && hemisphere; ++m) {
    double s = 0.0;
    for (int a = 0; a < n; ++a) s += vals[m * n + a] * mean[a];
    hemisphere = s > 1e-12;
  }
  if (hemisphere) return 0;

  const auto& simplices = cube_boundary(n);
  for (int attempt = 0; attempt < 8; ++attempt) {
    const auto p = probe(n, attempt);
    int degree = 0;
    bool degenerate = false;
    for (const BoundarySimplex& s : simplices) {
      std::array<double, 49> mat{};
      double scale = 1.0;
      for (int k = 0; k < n; ++k) {
        double len = 0.0;
        for (int a = 0; a < n; ++a) {
          mat[k * n + a] = vals[s.corners[k] * n + a];
          len += mat[k * n + a] * mat[k * n + a];
        }
        scale *= std::sqrt(len);
      }
      const double det = determinant(std::span<const double>(mat.data(), n * n), n);
      // A (nearly) singular simplex image means the zero set touches this facet.
      if (!(std::abs(det) > 1e-10 * scale)) {
        degenerate = true;
        break;
      }
      std::array<double, 7> lambda{};
      if (!solve(mat, p, n, lambda)) {
        degenerate = true;
        break;
      }
      double lmin = kInf, lmax = 0.0;
      for (int k = 0; k < n; ++k) {
        lmin = std::min(lmin, lambda[k]);
        lmax = std::max(lmax, std::abs(lambda[k]));
      }
      if (std::abs(lmin) <= 1e-10 * lmax) {
        degenerate = true;
        break;
      }
      if (lmin < 0.0) continue;
      degree += s.orientation * (det > 0 ? 1 : -1);
    }
    if (!degenerate) return degree;
  }
  return std::nullopt;
}

std::optional<int> pl_degree(const SphereField& u, const std::vector<std::int32_t>& corners) {
  for (double shift : {0.0, 1e-7, 1e-5}) {
    if (auto deg = pl_degree_shifted(u, corners, shift)) return deg;
  }
  return std::nullopt;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

struct Expanded {
  std::vector<std::size_t> positive;
  std::vector<std::size_t> negative;
};

Expanded expand(const SingularitySet& s) {
  Expanded e;
  for (const Singularity& p : s.points) {
    for (int k = 0; k < std::abs(p.degree); ++k) {
      (p.degree > 0 ? e.positive : e.negative).push_back(p.node);
    }
  }
  if (e.positive.size() != e.negative.size()) {
    throw Error(ErrorCode::UnbalancedDegrees,
                std::to_string(e.positive.size()) + " positive vs " +
                    std::to_string(e.negative.size()) + " negative units of degree");
  }
  return e;
}

double point_segment_distance(std::span<const double> x, std::span<const double> a,
                              std::span<const double> b) {
  double ab2 = 0.0, t = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    ab2 += (b[i] - a[i]) * (b[i] - a[i]);
    t += (x[i] - a[i]) * (b[i] - a[i]);
  }
  t = ab2 > 0.0 ? std::clamp(t / ab2, 0.0, 1.0) : 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double c = a[i] + t * (b[i] - a[i]) - x[i];
    s += c * c;
  }
  return std::sqrt(s);
}

}  // namespace

void d_field_at(const SphereField& u, std::size_t node, std::span<double> out) {
  const LatticeDomain& d = u.domain();
  const int n = d.dim();
  require_equidimensional(u);
  std::array<double, 49> cols{};
  Stencil st;
  for (int a = 0; a < n; ++a) {
    st.clear();
    if (!d.derivative_stencil(node, a, st)) {
      throw Error(ErrorCode::StencilOutOfDomain, "no derivative stencil at node " +
                                                      std::to_string(node));
    }
    for (const StencilTap& t : st) {
      auto v = u.at(static_cast<std::size_t>(t.node));
      for (int c = 0; c < n; ++c) cols[a * n + c] += t.coef * v[c];
    }
  }
  const auto v = u.at(node);
  for (int i = 0; i < n; ++i) {
    std::array<double, 49> m = cols;
    for (int c = 0; c < n; ++c) m[i * n + c] = v[c];
    out[i] = determinant(std::span<const double>(m.data(), n * n), n);
  }
}

DField d_field(const SphereField& u) {
  require_equidimensional(u);
  DField f;
  f.domain = u.domain_ptr();
  f.n = u.domain().dim();
  f.values.assign(u.size() * f.n, 0.0);
  for (std::size_t i = 0; i < u.size(); ++i) {
    d_field_at(u, i, std::span<double>(f.values.data() + i * f.n, f.n));
  }
  return f;
}

FluxDegree flux_degree_raw(const SphereField& u, std::span<const double> x, double r) {
  require_equidimensional(u);
  const LatticeDomain& d = u.domain();
  const int n = d.dim();
  std::array<double, kMaxDim> dv{}, y{};
  const double flux = shell_integrate(d, x, r, [&](std::size_t i) {
    d_field_at(u, i, std::span<double>(dv.data(), n));
    d.position(i, std::span<double>(y.data(), n));
    double s = 0.0, len = 0.0;
    for (int a = 0; a < n; ++a) {
      s += dv[a] * (y[a] - x[a]);
      len += (y[a] - x[a]) * (y[a] - x[a]);
    }
    return len > 0.0 ? s / std::sqrt(len) : 0.0;
  });
  FluxDegree out;
  out.raw = flux / sphere_area(n - 1);
  out.degree = static_cast<int>(std::lround(out.raw));
  out.residual = std::abs(out.raw - out.degree);
  return out;
}

FluxDegree flux_degree(const SphereField& u, std::span<const double> x, double r) {
  FluxDegree f = flux_degree_raw(u, x, r);
  if (f.residual > 0.25) {
    throw Error(ErrorCode::AmbiguousDegree,
                "normalized flux " + std::to_string(f.raw) + " is not near an integer");
  }
  return f;
}

std::optional<int> cell_degree(const SphereField& u, std::size_t node) {
  require_equidimensional(u);
  std::vector<std::int32_t> corners;
  if (!gather_corners(u.domain(), node, corners)) return std::nullopt;
  return pl_degree(u, corners);
}

int boundary_degree(const SphereField& u) {
  require_equidimensional(u);
  std::vector<std::int32_t> corners;
  int total = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!gather_corners(u.domain(), i, corners)) continue;
    if (auto deg = pl_degree(u, corners)) total += *deg;
  }
  return total;
}

int SingularitySet::total_degree() const {
  int s = 0;
  for (const Singularity& p : points) s += p.degree;
  return s;
}

SingularitySet detect_singularities(const SphereField& u, const DetectOptions& opts) {
  require_equidimensional(u);
  const LatticeDomain& d = u.domain();
  const int n = d.dim();
  const double h = d.spacing();

  struct Flagged {
    std::size_t node;
    int degree;
  };
  std::vector<Flagged> flagged;
  std::unordered_map<std::size_t, std::size_t> index_of;
  std::vector<std::int32_t> corners;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!gather_corners(d, i, corners)) continue;
    const auto deg = pl_degree(u, corners);
    if (!deg || *deg == 0) continue;
    index_of[i] = flagged.size();
    flagged.push_back({i, *deg});
  }

  // Merge cells whose lowest corners are lattice neighbors (shared vertex).
  UnionFind uf(flagged.size());
  int offsets = 1;
  for (int a = 0; a < n; ++a) offsets *= 3;
  for (std::size_t f = 0; f < flagged.size(); ++f) {
    const GridIndex g = d.grid_index(flagged[f].node);
    for (int code = 0; code < offsets; ++code) {
      GridIndex q = g;
      int c = code;
      for (int a = 0; a < n; ++a) {
        q[a] += c % 3 - 1;
        c /= 3;
      }
      auto j = d.find(q);
      if (!j) continue;
      auto it = index_of.find(*j);
      if (it != index_of.end()) uf.unite(f, it->second);
    }
  }

  std::unordered_map<std::size_t, std::vector<std::size_t>> clusters;
  for (std::size_t f = 0; f < flagged.size(); ++f) clusters[uf.find(f)].push_back(f);
  std::vector<std::vector<std::size_t>> groups;
  for (auto& [root, members] : clusters) groups.push_back(std::move(members));
  std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a[0] < b[0]; });

  SingularitySet out;
  std::vector<double> y(n);
  for (const auto& members : groups) {
    Singularity s;
    s.position.assign(n, 0.0);
    for (std::size_t f : members) {
      s.cell_degree += flagged[f].degree;
      d.position(flagged[f].node, y);
      for (int a = 0; a < n; ++a) s.position[a] += y[a] + 0.5 * h;
    }
    for (int a = 0; a < n; ++a) s.position[a] /= static_cast<double>(members.size());
    s.cells = members.size();
    if (s.cell_degree == 0) {
      ++out.neutral_clusters;
      continue;
    }
    s.degree = s.cell_degree;
    auto node = d.nearest_node(s.position);
    s.node = node ? *node : flagged[members[0]].node;
    out.points.push_back(std::move(s));
  }

  // Cross-checks on resolved spheres that enclose only this cluster.
  std::vector<double> lap_sq;
  for (std::size_t p = 0; p < out.points.size(); ++p) {
    Singularity& s = out.points[p];
    for (double rh : opts.flux_radii_h) {
      const double r = rh * h;
      bool isolated = true;
      for (std::size_t q = 0; q < out.points.size(); ++q) {
        if (q != p && distance(s.position, out.points[q].position) <= r + 2.0 * h) isolated = false;
      }
      if (!isolated) continue;
      try {
        const FluxDegree f = flux_degree_raw(u, s.position, r);
        s.flux_radius = r;
        s.flux_residual = f.residual;
        if (f.residual <= 0.25) {
          s.flux_degree = f.degree;
          s.degree = f.degree;
        }
        break;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::RegionEscapesDomain) throw;
      }
    }
    if (opts.cross_report_theta) {
      const double r = 4.0 * h;
      try {
        require_ball_inside(d, s.position, r);
        if (lap_sq.empty()) lap_sq = laplacian_sq_density(u);
        s.theta = std::pow(r, 4 - n) * integrate_ball(d, lap_sq, s.position, r);
        s.theta_radius = r;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::RegionEscapesDomain) throw;
        s.theta = std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
  // Clusters whose flux check cancelled them carry no charge.
  std::erase_if(out.points, [&](const Singularity& s) {
    if (s.degree != 0) return false;
    ++out.neutral_clusters;
    return true;
  });
  return out;
}

// --- assignment -----------------------------------------------------------------

std::vector<int> hungarian(const std::vector<double>& cost, int size) {
  if (static_cast<int>(cost.size()) != size * size) {
    throw Error(ErrorCode::DimensionMismatch, "cost matrix must be size x size");
  }
  const int m = size;
  std::vector<double> u(m + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (int i = 1; i <= m; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(m, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] > 0) assignment[p[j] - 1] = j - 1;
  }
  return assignment;
}

AuctionResult auction(const std::vector<double>& cost, int size, double final_epsilon) {
  if (static_cast<int>(cost.size()) != size * size) {
    throw Error(ErrorCode::DimensionMismatch, "cost matrix must be size x size");
  }
  if (!(final_epsilon > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "auction epsilon must be positive");
  }
  AuctionResult res;
  if (size == 0) return res;
  double cmax = 0.0;
  for (double c : cost) cmax = std::max(cmax, std::abs(c));
  std::vector<double> price(size, 0.0);
  std::vector<int> owner(size, -1), assigned(size, -1);
  double eps = std::max(final_epsilon, cmax / 4.0);
  while (true) {
    std::fill(owner.begin(), owner.end(), -1);
    std::fill(assigned.begin(), assigned.end(), -1);
    std::vector<int> queue(size);
    std::iota(queue.begin(), queue.end(), 0);
    while (!queue.empty()) {
      const int i = queue.back();
      queue.pop_back();
      double best = -kInf, second = -kInf;
      int bj = -1;
      for (int j = 0; j < size; ++j) {
        const double val = -cost[i * size + j] - price[j];
        if (val > best) {
          second = best;
          best = val;
          bj = j;
        } else if (val > second) {
          second = val;
        }
      }
      const double raise = (size == 1 ? 0.0 : best - second) + eps;
      price[bj] += raise;
      if (owner[bj] >= 0) {
        assigned[owner[bj]] = -1;
        queue.push_back(owner[bj]);
      }
      owner[bj] = i;
      assigned[i] = bj;
    }
    if (eps <= final_epsilon) break;
    eps = std::max(final_epsilon, eps / 5.0);
  }
  res.assignment = assigned;
  for (int i = 0; i < size; ++i) res.cost += cost[i * size + assigned[i]];
  res.gap = size * eps;
  return res;
}

// --- transport ------------------------------------------------------------------

TransportGraph transport_graph(const LatticeDomain& d, const SingularitySet& s) {
  TransportGraph g;
  if (!d.spec().convex()) return g;
  std::vector<const Singularity*> pos, neg;
  for (const Singularity& p : s.points) (p.degree > 0 ? pos : neg).push_back(&p);
  if (pos.empty() || neg.empty() || pos.size() * neg.size() > 64) return g;
  const int n = d.dim();
  const double reach = 4.0 * d.spacing();
  g.mask.assign(d.size(), 0);
  std::vector<double> lo(n), hi(n), y(n);
  for (const Singularity* a : pos) {
    for (const Singularity* b : neg) {
      for (int k = 0; k < n; ++k) {
        lo[k] = std::min(a->position[k], b->position[k]) - reach;
        hi[k] = std::max(a->position[k], b->position[k]) + reach;
      }
      std::vector<double> mid(n);
      double half = 0.0;
      for (int k = 0; k < n; ++k) {
        mid[k] = 0.5 * (lo[k] + hi[k]);
        half += 0.25 * (hi[k] - lo[k]) * (hi[k] - lo[k]);
      }
      d.for_each_in_ball(mid, std::sqrt(half), [&](std::size_t i, double) {
        if (g.mask[i]) return;
        d.position(i, y);
        if (point_segment_distance(y, a->position, b->position) <= reach) g.mask[i] = 1;
      });
    }
  }
  for (const Singularity& p : s.points) g.mask[p.node] = 1;
  g.tube = true;
  return g;
}

Connection minimal_connection(const SingularitySet& s, const LatticeDomain& d,
                              const TransportGraph& g) {
  Connection c;
  const Expanded e = expand(s);
  c.positive_nodes = e.positive;
  c.negative_nodes = e.negative;
  c.anisotropy = graph_anisotropy(d.dim());
  const int m = static_cast<int>(e.positive.size());
  if (m == 0) return c;

  GeodesicSolver solver(d, g.mask);
  std::vector<double> cost(static_cast<std::size_t>(m) * m);
  std::unordered_map<std::size_t, std::vector<double>> cache;
  for (int i = 0; i < m; ++i) {
    auto it = cache.find(e.positive[i]);
    if (it == cache.end()) {
      const GeodesicSolver::Source src{e.positive[i], 0.0};
      it = cache.emplace(e.positive[i], solver.distances(std::span(&src, 1))).first;
    }
    for (int j = 0; j < m; ++j) {
      const double dist = it->second[e.negative[j]];
      if (!std::isfinite(dist)) {
        throw Error(ErrorCode::Disconnected, "singularities are not connected in the lattice graph");
      }
      cost[i * m + j] = dist;
    }
  }

  std::vector<int> assignment;
  if (m <= 32) {
    assignment = hungarian(cost, m);
  } else {
    const auto a = auction(cost, m, 1e-6 * d.spacing() / m);
    assignment = a.assignment;
    c.exact = false;
    c.gap = a.gap;
  }
  Accumulator acc;
  for (int i = 0; i < m; ++i) {
    const double w = cost[i * m + assignment[i]];
    c.pairs.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(assignment[i]), w});
    acc.add(w);
  }
  c.value = acc.value();
  return c;
}

Connection minimal_connection(const SingularitySet& s, const LatticeDomain& d) {
  expand(s);  // degree balance is checked before building any graph
  const TransportGraph g = transport_graph(d, s);
  if (g.tube) {
    try {
      return minimal_connection(s, d, g);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Disconnected) throw;
    }
  }
  return minimal_connection(s, d, TransportGraph{});
}

DualResult relaxed_L_dual(const SingularitySet& s, const LatticeDomain& d,
                          const TransportGraph& g) {
  const Expanded e = expand(s);
  const std::size_t N = d.size();
  GeodesicSolver solver(d, g.mask);
  DualResult res;

  std::unordered_map<std::size_t, long> supply;
  for (std::size_t i : e.positive) ++supply[i];
  for (std::size_t i : e.negative) --supply[i];
  std::erase_if(supply, [](const auto& kv) { return kv.second == 0; });

  // Residual reverse edges: back[v] holds (u, units) for flow u -> v.
  std::unordered_map<std::size_t, std::unordered_map<std::size_t, long>> back;
  std::vector<double> pot(N, 0.0), dist(N);
  std::vector<std::int64_t> pred(N);
  std::vector<char> via_back(N);

  auto edge_length = [&](std::size_t a, std::size_t b) {
    double l2 = 0.0;
    for (int k = 0; k < d.dim(); ++k) {
      const double t = d.grid_index(a, k) - d.grid_index(b, k);
      l2 += t * t;
    }
    return std::sqrt(l2) * d.spacing();
  };

  while (true) {
    bool remaining = false;
    for (const auto& [node, units] : supply) remaining = remaining || units > 0;
    if (!remaining) break;

    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(pred.begin(), pred.end(), -1);
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    for (const auto& [node, units] : supply) {
      if (units <= 0) continue;
      dist[node] = std::max(0.0, -pot[node]);
      heap.push({dist[node], node});
    }
    while (!heap.empty()) {
      auto [du, x] = heap.top();
      heap.pop();
      if (du > dist[x]) continue;
      auto relax = [&](std::size_t y, double c, bool reverse) {
        const double nd = du + std::max(0.0, c + pot[x] - pot[y]);
        if (nd < dist[y]) {
          dist[y] = nd;
          pred[y] = static_cast<std::int64_t>(x);
          via_back[y] = reverse;
          heap.push({nd, y});
        }
      };
      solver.for_each_edge(x, [&](std::size_t y, double len) { relax(y, len, false); });
      if (auto it = back.find(x); it != back.end()) {
        for (const auto& [y, units] : it->second) {
          if (units > 0) relax(y, -edge_length(x, y), true);
        }
      }
    }

    std::optional<std::size_t> target;
    for (const auto& [node, units] : supply) {
      if (units < 0 && std::isfinite(dist[node]) && (!target || dist[node] < dist[*target])) {
        target = node;
      }
    }
    if (!target) {
      throw Error(ErrorCode::Disconnected, "remaining demand is unreachable in the lattice graph");
    }
    double far = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      if (std::isfinite(dist[i])) far = std::max(far, dist[i]);
    }
    for (std::size_t i = 0; i < N; ++i) {
      if (solver.in_graph(i)) pot[i] += std::isfinite(dist[i]) ? dist[i] : far;
    }

    std::size_t source = *target;
    while (pred[source] >= 0) source = static_cast<std::size_t>(pred[source]);
    const long units = std::min(supply[source], -supply[*target]);
    for (std::size_t y = *target; pred[y] >= 0;) {
      const auto x = static_cast<std::size_t>(pred[y]);
      if (via_back[y]) {
        auto& f = back[x][y];  // cancels flow y -> x
        f -= units;
        if (f == 0) back[x].erase(y);
      } else {
        back[y][x] += units;
      }
      y = x;
    }
    supply[source] -= units;
    supply[*target] += units;
    ++res.augmentations;
  }

  res.xi.assign(N, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < N; ++i) {
    if (solver.in_graph(i)) res.xi[i] = -pot[i];
  }
  Accumulator acc;
  for (std::size_t i : e.positive) acc.add(res.xi[i]);
  for (std::size_t i : e.negative) acc.add(-res.xi[i]);
  res.value = acc.value();
  for (std::size_t i = 0; i < N; ++i) {
    if (!solver.in_graph(i)) continue;
    solver.for_each_edge(i, [&](std::size_t j, double len) {
      res.max_violation = std::max(res.max_violation, std::abs(res.xi[i] - res.xi[j]) - len);
    });
  }
  return res;
}

DualResult relaxed_L_dual(const SingularitySet& s, const LatticeDomain& d) {
  expand(s);
  const TransportGraph g = transport_graph(d, s);
  if (g.tube) {
    try {
      return relaxed_L_dual(s, d, g);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Disconnected) throw;
    }
  }
  return relaxed_L_dual(s, d, TransportGraph{});
}

SingularitySet merge_relative(const SingularitySet& u, const SingularitySet& u0) {
  SingularitySet out;
  out.neutral_clusters = u.neutral_clusters + u0.neutral_clusters;
  out.points = u.points;
  for (Singularity p : u0.points) {
    p.degree = -p.degree;
    p.cell_degree = -p.cell_degree;
    if (p.flux_degree) p.flux_degree = -*p.flux_degree;
    out.points.push_back(std::move(p));
  }
  // Coinciding charges (same nearest node) combine; zero totals vanish.
  std::vector<Singularity> merged;
  for (Singularity& p : out.points) {
    auto it = std::find_if(merged.begin(), merged.end(),
                           [&](const Singularity& q) { return q.node == p.node; });
    if (it == merged.end()) {
      merged.push_back(std::move(p));
    } else {
      it->degree += p.degree;
      it->cell_degree += p.cell_degree;
    }
  }
  std::erase_if(merged, [](const Singularity& p) { return p.degree == 0; });
  out.points = std::move(merged);
  return out;
}

RelativeL relative_L(const SphereField& u, const SphereField& u0, const DetectOptions& opts) {
  if (&u.domain() != &u0.domain() && u.size() != u0.size()) {
    throw Error(ErrorCode::DimensionMismatch, "fields live on different lattices");
  }
  RelativeL r;
  r.merged = merge_relative(detect_singularities(u, opts), detect_singularities(u0, opts));
  r.value = minimal_connection(r.merged, u.domain()).value;
  return r;
}

}  // namespace biharm
