#include "biharm/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <sstream>

#include "biharm/errors.hpp"

namespace biharm {

namespace {

constexpr double kSdTol = 1e-9;  // relative to h

double euclid(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double box_sd(std::span<const double> x, std::span<const double> lo, std::span<const double> hi) {
  double outside = 0.0;
  double inside = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < x.size(); ++a) {
    const double c = 0.5 * (lo[a] + hi[a]);
    const double half = 0.5 * (hi[a] - lo[a]);
    const double q = std::abs(x[a] - c) - half;
    outside += std::max(q, 0.0) * std::max(q, 0.0);
    inside = std::max(inside, q);
  }
  return std::sqrt(outside) + std::min(inside, 0.0);
}

// Length of [x - h/2, x + h/2] inside [lo, hi], as a fraction of h.
double overlap_1d(double x, double h, double lo, double hi) {
  const double a = std::max(x - 0.5 * h, lo);
  const double b = std::min(x + 0.5 * h, hi);
  return std::clamp((b - a) / h, 0.0, 1.0);
}

}  // namespace

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Ball: return "ball";
    case ShapeKind::Annulus: return "annulus";
    case ShapeKind::Box: return "box";
    case ShapeKind::Dumbbell: return "dumbbell";
  }
  return "?";
}

ShapeKind shape_from_string(std::string_view name) {
  if (name == "ball") return ShapeKind::Ball;
  if (name == "annulus") return ShapeKind::Annulus;
  if (name == "box") return ShapeKind::Box;
  if (name == "dumbbell") return ShapeKind::Dumbbell;
  throw Error(ErrorCode::SchemaError, "unknown shape '" + std::string(name) + "'");
}

DomainSpec DomainSpec::ball(int n, std::vector<double> center, double radius) {
  DomainSpec s;
  s.shape = ShapeKind::Ball;
  s.dim = n;
  s.center = center.empty() ? std::vector<double>(n, 0.0) : std::move(center);
  s.radius = radius;
  return s;
}

DomainSpec DomainSpec::annulus(int n, std::vector<double> center, double r_inner,
                               double r_outer) {
  DomainSpec s;
  s.shape = ShapeKind::Annulus;
  s.dim = n;
  s.center = center.empty() ? std::vector<double>(n, 0.0) : std::move(center);
  s.r_inner = r_inner;
  s.r_outer = r_outer;
  return s;
}

DomainSpec DomainSpec::box(std::vector<double> lo, std::vector<double> hi) {
  DomainSpec s;
  s.shape = ShapeKind::Box;
  s.dim = static_cast<int>(lo.size());
  s.lo = std::move(lo);
  s.hi = std::move(hi);
  return s;
}

DomainSpec DomainSpec::dumbbell(double cap_radius, double neck_half_length, int n) {
  DomainSpec s;
  s.shape = ShapeKind::Dumbbell;
  s.dim = n;
  s.cap_radius = cap_radius;
  s.neck_half_length = neck_half_length;
  return s;
}

DomainSpec DomainSpec::with_offset(std::vector<double> offset) const {
  DomainSpec s = *this;
  s.grid_offset = std::move(offset);
  return s;
}

void DomainSpec::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, m); };
  if (dim < 2 || dim > kMaxDim) fail("dimension must be in [2, " + std::to_string(kMaxDim) + "]");
  if (!grid_offset.empty()) {
    if (static_cast<int>(grid_offset.size()) != dim) {
      throw Error(ErrorCode::DimensionMismatch, "grid_offset length differs from dim");
    }
    for (double o : grid_offset) {
      if (!(o >= 0.0 && o < 1.0)) fail("grid_offset entries must lie in [0, 1)");
    }
  }
  switch (shape) {
    case ShapeKind::Ball:
      if (static_cast<int>(center.size()) != dim) {
        throw Error(ErrorCode::DimensionMismatch, "ball center dimension");
      }
      if (!(radius > 0.0)) fail("ball radius must be positive");
      break;
    case ShapeKind::Annulus:
      if (static_cast<int>(center.size()) != dim) {
        throw Error(ErrorCode::DimensionMismatch, "annulus center dimension");
      }
      if (!(r_inner > 0.0) || !(r_outer > r_inner)) fail("annulus needs 0 < r_inner < r_outer");
      break;
    case ShapeKind::Box:
      if (static_cast<int>(lo.size()) != dim || static_cast<int>(hi.size()) != dim) {
        throw Error(ErrorCode::DimensionMismatch, "box corner dimension");
      }
      for (int a = 0; a < dim; ++a) {
        if (!(lo[a] < hi[a])) fail("box needs lo < hi componentwise");
      }
      break;
    case ShapeKind::Dumbbell:
      if (dim != 5) throw Error(ErrorCode::DimensionMismatch, "dumbbell requires n = 5");
      if (!(cap_radius > 0.0) || !(neck_half_length > 0.0)) {
        fail("dumbbell radii must be positive");
      }
      break;
  }
}

double DomainSpec::signed_distance(std::span<const double> x) const {
  switch (shape) {
    case ShapeKind::Ball:
      return euclid(x, center) - radius;
    case ShapeKind::Annulus: {
      const double r = euclid(x, center);
      return std::max(r - r_outer, r_inner - r);
    }
    case ShapeKind::Box:
      return box_sd(x, lo, hi);
    case ShapeKind::Dumbbell: {
      // Union of the two half balls and the cylinder is the capsule around
      // the segment {0'} x [-L, L].
      double s = 0.0;
      for (int a = 0; a < dim - 1; ++a) s += x[a] * x[a];
      const double z = x[dim - 1];
      const double zc = std::clamp(z, -neck_half_length, neck_half_length);
      s += (z - zc) * (z - zc);
      return std::sqrt(s) - cap_radius;
    }
  }
  return 0.0;
}

void DomainSpec::bounding_box(std::span<double> lo_out, std::span<double> hi_out) const {
  for (int a = 0; a < dim; ++a) {
    switch (shape) {
      case ShapeKind::Ball:
        lo_out[a] = center[a] - radius;
        hi_out[a] = center[a] + radius;
        break;
      case ShapeKind::Annulus:
        lo_out[a] = center[a] - r_outer;
        hi_out[a] = center[a] + r_outer;
        break;
      case ShapeKind::Box:
        lo_out[a] = lo[a];
        hi_out[a] = hi[a];
        break;
      case ShapeKind::Dumbbell: {
        const double ext = (a == dim - 1) ? neck_half_length + cap_radius : cap_radius;
        lo_out[a] = -ext;
        hi_out[a] = ext;
        break;
      }
    }
  }
}

double cell_fraction(double sd, double h) { return std::clamp(0.5 - sd / h, 0.0, 1.0); }

void Stencil::add(std::int32_t node, double coef) {
  for (int i = 0; i < size_; ++i) {
    if (taps_[i].node == node) {
      taps_[i].coef += coef;
      return;
    }
  }
  taps_[size_++] = {node, coef};
}

LatticeDomain LatticeDomain::build(const DomainSpec& spec, double h) {
  spec.validate();
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "spacing h must be positive");

  LatticeDomain d;
  d.spec_ = spec;
  d.n_ = spec.dim;
  d.h_ = h;
  const int n = d.n_;

  std::array<double, kMaxDim> blo{}, bhi{};
  spec.bounding_box(std::span<double>(blo.data(), n), std::span<double>(bhi.data(), n));
  for (int a = 0; a < n; ++a) {
    const double off = spec.offset(a);
    const int imin = static_cast<int>(std::floor(blo[a] / h - off)) - 1;
    const int imax = static_cast<int>(std::ceil(bhi[a] / h - off)) + 1;
    d.lo_index_[a] = imin;
    d.extents_[a] = imax - imin + 1;
    if (d.extents_[a] >= 32767) {
      throw Error(ErrorCode::InvalidArgument, "lattice too fine: more than 32766 nodes per axis");
    }
  }

  const double tol = kSdTol * h;
  const double hn = std::pow(h, n);
  const bool is_box = spec.shape == ShapeKind::Box;

  std::size_t lines = 1;
  for (int a = 0; a + 1 < n; ++a) lines *= static_cast<std::size_t>(d.extents_[a]);
  d.line_start_.assign(lines + 1, 0);

  std::array<double, kMaxDim> x{};
  GridIndex g{};
  const int last = n - 1;
  const int nlast = d.extents_[last];

  for (std::size_t line = 0; line < lines; ++line) {
    // decode line -> first n-1 grid indices (row-major, axis n-2 fastest)
    std::size_t rem = line;
    for (int a = n - 2; a >= 0; --a) {
      g[a] = static_cast<int>(rem % d.extents_[a]);
      rem /= d.extents_[a];
    }
    for (int a = 0; a < last; ++a) x[a] = d.grid_coord(g[a], a);
    d.line_start_[line] = static_cast<std::uint32_t>(d.runs_.size());
    int run_start = -1;
    for (int j = 0; j < nlast; ++j) {
      x[last] = d.grid_coord(j, last);
      const std::span<const double> xs(x.data(), n);
      const double sd = spec.signed_distance(xs);
      const bool inside = sd <= tol;
      if (inside) {
        if (run_start < 0) {
          run_start = j;
          d.runs_.push_back({j, 0, static_cast<std::int64_t>(d.class_.size())});
        }
        d.runs_.back().length += 1;
        g[last] = j;
        for (int a = 0; a < n; ++a) d.gidx_.push_back(static_cast<std::int16_t>(g[a]));
        const double depth = -sd;
        NodeClass c = NodeClass::BoundaryLayer1;
        if (depth >= 2 * h - tol) {
          c = NodeClass::Interior;
        } else if (depth >= h - tol) {
          c = NodeClass::BoundaryLayer2;
        }
        d.class_.push_back(static_cast<std::uint8_t>(c));
        double w = hn;
        if (is_box) {
          for (int a = 0; a < n; ++a) w *= overlap_1d(x[a], h, spec.lo[a], spec.hi[a]);
        } else if (sd > -0.5 * h) {
          w *= cell_fraction(sd, h);
        }
        d.weight_.push_back(w);
      } else {
        run_start = -1;
      }
    }
  }
  d.line_start_[lines] = static_cast<std::uint32_t>(d.runs_.size());
  if (d.runs_.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::InvalidArgument, "too many lattice runs");
  }

  if (d.count(NodeClass::Interior) == 0) {
    std::ostringstream msg;
    msg << "no interior nodes at h = " << h;
    throw Error(ErrorCode::EmptyInterior, msg.str());
  }

  d.build_neighbors();
  d.fold_exterior_mass();
  return d;
}

void LatticeDomain::fold_exterior_mass() {
  // Exterior nodes whose cell overlaps the domain hand their share to the
  // deepest stored axis neighbor.
  const int n = n_;
  const double h = h_;
  const double tol = kSdTol * h;
  const double hn = std::pow(h, n);
  const double band = 0.5 * h;
  const bool is_box = spec_.shape == ShapeKind::Box;
  std::array<double, kMaxDim> x{};
  GridIndex g{};
  std::size_t lines = line_start_.size() - 1;
  const int last = n - 1;
  for (std::size_t line = 0; line < lines; ++line) {
    std::size_t rem = line;
    for (int a = n - 2; a >= 0; --a) {
      g[a] = static_cast<int>(rem % extents_[a]);
      rem /= extents_[a];
    }
    for (int a = 0; a < last; ++a) x[a] = grid_coord(g[a], a);
    for (int j = 0; j < extents_[last]; ++j) {
      x[last] = grid_coord(j, last);
      const std::span<const double> xs(x.data(), n);
      const double sd = spec_.signed_distance(xs);
      if (sd <= tol || sd >= band) continue;
      double frac = 1.0;
      if (is_box) {
        for (int a = 0; a < n; ++a) frac *= overlap_1d(x[a], h, spec_.lo[a], spec_.hi[a]);
      } else {
        frac = cell_fraction(sd, h);
      }
      if (frac <= 0.0) continue;
      g[last] = j;
      std::optional<std::size_t> best;
      double best_sd = std::numeric_limits<double>::infinity();
      for (int a = 0; a < n; ++a) {
        for (int dir : {-1, 1}) {
          GridIndex q = g;
          q[a] += dir;
          auto idx = find(q);
          if (!idx) continue;
          std::array<double, kMaxDim> y{};
          position(*idx, std::span<double>(y.data(), n));
          const double s = spec_.signed_distance(std::span<const double>(y.data(), n));
          if (s < best_sd) {
            best_sd = s;
            best = idx;
          }
        }
      }
      if (best) weight_[*best] += frac * hn;
    }
  }
}

void LatticeDomain::build_neighbors() {
  const int n = n_;
  nbr_.assign(size() * n * 2, -1);
  for (std::size_t i = 0; i < size(); ++i) {
    GridIndex g = grid_index(i);
    for (int a = 0; a < n; ++a) {
      for (int s = 0; s < 2; ++s) {
        GridIndex q = g;
        q[a] += s == 0 ? -1 : 1;
        if (auto idx = find(q)) nbr_[(i * n + a) * 2 + s] = static_cast<std::int32_t>(*idx);
      }
    }
  }
}

std::size_t LatticeDomain::grid_size() const {
  std::size_t s = 1;
  for (int a = 0; a < n_; ++a) s *= static_cast<std::size_t>(extents_[a]);
  return s;
}

std::size_t LatticeDomain::count(NodeClass c) const {
  return static_cast<std::size_t>(
      std::count(class_.begin(), class_.end(), static_cast<std::uint8_t>(c)));
}

double LatticeDomain::total_volume() const {
  Accumulator acc;
  for (double w : weight_) acc.add(w);
  return acc.value();
}

GridIndex LatticeDomain::grid_index(std::size_t i) const {
  GridIndex g{};
  for (int a = 0; a < n_; ++a) g[a] = gidx_[i * n_ + a];
  return g;
}

double LatticeDomain::grid_coord(int grid_i, int axis) const {
  return h_ * (static_cast<double>(grid_i + lo_index_[axis]) + spec_.offset(axis));
}

double LatticeDomain::coord(std::size_t i, int axis) const {
  return grid_coord(gidx_[i * n_ + axis], axis);
}

void LatticeDomain::position(std::size_t i, std::span<double> out) const {
  for (int a = 0; a < n_; ++a) out[a] = coord(i, a);
}

std::vector<double> LatticeDomain::position(std::size_t i) const {
  std::vector<double> x(n_);
  position(i, x);
  return x;
}

double LatticeDomain::depth(std::size_t i) const {
  std::array<double, kMaxDim> x{};
  position(i, std::span<double>(x.data(), n_));
  return -spec_.signed_distance(std::span<const double>(x.data(), n_));
}

std::size_t LatticeDomain::line_of(const GridIndex& g) const {
  std::size_t line = 0;
  for (int a = 0; a + 1 < n_; ++a) line = line * extents_[a] + static_cast<std::size_t>(g[a]);
  return line;
}

std::optional<std::size_t> LatticeDomain::find(const GridIndex& g) const {
  for (int a = 0; a < n_; ++a) {
    if (g[a] < 0 || g[a] >= extents_[a]) return std::nullopt;
  }
  const std::size_t line = line_of(g);
  const int j = g[n_ - 1];
  for (std::uint32_t r = line_start_[line]; r < line_start_[line + 1]; ++r) {
    const Run& run = runs_[r];
    if (j >= run.start && j < run.start + run.length) {
      return static_cast<std::size_t>(run.base + (j - run.start));
    }
  }
  return std::nullopt;
}

NodeClass LatticeDomain::classify(const GridIndex& g) const {
  auto idx = find(g);
  return idx ? node_class(*idx) : NodeClass::Exterior;
}

GridIndex LatticeDomain::cell_of(std::span<const double> x) const {
  GridIndex g{};
  for (int a = 0; a < n_; ++a) {
    g[a] = static_cast<int>(std::floor(x[a] / h_ - spec_.offset(a))) - lo_index_[a];
  }
  return g;
}

std::optional<std::size_t> LatticeDomain::nearest_node(std::span<const double> x) const {
  GridIndex base = cell_of(x);
  std::optional<std::size_t> best;
  double best_d = std::numeric_limits<double>::infinity();
  const int corners = 1 << n_;
  std::array<double, kMaxDim> y{};
  for (int c = 0; c < corners; ++c) {
    GridIndex q = base;
    for (int a = 0; a < n_; ++a) q[a] += (c >> a) & 1;
    auto idx = find(q);
    if (!idx) continue;
    position(*idx, std::span<double>(y.data(), n_));
    const double dd = euclid(std::span<const double>(y.data(), n_), x);
    if (dd < best_d) {
      best_d = dd;
      best = idx;
    }
  }
  return best;
}

bool LatticeDomain::has_central_stencil(std::size_t i) const {
  for (int k = 0; k < 2 * n_; ++k) {
    if (nbr_[i * n_ * 2 + k] < 0) return false;
  }
  return true;
}

bool LatticeDomain::derivative_stencil(std::size_t i, int axis, Stencil& out) const {
  const double inv2h = 1.0 / (2.0 * h_);
  const std::int32_t p = neighbor(i, axis, +1);
  const std::int32_t m = neighbor(i, axis, -1);
  const auto self = static_cast<std::int32_t>(i);
  if (p >= 0 && m >= 0) {
    out.add(p, inv2h);
    out.add(m, -inv2h);
    return true;
  }
  for (int dir : {+1, -1}) {
    const std::int32_t s1 = dir > 0 ? p : m;
    if (s1 < 0) continue;
    const std::int32_t s2 = neighbor(static_cast<std::size_t>(s1), axis, dir);
    if (s2 >= 0) {
      out.add(self, -3.0 * inv2h * dir);
      out.add(s1, 4.0 * inv2h * dir);
      out.add(s2, -1.0 * inv2h * dir);
      return true;
    }
  }
  for (int dir : {+1, -1}) {
    const std::int32_t s1 = dir > 0 ? p : m;
    if (s1 < 0) continue;
    out.add(self, -dir / h_);
    out.add(s1, dir / h_);
    return true;
  }
  return false;
}

bool LatticeDomain::laplacian_stencil(std::size_t i, Stencil& out) const {
  const double ih2 = 1.0 / (h_ * h_);
  const auto self = static_cast<std::int32_t>(i);
  double center = 0.0;
  for (int a = 0; a < n_; ++a) {
    const std::int32_t p = neighbor(i, a, +1);
    const std::int32_t m = neighbor(i, a, -1);
    if (p >= 0 && m >= 0) {
      out.add(p, ih2);
      out.add(m, ih2);
      center -= 2.0 * ih2;
      continue;
    }
    bool done = false;
    for (int dir : {+1, -1}) {
      const std::int32_t s1 = dir > 0 ? p : m;
      if (s1 < 0) continue;
      const std::int32_t s2 = neighbor(static_cast<std::size_t>(s1), a, dir);
      if (s2 < 0) continue;
      const std::int32_t s3 = neighbor(static_cast<std::size_t>(s2), a, dir);
      if (s3 >= 0) {
        center += 2.0 * ih2;
        out.add(s1, -5.0 * ih2);
        out.add(s2, 4.0 * ih2);
        out.add(s3, -1.0 * ih2);
      } else {
        center += ih2;
        out.add(s1, -2.0 * ih2);
        out.add(s2, ih2);
      }
      done = true;
      break;
    }
    if (!done) return false;
  }
  out.add(self, center);
  return true;
}

void LatticeDomain::for_each_in_ball(std::span<const double> center, double radius,
                                     const std::function<void(std::size_t, double)>& fn) const {
  const int n = n_;
  std::array<int, kMaxDim> jlo{}, jhi{};
  for (int a = 0; a < n; ++a) {
    const double off = spec_.offset(a);
    jlo[a] = std::max(0, static_cast<int>(std::ceil((center[a] - radius) / h_ - off)) - lo_index_[a]);
    jhi[a] = std::min(extents_[a] - 1,
                      static_cast<int>(std::floor((center[a] + radius) / h_ - off)) - lo_index_[a]);
    if (jlo[a] > jhi[a]) return;
  }
  const double r2 = radius * radius;
  GridIndex g{};
  for (int a = 0; a < n - 1; ++a) g[a] = jlo[a];
  const int last = n - 1;
  while (true) {
    double partial = 0.0;
    for (int a = 0; a < last; ++a) {
      const double dx = grid_coord(g[a], a) - center[a];
      partial += dx * dx;
    }
    if (partial <= r2) {
      const std::size_t line = line_of(g);
      for (std::uint32_t r = line_start_[line]; r < line_start_[line + 1]; ++r) {
        const Run& run = runs_[r];
        const int a0 = std::max(run.start, jlo[last]);
        const int a1 = std::min(run.start + run.length - 1, jhi[last]);
        for (int j = a0; j <= a1; ++j) {
          const double dx = grid_coord(j, last) - center[last];
          const double d2 = partial + dx * dx;
          if (d2 <= r2) fn(static_cast<std::size_t>(run.base + (j - run.start)), std::sqrt(d2));
        }
      }
    }
    int a = last - 1;
    while (a >= 0) {
      if (++g[a] <= jhi[a]) break;
      g[a] = jlo[a];
      --a;
    }
    if (a < 0) break;
  }
}

// --- finite differences -----------------------------------------------------

std::vector<double> gradient_fd(const LatticeDomain& d, std::span<const double> values, int ncomp,
                                std::size_t node) {
  const int n = d.dim();
  std::vector<double> out(static_cast<std::size_t>(n * ncomp), 0.0);
  const double inv2h = 1.0 / (2.0 * d.spacing());
  for (int a = 0; a < n; ++a) {
    const std::int32_t p = d.neighbor(node, a, +1);
    const std::int32_t m = d.neighbor(node, a, -1);
    if (p < 0 || m < 0) {
      throw Error(ErrorCode::StencilOutOfDomain,
                  "central gradient stencil leaves the domain at node " + std::to_string(node));
    }
    for (int c = 0; c < ncomp; ++c) {
      out[a * ncomp + c] = (values[p * ncomp + c] - values[m * ncomp + c]) * inv2h;
    }
  }
  return out;
}

std::vector<double> laplacian_fd(const LatticeDomain& d, std::span<const double> values,
                                 int ncomp, std::size_t node) {
  const int n = d.dim();
  std::vector<double> out(ncomp, 0.0);
  const double ih2 = 1.0 / (d.spacing() * d.spacing());
  for (int a = 0; a < n; ++a) {
    const std::int32_t p = d.neighbor(node, a, +1);
    const std::int32_t m = d.neighbor(node, a, -1);
    if (p < 0 || m < 0) {
      throw Error(ErrorCode::StencilOutOfDomain,
                  "central Laplacian stencil leaves the domain at node " + std::to_string(node));
    }
    for (int c = 0; c < ncomp; ++c) {
      out[c] += (values[p * ncomp + c] - 2.0 * values[node * ncomp + c] + values[m * ncomp + c]) *
                ih2;
    }
  }
  return out;
}

// --- integration --------------------------------------------------------------

double integrate(const LatticeDomain& d, std::span<const double> f) {
  Accumulator acc;
  for (std::size_t i = 0; i < d.size(); ++i) acc.add(f[i] * d.weight(i));
  return acc.value();
}

void require_ball_inside(const LatticeDomain& d, std::span<const double> center, double r) {
  const double sd = d.spec().signed_distance(center);
  if (sd > -r + kSdTol * d.spacing()) {
    std::ostringstream msg;
    msg << "ball of radius " << r << " reaches outside the domain (center depth " << -sd << ")";
    throw Error(ErrorCode::RegionEscapesDomain, msg.str());
  }
}

double integrate_ball(const LatticeDomain& d, std::span<const double> center, double r,
                      const std::function<double(std::size_t)>& f) {
  require_ball_inside(d, center, r);
  const double h = d.spacing();
  const double reach = r + 0.5 * h;
  Accumulator acc;
  d.for_each_in_ball(center, reach, [&](std::size_t i, double dist) {
    const double frac = cell_fraction(dist - r, h);
    if (frac <= 0.0) return;
    acc.add(frac * d.weight(i) * f(i));
  });
  return acc.value();
}

double integrate_ball(const LatticeDomain& d, std::span<const double> f,
                      std::span<const double> center, double r) {
  return integrate_ball(d, center, r, [&](std::size_t i) { return f[i]; });
}

double shell_integrate(const LatticeDomain& d, std::span<const double> center, double r,
                       const std::function<double(std::size_t)>& f) {
  const double h = d.spacing();
  require_ball_inside(d, center, r + 0.5 * h);
  if (r <= 0.5 * h) {
    throw Error(ErrorCode::InvalidArgument, "shell radius must exceed h/2");
  }
  const double reach = r + h;
  Accumulator acc;
  d.for_each_in_ball(center, reach, [&](std::size_t i, double dist) {
    const double frac =
        cell_fraction(dist - (r + 0.5 * h), h) - cell_fraction(dist - (r - 0.5 * h), h);
    if (frac == 0.0) return;
    acc.add(frac * d.weight(i) * f(i));
  });
  return acc.value() / h;
}

double shell_integrate(const LatticeDomain& d, std::span<const double> f,
                       std::span<const double> center, double r) {
  return shell_integrate(d, center, r, [&](std::size_t i) { return f[i]; });
}

ShellIntegrals shell_integrate_with_derivative(const LatticeDomain& d,
                                               std::span<const double> center, double r,
                                               const std::function<double(std::size_t)>& f) {
  const double h = d.spacing();
  const int n = d.dim();
  const double value = shell_integrate(d, center, r, f);
  const double plus = shell_integrate(d, center, r + h, f) * std::pow(r + h, 1 - n);
  const double minus = shell_integrate(d, center, r - h, f) * std::pow(r - h, 1 - n);
  return {value, std::pow(r, n - 1) * (plus - minus) / (2.0 * h)};
}

// --- geodesics ------------------------------------------------------------------

double graph_anisotropy(int n) {
  // Graph norm of a direction with sorted magnitudes s_1 >= ... >= s_n is
  // sum_k s_k (sqrt(k) - sqrt(k-1)); its maximum on the unit sphere is the
  // length of that coefficient vector.
  double s = 0.0;
  for (int k = 1; k <= n; ++k) {
    const double c = std::sqrt(static_cast<double>(k)) - std::sqrt(static_cast<double>(k - 1));
    s += c * c;
  }
  return std::sqrt(s);
}

GeodesicSolver::GeodesicSolver(const LatticeDomain& d, std::vector<std::uint8_t> mask)
    : d_(d), mask_(std::move(mask)) {
  const int n = d.dim();
  int total = 1;
  for (int a = 0; a < n; ++a) total *= 3;
  for (int code = 0; code < total; ++code) {
    std::array<int, kMaxDim> off{};
    int c = code;
    int nz = 0;
    for (int a = 0; a < n; ++a) {
      off[a] = c % 3 - 1;
      c /= 3;
      nz += off[a] != 0;
    }
    if (nz == 0) continue;
    offsets_.push_back(off);
    lengths_.push_back(d.spacing() * std::sqrt(static_cast<double>(nz)));
  }
}

void GeodesicSolver::for_each_edge(std::size_t i,
                                   const std::function<void(std::size_t, double)>& fn) const {
  if (!in_graph(i)) return;
  const GridIndex g = d_.grid_index(i);
  const int n = d_.dim();
  for (std::size_t e = 0; e < offsets_.size(); ++e) {
    GridIndex q = g;
    for (int a = 0; a < n; ++a) q[a] += offsets_[e][a];
    auto j = d_.find(q);
    if (j && in_graph(*j)) fn(*j, lengths_[e]);
  }
}

std::vector<double> GeodesicSolver::distances(std::span<const Source> sources,
                                              std::optional<std::size_t> target) const {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(d_.size(), inf);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (const Source& s : sources) {
    if (!in_graph(s.node)) continue;
    if (s.value < dist[s.node]) {
      dist[s.node] = s.value;
      heap.push({s.value, s.node});
    }
  }
  const int n = d_.dim();
  while (!heap.empty()) {
    auto [du, u] = heap.top();
    heap.pop();
    if (du > dist[u]) continue;
    if (target && u == *target) break;
    const GridIndex g = d_.grid_index(u);
    for (std::size_t e = 0; e < offsets_.size(); ++e) {
      GridIndex q = g;
      for (int a = 0; a < n; ++a) q[a] += offsets_[e][a];
      auto j = d_.find(q);
      if (!j || !in_graph(*j)) continue;
      const double nd = du + lengths_[e];
      if (nd < dist[*j]) {
        dist[*j] = nd;
        heap.push({nd, *j});
      }
    }
  }
  return dist;
}

GeodesicResult geodesic_distance(const LatticeDomain& d, std::size_t a, std::size_t b) {
  if (a == b) return {0.0, graph_anisotropy(d.dim())};
  GeodesicSolver solver(d);
  const GeodesicSolver::Source src{a, 0.0};
  auto dist = solver.distances(std::span<const GeodesicSolver::Source>(&src, 1), b);
  if (!std::isfinite(dist[b])) {
    throw Error(ErrorCode::Disconnected, "no lattice path between the two nodes");
  }
  return {dist[b], graph_anisotropy(d.dim())};
}

GeodesicResult geodesic_distance_to_boundary(const LatticeDomain& d, std::size_t a) {
  GeodesicSolver solver(d);
  const GeodesicSolver::Source src{a, 0.0};
  auto dist = solver.distances(std::span<const GeodesicSolver::Source>(&src, 1));
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.node_class(i) == NodeClass::BoundaryLayer1) best = std::min(best, dist[i]);
  }
  if (!std::isfinite(best)) throw Error(ErrorCode::Disconnected, "boundary unreachable");
  return {best, graph_anisotropy(d.dim())};
}

}  // namespace biharm
