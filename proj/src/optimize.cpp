#include "biharm/optimize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <string>

#include "biharm/errors.hpp"

namespace biharm {

namespace {

double smooth_cutoff(double r, double inner, double outer) {
  if (r <= inner) return 1.0;
  if (r >= outer) return 0.0;
  const double t = (r - inner) / (outer - inner);
  return 1.0 - t * t * (3.0 - 2.0 * t);
}

// Cofactor matrix of a column-major n x n matrix: cof[c*n + r] = d det / d a[c*n + r].
void cofactors(const double* a, int n, double* cof) {
  std::array<double, kMaxDim * kMaxDim> minor{};
  const int m = n - 1;
  for (int c = 0; c < n; ++c) {
    for (int r = 0; r < n; ++r) {
      int cc = 0;
      for (int j = 0; j < n; ++j) {
        if (j == c) continue;
        int rr = 0;
        for (int i = 0; i < n; ++i) {
          if (i == r) continue;
          minor[cc * m + rr] = a[j * n + i];
          ++rr;
        }
        ++cc;
      }
      const double det = m == 0 ? 1.0 : determinant(std::span<const double>(minor.data(), m * m), m);
      cof[c * n + r] = ((r + c) % 2 == 0 ? 1.0 : -1.0) * det;
    }
  }
}

// Compressed stencils of the discrete energies. Rows whose taps never touch a
// free node are constant during a run; they are summed once and skipped.
struct Quadrature {
  const LatticeDomain* d = nullptr;
  int n = 0;
  int nc = 0;
  std::vector<std::size_t> rows;  // active Laplacian rows
  std::vector<std::size_t> start;
  std::vector<std::int32_t> node;
  std::vector<double> coef;
  std::vector<std::size_t> drows;  // active derivative rows (nodes)
  std::vector<std::size_t> dstart;  // n stencils per active node
  std::vector<std::int32_t> dnode;
  std::vector<double> dcoef;
  std::vector<double> weight;  // core nodes get 0
  std::vector<std::uint8_t> free;
  std::vector<std::size_t> free_nodes;
  double constant = 0.0;     // inactive |lap u|^2 rows
  double constant4 = 0.0;    // inactive |grad u|^4 rows
  double correction = 0.0;   // frozen singular-core mass of |lap u|^2
  double correction4 = 0.0;  // same for |grad u|^4

  Quadrature(const SphereField& u, const EnergyOptions& opts, bool freeze_cores) {
    d = &u.domain();
    n = d->dim();
    nc = u.ncomp();
    const std::size_t N = d->size();
    free.assign(N, 0);
    for (std::size_t i = 0; i < N; ++i) {
      free[i] = !d->clamped(i);
      if (free[i]) free_nodes.push_back(i);
    }
    weight.assign(d->weights().begin(), d->weights().end());
    const auto excluded = core_exclusion_mask(*d, opts.cores);
    for (std::size_t i = 0; i < N; ++i) {
      if (excluded[i]) weight[i] = 0.0;
    }
    const auto vals = u.values();
    auto touches_free = [&](const Stencil& st) {
      for (const StencilTap& t : st) {
        if (free[static_cast<std::size_t>(t.node)]) return true;
      }
      return false;
    };
    auto apply = [&](const Stencil& st, std::span<double> out) {
      std::fill(out.begin(), out.end(), 0.0);
      for (const StencilTap& t : st) {
        for (int c = 0; c < nc; ++c) out[c] += t.coef * vals[static_cast<std::size_t>(t.node) * nc + c];
      }
    };

    start.push_back(0);
    Stencil st;
    std::array<double, kMaxDim + 1> tmp{};
    Accumulator cst, cst4;
    for (std::size_t i = 0; i < N; ++i) {
      if (weight[i] == 0.0) continue;
      st.clear();
      if (!d->laplacian_stencil(i, st)) continue;
      if (touches_free(st)) {
        rows.push_back(i);
        for (const StencilTap& t : st) {
          node.push_back(t.node);
          coef.push_back(t.coef);
        }
        start.push_back(node.size());
      } else {
        apply(st, std::span<double>(tmp.data(), nc));
        double s = 0.0;
        for (int c = 0; c < nc; ++c) s += tmp[c] * tmp[c];
        cst.add(weight[i] * s);
      }
    }
    constant = cst.value();

    dstart.push_back(0);
    std::array<Stencil, kMaxDim> ds;
    for (std::size_t i = 0; i < N; ++i) {
      if (weight[i] == 0.0) continue;
      bool active = false;
      for (int a = 0; a < n; ++a) {
        ds[a].clear();
        d->derivative_stencil(i, a, ds[a]);
        active = active || touches_free(ds[a]);
      }
      if (active) {
        drows.push_back(i);
        for (int a = 0; a < n; ++a) {
          for (const StencilTap& t : ds[a]) {
            dnode.push_back(t.node);
            dcoef.push_back(t.coef);
          }
          dstart.push_back(dnode.size());
        }
      } else {
        double g2 = 0.0;
        for (int a = 0; a < n; ++a) {
          apply(ds[a], std::span<double>(tmp.data(), nc));
          for (int c = 0; c < nc; ++c) g2 += tmp[c] * tmp[c];
        }
        cst4.add(weight[i] * g2 * g2);
      }
    }
    constant4 = cst4.value();

    if (freeze_cores && !opts.cores.empty()) {
      correction = hessian_energy_detail(u, opts).singular_correction;
      correction4 = grad4_energy_detail(u, opts).singular_correction;
    }
  }

  // Quadrature of |lap u|^2 including constant rows and the core correction;
  // the Laplacians of the active rows are left in `lap`.
  double energy(std::span<const double> vals, std::vector<double>& lap) const {
    lap.assign(rows.size() * nc, 0.0);
    Accumulator acc;
    acc.add(constant);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      double* L = lap.data() + r * nc;
      for (std::size_t k = start[r]; k < start[r + 1]; ++k) {
        const double* v = vals.data() + static_cast<std::size_t>(node[k]) * nc;
        for (int c = 0; c < nc; ++c) L[c] += coef[k] * v[c];
      }
      double s = 0.0;
      for (int c = 0; c < nc; ++c) s += L[c] * L[c];
      acc.add(weight[rows[r]] * s);
    }
    return acc.value() + correction;
  }

  double grad4(std::span<const double> vals) const {
    Accumulator acc;
    acc.add(constant4);
    for (std::size_t r = 0; r < drows.size(); ++r) {
      double g2 = 0.0;
      for (int a = 0; a < n; ++a) {
        std::array<double, kMaxDim + 1> g{};
        for (std::size_t k = dstart[r * n + a]; k < dstart[r * n + a + 1]; ++k) {
          const double* v = vals.data() + static_cast<std::size_t>(dnode[k]) * nc;
          for (int c = 0; c < nc; ++c) g[c] += dcoef[k] * v[c];
        }
        for (int c = 0; c < nc; ++c) g2 += g[c] * g[c];
      }
      acc.add(weight[drows[r]] * g2 * g2);
    }
    return acc.value() + correction4;
  }

  // Adjoint: grad_j = sum_i 2 w_i lap_i L_ij (full nodal layout).
  void gradient(std::span<const double> lap, std::vector<double>& grad) const {
    grad.assign(weight.size() * nc, 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double* L = lap.data() + r * nc;
      const double w2 = 2.0 * weight[rows[r]];
      for (std::size_t k = start[r]; k < start[r + 1]; ++k) {
        double* g = grad.data() + static_cast<std::size_t>(node[k]) * nc;
        const double f = w2 * coef[k];
        for (int c = 0; c < nc; ++c) g[c] += f * L[c];
      }
    }
  }

  // Tangential projection at free nodes, zero elsewhere (full layout).
  void project(std::span<const double> vals, std::vector<double>& g) const {
    for (std::size_t i = 0; i < free.size(); ++i) {
      double* gi = g.data() + i * nc;
      if (!free[i]) {
        std::fill(gi, gi + nc, 0.0);
        continue;
      }
      const double* u = vals.data() + i * nc;
      double s = 0.0;
      for (int c = 0; c < nc; ++c) s += gi[c] * u[c];
      for (int c = 0; c < nc; ++c) gi[c] -= s * u[c];
    }
  }

  // Free-node components of a full nodal vector.
  void gather(std::span<const double> full, std::vector<double>& compact) const {
    compact.resize(free_nodes.size() * nc);
    for (std::size_t f = 0; f < free_nodes.size(); ++f) {
      for (int c = 0; c < nc; ++c) compact[f * nc + c] = full[free_nodes[f] * nc + c];
    }
  }

  // Tangential projection of a compact vector at the free nodes of u.
  void project_compact(std::span<const double> vals, std::vector<double>& g) const {
    for (std::size_t f = 0; f < free_nodes.size(); ++f) {
      const double* u = vals.data() + free_nodes[f] * nc;
      double* gi = g.data() + f * nc;
      double s = 0.0;
      for (int c = 0; c < nc; ++c) s += gi[c] * u[c];
      for (int c = 0; c < nc; ++c) gi[c] -= s * u[c];
    }
  }
};

// Fixed-order blocked sum: deterministic and cheap.
double dot_all(std::span<const double> a, std::span<const double> b) {
  std::array<double, 4> part{};
  const std::size_t m = a.size() / 4 * 4;
  for (std::size_t i = 0; i < m; i += 4) {
    for (int k = 0; k < 4; ++k) part[k] += a[i + k] * b[i + k];
  }
  double tail = 0.0;
  for (std::size_t i = m; i < a.size(); ++i) tail += a[i] * b[i];
  return (part[0] + part[1]) + (part[2] + part[3]) + tail;
}

double max_nodal(std::span<const double> v, int nc) {
  double m = 0.0;
  for (std::size_t i = 0; i + nc <= v.size(); i += nc) {
    double s = 0.0;
    for (int c = 0; c < nc; ++c) s += v[i + c] * v[i + c];
    m = std::max(m, s);
  }
  return std::sqrt(m);
}

// u + t d renormalized at free nodes (d compact); clamped nodes copied bit for bit.
void retract(const Quadrature& q, std::span<const double> u, std::span<const double> dir, double t,
             std::vector<double>& out) {
  const int nc = q.nc;
  out.assign(u.begin(), u.end());
  for (std::size_t f = 0; f < q.free_nodes.size(); ++f) {
    const std::size_t i = q.free_nodes[f];
    double* o = out.data() + i * nc;
    double s = 0.0;
    for (int c = 0; c < nc; ++c) {
      o[c] = u[i * nc + c] + t * dir[f * nc + c];
      s += o[c] * o[c];
    }
    s = std::sqrt(s);
    if (s < 1e-8) {
      throw Error(ErrorCode::NearZeroVector, "step collapsed a nodal vector");
    }
    for (int c = 0; c < nc; ++c) o[c] /= s;
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

void MinimizeOptions::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, m); };
  if (!(lambda >= 0.0 && lambda < 1.0)) fail("lambda must lie in [0, 1)");
  if (max_iters < 0) fail("max_iters must be >= 0");
  if (refresh_period < 1) fail("refresh period must be >= 1");
  if (!(initial_step > 0.0)) fail("initial step must be positive");
  if (!(backtrack > 0.0 && backtrack < 1.0)) fail("backtracking factor must lie in (0, 1)");
  if (!(armijo > 0.0 && armijo < 1.0)) fail("sufficient-decrease constant must lie in (0, 1)");
  if (lbfgs_memory < 1) fail("L-BFGS memory must be >= 1");
  if (!(localizer_inner_h > 0.0 && localizer_outer_h > localizer_inner_h)) {
    fail("localizer radii must satisfy 0 < inner < outer");
  }
}

std::vector<double> hessian_gradient(const SphereField& u, const EnergyOptions& opts) {
  const Quadrature q(u, opts, false);
  std::vector<double> lap, grad;
  q.energy(u.values(), lap);
  q.gradient(lap, grad);
  for (std::size_t i = 0; i < q.free.size(); ++i) {
    if (!q.free[i]) std::fill(grad.begin() + i * q.nc, grad.begin() + (i + 1) * q.nc, 0.0);
  }
  return grad;
}

VectorField descent_direction(const SphereField& u, const EnergyOptions& opts) {
  const Quadrature q(u, opts, false);
  std::vector<double> lap, grad;
  q.energy(u.values(), lap);
  q.gradient(lap, grad);
  q.project(u.values(), grad);
  for (double& g : grad) g = -g;
  return VectorField(u.domain_ptr(), u.ncomp(), std::move(grad));
}

// --- relaxed surrogate ------------------------------------------------------------

RelaxedSurrogate::RelaxedSurrogate(const SphereField& u, const MinimizeOptions& opts) {
  const LatticeDomain& d = u.domain();
  const int n = d.dim();
  if (u.ncomp() != n) {
    throw Error(ErrorCode::DimensionMismatch, "relaxed energy needs maps into S^{n-1}");
  }
  const double h = d.spacing();
  sing_ = detect_singularities(u, opts.detect);
  if (sing_.points.empty()) return;

  const double inner = opts.localizer_inner_h * h;
  const double outer = opts.localizer_outer_h * h;
  // The dual graph covers the transport tube plus every localizer ball.
  TransportGraph g = transport_graph(d, sing_);
  if (g.tube) {
    for (const Singularity& s : sing_.points) {
      d.for_each_in_ball(s.position, outer + 2.0 * h, [&](std::size_t i, double) { g.mask[i] = 1; });
    }
  }
  DualResult dual;
  try {
    dual = relaxed_L_dual(sing_, d, g);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Disconnected || !g.tube) throw;
    dual = relaxed_L_dual(sing_, d, TransportGraph{});
  }
  L_ = dual.value;

  // phi = chi * xi, chi = max of the per-singularity cut-offs.
  std::vector<double> phi(d.size(), 0.0);
  std::vector<std::size_t> touched;
  std::vector<std::uint8_t> mark(d.size(), 0);
  for (const Singularity& s : sing_.points) {
    d.for_each_in_ball(s.position, outer + h, [&](std::size_t i, double r) {
      const double chi = smooth_cutoff(r, inner, outer);
      if (!mark[i]) {
        mark[i] = 1;
        touched.push_back(i);
      }
      if (chi > 0.0 && std::isfinite(dual.xi[i])) phi[i] = std::max(phi[i], chi);
    });
  }
  for (std::size_t i : touched) phi[i] = phi[i] > 0.0 ? phi[i] * dual.xi[i] : 0.0;
  std::sort(touched.begin(), touched.end());

  Stencil st;
  for (std::size_t i : touched) {
    std::array<double, kMaxDim> grad{};
    bool any = false;
    for (int a = 0; a < n; ++a) {
      st.clear();
      if (!d.derivative_stencil(i, a, st)) continue;
      for (const StencilTap& t : st) grad[a] += t.coef * phi[static_cast<std::size_t>(t.node)];
      any = any || grad[a] != 0.0;
    }
    if (!any) continue;
    support_.push_back(i);
    for (int a = 0; a < n; ++a) weight_dir_.push_back(-d.weight(i) * grad[a]);
  }
}

double RelaxedSurrogate::value(const SphereField& u) const {
  const LatticeDomain& d = u.domain();
  const int n = d.dim();
  std::array<double, kMaxDim * kMaxDim> J{}, A{};
  Stencil st;
  Accumulator acc;
  for (std::size_t k = 0; k < support_.size(); ++k) {
    const std::size_t i = support_[k];
    std::fill(J.begin(), J.end(), 0.0);
    for (int a = 0; a < n; ++a) {
      st.clear();
      d.derivative_stencil(i, a, st);
      for (const StencilTap& t : st) {
        const auto v = u.at(static_cast<std::size_t>(t.node));
        for (int c = 0; c < n; ++c) J[a * n + c] += t.coef * v[c];
      }
    }
    // V . D(u) = det(J + u V^T) - det(J) (matrix determinant lemma).
    const auto ui = u.at(i);
    const double* V = weight_dir_.data() + k * n;
    A = J;
    for (int a = 0; a < n; ++a) {
      for (int c = 0; c < n; ++c) A[a * n + c] += ui[c] * V[a];
    }
    acc.add(determinant(std::span<const double>(A.data(), n * n), n) -
            determinant(std::span<const double>(J.data(), n * n), n));
  }
  return acc.value();
}

void RelaxedSurrogate::add_gradient(const SphereField& u, double scale,
                                    std::vector<double>& grad) const {
  const LatticeDomain& d = u.domain();
  const int n = d.dim();
  std::array<double, kMaxDim * kMaxDim> J{}, A{}, cofA{}, cofJ{};
  std::array<Stencil, kMaxDim> st;
  for (std::size_t k = 0; k < support_.size(); ++k) {
    const std::size_t i = support_[k];
    std::fill(J.begin(), J.end(), 0.0);
    for (int a = 0; a < n; ++a) {
      st[a].clear();
      d.derivative_stencil(i, a, st[a]);
      for (const StencilTap& t : st[a]) {
        const auto v = u.at(static_cast<std::size_t>(t.node));
        for (int c = 0; c < n; ++c) J[a * n + c] += t.coef * v[c];
      }
    }
    const auto ui = u.at(i);
    const double* V = weight_dir_.data() + k * n;
    A = J;
    for (int a = 0; a < n; ++a) {
      for (int c = 0; c < n; ++c) A[a * n + c] += ui[c] * V[a];
    }
    cofactors(A.data(), n, cofA.data());
    cofactors(J.data(), n, cofJ.data());
    // d/du_i: cof(A) V; d/dJ_{:,a}: cof(A)_{:,a} - cof(J)_{:,a}.
    double* gi = grad.data() + i * n;
    for (int c = 0; c < n; ++c) {
      double s = 0.0;
      for (int a = 0; a < n; ++a) s += cofA[a * n + c] * V[a];
      gi[c] += scale * s;
    }
    for (int a = 0; a < n; ++a) {
      for (const StencilTap& t : st[a]) {
        double* gj = grad.data() + static_cast<std::size_t>(t.node) * n;
        for (int c = 0; c < n; ++c) {
          gj[c] += scale * t.coef * (cofA[a * n + c] - cofJ[a * n + c]);
        }
      }
    }
  }
}

// --- minimization ---------------------------------------------------------------

namespace {

MinimizeResult run(const SphereField& u0, const MinimizeOptions& opts, bool relaxed) {
  opts.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const LatticeDomain& d = u0.domain();
  const int nc = u0.ncomp();
  const double sigma = sphere_area(d.dim() - 1);
  const bool use_relaxed = relaxed && opts.lambda > 0.0;
  if (use_relaxed && nc != d.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "relaxed energy needs maps into S^{n-1}");
  }

  // Core strengths are frozen at the start so the correction is a constant.
  EnergyOptions eopts = opts.energy;
  if (!eopts.cores.empty()) {
    const auto detail = hessian_energy_detail(u0, eopts);
    for (std::size_t c = 0; c < eopts.cores.size(); ++c) {
      eopts.cores[c].strength = detail.cores[c].strength;
    }
  }
  const Quadrature q(u0, eopts, true);

  RunReport report;
  report.config = opts;
  std::vector<double> u(u0.values().begin(), u0.values().end());
  auto field = [&](const std::vector<double>& v) {
    return SphereField::adopt(VectorField(u0.domain_ptr(), nc, v), 1e-10);
  };

  std::optional<RelaxedSurrogate> sur;
  double T_ref = 0.0, L_ref = 0.0;
  const double coupling = 16.0 * opts.lambda;
  std::vector<double> lap, full, grad, trial;

  // Objective value; leaves the Laplacians of v in `lap`.
  auto objective = [&](const std::vector<double>& v, double* hessian_out) {
    const double H = q.energy(v, lap);
    if (hessian_out) *hessian_out = H;
    if (!sur) return H;
    return H + coupling * (sigma * L_ref + sur->value(field(v)) - T_ref);
  };
  // Compact tangential gradient at v, from the `lap` of the last objective call on v.
  auto compact_gradient = [&](const std::vector<double>& v, std::vector<double>& g) {
    q.gradient(lap, full);
    if (sur) sur->add_gradient(field(v), coupling, full);
    q.gather(full, g);
    q.project_compact(v, g);
  };

  auto refresh = [&](IterationRecord& rec) {
    const SphereField f = field(u);
    sur.emplace(f, opts);
    L_ref = sur->connection();
    T_ref = sur->value(f);
    rec.refresh = true;
    rec.L = L_ref;
    rec.true_H_lambda = rec.hessian + coupling * sigma * L_ref;
    rec.event = "refresh: " + std::to_string(sur->singularities().points.size()) +
                " singularities, L = " + fmt(L_ref) + ", surrogate charge term = " +
                fmt(T_ref / sigma);
  };

  IterationRecord rec0;
  double H = q.energy(u, lap);
  rec0.hessian = H;
  rec0.grad4 = q.grad4(u);
  if (use_relaxed) refresh(rec0);
  double F = objective(u, nullptr);
  rec0.H_lambda = F;
  compact_gradient(u, grad);
  const double g0 = std::sqrt(dot_all(grad, grad));
  rec0.grad_norm = g0;
  report.trace.push_back(rec0);

  struct Pair {
    std::vector<double> s, y;
    double ys;
  };
  std::deque<Pair> memory;
  std::vector<double> dir(grad.size()), old_grad;
  report.stop_reason = "max_iters";
  std::deque<double> recent{H};
  double last_L = L_ref;

  for (int it = 1; it <= opts.max_iters; ++it) {
    const double gnorm = std::sqrt(dot_all(grad, grad));
    if (gnorm == 0.0 || gnorm <= opts.grad_tol * g0) {
      report.converged = true;
      report.stop_reason = "gradient tolerance";
      break;
    }
    // Direction: L-BFGS two-loop recursion on the tangent gradient.
    bool fresh = true;
    for (std::size_t k = 0; k < dir.size(); ++k) dir[k] = -grad[k];
    if (opts.rule == DirectionRule::LBFGS && !memory.empty()) {
      std::vector<double> alpha(memory.size());
      for (std::size_t m = memory.size(); m-- > 0;) {
        alpha[m] = dot_all(memory[m].s, dir) / memory[m].ys;
        for (std::size_t k = 0; k < dir.size(); ++k) dir[k] -= alpha[m] * memory[m].y[k];
      }
      const Pair& last = memory.back();
      const double gamma = last.ys / dot_all(last.y, last.y);
      for (double& v : dir) v *= gamma;
      for (std::size_t m = 0; m < memory.size(); ++m) {
        const double beta = dot_all(memory[m].y, dir) / memory[m].ys;
        for (std::size_t k = 0; k < dir.size(); ++k) dir[k] += (alpha[m] - beta) * memory[m].s[k];
      }
      q.project_compact(u, dir);
      fresh = false;
    }
    double slope = dot_all(grad, dir);
    if (!(slope < -1e-14 * gnorm * std::sqrt(dot_all(dir, dir)))) {
      for (std::size_t k = 0; k < dir.size(); ++k) dir[k] = -grad[k];
      slope = -gnorm * gnorm;
      memory.clear();
      fresh = true;
    }
    const double move = max_nodal(dir, nc);
    double t = fresh ? opts.initial_step / move : std::min(1.0, 0.25 / move);

    double Ftrial = 0.0, Htrial = 0.0;
    bool accepted = false;
    for (int b = 0; b <= opts.max_backtracks; ++b) {
      retract(q, u, dir, t, trial);
      Ftrial = objective(trial, &Htrial);
      if (Ftrial <= F + opts.armijo * t * slope) {
        accepted = true;
        break;
      }
      t *= opts.backtrack;
    }
    if (!accepted) {
      if (!fresh) {
        // Retry the same iteration along the plain gradient.
        memory.clear();
        --it;
        continue;
      }
      report.line_search_failed = true;
      report.stop_reason = "line search failed";
      break;
    }

    Pair pair;
    q.gather(trial, pair.s);
    {
      std::vector<double> cur;
      q.gather(u, cur);
      for (std::size_t k = 0; k < cur.size(); ++k) pair.s[k] -= cur[k];
    }
    old_grad = grad;
    u.swap(trial);
    F = Ftrial;
    H = Htrial;

    IterationRecord rec;
    rec.iteration = it;
    rec.hessian = H;
    rec.grad4 = q.grad4(u);
    rec.step = t;
    rec.L = L_ref;
    if (use_relaxed && it % opts.refresh_period == 0) {
      refresh(rec);
      if (std::abs(L_ref - last_L) > 2.0 * d.spacing()) {
        rec.event += "; topology change: L jumped by " + fmt(L_ref - last_L);
      }
      last_L = L_ref;
      F = objective(u, nullptr);
      memory.clear();
    }
    rec.H_lambda = F;
    compact_gradient(u, grad);
    rec.grad_norm = std::sqrt(dot_all(grad, grad));
    report.trace.push_back(rec);

    if (!rec.refresh && opts.rule == DirectionRule::LBFGS) {
      pair.y.resize(grad.size());
      for (std::size_t k = 0; k < grad.size(); ++k) pair.y[k] = grad[k] - old_grad[k];
      pair.ys = dot_all(pair.s, pair.y);
      if (pair.ys > 1e-12 * std::sqrt(dot_all(pair.s, pair.s) * dot_all(pair.y, pair.y))) {
        memory.push_back(std::move(pair));
        if (static_cast<int>(memory.size()) > opts.lbfgs_memory) memory.pop_front();
      }
    }

    recent.push_back(H);
    if (static_cast<int>(recent.size()) > opts.stall_window) {
      recent.pop_front();
      if (!use_relaxed &&
          recent.front() - recent.back() <= opts.stall_tol * std::abs(recent.front())) {
        report.converged = true;
        report.stop_reason = "stalled";
        break;
      }
    }
  }
  report.iterations = static_cast<int>(report.trace.size()) - 1;

  SphereField out = field(u);
  std::optional<double> L_final;
  if (nc == d.dim()) report.final_singularities = detect_singularities(out, opts.detect);
  if (use_relaxed) L_final = minimal_connection(report.final_singularities, d).value;
  report.final_energy = energy_report(out, opts.lambda, L_final, eopts);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(out), std::move(report)};
}

}  // namespace

MinimizeResult minimize_hessian(const SphereField& u0, const MinimizeOptions& opts) {
  MinimizeOptions o = opts;
  o.lambda = 0.0;
  return run(u0, o, false);
}

MinimizeResult minimize_relaxed(const SphereField& u0, const MinimizeOptions& opts) {
  return run(u0, opts, true);
}

TraceAudit energy_trace_audit(const RunReport& report) {
  TraceAudit a;
  const auto& tr = report.trace;
  for (std::size_t k = 1; k < tr.size(); ++k) {
    const auto& prev = tr[k - 1];
    const auto& cur = tr[k];
    if (!(cur.step > 0.0)) {
      a.pass = false;
      a.issues.push_back("iteration " + std::to_string(cur.iteration) + ": non-positive step");
    }
    if (cur.refresh) {
      // The record holds the post-refresh surrogate; the step itself was taken
      // with the previous potential, so only its pre-refresh H can be compared.
      a.refresh_jumps.push_back(cur.iteration);
      continue;
    }
    const double tol = 1e-12 * std::max(1.0, std::abs(prev.H_lambda));
    if (cur.H_lambda > prev.H_lambda + tol) {
      a.pass = false;
      a.issues.push_back("iteration " + std::to_string(cur.iteration) + ": H_lambda rose from " +
                         fmt(prev.H_lambda) + " to " + fmt(cur.H_lambda));
    }
  }
  return a;
}

}  // namespace biharm
