#include "biharm/energy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "biharm/errors.hpp"

namespace biharm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct CoreMask {
  std::vector<std::uint8_t> excluded;
  std::vector<CoreCorrection> corrections;
  double added = 0.0;
};

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

CoreMask build_cores(const LatticeDomain& d, std::span<const double> density,
                     const std::vector<SingularCore>& cores) {
  CoreMask m;
  if (cores.empty()) return m;
  const int n = d.dim();
  const double h = d.spacing();
  if (n <= 4) {
    throw Error(ErrorCode::InvalidArgument, "singular cores need n >= 5 (r^-4 must be integrable)");
  }
  const double sigma = sphere_area(n - 1);
  m.excluded.assign(d.size(), 0);
  for (const SingularCore& c : cores) {
    if (static_cast<int>(c.center.size()) != n) {
      throw Error(ErrorCode::DimensionMismatch, "singular core center dimension");
    }
    CoreCorrection corr;
    Accumulator excluded;
    d.for_each_in_ball(c.center, c.radius, [&](std::size_t i, double) {
      if (!m.excluded[i]) excluded.add(d.weight(i));
      m.excluded[i] = 1;
    });
    corr.excluded_weight = excluded.value();
    if (c.strength) {
      corr.strength = *c.strength;
    } else {
      Accumulator num, den;
      d.for_each_in_ball(c.center, c.radius + 2.0 * h, [&](std::size_t i, double r) {
        if (r <= c.radius) return;
        num.add(d.weight(i) * density[i] * std::pow(r, 4));
        den.add(d.weight(i));
      });
      corr.strength = den.value() > 0.0 ? num.value() / den.value() : 0.0;
    }
    // Ball of the same volume as the excluded cells.
    const double rho = std::pow(n * corr.excluded_weight / sigma, 1.0 / n);
    corr.added = corr.strength * sigma * std::pow(rho, n - 4) / (n - 4);
    m.added += corr.added;
    m.corrections.push_back(corr);
  }
  return m;
}

void gradient_at(const LatticeDomain& d, std::span<const double> vals, int nc, std::size_t i,
                 Stencil& st, std::span<double> out) {
  const int n = d.dim();
  for (int a = 0; a < n; ++a) {
    st.clear();
    double* g = out.data() + a * nc;
    std::fill(g, g + nc, 0.0);
    if (!d.derivative_stencil(i, a, st)) continue;
    for (const StencilTap& t : st) {
      const double* v = vals.data() + static_cast<std::size_t>(t.node) * nc;
      for (int c = 0; c < nc; ++c) g[c] += t.coef * v[c];
    }
  }
}

}  // namespace

std::vector<double> laplacian_values(const VectorField& u, std::size_t* missing) {
  const LatticeDomain& d = u.domain();
  const int nc = u.ncomp();
  const auto vals = u.values();
  std::vector<double> out(vals.size(), 0.0);
  std::size_t miss = 0;
  Stencil st;
  for (std::size_t i = 0; i < d.size(); ++i) {
    st.clear();
    if (!d.laplacian_stencil(i, st)) {
      ++miss;
      continue;
    }
    double* o = out.data() + i * nc;
    for (const StencilTap& t : st) {
      const double* v = vals.data() + static_cast<std::size_t>(t.node) * nc;
      for (int c = 0; c < nc; ++c) o[c] += t.coef * v[c];
    }
  }
  if (missing) *missing = miss;
  return out;
}

std::vector<double> laplacian_sq_density(const VectorField& u) {
  const int nc = u.ncomp();
  const std::vector<double> lap = laplacian_values(u);
  std::vector<double> out(u.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (int c = 0; c < nc; ++c) s += lap[i * nc + c] * lap[i * nc + c];
    out[i] = s;
  }
  return out;
}

std::vector<double> gradient_sq_density(const VectorField& u) {
  const LatticeDomain& d = u.domain();
  const int nc = u.ncomp();
  const int n = d.dim();
  std::vector<double> out(u.size());
  std::vector<double> g(static_cast<std::size_t>(n * nc));
  Stencil st;
  for (std::size_t i = 0; i < out.size(); ++i) {
    gradient_at(d, u.values(), nc, i, st, g);
    double s = 0.0;
    for (double v : g) s += v * v;
    out[i] = s;
  }
  return out;
}

std::vector<std::uint8_t> core_exclusion_mask(const LatticeDomain& d,
                                              const std::vector<SingularCore>& cores) {
  std::vector<std::uint8_t> mask(d.size(), 0);
  for (const SingularCore& c : cores) {
    d.for_each_in_ball(c.center, c.radius, [&](std::size_t i, double) { mask[i] = 1; });
  }
  return mask;
}

QuadratureResult integrate_with_cores(const LatticeDomain& d, std::span<const double> density,
                                      const EnergyOptions& opts) {
  const CoreMask mask = build_cores(d, density, opts.cores);
  Accumulator acc;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!mask.excluded.empty() && mask.excluded[i]) continue;
    acc.add(density[i] * d.weight(i));
  }
  QuadratureResult r;
  r.singular_correction = mask.added;
  r.value = acc.value() + mask.added;
  r.cores = mask.corrections;
  return r;
}

QuadratureResult hessian_energy_detail(const VectorField& u, const EnergyOptions& opts) {
  const std::vector<double> dens = laplacian_sq_density(u);
  return integrate_with_cores(u.domain(), dens, opts);
}

QuadratureResult grad4_energy_detail(const VectorField& u, const EnergyOptions& opts) {
  std::vector<double> dens = gradient_sq_density(u);
  for (double& v : dens) v *= v;
  return integrate_with_cores(u.domain(), dens, opts);
}

double hessian_energy(const VectorField& u, const EnergyOptions& opts) {
  return hessian_energy_detail(u, opts).value;
}

double grad4_energy(const VectorField& u, const EnergyOptions& opts) {
  return grad4_energy_detail(u, opts).value;
}

ResidualResult el_residual(const SphereField& u, const ResidualOptions& opts) {
  const LatticeDomain& d = u.domain();
  const int n = d.dim();
  const int nc = u.ncomp();
  const double h = d.spacing();
  const std::size_t N = d.size();
  const auto vals = u.values();
  const double ih2 = 1.0 / (h * h);
  const double i2h = 0.5 / h;

  // Central quantities at nodes with a full 3-point stencil on every axis.
  std::vector<double> lap(N * nc, kNaN);
  std::vector<double> g2(N, kNaN);
  std::vector<double> flux(N * n, kNaN);  // (grad u . lap u)_a
  std::vector<double> du(static_cast<std::size_t>(n * nc));
  for (std::size_t i = 0; i < N; ++i) {
    if (!d.has_central_stencil(i)) continue;
    double* L = lap.data() + i * nc;
    std::fill(L, L + nc, 0.0);
    for (int a = 0; a < n; ++a) {
      const std::size_t p = static_cast<std::size_t>(d.neighbor(i, a, +1));
      const std::size_t m = static_cast<std::size_t>(d.neighbor(i, a, -1));
      for (int c = 0; c < nc; ++c) {
        L[c] += (vals[p * nc + c] - 2.0 * vals[i * nc + c] + vals[m * nc + c]) * ih2;
        du[a * nc + c] = (vals[p * nc + c] - vals[m * nc + c]) * i2h;
      }
    }
    double s = 0.0;
    for (double v : du) s += v * v;
    g2[i] = s;
    for (int a = 0; a < n; ++a) {
      double f = 0.0;
      for (int c = 0; c < nc; ++c) f += du[a * nc + c] * L[c];
      flux[i * n + a] = f;
    }
  }

  std::vector<std::uint8_t> skip;
  if (!opts.cores.empty()) {
    skip.assign(N, 0);
    for (const SingularCore& c : opts.cores) {
      d.for_each_in_ball(c.center, c.radius, [&](std::size_t i, double) { skip[i] = 1; });
    }
  }

  ResidualResult out;
  out.residual.assign(N * nc, kNaN);
  Accumulator acc;
  std::vector<double> R(nc);
  for (std::size_t i = 0; i < N; ++i) {
    if (std::isnan(g2[i])) continue;
    if (!skip.empty() && skip[i]) continue;
    if (opts.min_depth > 0.0 && d.depth(i) < opts.min_depth) continue;
    bool ok = true;
    for (int a = 0; a < n && ok; ++a) {
      for (int dir : {-1, 1}) {
        if (std::isnan(g2[static_cast<std::size_t>(d.neighbor(i, a, dir))])) ok = false;
      }
    }
    if (!ok) continue;
    const double* L = lap.data() + i * nc;
    double lap_sq = 0.0;
    for (int c = 0; c < nc; ++c) lap_sq += L[c] * L[c];
    double div = 0.0, lap_g2 = 0.0;
    std::fill(R.begin(), R.end(), 0.0);
    for (int a = 0; a < n; ++a) {
      const std::size_t p = static_cast<std::size_t>(d.neighbor(i, a, +1));
      const std::size_t m = static_cast<std::size_t>(d.neighbor(i, a, -1));
      for (int c = 0; c < nc; ++c) {
        R[c] += (lap[p * nc + c] - 2.0 * L[c] + lap[m * nc + c]) * ih2;
      }
      div += (flux[p * n + a] - flux[m * n + a]) * i2h;
      lap_g2 += (g2[p] - 2.0 * g2[i] + g2[m]) * ih2;
    }
    const double coef = lap_sq + 2.0 * div - lap_g2;
    const auto ui = u.at(i);
    double radial = 0.0;
    for (int c = 0; c < nc; ++c) {
      R[c] += coef * ui[c];
      radial += R[c] * ui[c];
    }
    double tang = 0.0;
    for (int c = 0; c < nc; ++c) {
      out.residual[i * nc + c] = R[c];
      const double t = R[c] - radial * ui[c];
      tang += t * t;
    }
    acc.add(tang * d.weight(i));
    ++out.nodes;
  }
  out.tangential_norm = std::sqrt(acc.value());
  return out;
}

void project_pi(std::span<const double> a, std::span<const double> xi, std::span<double> out) {
  if (norm(a) > 0.5 + 1e-15) throw Error(ErrorCode::InvalidCenter, "|a| must be <= 1/2");
  double r2 = 0.0;
  for (std::size_t c = 0; c < xi.size(); ++c) {
    out[c] = xi[c] - a[c];
    r2 += out[c] * out[c];
  }
  const double r = std::sqrt(r2);
  if (!(r > 0.0)) throw Error(ErrorCode::NearZeroVector, "projection center equals the value");
  for (std::size_t c = 0; c < xi.size(); ++c) out[c] /= r;
}

void project_pi_inverse(std::span<const double> a, std::span<const double> xi,
                        std::span<double> out) {
  const double an = norm(a);
  if (an > 0.5 + 1e-15) throw Error(ErrorCode::InvalidCenter, "|a| must be <= 1/2");
  const double ax = dot(a, xi);
  const double t = -ax + std::sqrt(ax * ax + 1.0 - an * an);
  for (std::size_t c = 0; c < xi.size(); ++c) out[c] = a[c] + t * xi[c];
}

double extension_constant(int k, bool outside_unit_sphere) {
  const double sigma = sphere_area(k);
  if (outside_unit_sphere) return 16.0 / 9.0 * sigma / (k + 1);
  if (k <= 3) throw Error(ErrorCode::InvalidArgument, "the inner-case constant needs k >= 4");
  return std::pow(1.5, k - 3) * sigma / (k - 3);
}

namespace {

double radical_inverse(std::uint64_t i, int base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= base;
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

std::vector<std::vector<double>> halton_ball(int dim, int count) {
  static constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19};
  std::vector<std::vector<double>> pts;
  for (std::uint64_t i = 1; static_cast<int>(pts.size()) < count; ++i) {
    std::vector<double> p(dim);
    for (int c = 0; c < dim; ++c) p[c] = radical_inverse(i, kPrimes[c]) - 0.5;
    if (norm(p) <= 0.5) pts.push_back(std::move(p));
  }
  return pts;
}

VectorField apply_projection(const VectorField& v, std::span<const double> a) {
  VectorField out(v.domain_ptr(), v.ncomp());
  for (std::size_t i = 0; i < v.size(); ++i) project_pi(a, v.at(i), out.at(i));
  return out;
}

}  // namespace

ExtensionResult extend_to_sphere(const VectorField& v, const ExtensionOptions& opts) {
  const LatticeDomain& d = v.domain();
  const int nc = v.ncomp();
  if (opts.centers < 1) throw Error(ErrorCode::InvalidArgument, "need at least one center");
  double vmin = std::numeric_limits<double>::infinity(), vmax = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = norm(v.at(i));
    vmin = std::min(vmin, r);
    vmax = std::max(vmax, r);
    if (d.clamped(i) && std::abs(r - 1.0) > 1e-12) {
      throw Error(ErrorCode::InvalidArgument,
                  "extension input must be unit on the boundary layers (node " +
                      std::to_string(i) + ")");
    }
  }

  std::vector<std::vector<double>> centers =
      opts.force_origin ? std::vector<std::vector<double>>{std::vector<double>(nc, 0.0)}
                        : halton_ball(nc, opts.centers);

  ExtensionResult res;
  double best = std::numeric_limits<double>::infinity();
  Accumulator mean;
  for (const auto& a : centers) {
    double closest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < v.size(); ++i) closest = std::min(closest, distance(v.at(i), a));
    if (closest < opts.skip_distance) {
      ++res.skipped;
      continue;
    }
    const double e = hessian_energy(apply_projection(v, a));
    mean.add(e);
    ++res.sampled;
    if (e < best) {
      best = e;
      res.a0 = a;
    }
  }
  if (res.sampled == 0) {
    throw Error(ErrorCode::AllCentersDegenerate, "every sampled center lies on the input field");
  }
  res.mean_sampled_energy = mean.value() / static_cast<double>(res.sampled);

  VectorField w(v.domain_ptr(), nc);
  std::vector<double> tmp(nc);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto vi = v.at(i);
    auto wi = w.at(i);
    if (std::abs(norm(vi) - 1.0) <= 1e-13) {
      std::copy(vi.begin(), vi.end(), wi.begin());
      continue;
    }
    project_pi(res.a0, vi, tmp);
    project_pi_inverse(res.a0, tmp, wi);
  }
  // Exact copies keep their bits; projected values are unit to rounding.
  res.w = SphereField::adopt(std::move(w), 1e-12);
  res.energy_w = hessian_energy(res.w);
  res.energy_input = hessian_energy(v) + grad4_energy(v);
  res.ratio = res.energy_input > 0.0 ? res.energy_w / res.energy_input : 0.0;
  const int k = nc - 1;
  const double tol = 1e-12;
  if (vmin >= 1.0 - tol) {
    res.averaging_constant = extension_constant(k, true);
  } else if (vmax <= 1.0 + tol) {
    res.averaging_constant = extension_constant(k, false);
  } else {
    res.averaging_constant = std::max(extension_constant(k, true), extension_constant(k, false));
  }
  return res;
}

namespace {

double ball_integral_with_cores(const LatticeDomain& d, std::span<const double> density,
                                std::span<const double> x, double r, const EnergyOptions& opts) {
  std::vector<SingularCore> inside;
  for (const SingularCore& c : opts.cores) {
    if (distance(c.center, x) + c.radius <= r) inside.push_back(c);
  }
  const CoreMask mask = build_cores(d, density, inside);
  const double bulk = integrate_ball(d, x, r, [&](std::size_t i) {
    if (!mask.excluded.empty() && mask.excluded[i]) return 0.0;
    return density[i];
  });
  return bulk + mask.added;
}

}  // namespace

double theta_density(const VectorField& u, std::span<const double> x, double r,
                     const EnergyOptions& opts) {
  const LatticeDomain& d = u.domain();
  require_ball_inside(d, x, r);
  const std::vector<double> dens = laplacian_sq_density(u);
  return std::pow(r, 4 - d.dim()) * ball_integral_with_cores(d, dens, x, r, opts);
}

MonotoneQuantity sigma_monotone(const VectorField& u, std::span<const double> x, double r,
                                const EnergyOptions& opts) {
  const LatticeDomain& d = u.domain();
  const int n = d.dim();
  const int nc = u.ncomp();
  const double h = d.spacing();
  require_ball_inside(d, x, r + 1.5 * h);
  const std::vector<double> lap_sq = laplacian_sq_density(u);
  const std::vector<double> g2 = gradient_sq_density(u);

  MonotoneQuantity q;
  q.bulk = std::pow(r, 4 - n) * ball_integral_with_cores(d, lap_sq, x, r, opts);

  std::vector<double> grad(static_cast<std::size_t>(n * nc));
  std::array<double, kMaxDim> y{};
  Stencil st;
  const double first = shell_integrate(d, x, r, [&](std::size_t i) {
    gradient_at(d, u.values(), nc, i, st, grad);
    d.position(i, std::span<double>(y.data(), n));
    double rr = 0.0;
    for (int a = 0; a < n; ++a) {
      y[a] -= x[a];
      rr += y[a] * y[a];
    }
    rr = std::sqrt(rr);
    double dr2 = 0.0;
    for (int c = 0; c < nc; ++c) {
      double s = 0.0;
      for (int a = 0; a < n; ++a) s += y[a] / rr * grad[a * nc + c];
      dr2 += s * s;
    }
    return 4.0 * g2[i] - 4.0 * dr2;
  });
  const ShellIntegrals sg = shell_integrate_with_derivative(d, x, r, [&](std::size_t i) {
    return g2[i];
  });
  q.boundary = std::pow(r, 3 - n) * (first + r * sg.radial_derivative);
  q.value = q.bulk + q.boundary;
  return q;
}

double caccioppoli_ratio(const VectorField& u, std::span<const double> x0, double R,
                         const EnergyOptions& opts) {
  const LatticeDomain& d = u.domain();
  const int nc = u.ncomp();
  require_ball_inside(d, x0, R);
  const double vol = integrate_ball(d, x0, R, [](std::size_t) { return 1.0; });
  std::vector<double> avg(nc);
  for (int c = 0; c < nc; ++c) {
    avg[c] = integrate_ball(d, x0, R, [&](std::size_t i) { return u.at(i)[c]; }) / vol;
  }
  const double rhs = integrate_ball(d, x0, R, [&](std::size_t i) {
    double s = 0.0;
    for (int c = 0; c < nc; ++c) s += (u.at(i)[c] - avg[c]) * (u.at(i)[c] - avg[c]);
    return s + s * s;
  }) / std::pow(R, 4);
  const std::vector<double> dens = laplacian_sq_density(u);
  const double lhs = ball_integral_with_cores(d, dens, x0, 0.5 * R, opts);
  if (lhs < 1e-14 && rhs < 1e-14) return 0.0;
  return lhs / rhs;
}

EnergyReport energy_report(const SphereField& u, double lambda, std::optional<double> relaxed_L,
                           const EnergyOptions& opts) {
  if (!(lambda >= 0.0 && lambda < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "lambda must lie in [0, 1)");
  }
  EnergyReport r;
  const QuadratureResult H = hessian_energy_detail(u, opts);
  r.hessian = H.value;
  r.singular_correction = H.singular_correction;
  r.grad4 = grad4_energy(u, opts);
  r.lambda = lambda;
  r.q_factor = (1.0 + lambda) / (1.0 - lambda);
  ResidualOptions ro;
  ro.cores = opts.cores;
  r.el_residual_tangential = el_residual(u, ro).tangential_norm;
  if (relaxed_L) {
    r.relaxed_L = relaxed_L;
    r.H_lambda = r.hessian + 16.0 * lambda * sphere_area(u.k()) * *relaxed_L;
  }
  return r;
}

}  // namespace biharm
