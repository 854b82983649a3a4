#include "biharm/fields.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "biharm/errors.hpp"

namespace biharm {

VectorField::VectorField(DomainPtr domain, int ncomp)
    : domain_(std::move(domain)), ncomp_(ncomp), values_(domain_->size() * ncomp, 0.0) {
  if (ncomp < 1) throw Error(ErrorCode::InvalidArgument, "field needs at least one component");
}

VectorField::VectorField(DomainPtr domain, int ncomp, std::vector<double> values)
    : domain_(std::move(domain)), ncomp_(ncomp), values_(std::move(values)) {
  if (values_.size() != domain_->size() * static_cast<std::size_t>(ncomp)) {
    throw Error(ErrorCode::DimensionMismatch, "field payload does not match the lattice size");
  }
}

SphereField SphereField::adopt(VectorField v, double tol) {
  if (v.ncomp() < 2) throw Error(ErrorCode::DimensionMismatch, "sphere target needs k >= 1");
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = norm(v.at(i));
    if (!(std::abs(r - 1.0) <= tol)) {
      std::ostringstream msg;
      msg << "value at node " << i << " has norm " << r << ", expected 1";
      throw Error(ErrorCode::InvalidArgument, msg.str());
    }
  }
  return SphereField(std::move(v));
}

SphereField renormalize(const VectorField& v) {
  VectorField out = v;
  const int n = v.domain().dim();
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto x = out.at(i);
    const double r = norm(x);
    if (!(r >= 1e-8)) {
      std::ostringstream msg;
      msg << "|v| = " << r << " at node " << i << " (x =";
      for (int a = 0; a < n; ++a) msg << ' ' << v.domain().coord(i, a);
      msg << ')';
      throw Error(ErrorCode::NearZeroVector, msg.str());
    }
    for (double& c : x) c /= r;
  }
  return SphereField(std::move(out));
}

SphereField constant_field(DomainPtr d, std::span<const double> value) {
  const int nc = static_cast<int>(value.size());
  VectorField v(d, nc);
  for (std::size_t i = 0; i < v.size(); ++i) std::copy(value.begin(), value.end(), v.at(i).begin());
  return renormalize(v);
}

SphereField radial_map(DomainPtr d, std::span<const double> center, double sign) {
  const int n = d->dim();
  if (static_cast<int>(center.size()) != n) {
    throw Error(ErrorCode::DimensionMismatch, "radial map center dimension");
  }
  if (auto near = d->nearest_node(center)) {
    std::array<double, kMaxDim> y{};
    d->position(*near, std::span<double>(y.data(), n));
    double dist = 0.0;
    for (int a = 0; a < n; ++a) dist += (y[a] - center[a]) * (y[a] - center[a]);
    if (std::sqrt(dist) <= 1e-9 * d->spacing()) {
      throw Error(ErrorCode::CenterOnNode, "radial map center coincides with node " +
                                               std::to_string(*near));
    }
  }
  VectorField v(d, n);
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto x = v.at(i);
    d->position(i, x);
    for (int a = 0; a < n; ++a) x[a] = sign * (x[a] - center[a]);
  }
  return renormalize(v);
}

double septic_step(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  const double t2 = t * t;
  return t * (35.0 + t2 * (-35.0 + t2 * (21.0 - 5.0 * t2))) / 16.0;
}

void CapBubble::eval_profile(double theta, std::span<const double> y_prime,
                             std::span<double> out) const {
  eval_angle(std::numbers::pi * (1.0 - septic_step(theta)), y_prime, out);
}

void CapBubble::eval_angle(double f, std::span<const double> y_prime, std::span<double> out) const {
  const std::size_t m = y_prime.size();
  const double r = norm(y_prime);
  const double s = std::sin(f);
  for (std::size_t a = 0; a < m; ++a) out[a] = r > 0.0 ? s * y_prime[a] / r : 0.0;
  if (m > 0) out[0] *= orientation;
  out[m] = std::cos(f);
}

void CapBubble::eval(std::span<const double> omega, std::span<double> out) const {
  const std::size_t m = omega.size() - 1;
  const double beta = std::acos(std::clamp(omega[m], -1.0, 1.0));
  eval_profile(beta / beta1, omega.first(m), out);
}

DumbbellData dumbbell_boundary_data(DomainPtr d, const CapBubble& bubble) {
  const DomainSpec& spec = d->spec();
  if (spec.shape != ShapeKind::Dumbbell) {
    throw Error(ErrorCode::InvalidArgument, "dumbbell data needs a dumbbell domain");
  }
  const int n = d->dim();
  const int last = n - 1;
  const double R = spec.cap_radius;
  const double L = spec.neck_half_length;
  const double h = d->spacing();
  // The continuous competitor coincides with the singular map wherever |y| >= rho_c (caps)
  // or |x'| >= rho_c * beta1 / (pi/2) (neck), which covers the clamped band.
  const double rho_c = R - 3.0 * h;
  if (!(rho_c > 0.0)) throw Error(ErrorCode::InvalidArgument, "dumbbell too coarse for h");
  const double equator = 0.5 * std::numbers::pi / bubble.beta1;

  DumbbellData out;
  out.bubble = bubble;
  out.top_center.assign(n, 0.0);
  out.bottom_center.assign(n, 0.0);
  out.top_center[last] = L;
  out.bottom_center[last] = -L;

  // Profile of the smoothed neck: polar angle pi at the axis, 0 from the
  // clamped band inward (the clamp covers depth < 2h of the neck wall).
  const double rho_n = R - 2.0 * h;
  const double ramp = 2.0 * h;
  auto flat_step = [](double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * t * t * (35.0 + t * (-84.0 + t * (70.0 - 20.0 * t)));
  };

  VectorField sing(d, n);
  VectorField cont(d, n);
  VectorField smooth(d, n);
  std::array<double, kMaxDim> x{}, y{};
  for (std::size_t i = 0; i < d->size(); ++i) {
    d->position(i, std::span<double>(x.data(), n));
    // Fold the lower cap onto the upper one by reflecting x_n.
    const double z = std::abs(x[last]);
    const std::span<const double> xp(x.data(), static_cast<std::size_t>(last));
    auto s = sing.at(i);
    auto c = cont.at(i);
    if (z > L) {
      for (int a = 0; a < last; ++a) y[a] = x[a];
      y[last] = z - L;
      const double r = norm(std::span<const double>(y.data(), n));
      for (int a = 0; a < n; ++a) y[a] /= r;
      bubble.eval(std::span<const double>(y.data(), n), s);
      const double beta = std::acos(std::clamp(y[last], -1.0, 1.0));
      const double t = std::min(1.0, r / rho_c);
      bubble.eval_profile(t * beta / bubble.beta1, xp, c);
      std::copy(c.begin(), c.end(), smooth.at(i).begin());
    } else {
      std::fill(s.begin(), s.end(), 0.0);
      s[last] = 1.0;
      const double r = norm(xp);
      bubble.eval_profile(equator * r / rho_c, xp, c);
      // Blend the polar angles of the two degree-one profiles; both decrease
      // from pi to 0, so every slice keeps degree one.
      const double narrow = std::numbers::pi * (1.0 - septic_step(equator * r / rho_c));
      const double wide = std::numbers::pi * (1.0 - flat_step(r / rho_n));
      const double blend = flat_step((L - z) / ramp);
      bubble.eval_angle((1.0 - blend) * narrow + blend * wide, xp, smooth.at(i));
    }
  }
  out.singular = renormalize(sing);
  out.continuous = renormalize(cont);
  out.smoothed = renormalize(smooth);
  return out;
}

SphereField perturb_tangent(const SphereField& u, double amplitude, std::uint64_t seed,
                            const PerturbOptions& opts) {
  if (amplitude < 0.0) throw Error(ErrorCode::InvalidArgument, "amplitude must be >= 0");
  if (amplitude == 0.0 || opts.bumps <= 0) return u;
  const LatticeDomain& d = u.domain();
  const int n = d.dim();
  const int nc = u.ncomp();
  const double h = d.spacing();
  const double R = opts.bump_radius;

  std::vector<std::size_t> eligible;
  std::array<double, kMaxDim> x{};
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.depth(i) < R + 2.0 * h) continue;
    d.position(i, std::span<double>(x.data(), n));
    bool ok = true;
    for (const auto& p : opts.avoid) {
      double dist = 0.0;
      for (int a = 0; a < n; ++a) dist += (x[a] - p[a]) * (x[a] - p[a]);
      if (std::sqrt(dist) < opts.avoid_radius + R) ok = false;
    }
    if (ok) eligible.push_back(i);
  }
  if (eligible.empty()) {
    throw Error(ErrorCode::InvalidArgument, "no room for perturbation bumps inside the interior");
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);

  std::vector<double> field(u.values().size(), 0.0);
  std::vector<double> coef(nc);
  for (int b = 0; b < opts.bumps; ++b) {
    const std::size_t ci = eligible[pick(rng)];
    for (double& c : coef) c = gauss(rng);
    const std::vector<double> center = d.position(ci);
    d.for_each_in_ball(center, R, [&](std::size_t i, double dist) {
      const double s = dist / R;
      const double w = std::pow(1.0 - s * s, 4);
      for (int c = 0; c < nc; ++c) field[i * nc + c] += w * coef[c];
    });
  }

  double tmax = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto ui = u.at(i);
    double* t = field.data() + i * nc;
    const double p = dot(ui, std::span<const double>(t, nc));
    double r2 = 0.0;
    for (int c = 0; c < nc; ++c) {
      t[c] -= p * ui[c];
      r2 += t[c] * t[c];
    }
    tmax = std::max(tmax, std::sqrt(r2));
  }
  if (tmax == 0.0) return u;

  // Nodes outside every bump support keep their values bit for bit.
  SphereField out = u;
  const double scale = amplitude / tmax;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double* t = field.data() + i * nc;
    if (std::all_of(t, t + nc, [](double c) { return c == 0.0; })) continue;
    auto x = out.at(i);
    for (int c = 0; c < nc; ++c) x[c] += scale * t[c];
    const double r = norm(x);
    for (double& c : x) c /= r;
  }
  return out;
}

SphereField smooth_random_field(DomainPtr d, int k, std::uint64_t seed, double bias,
                                double frequency) {
  const int n = d->dim();
  const int nc = k + 1;
  constexpr int kModes = 4;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  struct Mode {
    std::vector<double> dir;
    std::vector<double> amp;
    double phase;
  };
  std::vector<Mode> modes(kModes);
  double amp_total = 0.0;
  for (Mode& m : modes) {
    m.dir.resize(n);
    for (double& c : m.dir) c = gauss(rng);
    const double len = norm(m.dir);
    for (double& c : m.dir) c *= frequency / len;
    m.amp.resize(nc);
    for (double& c : m.amp) c = gauss(rng);
    amp_total += norm(m.amp);
    m.phase = phase(rng);
  }
  // Random rotation of the bias direction keeps fields from all sharing e_0.
  std::vector<double> base(nc);
  for (double& c : base) c = gauss(rng);
  const double blen = norm(base);
  for (double& c : base) c *= bias / blen;

  VectorField v(d, nc);
  std::array<double, kMaxDim> x{};
  for (std::size_t i = 0; i < v.size(); ++i) {
    d->position(i, std::span<double>(x.data(), n));
    auto out = v.at(i);
    std::copy(base.begin(), base.end(), out.begin());
    for (const Mode& m : modes) {
      double arg = m.phase;
      for (int a = 0; a < n; ++a) arg += m.dir[a] * x[a];
      const double s = std::sin(arg) / amp_total;
      for (int c = 0; c < nc; ++c) out[c] += s * m.amp[c];
    }
  }
  return renormalize(v);
}

SphereField dipole_chain_field(DomainPtr d, std::span<const double> c,
                               std::span<const double> transverse, double scale) {
  const int n = d->dim();
  if (static_cast<int>(transverse.size()) != n) {
    throw Error(ErrorCode::DimensionMismatch, "transverse point dimension");
  }
  VectorField v(d, n);
  std::array<double, kMaxDim> x{};
  for (std::size_t i = 0; i < v.size(); ++i) {
    d->position(i, std::span<double>(x.data(), n));
    auto out = v.at(i);
    double p = scale;
    for (double cj : c) p *= x[0] - cj;
    out[0] = p;
    for (int a = 1; a < n; ++a) out[a] = x[a] - transverse[a];
  }
  return renormalize(v);
}

}  // namespace biharm
