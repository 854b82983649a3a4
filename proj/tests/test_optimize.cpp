#include <cmath>
#include <memory>
#include <random>

#include "biharm/errors.hpp"
#include "biharm/optimize.hpp"
#include "doctest.h"

using namespace biharm;

namespace {

DomainPtr make(const DomainSpec& s, double h) {
  return std::make_shared<const LatticeDomain>(LatticeDomain::build(s, h));
}

double inner(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Random direction, tangent to the sphere at u and zero on the clamped layers.
std::vector<double> tangent_direction(const SphereField& u, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  const int nc = u.ncomp();
  std::vector<double> v(u.values().size(), 0.0);
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (u.domain().clamped(i)) continue;
    const auto ui = u.at(i);
    double* vi = v.data() + i * nc;
    for (int c = 0; c < nc; ++c) vi[c] = g(rng);
    const double a = inner(ui, {vi, static_cast<std::size_t>(nc)});
    for (int c = 0; c < nc; ++c) vi[c] -= a * ui[c];
  }
  return v;
}

VectorField shifted(const VectorField& u, const std::vector<double>& v, double t) {
  std::vector<double> w(u.values().begin(), u.values().end());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] += t * v[k];
  return VectorField(u.domain_ptr(), u.ncomp(), std::move(w));
}

double l2_distance(const SphereField& a, const SphereField& b) {
  const auto& d = a.domain();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double t = 0.0;
    for (int c = 0; c < a.ncomp(); ++c) t += (a.at(i)[c] - b.at(i)[c]) * (a.at(i)[c] - b.at(i)[c]);
    s += d.weight(i) * t;
  }
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("Hessian gradient matches central differences of the quadrature") {
  auto d = make(DomainSpec::ball(3, {}, 1.0), 1.0 / 8);
  std::mt19937_64 rng(7);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto u = smooth_random_field(d, 2, seed);
    const auto grad = hessian_gradient(u);
    for (int trial = 0; trial < 3; ++trial) {
      const auto v = tangent_direction(u, rng);
      const double t = 1e-5;
      const double fd =
          (hessian_energy(shifted(u, v, t)) - hessian_energy(shifted(u, v, -t))) / (2.0 * t);
      const double exact = inner(grad, v);
      CHECK(std::abs(fd - exact) <= 1e-5 * std::abs(exact));
    }
  }
}

TEST_CASE("Descent direction is minus the tangential gradient in five dimensions") {
  auto d = make(DomainSpec::ball(5, {}, 1.0).cell_centered(), 1.0 / 6);
  std::mt19937_64 rng(11);
  const auto u = smooth_random_field(d, 4, 3);
  const auto dir = descent_direction(u);
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (d->clamped(i)) {
      for (double x : dir.at(i)) REQUIRE(x == 0.0);
    } else {
      REQUIRE(std::abs(inner(dir.at(i), u.at(i))) < 1e-9 * (1.0 + std::sqrt(inner(dir.at(i), dir.at(i)))));
    }
  }
  for (int trial = 0; trial < 3; ++trial) {
    const auto v = tangent_direction(u, rng);
    const double t = 1e-5;
    const double fd =
        (hessian_energy(shifted(u, v, t)) - hessian_energy(shifted(u, v, -t))) / (2.0 * t);
    const double exact = -inner(dir.values(), v);
    CHECK(std::abs(fd - exact) <= 1e-5 * std::abs(exact));
  }
}

TEST_CASE("Constant field has a zero descent direction") {
  auto d = make(DomainSpec::box({0, 0, 0}, {1, 1, 1}), 1.0 / 8);
  const std::vector<double> e{0.0, 0.6, 0.8};
  const auto dir = descent_direction(constant_field(d, e));
  for (double x : dir.values()) CHECK(std::abs(x) < 1e-12);
}

TEST_CASE("Relaxed surrogate gradient matches differences along the sphere") {
  auto d = make(DomainSpec::box({-1, -0.5, -0.5}, {1, 0.5, 0.5}), 1.0 / 10);
  const std::vector<double> c{-0.43, 0.41};
  const std::vector<double> y{0.0, 0.03, -0.02};
  const auto u = dipole_chain_field(d, c, y);
  MinimizeOptions opts;
  opts.lambda = 0.3;
  const RelaxedSurrogate s(u, opts);
  REQUIRE(s.singularities().points.size() == 2);
  CHECK(s.connection() > 0.5);

  std::vector<double> grad(u.values().size(), 0.0);
  s.add_gradient(u, 1.0, grad);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 4; ++trial) {
    const auto v = tangent_direction(u, rng);
    const double t = 1e-5;
    const double fd =
        (s.value(renormalize(shifted(u, v, t))) - s.value(renormalize(shifted(u, v, -t)))) /
        (2.0 * t);
    const double exact = inner(grad, v);
    CHECK(std::abs(fd - exact) <= 1e-5 * std::max(1e-8, std::abs(exact)));
  }
}

TEST_CASE("Hessian descent decreases monotonically and the audit catches a corrupted trace") {
  auto d = make(DomainSpec::ball(3, {}, 1.0), 1.0 / 8);
  const auto u0 = smooth_random_field(d, 2, 4);
  MinimizeOptions opts;
  opts.max_iters = 40;
  const auto r = minimize_hessian(u0, opts);
  REQUIRE(r.report.trace.size() >= 2);
  for (std::size_t k = 1; k < r.report.trace.size(); ++k) {
    CHECK(r.report.trace[k].hessian <= r.report.trace[k - 1].hessian);
  }
  CHECK(r.report.trace.back().hessian < r.report.trace.front().hessian);
  CHECK(energy_trace_audit(r.report).pass);
  CHECK(r.report.final_energy.hessian == doctest::Approx(r.report.trace.back().hessian).epsilon(1e-9));
  for (std::size_t i = 0; i < u0.size(); ++i) {
    if (!d->clamped(i)) continue;
    for (int c = 0; c < 3; ++c) REQUIRE(r.u.at(i)[c] == u0.at(i)[c]);
  }

  RunReport bad = r.report;
  bad.trace[2].H_lambda = bad.trace[1].H_lambda + 1.0;
  const auto audit = energy_trace_audit(bad);
  CHECK_FALSE(audit.pass);
  CHECK_FALSE(audit.issues.empty());
}

TEST_CASE("Relaxed minimization at lambda zero reproduces Hessian descent") {
  auto d = make(DomainSpec::ball(3, {}, 1.0), 1.0 / 8);
  const auto u0 = smooth_random_field(d, 2, 9);
  MinimizeOptions opts;
  opts.max_iters = 15;
  const auto a = minimize_hessian(u0, opts);
  const auto b = minimize_relaxed(u0, opts);
  REQUIRE(a.report.trace.size() == b.report.trace.size());
  for (std::size_t k = 0; k < a.u.values().size(); ++k) REQUIRE(a.u.values()[k] == b.u.values()[k]);
}

TEST_CASE("Relaxed descent keeps the surrogate monotone between refreshes") {
  auto d = make(DomainSpec::box({-1, -0.5, -0.5}, {1, 0.5, 0.5}), 1.0 / 10);
  const std::vector<double> c{-0.43, 0.41};
  const std::vector<double> y{0.0, 0.03, -0.02};
  const auto u0 = dipole_chain_field(d, c, y);
  MinimizeOptions opts;
  opts.lambda = 0.3;
  opts.max_iters = 30;
  opts.refresh_period = 10;
  const auto r = minimize_relaxed(u0, opts);
  const auto audit = energy_trace_audit(r.report);
  CHECK(audit.pass);
  for (const auto& rec : r.report.trace) {
    if (rec.refresh) CHECK(rec.H_lambda == doctest::Approx(rec.true_H_lambda).epsilon(1e-9));
  }
  CHECK(r.report.trace.front().refresh);
  CHECK(r.report.final_energy.relaxed_L.has_value());
}

TEST_CASE("Perturbed radial maps descend back toward the discrete minimizer") {
  const double h = 1.0 / 6;
  auto d = make(DomainSpec::ball(5, {}, 1.0).cell_centered(), h);
  const std::vector<double> c(5, 0.0);
  const auto phi = radial_map(d, c);
  MinimizeOptions opts;
  opts.energy.cores.push_back({c, 2.0 * h, 16.0});
  opts.max_iters = 300;
  const auto ref = minimize_hessian(phi, opts);
  opts.max_iters = 80;
  for (std::uint64_t seed = 1; seed <= 2; ++seed) {
    const auto u0 = perturb_tangent(phi, 0.2, seed);
    const auto r = minimize_hessian(u0, opts);
    CHECK(l2_distance(u0, ref.u) >= 4.0 * l2_distance(r.u, ref.u));
    CHECK(r.report.final_energy.hessian >= 0.999 * ref.report.final_energy.hessian);
  }
}

TEST_CASE("Invalid options are rejected") {
  MinimizeOptions o;
  o.lambda = 1.0;
  CHECK_THROWS_AS(o.validate(), Error);
  o.lambda = 0.2;
  o.localizer_outer_h = 1.0;
  CHECK_THROWS_AS(o.validate(), Error);
}
