#include <cmath>
#include <memory>
#include <numbers>
#include <random>

#include "biharm/errors.hpp"
#include "biharm/fields.hpp"
#include "doctest.h"

using namespace biharm;

namespace {

DomainPtr make(const DomainSpec& s, double h) {
  return std::make_shared<const LatticeDomain>(LatticeDomain::build(s, h));
}

double max_norm_error(const SphereField& u) {
  double e = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) e = std::max(e, std::abs(norm(u.at(i)) - 1.0));
  return e;
}

}  // namespace

TEST_CASE("renormalize") {
  auto d = make(DomainSpec::ball(5, {}, 1.0), 0.25);
  SUBCASE("constant vector") {
    VectorField v(d, 5);
    for (std::size_t i = 0; i < v.size(); ++i) v.at(i)[0] = 2.0;
    auto u = renormalize(v);
    for (std::size_t i = 0; i < u.size(); ++i) {
      CHECK(u.at(i)[0] == 1.0);
      CHECK(u.at(i)[3] == 0.0);
    }
    // idempotent
    auto w = renormalize(u);
    for (std::size_t j = 0; j < u.values().size(); ++j) {
      CHECK(std::abs(w.values()[j] - u.values()[j]) <= 1e-15);
    }
  }
  SUBCASE("random norms in [0.5, 2]") {
    VectorField v(d, 5);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> len(0.5, 2.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      auto x = v.at(i);
      for (double& c : x) c = g(rng);
      const double r = norm(x), target = len(rng);
      for (double& c : x) c *= target / r;
    }
    CHECK(max_norm_error(renormalize(v)) <= 1e-12);
  }
  SUBCASE("near-zero vector") {
    VectorField v(d, 5);
    try {
      renormalize(v);
      FAIL("expected NearZeroVector");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NearZeroVector);
    }
  }
}

TEST_CASE("radial map") {
  SUBCASE("value on a coordinate ray is exact") {
    auto d = make(DomainSpec::ball(5, {}, 1.0).cell_centered(), 0.125);
    const std::vector<double> c{0.01, 0.0625, 0.0625, 0.0625, 0.0625};
    auto u = radial_map(d, c);
    for (std::size_t i = 0; i < u.size(); ++i) {
      bool on_ray = d->coord(i, 0) > c[0];
      for (int a = 1; a < 5; ++a) on_ray = on_ray && d->coord(i, a) == c[a];
      if (!on_ray) continue;
      CHECK(u.at(i)[0] == 1.0);
      for (int a = 1; a < 5; ++a) CHECK(u.at(i)[a] == 0.0);
    }
  }
  SUBCASE("center on a node") {
    auto d = make(DomainSpec::ball(3, {}, 1.0), 0.25);
    const std::vector<double> c(3, 0.0);
    try {
      radial_map(d, c);
      FAIL("expected CenterOnNode");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::CenterOnNode);
    }
  }
  SUBCASE("gradient and Laplacian at |x| = 1/2 match the closed forms") {
    // A box around (1/2, 0, 0, 0, 0) keeps the 5D lattice small; the center
    // of the radial map lies outside it.
    const double h = 1.0 / 32;
    auto d = make(DomainSpec::box({0.3, -0.2, -0.2, -0.2, -0.2}, {0.7, 0.2, 0.2, 0.2, 0.2}), h);
    const std::vector<double> c(5, 0.0);
    auto u = radial_map(d, c);
    int checked = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      const auto x = d->position(i);
      const double r = norm(x);
      if (std::abs(r - 0.5) > 0.5 * h || d->clamped(i)) continue;
      auto g = gradient_fd(*d, u.values(), 5, i);
      double g2 = 0.0;
      for (double v : g) g2 += v * v;
      CHECK(std::abs(g2 / (4.0 / (r * r)) - 1.0) <= 0.05);
      auto lap = laplacian_fd(*d, u.values(), 5, i);
      double err = 0.0, ref = 0.0;
      for (int a = 0; a < 5; ++a) {
        const double exact = -4.0 * x[a] / (r * r * r);
        err += (lap[a] - exact) * (lap[a] - exact);
        ref += exact * exact;
      }
      CHECK(std::sqrt(err / ref) <= 0.05);
      if (++checked >= 50) break;
    }
    CHECK(checked == 50);
  }
}

TEST_CASE("wedge product") {
  SUBCASE("identity columns") {
    std::vector<double> e(20, 0.0);
    for (int j = 0; j < 4; ++j) e[j * 5 + j + 1] = 1.0;
    auto w = wedge(e, 5);
    CHECK(w[0] == 1.0);
    for (int a = 1; a < 5; ++a) CHECK(w[a] == 0.0);
  }
  SUBCASE("repeated argument") {
    std::vector<double> v{1, 2, 3, 4, 5, 1, 2, 3, 4, 5, 0, 1, 0, 2, 0, 3, 1, 0, 1, 1};
    for (double c : wedge(v, 5)) CHECK(std::abs(c) <= 1e-12);
  }
  SUBCASE("dimension mismatch") {
    std::vector<double> v(12, 1.0);
    CHECK_THROWS_AS(wedge(v, 5), Error);
  }
  SUBCASE("Hadamard bound and the quartic bound on random quadruples") {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> g;
    int violations = 0;
    for (int t = 0; t < 20000; ++t) {
      std::vector<double> v(20);
      double scale = std::exp(2.0 * g(rng));
      for (double& c : v) c = scale * g(rng);
      auto w = wedge(v, 5);
      double prod = 1.0, sum = 0.0;
      for (int j = 0; j < 4; ++j) {
        const double n2 = dot(std::span(v).subspan(j * 5, 5), std::span(v).subspan(j * 5, 5));
        prod *= std::sqrt(n2);
        sum += n2;
      }
      const double nw = norm(w);
      if (nw > prod * (1 + 1e-12)) ++violations;
      if (nw > sum * sum / 16.0 * (1 + 1e-12)) ++violations;
    }
    CHECK(violations == 0);
  }
  SUBCASE("wedge is orthogonal to its arguments and matches a cofactor expansion") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    std::vector<double> v(12);
    for (double& c : v) c = g(rng);
    auto w = wedge(v, 4);
    for (int j = 0; j < 3; ++j) CHECK(std::abs(dot(w, std::span(v).subspan(j * 4, 4))) <= 1e-12);
    // w . p = det(p, v1, v2, v3)
    std::vector<double> p{0.3, -1.0, 2.0, 0.5};
    std::vector<double> m(16);
    std::copy(p.begin(), p.end(), m.begin());
    std::copy(v.begin(), v.end(), m.begin() + 4);
    CHECK(dot(w, p) == doctest::Approx(determinant(m, 4)).epsilon(1e-12));
  }
}

TEST_CASE("cap bubble") {
  CapBubble b;
  std::vector<double> out(5);
  SUBCASE("flat at and below the cut-off angle") {
    for (double beta : {b.beta1, 1.2, std::numbers::pi / 2}) {
      std::vector<double> w{std::sin(beta), 0, 0, 0, std::cos(beta)};
      b.eval(w, out);
      CHECK(out[4] == 1.0);
      CHECK(out[0] == 0.0);
    }
  }
  SUBCASE("north pole maps to the south pole") {
    std::vector<double> w{0, 0, 0, 0, 1};
    b.eval(w, out);
    CHECK(out[4] == -1.0);
  }
  SUBCASE("unit valued") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int t = 0; t < 100; ++t) {
      std::vector<double> w(5);
      for (double& c : w) c = g(rng);
      w[4] = std::abs(w[4]);
      const double r = norm(w);
      for (double& c : w) c /= r;
      b.eval(w, out);
      CHECK(std::abs(norm(out) - 1.0) <= 1e-14);
    }
  }
  CHECK(septic_step(0.0) == 0.0);
  CHECK(septic_step(1.0) == 1.0);
  CHECK(septic_step(0.5) == doctest::Approx(0.85888671875).epsilon(1e-14));
}

TEST_CASE("dumbbell data") {
  const double h = 0.125;
  auto d = make(DomainSpec::dumbbell(1.0, 2.0).cell_centered(), h);
  auto data = dumbbell_boundary_data(d);
  CHECK(max_norm_error(data.singular) <= 1e-12);
  CHECK(max_norm_error(data.continuous) <= 1e-12);
  CHECK(max_norm_error(data.smoothed) <= 1e-12);
  for (std::size_t i = 0; i < d->size(); ++i) {
    const double z = std::abs(d->coord(i, 4));
    if (z <= 2.0) {
      CHECK(data.singular.at(i)[4] == 1.0);
    }
    if (d->clamped(i)) {
      for (int a = 0; a < 5; ++a) {
        CHECK(std::abs(data.singular.at(i)[a] - data.continuous.at(i)[a]) <= 1e-12);
        CHECK(std::abs(data.singular.at(i)[a] - data.smoothed.at(i)[a]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("smoothed dumbbell competitor: caps shared, neck sections z-independent") {
  const double h = 0.125;
  auto d = make(DomainSpec::dumbbell(1.0, 2.0).cell_centered(), h);
  auto data = dumbbell_boundary_data(d);
  for (std::size_t i = 0; i < d->size(); ++i) {
    const double z = d->coord(i, 4);
    if (std::abs(z) > 2.0) {
      for (int a = 0; a < 5; ++a) CHECK(data.smoothed.at(i)[a] == data.continuous.at(i)[a]);
    }
    // Sections well inside the neck are copies of the one nearest the waist.
    if (std::abs(z) <= 2.0 - 2.0 * h) {
      GridIndex g = d->grid_index(i);
      g[4] = d->grid_index(i, 4) < d->extents()[4] / 2 ? d->extents()[4] / 2 - 1 : d->extents()[4] / 2;
      const auto j = d->find(g);
      REQUIRE(j.has_value());
      for (int a = 0; a < 5; ++a) CHECK(data.smoothed.at(i)[a] == data.smoothed.at(*j)[a]);
    }
  }
}

TEST_CASE("tangent perturbation") {
  auto d = make(DomainSpec::ball(5, {}, 1.0).cell_centered(), 1.0 / 8);
  const std::vector<double> c(5, 0.0);
  auto u = radial_map(d, c);
  auto same = perturb_tangent(u, 0.0, 9);
  CHECK(std::equal(same.values().begin(), same.values().end(), u.values().begin()));
  auto p = perturb_tangent(u, 0.2, 9);
  CHECK(max_norm_error(p) <= 1e-12);
  double moved = 0.0;
  for (std::size_t i = 0; i < d->size(); ++i) {
    double diff = 0.0;
    for (int a = 0; a < 5; ++a) diff += std::abs(p.at(i)[a] - u.at(i)[a]);
    if (d->clamped(i)) {
      CHECK(diff == 0.0);
    }
    moved = std::max(moved, diff);
  }
  CHECK(moved > 0.05);
  auto again = perturb_tangent(u, 0.2, 9);
  CHECK(std::equal(again.values().begin(), again.values().end(), p.values().begin()));
}

TEST_CASE("smooth random fields and dipole chains are unit valued") {
  auto d = make(DomainSpec::box({-1, -1, -1}, {1, 1, 1}), 0.25);
  CHECK(max_norm_error(smooth_random_field(d, 4, 3)) <= 1e-12);
  const std::vector<double> c{-0.3, 0.3};
  const std::vector<double> y{0, 0.1, 0.1};
  CHECK(max_norm_error(dipole_chain_field(d, c, y)) <= 1e-12);
}
