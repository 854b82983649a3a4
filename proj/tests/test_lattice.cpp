#include <cmath>
#include <numbers>
#include <random>

#include "biharm/errors.hpp"
#include "biharm/lattice.hpp"
#include "doctest.h"

using namespace biharm;

namespace {

double sigma4() { return 8.0 * std::numbers::pi * std::numbers::pi / 3.0; }

std::vector<double> sample(const LatticeDomain& d, double (*f)(const std::vector<double>&)) {
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = f(d.position(i));
  return out;
}

std::size_t node_at(const LatticeDomain& d, std::vector<double> x) {
  auto idx = d.nearest_node(x);
  REQUIRE(idx.has_value());
  return *idx;
}

}  // namespace

TEST_CASE("sphere constants") {
  CHECK(sphere_area(4) == doctest::Approx(sigma4()).epsilon(1e-14));
  CHECK(sphere_area(1) == doctest::Approx(2 * std::numbers::pi).epsilon(1e-14));
  CHECK(ball_volume(3) == doctest::Approx(4.0 * std::numbers::pi / 3.0).epsilon(1e-14));
}

TEST_CASE("domain build: small ball has only the origin as interior") {
  auto d = LatticeDomain::build(DomainSpec::ball(3, {}, 1.0), 0.5);
  CHECK(d.count(NodeClass::Interior) == 1);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.node_class(i) == NodeClass::Interior) {
      for (int a = 0; a < 3; ++a) CHECK(d.coord(i, a) == 0.0);
    }
  }
}

TEST_CASE("domain build: unit square") {
  auto d = LatticeDomain::build(DomainSpec::box({0, 0}, {1, 1}), 0.25);
  CHECK(d.size() == 25);
  CHECK(std::abs(d.total_volume() - 1.0) <= 1e-12);
}

TEST_CASE("domain build: unit cube integrates 1 exactly") {
  auto d = LatticeDomain::build(DomainSpec::box({0, 0, 0}, {1, 1, 1}), 0.125);
  std::vector<double> one(d.size(), 1.0);
  CHECK(std::abs(integrate(d, one) - 1.0) <= 1e-12);
}

TEST_CASE("domain build: dumbbell node count matches brute-force membership") {
  const double L = 3.0, h = 0.25;
  auto d = LatticeDomain::build(DomainSpec::dumbbell(1.0, L), h);
  // Independent membership: upper half ball, cylinder, lower half ball.
  const double tol = 1e-9 * h;
  auto inside = [&](const std::array<double, 5>& x) {
    const double r4 = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + x[3] * x[3]);
    if (std::abs(x[4]) <= L) return r4 <= 1.0 + tol;
    const double dz = std::abs(x[4]) - L;
    return std::sqrt(r4 * r4 + dz * dz) <= 1.0 + tol;
  };
  std::size_t count = 0;
  const int m = 8, mz = 20;
  std::array<double, 5> x{};
  for (int a = -m; a <= m; ++a)
    for (int b = -m; b <= m; ++b)
      for (int c = -m; c <= m; ++c)
        for (int e = -m; e <= m; ++e)
          for (int z = -mz; z <= mz; ++z) {
            x = {a * h, b * h, c * h, e * h, z * h};
            count += inside(x);
          }
  CHECK(d.size() == count);
}

TEST_CASE("domain build: errors") {
  CHECK_THROWS_AS(LatticeDomain::build(DomainSpec::ball(3, {}, 1.0), 2.0), Error);
  try {
    LatticeDomain::build(DomainSpec::ball(3, {}, 1.0), 2.0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyInterior);
  }
  try {
    LatticeDomain::build(DomainSpec::dumbbell(1.0, 2.0, 4), 0.25);
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("domain build: band classification matches the 2h rule") {
  auto d = LatticeDomain::build(DomainSpec::ball(3, {}, 1.0), 0.1);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double depth = d.depth(i);
    const bool band = depth < 2 * 0.1 - 1e-12;
    CHECK(band == (d.node_class(i) != NodeClass::Interior));
    if (d.node_class(i) == NodeClass::Interior) {
      // full 5-point stencil per axis inside the stored set
      const GridIndex g = d.grid_index(i);
      for (int a = 0; a < 3; ++a) {
        for (int s : {-2, -1, 1, 2}) {
          GridIndex q = g;
          q[a] += s;
          CHECK(d.find(q).has_value());
        }
      }
    }
  }
}

TEST_CASE("finite differences: constants, quadratics, affine fields") {
  auto d = LatticeDomain::build(DomainSpec::ball(5, {}, 1.0), 0.25);
  std::vector<double> c(d.size(), 3.5);
  auto q = sample(d, [](const std::vector<double>& x) {
    double s = 0;
    for (double v : x) s += v * v;
    return s;
  });
  auto aff = sample(d, [](const std::vector<double>& x) {
    return 1.0 + 2 * x[0] - x[1] + 0.5 * x[4];
  });
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.node_class(i) != NodeClass::Interior) continue;
    for (double g : gradient_fd(d, c, 1, i)) CHECK(g == 0.0);
    CHECK(laplacian_fd(d, c, 1, i)[0] == 0.0);
    CHECK(laplacian_fd(d, q, 1, i)[0] == doctest::Approx(10.0).epsilon(1e-12));
    auto g = gradient_fd(d, aff, 1, i);
    CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(std::abs(g[2]) < 1e-12);
    CHECK(g[4] == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("finite differences: sin Laplacian and convergence order") {
  // 1D-like slab in 2D at h = 0.01, evaluated at x_1 = 0.5.
  auto d = LatticeDomain::build(DomainSpec::box({0.4, -0.05}, {0.6, 0.05}), 0.01);
  auto f = sample(d, [](const std::vector<double>& x) { return std::sin(x[0]); });
  auto i = node_at(d, {0.5, 0.0});
  CHECK(std::abs(laplacian_fd(d, f, 1, i)[0] + std::sin(0.5)) <= 1e-4);

  auto err_at = [](double h) {
    auto dd = LatticeDomain::build(DomainSpec::box({0, 0, 0}, {1, 1, 1}), h);
    auto g = sample(dd, [](const std::vector<double>& x) {
      return std::sin(2 * x[0]) * std::cos(x[1]) + std::cos(3 * x[2]);
    });
    const std::size_t k = *dd.nearest_node(std::vector<double>{0.5, 0.5, 0.5});
    const double exact = -5.0 * std::sin(1.0) * std::cos(0.5) - 9.0 * std::cos(1.5);
    return std::abs(laplacian_fd(dd, g, 1, k)[0] - exact);
  };
  const double order = std::log2(err_at(1.0 / 8) / err_at(1.0 / 16));
  CHECK(order >= 1.9);
}

TEST_CASE("finite differences: stencil leaving the domain is an error") {
  auto d = LatticeDomain::build(DomainSpec::box({0, 0}, {1, 1}), 0.25);
  std::vector<double> f(d.size(), 0.0);
  auto corner = node_at(d, {0.0, 0.0});
  CHECK_THROWS_AS(gradient_fd(d, f, 1, corner), Error);
  CHECK_THROWS_AS(laplacian_fd(d, f, 1, corner), Error);
}

TEST_CASE("integration: ball volume in 5D") {
  auto d = LatticeDomain::build(DomainSpec::ball(5, {}, 1.0), 1.0 / 16);
  const double exact = std::pow(std::numbers::pi, 2.5) / std::tgamma(3.5);
  CHECK(std::abs(d.total_volume() / exact - 1.0) <= 0.02);
}

TEST_CASE("integration: annulus radial weight") {
  auto d = LatticeDomain::build(DomainSpec::annulus(5, {}, 0.5, 1.0), 1.0 / 16);
  auto f = sample(d, [](const std::vector<double>& x) {
    double s = 0;
    for (double v : x) s += v * v;
    return 1.0 / (s * s);
  });
  // sigma_4 * int_{1/2}^{1} r^{-4} r^4 dr
  CHECK(std::abs(integrate(d, f) / (0.5 * sigma4()) - 1.0) <= 0.02);
}

TEST_CASE("integration: linearity and monotonicity") {
  auto d = LatticeDomain::build(DomainSpec::ball(3, {}, 1.0), 0.1);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> f(d.size()), g(d.size()), s(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    f[i] = u(rng);
    g[i] = u(rng);
    s[i] = 2 * f[i] - 3 * g[i];
  }
  CHECK(integrate(d, s) == doctest::Approx(2 * integrate(d, f) - 3 * integrate(d, g)).epsilon(1e-12));
  CHECK(integrate(d, f) >= 0.0);
}

TEST_CASE("integration: ball region must fit") {
  auto d = LatticeDomain::build(DomainSpec::ball(3, {}, 1.0), 0.05);
  const std::vector<double> c{0.5, 0, 0};
  CHECK_THROWS_AS(integrate_ball(d, c, 0.6, [](std::size_t) { return 1.0; }), Error);
  const double v = integrate_ball(d, c, 0.3, [](std::size_t) { return 1.0; });
  CHECK(std::abs(v / (4.0 / 3.0 * std::numbers::pi * 0.027) - 1.0) <= 0.05);
}

TEST_CASE("shell integrals in 5D") {
  auto d = LatticeDomain::build(DomainSpec::ball(5, {}, 1.0), 1.0 / 16);
  const std::vector<double> c(5, 0.0);
  const double area = sigma4() * std::pow(0.5, 4);
  CHECK(std::abs(shell_integrate(d, c, 0.5, [](std::size_t) { return 1.0; }) / area - 1.0) <= 0.05);
  CHECK(shell_integrate(d, c, 0.5, [](std::size_t) { return 0.0; }) == 0.0);
  const double r2 = shell_integrate(d, c, 0.5, [&](std::size_t i) {
    double s = 0;
    for (int a = 0; a < 5; ++a) s += d.coord(i, a) * d.coord(i, a);
    return s;
  });
  CHECK(std::abs(r2 / (0.25 * area) - 1.0) <= 0.05);
  // d/dr of the sphere-average of |y|^2 times area: 2r * area
  auto sd = shell_integrate_with_derivative(d, c, 0.5, [&](std::size_t i) {
    double s = 0;
    for (int a = 0; a < 5; ++a) s += d.coord(i, a) * d.coord(i, a);
    return s;
  });
  CHECK(std::abs(sd.radial_derivative / (1.0 * area) - 1.0) <= 0.05);
}

TEST_CASE("geodesics") {
  auto box = LatticeDomain::build(DomainSpec::box({0, 0}, {1, 1}), 1.0 / 64);
  const auto a = node_at(box, {0, 0});
  const auto b = node_at(box, {1, 1});
  CHECK(geodesic_distance(box, a, a).distance == 0.0);
  CHECK(std::abs(geodesic_distance(box, a, b).distance / std::sqrt(2.0) - 1.0) <= 0.02);

  SUBCASE("metric axioms on random triples") {
    auto d = LatticeDomain::build(DomainSpec::annulus(2, {}, 0.3, 1.0), 1.0 / 16);
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> pick(0, d.size() - 1);
    for (int t = 0; t < 10; ++t) {
      const auto p = pick(rng), q = pick(rng), r = pick(rng);
      const double pq = geodesic_distance(d, p, q).distance;
      const double qp = geodesic_distance(d, q, p).distance;
      const double qr = geodesic_distance(d, q, r).distance;
      const double pr = geodesic_distance(d, p, r).distance;
      CHECK(pq == doctest::Approx(qp).epsilon(1e-12));
      CHECK(pr <= pq + qr + 1e-12);
    }
  }

  SUBCASE("dumbbell caps are separated by the neck") {
    auto d = LatticeDomain::build(DomainSpec::dumbbell(1.0, 3.0), 0.25);
    const auto top = node_at(d, {0, 0, 0, 0, 3.0});
    const auto bot = node_at(d, {0, 0, 0, 0, -3.0});
    CHECK(geodesic_distance(d, top, bot).distance >= 6.0);
  }

  SUBCASE("anisotropy of the 3^n - 1 neighbor graph") {
    CHECK(graph_anisotropy(2) == doctest::Approx(1.0823922).epsilon(1e-6));
    CHECK(graph_anisotropy(1) == doctest::Approx(1.0));
  }

  SUBCASE("disconnected annulus pieces are reported") {
    // A box whose stored set splits into two components at this spacing is
    // hard to build; use a graph mask instead.
    auto d = LatticeDomain::build(DomainSpec::box({0, 0}, {1, 1}), 0.25);
    std::vector<std::uint8_t> mask(d.size(), 1);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (std::abs(d.coord(i, 0) - 0.5) < 1e-12) mask[i] = 0;
    }
    GeodesicSolver solver(d, mask);
    const GeodesicSolver::Source src{node_at(d, {0, 0}), 0.0};
    auto dist = solver.distances(std::span<const GeodesicSolver::Source>(&src, 1));
    CHECK(std::isinf(dist[node_at(d, {1, 1})]));
  }
}
