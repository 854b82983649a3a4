// Acceptance suite: one PASS/FAIL line per criterion, each combining the
// oracle checks with the criterion's runtime budget. Arguments select a
// subset of criteria by number; "--report <path>" writes every check as JSON.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "biharm/experiments.hpp"

using namespace biharm;

namespace {

const double kSphere4 = 8.0 * std::numbers::pi * std::numbers::pi / 3.0;

// Hessian energy of the cap bubble continued radially into both caps of the
// dumbbell, from an independent high-precision radial quadrature of the
// equivariant profile on the hemisphere (two caps). Reported next to the
// lattice value; the lattice underestimates it because the cone point at each
// cap center is not resolved at desk-scale spacings.
constexpr double kSingularEnergyContinuum = 1660.5445;

struct Criterion {
  int id;
  std::string title;
  double budget_seconds;
  std::function<std::vector<Check>(std::string& note)> run;
};

std::string summarize(const std::vector<Check>& checks) {
  std::string failed, shown;
  int listed = 0;
  for (const auto& c : checks) {
    if (c.status != CheckStatus::Pass) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s%s: %s, measured %.6g", failed.empty() ? "" : "; ", c.name.c_str(),
                    std::string(to_string(c.status)).c_str(), c.measured);
      failed += buf;
      if (c.reference) {
        std::snprintf(buf, sizeof buf, " vs %.6g", *c.reference);
        failed += buf;
      }
    }
  }
  if (!failed.empty()) return failed;
  for (const auto& c : checks) {
    if (listed == 4) {
      shown += ", ...";
      break;
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%.6g", listed ? ", " : "", c.measured);
    shown += buf;
    ++listed;
  }
  return "measured " + shown;
}

std::vector<Criterion> criteria(const Tolerances& tol) {
  std::vector<Criterion> out;
  out.push_back({1, "radial-map Hessian energy on the annulus equals 8 sigma_4 and the quartic energy", 60.0,
                 [&](std::string&) { return check_radial_energy(1.0 / 16, tol); }});
  out.push_back({2, "monotonicity quantity of x/|x| equals 24 sigma_4 and is constant in r", 120.0,
                 [&](std::string& note) {
                   // The outer radius keeps every boundary stencil inside the domain.
                   const double h = 1.0 / 24;
                   note = "Ball(0, 0.85), h = 1/24";
                   return check_monotone_constancy(h, 0.85, {0.3, 0.5, 0.7}, tol);
                 }});
  out.push_back({3, "wedge inequality on random quadruples of 5-vectors", 5.0,
                 [&](std::string&) { return std::vector<Check>{check_wedge_inequality(100000, 1)}; }});
  out.push_back({4, "nodewise D-field bound on random smooth unit fields", 120.0,
                 [&](std::string&) { return std::vector<Check>{check_dfield_bound(20, 1.0 / 8, 1)}; }});
  out.push_back({5, "minimal connection equals the dual potential value", 120.0,
                 [&](std::string&) { return std::vector<Check>{check_duality(10, 1, tol)}; }});
  out.push_back({6, "flux degree of +-x/|x| at r = 1/2", 60.0,
                 [&](std::string&) { return check_degree_recovery(1.0 / 16, tol); }});
  out.push_back({7, "extension operator: unit norm, boundary preserved, averaged energy bound", 120.0,
                 [&](std::string&) { return check_extension(5, 1.0 / 8, 1, tol); }});
  out.push_back({8, "descent direction against finite differences; monotone descent traces", 120.0,
                 [&](std::string&) { return check_gradient(5, 10, 1.0 / 8, 1, tol); }});
  out.push_back({9, "perturbations of x/|x| descend back toward the discrete minimizer", 1200.0,
                 [&](std::string&) { return check_uniqueness(UniquenessOptions{}, tol); }});
  out.push_back({10, "dumbbell gap experiment: neck independence, slice inequality, gap verdict", 900.0,
                 [&](std::string& note) {
                   std::vector<DumbbellMeasurement> ms;
                   auto checks = check_dumbbell(DumbbellOptions{}, tol, &ms);
                   // The verdict must agree with the raw numbers it summarizes.
                   bool consistent = true;
                   std::size_t v = 0;
                   for (const auto& c : checks) {
                     if (c.name.rfind("gap verdict", 0) != 0) continue;
                     const auto& m = ms.at(v++);
                     consistent = consistent && c.data.at("gap").get<bool>() ==
                                                    (32.0 * kSphere4 * m.neck_length > m.energy_singular);
                   }
                   Check flag;
                   flag.name = "gap verdicts match the measured numbers";
                   flag.status = consistent && v == ms.size() ? CheckStatus::Pass : CheckStatus::Fail;
                   checks.push_back(flag);
                   char buf[200];
                   std::snprintf(buf, sizeof buf,
                                 "singular energy %.1f on the lattice (continuum %.1f), 32 sigma_4 L = %.1f / %.1f, "
                                 "L* %.2f (continuum %.2f)",
                                 ms.front().energy_singular, kSingularEnergyContinuum, ms.front().continuous_bound,
                                 ms.back().continuous_bound, ms.front().energy_singular / (32.0 * kSphere4),
                                 kSingularEnergyContinuum / (32.0 * kSphere4));
                   note = buf;
                   return checks;
                 }});
  out.push_back({11, "relaxed dumbbell minimizer is Q-minimal against seeded competitors", 1200.0,
                 [&](std::string&) { return check_q_minimality(QMinimalityOptions{}, tol); }});
  out.push_back({12, "field files round-trip bit-identically", 10.0,
                 [&](std::string&) { return std::vector<Check>{check_persistence(10, 1)}; }});
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  std::string report_path;
  for (int a = 1; a < argc; ++a) {
    const std::string arg = argv[a];
    if (arg == "--report" && a + 1 < argc) {
      report_path = argv[++a];
    } else {
      selected.insert(std::atoi(arg.c_str()));
    }
  }

  const Tolerances tol;
  Json report = Json{{"version", std::string(code_version())}, {"tolerances", to_json(tol)},
                     {"criteria", Json::array()}};
  int passed = 0, run = 0;
  for (const auto& c : criteria(tol)) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    ++run;
    std::string note, summary;
    std::vector<Check> checks;
    bool ok = true;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      checks = c.run(note);
      ok = !checks.empty();
      for (const auto& x : checks) ok = ok && x.status == CheckStatus::Pass;
      summary = summarize(checks);
    } catch (const std::exception& e) {
      ok = false;
      summary = std::string("error: ") + e.what();
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = seconds < c.budget_seconds;
    ok = ok && in_budget;
    passed += ok;
    std::printf("criterion %2d %s  %s [%s%s%s; %.1f s of %.0f s]\n", c.id, ok ? "PASS" : "FAIL", c.title.c_str(),
                summary.c_str(), note.empty() ? "" : "; ", note.c_str(), seconds, c.budget_seconds);
    std::fflush(stdout);

    Json cj = Json{{"id", c.id}, {"title", c.title}, {"pass", ok}, {"seconds", seconds},
                   {"budget_seconds", c.budget_seconds}, {"note", note}, {"checks", Json::array()}};
    for (const auto& x : checks) cj["checks"].push_back(to_json(x));
    report["criteria"].push_back(std::move(cj));
  }
  std::printf("acceptance: %d of %d criteria passed\n", passed, run);
  if (!report_path.empty()) write_atomic(report_path, report.dump(2) + "\n");
  return passed == run ? 0 : 1;
}
