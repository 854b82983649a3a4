// Command-line experiment runner: one experiment per invocation, reports in
// JSON, traces in CSV, fields in the binary field format.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "biharm/errors.hpp"
#include "biharm/experiments.hpp"
#include "biharm/io.hpp"

namespace fs = std::filesystem;
using namespace biharm;

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  double resolution = 0.0;
  bool quiet = false;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("--out", f.out, "Output directory (overrides the config)");
  app->add_option("--seed", f.seed, "Random seed (overrides the config)");
  app->add_option("--resolution", f.resolution, "Lattice spacing h (overrides the config)")
      ->check(CLI::PositiveNumber);
  app->add_flag("--quiet", f.quiet, "Only print the final status line");
}

Json load_config(const CommonFlags& f, const std::string& experiment, const CLI::App& app) {
  Json j = Json::object();
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    try {
      j = Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::SchemaError, "config is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw Error(ErrorCode::SchemaError, "config must be a JSON object");
    if (j.contains("experiment") && j["experiment"] != experiment) {
      throw Error(ErrorCode::SchemaError, "config is for experiment '" +
                                              j["experiment"].get<std::string>() + "', not '" +
                                              experiment + "'");
    }
  }
  j["experiment"] = experiment;
  if (app.count("--seed")) j["seed"] = f.seed;
  if (app.count("--resolution")) j["h"] = f.resolution;
  if (app.count("--out")) j["output"] = f.out;
  return j;
}

int run(const std::string& experiment, const CommonFlags& f, const CLI::App& app) {
  const RunConfig cfg = parse_config(load_config(f, experiment, app));
  ExperimentResult res = run_experiment(cfg);

  // The thread-count variable is recorded only; every run is single threaded.
  const char* threads = std::getenv("BIHARM_THREADS");
  res.report["threads_env"] = threads ? Json(threads) : Json(nullptr);

  const fs::path out = cfg.output;
  const bool save_fields = cfg.params.value("save_fields", true);
  Json files = Json::object();
  if (save_fields) {
    for (const auto& [name, field] : res.fields) {
      const fs::path p = out / (name + ".bhf1");
      save_field(p, field);
      files[name] = p.string();
    }
  }
  if (!res.trace_csv.empty()) {
    write_atomic(out / "trace.csv", res.trace_csv);
    files["trace"] = (out / "trace.csv").string();
  }
  res.report["files"] = files;
  write_atomic(out / "report.json", res.report.dump(2) + "\n");

  if (!f.quiet) {
    for (const auto& c : res.checks) {
      std::printf("[%-10s] %s (measured %.6g", std::string(to_string(c.status)).c_str(), c.name.c_str(),
                  c.measured);
      if (c.reference) std::printf(", reference %.6g", *c.reference);
      std::printf(")\n");
    }
  }
  std::printf("%s: %s, report written to %s\n", experiment.c_str(), res.failed() ? "FAIL" : "PASS",
              (out / "report.json").string().c_str());
  return res.failed() ? 1 : 0;
}

bool has_extension(const fs::path& p, const char* ext) { return p.extension() == ext; }

int convert(const std::string& input, const std::string& output, bool quiet) {
  const fs::path in = input, out = output;
  VectorField u;
  if (has_extension(in, ".csv")) {
    std::ifstream is(in);
    if (!is) throw Error(ErrorCode::IoError, "cannot open " + input);
    u = read_points_csv(is);
  } else {
    u = load_field(in);
  }
  if (has_extension(out, ".csv")) {
    std::ostringstream os;
    write_points_csv(os, u);
    write_atomic(out, os.str());
  } else {
    save_field(out, u);
  }
  if (!quiet) {
    std::printf("converted %zu nodes x %d components: %s -> %s\n", u.size(), u.ncomp(), input.c_str(),
                output.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hessian-energy experiments for sphere-valued maps on lattice domains"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(code_version()));

  CommonFlags flags;
  const char* experiments[][2] = {
      {"validate", "Run the analytic-oracle checks of every module"},
      {"minimize", "Minimize the Hessian energy or its relaxed variant"},
      {"topology", "Detect singularities and compute the minimal connection"},
      {"monotonicity", "Evaluate the monotonicity quantity at random centers"},
      {"dumbbell", "Gap experiment on dumbbell domains"},
  };
  for (const auto& e : experiments) add_common(app.add_subcommand(e[0], e[1]), flags);

  std::string input, output;
  auto* conv = app.add_subcommand("convert", "Convert between the binary field format and a CSV point dump");
  conv->add_option("input", input, "Input file (.bhf1 or .csv)")->required()->check(CLI::ExistingFile);
  conv->add_option("output", output, "Output file (.bhf1 or .csv)")->required();
  conv->add_flag("--quiet", flags.quiet, "Print nothing on success");

  CLI11_PARSE(app, argc, argv);

  try {
    if (conv->parsed()) return convert(input, output, flags.quiet);
    for (const auto& e : experiments) {
      if (auto* sub = app.get_subcommand(e[0]); sub->parsed()) return run(e[0], flags, *sub);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
