#include "baqprop/harness.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace baqprop;
using namespace baqprop::harness;

namespace {

struct Flags {
  std::string experiment, optimizer, seed, config, out;
  std::optional<int> iters;
  std::optional<long> shots;
};

void add_run_flags(CLI::App* sub, Flags& f, bool seed_list) {
  sub->add_option("experiment", f.experiment, "xor | maxcut | unitary | hybrid");
  sub->add_option("--optimizer", f.optimizer, "momgrad | qdd | nelder-mead");
  sub->add_option("--seed", f.seed, seed_list ? "seed list, e.g. 1-5 or 1,3,7 (default 1-5)" : "master seed");
  sub->add_option("--iters", f.iters, "iteration count");
  sub->add_option("--shots", f.shots, "momentum shots per readout (0 = exact)");
  sub->add_option("--out", f.out, std::string("output directory (default $") + kOutEnv + " or ./results)");
  sub->add_option("--config", f.config, "flat JSON config file");
}

// Defaults, then the config file, then command-line flags.
RunConfig resolve(const Flags& f, bool seed_list) {
  RunConfig c;
  if (!f.config.empty()) c = apply_config(c, read_json_file(f.config));
  if (!f.experiment.empty()) c.experiment = f.experiment;
  if (!f.optimizer.empty()) {
    try {
      c.optimizer = apps::optimizer_from_string(f.optimizer);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (!seed_list && !f.seed.empty()) {
    const auto seeds = parse_seed_list(f.seed);
    if (seeds.size() != 1) throw ConfigError("run takes a single seed");
    c.seed = seeds[0];
  }
  if (f.iters) c.iters = *f.iters;
  if (f.shots) c.shots = *f.shots;
  if (!f.out.empty()) c.out = f.out;
  validate(c);
  return c;
}

int cmd_run(const Flags& f) {
  const RunConfig c = resolve(f, false);
  const auto r = run_experiment(c);
  const auto files = write_run(c, r, c.out_dir());
  std::cout << run_summary(c, r).dump(2) << "\n";
  std::cerr << "trace: " << files.trace.string() << "\nsummary: " << files.summary.string() << "\n";
  if (!files.decision.empty()) std::cerr << "decision grid: " << files.decision.string() << "\n";
  return 0;
}

int cmd_sweep(const Flags& f) {
  const RunConfig c = resolve(f, true);
  const auto seeds = parse_seed_list(f.seed.empty() ? "1-5" : f.seed);
  const ojson s = run_sweep(c, seeds);
  const fs::path path = fs::path(c.out_dir()) / (c.experiment + "_" + apps::to_string(c.optimizer) + ".sweep.json");
  write_text(path, s.dump(2) + "\n");
  std::cout << s["stats"].dump(2) << "\n";
  std::cerr << "sweep summary: " << path.string() << "\n";
  return 0;
}

int cmd_wigner(const Flags& f) {
  const RunConfig c = resolve(f, false);
  WignerOptions o;
  if (c.eta) o.eta = *c.eta;
  if (c.gamma) o.gamma = *c.gamma;
  if (c.sigma) o.sigma = *c.sigma;
  const fs::path dir = fs::path(c.out_dir()) / "wigner";
  fs::create_directories(dir);
  for (const auto& s : cubic_flow_snapshots(o)) {
    const fs::path p = dir / (s.name + ".csv");
    write_grid_csv(p.string(), s.positions, s.momenta, s.w);
    std::cout << p.string() << "\n";
  }
  return 0;
}

int cmd_verify(const std::string& seed, const std::string& out) {
  const auto seeds = parse_seed_list(seed);
  if (seeds.size() != 1) throw ConfigError("verify takes a single seed");
  const auto rs = run_verify(seeds[0]);
  std::cout << verify_table(rs);
  bool ok = true;
  ojson j = ojson::array();
  for (const auto& r : rs) {
    ok = ok && r.pass;
    j.push_back(to_json(r));
  }
  if (!out.empty()) {
    fs::create_directories(out);
    write_text(fs::path(out) / "verify.json", j.dump(2) + "\n");
  }
  std::cout << (ok ? "all checks passed" : "verify FAILED") << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Baqprop simulator: quantum-parameter training by phase-kick backpropagation"};
  app.require_subcommand(1);
  Flags run_f, sweep_f, wigner_f;
  std::string verify_seed = "2024", verify_out;

  auto* run = app.add_subcommand("run", "run one experiment, write trace JSONL and summary JSON");
  add_run_flags(run, run_f, false);
  auto* sweep = app.add_subcommand("sweep", "run one experiment over a seed list");
  add_run_flags(sweep, sweep_f, true);
  auto* wigner = app.add_subcommand("wigner", "phase-space CSV snapshots for the cubic potential x^3 + 2x");
  wigner->add_option("--out", wigner_f.out, "output directory");
  wigner->add_option("--config", wigner_f.config, "flat JSON config (eta, gamma, sigma are used)");
  auto* verify = app.add_subcommand("verify", "run the invariant suites and print a pass/fail table");
  verify->add_option("--seed", verify_seed, "seed of the randomized checks");
  verify->add_option("--out", verify_out, "also write verify.json here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    if (*run) return cmd_run(run_f);
    if (*sweep) return cmd_sweep(sweep_f);
    if (*wigner) return cmd_wigner(wigner_f);
    return cmd_verify(verify_seed, verify_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
}
