#pragma once

#include "baqprop/apps.hpp"
#include "baqprop/stateexp.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace baqprop::harness {

using apps::ExperimentResult;
using apps::Optimizer;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kOutEnv = "BAQPROP_OUT";

inline std::string default_out_dir() {
  const char* e = std::getenv(kOutEnv);
  return e && *e ? std::string(e) : std::string("results");
}

// ------------------------------------------------------------- config ----

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"xor", "maxcut", "unitary", "hybrid"};
  return names;
}

struct RunConfig {
  std::string experiment = "xor";
  Optimizer optimizer = Optimizer::momgrad;
  std::uint64_t seed = 1;
  std::optional<int> iters;
  std::optional<double> eta, gamma, sigma;
  long shots = 0;  // 0 = exact expectations
  bool momentum_discard = false;
  std::string out;  // empty = default_out_dir()

  bool operator==(const RunConfig&) const = default;

  apps::ExperimentOptions options() const {
    apps::ExperimentOptions o;
    o.iters = iters;
    o.eta = eta;
    o.gamma = gamma;
    o.sigma = sigma;
    o.shots = shots;
    o.momentum_discard = momentum_discard;
    return o;
  }
  std::string out_dir() const { return out.empty() ? default_out_dir() : out; }
};

inline void validate(const RunConfig& c) {
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), c.experiment) == names.end())
    throw ConfigError("unknown experiment: " + c.experiment);
  if (c.optimizer == Optimizer::nelder_mead && c.experiment != "maxcut")
    throw ConfigError("nelder-mead is only available for maxcut");
  if (c.experiment == "hybrid" && c.optimizer != Optimizer::momgrad) throw ConfigError("hybrid runs momgrad only");
  if (c.iters && *c.iters < 0) throw ConfigError("iters must be >= 0");
  if (c.shots < 0) throw ConfigError("shots must be >= 0");
  if (c.sigma && !(*c.sigma > 0.0)) throw ConfigError("sigma must be > 0");
  for (const auto& v : {c.eta, c.gamma, c.sigma})
    if (v && !std::isfinite(*v)) throw ConfigError("rates must be finite");
}

inline ojson to_json(const RunConfig& c) {
  ojson j;
  j["experiment"] = c.experiment;
  j["optimizer"] = apps::to_string(c.optimizer);
  j["seed"] = c.seed;
  if (c.iters) j["iters"] = *c.iters;
  if (c.eta) j["eta"] = *c.eta;
  if (c.gamma) j["gamma"] = *c.gamma;
  if (c.sigma) j["sigma"] = *c.sigma;
  j["shots"] = c.shots;
  j["momentum_discard"] = c.momentum_discard;
  if (!c.out.empty()) j["out"] = c.out;
  return j;
}

// Applies the keys of a flat document on top of `base`; unknown keys are errors.
inline RunConfig apply_config(RunConfig c, const ojson& j) {
  if (!j.is_object()) throw ConfigError("config must be a flat object");
  auto number = [](const ojson& v, const std::string& k) {
    if (!v.is_number()) throw ConfigError(k + " must be a number");
    return v.get<double>();
  };
  auto integer = [](const ojson& v, const std::string& k) {
    if (!v.is_number_integer()) throw ConfigError(k + " must be an integer");
    return v.get<long long>();
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const ojson& v = it.value();
    if (k == "experiment") {
      if (!v.is_string()) throw ConfigError("experiment must be a string");
      c.experiment = v.get<std::string>();
    } else if (k == "optimizer") {
      if (!v.is_string()) throw ConfigError("optimizer must be a string");
      try {
        c.optimizer = apps::optimizer_from_string(v.get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    } else if (k == "seed") {
      if (!v.is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
      c.seed = v.get<std::uint64_t>();
    } else if (k == "iters") {
      c.iters = static_cast<int>(integer(v, k));
    } else if (k == "eta") {
      c.eta = number(v, k);
    } else if (k == "gamma") {
      c.gamma = number(v, k);
    } else if (k == "sigma") {
      c.sigma = number(v, k);
    } else if (k == "shots") {
      c.shots = static_cast<long>(integer(v, k));
    } else if (k == "momentum_discard") {
      if (!v.is_boolean()) throw ConfigError("momentum_discard must be a boolean");
      c.momentum_discard = v.get<bool>();
    } else if (k == "out") {
      if (!v.is_string()) throw ConfigError("out must be a string");
      c.out = v.get<std::string>();
    } else {
      throw ConfigError("unknown config key: " + k);
    }
  }
  validate(c);
  return c;
}

inline RunConfig config_from_json(const ojson& j) { return apply_config(RunConfig{}, j); }

inline ojson read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path);
  try {
    return ojson::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------- runs ----

inline ExperimentResult run_experiment(const RunConfig& c) {
  validate(c);
  auto st = apps::Streams::from_seed(c.seed);
  const auto o = c.options();
  if (c.experiment == "xor") return apps::run_xor(c.optimizer, st, o);
  if (c.experiment == "maxcut") return apps::run_maxcut(c.optimizer, st, o);
  if (c.experiment == "unitary") return apps::run_unitary_learning(c.optimizer, st, o);
  return apps::run_hybrid(st, o);
}

inline std::string run_stem(const RunConfig& c) {
  return c.experiment + "_" + apps::to_string(c.optimizer) + "_seed" + std::to_string(c.seed);
}

inline std::string trace_jsonl(const TrainingTrace& t) {
  std::string out;
  for (const auto& r : t) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << s;
}

inline void write_decision_csv(const std::filesystem::path& p, const ExperimentResult& r) {
  RMat g(static_cast<Eigen::Index>(r.grid_x1.size()), static_cast<Eigen::Index>(r.grid_x0.size()));
  for (std::size_t i = 0; i < r.decision.size(); ++i)
    for (std::size_t j = 0; j < r.decision[i].size(); ++j)
      g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.decision[i][j];
  write_grid_csv(p.string(), r.grid_x1, r.grid_x0, g);
}

struct RunFiles {
  std::filesystem::path trace, summary, decision;
};

inline ojson run_summary(const RunConfig& c, const ExperimentResult& r) {
  ojson j;
  j["config"] = to_json(c);
  j["iterations"] = r.trace.empty() ? 0 : r.trace.back().iter;
  j["summary"] = r.summary;
  return j;
}

inline RunFiles write_run(const RunConfig& c, const ExperimentResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  RunFiles f;
  const std::string stem = run_stem(c);
  f.trace = dir / (stem + ".trace.jsonl");
  f.summary = dir / (stem + ".summary.json");
  write_text(f.trace, trace_jsonl(r.trace));
  write_text(f.summary, run_summary(c, r).dump(2) + "\n");
  if (!r.decision.empty()) {
    f.decision = dir / (stem + ".decision.csv");
    write_decision_csv(f.decision, r);
  }
  return f;
}

// Per-key mean, min and max over the numeric summary fields shared by all runs.
inline ojson emit_summary(const std::vector<std::pair<std::uint64_t, ojson>>& runs) {
  ojson out;
  out["seeds"] = ojson::array();
  out["runs"] = ojson::array();
  for (const auto& [seed, s] : runs) {
    out["seeds"].push_back(seed);
    out["runs"].push_back({{"seed", seed}, {"summary", s}});
  }
  ojson stats = ojson::object();
  if (!runs.empty()) {
    for (auto it = runs.front().second.begin(); it != runs.front().second.end(); ++it) {
      const std::string& k = it.key();
      std::vector<double> v;
      for (const auto& [_, s] : runs)
        if (s.contains(k) && s[k].is_number()) v.push_back(s[k].get<double>());
      if (v.size() != runs.size()) continue;
      double sum = 0.0;
      for (double x : v) sum += x;
      stats[k] = {{"mean", sum / static_cast<double>(v.size())},
                  {"min", *std::min_element(v.begin(), v.end())},
                  {"max", *std::max_element(v.begin(), v.end())}};
    }
  }
  out["stats"] = stats;
  return out;
}

// "1,3,5-8" -> {1, 3, 5, 6, 7, 8}.
inline std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  auto num = [&](const std::string& t) {
    if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("bad seed list: " + s);
    return std::stoull(t);
  };
  while (std::getline(ss, tok, ',')) {
    const auto dash = tok.find('-');
    if (dash == std::string::npos) {
      out.push_back(num(tok));
      continue;
    }
    const auto lo = num(tok.substr(0, dash)), hi = num(tok.substr(dash + 1));
    if (hi < lo) throw ConfigError("bad seed range: " + tok);
    for (auto k = lo; k <= hi; ++k) out.push_back(k);
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

// Runs every seed in a worker pool; each seed writes its own files.
inline ojson run_sweep(const RunConfig& base, const std::vector<std::uint64_t>& seeds, unsigned workers = 0) {
  validate(base);
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<ojson> summaries(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        RunConfig c = base;
        c.seed = seeds[i];
        const auto r = run_experiment(c);
        write_run(c, r, c.out_dir());
        summaries[i] = r.summary;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < std::min<std::size_t>(workers, seeds.size()); ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<std::pair<std::uint64_t, ojson>> runs;
  for (std::size_t i = 0; i < seeds.size(); ++i) runs.emplace_back(seeds[i], summaries[i]);
  ojson out = emit_summary(runs);
  ojson cfg = to_json(base);
  cfg.erase("seed");
  out["config"] = cfg;
  return out;
}

// -------------------------------------------------------------- wigner ----

struct WignerSnapshot {
  std::string name;
  std::vector<double> positions, momenta;
  RMat w;
};

struct WignerOptions {
  QuditSpec spec{31, -3.0, 3.0};
  double eta = 0.2, gamma = 0.5, sigma = 1.0;
  int n_momenta = 61;
};

inline double cubic_potential(double x) { return x * x * x + 2.0 * x; }

// Initial state, first kick, update, second kick for MoMGrad then QDD on J = x^3 + 2x.
inline std::vector<WignerSnapshot> cubic_flow_snapshots(const WignerOptions& o) {
  const QuditSpec& spec = o.spec;
  if (spec.d % 2 == 0) throw ConfigError("wigner grid needs odd d");
  auto table = std::make_shared<std::vector<double>>();
  for (double x : position_values(spec)) table->push_back(cubic_potential(x));
  const Kick kick = diagonal_kick(table);
  const double pmax = spec.momentum_scale() * (spec.d / 2);
  std::vector<double> ps;
  for (int k = 0; k < o.n_momenta; ++k) ps.push_back(-pmax + 2.0 * pmax * k / (o.n_momenta - 1));
  const auto xs = position_values(spec);
  std::vector<WignerSnapshot> out;
  auto snap = [&](std::string name, const WaveState& s) { out.push_back({std::move(name), xs, ps, wigner_continuous(s, 0, ps)}); };
  auto kicked = [&](WaveState s) {
    std::vector<ComputeBlock> blocks;
    sequential_minibatch_kick(s, {0}, {kick}, o.eta, blocks);
    return s;
  };

  const GaussianPointer p0{0.0, 0.0, o.sigma};
  Schedule sch;
  sch.eta = [&](int) { return o.eta; };
  sch.gamma = [&](int) { return o.gamma; };
  sch.sigma = [&](int) { return o.sigma; };
  MomGradState mg{{spec}, {p0}};
  snap("momgrad_a_initial", pointer_state(mg));
  momgrad_step(mg, {kick}, sch, [&](const WaveState& s) { snap("momgrad_b_kick", s); });
  snap("momgrad_c_reinit", pointer_state(mg));
  snap("momgrad_d_kick", kicked(pointer_state(mg)));

  QddState q{prepare_gaussian(spec, p0)};
  std::mt19937_64 traj(0);
  snap("qdd_e_initial", q.state);
  qdd_step(q, {kick}, o.eta, o.gamma, traj, 0.0, nullptr, [&](const WaveState& s) { snap("qdd_f_kick", s); });
  snap("qdd_g_pulse", q.state);
  snap("qdd_h_kick", kicked(q.state));
  return out;
}

// ---------------------------------------------------------------- QPE ----

struct QpeFixture {
  int mode = -1;
  double max_err = 0.0;  // against the closed-form kernel |Delta|^2
};

inline QpeFixture qpe_fixture(double phi = 2.0) {
  const QuditSpec ctrl{5, 0, 4}, ptr{63, 0, 5};
  Layout l({qudit_register("c", ctrl), qudit_register("p", ptr)});
  WaveState s = product_state(l, {basis_vector(5, static_cast<std::size_t>(ctrl.nearest_index(phi))), basis_vector(63, 0)});
  apply_phase_estimation(s, 0, 1);
  const auto p = marginal(s, 1);
  QpeFixture f;
  f.mode = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  const double beta = phi * ptr.conversion();
  for (int k = 0; k < ptr.d; ++k)
    f.max_err = std::max(f.max_err, std::abs(p[static_cast<std::size_t>(k)] - std::norm(delta_kernel(beta - k, ptr.d))));
  return f;
}

// -------------------------------------------------------------- verify ----

struct CheckResult {
  std::string name;
  bool pass = false;
  double value = 0.0;  // worst observed error (or exponent)
  double tol = 0.0;
  ojson detail = ojson::object();
};

inline ojson to_json(const CheckResult& c) {
  return {{"name", c.name}, {"pass", c.pass}, {"value", c.value}, {"tol", c.tol}, {"detail", c.detail}};
}

namespace detail {

inline CVec random_state(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  CVec v(d);
  double norm = 0.0;
  for (auto& x : v) {
    x = cplx(n(rng), n(rng));
    norm += std::norm(x);
  }
  for (auto& x : v) x /= std::sqrt(norm);
  return v;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int integer(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline double max_abs_diff(const CVec& a, const CVec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// x^2 of one parameter written into a compute register, loss = its value.
struct SquareProgram {
  FeedforwardProgram prog;
  LossSpec loss;
  CVec xi;
  explicit SquareProgram(QuditSpec ps) {
    const double top = std::max(ps.a * ps.a, ps.b * ps.b);
    const double step = ps.spacing() * ps.spacing();
    const int dc = static_cast<int>(std::lround(top / step)) + 1;
    const QuditSpec cs{dc, 0.0, top};
    prog.layout.add(qudit_register("phi", ps));
    prog.layout.add(qudit_register("sq", cs));
    prog.params = {0};
    prog.compute = {1};
    prog.gates = {multiplier_adder(0, 0, 1)};
    loss = diagonal_loss({1}, position_values(cs));
    xi = basis_vector(static_cast<std::size_t>(dc), 0);
  }
};

}  // namespace detail

inline CheckResult check_fourier(std::mt19937_64& rng) {
  CheckResult c{"fourier_unitary_and_parity", false, 0.0, 1e-9};
  for (int t = 0; t < 20; ++t) {
    const int d = detail::integer(rng, 2, 16);
    WaveState s(Layout({qudit_register("x", {d, 0.0, 1.0})}), detail::random_state(static_cast<std::size_t>(d), rng));
    const CVec in = s.amp;
    fourier(s, 0);
    c.value = std::max(c.value, std::abs(s.norm() - 1.0));
    fourier(s, 0, true);
    c.value = std::max(c.value, detail::max_abs_diff(in, s.amp));
  }
  for (int d : {3, 5, 7, 8}) {
    for (int j = 0; j < d; ++j) {
      WaveState s(Layout({qudit_register("x", {d, 0.0, 1.0})}), basis_vector(static_cast<std::size_t>(d), static_cast<std::size_t>(j)));
      fourier(s, 0);
      fourier(s, 0);
      c.value = std::max(c.value, std::abs(std::abs(s.amp[static_cast<std::size_t>((d - j) % d)]) - 1.0));
    }
  }
  c.pass = c.value <= c.tol;
  return c;
}

inline CheckResult check_delta_kernel(std::mt19937_64& rng) {
  CheckResult c{"delta_kernel_closed_form", false, 0.0, 1e-10};
  for (int t = 0; t < 100; ++t) {
    const int d = detail::integer(rng, 2, 64);
    const double g = detail::uniform(rng, -3.0 * d, 3.0 * d);
    c.value = std::max(c.value, std::abs(delta_kernel(g, d) - delta_kernel_sum(g, d)));
  }
  c.pass = c.value <= c.tol;
  return c;
}

// A linear phase e^{-i g x} on a Gaussian pointer shifts <Pi> by -g.
inline CheckResult check_momentum_calibration(std::mt19937_64& rng) {
  CheckResult c{"momentum_calibration", false, 0.0, 0.05};
  for (int d : {7, 9, 15, 31, 63}) {
    const QuditSpec spec{d, -0.5 * (d - 1), 0.5 * (d - 1)};
    const double gmax = 0.8 * spec.momentum_scale() * (d / 2);
    for (int t = 0; t < 40; ++t) {
      const double sigma = detail::uniform(rng, 0.7, 1.5) * spec.spacing();
      const double g = detail::uniform(rng, -gmax, gmax);
      if (std::abs(g) < 1e-3) continue;
      auto s = prepare_gaussian(spec, {0.0, 0.0, sigma});
      const double before = measure_momentum_expectation(s, {0})[0];
      CVec ph(static_cast<std::size_t>(d));
      for (int j = 0; j < d; ++j) ph[static_cast<std::size_t>(j)] = std::polar(1.0, -g * spec.value(j));
      apply_diagonal(s, 0, ph);
      c.value = std::max(c.value, std::abs(measure_momentum_expectation(s, {0})[0] - before + g) / std::abs(g));
    }
  }
  c.pass = c.value <= c.tol;
  return c;
}

inline CheckResult check_qfb_gradients(std::mt19937_64& rng) {
  CheckResult c{"qfb_gradient_vs_finite_difference", false, 0.0, 0.05};
  const auto checks = apps::experiment_fd_checks(5, rng, true);
  bool all_checked = true;
  for (const auto& [name, g] : checks.runs) {
    all_checked = all_checked && g.checked > 0;
    if (!c.detail.contains(name)) c.detail[name] = 0.0;
    c.detail[name] = std::max(c.detail[name].get<double>(), g.worst);
  }
  c.value = checks.worst();
  c.pass = all_checked && checks.runs.size() == 20 && c.value <= c.tol;
  return c;
}

inline CheckResult check_xor_backprop(std::mt19937_64& rng) {
  CheckResult c{"xor_classical_backprop", false, 0.0, 0.05};
  const auto r = apps::xor_backprop_check(apps::XorNetConfig{}, 10, rng);
  c.value = r.worst;
  c.detail = to_json(r);
  c.pass = r.checked > 0 && r.worst <= c.tol;
  return c;
}

inline CheckResult check_eta_linearity() {
  CheckResult c{"diagonal_kick_eta_linearity", false, 0.0, 0.01};
  const detail::SquareProgram f({13, -3, 3});
  const auto rep = verify_eta_scaling(f.prog, f.loss, {{0.5, 0.0, 0.8}}, f.xi, {0.0, 0.4, 0.2, 0.1});
  c.value = rep.slope_variation;
  c.detail = to_json(rep);
  c.pass = rep.zero_member_ok && c.value <= c.tol;
  return c;
}

inline CheckResult check_hybrid_eta_halving(std::mt19937_64& rng) {
  CheckResult c{"hybrid_linear_kick_eta_halving", false, 0.0, 0.02};
  const auto rep = apps::hybrid_eta_halving(rng);
  c.value = rep.slope_variation;
  c.detail = to_json(rep);
  c.pass = rep.zero_member_ok && c.value <= c.tol;
  return c;
}

inline CheckResult check_eta_remainder() {
  CheckResult c{"hermitian_kick_remainder_exponent", false, 0.0, 1.8};
  FeedforwardProgram p;
  p.layout.add(qudit_register("t", {15, -3, 3}));
  p.layout.add(qubit_register("q"));
  p.params = {0};
  p.compute = {1};
  p.gates = {param_exponential_gate(0, {1}, pauli_x() / 2.0)};
  CMat h(2, 2);
  h << 0.3, cplx(0.4, -0.2), cplx(0.4, 0.2), -0.7;
  const auto rep = verify_eta_scaling(p, hermitian_loss({1}, h), {{0.4, 0.0, 0.8}}, {1.0, 0.0}, {0.4, 0.2, 0.1, 0.05});
  c.value = rep.exponent;
  c.detail = to_json(rep);
  c.pass = c.value >= c.tol;
  return c;
}

inline CheckResult check_camp() {
  CheckResult c{"camp_equals_sequential", false, 0.0, 1e-8};
  const QuditSpec spec{5, -2, 2};
  auto table = [&](double (*f)(double)) {
    auto t = std::make_shared<std::vector<double>>();
    for (double x : position_values(spec)) t->push_back(f(x));
    return t;
  };
  auto compare = [&](const WaveState& s, const std::vector<Kick>& batch, double eta) {
    const auto res = camp_kick(s, batch, eta, static_cast<int>(batch.size()));
    WaveState seq = s;
    std::vector<ComputeBlock> blocks;
    sequential_minibatch_kick(seq, {0}, batch, eta, blocks);
    const double err = (reduced_density(res.server, 0) - reduced_density(seq, 0)).cwiseAbs().maxCoeff();
    c.value = std::max({c.value, err, std::abs(res.replica_null_probability - 1.0)});
  };
  compare(prepare_gaussian(spec, {-0.4, 0.2, 0.8}),
          {diagonal_kick(table([](double x) { return x * x; })), diagonal_kick(table([](double x) { return std::cos(2 * x); }))},
          0.7);
  FeedforwardProgram p;
  p.layout.add(qudit_register("t", spec));
  p.layout.add(qubit_register("q"));
  p.params = {0};
  p.compute = {1};
  p.gates = {param_exponential_gate(0, {1}, pauli_y() / 2.0)};
  const CVec plus{1 / std::sqrt(2.0), 1 / std::sqrt(2.0)};
  compare(prepare_gaussian(spec, {0.2, 0.0, 0.7}),
          {qfb_kick(p, negative_projector_loss({1}, plus), {1.0, 0.0}),
           qfb_kick(p, negative_projector_loss({1}, {0.0, 1.0}), plus)},
          0.5);
  c.pass = c.value <= c.tol;
  return c;
}

inline CheckResult check_exp_swap(std::mt19937_64& rng) {
  CheckResult c{"exp_swap_vs_expm", false, 0.0, 1e-8};
  for (int d : {2, 3}) {
    for (int t = 0; t < 5; ++t) {
      const QuditSpec spec{d, 0.0, static_cast<double>(d - 1)};
      Layout l({qudit_register("a", spec), qudit_register("b", spec)});
      WaveState s = product_state(l, {detail::random_state(static_cast<std::size_t>(d), rng),
                                      detail::random_state(static_cast<std::size_t>(d), rng)});
      const double eta = detail::uniform(rng, -2.0, 2.0);
      const CVec in = s.amp;
      apply_exp_swap(s, 0, 1, eta);
      const CMat u = (cplx(0.0, -eta) * swap_matrix(d)).exp();
      Eigen::Map<const Eigen::VectorXcd> v(in.data(), static_cast<Eigen::Index>(in.size()));
      const Eigen::VectorXcd want = u * v;
      for (std::size_t i = 0; i < in.size(); ++i)
        c.value = std::max(c.value, std::abs(s.amp[i] - want[static_cast<Eigen::Index>(i)]));
    }
  }
  c.pass = c.value <= c.tol;
  return c;
}

// Error times n stays within a factor 2 across n = 5..40.
inline CheckResult check_batched_scaling(std::mt19937_64& rng) {
  CheckResult c{"batched_exponentiation_error_1_over_n", false, 0.0, 2.0};
  WaveState s(Layout({qubit_register("q")}), detail::random_state(2, rng));
  const CVec copy = detail::random_state(2, rng);
  std::vector<double> scaled;
  ojson errs = ojson::array();
  for (int n : {5, 10, 20, 40}) {
    const double e =
        exponentiate_batched(s, {0}, std::vector<CVec>(static_cast<std::size_t>(n), copy), 0.5, rng).report.trace_distance;
    errs.push_back({{"n", n}, {"trace_distance", e}});
    scaled.push_back(e * n);
  }
  const auto [lo, hi] = std::minmax_element(scaled.begin(), scaled.end());
  c.value = *hi / *lo;
  c.detail["errors"] = errs;
  c.pass = *lo > 0.0 && c.value <= c.tol;
  return c;
}

inline CheckResult check_compute_purity(std::mt19937_64& rng) {
  CheckResult c{"classical_embedding_compute_purity", false, 0.0, 1e-9};
  const detail::SquareProgram f({7, -3, 3});
  for (int t = 0; t < 5; ++t) {
    const GaussianPointer p{detail::uniform(rng, -2, 2), detail::uniform(rng, -0.5, 0.5), detail::uniform(rng, 0.7, 1.2)};
    const auto r = qfb_run(f.prog, f.loss, detail::uniform(rng, 0.05, 0.5), joint_pointer_state(f.prog, {p}, f.xi));
    c.value = std::max(c.value, std::abs(r.compute_purity - 1.0));
  }
  c.pass = c.value <= c.tol;
  return c;
}

inline std::vector<CheckResult> run_verify(std::uint64_t seed = 2024) {
  std::mt19937_64 rng = apps::Streams::derive(seed, 5);
  std::vector<CheckResult> out;
  out.push_back(check_fourier(rng));
  out.push_back(check_delta_kernel(rng));
  out.push_back(check_momentum_calibration(rng));
  out.push_back(check_qfb_gradients(rng));
  out.push_back(check_xor_backprop(rng));
  out.push_back(check_eta_linearity());
  out.push_back(check_hybrid_eta_halving(rng));
  out.push_back(check_eta_remainder());
  out.push_back(check_camp());
  out.push_back(check_exp_swap(rng));
  out.push_back(check_batched_scaling(rng));
  out.push_back(check_compute_purity(rng));
  return out;
}

inline std::string verify_table(const std::vector<CheckResult>& rs) {
  std::ostringstream o;
  o << std::left;
  for (const auto& r : rs) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e (tol %.1e)", r.value, r.tol);
    o << (r.pass ? "PASS  " : "FAIL  ") << r.name;
    for (std::size_t k = r.name.size(); k < 40; ++k) o << ' ';
    o << buf << '\n';
  }
  return o.str();
}

}  // namespace baqprop::harness
