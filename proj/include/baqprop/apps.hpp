#pragma once

#include "baqprop/optim.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace baqprop::apps {

enum class Optimizer { momgrad, qdd, nelder_mead };

inline const char* to_string(Optimizer o) {
  switch (o) {
    case Optimizer::momgrad: return "momgrad";
    case Optimizer::qdd: return "qdd";
    case Optimizer::nelder_mead: return "nelder-mead";
  }
  return "?";
}

inline Optimizer optimizer_from_string(const std::string& s) {
  if (s == "momgrad") return Optimizer::momgrad;
  if (s == "qdd") return Optimizer::qdd;
  if (s == "nelder-mead" || s == "nelder_mead") return Optimizer::nelder_mead;
  throw std::invalid_argument("unknown optimizer: " + s);
}

// Named sub-streams of one master seed, so that e.g. shot sampling does not
// perturb initialization.
struct Streams {
  std::mt19937_64 init, data, shots, trajectory;

  static std::mt19937_64 derive(std::uint64_t seed, std::uint32_t tag) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
    return std::mt19937_64(seq);
  }
  static Streams from_seed(std::uint64_t seed) {
    return {derive(seed, 1), derive(seed, 2), derive(seed, 3), derive(seed, 4)};
  }
};

struct ExperimentOptions {
  std::optional<int> iters;
  std::optional<double> eta, gamma, sigma;  // constant overrides of the default schedules
  long shots = 0;                           // 0 = exact momentum expectations
  bool momentum_discard = false;  // MoMGrad: reset Pi_0 before each step
};

struct ExperimentResult {
  TrainingTrace trace;
  ojson summary = ojson::object();
  // Decision boundary (XOR only): rows over x1, columns over x0.
  std::vector<double> grid_x0, grid_x1;
  std::vector<std::vector<int>> decision;
};

inline QuditSpec default_param_spec() { return {7, -3.0, 3.0}; }

inline double normal(std::mt19937_64& rng, double sd) { return std::normal_distribution<double>(0.0, sd)(rng); }

inline std::vector<GaussianPointer> initial_pointers(std::size_t n, double sigma, std::mt19937_64& rng) {
  std::vector<GaussianPointer> out(n);
  for (auto& p : out) p = {normal(rng, 0.5), 0.0, sigma};
  return out;
}

inline Schedule make_schedule(std::function<double(int)> eta, std::function<double(int)> gamma,
                              std::function<double(int)> sigma, const ExperimentOptions& o) {
  Schedule s;
  s.eta = o.eta ? std::function<double(int)>([v = *o.eta](int) { return v; }) : std::move(eta);
  s.gamma = o.gamma ? std::function<double(int)>([v = *o.gamma](int) { return v; }) : std::move(gamma);
  s.sigma = o.sigma ? std::function<double(int)>([v = *o.sigma](int) { return v; }) : std::move(sigma);
  s.shots = o.shots;
  s.momentum_discard = o.momentum_discard;
  return s;
}

inline std::vector<double> means_of(const std::vector<GaussianPointer>& ptrs) {
  std::vector<double> m;
  for (const auto& p : ptrs) m.push_back(p.phi0);
  return m;
}

inline std::vector<double> momenta_of(const std::vector<GaussianPointer>& ptrs) {
  std::vector<double> m;
  for (const auto& p : ptrs) m.push_back(p.pi0);
  return m;
}

inline ojson step_flags(bool clamped, bool overflow, double wrap) {
  return {{"clamped", clamped}, {"overflow", overflow}, {"wrap_probability", wrap}};
}

// Parameter means of a QDD state.
inline std::vector<double> state_means(const WaveState& s) {
  std::vector<double> m;
  for (int r = 0; r < s.layout.size(); ++r) m.push_back(expect_position(s, r));
  return m;
}

inline WaveState product_pointer_state(const std::vector<QuditSpec>& specs, const std::vector<GaussianPointer>& ptrs) {
  return pointer_state(MomGradState{specs, ptrs, 0});
}

inline double clamp_to(const QuditSpec& s, double x) { return std::clamp(x, s.a, s.b); }

// ---------------------------------------------------------------- XOR ----

struct XorNetConfig {
  QuditSpec spec = default_param_spec();
  static constexpr int n_params = 9;
};

inline const std::array<const char*, 9> kXorParamNames = {"W1_00", "W1_01", "W1_10", "W1_11", "b1_0",
                                                          "b1_1",  "W2_0",  "W2_1",  "b2"};

struct XorDatum {
  double x0, x1;
  int y;
};

inline std::vector<XorDatum> xor_dataset() { return {{0, 0, 0}, {0, 1, 1}, {1, 0, 1}, {1, 1, 0}}; }

// Registers 0..8 are the parameters (kXorParamNames order); 9, 10 are the hidden
// neurons and 11 the output. The ReLU is applied in-situ when a hidden neuron
// drives the output layer.
inline FeedforwardProgram build_xor_program(const XorNetConfig& cfg, double x0, double x1) {
  if (cfg.spec.d % 2 == 0) throw std::invalid_argument("XOR network needs an odd qudit dimension");
  FeedforwardProgram p;
  for (const char* n : kXorParamNames) p.params.push_back(p.layout.add(qudit_register(n, cfg.spec)));
  const int a10 = p.layout.add(qudit_register("a1_0", cfg.spec));
  const int a11 = p.layout.add(qudit_register("a1_1", cfg.spec));
  const int a2 = p.layout.add(qudit_register("a2", cfg.spec));
  p.compute = {a10, a11, a2};
  const double x[2] = {x0, x1};
  const int a1[2] = {a10, a11};
  for (int k = 0; k < 2; ++k) {
    for (int j = 0; j < 2; ++j) p.gates.push_back(adder(2 * j + k, a1[k], x[j]));
    p.gates.push_back(adder(4 + k, a1[k]));
  }
  for (int j = 0; j < 2; ++j) p.gates.push_back(multiplier_adder(a1[j], 6 + j, a2, 1.0, Activation::relu));
  p.gates.push_back(adder(8, a2));
  return p;
}

inline LossSpec xor_loss(const XorNetConfig& cfg, int y) {
  std::vector<double> t;
  for (double v : position_values(cfg.spec)) {
    const double pos = v > 0.0 ? 1.0 : 0.0;
    t.push_back((pos - y) * (pos - y));
  }
  return diagonal_loss({11}, t);
}

// Hidden and output neurons start at value 0.
inline CVec xor_xi(const XorNetConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.spec.d);
  const std::size_t z = static_cast<std::size_t>(cfg.spec.nearest_index(0.0));
  return basis_vector(d * d * d, (z * d + z) * d + z);
}

// Bit m of entry i: output of datum m is positive at parameter grid point i.
// Same index arithmetic as the adder kernels, evaluated layer by layer.
inline std::shared_ptr<std::vector<std::uint8_t>> xor_positive_mask(const XorNetConfig& cfg) {
  const QuditSpec& sp = cfg.spec;
  const int d = sp.d;
  const double dx = sp.spacing();
  const int zero = sp.nearest_index(0.0);
  const auto data = xor_dataset();
  std::size_t total = 1;
  for (int i = 0; i < 9; ++i) total *= static_cast<std::size_t>(d);
  auto mask = std::make_shared<std::vector<std::uint8_t>>(total, 0);
  auto wrap = [d](long j) { return static_cast<int>(((j % d) + d) % d); };
  const auto xs = position_values(sp);
  // relu(value) for every index.
  std::vector<double> relu(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) relu[j] = std::max(xs[j], 0.0);
  const std::size_t inner = static_cast<std::size_t>(d) * d * d;
  std::size_t outer = 0;
  int w[6];
  for (w[0] = 0; w[0] < d; ++w[0])
    for (w[1] = 0; w[1] < d; ++w[1])
      for (w[2] = 0; w[2] < d; ++w[2])
        for (w[3] = 0; w[3] < d; ++w[3])
          for (w[4] = 0; w[4] < d; ++w[4])
            for (w[5] = 0; w[5] < d; ++w[5], ++outer) {
              int h[4][2];
              for (std::size_t m = 0; m < data.size(); ++m) {
                const double x[2] = {data[m].x0, data[m].x1};
                for (int k = 0; k < 2; ++k) {
                  long j = zero;
                  for (int i = 0; i < 2; ++i) j = wrap(j + round_shift(x[i] * xs[w[2 * i + k]], dx));
                  j = wrap(j + round_shift(xs[w[4 + k]], dx));
                  h[m][k] = static_cast<int>(j);
                }
              }
              std::uint8_t* out = mask->data() + outer * inner;
              std::size_t i = 0;
              for (int v0 = 0; v0 < d; ++v0)
                for (int v1 = 0; v1 < d; ++v1)
                  for (int b = 0; b < d; ++b, ++i) {
                    std::uint8_t bits = 0;
                    for (std::size_t m = 0; m < data.size(); ++m) {
                      long j = zero;
                      j = wrap(j + round_shift(relu[h[m][0]] * xs[v0], dx));
                      j = wrap(j + round_shift(relu[h[m][1]] * xs[v1], dx));
                      j = wrap(j + round_shift(xs[b], dx));
                      if (xs[j] > 0.0) bits |= static_cast<std::uint8_t>(1u << m);
                    }
                    out[i] = bits;
                  }
            }
  return mask;
}

// e^{-i eta (P - y)^2} for datum `bit`; the state must hold exactly the 9 parameter registers.
inline Kick xor_mask_kick(std::shared_ptr<const std::vector<std::uint8_t>> mask, int bit, int y) {
  return {[mask, bit, y](WaveState& s, const std::vector<int>& params, double eta, std::vector<ComputeBlock>&) {
    if (s.amp.size() != mask->size() || params.size() != 9) throw std::invalid_argument("xor kick: layout");
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i] != static_cast<int>(i)) throw std::invalid_argument("xor kick: parameter order");
    const cplx ph = std::polar(1.0, -eta);
    const std::uint8_t* m = mask->data();
    for (std::size_t i = 0; i < s.amp.size(); ++i)
      if (((m[i] >> bit) & 1) != y) s.amp[i] *= ph;
    return 0.0;
  }};
}

// Output value of the network with parameters pinned at `values` and continuous inputs.
inline double xor_output(const XorNetConfig& cfg, const std::vector<double>& values, double x0, double x1) {
  const auto p = build_xor_program(cfg, x0, x1);
  WaveState s = pinned_branch_values(p, values, xor_xi(cfg));
  apply_program(s, p);
  const auto probs = marginal(s, 11);
  const int j = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  return cfg.spec.value(j);
}

struct XorMetrics {
  double cross_entropy = 0.0;
  int correct = 0;
  std::vector<double> p_positive;
};

inline constexpr double kCrossEntropyClip = 1e-12;

inline double cross_entropy(int y, double p) {
  p = std::clamp(p, kCrossEntropyClip, 1.0 - kCrossEntropyClip);
  return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

// Pr(output > 0) under the feedforwarded pointer-mean state.
inline XorMetrics xor_metrics(const XorNetConfig& cfg, const std::vector<double>& means) {
  XorMetrics m;
  for (const auto& dat : xor_dataset()) {
    const double p = xor_output(cfg, means, dat.x0, dat.x1) > 0.0 ? 1.0 : 0.0;
    m.p_positive.push_back(p);
    m.cross_entropy += cross_entropy(dat.y, p) / 4.0;
    m.correct += (p > 0.5) == (dat.y == 1);
  }
  return m;
}

// Expectation of the batch cost and of each datum's positive bit under a state over the parameter grid.
struct MaskExpectation {
  double cost = 0.0;
  std::array<double, 4> p_positive{};
};

inline MaskExpectation mask_expectation(const std::vector<std::uint8_t>& mask, const std::vector<double>& weights) {
  MaskExpectation e;
  const auto data = xor_dataset();
  std::array<double, 16> w16{};
  for (std::size_t i = 0; i < mask.size(); ++i) w16[mask[i]] += weights[i];
  for (unsigned b = 0; b < 16; ++b) {
    for (int m = 0; m < 4; ++m) {
      const int bit = (b >> m) & 1;
      if (bit) e.p_positive[static_cast<std::size_t>(m)] += w16[b];
      if (bit != data[static_cast<std::size_t>(m)].y) e.cost += w16[b] / 4.0;
    }
  }
  return e;
}

// Grid weights of a product of Gaussian pointers, first register most significant.
inline std::vector<double> product_weights(const std::vector<QuditSpec>& specs, const std::vector<GaussianPointer>& ptrs) {
  std::vector<double> w{1.0};
  for (std::size_t r = 0; r < specs.size(); ++r) {
    const CVec a = gaussian_amplitudes(specs[r], ptrs[r]);
    std::vector<double> next(w.size() * a.size());
    for (std::size_t i = 0; i < w.size(); ++i)
      for (std::size_t j = 0; j < a.size(); ++j) next[i * a.size() + j] = w[i] * std::norm(a[j]);
    w.swap(next);
  }
  return w;
}

inline std::vector<double> probabilities(const WaveState& s) {
  std::vector<double> w(s.amp.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::norm(s.amp[i]);
  return w;
}

inline ExperimentResult run_xor(Optimizer opt, Streams& st, const ExperimentOptions& o = {},
                                const XorNetConfig& cfg = {}) {
  if (opt == Optimizer::nelder_mead) throw std::invalid_argument("XOR supports momgrad and qdd");
  const int iters = o.iters.value_or(30);
  if (iters < 0) throw std::invalid_argument("iterations must be >= 0");
  const auto mask = xor_positive_mask(cfg);
  const auto data = xor_dataset();
  std::vector<Kick> batch;
  for (std::size_t m = 0; m < data.size(); ++m) batch.push_back(xor_mask_kick(mask, static_cast<int>(m), data[m].y));
  const std::vector<QuditSpec> specs(9, cfg.spec);
  ExperimentResult res;

  auto record = [&](int k, double eta, double gamma, double sigma, std::vector<double> grad,
                    const std::vector<double>& phi, const std::vector<double>& pi, const std::vector<double>& weights,
                    ojson flags) {
    TraceRecord r;
    r.iter = k;
    r.eta = eta;
    r.gamma = gamma;
    r.sigma = sigma;
    r.grad = std::move(grad);
    r.phi0 = phi;
    r.pi0 = pi;
    const auto m = xor_metrics(cfg, phi);
    r.metric = m.cross_entropy;
    const auto e = mask_expectation(*mask, weights);
    r.extra["accuracy"] = m.correct / 4.0;
    r.extra["loss"] = e.cost;
    r.extra["batch"] = static_cast<int>(data.size());
    r.extra["flags"] = std::move(flags);
    res.trace.push_back(std::move(r));
  };

  std::vector<double> final_means;
  if (opt == Optimizer::momgrad) {
    auto sch = make_schedule([](int) { return 0.5; }, [](int) { return 1.0; },
                             [](int j) { return std::pow(0.95, j); }, o);
    MomGradState mg{specs, initial_pointers(9, sch.sigma(0), st.init)};
    record(0, 0, 0, sch.sigma(0), std::vector<double>(9, 0.0), means_of(mg.ptrs), momenta_of(mg.ptrs),
           product_weights(specs, mg.ptrs), step_flags(false, false, 0.0));
    for (int k = 0; k < iters; ++k) {
      auto info = momgrad_step(mg, batch, sch, {}, &st.shots);
      auto ptrs = mg.ptrs;
      for (auto& p : ptrs) p.sigma0 = sch.sigma(k);
      record(k + 1, sch.eta(k), sch.gamma(k), sch.sigma(k), info.grad, means_of(mg.ptrs), momenta_of(mg.ptrs),
             product_weights(specs, ptrs), step_flags(info.clamped, info.overflow, 0.0));
    }
    final_means = means_of(mg.ptrs);
  } else {
    const double eta_c = o.eta.value_or(0.5);
    auto gamma = [&](int j) { return o.gamma ? *o.gamma : 0.5 - 0.1 * std::floor(j / 5.0); };
    const double sigma0 = o.sigma.value_or(1.0);
    QddState q{product_pointer_state(specs, initial_pointers(9, sigma0, st.init))};
    auto stats = momentum_stats(q.state, {0, 1, 2, 3, 4, 5, 6, 7, 8});
    record(0, 0, 0, sigma0, std::vector<double>(9, 0.0), stats.mean_phi, stats.mean_pi, probabilities(q.state),
           step_flags(false, false, 0.0));
    for (int k = 0; k < iters; ++k) {
      auto info = qdd_step(q, batch, eta_c, gamma(k), st.trajectory, 0.0, &stats.mean_pi);
      stats = info.after_pulse;
      record(k + 1, eta_c, gamma(k), sigma0, info.grad, stats.mean_phi, stats.mean_pi, probabilities(q.state),
             step_flags(false, info.overflow, 0.0));
    }
    final_means = stats.mean_phi;
  }

  for (int i = 0; i <= 20; ++i) {
    res.grid_x0.push_back(-0.5 + 0.1 * i);
    res.grid_x1.push_back(-0.5 + 0.1 * i);
  }
  for (double x1 : res.grid_x1) {
    std::vector<int> row;
    for (double x0 : res.grid_x0) row.push_back(xor_output(cfg, final_means, x0, x1) > 0.0 ? 1 : 0);
    res.decision.push_back(row);
  }
  const auto fm = xor_metrics(cfg, final_means);
  res.summary["final_accuracy"] = fm.correct / 4.0;
  res.summary["final_cross_entropy"] = fm.cross_entropy;
  res.summary["initial_cross_entropy"] = res.trace.front().metric;
  res.summary["final_metric"] = fm.cross_entropy;
  return res;
}

// ------------------------------------------------------------- Max-Cut ----

struct MaxCutProblem {
  int n = 6;
  std::vector<std::pair<int, int>> edges{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}};
  int P = 2;
  QuditSpec spec = default_param_spec();
};

// Qubit 0 is the most significant bit of the basis index.
inline int bit_of(std::size_t idx, int q, int n) { return static_cast<int>((idx >> (n - 1 - q)) & 1u); }

inline std::vector<int> cut_sizes(const MaxCutProblem& pr) {
  std::vector<int> out(std::size_t{1} << pr.n);
  for (std::size_t i = 0; i < out.size(); ++i)
    for (auto [a, b] : pr.edges) out[i] += bit_of(i, a, pr.n) != bit_of(i, b, pr.n);
  return out;
}

inline CMat maxcut_cost_hamiltonian(const MaxCutProblem& pr) {
  const auto c = cut_sizes(pr);
  CMat h = CMat::Zero(static_cast<Eigen::Index>(c.size()), static_cast<Eigen::Index>(c.size()));
  for (std::size_t i = 0; i < c.size(); ++i) h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = c[i];
  return h;
}

inline CMat maxcut_mixer(const MaxCutProblem& pr) {
  const auto n = static_cast<Eigen::Index>(std::size_t{1} << pr.n);
  CMat h = CMat::Zero(n, n);
  for (int q = 0; q < pr.n; ++q) h += embed_qubit_op(pauli_x(), q, pr.n);
  return h;
}

inline CVec plus_state(int n) {
  const std::size_t dim = std::size_t{1} << n;
  return CVec(dim, cplx(1.0 / std::sqrt(static_cast<double>(dim)), 0.0));
}

// Parameters 0..2P-1 (odd-numbered in 1-based terms drive H_C), then n qubits.
inline FeedforwardProgram build_maxcut_program(const MaxCutProblem& pr, const QuditSpec& spec = default_param_spec()) {
  FeedforwardProgram p;
  for (int j = 0; j < 2 * pr.P; ++j) p.params.push_back(p.layout.add(qudit_register("phi" + std::to_string(j + 1), spec)));
  for (int q = 0; q < pr.n; ++q) p.compute.push_back(p.layout.add(qubit_register("v" + std::to_string(q))));
  const CMat hc = maxcut_cost_hamiltonian(pr);
  const CMat hm = maxcut_mixer(pr);
  for (int j = 0; j < pr.P; ++j) {
    p.gates.push_back(param_exponential_gate(2 * j, p.compute, hc));
    p.gates.push_back(param_exponential_gate(2 * j + 1, p.compute, hm));
  }
  return p;
}

// L = -H_C = sum_edges (-1/2 + Z_j Z_k / 2).
inline LossSpec maxcut_loss(const MaxCutProblem& pr, const FeedforwardProgram& p) {
  std::vector<PauliZTerm> terms;
  for (auto [a, b] : pr.edges) {
    terms.push_back({-0.5, {}});
    terms.push_back({0.5, {a, b}});
  }
  return pauli_z_loss(p.compute, terms);
}

inline std::vector<double> cut_distribution(const MaxCutProblem& pr, const FeedforwardProgram& p,
                                            const std::vector<double>& values) {
  WaveState s = pinned_branch_values(p, values, plus_state(pr.n));
  apply_program(s, p);
  const auto c = cut_sizes(pr);
  std::vector<double> dist(pr.edges.size() + 1, 0.0);
  for (std::size_t i = 0; i < c.size(); ++i) dist[static_cast<std::size_t>(c[i])] += std::norm(s.amp[i]);
  return dist;
}

inline double prob_cut_at_least(const MaxCutProblem& pr, const FeedforwardProgram& p,
                                const std::vector<double>& values, int k) {
  const auto dist = cut_distribution(pr, p, values);
  double acc = 0.0;
  for (std::size_t c = static_cast<std::size_t>(k); c < dist.size(); ++c) acc += dist[c];
  return acc;
}

inline double maxcut_objective(const MaxCutProblem& pr, const FeedforwardProgram& p, const std::vector<double>& values) {
  WaveState s = pinned_branch_values(p, values, plus_state(pr.n));
  apply_program(s, p);
  return loss_expectation(s, maxcut_loss(pr, p));
}

inline ExperimentResult run_maxcut(Optimizer opt, Streams& st, const ExperimentOptions& o = {},
                                   const MaxCutProblem& pr = {}) {
  const QuditSpec spec = pr.spec;
  const auto prog = build_maxcut_program(pr, spec);
  const auto loss = maxcut_loss(pr, prog);
  const int np = 2 * pr.P;
  const std::vector<QuditSpec> specs(static_cast<std::size_t>(np), spec);
  std::vector<Kick> batch{qfb_kick(prog, loss, plus_state(pr.n))};
  ExperimentResult res;
  auto record = [&](int k, double eta, double gamma, double sigma, std::vector<double> grad, std::vector<double> phi,
                    std::vector<double> pi, ojson flags) {
    TraceRecord r;
    r.iter = k;
    r.eta = eta;
    r.gamma = gamma;
    r.sigma = sigma;
    r.grad = std::move(grad);
    r.metric = prob_cut_at_least(pr, prog, phi, 4);
    r.extra["loss"] = maxcut_objective(pr, prog, phi);
    r.phi0 = std::move(phi);
    r.pi0 = std::move(pi);
    r.extra["flags"] = std::move(flags);
    res.trace.push_back(std::move(r));
  };

  if (opt == Optimizer::momgrad) {
    const int iters = o.iters.value_or(25);
    auto sch = make_schedule([](int) { return 0.35; }, [](int j) { return std::pow(0.98, j) / 4.0; },
                             [](int j) { return std::pow(0.98, j); }, o);
    MomGradState mg{specs, initial_pointers(static_cast<std::size_t>(np), sch.sigma(0), st.init)};
    record(0, 0, 0, sch.sigma(0), std::vector<double>(static_cast<std::size_t>(np), 0.0), means_of(mg.ptrs),
           momenta_of(mg.ptrs), step_flags(false, false, 0.0));
    for (int k = 0; k < iters; ++k) {
      auto info = momgrad_step(mg, batch, sch, {}, &st.shots);
      record(k + 1, sch.eta(k), sch.gamma(k), sch.sigma(k), info.grad, means_of(mg.ptrs), momenta_of(mg.ptrs),
             step_flags(info.clamped, info.overflow, info.wrap_probability));
    }
  } else if (opt == Optimizer::qdd) {
    const int iters = o.iters.value_or(25);
    const double eta = o.eta.value_or(0.35);
    auto gamma = [&](int j) { return o.gamma ? *o.gamma : std::pow(0.98, j) / 4.0; };
    const double sigma0 = o.sigma.value_or(1.0);
    QddState q{product_pointer_state(specs, initial_pointers(static_cast<std::size_t>(np), sigma0, st.init))};
    std::vector<int> regs(static_cast<std::size_t>(np));
    for (int i = 0; i < np; ++i) regs[i] = i;
    auto stats = momentum_stats(q.state, regs);
    record(0, 0, 0, sigma0, std::vector<double>(static_cast<std::size_t>(np), 0.0), stats.mean_phi, stats.mean_pi,
           step_flags(false, false, 0.0));
    for (int k = 0; k < iters; ++k) {
      auto info = qdd_step(q, batch, eta, gamma(k), st.trajectory, 0.0, &stats.mean_pi);
      stats = info.after_pulse;
      record(k + 1, eta, gamma(k), sigma0, info.grad, stats.mean_phi, stats.mean_pi,
             step_flags(false, info.overflow, info.wrap_probability));
    }
  } else {
    NelderMeadOptions nm;
    nm.max_iters = o.iters.value_or(100);
    std::vector<double> x0;
    for (int i = 0; i < np; ++i) x0.push_back(normal(st.init, 0.5));
    auto r = nelder_mead([&](const std::vector<double>& x) { return maxcut_objective(pr, prog, x); }, x0, nm);
    record(0, 0, 0, 0, {}, x0, {}, step_flags(false, false, 0.0));
    for (std::size_t k = 0; k < r.x_per_iter.size(); ++k)
      record(static_cast<int>(k) + 1, 0, 0, 0, {}, r.x_per_iter[k], {}, step_flags(false, false, 0.0));
    res.summary["evaluations"] = r.evals;
    res.summary["stop"] = r.stop;
  }
  res.summary["final_metric"] = res.trace.back().metric;
  res.summary["initial_metric"] = res.trace.front().metric;
  int reach = -1;
  for (const auto& r : res.trace)
    if (r.metric >= 0.75) {
      reach = r.iter;
      break;
    }
  res.summary["iterations_to_0_75"] = reach;
  return res;
}

// ---------------------------------------------------------- unitary ----

inline CVec bloch_uniform(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double theta = std::acos(1.0 - 2.0 * u(rng));
  const double phi = 2.0 * kPi * u(rng);
  return {std::cos(theta / 2), std::polar(std::sin(theta / 2), phi)};
}

// V with V|0> = phi (so V^dagger |phi> = |0>).
inline CMat unitary_from_state(const CVec& phi) {
  CMat v(2, 2);
  v << phi[0], -std::conj(phi[1]), phi[1], std::conj(phi[0]);
  return v;
}

inline CVec apply2(const CMat& u, const CVec& x) { return {u(0, 0) * x[0] + u(0, 1) * x[1], u(1, 0) * x[0] + u(1, 1) * x[1]}; }

// Rx(Phi1) then Ry(Phi2) then Rz(Phi3) on one qubit.
inline FeedforwardProgram build_unitary_program(const QuditSpec& spec = default_param_spec()) {
  FeedforwardProgram p;
  for (const char* n : {"rx", "ry", "rz"}) p.params.push_back(p.layout.add(qudit_register(n, spec)));
  p.compute = {p.layout.add(qubit_register("q"))};
  p.gates = {param_exponential_gate(0, {3}, pauli_x() / 2.0), param_exponential_gate(1, {3}, pauli_y() / 2.0),
             param_exponential_gate(2, {3}, pauli_z() / 2.0)};
  return p;
}

inline CVec unitary_output(const FeedforwardProgram& p, const std::vector<double>& values, const CVec& in) {
  WaveState s = pinned_branch_values(p, values, in);
  apply_program(s, p);
  return s.amp;
}

inline double mean_fidelity(const FeedforwardProgram& p, const std::vector<double>& values, const CMat& v,
                            const std::vector<CVec>& inputs) {
  double acc = 0.0;
  for (const auto& in : inputs) acc += fidelity(unitary_output(p, values, in), apply2(v, in));
  return acc / static_cast<double>(inputs.size());
}

inline Kick unitary_kick(const FeedforwardProgram& p, const CVec& in, const CVec& out) {
  return qfb_kick(p, negative_projector_loss({3}, out), in);
}

struct UnitaryLearnConfig {
  int minibatch = 10;
  int holdout = 50;
  QuditSpec spec = default_param_spec();
};

inline ExperimentResult run_unitary_learning(Optimizer opt, Streams& st, const ExperimentOptions& o = {},
                                             const UnitaryLearnConfig& cfg = {}) {
  if (opt == Optimizer::nelder_mead) throw std::invalid_argument("unitary learning supports momgrad and qdd");
  const QuditSpec spec = cfg.spec;
  const auto prog = build_unitary_program(spec);
  const std::vector<QuditSpec> specs(3, spec);
  const CMat v = unitary_from_state(bloch_uniform(st.data));
  std::vector<CVec> holdout;
  for (int i = 0; i < cfg.holdout; ++i) holdout.push_back(bloch_uniform(st.data));
  const int iters = o.iters.value_or(40);
  const double eta = o.eta.value_or(0.2);
  auto gamma = [&](int j) { return o.gamma ? *o.gamma : 0.2 * std::pow(0.98, j); };
  const double sigma0 = o.sigma.value_or(0.9);
  auto minibatch = [&] {
    std::vector<Kick> b;
    for (int i = 0; i < cfg.minibatch; ++i) {
      const CVec in = bloch_uniform(st.data);
      b.push_back(unitary_kick(prog, in, apply2(v, in)));
    }
    return b;
  };
  ExperimentResult res;
  auto record = [&](int k, double e, double g, double s, std::vector<double> grad, std::vector<double> phi,
                    std::vector<double> pi, ojson flags) {
    TraceRecord r;
    r.iter = k;
    r.eta = e;
    r.gamma = g;
    r.sigma = s;
    r.grad = std::move(grad);
    r.metric = mean_fidelity(prog, phi, v, holdout);
    r.phi0 = std::move(phi);
    r.pi0 = std::move(pi);
    r.extra["batch"] = cfg.minibatch;
    r.extra["flags"] = std::move(flags);
    res.trace.push_back(std::move(r));
  };
  if (opt == Optimizer::momgrad) {
    auto sch = make_schedule([eta](int) { return eta; }, gamma, [sigma0](int) { return sigma0; }, o);
    MomGradState mg{specs, initial_pointers(3, sigma0, st.init)};
    record(0, 0, 0, sigma0, {0, 0, 0}, means_of(mg.ptrs), momenta_of(mg.ptrs), step_flags(false, false, 0.0));
    for (int k = 0; k < iters; ++k) {
      auto info = momgrad_step(mg, minibatch(), sch, {}, &st.shots);
      record(k + 1, sch.eta(k), sch.gamma(k), sch.sigma(k), info.grad, means_of(mg.ptrs), momenta_of(mg.ptrs),
             step_flags(info.clamped, info.overflow, info.wrap_probability));
    }
  } else {
    QddState q{product_pointer_state(specs, initial_pointers(3, sigma0, st.init))};
    auto stats = momentum_stats(q.state, {0, 1, 2});
    record(0, 0, 0, sigma0, {0, 0, 0}, stats.mean_phi, stats.mean_pi, step_flags(false, false, 0.0));
    for (int k = 0; k < iters; ++k) {
      auto info = qdd_step(q, minibatch(), eta, gamma(k), st.trajectory, 0.0, &stats.mean_pi);
      stats = info.after_pulse;
      record(k + 1, eta, gamma(k), sigma0, info.grad, stats.mean_phi, stats.mean_pi,
             step_flags(false, info.overflow, info.wrap_probability));
    }
  }
  res.summary["final_metric"] = res.trace.back().metric;
  res.summary["initial_metric"] = res.trace.front().metric;
  return res;
}

// ----------------------------------------------------------- hybrid ----

// Basis index of |j> with qubit k holding bit k of j (k = 0 least significant);
// qubit 0 is the most significant position of the index.
inline std::size_t little_endian_index(std::size_t j, int n) {
  std::size_t idx = 0;
  for (int k = 0; k < n; ++k)
    if ((j >> k) & 1u) idx |= std::size_t{1} << (n - 1 - k);
  return idx;
}

// F|j> = 2^{-n/2} sum_m e^{2 pi i j m / 2^n} |m>.
inline CVec qft_state(std::size_t j, int n) {
  const std::size_t dim = std::size_t{1} << n;
  CVec v(dim);
  for (std::size_t m = 0; m < dim; ++m)
    v[little_endian_index(m, n)] =
        std::polar(1.0 / std::sqrt(static_cast<double>(dim)), 2.0 * kPi * static_cast<double>(j * m) / dim);
  return v;
}

inline CMat controlled_phase_generator() {
  CMat h = CMat::Zero(4, 4);
  h(3, 3) = 1.0;
  return h;
}

// Inverse-QFT skeleton on 3 qubits. R(Phi) = |0><0| + e^{i Phi pi/4}|1><1| on the
// |11> component of each parametrized pair; the exact inverse is Phi = (-2, -2, -1).
inline FeedforwardProgram build_hybrid_program(const QuditSpec& spec = default_param_spec()) {
  FeedforwardProgram p;
  for (const char* n : {"phi1", "phi2", "phi3"}) p.params.push_back(p.layout.add(qudit_register(n, spec)));
  const int q0 = p.layout.add(qubit_register("q0"));
  const int q1 = p.layout.add(qubit_register("q1"));
  const int q2 = p.layout.add(qubit_register("q2"));
  p.compute = {q0, q1, q2};
  const double scale = -kPi / 4.0;
  p.gates.push_back(fixed_unitary_gate({q0, q2}, swap_matrix(2)));
  p.gates.push_back(fixed_unitary_gate({q0}, hadamard()));
  p.gates.push_back(param_exponential_gate(0, {q0, q1}, controlled_phase_generator(), scale));
  p.gates.push_back(fixed_unitary_gate({q1}, hadamard()));
  p.gates.push_back(param_exponential_gate(1, {q1, q2}, controlled_phase_generator(), scale));
  p.gates.push_back(param_exponential_gate(2, {q0, q2}, controlled_phase_generator(), scale));
  p.gates.push_back(fixed_unitary_gate({q2}, hadamard()));
  return p;
}

inline std::vector<double> z_expectations(const FeedforwardProgram& p, const std::vector<double>& values,
                                          const CVec& xi) {
  WaveState s = pinned_branch_values(p, values, xi);
  apply_program(s, p);
  std::vector<double> z(p.compute.size(), 0.0);
  const int n = static_cast<int>(p.compute.size());
  for (std::size_t i = 0; i < s.amp.size(); ++i)
    for (int k = 0; k < n; ++k) z[static_cast<std::size_t>(k)] += (bit_of(i, k, n) ? -1.0 : 1.0) * std::norm(s.amp[i]);
  return z;
}

// e^{-i eta g.Z} on the compute qubits.
inline LossSpec linear_z_loss(const FeedforwardProgram& p, const std::vector<double>& g) {
  std::vector<PauliZTerm> terms;
  for (std::size_t k = 0; k < g.size(); ++k) terms.push_back({g[k], {static_cast<int>(k)}});
  return pauli_z_loss(p.compute, terms);
}

struct ClassicalNet {
  std::vector<double> w;
  double b = 0.0;

  double pre(const std::vector<double>& z) const {
    if (z.size() != w.size()) throw std::invalid_argument("ClassicalNet: input size");
    double s = b;
    for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * z[k];
    return s;
  }
  double forward(const std::vector<double>& z) const { return std::max(pre(z), 0.0); }
  // d forward / d z; zero on the inactive side of the ReLU (and at the kink).
  std::vector<double> input_gradient(const std::vector<double>& z) const {
    const double on = pre(z) > 0.0 ? 1.0 : 0.0;
    std::vector<double> g;
    for (double x : w) g.push_back(on * x);
    return g;
  }
  // SGD on (forward - target)^2; returns dL/dz evaluated before the update.
  std::vector<double> sgd_step(const std::vector<double>& z, double target, double lr) {
    const double y = forward(z);
    const double dy = 2.0 * (y - target);
    auto gz = input_gradient(z);
    for (auto& x : gz) x *= dy;
    const double on = pre(z) > 0.0 ? 1.0 : 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * dy * on * z[k];
    b -= lr * dy * on;
    return gz;
  }
};

struct HybridConfig {
  int n_qubits = 3;
  double gamma = 1.0;
  QuditSpec spec = default_param_spec();
};

inline double hybrid_mse(const FeedforwardProgram& p, const std::vector<double>& values, const ClassicalNet& net,
                         int n) {
  const std::size_t dim = std::size_t{1} << n;
  double acc = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double e = net.forward(z_expectations(p, values, qft_state(j, n))) - static_cast<double>(j);
    acc += e * e;
  }
  return acc / static_cast<double>(dim);
}

inline ExperimentResult run_hybrid(Streams& st, const ExperimentOptions& o = {}, const HybridConfig& cfg = {}) {
  const QuditSpec spec = cfg.spec;
  const auto prog = build_hybrid_program(spec);
  const std::vector<QuditSpec> specs(3, spec);
  const int iters = o.iters.value_or(60);
  const double eta = o.eta.value_or(0.15);
  Schedule sch;
  sch.eta = [eta](int) { return eta; };
  sch.gamma = o.gamma ? std::function<double(int)>([g = *o.gamma](int) { return g; })
                      : std::function<double(int)>([g = cfg.gamma](int) { return g; });
  // One iteration is one datum.
  sch.sigma = o.sigma ? std::function<double(int)>([s = *o.sigma](int) { return s; })
                      : std::function<double(int)>([](int k) { return 0.65 * std::pow(0.98, k); });
  sch.shots = o.shots;
  sch.momentum_discard = o.momentum_discard;
  MomGradState mg{specs, initial_pointers(3, sch.sigma(0), st.init)};
  ClassicalNet net;
  for (int k = 0; k < cfg.n_qubits; ++k) net.w.push_back(normal(st.init, 0.5));
  const std::size_t dim = std::size_t{1} << cfg.n_qubits;
  std::vector<std::size_t> order(dim);
  for (std::size_t j = 0; j < dim; ++j) order[j] = j;

  ExperimentResult res;
  auto record = [&](int k, std::vector<double> grad, bool clamped, bool overflow, double wrap) {
    TraceRecord r;
    r.iter = k;
    r.eta = k == 0 ? 0.0 : eta;
    r.gamma = k == 0 ? 0.0 : sch.gamma(0);
    r.sigma = sch.sigma(std::max(mg.iter - 1, 0));
    r.grad = std::move(grad);
    r.phi0 = means_of(mg.ptrs);
    r.pi0 = momenta_of(mg.ptrs);
    r.metric = hybrid_mse(prog, r.phi0, net, cfg.n_qubits);
    r.extra["classical_w"] = net.w;
    r.extra["classical_b"] = net.b;
    r.extra["batch"] = 1;
    r.extra["flags"] = step_flags(clamped, overflow, wrap);
    res.trace.push_back(std::move(r));
  };
  record(0, {0, 0, 0}, false, false, 0.0);
  for (int epoch = 0; epoch < iters; ++epoch) {
    std::shuffle(order.begin(), order.end(), st.data);
    std::vector<double> grad_sum(3, 0.0);
    bool clamped = false, overflow = false;
    double wrap = 0.0;
    for (std::size_t j : order) {
      const CVec xi = qft_state(j, cfg.n_qubits);
      const auto z = z_expectations(prog, means_of(mg.ptrs), xi);
      const auto g = net.sgd_step(z, static_cast<double>(j), eta);
      auto info = momgrad_step(mg, {qfb_kick(prog, linear_z_loss(prog, g), xi)}, sch, {}, &st.shots);
      for (std::size_t i = 0; i < 3; ++i) grad_sum[i] += info.grad[i] / static_cast<double>(dim);
      clamped = clamped || info.clamped;
      overflow = overflow || info.overflow;
      wrap = std::max(wrap, info.wrap_probability);
    }
    record(epoch + 1, grad_sum, clamped, overflow, wrap);
  }
  res.summary["final_metric"] = res.trace.back().metric;
  res.summary["initial_metric"] = res.trace.front().metric;
  return res;
}

// ------------------------------------------------- gradient checks ----

struct GradientCheck {
  std::vector<double> readout, reference;
  double worst = 0.0;  // largest relative gap, see relative_gap
  int checked = 0;
  bool pass(double tol) const { return checked > 0 && worst <= tol; }
};

inline ojson to_json(const GradientCheck& g) {
  return {{"readout", g.readout}, {"reference", g.reference}, {"worst", g.worst}, {"checked", g.checked}};
}

// Componentwise |q - r| / max(|r|, floor_frac * max|r|, abs_floor); the floors keep
// near-zero components from dominating.
inline double relative_gap(const std::vector<double>& q, const std::vector<double>& r, double floor_frac = 0.1,
                           double abs_floor = 1e-6) {
  double scale = 0.0;
  for (double x : r) scale = std::max(scale, std::abs(x));
  double worst = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double den = std::max({std::abs(r[i]), floor_frac * scale, abs_floor});
    worst = std::max(worst, std::abs(q[i] - r[i]) / den);
  }
  return worst;
}

// Small enough that the second-order term eta <[M,[M,Pi]]> / 2 stays below 1%
// of the smallest Max-Cut gradients (|M| ~ 5).
inline constexpr double kCheckEta = 1e-5;
inline constexpr double kCheckShift = 1e-4;

// The small-eta kick readout equals i<[Pi, L]> = d/ds <L> with the pointer
// translated by e^{-i s Pi}; the reference is that derivative by central differences.
inline GradientCheck qfb_fd_check(const FeedforwardProgram& p, const LossSpec& loss, const CVec& xi,
                                  const std::vector<GaussianPointer>& ptrs, double eta = kCheckEta,
                                  double h = kCheckShift) {
  const WaveState s0 = joint_pointer_state(p, ptrs, xi);
  GradientCheck g;
  g.readout = qfb_run(p, loss, eta, s0).effective_gradient;
  for (int r : p.params) {
    const QuditSpec& spec = p.layout.reg(r).spec;
    double f[2];
    for (int k = 0; k < 2; ++k) {
      WaveState s = s0;
      apply_matrix(s, r, translation_matrix(spec, k == 0 ? h : -h));
      apply_program(s, p);
      f[k] = loss_expectation(s, loss);
    }
    g.reference.push_back((f[0] - f[1]) / (2 * h));
  }
  g.checked = static_cast<int>(g.reference.size());
  g.worst = relative_gap(g.readout, g.reference);
  return g;
}

inline std::vector<double> product_weights_amps(const std::vector<CVec>& factors) {
  std::vector<double> w{1.0};
  for (const auto& a : factors) {
    std::vector<double> next(w.size() * a.size());
    for (std::size_t i = 0; i < w.size(); ++i)
      for (std::size_t j = 0; j < a.size(); ++j) next[i * a.size() + j] = w[i] * std::norm(a[j]);
    w.swap(next);
  }
  return w;
}

// Same check on the XOR fast path: batch-averaged mask kicks on the parameter grid.
inline GradientCheck xor_fd_check(const XorNetConfig& cfg, const std::vector<std::uint8_t>& mask,
                                  const std::vector<GaussianPointer>& ptrs, double eta = kCheckEta,
                                  double h = kCheckShift) {
  const std::vector<QuditSpec> specs(9, cfg.spec);
  std::vector<double> before;
  std::vector<CVec> amps;
  for (std::size_t i = 0; i < 9; ++i) {
    before.push_back(measure_momentum_expectation(prepare_gaussian(cfg.spec, ptrs[i]), {0})[0]);
    amps.push_back(gaussian_amplitudes(cfg.spec, ptrs[i]));
  }
  GradientCheck g;
  {
    WaveState s = product_pointer_state(specs, ptrs);
    auto shared = std::shared_ptr<const std::vector<std::uint8_t>>(&mask, [](const std::vector<std::uint8_t>*) {});
    std::vector<Kick> batch;
    const auto data = xor_dataset();
    for (std::size_t m = 0; m < data.size(); ++m) batch.push_back(xor_mask_kick(shared, static_cast<int>(m), data[m].y));
    std::vector<int> params{0, 1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<ComputeBlock> blocks;
    sequential_minibatch_kick(s, params, batch, eta, blocks);
    const auto after = measure_momentum_expectation(s, params);
    for (std::size_t i = 0; i < 9; ++i) g.readout.push_back(-(after[i] - before[i]) / eta);
  }
  for (std::size_t i = 0; i < 9; ++i) {
    double f[2];
    for (int k = 0; k < 2; ++k) {
      auto shifted = amps;
      const CMat t = translation_matrix(cfg.spec, k == 0 ? h : -h);
      CVec out(shifted[i].size(), cplx(0.0));
      for (std::size_t a = 0; a < out.size(); ++a)
        for (std::size_t b = 0; b < out.size(); ++b)
          out[a] += t(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) * shifted[i][b];
      shifted[i] = out;
      f[k] = mask_expectation(mask, product_weights_amps(shifted)).cost;
    }
    g.reference.push_back((f[0] - f[1]) / (2 * h));
  }
  g.checked = 9;
  g.worst = relative_gap(g.readout, g.reference);
  return g;
}

// Classical backprop of the discretized ReLU network: forward values carry the
// modular wrap of the registers, derivatives treat the wrap as a constant offset.
inline std::array<double, 9> xor_classical_gradient(const XorNetConfig& cfg, const std::vector<double>& v, double x0,
                                                    double x1) {
  const double period = cfg.spec.b - cfg.spec.a + cfg.spec.spacing();
  auto wrapv = [&](double z) { return cfg.spec.a + std::fmod(std::fmod(z - cfg.spec.a, period) + period, period); };
  const double x[2] = {x0, x1};
  std::array<double, 9> g{};
  for (int k = 0; k < 2; ++k) {
    const double hk = wrapv(x[0] * v[static_cast<std::size_t>(k)] + x[1] * v[static_cast<std::size_t>(2 + k)] +
                            v[static_cast<std::size_t>(4 + k)]);
    const double on = hk > 0.0 ? 1.0 : 0.0;
    const double w2 = v[static_cast<std::size_t>(6 + k)];
    g[static_cast<std::size_t>(k)] = w2 * on * x[0];
    g[static_cast<std::size_t>(2 + k)] = w2 * on * x[1];
    g[static_cast<std::size_t>(4 + k)] = w2 * on;
    g[static_cast<std::size_t>(6 + k)] = std::max(hk, 0.0);
  }
  g[8] = 1.0;
  return g;
}

struct BackpropCheck {
  int points = 0, checked = 0, skipped = 0;
  double worst = 0.0;  // max |q - c| / max(|c|, 1)
  bool pass(double tol) const { return checked > 0 && worst <= tol; }
};

inline ojson to_json(const BackpropCheck& b) {
  return {{"points", b.points}, {"checked", b.checked}, {"skipped", b.skipped}, {"worst", b.worst}};
}

inline constexpr double kBackpropSigma = 0.7;

// Weight-register kick of a single quantum parameter (others pinned at grid
// values) under the linear output loss L = a2, against classical backprop.
// Only parameters whose output profile is affine over +-2 grid steps are
// compared: the classical derivative is undefined at ReLU kinks and wraps.
template <class Rng>
BackpropCheck xor_backprop_check(const XorNetConfig& cfg, int n_points, Rng& rng, double eta = kCheckEta) {
  BackpropCheck rep;
  const int d = cfg.spec.d;
  std::uniform_int_distribution<int> digit(0, d - 1);
  const auto data = xor_dataset();
  const LossSpec loss = diagonal_loss({11}, position_values(cfg.spec));
  for (int pt = 0; pt < n_points; ++pt) {
    ++rep.points;
    std::vector<double> v(9);
    std::vector<int> dig(9);
    for (int i = 0; i < 9; ++i) {
      dig[static_cast<std::size_t>(i)] = digit(rng);
      v[static_cast<std::size_t>(i)] = cfg.spec.value(dig[static_cast<std::size_t>(i)]);
    }
    const auto& dat = data[static_cast<std::size_t>(pt) % data.size()];
    const auto prog = build_xor_program(cfg, dat.x0, dat.x1);
    const auto cls = xor_classical_gradient(cfg, v, dat.x0, dat.x1);
    for (int i = 0; i < 9; ++i) {
      const int c = dig[static_cast<std::size_t>(i)];
      bool affine = c >= 2 && c <= d - 3;
      if (affine) {
        double prof[5];
        for (int o = -2; o <= 2; ++o) {
          auto w = v;
          w[static_cast<std::size_t>(i)] = cfg.spec.value(c + o);
          prof[o + 2] = xor_output(cfg, w, dat.x0, dat.x1);
        }
        for (int o = 0; o < 3; ++o) affine = affine && std::abs(prof[o] - 2 * prof[o + 1] + prof[o + 2]) < 1e-9;
      }
      if (!affine) {
        ++rep.skipped;
        continue;
      }
      FeedforwardProgram q = prog;
      for (int r = 0; r < 9; ++r)
        if (r != i) q.layout = q.layout.pinned(r, v[static_cast<std::size_t>(r)]);
      q.params = {i};
      const WaveState s = joint_pointer_state(q, {{v[static_cast<std::size_t>(i)], 0.0, kBackpropSigma}}, xor_xi(cfg));
      const double g = qfb_run(q, loss, eta, s).effective_gradient[0];
      const double want = cls[static_cast<std::size_t>(i)];
      rep.worst = std::max(rep.worst, std::abs(g - want) / std::max(std::abs(want), 1.0));
      ++rep.checked;
    }
  }
  return rep;
}

// Random pointers of the standard initialization.
inline std::vector<GaussianPointer> random_pointers(std::size_t n, double sigma, std::mt19937_64& rng) {
  return initial_pointers(n, sigma, rng);
}

// FD checks on the four experiment programs at `n` random pointer positions each.
struct ProgramChecks {
  std::vector<std::pair<std::string, GradientCheck>> runs;
  double worst() const {
    double w = 0.0;
    for (const auto& [_, g] : runs) w = std::max(w, g.worst);
    return w;
  }
};

inline ProgramChecks experiment_fd_checks(int n, std::mt19937_64& rng, bool include_xor = true) {
  ProgramChecks out;
  {
    const MaxCutProblem pr;
    const auto p = build_maxcut_program(pr);
    for (int k = 0; k < n; ++k)
      out.runs.emplace_back("maxcut", qfb_fd_check(p, maxcut_loss(pr, p), plus_state(pr.n), random_pointers(4, 1.0, rng)));
  }
  {
    const auto p = build_unitary_program();
    for (int k = 0; k < n; ++k) {
      const CVec in = bloch_uniform(rng);
      const CVec o = bloch_uniform(rng);
      out.runs.emplace_back("unitary", qfb_fd_check(p, negative_projector_loss({3}, o), in, random_pointers(3, 0.9, rng)));
    }
  }
  {
    const auto p = build_hybrid_program();
    for (int k = 0; k < n; ++k) {
      std::vector<double> g{normal(rng, 1.0), normal(rng, 1.0), normal(rng, 1.0)};
      const auto j = static_cast<std::size_t>(std::uniform_int_distribution<int>(0, 7)(rng));
      out.runs.emplace_back("hybrid", qfb_fd_check(p, linear_z_loss(p, g), qft_state(j, 3), random_pointers(3, 0.65, rng)));
    }
  }
  if (include_xor) {
    const XorNetConfig cfg;
    const auto mask = xor_positive_mask(cfg);
    for (int k = 0; k < n; ++k) out.runs.emplace_back("xor", xor_fd_check(cfg, *mask, random_pointers(9, 1.0, rng)));
  }
  return out;
}

// eta-halving on the hybrid linear kick: the readout approaches d/dPhi (g . <Z>).
inline EtaScalingReport hybrid_eta_halving(std::mt19937_64& rng) {
  const auto p = build_hybrid_program();
  std::vector<double> g{normal(rng, 1.0), normal(rng, 1.0), normal(rng, 1.0)};
  const auto j = static_cast<std::size_t>(std::uniform_int_distribution<int>(0, 7)(rng));
  return verify_eta_scaling(p, linear_z_loss(p, g), random_pointers(3, 0.65, rng), qft_state(j, 3),
                            {0.0, 0.02, 0.01, 0.005, 0.0025});
}

}  // namespace baqprop::apps
