#include "baqprop/apps.hpp"
#include "gen.hpp"

#include <gtest/gtest.h>

using namespace baqprop;
using namespace baqprop::apps;

namespace {

// Plain ReLU network on real inputs, no grid.
double relu_net(const std::vector<double>& v, double x0, double x1) {
  double out = v[8];
  for (int k = 0; k < 2; ++k) {
    const double h = x0 * v[static_cast<std::size_t>(k)] + x1 * v[static_cast<std::size_t>(2 + k)] + v[static_cast<std::size_t>(4 + k)];
    out += std::max(h, 0.0) * v[static_cast<std::size_t>(6 + k)];
  }
  return out;
}

const XorNetConfig kSmall{{3, -1.0, 1.0}};

std::size_t flat_index(const std::vector<int>& dig, int d) {
  std::size_t i = 0;
  for (int x : dig) i = i * static_cast<std::size_t>(d) + static_cast<std::size_t>(x);
  return i;
}

CMat rx(double t) {
  CMat m(2, 2);
  m << std::cos(t / 2), cplx(0, -std::sin(t / 2)), cplx(0, -std::sin(t / 2)), std::cos(t / 2);
  return m;
}
CMat ry(double t) {
  CMat m(2, 2);
  m << std::cos(t / 2), -std::sin(t / 2), std::sin(t / 2), std::cos(t / 2);
  return m;
}
CMat rz(double t) {
  CMat m(2, 2);
  m << std::polar(1.0, -t / 2), 0.0, 0.0, std::polar(1.0, t / 2);
  return m;
}

}  // namespace

// ------------------------------------------------------------------ XOR

TEST(Xor, HandSetWeightsClassifyXor) {
  const XorNetConfig cfg;
  const std::vector<double> v{1, 1, 1, 1, 0, -1, 1, -2, 0};
  for (const auto& dat : xor_dataset()) {
    EXPECT_EQ(xor_output(cfg, v, dat.x0, dat.x1) > 0.0, dat.y == 1);
    EXPECT_DOUBLE_EQ(xor_output(cfg, v, dat.x0, dat.x1), relu_net(v, dat.x0, dat.x1));
  }
  const auto m = xor_metrics(cfg, v);
  EXPECT_EQ(m.correct, 4);
  EXPECT_LT(m.cross_entropy, 1e-10);
}

TEST(Xor, ZeroParametersGiveClassZero) {
  const XorNetConfig cfg;
  const std::vector<double> zero(9, 0.0);
  EXPECT_EQ(xor_output(cfg, zero, 0, 0), 0.0);
  const auto p = build_xor_program(cfg, 0, 0);
  const auto table = effective_phase_grid(build_xor_program(kSmall, 0, 0), xor_loss(kSmall, 0), xor_xi(kSmall));
  EXPECT_EQ(table[flat_index(std::vector<int>(9, 1), 3)], 0.0);
  EXPECT_EQ(p.params.size(), 9u);
  EXPECT_EQ(p.compute.size(), 3u);
}

TEST(Xor, EvenDimensionRejected) {
  EXPECT_THROW(build_xor_program(XorNetConfig{{6, -3, 2}}, 0, 1), std::invalid_argument);
}

// The closed-form mask reproduces the simulated feedforward loss at every grid point.
TEST(Xor, MaskMatchesEffectivePhaseGrid) {
  const auto mask = xor_positive_mask(kSmall);
  const auto data = xor_dataset();
  for (std::size_t m = 0; m < data.size(); ++m) {
    const auto table =
        effective_phase_grid(build_xor_program(kSmall, data[m].x0, data[m].x1), xor_loss(kSmall, data[m].y), xor_xi(kSmall));
    ASSERT_EQ(table.size(), mask->size());
    for (std::size_t i = 0; i < table.size(); ++i)
      ASSERT_EQ(table[i], ((((*mask)[i] >> m) & 1) != data[m].y) ? 1.0 : 0.0) << "datum " << m << " index " << i;
  }
}

TEST(Xor, MaskSpotChecksOnDefaultGrid) {
  const XorNetConfig cfg;
  const auto mask = xor_positive_mask(cfg);
  gen::Gen g(81);
  const auto data = xor_dataset();
  for (int t = 0; t < 60; ++t) {
    std::vector<int> dig(9);
    std::vector<double> v(9);
    for (int i = 0; i < 9; ++i) {
      dig[static_cast<std::size_t>(i)] = g.integer(0, 6);
      v[static_cast<std::size_t>(i)] = cfg.spec.value(dig[static_cast<std::size_t>(i)]);
    }
    const auto bits = (*mask)[flat_index(dig, 7)];
    for (std::size_t m = 0; m < 4; ++m)
      EXPECT_EQ(((bits >> m) & 1) == 1, xor_output(cfg, v, data[m].x0, data[m].x1) > 0.0);
  }
}

TEST(Xor, MaskKickIsTheDiagonalLossPhase) {
  const auto mask = xor_positive_mask(kSmall);
  gen::Gen g(82);
  Layout l;
  for (const char* n : kXorParamNames) l.add(qudit_register(n, kSmall.spec));
  const WaveState s0 = g.random_state(l);
  const auto data = xor_dataset();
  for (std::size_t m = 0; m < 4; ++m) {
    WaveState a = s0, b = s0;
    std::vector<ComputeBlock> blocks;
    xor_mask_kick(mask, static_cast<int>(m), data[m].y).apply(a, {0, 1, 2, 3, 4, 5, 6, 7, 8}, 0.37, blocks);
    const auto table =
        effective_phase_grid(build_xor_program(kSmall, data[m].x0, data[m].x1), xor_loss(kSmall, data[m].y), xor_xi(kSmall));
    qfb_fast(b, table, 0.37);
    EXPECT_LT(gen::max_abs_diff(a.amp, b.amp), 1e-12);
  }
}

TEST(Xor, MaskKickRejectsWrongLayout) {
  const auto mask = xor_positive_mask(kSmall);
  WaveState s(Layout{}, CVec{1.0});
  std::vector<ComputeBlock> blocks;
  EXPECT_THROW(xor_mask_kick(mask, 0, 0).apply(s, {0}, 0.1, blocks), std::invalid_argument);
}

TEST(Xor, CrossEntropyIsClipped) {
  EXPECT_NEAR(cross_entropy(1, 1.0), -std::log(1 - kCrossEntropyClip), 1e-15);
  EXPECT_NEAR(cross_entropy(0, 1.0), -std::log(kCrossEntropyClip), 1e-4);
  EXPECT_NEAR(cross_entropy(1, 0.5), std::log(2.0), 1e-15);
}

// Iteration 0 of the trace against an independent effective-phase-grid evaluation.
TEST(Xor, IterationZeroLossMatchesEffectivePhaseGrid) {
  const XorNetConfig cfg{{5, -2.0, 2.0}};
  const auto data = xor_dataset();
  std::vector<std::vector<double>> tables;
  for (const auto& dat : data)
    tables.push_back(effective_phase_grid(build_xor_program(cfg, dat.x0, dat.x1), xor_loss(cfg, dat.y), xor_xi(cfg)));
  for (Optimizer opt : {Optimizer::momgrad, Optimizer::qdd}) {
    Streams st = Streams::from_seed(5);
    ExperimentOptions o;
    o.iters = 0;
    const auto res = run_xor(opt, st, o, cfg);
    ASSERT_EQ(res.trace.size(), 1u);
    const auto& r = res.trace[0];
    Streams again = Streams::from_seed(5);
    const auto ptrs = initial_pointers(9, 1.0, again.init);
    // QDD records <Phi> of the discretized state rather than the drawn centres.
    if (opt == Optimizer::momgrad) {
      for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(r.phi0[i], ptrs[i].phi0) << i;
    }
    std::vector<CVec> amps;
    for (const auto& p : ptrs) amps.push_back(gaussian_amplitudes(cfg.spec, p));
    const auto w = product_weights_amps(amps);
    double want = 0.0;
    for (const auto& t : tables)
      for (std::size_t i = 0; i < w.size(); ++i) want += w[i] * t[i] / 4.0;
    EXPECT_NEAR(r.extra["loss"].get<double>(), want, 1e-9);
    const auto m = xor_metrics(cfg, r.phi0);
    EXPECT_DOUBLE_EQ(r.extra["accuracy"].get<double>(), m.correct / 4.0);
    EXPECT_DOUBLE_EQ(r.metric, m.cross_entropy);
  }
}

TEST(Xor, ShortRunRecordsEveryIteration) {
  Streams st = Streams::from_seed(2);
  ExperimentOptions o;
  o.iters = 2;
  const auto res = run_xor(Optimizer::momgrad, st, o);
  ASSERT_EQ(res.trace.size(), 3u);
  EXPECT_EQ(res.trace[2].iter, 2);
  EXPECT_EQ(res.trace[1].extra["batch"], 4);
  EXPECT_EQ(res.decision.size(), 21u);
  EXPECT_EQ(res.decision[0].size(), 21u);
  EXPECT_TRUE(res.summary.contains("final_accuracy"));
  // Metrics recompute from the stored means alone.
  for (const auto& r : res.trace) EXPECT_DOUBLE_EQ(r.metric, xor_metrics(XorNetConfig{}, r.phi0).cross_entropy);
}

TEST(Xor, FastPathGradientMatchesTranslatedFiniteDifference) {
  const XorNetConfig cfg{{5, -2.0, 2.0}};
  const auto mask = xor_positive_mask(cfg);
  std::mt19937_64 rng(84);
  for (int k = 0; k < 3; ++k) {
    const auto g = xor_fd_check(cfg, *mask, random_pointers(9, 1.0, rng));
    EXPECT_LT(g.worst, 0.05) << to_json(g).dump();
  }
}

TEST(Xor, WeightKicksEqualClassicalBackprop) {
  std::mt19937_64 rng(85);
  const auto rep = xor_backprop_check(XorNetConfig{}, 10, rng);
  EXPECT_EQ(rep.points, 10);
  EXPECT_GE(rep.checked, 15) << to_json(rep).dump();
  EXPECT_LT(rep.worst, 0.05) << to_json(rep).dump();
}

TEST(Xor, ClassicalGradientMatchesRelaxedNetDerivative) {
  // Inside the interval and away from kinks the discretized backprop is the ordinary one.
  const XorNetConfig cfg;
  const std::vector<double> v{1, 0, -1, 1, 1, 0, 2, -1, 0};
  const auto g = xor_classical_gradient(cfg, v, 1, 1);
  for (int i = 0; i < 9; ++i) {
    auto a = v, b = v;
    a[static_cast<std::size_t>(i)] += 1e-6;
    b[static_cast<std::size_t>(i)] -= 1e-6;
    EXPECT_NEAR(g[static_cast<std::size_t>(i)], (relu_net(a, 1, 1) - relu_net(b, 1, 1)) / 2e-6, 1e-6) << i;
  }
}

// ------------------------------------------------------------- Max-Cut

TEST(MaxCut, PathGraphFacts) {
  const MaxCutProblem pr;
  const auto c = cut_sizes(pr);
  EXPECT_EQ(pr.edges.size(), 5u);
  EXPECT_EQ(*std::max_element(c.begin(), c.end()), 5);
  EXPECT_EQ(c[0b010101], 5);
  EXPECT_EQ(c[0], 0);
  EXPECT_EQ(maxcut_cost_hamiltonian(pr)(0, 0), 0.0);
  EXPECT_EQ(std::count(c.begin(), c.end(), 5), 2);
}

TEST(MaxCut, ZeroParametersGiveUniformDistribution) {
  const MaxCutProblem pr;
  const auto p = build_maxcut_program(pr);
  const auto dist = cut_distribution(pr, p, {0, 0, 0, 0});
  EXPECT_NEAR(dist[5], 2.0 / 64, 1e-14);
  double total = 0.0;
  for (double x : dist) total += x;
  EXPECT_NEAR(total, 1.0, 1e-14);
  EXPECT_NEAR(maxcut_objective(pr, p, {0, 0, 0, 0}), -2.5, 1e-12);
}

TEST(MaxCut, DistributionSumsToOne) {
  const MaxCutProblem pr;
  const auto p = build_maxcut_program(pr);
  gen::Gen g(86);
  for (int t = 0; t < 20; ++t) {
    const std::vector<double> v{g.uniform(-3, 3), g.uniform(-3, 3), g.uniform(-3, 3), g.uniform(-3, 3)};
    double total = 0.0;
    for (double x : cut_distribution(pr, p, v)) total += x;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(MaxCut, LossIsNegativeCostHamiltonian) {
  const MaxCutProblem pr;
  const auto p = build_maxcut_program(pr);
  const auto diag = loss_diagonal(maxcut_loss(pr, p));
  const auto c = cut_sizes(pr);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(diag[i], -c[i], 1e-12);
}

TEST(MaxCut, ProgramMatchesDenseQaoaCircuit) {
  const MaxCutProblem pr;
  const auto p = build_maxcut_program(pr);
  const CMat hc = maxcut_cost_hamiltonian(pr), hm = maxcut_mixer(pr);
  gen::Gen g(87);
  const std::vector<double> v{g.uniform(-3, 3), g.uniform(-3, 3), g.uniform(-3, 3), g.uniform(-3, 3)};
  Eigen::VectorXcd x = Eigen::VectorXcd::Constant(64, 1.0 / 8.0);
  for (int j = 0; j < 2; ++j) {
    x = expi_hermitian(hc, v[static_cast<std::size_t>(2 * j)]) * x;
    x = expi_hermitian(hm, v[static_cast<std::size_t>(2 * j + 1)]) * x;
  }
  WaveState s = pinned_branch_values(p, v, plus_state(6));
  apply_program(s, p);
  for (Eigen::Index i = 0; i < 64; ++i) EXPECT_LT(std::abs(s.amp[static_cast<std::size_t>(i)] - x[i]), 1e-12);
}

TEST(MaxCut, NelderMeadTraceIsBestPerIteration) {
  Streams st = Streams::from_seed(3);
  ExperimentOptions o;
  o.iters = 10;
  const auto res = run_maxcut(Optimizer::nelder_mead, st, o);
  ASSERT_EQ(res.trace.size(), 11u);
  for (std::size_t k = 2; k < res.trace.size(); ++k)
    EXPECT_LE(res.trace[k].extra["loss"].get<double>(), res.trace[k - 1].extra["loss"].get<double>() + 1e-12);
}

TEST(MaxCut, MetricRecomputesFromMeans) {
  Streams st = Streams::from_seed(4);
  ExperimentOptions o;
  o.iters = 3;
  const MaxCutProblem pr;
  const auto p = build_maxcut_program(pr);
  for (Optimizer opt : {Optimizer::momgrad, Optimizer::qdd}) {
    const auto res = run_maxcut(opt, st, o);
    ASSERT_EQ(res.trace.size(), 4u);
    for (const auto& r : res.trace) EXPECT_DOUBLE_EQ(r.metric, prob_cut_at_least(pr, p, r.phi0, 4));
  }
}

// ------------------------------------------------------------- unitary

TEST(Unitary, TargetUnitaryMapsZeroToSample) {
  std::mt19937_64 rng(88);
  for (int t = 0; t < 20; ++t) {
    const CVec phi = bloch_uniform(rng);
    const CMat v = unitary_from_state(phi);
    EXPECT_LT((v.adjoint() * v - CMat::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(fidelity(apply2(v, {1.0, 0.0}), phi), 1.0, 1e-14);
    EXPECT_NEAR(fidelity(apply2(v.adjoint(), phi), {1.0, 0.0}), 1.0, 1e-14);
  }
}

TEST(Unitary, IdentityTargetAtZeroHasUnitFidelity) {
  const auto p = build_unitary_program();
  std::mt19937_64 rng(89);
  std::vector<CVec> ins;
  for (int i = 0; i < 10; ++i) ins.push_back(bloch_uniform(rng));
  EXPECT_NEAR(mean_fidelity(p, {0, 0, 0}, CMat::Identity(2, 2), ins), 1.0, 1e-14);
}

TEST(Unitary, GridLossEqualsDirectOverlap) {
  const auto p = build_unitary_program();
  std::mt19937_64 rng(90);
  const CVec in = bloch_uniform(rng), out = bloch_uniform(rng);
  const auto table = effective_phase_grid(p, negative_projector_loss({3}, out), in);
  const auto xs = position_values(default_param_spec());
  ASSERT_EQ(table.size(), 343u);
  for (std::size_t i = 0; i < table.size(); ++i) {
    const double a = xs[i / 49], b = xs[(i / 7) % 7], c = xs[i % 7];
    const CMat u = rz(c) * ry(b) * rx(a);
    EXPECT_NEAR(table[i], -fidelity(out, apply2(u, in)), 1e-12) << i;
  }
}

TEST(Unitary, BlochSamplesAreUniformOnZ) {
  std::mt19937_64 rng(91);
  double mz = 0.0, mz2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const CVec v = bloch_uniform(rng);
    const double z = std::norm(v[0]) - std::norm(v[1]);
    mz += z / n;
    mz2 += z * z / n;
  }
  EXPECT_NEAR(mz, 0.0, 0.02);
  EXPECT_NEAR(mz2, 1.0 / 3.0, 0.02);
}

TEST(Unitary, MetricRecomputesFromMeans) {
  Streams st = Streams::from_seed(6);
  ExperimentOptions o;
  o.iters = 3;
  const auto res = run_unitary_learning(Optimizer::momgrad, st, o);
  ASSERT_EQ(res.trace.size(), 4u);
  Streams again = Streams::from_seed(6);
  const CMat v = unitary_from_state(bloch_uniform(again.data));
  std::vector<CVec> holdout;
  for (int i = 0; i < 50; ++i) holdout.push_back(bloch_uniform(again.data));
  const auto p = build_unitary_program();
  for (const auto& r : res.trace) EXPECT_DOUBLE_EQ(r.metric, mean_fidelity(p, r.phi0, v, holdout));
}

// -------------------------------------------------------------- hybrid

TEST(Hybrid, ExactParametersInvertTheQft) {
  const auto p = build_hybrid_program();
  for (std::size_t j = 0; j < 8; ++j) {
    WaveState s = pinned_branch_values(p, {-2, -2, -1}, qft_state(j, 3));
    apply_program(s, p);
    EXPECT_NEAR(std::norm(s.amp[little_endian_index(j, 3)]), 1.0, 1e-12) << j;
    const auto z = z_expectations(p, {-2, -2, -1}, qft_state(j, 3));
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(z[static_cast<std::size_t>(k)], ((j >> k) & 1) ? -1.0 : 1.0, 1e-12);
  }
}

TEST(Hybrid, QftStatesAreOrthonormal) {
  for (std::size_t a = 0; a < 8; ++a)
    for (std::size_t b = 0; b < 8; ++b) EXPECT_NEAR(fidelity(qft_state(a, 3), qft_state(b, 3)), a == b ? 1.0 : 0.0, 1e-12);
}

TEST(Hybrid, ExactReadoutWeightsGiveZeroError) {
  const auto p = build_hybrid_program();
  ClassicalNet net{{-0.5, -1.0, -2.0}, 3.5};
  EXPECT_NEAR(hybrid_mse(p, {-2, -2, -1}, net, 3), 0.0, 1e-20);
}

TEST(Hybrid, ZeroRateLeavesParametersStill) {
  Streams st = Streams::from_seed(7);
  ExperimentOptions o;
  o.iters = 3;
  o.eta = 0.0;
  const auto res = run_hybrid(st, o);
  for (const auto& r : res.trace) {
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(r.phi0[i], res.trace[0].phi0[i]);
    EXPECT_DOUBLE_EQ(r.metric, res.trace[0].metric);
  }
}

TEST(Hybrid, EtaHalvingConvergesToChainRuleGradient) {
  std::mt19937_64 rng(92);
  for (int t = 0; t < 5; ++t) {
    const auto rep = hybrid_eta_halving(rng);
    EXPECT_LT(rep.slope_variation, 0.02) << to_json(rep).dump();
    EXPECT_TRUE(rep.zero_member_ok);
  }
}

TEST(Hybrid, ClassicalNetInputGradientMatchesFiniteDifference) {
  gen::Gen g(93);
  for (int t = 0; t < 50; ++t) {
    ClassicalNet net{{g.normal(), g.normal(), g.normal()}, g.normal()};
    const std::vector<double> z{g.uniform(-1, 1), g.uniform(-1, 1), g.uniform(-1, 1)};
    if (std::abs(net.pre(z)) < 1e-3) continue;
    const auto grad = net.input_gradient(z);
    for (std::size_t k = 0; k < 3; ++k) {
      auto a = z, b = z;
      a[k] += 1e-7;
      b[k] -= 1e-7;
      EXPECT_NEAR(grad[k], (net.forward(a) - net.forward(b)) / 2e-7, 1e-6);
    }
  }
}

TEST(Hybrid, SgdStepReducesSquaredError) {
  ClassicalNet net{{0.3, -0.2, 0.5}, 0.4};
  const std::vector<double> z{0.5, -0.5, 1.0};
  const double before = std::pow(net.forward(z) - 2.0, 2);
  net.sgd_step(z, 2.0, 0.05);
  EXPECT_LT(std::pow(net.forward(z) - 2.0, 2), before);
}

TEST(Hybrid, MetricRecomputesFromMeansAndNet) {
  Streams st = Streams::from_seed(8);
  ExperimentOptions o;
  o.iters = 2;
  const auto res = run_hybrid(st, o);
  const auto p = build_hybrid_program();
  for (const auto& r : res.trace) {
    ClassicalNet net{r.extra["classical_w"].get<std::vector<double>>(), r.extra["classical_b"].get<double>()};
    EXPECT_DOUBLE_EQ(r.metric, hybrid_mse(p, r.phi0, net, 3));
  }
}

// ------------------------------------------------ shared gradient oracle

TEST(GradientOracle, ExperimentProgramsMatchTranslatedFiniteDifference) {
  std::mt19937_64 rng(94);
  const auto checks = experiment_fd_checks(5, rng, false);
  ASSERT_EQ(checks.runs.size(), 15u);
  for (const auto& [name, g] : checks.runs) EXPECT_LT(g.worst, 0.05) << name << " " << to_json(g).dump();
}

TEST(GradientOracle, RelativeGapUsesFloor) {
  EXPECT_NEAR(relative_gap({1.1, 0.0}, {1.0, 0.0}), 0.1, 1e-12);
  EXPECT_NEAR(relative_gap({1.0, 0.05}, {1.0, 0.0}), 0.5, 1e-12);
}

// --------------------------------------------------------------- streams

TEST(Streams, SubStreamsAreIndependentOfEachOther) {
  Streams a = Streams::from_seed(11), b = Streams::from_seed(11);
  EXPECT_EQ(a.init(), b.init());
  b.shots();
  b.shots();
  EXPECT_EQ(a.init(), b.init());
  Streams c = Streams::from_seed(12);
  EXPECT_NE(Streams::from_seed(11).init(), c.init());
}

TEST(Streams, ShotModeDoesNotChangeInitialization) {
  ExperimentOptions exact, shots;
  exact.iters = shots.iters = 1;
  shots.shots = 200;
  Streams a = Streams::from_seed(13), b = Streams::from_seed(13);
  const auto r1 = run_maxcut(Optimizer::momgrad, a, exact);
  const auto r2 = run_maxcut(Optimizer::momgrad, b, shots);
  EXPECT_EQ(r1.trace[0].phi0, r2.trace[0].phi0);
  EXPECT_NE(r1.trace[1].grad, r2.trace[1].grad);
}
