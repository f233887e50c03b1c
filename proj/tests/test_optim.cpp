#include "baqprop/optim.hpp"
#include "gen.hpp"

#include <gtest/gtest.h>

using namespace baqprop;

namespace {

std::shared_ptr<const std::vector<double>> table_of(const QuditSpec& spec, const std::function<double(double)>& f) {
  auto t = std::make_shared<std::vector<double>>();
  for (double x : position_values(spec)) t->push_back(f(x));
  return t;
}

Schedule constant(double eta, double gamma, double sigma) {
  Schedule s;
  s.eta = [eta](int) { return eta; };
  s.gamma = [gamma](int) { return gamma; };
  s.sigma = [sigma](int) { return sigma; };
  return s;
}

}  // namespace

TEST(MomGrad, FlatLandscapeLeavesPointers) {
  QuditSpec spec{7, -3, 3};
  MomGradState st{{spec, spec}, {{0.5, 0, 1}, {-1, 0, 1}}};
  auto flat = std::make_shared<std::vector<double>>(49, 1.5);
  auto info = momgrad_step(st, {diagonal_kick(flat)}, constant(0.5, 0.5, 0.9));
  EXPECT_NEAR(st.ptrs[0].phi0, 0.5, 1e-12);
  EXPECT_NEAR(st.ptrs[1].phi0, -1.0, 1e-12);
  EXPECT_NEAR(st.ptrs[0].pi0, 0.0, 1e-12);
  EXPECT_NEAR(info.grad[0], 0.0, 1e-10);
}

// Oracle: central difference of the grid-expected loss under the sampled pointer.
double grid_expected_gradient(const QuditSpec& spec, const std::vector<double>& t, double phi0, double sigma) {
  auto e = [&](double m) {
    const CVec a = gaussian_amplitudes(spec, {m, 0, sigma});
    double acc = 0;
    for (int j = 0; j < spec.d; ++j) acc += std::norm(a[j]) * t[j];
    return acc;
  };
  const double h = 1e-5;
  return (e(phi0 + h) - e(phi0 - h)) / (2 * h);
}

// d=7 aliases the readout by ~10% at eta=0.5; the step shape is checked on d=13.
TEST(MomGrad, QuadraticFirstStepIsGradientStep) {
  QuditSpec spec{13, -3, 3};
  MomGradState st{{spec}, {{0.0, 0, 1}}};
  auto t = table_of(spec, [](double x) { return (x - 1) * (x - 1); });
  const double oracle = grid_expected_gradient(spec, *t, 0.0, 1.0);
  auto info = momgrad_step(st, {diagonal_kick(t)}, constant(0.5, 0.5, 1.0));
  EXPECT_NEAR(info.grad[0], oracle, 0.05 * std::abs(oracle));
  EXPECT_NEAR(st.ptrs[0].phi0, -0.25 * oracle, 0.05 * 0.25 * std::abs(oracle));
}

TEST(MomGrad, DiscardVariantConvergesLikeGradientDescent) {
  QuditSpec spec{7, -3, 3};
  MomGradState st{{spec}, {{0.0, 0, 1}}};
  auto t = table_of(spec, [](double x) { return (x - 1) * (x - 1); });
  auto sch = constant(0.5, 0.5, 1.0);
  sch.momentum_discard = true;
  int reached = -1;
  for (int k = 0; k < 20; ++k) {
    const double before = st.ptrs[0].phi0;
    auto info = momgrad_step(st, {diagonal_kick(t)}, sch);
    EXPECT_NEAR(st.ptrs[0].phi0, before - 0.5 * 0.5 * info.grad[0], 1e-12);
    if (reached < 0 && std::abs(st.ptrs[0].phi0 - 1.0) < 0.1) reached = k + 1;
  }
  EXPECT_GT(reached, 0);
  EXPECT_LE(reached, 20);
}

TEST(MomGrad, KeepsMomentumAcrossSteps) {
  QuditSpec spec{7, -3, 3};
  MomGradState st{{spec}, {{0.0, 0, 1}}};
  auto t = table_of(spec, [](double x) { return 0.2 * x; });
  auto sch = constant(0.5, 0.1, 1.0);
  momgrad_step(st, {diagonal_kick(t)}, sch);
  const double p1 = st.ptrs[0].pi0;
  momgrad_step(st, {diagonal_kick(t)}, sch);
  EXPECT_NEAR(st.ptrs[0].pi0, 2 * p1, 0.02 * std::abs(p1));
  EXPECT_NEAR(p1, -0.5 * 0.2, 0.05 * 0.1);
}

TEST(MomGrad, ClampsToInterval) {
  QuditSpec spec{7, -3, 3};
  MomGradState st{{spec}, {{2.8, 0, 0.8}}};
  auto t = table_of(spec, [](double x) { return -x; });
  auto info = momgrad_step(st, {diagonal_kick(t)}, constant(0.5, 2.0, 0.8));
  EXPECT_TRUE(info.clamped);
  EXPECT_EQ(st.ptrs[0].phi0, 3.0);
}

TEST(MomGrad, RejectsEmptyBatch) {
  MomGradState st{{QuditSpec{}}, {{0, 0, 1}}};
  EXPECT_THROW(momgrad_step(st, {}, constant(0.1, 0.1, 1)), std::invalid_argument);
}

TEST(Qdd, ZeroRatesAreIdentity) {
  gen::Gen g(51);
  QuditSpec spec{7, -3, 3};
  QddState st{WaveState(pointer_layout({spec, spec}), g.state(49))};
  const CVec in = st.state.amp;
  std::mt19937_64 rng(1);
  auto t = std::make_shared<std::vector<double>>(49);
  for (auto& x : *t) x = g.normal();
  qdd_step(st, {diagonal_kick(t)}, 0.0, 0.0, rng);
  EXPECT_LT(gen::max_abs_diff(st.state.amp, in), 1e-12);
}

// e^{-i gamma Pi^2} moves the mean position by 2 gamma <Pi>.
TEST(Qdd, KineticPulseShiftsByTwoGammaP) {
  QuditSpec spec{31, -7.5, 7.5};
  for (auto [p, gamma] : std::vector<std::pair<double, double>>{{0.5, 0.5}, {-0.8, 0.3}, {0.3, 1.0}}) {
    auto s = prepare_gaussian(spec, {0.0, p, 1.2});
    const double pi = measure_momentum_expectation(s, {0})[0];
    apply_kinetic(s, 0, gamma);
    EXPECT_NEAR(expect_position(s, 0), 2 * gamma * pi, 0.05 * std::abs(2 * gamma * pi));
  }
}

TEST(Qdd, KineticPulseIsFourierConjugatedDiagonal) {
  gen::Gen g(52);
  for (int d = 2; d <= 9; ++d) {
    QuditSpec spec{d, -1.0, 2.0};
    const double gamma = g.uniform(0.05, 2.0);
    CMat f = dft_matrix(d);
    CMat diag = CMat::Zero(d, d);
    for (int k = 0; k < d; ++k) {
      const double p = spec.momentum_scale() * (((k + d / 2) % d) - d / 2);
      diag(k, k) = std::polar(1.0, -gamma * p * p);
    }
    const CMat want = f.adjoint() * diag * f;
    Layout l({qudit_register("r", spec)});
    CMat got(d, d);
    for (int j = 0; j < d; ++j) {
      WaveState s(l, basis_vector(d, j));
      apply_kinetic(s, 0, gamma);
      for (int i = 0; i < d; ++i) got(i, j) = s.amp[i];
    }
    EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-10) << d;
  }
}

TEST(Qdd, CubicPotentialKicksLeftThenDrifts) {
  QuditSpec spec{31, -3, 3};
  QddState st{prepare_gaussian(spec, {0.0, 0.0, 0.6})};
  auto t = table_of(spec, [](double x) { return x * x * x + 2 * x; });
  std::mt19937_64 rng(1);
  auto info = qdd_step(st, {diagonal_kick(t)}, 0.2, 0.5, rng);
  EXPECT_GT(info.grad[0], 0.0);
  EXPECT_LT(info.after_pulse.mean_pi[0], 0.0);
  EXPECT_LT(info.after_pulse.mean_phi[0], 0.0);
}

TEST(Qdd, FirstStepAgreesWithMomGrad) {
  QuditSpec spec{21, -5, 5};
  auto t = table_of(spec, [](double x) { return 0.5 * (x - 1.0) * (x - 1.0); });
  const double eta = 0.1, gamma = 0.1;
  MomGradState mg{{spec}, {{-0.5, 0, 0.8}}};
  momgrad_step(mg, {diagonal_kick(t)}, constant(eta, gamma, 0.8));
  const double mg_move = mg.ptrs[0].phi0 + 0.5;
  // QDD with gamma/2 in e^{-i gamma Pi^2} matches gamma in the MoMGrad update.
  QddState st{prepare_gaussian(spec, {-0.5, 0, 0.8})};
  const double x0 = expect_position(st.state, 0);
  std::mt19937_64 rng(1);
  auto info = qdd_step(st, {diagonal_kick(t)}, eta, gamma / 2, rng);
  EXPECT_NEAR(info.after_pulse.mean_phi[0] - x0, mg_move, 0.1 * std::abs(mg_move));
}

TEST(Batching, SequentialDiagonalEqualsAveragedKick) {
  gen::Gen g(53);
  QuditSpec spec{5, -2, 2};
  Layout l = pointer_layout({spec, spec});
  std::vector<Kick> batch;
  std::vector<double> avg(25, 0.0);
  for (int j = 0; j < 3; ++j) {
    auto t = std::make_shared<std::vector<double>>(25);
    for (std::size_t i = 0; i < 25; ++i) {
      (*t)[i] = g.normal();
      avg[i] += (*t)[i] / 3.0;
    }
    batch.push_back(diagonal_kick(t));
  }
  WaveState a(l, g.state(25)), b = a;
  std::vector<ComputeBlock> blocks;
  sequential_minibatch_kick(a, {0, 1}, batch, 0.6, blocks);
  apply_diagonal_phase(b, {0, 1}, avg, 0.6);
  EXPECT_LT(gen::max_abs_diff(a.amp, b.amp), 1e-12);
}

TEST(Camp, SingleReplicaEqualsPlainKick) {
  QuditSpec spec{5, -2, 2};
  auto t = table_of(spec, [](double x) { return std::sin(x) + 0.3 * x * x; });
  WaveState s = prepare_gaussian(spec, {0.3, 0.1, 0.7});
  auto res = camp_kick(s, {diagonal_kick(t)}, 0.4, 1);
  WaveState plain = s;
  apply_diagonal_phase(plain, {0}, *t, 0.4);
  EXPECT_LT(gen::max_abs_diff(res.server.amp, plain.amp), 1e-12);
  EXPECT_NEAR(res.replica_null_probability, 1.0, 1e-12);
}

TEST(Camp, TwoDataEqualSequentialBatch) {
  QuditSpec spec{5, -2, 2};
  auto t1 = table_of(spec, [](double x) { return x * x; });
  auto t2 = table_of(spec, [](double x) { return std::cos(2 * x); });
  WaveState s = prepare_gaussian(spec, {-0.4, 0.2, 0.8});
  std::vector<Kick> batch{diagonal_kick(t1), diagonal_kick(t2)};
  auto res = camp_kick(s, batch, 0.7, 2);
  WaveState seq = s;
  std::vector<ComputeBlock> blocks;
  sequential_minibatch_kick(seq, {0}, batch, 0.7, blocks);
  EXPECT_LT(gen::max_abs_diff(res.server.amp, seq.amp), 1e-8);
  EXPECT_NEAR(res.replica_null_probability, 1.0, 1e-12);
}

TEST(Camp, QuantumDataKicksEqualSequential) {
  FeedforwardProgram p;
  QuditSpec spec{5, -2, 2};
  p.layout.add(qudit_register("t", spec));
  p.layout.add(qubit_register("q"));
  p.params = {0};
  p.compute = {1};
  p.gates = {param_exponential_gate(0, {1}, pauli_y() / 2.0)};
  const CVec plus{1 / std::sqrt(2.0), 1 / std::sqrt(2.0)};
  std::vector<Kick> batch{qfb_kick(p, negative_projector_loss({1}, plus), {1.0, 0.0}),
                          qfb_kick(p, negative_projector_loss({1}, {0.0, 1.0}), plus)};
  WaveState s = prepare_gaussian(spec, {0.2, 0.0, 0.7});
  auto res = camp_kick(s, batch, 0.5, 2);
  WaveState seq = s;
  std::vector<ComputeBlock> blocks;
  sequential_minibatch_kick(seq, {0}, batch, 0.5, blocks);
  ASSERT_EQ(res.server.amp.size(), seq.amp.size());
  EXPECT_LT(gen::max_abs_diff(res.server.amp, seq.amp), 1e-8);
  EXPECT_NEAR(res.replica_null_probability, 1.0, 1e-12);
}

TEST(Camp, RequiresNullEigenstate) {
  QuditSpec spec{4, -1, 2};  // grid {-1, 0, 1, 2}
  WaveState s = prepare_gaussian(spec, {0, 0, 0.7});
  auto t = table_of(spec, [](double x) { return x; });
  EXPECT_NO_THROW(camp_kick(s, {diagonal_kick(t)}, 0.1, 1));
  QuditSpec off{4, -1.5, 1.5};
  WaveState s2 = prepare_gaussian(off, {0, 0, 0.7});
  EXPECT_THROW(camp_kick(s2, {diagonal_kick(table_of(off, [](double x) { return x; }))}, 0.1, 1),
               std::invalid_argument);
}

TEST(WeightDecay, ZeroLambdaIsIdentity) {
  gen::Gen g(54);
  WaveState s(pointer_layout({QuditSpec{7, -3, 3}}), g.state(7));
  const CVec in = s.amp;
  weight_decay_kick(s, {0}, 0.0, 0.5);
  EXPECT_LT(gen::max_abs_diff(s.amp, in), 1e-15);
}

TEST(WeightDecay, ShiftsMomentumOfOffCentrePointer) {
  QuditSpec spec{41, -5, 5};
  WaveState s = prepare_gaussian(spec, {1.5, 0, 0.7});
  const double before = measure_momentum_expectation(s, {0})[0];
  weight_decay_kick(s, {0}, 0.3, 0.2);
  const double shift = measure_momentum_expectation(s, {0})[0] - before;
  EXPECT_NEAR(shift, -2 * 0.2 * 0.3 * 1.5, 0.05 * 2 * 0.2 * 0.3 * 1.5);
}

TEST(WeightDecay, CommutesWithDiagonalKick) {
  gen::Gen g(55);
  QuditSpec spec{7, -3, 3};
  WaveState a(pointer_layout({spec}), g.state(7)), b = a;
  auto t = table_of(spec, [](double x) { return std::exp(0.3 * x); });
  std::vector<ComputeBlock> blocks;
  weight_decay_kick(a, {0}, 0.4, 0.3);
  diagonal_kick(t).apply(a, {0}, 0.3, blocks);
  diagonal_kick(t).apply(b, {0}, 0.3, blocks);
  weight_decay_kick(b, {0}, 0.4, 0.3);
  EXPECT_LT(gen::max_abs_diff(a.amp, b.amp), 1e-10);
}

TEST(Trajectory, ClassicalBlocksTraceOutExactly) {
  QuditSpec spec{5, -2, 2};
  FeedforwardProgram p;
  p.layout.add(qudit_register("w", spec));
  p.layout.add(qudit_register("o", spec));
  p.params = {0};
  p.compute = {1};
  p.gates = {adder(0, 1)};
  auto loss = diagonal_loss({1}, {0.0, 1.0, 4.0, 9.0, 16.0});
  WaveState s = prepare_gaussian(spec, {0.3, 0, 0.8});
  std::vector<ComputeBlock> blocks;
  qfb_kick(p, loss, basis_vector(5, 2)).apply(s, {0}, 0.3, blocks);
  std::mt19937_64 rng(3);
  auto traced = trace_out_blocks(s, blocks, rng);
  WaveState want = prepare_gaussian(spec, {0.3, 0, 0.8});
  apply_diagonal_phase(want, {0}, effective_phase_grid(p, loss, basis_vector(5, 2)), 0.3);
  EXPECT_LT(gen::max_abs_diff(traced.amp, want.amp), 1e-12);
}

TEST(Trajectory, AdaptedBasisIsOrthonormalWithXiFirst) {
  gen::Gen g(56);
  const CVec xi = g.state(4);
  const CMat b = adapted_basis(xi);
  EXPECT_LT((b.adjoint() * b - CMat::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-12);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(std::abs(b(i, 0) - xi[i]), 0.0, 1e-12);
}

TEST(NelderMead, QuadraticBowl) {
  NelderMeadOptions o;
  o.max_evals = 200;
  o.max_iters = 1000;
  o.xtol = 1e-6;
  auto r = nelder_mead([](const std::vector<double>& x) { return std::pow(x[0] - 1, 2) + 2 * std::pow(x[1] + 0.5, 2); },
                       {0.0, 0.0}, o);
  EXPECT_LE(r.evals, 200 + 3);
  EXPECT_NEAR(r.x[0], 1.0, 1e-3);
  EXPECT_NEAR(r.x[1], -0.5, 1e-3);
}

TEST(NelderMead, ConstantObjectiveRunsToMaxIterations) {
  NelderMeadOptions o;
  o.max_iters = 20;
  auto r = nelder_mead([](const std::vector<double>&) { return 3.0; }, {0.5, 0.5, 0.5}, o);
  EXPECT_EQ(r.iters, 20);
  EXPECT_EQ(r.stop, "max_iterations");
}

TEST(NelderMead, Rosenbrock) {
  NelderMeadOptions o;
  o.max_iters = 5000;
  o.xtol = 1e-9;
  auto r = nelder_mead(
      [](const std::vector<double>& x) { return std::pow(1 - x[0], 2) + 100 * std::pow(x[1] - x[0] * x[0], 2); },
      {-1.2, 1.0}, o);
  EXPECT_NEAR(r.x[0], 1.0, 1e-3);
  EXPECT_NEAR(r.x[1], 1.0, 1e-3);
}

TEST(Trace, RecordHasEveryField) {
  TraceRecord r;
  r.iter = 3;
  r.grad = {0.1};
  r.phi0 = {0.2};
  r.pi0 = {0.3};
  r.extra["flags"] = {{"clamped", false}};
  const auto j = to_json(r);
  for (const char* k : {"iter", "eta", "gamma", "sigma", "grad", "phi0", "pi0", "metric", "flags"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j.begin().key(), "iter");
}
